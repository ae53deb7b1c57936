"""Reference plugin processes speaking the ravkit wire protocol.

Two long-running adapters are provided:

- ``serve-reference-ocr``: answers ocr_reference requests by reading the
  crop with a selectable OCR backend (``--engine``).
- ``serve-vision-fallback``: answers fallback_extractor and enricher
  requests by prompting a vision model with versioned prompt templates;
  the API key comes from the environment and missing keys degrade to an
  empty role list so the orchestrator skips the roles gracefully.

The adapters depend on the pipeline only through its external surface:
the newline-delimited JSON / HTTP POST wire protocol and its payload
schemas.
"""

from .wire import SCHEMA_VERSION, AdapterError, decode_crop, encode_crop

__all__ = ["SCHEMA_VERSION", "AdapterError", "decode_crop", "encode_crop"]
__version__ = "0.1.0"
