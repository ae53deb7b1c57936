"""Long-running OCR reference provider.

Serves role=ocr_reference over the plugin wire protocol: each request's
crop is read with the selected OCR backend and answered as
``{"text": ...}``. Engine failures become ok=false responses; the
process stays alive.
"""

from __future__ import annotations

import argparse
import sys

from . import wire
from .engines import ENGINES, create_engine


class OcrHandler:
    roles = ("ocr_reference",)
    concurrency = "concurrent"

    def __init__(self, engine):
        self._engine = engine

    def handle(self, request: dict) -> dict:
        crop = wire.decode_crop(str(request.get("crop", "")))
        text = self._engine.read(wire.to_grayscale(crop))
        return {"text": text}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="serve-reference-ocr",
        description="Answer ocr_reference plugin requests with an OCR engine's reading of the crop.",
    )
    parser.add_argument("--engine", choices=sorted(ENGINES), default="builtin")
    wire.add_transport_args(parser)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        engine = create_engine(args.engine)
    except wire.AdapterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    wire.run(OcrHandler(engine), args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
