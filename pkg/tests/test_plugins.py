import json
import sys
import textwrap

import numpy as np
import pytest

from ravkit.model import ImageEnrichment, TableEntity, TextEntity
from ravkit.plugins import (
    CorruptionSpec,
    InProcessHandle,
    PluginProtocolError,
    PluginRequest,
    PluginResponse,
    SubprocessHandle,
    call_plugin,
    decode_crop,
    encode_crop,
    mock_extract_table,
    mock_fallback,
    parse_response,
    scripted_extractor,
    validate_payload,
)


def request(role="primary_extractor", etype="text", rid="r0"):
    return PluginRequest(
        request_id="req-1",
        role=role,
        entity_type=etype,
        crop=encode_crop(np.zeros((4, 4), dtype=np.uint8)),
        region_id=rid,
    )


class TestCropCodec:
    def test_roundtrip_pixel_exact(self, rng):
        px = rng.integers(0, 256, (13, 7)).astype(np.uint8)
        assert np.array_equal(decode_crop(encode_crop(px)), px)


class TestRequestModel:
    def test_unknown_role_rejected(self):
        with pytest.raises(PluginProtocolError):
            PluginRequest(request_id="x", role="oracle", entity_type="text", crop="")

    def test_schema_version_attached(self):
        assert request().schema_version == "1"


class TestValidatePayload:
    def test_text_payload(self):
        assert validate_payload("primary_extractor", "text", {"kind": "text", "text": "x"}) is None
        assert validate_payload("primary_extractor", "text", {"text": "x"}) is not None
        assert validate_payload("primary_extractor", "text", {"kind": "text"}) is not None

    def test_formula_and_url_use_text_schema(self):
        payload = {"kind": "text", "text": "E = mc^2"}
        assert validate_payload("primary_extractor", "formula", payload) is None
        assert validate_payload("fallback_extractor", "url", payload) is None

    def test_table_payload_checked_structurally(self):
        good = TableEntity(n_rows=1, n_cols=2, cells=("a", "b")).to_json()
        assert validate_payload("primary_extractor", "table", good) is None
        bad = dict(good, cells=["a"])
        assert validate_payload("primary_extractor", "table", bad) is not None

    def test_image_payload_needs_crop(self):
        assert (
            validate_payload("primary_extractor", "image", {"kind": "image", "crop": "QUJD"})
            is None
        )
        assert validate_payload("primary_extractor", "image", {"kind": "image"}) is not None

    def test_enricher_image_type_closed_set(self):
        ok = {"image_type": "chart", "description": "d"}
        assert validate_payload("enricher", "image", ok) is None
        assert validate_payload("enricher", "image", {"image_type": "meme"}) is not None

    def test_ocr_reference_needs_text(self):
        assert validate_payload("ocr_reference", "text", {"text": "abc"}) is None
        assert validate_payload("ocr_reference", "text", {}) is not None


class TestParseResponse:
    def test_malformed_json_fails_closed(self):
        resp = parse_response(request(), "{nope")
        assert not resp.ok and "malformed" in resp.error

    def test_request_id_mismatch_fails(self):
        wire = PluginResponse("other-id", True, {"kind": "text", "text": "x"}).serialize()
        assert not parse_response(request(), wire).ok

    def test_schema_violation_fails(self):
        wire = PluginResponse("req-1", True, {"kind": "text"}).serialize()
        resp = parse_response(request(), wire)
        assert not resp.ok and "schema" in resp.error

    def test_valid_response_passes(self):
        wire = PluginResponse("req-1", True, {"kind": "text", "text": "x"}).serialize()
        assert parse_response(request(), wire).ok


class TestInProcessHandle:
    def test_duration_is_zero(self):
        handle = scripted_extractor({"r0": "hello"})
        resp, duration = call_plugin(handle, request())
        assert resp.ok and duration == 0.0

    def test_raising_callable_fails_closed(self):
        def boom(req):
            raise RuntimeError("nope")

        handle = InProcessHandle(boom)
        resp, _ = call_plugin(handle, request())
        assert not resp.ok


ECHO_CHILD = textwrap.dedent(
    """
    import json, sys
    print(json.dumps({"roles": ["primary_extractor"], "schema_version": "1",
                      "concurrency": "serial"}), flush=True)
    for line in sys.stdin:
        req = json.loads(line)
        print(json.dumps({"request_id": req["request_id"], "ok": True,
                          "payload": {"kind": "text", "text": "echo:" + req["region_id"]},
                          "error": None}), flush=True)
    """
)


class TestSubprocessHandle:
    def test_handshake_and_call(self):
        handle = SubprocessHandle([sys.executable, "-c", ECHO_CHILD], plugin_id="echo")
        try:
            assert handle.roles == ("primary_extractor",)
            resp, duration = call_plugin(handle, request(rid="abc"))
            assert resp.ok and resp.payload["text"] == "echo:abc"
            assert duration > 0.0
        finally:
            handle.close()

    def test_schema_version_mismatch_rejected(self):
        child = 'import json; print(json.dumps({"roles": [], "schema_version": "99"}))'
        with pytest.raises(PluginProtocolError):
            SubprocessHandle([sys.executable, "-c", child])

    def test_timeout_maps_to_failed_response(self):
        child = textwrap.dedent(
            """
            import json, sys, time
            print(json.dumps({"roles": ["primary_extractor"], "schema_version": "1",
                              "concurrency": "serial"}), flush=True)
            sys.stdin.readline()
            time.sleep(30)
            """
        )
        handle = SubprocessHandle([sys.executable, "-c", child])
        try:
            resp, _ = call_plugin(handle, request(), timeout=0.5)
            assert not resp.ok and "timeout" in resp.error
        finally:
            handle.close()


class TestScriptedExtractor:
    def test_unknown_region_fails(self):
        handle = scripted_extractor({})
        resp, _ = call_plugin(handle, request(rid="missing"))
        assert not resp.ok

    def test_entity_objects_serialized(self):
        t = TableEntity(n_rows=1, n_cols=1, cells=("v",))
        handle = scripted_extractor({"r0": t})
        resp, _ = call_plugin(handle, request(role="primary_extractor", etype="table"))
        assert resp.ok and TableEntity.from_json(resp.payload) == t

    def test_enrichment_payloads(self):
        e = ImageEnrichment(image_type="photograph", description="a cat")
        handle = scripted_extractor({"r0": e})
        resp, _ = call_plugin(handle, request(role="enricher", etype="image"))
        assert resp.ok and resp.payload["image_type"] == "photograph"


class TestMocks:
    def test_corruption_spec_validates_probabilities(self):
        with pytest.raises(ValueError):
            CorruptionSpec(epsilon=1.5)

    def test_mock_extract_table_deterministic(self):
        gt = TableEntity(n_rows=3, n_cols=2, cells=tuple("abcdef"))
        spec = CorruptionSpec(epsilon=0.5, p_row_merge=0.5, seed=9)
        assert mock_extract_table(gt, spec) == mock_extract_table(gt, spec)

    def test_zero_epsilon_is_identity(self):
        gt = TableEntity(n_rows=2, n_cols=2, cells=("a", "b", "c", "d"))
        assert mock_extract_table(gt, CorruptionSpec(seed=3)) == gt

    def test_mock_fallback_recovers_with_probability_one(self):
        gt = TextEntity(text="truth")
        assert mock_fallback(gt, recovery_quality=1.0, seed=1) == gt

    def test_mock_fallback_corrupts_with_probability_zero(self):
        gt = TextEntity(text="a long enough reference sentence")
        out = mock_fallback(gt, recovery_quality=0.0, seed=1)
        assert out.text != gt.text
