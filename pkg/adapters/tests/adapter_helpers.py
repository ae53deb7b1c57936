"""Shared helpers for adapter tests: fixture loading and server spawning."""

import json
import subprocess
import sys
from pathlib import Path

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = FIXTURES / "golden_requests.json"
CANNED = FIXTURES / "canned_outputs.json"


def load_golden():
    return json.loads(GOLDEN.read_text(encoding="utf-8"))


def ocr_cmd(*extra):
    return [sys.executable, "-m", "ravkit_adapters.ocr_server", *extra]


def vision_cmd(*extra):
    return [sys.executable, "-m", "ravkit_adapters.vision_server", "--canned", str(CANNED), *extra]


def read_handshake(cmd, env):
    """Spawn a server with a controlled environment and return its
    handshake document."""
    proc = subprocess.Popen(
        cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, env=env
    )
    try:
        return json.loads(proc.stdout.readline())
    finally:
        proc.terminate()
        proc.wait(timeout=10)


def levenshtein(a: str, b: str) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]
