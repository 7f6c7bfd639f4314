"""Per-run manifests: what was exported, by which backend, with checksums."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path


def sha256_of(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, source: str, model: dict, outputs: list, extra: dict | None = None) -> dict:
    """Record outputs relative to the manifest location with their hashes."""
    base = Path(path).parent
    doc = {
        "source": str(source),
        "model": model,
        "outputs": {str(Path(o).relative_to(base)): sha256_of(o) for o in outputs},
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return doc


def verify_manifest(path) -> bool:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    base = Path(path).parent
    return all(sha256_of(base / rel) == digest for rel, digest in doc["outputs"].items())
