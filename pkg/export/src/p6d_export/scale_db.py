"""Build the object-size database from cached language-model responses.

Responses are plain text files of "object phrase: size_in_meters" lines
collected over repeated rounds of the prompt in prompts/scale_db_prompt.txt.
Repeated phrases are merged with the median of their reported sizes.  Each
entry also gets a deterministic unit-norm text embedding so the database is
usable without any embedding model at hand; regenerate embeddings with a real
text encoder for production retrieval.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .manifest import write_manifest
from .tnsr import write_tensor

LINE_RE = re.compile(r"^\s*(?P<text>[^:]+?)\s*:\s*(?P<scale>[-+0-9.eE]+)\s*$")
EMBED_DIM = 256


@dataclass
class ParseStats:
    parsed: int = 0
    malformed: int = 0
    merged_duplicates: int = 0


def parse_response_file(path, acc: dict[str, list[float]], stats: ParseStats) -> None:
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        m = LINE_RE.match(line)
        if not m:
            stats.malformed += 1
            continue
        try:
            scale = float(m.group("scale"))
        except ValueError:
            stats.malformed += 1
            continue
        if not np.isfinite(scale) or scale <= 0:
            stats.malformed += 1
            continue
        acc.setdefault(m.group("text").strip().lower(), []).append(scale)
        stats.parsed += 1


def text_embedding(text: str, dim: int = EMBED_DIM) -> np.ndarray:
    """Deterministic placeholder embedding seeded from the text bytes."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "little")
    rng = np.random.default_rng(seed)
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def generate_scale_db(response_paths, outdir, embed_dim: int = EMBED_DIM) -> dict:
    """Parse, merge and serialize; returns the manifest document."""
    response_paths = [Path(p) for p in response_paths]
    if not response_paths:
        raise ValueError("no response files given")
    acc: dict[str, list[float]] = {}
    stats = ParseStats()
    for path in sorted(response_paths):
        parse_response_file(path, acc, stats)
    if not acc:
        raise ValueError("no parsable entries in the responses")
    stats.merged_duplicates = sum(1 for v in acc.values() if len(v) > 1)

    texts = sorted(acc)
    scales = np.array([float(np.median(acc[t])) for t in texts])
    embeddings = np.stack([text_embedding(t, embed_dim) for t in texts]).astype(np.float32)

    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    db_path = out / "scale_db.jsonl"
    with open(db_path, "w", encoding="utf-8") as fh:
        for text, scale in zip(texts, scales):
            fh.write(json.dumps({"scale_m": float(scale), "text": text}, sort_keys=True) + "\n")
    emb_path = out / "embeddings.tnsr"
    write_tensor(emb_path, embeddings)

    under_2m = float((scales < 2.0).mean())
    manifest = write_manifest(
        out / "manifest.json",
        source=";".join(str(p) for p in sorted(response_paths)),
        model={"name": "cached-responses", "embedding": "hash-seeded", "embed_dim": embed_dim},
        outputs=[db_path, emb_path],
        extra={
            "entries": len(texts),
            "parsed_lines": stats.parsed,
            "malformed_lines": stats.malformed,
            "merged_duplicates": stats.merged_duplicates,
            "scale_min_m": float(scales.min()),
            "scale_max_m": float(scales.max()),
            "fraction_under_2m": under_2m,
        },
    )
    return manifest
