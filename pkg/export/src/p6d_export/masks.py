"""Segmentation mask export: canonical u8 tensors plus PNG previews.

The stub backend thresholds luminance against the image's own histogram
midpoint (a stand-in for a promptable segmenter); cached masks from a real
segmenter can be converted through the same writer.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .tnsr import write_tensor


class StubMaskBackend:
    name = "stub"

    def segment(self, image: np.ndarray) -> np.ndarray:
        lum = image.astype(np.float64).mean(axis=2)
        thresh = 0.5 * (lum.min() + lum.max())
        mask = lum > thresh
        # Keep the dominant side as foreground.
        if mask.mean() > 0.5:
            mask = ~mask
        if not mask.any():
            mask[lum.argmax() // lum.shape[1], lum.argmax() % lum.shape[1]] = True
        return mask

    def describe(self) -> dict:
        return {"name": self.name}


def export_mask(mask: np.ndarray, out_path, preview: bool = True) -> list[Path]:
    mask = np.asarray(mask, dtype=bool)
    out_path = Path(out_path)
    write_tensor(out_path, mask.astype(np.uint8))
    written = [out_path]
    if preview:
        png = out_path.with_suffix(".png")
        Image.fromarray((mask * 255).astype(np.uint8)).save(png)
        written.append(png)
    return written
