"""Monocular depth export.

The stub backend produces a smooth, strictly positive relative depth from
image luminance; it is deterministic and stands in for a learned predictor in
fixtures and CI.  The torch-hub backend wraps a pretrained model when weights
are available.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .tnsr import write_tensor


class StubDepthBackend:
    name = "stub"

    def predict(self, image: np.ndarray) -> np.ndarray:
        f = image.astype(np.float64) / 255.0
        lum = f.mean(axis=2)
        # Separable box blur, three passes for smoothness.
        for _ in range(3):
            lum = (np.roll(lum, 1, 0) + lum + np.roll(lum, -1, 0)) / 3.0
            lum = (np.roll(lum, 1, 1) + lum + np.roll(lum, -1, 1)) / 3.0
        return (1.0 + 0.8 * lum).astype(np.float32)

    def describe(self) -> dict:
        return {"name": self.name}


class HubDepthBackend:
    """Pretrained relative-depth model via torch hub (weights required)."""

    name = "hub"

    def __init__(self, repo: str = "intel-isl/MiDaS", model_name: str = "DPT_Large"):
        import torch

        self.torch = torch
        self.model_name = model_name
        self.model = torch.hub.load(repo, model_name)
        self.model.eval()
        transforms = torch.hub.load(repo, "transforms")
        self.transform = transforms.dpt_transform

    def predict(self, image: np.ndarray) -> np.ndarray:
        torch = self.torch
        with torch.no_grad():
            pred = self.model(self.transform(image))
            pred = torch.nn.functional.interpolate(
                pred.unsqueeze(1), size=image.shape[:2], mode="bicubic", align_corners=False
            ).squeeze()
        disparity = pred.cpu().numpy()
        # Model emits disparity; convert to a positive relative depth.
        return (1.0 / np.maximum(disparity, 1e-6)).astype(np.float32)

    def describe(self) -> dict:
        return {"name": self.name, "model": self.model_name}


def make_depth_backend(name: str):
    if name == "stub":
        return StubDepthBackend()
    if name == "hub":
        return HubDepthBackend()
    raise ValueError(f"unknown depth backend {name!r}")


def export_depth(image: np.ndarray, out_path, backend) -> Path:
    depth = backend.predict(image)
    if depth.shape != image.shape[:2]:
        raise ValueError(f"depth shape {depth.shape} does not match frame {image.shape[:2]}")
    write_tensor(out_path, depth.astype(np.float32))
    return Path(out_path)
