"""Patch-token extraction to the toolkit's grid format.

Two backends share one protocol: square-crop the input, resize to 420x420,
produce a 30x30 grid of feature tokens plus a per-patch foreground mask and a
global token.  The "stub" backend is a deterministic hand-rolled featureizer
used by fixtures and CI; the "vit" backend wraps a pretrained vision
transformer through torch hub and is only exercised where weights are
available.
"""

from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np
from PIL import Image

from .tnsr import write_tensor

INPUT_SIZE = 420
GRID = 30
PATCH = INPUT_SIZE // GRID  # 14
DEFAULT_DIM = 1024
DEFAULT_LAYER = 22
CROP_PADDING = 0.10


def load_image(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.uint8)


def prepare_input(image: np.ndarray) -> np.ndarray:
    """Resize to the protocol resolution, warning when that changes pixels."""
    h, w = image.shape[:2]
    if (h, w) != (INPUT_SIZE, INPUT_SIZE):
        warnings.warn(
            f"input is {w}x{h}, resizing to {INPUT_SIZE}x{INPUT_SIZE}", stacklevel=2
        )
        pil = Image.fromarray(image).resize((INPUT_SIZE, INPUT_SIZE), Image.BILINEAR)
        image = np.asarray(pil, dtype=np.uint8)
    return image


class StubBackend:
    """Deterministic featureizer: per-patch image statistics pushed through a
    fixed seeded random projection.  No learned weights, bitwise reproducible."""

    name = "stub"

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0):
        self.dim = dim
        rng = np.random.default_rng([seed, 424242])
        self._projection = rng.normal(size=(16, dim)) / np.sqrt(16)

    def _patch_stats(self, patch: np.ndarray, r: int, c: int) -> np.ndarray:
        f = patch.astype(np.float64) / 255.0
        gy, gx = np.gradient(f.mean(axis=2))
        return np.array(
            [
                f[..., 0].mean(), f[..., 1].mean(), f[..., 2].mean(),
                f[..., 0].std(), f[..., 1].std(), f[..., 2].std(),
                np.abs(gx).mean(), np.abs(gy).mean(),
                f.max(), f.min(),
                np.sin(2 * np.pi * r / GRID), np.cos(2 * np.pi * r / GRID),
                np.sin(2 * np.pi * c / GRID), np.cos(2 * np.pi * c / GRID),
                f.mean(), 1.0,
            ]
        )

    def extract(self, image: np.ndarray):
        image = prepare_input(image)
        grid = np.zeros((GRID, GRID, self.dim), dtype=np.float32)
        for r in range(GRID):
            for c in range(GRID):
                patch = image[r * PATCH : (r + 1) * PATCH, c * PATCH : (c + 1) * PATCH]
                token = self._patch_stats(patch, r, c) @ self._projection
                norm = np.linalg.norm(token)
                grid[r, c] = (token / norm if norm > 0 else token).astype(np.float32)
        global_stats = self._patch_stats(image, 0, 0) @ self._projection
        cls = (global_stats / np.linalg.norm(global_stats)).astype(np.float32)
        return grid, cls

    def describe(self) -> dict:
        return {"name": self.name, "dim": self.dim}


class VitBackend:
    """Pretrained-transformer tokens from an intermediate layer via torch hub.

    Not used by fixtures or CI; requires downloaded weights.
    """

    name = "vit"

    def __init__(self, model_name: str = "dinov2_vitl14", layer: int = DEFAULT_LAYER):
        import torch  # deferred: heavyweight optional dependency

        self.torch = torch
        self.layer = layer
        self.model_name = model_name
        self.model = torch.hub.load("facebookresearch/dinov2", model_name)
        self.model.eval()

    def extract(self, image: np.ndarray):
        torch = self.torch
        image = prepare_input(image)
        x = torch.from_numpy(image.astype(np.float32) / 255.0).permute(2, 0, 1)[None]
        mean = torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1)
        std = torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1)
        x = (x - mean) / std
        with torch.no_grad():
            n_total = len(self.model.blocks)
            feats = self.model.get_intermediate_layers(
                x, n=n_total - self.layer, return_class_token=True
            )
            tokens, cls = feats[0]
        grid = tokens[0].reshape(GRID, GRID, -1).cpu().numpy().astype(np.float32)
        return grid, cls[0].cpu().numpy().astype(np.float32)

    def describe(self) -> dict:
        return {"name": self.name, "model": self.model_name, "layer": self.layer}


def make_backend(name: str, dim: int = DEFAULT_DIM, layer: int = DEFAULT_LAYER, seed: int = 0):
    if name == "stub":
        return StubBackend(dim=dim, seed=seed)
    if name == "vit":
        return VitBackend(layer=layer)
    raise ValueError(f"unknown feature backend {name!r}")


def foreground_from_mask(mask_image: np.ndarray) -> np.ndarray:
    """Patch-level foreground: any masked pixel inside the patch."""
    mask = prepare_input(np.repeat(np.asarray(mask_image, dtype=np.uint8)[..., None], 3, axis=2))[..., 0] > 0
    return mask.reshape(GRID, PATCH, GRID, PATCH).any(axis=(1, 3))


def export_query_features(image_path, outdir, backend, mask_path=None) -> list[Path]:
    """Single proposal crop to grid.tnsr / fg.tnsr / cls.tnsr."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    grid, cls = backend.extract(load_image(image_path))
    if mask_path is not None:
        fg = foreground_from_mask(np.asarray(Image.open(mask_path).convert("L")))
        if not fg.any():
            fg = np.ones((GRID, GRID), dtype=bool)
    else:
        fg = np.ones((GRID, GRID), dtype=bool)
    paths = [out / "grid.tnsr", out / "fg.tnsr", out / "cls.tnsr"]
    write_tensor(paths[0], grid)
    write_tensor(paths[1], fg.astype(np.uint8))
    write_tensor(paths[2], cls)
    return paths


def export_view_bundle(
    render_dir, outdir, backend, object_id: str, mesh_ref: str,
    rotations_json="rotations.json", extents_json="extents.json",
) -> list[Path]:
    """Rendered views of one model to a complete toolkit object bundle.

    The render directory must contain view_XXXX.png images (optionally with
    view_XXXX_mask.png foregrounds) plus the per-view rotation quaternions and
    camera-frame extents emitted by the renderer.
    """
    import json
    import shutil

    render_dir = Path(render_dir)
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    images = sorted(render_dir.glob("view_*.png"))
    images = [p for p in images if not p.stem.endswith("_mask")]
    if not images:
        raise FileNotFoundError(f"no view_*.png renders in {render_dir}")
    grids, masks, clss = [], [], []
    for img in images:
        grid, cls = backend.extract(load_image(img))
        mask_path = img.with_name(img.stem + "_mask.png")
        if mask_path.exists():
            fg = foreground_from_mask(np.asarray(Image.open(mask_path).convert("L")))
            if not fg.any():
                fg = np.ones((GRID, GRID), dtype=bool)
        else:
            fg = np.ones((GRID, GRID), dtype=bool)
        grids.append(grid)
        masks.append(fg)
        clss.append(cls)
    paths = []
    write_tensor(out / "views.tnsr", np.stack(grids))
    write_tensor(out / "fg_masks.tnsr", np.stack(masks).astype(np.uint8))
    write_tensor(out / "cls.tnsr", np.stack(clss))
    paths += [out / "views.tnsr", out / "fg_masks.tnsr", out / "cls.tnsr"]
    for name in (rotations_json, extents_json):
        src = render_dir / name
        if not src.exists():
            raise FileNotFoundError(f"{src} is required for a view bundle")
    rotations = json.loads((render_dir / rotations_json).read_text())
    extents = json.loads((render_dir / extents_json).read_text())
    if len(rotations) != len(images) or len(extents) != len(images):
        raise ValueError(
            f"{render_dir}: {len(images)} renders but {len(rotations)} rotations / {len(extents)} extents"
        )
    shutil.copy(render_dir / rotations_json, out / "rotations.json")
    shutil.copy(render_dir / extents_json, out / "extents.json")
    (out / "meta.json").write_text(
        json.dumps(
            {"mesh_ref": mesh_ref, "native_scale": 1.0, "object_id": object_id, "scale_trusted": False},
            sort_keys=True, separators=(",", ":"),
        )
        + "\n"
    )
    paths += [out / "rotations.json", out / "extents.json", out / "meta.json"]
    return paths
