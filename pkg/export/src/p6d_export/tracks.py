"""Point-track export to the toolkit's track JSON.

Tracker outputs are consumed from cached .npz dumps (arrays: tracks [T, N, 2]
pixels, visibility [T, N]); a torch-hub wrapper for a pretrained tracker can
produce the same dump format when weights are available.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def load_tracker_dump(path) -> tuple[np.ndarray, np.ndarray]:
    data = np.load(path)
    tracks = np.asarray(data["tracks"], dtype=np.float64)
    visibility = np.asarray(data["visibility"]).astype(bool)
    if tracks.ndim != 3 or tracks.shape[2] != 2:
        raise ValueError(f"{path}: tracks must be [frames, points, 2], got {tracks.shape}")
    if visibility.shape != tracks.shape[:2]:
        raise ValueError(f"{path}: visibility shape {visibility.shape} mismatches tracks")
    return tracks, visibility


def export_tracks(tracks: np.ndarray, visibility: np.ndarray, out_path, n_video_frames: int | None = None) -> Path:
    """Write the track JSON; optionally check against the video's frame count."""
    t, n, _ = tracks.shape
    if n_video_frames is not None and t != n_video_frames:
        raise ValueError(f"tracker produced {t} frames but the video has {n_video_frames}")
    frames = []
    for idx in range(t):
        pts = [[float(x), float(y), float(1.0 if v else 0.0)] for (x, y), v in zip(tracks[idx], visibility[idx])]
        frames.append({"idx": idx, "pts": pts})
    doc = {"n_points": int(n), "frames": frames}
    Path(out_path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8")
    return Path(out_path)


class HubTrackerBackend:
    """Pretrained point tracker via torch hub (weights required)."""

    name = "hub"

    def __init__(self, repo: str = "facebookresearch/co-tracker", model_name: str = "cotracker3_offline"):
        import torch

        self.torch = torch
        self.model_name = model_name
        self.model = torch.hub.load(repo, model_name)

    def track(self, video: np.ndarray, queries: np.ndarray):
        """video [T, H, W, 3] uint8, queries [N, 2] pixels in frame 0."""
        torch = self.torch
        vid = torch.from_numpy(video).permute(0, 3, 1, 2)[None].float()
        q = torch.cat(
            [torch.zeros(len(queries), 1), torch.from_numpy(queries).float()], dim=1
        )[None]
        with torch.no_grad():
            tracks, visibility = self.model(vid, queries=q)
        return tracks[0].cpu().numpy(), visibility[0].cpu().numpy() > 0.5

    def describe(self) -> dict:
        return {"name": self.name, "model": self.model_name}
