"""Batch export commands.  Each run writes its outputs plus a manifest with
checksums; backends default to the deterministic stubs so everything works
offline, with pretrained-model wrappers selectable where weights exist."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import depth as depth_mod
from . import features as feat_mod
from . import masks as masks_mod
from . import scale_db as scale_mod
from . import tracks as tracks_mod
from .manifest import write_manifest


def cmd_features(args) -> int:
    backend = feat_mod.make_backend(args.backend, dim=args.dim, layer=args.layer, seed=args.seed)
    out = Path(args.out)
    if args.bundle:
        paths = feat_mod.export_view_bundle(
            args.images, out, backend, object_id=args.object_id, mesh_ref=args.mesh_ref
        )
    else:
        paths = feat_mod.export_query_features(args.images, out, backend, mask_path=args.mask)
    write_manifest(out / "manifest.json", source=args.images, model=backend.describe(), outputs=paths)
    print(f"wrote {len(paths)} files + manifest to {out}")
    return 0


def cmd_depth(args) -> int:
    backend = depth_mod.make_depth_backend(args.backend)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for img_path in sorted(Path(args.images).glob("*.png")) or [Path(args.images)]:
        image = feat_mod.load_image(img_path)
        written.append(depth_mod.export_depth(image, out / f"{img_path.stem}_depth.tnsr", backend))
    write_manifest(out / "manifest.json", source=args.images, model=backend.describe(), outputs=written)
    print(f"wrote {len(written)} depth maps + manifest to {out}")
    return 0


def cmd_masks(args) -> int:
    backend = masks_mod.StubMaskBackend()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for img_path in sorted(Path(args.images).glob("*.png")) or [Path(args.images)]:
        image = feat_mod.load_image(img_path)
        written += masks_mod.export_mask(backend.segment(image), out / f"{img_path.stem}_mask.tnsr")
    write_manifest(out / "manifest.json", source=args.images, model=backend.describe(), outputs=written)
    print(f"wrote {len(written)} mask files + manifest to {out}")
    return 0


def cmd_tracks(args) -> int:
    tracks, visibility = tracks_mod.load_tracker_dump(args.dump)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = tracks_mod.export_tracks(tracks, visibility, out / "tracks.json", n_video_frames=args.frames)
    write_manifest(
        out / "manifest.json", source=args.dump,
        model={"name": "cached-tracker-dump"}, outputs=[path],
    )
    print(f"wrote {path}")
    return 0


def cmd_scale_db(args) -> int:
    paths = sorted(Path(args.responses).glob("*.txt"))
    manifest = scale_mod.generate_scale_db(paths, args.out)
    print(
        f"wrote {manifest['entries']} entries to {args.out} "
        f"({manifest['malformed_lines']} malformed lines skipped, "
        f"{100 * manifest['fraction_under_2m']:.1f}% under 2 m)"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="p6d-export")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export-features", help="patch-token grids from crops or render sets")
    p.add_argument("--images", required=True, help="image file, or render directory with --bundle")
    p.add_argument("--out", required=True)
    p.add_argument("--backend", choices=["stub", "vit"], default="stub")
    p.add_argument("--dim", type=int, default=feat_mod.DEFAULT_DIM)
    p.add_argument("--layer", type=int, default=feat_mod.DEFAULT_LAYER)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mask", default=None)
    p.add_argument("--bundle", action="store_true", help="emit a full object view bundle")
    p.add_argument("--object-id", default="object")
    p.add_argument("--mesh-ref", default="mesh.obj")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("export-depth", help="relative depth maps for frames")
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--backend", choices=["stub", "hub"], default="stub")
    p.set_defaults(func=cmd_depth)

    p = sub.add_parser("export-masks", help="segmentation masks for frames")
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_masks)

    p = sub.add_parser("export-tracks", help="track JSON from a tracker dump")
    p.add_argument("--dump", required=True, help=".npz with tracks [T,N,2] and visibility [T,N]")
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=None, help="expected video frame count")
    p.set_defaults(func=cmd_tracks)

    p = sub.add_parser("gen-scale-db", help="object-size database from cached responses")
    p.add_argument("--responses", required=True, help="directory of response .txt files")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scale_db)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
