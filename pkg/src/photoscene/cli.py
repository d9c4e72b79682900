"""Command-line entry point: ``photoscene fit|baseline|metrics|render|exemplars|gen-synthetic``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .align import align_part
from .bundle import load_bundle, load_fitted_assets
from .errors import PhotosceneError
from .fit.baselines import INV_RENDER_MEDIAN, PIXEL_MEDIAN
from .fit.selection import rank_exemplars, render_exemplar, vote
from .imagefiles import read_mask, read_photo
from .metrics import evaluate
from .pipeline import (
    PipelineConfig,
    StageError,
    choose_view,
    part_masks,
    part_scene,
    render_view,
    run_baseline,
    run_pipeline,
    view_exposure,
    write_image_pair,
)
from .synthetic import SyntheticConfig, generate

log = logging.getLogger("photoscene")


def _config(args):
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.jobs is not None:
        over["jobs"] = args.jobs
    return replace(cfg, **over) if over else cfg


def _write_json(path, data):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(data, indent=1, sort_keys=True))


def cmd_fit(args):
    cfg = _config(args)
    assets, _, metrics = run_pipeline(load_bundle(args.bundle), cfg, args.out)
    cfg.save(Path(args.out) / "config.json")
    print(f"fit: {len(assets.parts)} parts, mean RMSE {metrics.mean_rmse:.4f}, mean SSIM {metrics.mean_ssim:.4f}")


def cmd_baseline(args):
    cfg = _config(args)
    _, _, metrics = run_baseline(load_bundle(args.bundle), args.method, cfg, args.out)
    print(f"{args.method}: mean RMSE {metrics.mean_rmse:.4f}, mean SSIM {metrics.mean_ssim:.4f}")


def _indexed(directory, suffixes=(".pfm", ".png")):
    """view index -> path for files named ``view<i>.<ext>`` (PFM preferred)."""
    out = {}
    for suffix in reversed(suffixes):
        for p in Path(directory).glob(f"view*{suffix}"):
            key = p.stem[4:]
            if key.isdigit():
                out[int(key)] = p
    return out


def cmd_metrics(args):
    """Score a render set against the bundle photos, using the part masks of a
    fitted report (``--assets``) or every part's first mask candidate."""
    bundle = load_bundle(args.bundle)
    renders = {v: read_photo(p) for v, p in _indexed(args.renders).items()}
    if args.view is not None:
        renders = {v: r for v, r in renders.items() if v == args.view}
    if not renders:
        raise PhotosceneError(f"no view<i>.pfm or view<i>.png renders in {args.renders}")
    masks = {}
    if args.assets:
        masks = {k: m for k, m in part_masks(bundle, load_fitted_assets(args.assets).parts).items()
                 if m[0] in renders}
    else:
        for part in bundle.parts:
            for v in sorted(renders):
                pv = part.per_view.get(v)
                if pv is not None and pv.mask_photo_candidates:
                    masks[part.part_id] = (v, pv.mask_photo_candidates[0])
                    break
    if args.masks:
        for p in Path(args.masks).glob("*_view*.png"):
            pid, v = p.stem.rsplit("_view", 1)
            masks[pid] = (int(v), read_mask(p))
    report = evaluate({v: bundle.views[v].photo for v in renders}, renders, masks, args.method or "external")
    _write_json(Path(args.out) / "metrics.json", report.as_dict())
    print(f"metrics: mean RMSE {report.mean_rmse:.4f}, mean SSIM {report.mean_ssim:.4f}")


def cmd_render(args):
    bundle = load_bundle(args.bundle)
    assets = load_fitted_assets(args.assets or args.out)
    views = [args.view] if args.view is not None else sorted({p.view for p in assets.parts})
    for v in views:
        img = render_view(bundle, assets, v)
        write_image_pair(Path(args.out) / f"view{v}", img)
        print(f"render: view {v} exposure {view_exposure(bundle, assets, v):.4f}")


def cmd_exemplars(args):
    cfg = _config(args)
    bundle = load_bundle(args.bundle)
    part = bundle.part(args.part)
    view = args.view if args.view is not None else choose_view(bundle, part)[0]
    align = align_part(part.per_view[view], bundle.views[view].normals_inv)
    scene = part_scene(bundle, view, align, cfg)
    ranking, phis = rank_exemplars(scene, None, cfg.selection, cfg.seed, cfg.material.phi_grid)
    winner, tally, k = vote(ranking, cfg.selection.k)
    out = Path(args.out)
    h, w = bundle.image_shape
    ys, xs = scene.pixels
    entries = []
    for rank, e in enumerate(ranking):
        img = np.zeros((h, w, 3))
        img[ys, xs] = render_exemplar(scene, e.graph_id, e.theta, cfg.selection.exemplar_resolution,
                                      phis[e.graph_id]).numpy()
        stem = f"{rank:03d}_{e.graph_id}_{e.sample}"
        write_image_pair(out / "exemplars" / stem, img)
        entries.append({"rank": rank, "graphId": e.graph_id, "sample": e.sample, "distance": e.distance,
                        "theta": [float(t) for t in e.theta], "image": f"exemplars/{stem}.png"})
    _write_json(out / "exemplars.json", {"partId": part.part_id, "view": view, "winner": winner, "k": k,
                                         "tally": dict(sorted(tally.items())),
                                         "phi": {g: p.as_dict() for g, p in sorted(phis.items())},
                                         "ranking": entries})
    print(f"exemplars: {part.part_id} -> {winner} {dict(sorted(tally.items()))}")


def cmd_gen_synthetic(args):
    cfg = SyntheticConfig.load(args.config) if args.config else SyntheticConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    truth = generate(cfg, args.out)
    print(f"gen-synthetic: {len(truth['parts'])} parts, {cfg.views} views -> {args.out}")


COMMANDS = {
    "fit": cmd_fit,
    "baseline": cmd_baseline,
    "metrics": cmd_metrics,
    "render": cmd_render,
    "exemplars": cmd_exemplars,
    "gen-synthetic": cmd_gen_synthetic,
}


def build_parser():
    p = argparse.ArgumentParser(prog="photoscene", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--config", help="JSON config file")
        s.add_argument("--seed", type=int)
        s.add_argument("--jobs", type=int)
        if name != "gen-synthetic":
            s.add_argument("--bundle", required=True, help="scene bundle directory")
        if name in ("baseline", "metrics"):
            choices = (PIXEL_MEDIAN, INV_RENDER_MEDIAN) if name == "baseline" else None
            s.add_argument("--method", choices=choices, required=name == "baseline")
        if name in ("metrics", "render", "exemplars"):
            s.add_argument("--view", type=int)
        if name in ("metrics", "render"):
            s.add_argument("--assets", help="fitted assets directory")
        if name == "metrics":
            s.add_argument("--renders", required=True, help="directory of view<i>.pfm/png renders")
            s.add_argument("--masks", help="directory of <part>_view<i>.png masks")
        if name == "exemplars":
            s.add_argument("--part", required=True)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except StageError as exc:
        print(f"photoscene {args.command}: stage {exc.stage}"
              f"{'' if exc.part is None else f' part {exc.part}'}: {exc.cause}", file=sys.stderr)
        return 2
    except (PhotosceneError, ValueError, OSError) as exc:
        print(f"photoscene {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
