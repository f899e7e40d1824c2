# Copyright 2025 The domefield Authors

# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at

#     https://www.apache.org/licenses/LICENSE-2.0

# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Command line entry point"""

from dataclasses import replace
from typing import Dict, List, Optional, Sequence
import argparse
import logging
import os
import sys

import numpy as np
from tqdm import tqdm

from domefield import imaging
from domefield.config import load_config
from domefield.errors import DomeFieldError
from domefield.harness import (
    SCENES, gen_scene, prior_frame_pose, read_dataset, scene_from_manifest, write_dataset,
)
from domefield.metrics import (
    MetricReport, ViewPair, error_heatmap, evaluate, psnr_limitation_pair,
)
from domefield.render import RenderMode, render_image
from domefield.report import ReportView, write_report
from domefield.sampling import StrategyKind, SamplingStrategy
from domefield.splat import (
    GaussianSet, fit_prior, prior_dome, pseudo_gt_views, write_pseudo_gt_cache,
)
from domefield.trainer import TrainConfig, load_checkpoint, train

logger = logging.getLogger(__name__)

LOSS_TERMS = ("rec", "cont", "sr", "nv_c", "nv_sigma")
_TERM_WEIGHT = {"rec": "lambda_rec", "cont": "lambda_cont", "sr": "lambda_sr",
                "nv_c": "lambda_c", "nv_sigma": "lambda_sigma"}


def _comma_list(text: str) -> List[str]:
    return [item.strip() for item in text.split(",") if item.strip()]


def _int_list(text: str) -> List[int]:
    try:
        return [int(item) for item in _comma_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _strategy_list(text: str) -> List[str]:
    names = _comma_list(text)
    valid = {k.value for k in StrategyKind}
    for name in names:
        if name not in valid:
            raise argparse.ArgumentTypeError(
                f"unknown strategy {name!r}; expected one of {', '.join(sorted(valid))}")
    return names


def _loss_mask(text: str) -> List[str]:
    terms = [] if text.strip().lower() == "none" else _comma_list(text)
    for term in terms:
        if term not in LOSS_TERMS:
            raise argparse.ArgumentTypeError(
                f"unknown loss term {term!r}; expected one of {', '.join(LOSS_TERMS)}")
    return terms


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="INI training config")
    parser.add_argument("--iterations", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--n-samples", type=int)
    parser.add_argument("--rays", type=int, help="primary rays per iteration")
    parser.add_argument("--nv-rays", type=int, help="novel-view rays per iteration")
    parser.add_argument("--nv-start", type=int, help="iteration at which novel-view terms start")
    parser.add_argument("--checkpoint-every", type=int)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="domefield",
        description="Dome-supervised dynamic radiance fields on synthetic scenes")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("gen-scene", help="write a synthetic dataset")
    p.add_argument("--scene", choices=SCENES, default="bouncer")
    p.add_argument("--frames", type=int, default=24)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64, help="image width and height")
    p.add_argument("--eval-only", action="store_true",
                   help="write only the held-out dome views")
    p.add_argument("--out", required=True)

    p = commands.add_parser("fit-prior", help="fit the Gaussian object prior")
    p.add_argument("--data", required=True)
    p.add_argument("--gaussians", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output .npz")

    p = commands.add_parser("pgt", help="render and cache pseudo ground truth")
    p.add_argument("--data", required=True)
    p.add_argument("--prior", required=True, help="prior written by fit-prior")
    p.add_argument("--config", help="INI config providing the dome lists")
    p.add_argument("--out", required=True)

    p = commands.add_parser("train", help="optimize the field")
    p.add_argument("--data", required=True)
    p.add_argument("--pgt", help="pseudo ground truth cache")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--strategy", choices=[k.value for k in StrategyKind])
    p.add_argument("--pad", type=int)
    _add_train_flags(p)

    p = commands.add_parser("render", help="render one dome view of a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--azimuth", type=float, default=0.0)
    p.add_argument("--elevation", type=float, default=0.0)
    p.add_argument("--frame", type=int, default=1)
    p.add_argument("--mode", choices=[m.value for m in RenderMode], default=RenderMode.FULL.value)
    p.add_argument("--n-samples", type=int, default=128)
    p.add_argument("--out", required=True, help="output RGB png")
    p.add_argument("--opacity-out", help="output opacity png")

    p = commands.add_parser("eval", help="metrics over the held-out dome views")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--ckpt", help="checkpoint to render")
    source.add_argument("--predictions", help="directory laid out like the dataset's dome/")
    p.add_argument("--data", "--manifest", dest="data", required=True)
    p.add_argument("--frames", type=_int_list, help="comma-separated frames (default all)")
    p.add_argument("--n-samples", type=int, default=128)
    p.add_argument("--out", help="write predictions and heatmaps here")
    p.add_argument("--csv", help="write the metric report as CSV")
    p.add_argument("--report", help="write an HTML report")
    p.add_argument("--tag", default="")

    p = commands.add_parser("ablate", help="train and evaluate several configurations")
    p.add_argument("--data", required=True)
    p.add_argument("--pgt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strategy", type=_strategy_list, default=["padded"],
                   help="comma-separated strategies")
    p.add_argument("--pad", type=_int_list, default=[2], help="comma-separated paddings")
    p.add_argument("--loss-mask", type=_loss_mask, action="append",
                   help="comma-separated terms to disable, or 'none'; repeatable")
    p.add_argument("--frames", type=_int_list)
    _add_train_flags(p)
    return parser


def _train_config(args) -> TrainConfig:
    config = load_config(args.config) if args.config else TrainConfig()
    updates = {}
    for flag, name in (("iterations", "iterations"), ("seed", "seed"), ("workers", "workers"),
                       ("n_samples", "n_samples"), ("rays", "rays_per_iter_primary"),
                       ("nv_rays", "rays_per_iter_nv"), ("checkpoint_every", "checkpoint_every")):
        value = getattr(args, flag, None)
        if value is not None:
            updates[name] = value
    if getattr(args, "nv_start", None) is not None:
        updates["weights"] = replace(config.weights, nv_start_iteration=args.nv_start)
    strategy = getattr(args, "strategy", None)
    pad = getattr(args, "pad", None)
    if isinstance(strategy, str) or isinstance(pad, int):
        updates["strategy"] = SamplingStrategy.parse(
            strategy if isinstance(strategy, str) else config.strategy.kind.value,
            pad if isinstance(pad, int) else config.strategy.pad)
    config = replace(config, **updates)
    config.validate()
    return config


def _gen_scene(args) -> int:
    scene = gen_scene(args.scene, args.frames, args.seed, args.size)
    manifest = write_dataset(scene, args.out, all_views=not args.eval_only)
    print(f"wrote {scene.name}: {manifest.n_frames} frames, "
          f"{len(manifest.dome)} dome views to {args.out}")
    return 0


def _fit_prior(args) -> int:
    scene = scene_from_manifest(read_dataset(args.data))
    gaussians = fit_prior(scene.obj, args.gaussians, np.random.default_rng(args.seed))
    gaussians.save(args.out)
    print(f"wrote {len(gaussians)} Gaussians to {args.out}")
    return 0


def _pgt(args) -> int:
    config = load_config(args.config) if args.config else TrainConfig()
    manifest = read_dataset(args.data)
    scene = scene_from_manifest(manifest)
    gaussians = GaussianSet.load(args.prior)
    frames = {}
    for t in tqdm(range(1, manifest.n_frames + 1), desc="pseudo-GT", unit="frame"):
        pose_n = manifest.primary_pose(t)
        pose_d = prior_frame_pose(scene, t, pose_n)
        dome = prior_dome(pose_d, config.azimuths, config.elevations)
        frames[t] = pseudo_gt_views(gaussians, pose_n, pose_d, dome)
    path = write_pseudo_gt_cache(args.out, frames)
    print(f"wrote pseudo ground truth for {len(frames)} frames, manifest {path}")
    return 0


def _train(args) -> int:
    config = _train_config(args)
    result = train(config, args.data, args.out, pgt_root=args.pgt, resume=args.resume)
    print(f"wrote {result.checkpoint} and {result.loss_log}")
    return 0


def _render(args) -> int:
    state = load_checkpoint(args.ckpt)
    scene = scene_from_manifest(read_dataset(args.data))
    view = scene.dome(args.frame, [args.azimuth], [args.elevation])[0]
    image = render_image(view.pose, state.params, args.frame, RenderMode(args.mode),
                         n_samples=args.n_samples)
    imaging.write_png(args.out, image.rgb)
    if args.opacity_out:
        imaging.write_png(args.opacity_out, image.opacity)
    print(f"wrote {args.out}")
    return 0


def _eval_pairs(data_root: str, frames: Optional[Sequence[int]], params=None,
                predictions: Optional[str] = None, n_samples: int = 128,
                out_dir: Optional[str] = None) -> List[ViewPair]:
    manifest = read_dataset(data_root)
    frames = frames or list(range(1, manifest.n_frames + 1))
    pairs = []
    for key in manifest.eval_views:
        entry = manifest.dome[key]
        for t in frames:
            target = imaging.read_rgb(os.path.join(data_root, entry["images"][t - 1]))
            target_mask = imaging.read_gray(os.path.join(data_root, entry["masks"][t - 1]))
            if params is not None:
                image = render_image(manifest.dome_pose(key, t), params, t, n_samples=n_samples)
                predicted, predicted_mask = image.rgb, image.fg_opacity
            else:
                predicted = imaging.read_rgb(os.path.join(predictions, key, f"{t:04d}.png"))
                predicted_mask = None
            if out_dir:
                imaging.write_png(os.path.join(out_dir, key, f"{t:04d}.png"), predicted)
                imaging.write_png(os.path.join(out_dir, key, f"{t:04d}_heat.png"),
                                  error_heatmap(predicted, target))
            pairs.append(ViewPair(f"{key}@{t}", predicted, target, target_mask, predicted_mask))
    return pairs


def _evaluate(data_root: str, frames, params=None, predictions=None, n_samples: int = 128,
              out_dir=None, tag: str = ""):
    pairs = _eval_pairs(data_root, frames, params, predictions, n_samples, out_dir)
    return evaluate(pairs, tag), pairs


def _eval(args) -> int:
    params = load_checkpoint(args.ckpt).params if args.ckpt else None
    report, pairs = _evaluate(args.data, args.frames, params, args.predictions,
                              args.n_samples, args.out, args.tag)
    print(report.table())
    if args.csv:
        report.write_csv(args.csv)
    if args.report:
        views = [ReportView(p.view, p.target, p.predicted) for p in pairs]
        write_report(args.report, [report], views, limitation=psnr_limitation_pair())
    return 0


def _ablation_configs(base: TrainConfig, strategies: Sequence[str], pads: Sequence[int],
                      masks: Sequence[Sequence[str]]) -> Dict[str, TrainConfig]:
    configs: Dict[str, TrainConfig] = {}
    for name in strategies:
        for pad in (pads if name == StrategyKind.PADDED_BBOX.value else [base.strategy.pad]):
            strategy = SamplingStrategy.parse(name, pad)
            for mask in masks:
                weights = replace(base.weights, **{_TERM_WEIGHT[term]: 0.0 for term in mask})
                tag = strategy.tag + ("" if not mask else "-no-" + "-".join(mask))
                configs[tag] = replace(base, strategy=strategy, weights=weights)
    return configs


def _ablate(args) -> int:
    base = _train_config(args)
    configs = _ablation_configs(base, args.strategy, args.pad, args.loss_mask or [[]])
    reports: List[MetricReport] = []
    for tag, config in configs.items():
        logger.info("ablation run %s", tag)
        run_dir = os.path.join(args.out, tag)
        result = train(config, args.data, run_dir, pgt_root=args.pgt)
        report, _ = _evaluate(args.data, args.frames, result.state.params,
                              n_samples=config.n_samples, tag=tag)
        report.write_csv(os.path.join(run_dir, "metrics.csv"))
        reports.append(report)
        print(report.table())
        print()
    print(f"{'run':<32} {'psnr':>8} {'ssim':>7}")
    for report in reports:
        print(f"{report.tag:<32} {report.mean_psnr:>8.2f} {report.mean_ssim:>7.4f}")
    return 0


_COMMANDS = {
    "gen-scene": _gen_scene,
    "fit-prior": _fit_prior,
    "pgt": _pgt,
    "train": _train,
    "render": _render,
    "eval": _eval,
    "ablate": _ablate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand. Usage errors return 2, runtime errors 1."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except (DomeFieldError, OSError, ValueError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
