"""``tempomoe`` command line: data synthesis, training, sampling, evaluation, routing and ablations."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .exceptions import ValidationError

log = logging.getLogger("tempomoe")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; usage errors are validation errors here
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def _bpms(text: str) -> list:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ValidationError(f"--bpms must be comma-separated numbers, got {text!r}") from exc
    if not values:
        raise ValidationError("--bpms is empty")
    return values


def _read_config(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ValidationError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ValidationError("config must be a JSON object")
    return data


def _train_config(args):
    from .training import TrainConfig

    cfg = TrainConfig.from_dict(_read_config(args.config))
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "max_steps", None) is not None:
        cfg.max_steps = args.max_steps
    if getattr(args, "epochs", None) is not None:
        cfg.epochs = args.epochs
    return cfg


def _out(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_make_data(args) -> int:
    from .dataset import make_data
    from .kinematics import Skeleton, smpl_skeleton, toy_skeleton

    skel = {"toy": toy_skeleton, "smpl": smpl_skeleton}.get(args.skeleton)
    skel = skel() if skel else Skeleton.load(args.skeleton)
    path = make_data(_out(args, "data"), _bpms(args.bpms), args.per_bpm, args.frames, args.fps, skel,
                     args.seed or 0, args.val_per_bpm)
    print(path)
    return EXIT_OK


def cmd_train(args) -> int:
    from .training import train

    cfg = _train_config(args)
    out = train(cfg, args.manifest, _out(args, "run"))
    print(out)
    return EXIT_OK


def cmd_sample(args) -> int:
    from .diffusion import SamplerConfig
    from .kinematics import save_motion
    from .music import load_features
    from .training import generate, load_trained

    model, stats, _, sched = load_trained(args.checkpoint)
    music = load_features(args.music)
    frames = args.frames or len(music)
    if frames < 1 or frames > len(music):
        raise ValidationError(f"--frames must lie in [1, {len(music)}] for this music file, got {frames}")
    scfg = SamplerConfig(solver=args.solver, steps=args.steps, guidance_scale=args.guidance, seed=args.seed or 0)
    motion = generate(model, music.frames[:frames], stats, sched, scfg)[0]
    motion.meta.update(source_music=str(args.music), solver=args.solver, steps=args.steps, guidance=args.guidance)
    path = _out(args, "samples") / f"{Path(args.music).name.split('.')[0]}.motion.tmoe"
    save_motion(path, motion)
    print(path)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .dataset import load_manifest, load_pairs
    from .diffusion import SamplerConfig
    from .metrics import BeatSet, evaluation_report
    from .training import generate, load_trained

    model, stats, skel, sched = load_trained(args.checkpoint)
    pairs = load_pairs(load_manifest(args.manifest), args.split)
    if len(pairs) < 2:
        raise ValidationError(f"eval needs at least 2 pairs in split {args.split!r}, found {len(pairs)}")
    scfg = SamplerConfig(solver=args.solver, steps=args.steps, guidance_scale=args.guidance, seed=args.seed or 0)
    generated, beats = [], []
    for music, _ in pairs:
        generated.append(generate(model, music.frames, stats, sched, scfg)[0])
        beats.append(BeatSet(music.beat_frames, music.fps))
    report = evaluation_report(generated, [m for _, m in pairs], beats, skel, args.sigma)
    path = _out(args, "eval") / "eval.json"
    path.write_text(json.dumps(report, indent=1))
    print(path)
    return EXIT_OK


def cmd_analyze_routing(args) -> int:
    from .routing import analyze_routing

    paths = analyze_routing(args.checkpoint, args.manifest, _out(args, "routing"), args.split, args.t,
                            args.seed or 0)
    print(*paths, sep="\n")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .ablation import AXES, STUDY_AXES, run_ablation
    from .dataset import build_windows, load_manifest, load_pairs, synth_pair
    from .denoiser import DenoiserConfig
    from .kinematics import toy_skeleton
    from .training import TrainConfig, default_skeleton

    if args.config:
        base = _train_config(args)
    else:
        base = TrainConfig(batch_size=2, window=64, stride=64, log_every=0,
                           denoiser=DenoiserConfig(blocks=1, latent_dim=32, heads=2, motion_dim=25),
                           seed=args.seed or 0)
    axes = args.axes.split(",") if args.axes else list(STUDY_AXES)
    for a in axes:
        if a not in AXES:
            raise ValidationError(f"unknown ablation axis {a!r}; valid axes: {', '.join(AXES)}")
    if args.manifest:
        manifest = load_manifest(args.manifest)
        skel = manifest.skeleton or default_skeleton(manifest.motion_dim)
        pairs = load_pairs(manifest, "train")
    else:
        skel = toy_skeleton()
        pairs = [synth_pair(b, base.window, base.denoiser.fps, skel, i) for i, b in enumerate((60.0, 120.0, 180.0))]
    windows = build_windows(pairs, base.window, base.stride, base.seed)
    results = run_ablation(base, windows, skel, axes, args.steps)
    path = _out(args, "ablation") / "ablation.json"
    path.write_text(json.dumps(results, indent=1))
    for r in results:
        print(f"{'ok  ' if r['ok'] else 'FAIL'} {r['name']}")
    return EXIT_OK if all(r["ok"] for r in results) else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE.json", default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, metavar="N", default=argparse.SUPPRESS)
    common.add_argument("--out", metavar="DIR", default=argparse.SUPPRESS)

    p = _Parser(prog="tempomoe", description=__doc__, parents=[common])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("make-data", parents=[common], help="synthesize a click-track dance corpus")
    s.add_argument("--bpms", default="60,80,100,120,140,160,180,200")
    s.add_argument("--per-bpm", type=int, default=8)
    s.add_argument("--frames", type=int, default=512)
    s.add_argument("--fps", type=float, default=30.0)
    s.add_argument("--val-per-bpm", type=int, default=1)
    s.add_argument("--skeleton", default="toy", help="toy, smpl, or a skeleton JSON path")
    s.set_defaults(func=cmd_make_data)

    s = sub.add_parser("train", parents=[common], help="train a denoiser from a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--max-steps", type=int)
    s.add_argument("--epochs", type=int)
    s.set_defaults(func=cmd_train)

    def sampler_flags(s):
        s.add_argument("--checkpoint", required=True)
        s.add_argument("--steps", type=int, default=10)
        s.add_argument("--guidance", type=float, default=2.5)
        s.add_argument("--solver", choices=("dpmpp_2m", "ancestral"), default="dpmpp_2m")

    s = sub.add_parser("sample", parents=[common], help="generate dance for one music file")
    sampler_flags(s)
    s.add_argument("--music", required=True, metavar="FILE")
    s.add_argument("--frames", type=int, metavar="N")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("eval", parents=[common], help="FID, diversity and BAS for a checkpoint")
    sampler_flags(s)
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", default="val")
    s.add_argument("--sigma", type=float, default=3.0)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("analyze-routing", parents=[common], help="export routing statistics")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", default=None)
    s.add_argument("--t", type=int, default=None, help="diffusion step for the probe passes (default T/2)")
    s.set_defaults(func=cmd_analyze_routing)

    s = sub.add_parser("ablate", parents=[common], help="run one training step per ablation config")
    s.add_argument("--axes", help="comma-separated axes (default: all studied axes)")
    s.add_argument("--manifest")
    s.add_argument("--steps", type=int, default=1)
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        for name in ("config", "seed", "out"):
            if not hasattr(args, name):
                setattr(args, name, None)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except (ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # anything else is a runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
