"""Command-line entry point (``rvf``).

Exit codes: 0 success, 1 configuration or usage error, 2 I/O error,
3 runtime failure (for example a non-finite training loss). ``RVF_THREADS``
caps the native thread pools (BLAS/OpenMP).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import corpus, harness, prng
from .degradation import DegradationError, DegradationSpec, apply_spec, degrade_sequence
from .diagnostics import METRICS, MetricError, compute_metrics, radial_power_spectrum
from .errors import ConfigError
from .train import TrainingError

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_RUNTIME = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def thread_limit():
    raw = os.environ.get("RVF_THREADS")
    if raw is None or raw == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise ConfigError(f"RVF_THREADS: must be a positive integer, got {raw!r}")
    return n


def _print_report(report: harness.RunReport) -> None:
    for name, path in report.csv.items():
        print(f"{name}: {path}")
    print(f"digest: {report.digest}")


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------
def cmd_degrade(args) -> None:
    frames = corpus.load_frames(args.input)
    single = {"blur": ("blur", "sigma"), "noise": ("noise", "sigma"),
              "jpeg": ("jpeg", "quality"), "resize": ("resize", "factor")}
    chosen = [name for name in single if getattr(args, name) is not None]
    if len(chosen) > 1:
        raise ConfigError(f"choose one of --preset/--blur/--noise/--jpeg/--resize, got {chosen}")
    if chosen:
        kind, key = single[chosen[0]]
        value = getattr(args, chosen[0])
        specs = [DegradationSpec(kind, {key: value}, prng.derive_seed(args.seed, "frame", t))
                 for t in range(len(frames))]
        out = [apply_spec(f, s) for f, s in zip(frames, specs)]
    else:
        out, specs = degrade_sequence(frames, args.seed, args.scale)
    paths = corpus.save_frames(out, args.output)
    with open(Path(args.output) / "specs.jsonl", "w") as fh:
        for path, spec in zip(paths, specs):
            fh.write(json.dumps({"frame": path.name, "spec": spec.to_dict()}, sort_keys=True) + "\n")
    for p in paths:
        print(p)


def _config_command(kind):
    def run(args):
        overrides = {"experiment.kind": kind}
        if getattr(args, "output", None):
            overrides["experiment.output"] = args.output
        if getattr(args, "steps", None) is not None:
            overrides["train.steps"] = args.steps
        _print_report(harness.run_experiment(harness.load_config(args.config, overrides)))
    return run


def cmd_infer(args) -> None:
    from .checkpoint import load_checkpoint

    if not Path(args.ckpt).is_file():
        raise FileNotFoundError(f"checkpoint not found: {args.ckpt}")
    ckpt_scale = load_checkpoint(args.ckpt).config["model"]["scale"]
    if args.scale != ckpt_scale:
        raise ConfigError(f"--scale {args.scale} does not match the checkpoint's scale {ckpt_scale}")
    text = (f"[experiment]\nkind = infer\nseed = 0\noutput = {args.output}\n"
            f"[model]\nscale = {args.scale}\n")
    cfg = harness.parse_config(text, {"infer.checkpoint": args.ckpt, "infer.input": args.input})
    _print_report(harness.run_experiment(cfg))


def cmd_metrics(args) -> None:
    names = [m.strip() for m in args.metrics.split(",") if m.strip()]
    for m in names:
        if m not in METRICS:
            raise ConfigError(f"--metrics: unknown metric {m!r}; known: {sorted(METRICS)}")
    ref_paths = corpus.list_frames(args.ref)
    refs, outs = corpus.load_frames(args.ref), corpus.load_frames(args.output)
    report = compute_metrics(refs, outs, names)
    lines = ["frame_id,metric,value"]
    lines += [f"{fid},{m},{v!r}" for fid, m, v in report.rows([p.stem for p in ref_paths])]
    lines += [f"mean,{m},{v!r}" for m, v in report.means.items()]
    _emit("\n".join(lines) + "\n", args.csv)


def cmd_rps(args) -> None:
    frames = corpus.load_frames(args.input)
    specs = [radial_power_spectrum(f, args.bins) for f in frames]
    power = np.mean([s.power for s in specs], axis=0)
    edges = specs[0].edges
    lines = ["bin,f_lo,f_hi,power"]
    lines += [f"{i},{float(edges[i])!r},{float(edges[i + 1])!r},{float(power[i])!r}" for i in range(args.bins)]
    _emit("\n".join(lines) + "\n", args.csv)


def _emit(text: str, path) -> None:
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
        print(path)
    else:
        sys.stdout.write(text)


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rvf", description="Toy recurrent video super-resolution and attention probes.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("degrade", help="degrade a directory of frames")
    d.add_argument("--in", dest="input", required=True)
    d.add_argument("--out", dest="output", required=True)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--scale", type=int, default=4)
    d.add_argument("--preset", choices=["realworld"], default="realworld",
                   help="random blur -> noise -> JPEG -> downsample (default)")
    d.add_argument("--blur", type=float, default=None, help="Gaussian blur sigma only")
    d.add_argument("--noise", type=float, default=None, help="Gaussian noise sigma only")
    d.add_argument("--jpeg", type=int, default=None, help="JPEG quality only")
    d.add_argument("--resize", type=float, default=None, help="bicubic resize factor only")
    d.set_defaults(func=cmd_degrade)

    for name, kind, helptext in (("train", "train", "stage-1 training from a config"),
                                 ("probe-sensitivity", "sensitivity", "attention sensitivity table"),
                                 ("probe-covariance", "covariance", "channel covariance probe"),
                                 ("ablate", "ablation", "train and evaluate the variant lattice")):
        c = sub.add_parser(name, help=helptext)
        c.add_argument("--config", required=True)
        c.add_argument("--out", dest="output", default=None, help="override experiment.output")
        if name in ("train", "ablate"):
            c.add_argument("--steps", type=int, default=None, help="override train.steps")
        c.set_defaults(func=_config_command(kind))

    i = sub.add_parser("infer", help="super-resolve a directory of LR frames")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--in", dest="input", required=True)
    i.add_argument("--out", dest="output", required=True)
    i.add_argument("--scale", type=int, default=4)
    i.set_defaults(func=cmd_infer)

    m = sub.add_parser("metrics", help="per-frame PSNR/SSIM/Charbonnier between two frame directories")
    m.add_argument("--ref", required=True)
    m.add_argument("--out", dest="output", required=True, help="frames to evaluate")
    m.add_argument("--metrics", default="psnr,ssim")
    m.add_argument("--csv", default=None)
    m.set_defaults(func=cmd_metrics)

    r = sub.add_parser("rps", help="radial power spectrum averaged over frames")
    r.add_argument("--in", dest="input", required=True)
    r.add_argument("--bins", type=int, default=32)
    r.add_argument("--csv", default=None)
    r.set_defaults(func=cmd_rps)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        limit = thread_limit()
        if limit is None:
            args.func(args)
        else:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=limit):
                args.func(args)
    except (ConfigError, DegradationError, MetricError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
