"""Experiment orchestration: INI configs, presets, CSV and JSON reports.

A config is a flat INI file. ``[experiment]`` selects the kind and the
top-level seed; the other sections configure one stage each. Every stage
draws its randomness from ``derive_seed(seed, <stage label>, ...)`` so a
stage can be rerun in isolation. Every CSV row starts with the config
digest, a SHA-256 over the resolved config and the input corpus.
"""
from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import corpus, prng, probes
from .checkpoint import load_checkpoint, save_checkpoint
from .degradation import DegradationSpec, apply_spec, degrade_sequence
from .diagnostics import ac_indicator, psnr, ssim
from .errors import ConfigError
from .model import ModelConfig, run_sequence
from .train import TrainConfig, model_from_checkpoint, train_stage1

EXPERIMENT_KINDS = ("sensitivity", "covariance", "ablation", "train", "infer")

# the four points of the ablation lattice: (fusion, block kind)
ABLATION_VARIANTS = {
    "sp-baseline": ("concat", "spatial-attn"),
    "ch-baseline": ("concat", "channel-attn"),
    "caf-channel": ("caf", "channel-attn"),
    "caf-ica": ("caf", "ICA"),
}

# defaults per section; the value type of each default fixes the parsed type
DEFAULTS: Dict[str, Dict[str, object]] = {
    "experiment": {"kind": "", "seed": -1, "output": "runs/experiment"},
    "data": {"source": "synthetic", "clips": 4, "frames": 3, "size": 64},
    "model": {"channels": [16, 32, 64], "blocks": [2, 2, 2], "heads": [1, 2, 4],
              "squeeze_ratio": 4, "fusion": "caf", "block_kind": "ICA", "scale": 4, "window": 4,
              "fusion_heads": 1},
    "train": {"steps": 500, "lr": 2e-3, "optimizer": "adam", "momentum": 0.9,
              "ssim_weight": 1e-3, "charbonnier_eps": 1e-3},
    "sensitivity": {"clips": 20, "size": 64, "degradations": ["blur", "noise", "compression"],
                    "blur_sigma": 2.0, "noise_sigma": 0.05, "jpeg_quality": 30,
                    "target_entropy": probes.TARGET_ENTROPY, "dim": 16, "window": 8},
    "covariance": {"samples": 100, "dim": 16, "size": 32, "window": 8},
    "ablation": {"variants": list(ABLATION_VARIANTS), "splits": ["noise", "compression", "blur"],
                 "eval_clips": 6},
    "infer": {"checkpoint": "", "input": ""},
}


@dataclass
class ExperimentConfig:
    kind: str
    seed: int
    output: Path
    sections: Dict[str, Dict[str, object]]
    corpus_digest: str = ""

    def section(self, name: str) -> Dict[str, object]:
        return self.sections[name]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, "sections": self.sections,
                "corpus_digest": self.corpus_digest}

    @property
    def digest(self) -> str:
        # the output directory is deliberately excluded: it does not change results
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def model_config(self, **overrides) -> ModelConfig:
        m = dict(self.section("model"))
        m.update(overrides)
        return ModelConfig(**m)

    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=prng.derive_seed(self.seed, "train"), **self.section("train"))


@dataclass
class RunReport:
    config: dict
    digest: str
    csv: Dict[str, str] = field(default_factory=dict)
    durations: Dict[str, float] = field(default_factory=dict)
    extra: Dict[str, object] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"config": self.config, "digest": self.digest, "csv": self.csv,
                           "durations": self.durations, "extra": self.extra},
                          indent=2, sort_keys=True, default=str)


# --------------------------------------------------------------------------
# parsing
# --------------------------------------------------------------------------
def _parse_value(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if default and isinstance(default[0], int):
                return [int(s) for s in items]
            return items
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def parse_config(text: str, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Parse INI text; unknown sections/keys and malformed values raise ConfigError."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    sections = {name: dict(values) for name, values in DEFAULTS.items()}
    for name in parser.sections():
        if name not in DEFAULTS:
            raise ConfigError(f"[{name}]: unknown section; known: {sorted(DEFAULTS)}")
        for key, raw in parser.items(name):
            if key not in DEFAULTS[name]:
                raise ConfigError(f"{name}.{key}: unknown key")
            sections[name][key] = _parse_value(f"{name}.{key}", raw, DEFAULTS[name][key])
    for dotted, value in (overrides or {}).items():
        name, _, key = dotted.partition(".")
        if key not in DEFAULTS.get(name, {}):
            raise ConfigError(f"{dotted}: unknown override key")
        if isinstance(value, str):
            value = _parse_value(dotted, value, DEFAULTS[name][key])
        sections[name][key] = value
    exp = sections.pop("experiment")
    if exp["kind"] not in EXPERIMENT_KINDS:
        raise ConfigError(f"experiment.kind: must be one of {EXPERIMENT_KINDS}, got {exp['kind']!r}")
    if exp["seed"] < 0:
        raise ConfigError("experiment.seed: a non-negative seed is required")
    cfg = ExperimentConfig(exp["kind"], int(exp["seed"]), Path(exp["output"]), sections)
    _validate(cfg)
    return cfg


def load_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    return parse_config(text, overrides)


def _validate(cfg: ExperimentConfig) -> None:
    def positive(section, key):
        if cfg.sections[section][key] <= 0:
            raise ConfigError(f"{section}.{key}: must be positive, got {cfg.sections[section][key]}")

    for key in ("clips", "frames", "size"):
        positive("data", key)
    for key in ("clips", "size", "dim", "window"):
        positive("sensitivity", key)
    for key in ("samples", "dim", "size", "window"):
        positive("covariance", key)
    if cfg.sections["covariance"]["samples"] < 2:
        raise ConfigError("covariance.samples: need at least 2 samples")
    te = cfg.sections["sensitivity"]["target_entropy"]
    if not 0.0 < te < 1.0:
        raise ConfigError(f"sensitivity.target_entropy: must lie in (0, 1), got {te}")
    for name in cfg.sections["sensitivity"]["degradations"]:
        if name not in ("identity", "blur", "noise", "compression"):
            raise ConfigError(f"sensitivity.degradations: unknown degradation {name!r}")
    for name in cfg.sections["ablation"]["variants"]:
        if name not in ABLATION_VARIANTS:
            raise ConfigError(f"ablation.variants: unknown variant {name!r}; known: {list(ABLATION_VARIANTS)}")
    for name in cfg.sections["ablation"]["splits"]:
        if name not in SPLITS:
            raise ConfigError(f"ablation.splits: unknown split {name!r}; known: {list(SPLITS)}")
    for section in ("model", "train"):
        try:
            cfg.model_config() if section == "model" else cfg.train_config()
        except ConfigError as exc:
            # the inner messages open with the field name
            raise ConfigError(f"{section}.{exc}") from None
        except TypeError as exc:
            raise ConfigError(f"{section}: {exc}") from None
    if cfg.kind == "infer":
        for key in ("checkpoint", "input"):
            if not cfg.sections["infer"][key]:
                raise ConfigError(f"infer.{key}: required for infer experiments")


# --------------------------------------------------------------------------
# data
# --------------------------------------------------------------------------
def load_clips(path) -> List[List[np.ndarray]]:
    """A directory of frames is one clip; a directory of frame directories is several."""
    root = Path(path)
    if not root.is_dir():
        raise corpus.CorpusError(f"corpus directory not found: {root}")
    if any(p.suffix.lower() in corpus.IMAGE_SUFFIXES for p in root.iterdir()):
        return [corpus.load_frames(root)]
    subdirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not subdirs:
        raise corpus.CorpusError(f"empty corpus: no frames or clip directories in {root}")
    return [corpus.load_frames(d) for d in subdirs]


def corpus_digest(clips: Sequence[Sequence[np.ndarray]]) -> str:
    h = hashlib.sha256()
    for clip in clips:
        for frame in clip:
            a = np.ascontiguousarray(frame, dtype="<f4")
            h.update(str(a.shape).encode())
            h.update(a.tobytes())
    return h.hexdigest()[:16]


def hr_clips(cfg: ExperimentConfig, label: str, count: Optional[int] = None) -> List[List[np.ndarray]]:
    data = cfg.section("data")
    if data["source"] != "synthetic":
        return load_clips(data["source"])
    count = data["clips"] if count is None else count
    return [corpus.synthetic_clip(prng.derive_seed(cfg.seed, label, i), frames=data["frames"],
                                  height=data["size"], width=data["size"]) for i in range(count)]


def training_pairs(cfg: ExperimentConfig, clips) -> list:
    scale = cfg.section("model")["scale"]
    pairs = []
    for i, hr in enumerate(clips):
        lr, _ = degrade_sequence(hr, prng.derive_seed(cfg.seed, "degrade", i), scale)
        pairs.append(([np.asarray(f, dtype=np.float32) for f in lr], hr))
    return pairs


# degradation used for each evaluation split of the ablation
SPLITS = {
    "noise": [DegradationSpec("noise", {"sigma": 0.05})],
    "compression": [DegradationSpec("jpeg", {"quality": 30})],
    "blur": [DegradationSpec("blur", {"sigma": 2.0})],
    "clean": [],
}


def split_pairs(cfg: ExperimentConfig, clips, split: str) -> list:
    scale = cfg.section("model")["scale"]
    pairs = []
    for i, hr in enumerate(clips):
        lr = []
        for t, frame in enumerate(hr):
            stages = [DegradationSpec(s.kind, s.params, prng.derive_seed(cfg.seed, "split", split, i, t))
                      for s in SPLITS[split]]
            stages.append(DegradationSpec("resize", {"factor": 1.0 / scale}))
            lr.append(apply_spec(frame, DegradationSpec("pipeline", {"stages": stages})).astype(np.float32))
        pairs.append((lr, hr))
    return pairs


# --------------------------------------------------------------------------
# CSV helpers
# --------------------------------------------------------------------------
def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows, digest: str) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["config_digest", *header])
    for row in rows:
        writer.writerow([digest, *[_fmt(v) for v in row]])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())
    return str(path)


# --------------------------------------------------------------------------
# experiments
# --------------------------------------------------------------------------
def _sensitivity_specs(sec) -> Dict[str, DegradationSpec]:
    table = {
        "identity": DegradationSpec("identity", {}),
        "blur": DegradationSpec("blur", {"sigma": sec["blur_sigma"]}),
        "noise": DegradationSpec("noise", {"sigma": sec["noise_sigma"]}),
        "compression": DegradationSpec("jpeg", {"quality": sec["jpeg_quality"]}),
    }
    return {name: table[name] for name in sec["degradations"]}


def _run_sensitivity(cfg, report):
    sec = cfg.section("sensitivity")
    if cfg.section("data")["source"] == "synthetic":
        clips = [corpus.synthetic_clip(prng.derive_seed(cfg.seed, "sensitivity", i), frames=2,
                                       height=sec["size"], width=sec["size"]) for i in range(sec["clips"])]
    else:
        clips = [c for c in load_clips(cfg.section("data")["source"]) if len(c) >= 2]
        if not clips:
            raise corpus.CorpusError("sensitivity needs clips with at least two frames")
    specs = _sensitivity_specs(sec)
    table = probes.sensitivity_table(clips, specs, seed=prng.derive_seed(cfg.seed, "probe"),
                                     target=sec["target_entropy"], dim=sec["dim"], window=sec["window"])
    rows = [[kind, *[table[kind][name] for name in specs]] for kind in probes.PROBE_KINDS]
    report.csv["sensitivity"] = write_csv(cfg.output / "sensitivity.csv", ["module", *specs], rows, cfg.digest)
    report.extra["sensitivity"] = table


def _run_covariance(cfg, report):
    sec = cfg.section("covariance")
    res = probes.covariance_probe(sec["samples"], prng.derive_seed(cfg.seed, "covariance"),
                                  dim=sec["dim"], size=sec["size"], window=sec["window"])
    rows = [[name, value] for name, value in res.items()]
    report.csv["covariance"] = write_csv(cfg.output / "covariance.csv", ["features", "ac"], rows, cfg.digest)
    report.extra["covariance"] = res


def _run_train(cfg, report):
    pairs = training_pairs(cfg, hr_clips(cfg, "train"))
    ckpt = train_stage1(pairs, cfg.model_config(), cfg.train_config())
    ckpt.config["experiment_digest"] = cfg.digest
    path = cfg.output / "model.rvfc"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(path, ckpt)
    rows = [[i, v] for i, v in enumerate(ckpt.loss_trace)]
    report.csv["loss"] = write_csv(cfg.output / "loss.csv", ["step", "loss"], rows, cfg.digest)
    report.extra["checkpoint"] = str(path)


def frame_digest(frame) -> str:
    return hashlib.sha256(corpus.quantize(frame).tobytes()).hexdigest()


def _run_infer(cfg, report):
    sec = cfg.section("infer")
    model = model_from_checkpoint(load_checkpoint(sec["checkpoint"]))
    frames = corpus.load_frames(sec["input"])
    outs = run_sequence(model, frames)
    corpus.save_frames(outs, cfg.output / "frames")
    rows = [[t, frame_digest(o)] for t, o in enumerate(outs)]
    report.csv["frames"] = write_csv(cfg.output / "frames.csv", ["frame", "sha256"], rows, cfg.digest)


def _run_ablation(cfg, report):
    sec = cfg.section("ablation")
    train_pairs = training_pairs(cfg, hr_clips(cfg, "train"))
    eval_hr = hr_clips(cfg, "eval", sec["eval_clips"])
    evals = {split: split_pairs(cfg, eval_hr, split) for split in sec["splits"]}
    rows, ac_rows = [], []
    for name in sec["variants"]:
        fusion, block = ABLATION_VARIANTS[name]
        t0 = time.perf_counter()
        ckpt = train_stage1(train_pairs, cfg.model_config(fusion=fusion, block_kind=block), cfg.train_config())
        model = model_from_checkpoint(ckpt)
        report.durations[f"train:{name}"] = time.perf_counter() - t0
        hidden = []
        for split, pairs in evals.items():
            scores = {"psnr": [], "ssim": []}
            for lr, hr in pairs:
                outs, hs = run_sequence(model, lr, return_hidden=True)
                hidden.extend(hs)
                scores["psnr"] += [psnr(h, o) for h, o in zip(hr, outs)]
                scores["ssim"] += [ssim(h, o) for h, o in zip(hr, outs)]
            rows.append([name, split, float(np.mean(scores["psnr"])), float(np.mean(scores["ssim"]))])
        ac_rows.append([name, ac_indicator(hidden), float(np.mean(ckpt.loss_trace[-10:]))])
    report.csv["ablation"] = write_csv(cfg.output / "ablation.csv", ["variant", "split", "psnr", "ssim"],
                                       rows, cfg.digest)
    report.csv["hidden_ac"] = write_csv(cfg.output / "hidden_ac.csv", ["variant", "ac", "final_loss"],
                                        ac_rows, cfg.digest)


RUNNERS = {"sensitivity": _run_sensitivity, "covariance": _run_covariance, "train": _run_train,
           "infer": _run_infer, "ablation": _run_ablation}


def run_experiment(cfg: ExperimentConfig) -> RunReport:
    """Dispatch on ``cfg.kind``; writes CSVs and ``report.json`` under ``cfg.output``."""
    source = cfg.section("data")["source"]
    if source != "synthetic":
        cfg.corpus_digest = corpus_digest(load_clips(source))
    if cfg.kind == "infer":
        ckpt_path = Path(cfg.section("infer")["checkpoint"])
        if not ckpt_path.is_file():
            raise FileNotFoundError(f"checkpoint not found: {ckpt_path}")
        frames_digest = corpus_digest([corpus.load_frames(cfg.section("infer")["input"])])
        cfg.corpus_digest = frames_digest + hashlib.sha256(ckpt_path.read_bytes()).hexdigest()[:16]
    report = RunReport(cfg.to_dict(), cfg.digest)
    cfg.output.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    RUNNERS[cfg.kind](cfg, report)
    report.durations["total"] = time.perf_counter() - t0
    (cfg.output / "report.json").write_text(report.to_json())
    return report
