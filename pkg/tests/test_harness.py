import csv
import json

import numpy as np
import pytest

from rvf import corpus, harness
from rvf.errors import ConfigError


def ini(kind, output, extra=""):
    return f"[experiment]\nkind = {kind}\nseed = 3\noutput = {output}\n{extra}"


TINY_MODEL = "[model]\nchannels = 4, 8\nblocks = 1, 1\nheads = 1, 2\nsqueeze_ratio = 2\n"
TINY_DATA = "[data]\nclips = 1\nframes = 2\nsize = 32\n"


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# --------------------------------------------------------------------------
# parsing
# --------------------------------------------------------------------------
@pytest.mark.parametrize("text, needle", [
    ("[experiment]\nkind = train\nseed = 1\n[model]\nwidth = 3\n", "model.width"),
    ("[experiment]\nkind = train\nseed = 1\n[optics]\nzoom = 2\n", "[optics]"),
    ("[experiment]\nkind = train\nseed = 1\n[train]\nsteps = many\n", "train.steps"),
    ("[experiment]\nkind = dance\nseed = 1\n", "experiment.kind"),
    ("[experiment]\nkind = train\n", "experiment.seed"),
    ("[experiment]\nkind = train\nseed = 1\n[train]\nlr = 0\n", "train.steps must be >= 0 and lr"),
    ("[experiment]\nkind = train\nseed = 1\n[model]\nfusion = sum\n", "model.fusion"),
    ("[experiment]\nkind = ablation\nseed = 1\n[ablation]\nvariants = best\n", "ablation.variants"),
])
def test_config_errors_name_the_key(text, needle):
    with pytest.raises(ConfigError, match=needle.replace("[", r"\[").replace("]", r"\]")):
        harness.parse_config(text)


def test_defaults_and_typed_values():
    cfg = harness.parse_config(ini("train", "out", "[train]\nlr = 0.01\n[model]\nchannels = 8, 16, 32\n"))
    assert cfg.section("train")["lr"] == 0.01 and cfg.section("train")["steps"] == 500
    assert cfg.section("model")["channels"] == [8, 16, 32]


def test_overrides_are_parsed_and_checked():
    cfg = harness.parse_config(ini("train", "out"), {"train.steps": "7", "experiment.seed": 9})
    assert cfg.section("train")["steps"] == 7 and cfg.seed == 9
    with pytest.raises(ConfigError, match="train.stride"):
        harness.parse_config(ini("train", "out"), {"train.stride": "2"})


def test_digest_ignores_output_and_tracks_seed():
    a = harness.parse_config(ini("train", "a"))
    b = harness.parse_config(ini("train", "b"))
    c = harness.parse_config(ini("train", "a"), {"experiment.seed": 4})
    assert a.digest == b.digest != c.digest
    assert len(a.digest) == 16


def test_missing_config_file_is_io_error(tmp_path):
    with pytest.raises(OSError):
        harness.load_config(tmp_path / "nope.ini")


# --------------------------------------------------------------------------
# presets
# --------------------------------------------------------------------------
def test_sensitivity_identity_gives_all_ones(tmp_path):
    text = ini("sensitivity", tmp_path, "[sensitivity]\nclips = 2\nsize = 32\ndegradations = identity\n")
    report = harness.run_experiment(harness.parse_config(text))
    rows = read_csv(report.csv["sensitivity"])
    assert rows[0] == ["config_digest", "module", "identity"]
    assert {r[1] for r in rows[1:]} == {"spatial", "channel"}
    assert all(float(r[2]) == 1.0 and r[0] == report.digest for r in rows[1:])
    assert json.loads((tmp_path / "report.json").read_text())["digest"] == report.digest


def test_sensitivity_rerun_is_byte_identical(tmp_path):
    text = "[sensitivity]\nclips = 2\nsize = 32\n"
    paths = [harness.run_experiment(harness.parse_config(ini("sensitivity", tmp_path / d, text)))
             .csv["sensitivity"] for d in "ab"]
    data = [open(p, "rb").read() for p in paths]
    assert data[0] == data[1]
    assert read_csv(paths[0])[0][2:] == ["blur", "noise", "compression"]


def test_covariance_preset(tmp_path):
    text = ini("covariance", tmp_path, "[covariance]\nsamples = 10\nsize = 16\ndim = 8\n")
    report = harness.run_experiment(harness.parse_config(text))
    rows = read_csv(report.csv["covariance"])
    assert [r[1] for r in rows[1:]] == ["input", "spatial", "channel"]


def test_train_then_infer(tmp_path):
    train = harness.parse_config(ini("train", tmp_path / "t", TINY_MODEL + TINY_DATA + "[train]\nsteps = 3\n"))
    rep = harness.run_experiment(train)
    loss = read_csv(rep.csv["loss"])
    assert len(loss) == 4 and all(r[0] == rep.digest for r in loss[1:])
    lr_dir = tmp_path / "lr"
    corpus.save_frames([f[:, :8, :8] for f in corpus.synthetic_clip(1, frames=2, height=8, width=8)], lr_dir)
    infer_text = ini("infer", tmp_path / "i", f"[infer]\ncheckpoint = {rep.extra['checkpoint']}\ninput = {lr_dir}\n")
    out = [harness.run_experiment(harness.parse_config(infer_text)) for _ in range(2)]
    frames = read_csv(out[0].csv["frames"])
    assert len(frames) == 3 and len(frames[1][2]) == 64
    assert open(out[0].csv["frames"], "rb").read() == open(out[1].csv["frames"], "rb").read()
    assert corpus.load_frames(tmp_path / "i" / "frames")[0].shape == (3, 32, 32)


def test_missing_checkpoint_is_io_error(tmp_path):
    text = ini("infer", tmp_path, f"[infer]\ncheckpoint = {tmp_path / 'none.rvfc'}\ninput = {tmp_path}\n")
    with pytest.raises(OSError, match="checkpoint"):
        harness.run_experiment(harness.parse_config(text))


def test_missing_corpus_is_io_error(tmp_path):
    text = ini("train", tmp_path, f"[data]\nsource = {tmp_path / 'absent'}\n")
    with pytest.raises(OSError):
        harness.run_experiment(harness.parse_config(text))


def test_corpus_digest_tracks_content():
    clip = corpus.synthetic_clip(0, frames=2, height=8, width=8)
    other = [clip[0], np.clip(clip[1] + 0.01, 0, 1)]
    assert harness.corpus_digest([clip]) == harness.corpus_digest([clip])
    assert harness.corpus_digest([clip]) != harness.corpus_digest([other])


def test_ablation_preset_writes_both_tables(tmp_path):
    text = ini("ablation", tmp_path, TINY_MODEL + TINY_DATA +
               "[train]\nsteps = 2\n[ablation]\nvariants = caf-channel, caf-ica\nsplits = noise, clean\n"
               "eval_clips = 1\n")
    report = harness.run_experiment(harness.parse_config(text))
    rows = read_csv(report.csv["ablation"])
    assert [(r[1], r[2]) for r in rows[1:]] == [("caf-channel", "noise"), ("caf-channel", "clean"),
                                               ("caf-ica", "noise"), ("caf-ica", "clean")]
    ac = read_csv(report.csv["hidden_ac"])
    assert [r[1] for r in ac[1:]] == ["caf-channel", "caf-ica"]
    assert all(float(r[2]) >= 0 for r in ac[1:])


@pytest.mark.slow
def test_caf_dominates_concat_on_ssim(tmp_path):
    """Default ablation preset: CAF with channel attention vs the concat channel-attention row."""
    text = ini("ablation", tmp_path, "[ablation]\nvariants = ch-baseline, caf-channel\n"
                                     "splits = noise, compression\n")
    text = text.replace("seed = 3", "seed = 0")
    rows = read_csv(harness.run_experiment(harness.parse_config(text)).csv["ablation"])
    ssim = {(r[1], r[2]): float(r[4]) for r in rows[1:]}
    for split in ("noise", "compression"):
        assert ssim[("caf-channel", split)] > ssim[("ch-baseline", split)], split
