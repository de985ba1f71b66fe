import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

import oracles
from rvf import prng
from rvf.diagnostics import (SSIM_K1, MetricError, ac_indicator, charbonnier, compute_metrics,
                             cosine_similarity, covariance_matrix, psnr, radial_power_spectrum, ssim,
                             to_gray)


def _rand(shape, seed=0):
    return np.random.default_rng(seed).random(shape)


# --------------------------------------------------------------------------
# covariance and ac
# --------------------------------------------------------------------------
def test_covariance_of_identical_samples_is_zero():
    s = _rand((3, 4, 4))
    np.testing.assert_array_equal(covariance_matrix([s, s, s]), np.zeros((3, 3)))


def test_covariance_duplicated_channel():
    base = [_rand((1, 3, 3), i) for i in range(6)]
    cov = covariance_matrix([np.concatenate([b, b]) for b in base])
    assert cov[0, 1] == cov[1, 0] == cov[0, 0] == cov[1, 1]


def test_covariance_matches_double_loop():
    samples = [_rand((3, 2, 2), i) for i in range(5)]
    np.testing.assert_allclose(covariance_matrix(samples), oracles.covariance(samples), atol=1e-6)


def test_covariance_needs_two_samples():
    with pytest.raises(MetricError):
        covariance_matrix([_rand((2, 2, 2))])


def test_ac_examples():
    s = _rand((3, 4, 4))
    assert ac_indicator([s, s]) == 0.0
    base = [_rand((1, 4, 4), i) for i in range(8)]
    scale = 1.0 / math.sqrt(covariance_matrix(base)[0, 0])
    dup = [np.concatenate([b, b]) * scale for b in base]
    assert abs(ac_indicator(dup) - 1.0) < 1e-12
    with pytest.raises(MetricError):
        ac_indicator(base)


def test_ac_normalized_is_correlation():
    base = [_rand((1, 4, 4), i) for i in range(8)]
    dup = [np.concatenate([b, 3 * b]) for b in base]
    assert abs(ac_indicator(dup, normalized=True) - 1.0) < 1e-12


@given(st.integers(0, 2 ** 31), st.permutations(range(4)), st.permutations(range(6)))
def test_ac_permutation_invariance(seed, chan_perm, sample_perm):
    samples = [_rand((4, 3, 3), seed + i) for i in range(6)]
    ref = ac_indicator(samples)
    shuffled = [samples[i][list(chan_perm)] for i in sample_perm]
    assert abs(ac_indicator(shuffled) - ref) < 1e-12


# --------------------------------------------------------------------------
# cosine
# --------------------------------------------------------------------------
def test_cosine_examples():
    v = _rand(10)
    assert cosine_similarity(v, v) == 1.0
    assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == 0.0
    assert cosine_similarity(np.zeros(3), v[:3]) == 0.0


def test_cosine_matches_extended_precision():
    a, b = np.random.default_rng(1).standard_normal((2, 200))
    dot = math.fsum(x * y for x, y in zip(a, b))
    ref = dot / math.sqrt(math.fsum(x * x for x in a)) / math.sqrt(math.fsum(y * y for y in b))
    assert abs(cosine_similarity(a, b) - ref) < 1e-7


vectors = hnp.arrays(np.float64, st.integers(1, 20), elements=st.floats(-1e6, 1e6, width=64))


@given(vectors, st.data(), st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_cosine_bounded_and_scale_invariant(a, data, s1, s2):
    b = data.draw(hnp.arrays(np.float64, a.shape, elements=st.floats(-1e6, 1e6, width=64)))
    c = cosine_similarity(a, b)
    assert -1.0 <= c <= 1.0
    if np.linalg.norm(a) > 1e-100 and np.linalg.norm(b) > 1e-100:
        assert abs(cosine_similarity(a * s1, b * s2) - c) < 1e-9


# --------------------------------------------------------------------------
# PSNR, SSIM, Charbonnier
# --------------------------------------------------------------------------
def test_psnr_closed_forms():
    x = _rand((3, 8, 8))
    assert psnr(x, x) == float("inf")
    assert abs(psnr(np.zeros((4, 4)), np.ones((4, 4))) - 0.0) < 1e-4
    diff = np.full((3, 8, 8), 0.5)
    assert abs(psnr(diff, diff + 1 / 255) - 20 * math.log10(255)) < 1e-4
    assert abs(20 * math.log10(255) - 48.1308) < 1e-4


@given(st.integers(0, 2 ** 31))
def test_psnr_and_ssim_symmetric(seed):
    a, b = _rand((3, 16, 16), seed), _rand((3, 16, 16), seed + 1)
    assert psnr(a, b) == psnr(b, a)
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-12


def test_ssim_examples():
    x = _rand((3, 32, 32))
    assert abs(ssim(x, x) - 1.0) < 1e-6
    c1 = SSIM_K1 ** 2
    assert abs(ssim(np.zeros((16, 16)), np.ones((16, 16))) - c1 / (1 + c1)) < 1e-12


def test_ssim_matches_skimage():
    skm = pytest.importorskip("skimage.metrics")
    for seed in range(3):
        a = _rand((40, 48), seed)
        b = np.clip(a + 0.1 * np.random.default_rng(seed + 9).standard_normal(a.shape), 0, 1)
        ref = skm.structural_similarity(a, b, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                        use_sample_covariance=False)
        assert abs(ssim(a, b) - ref) < 1e-4


def test_ssim_uses_luma_for_color():
    a, b = _rand((3, 20, 20)), _rand((3, 20, 20), 1)
    assert ssim(a, b) == ssim(to_gray(a), to_gray(b))


def test_charbonnier_examples():
    x = _rand((3, 5, 5))
    assert charbonnier(x, x) == 1e-3
    assert abs(charbonnier(np.zeros(4), np.ones(4)) - math.sqrt(1 + 1e-6)) < 1e-15
    with pytest.raises(MetricError):
        charbonnier(x, x, eps=0.0)


def test_charbonnier_matches_scalar_loop():
    a, b = _rand(50, 1), _rand(50, 2)
    ref = math.fsum(math.sqrt((y - x) ** 2 + 1e-6) for x, y in zip(a, b)) / 50
    assert abs(charbonnier(a, b) - ref) < 1e-7


def test_metric_shape_mismatch():
    with pytest.raises(MetricError):
        psnr(np.zeros(3), np.zeros(4))


# --------------------------------------------------------------------------
# radial power spectrum
# --------------------------------------------------------------------------
def test_rps_constant_image():
    spec = radial_power_spectrum(np.full((32, 32), 0.3), bins=8)
    assert spec.power[0] > 0
    assert np.abs(spec.power[1:]).max() < 1e-9


def test_rps_sinusoid_has_one_dominant_bin():
    n, k, bins = 64, 10, 16
    x = np.arange(n)
    img = np.tile(np.cos(2 * np.pi * k * x / n), (n, 1))
    spec = radial_power_spectrum(img, bins)
    target = int((k / n) / (0.5 / bins))
    assert spec.power.argmax() == target
    others = np.delete(spec.power, target)
    assert others.max() < 1e-9 * spec.power[target]


def test_rps_white_noise_is_flat():
    bins = 16
    powers = [radial_power_spectrum(prng.normal(prng.derive_seed(5, i), (128, 128)), bins).power
              for i in range(20)]
    mean = np.mean(powers, axis=0)
    assert np.abs(mean / mean.mean() - 1).max() < 0.10


def test_rps_matches_direct_dft():
    img = _rand((8, 8), 3)
    bins = 4
    full = oracles.dft2_power(img)
    sums, counts = np.zeros(bins), np.zeros(bins)
    for u in range(8):
        for v in range(8):
            fu = u / 8 if u < 4 else u / 8 - 1
            fv = v / 8 if v < 4 else v / 8 - 1
            b = min(int(math.hypot(fu, fv) / (0.5 / bins)), bins - 1)
            sums[b] += full[u, v]
            counts[b] += 1
    spec = radial_power_spectrum(img, bins)
    np.testing.assert_array_equal(spec.counts, counts)
    np.testing.assert_allclose(spec.power, sums / counts, rtol=1e-10)


@given(st.integers(0, 2 ** 31), st.integers(4, 40), st.integers(4, 40), st.integers(2, 32))
def test_rps_parseval(seed, h, w, bins):
    img = _rand((h, w), seed)
    spec = radial_power_spectrum(img, bins)
    total = (spec.power * spec.counts).sum()
    assert abs(total - h * w * (img ** 2).sum()) <= 1e-6 * total


def test_rps_needs_two_bins():
    with pytest.raises(MetricError):
        radial_power_spectrum(np.zeros((4, 4)), 1)


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------
def test_report_means_are_arithmetic_means():
    refs = [_rand((3, 16, 16), i) for i in range(4)]
    outs = [np.clip(r + 0.05, 0, 1) for r in refs]
    rep = compute_metrics(refs, outs, ["psnr", "ssim", "charbonnier"])
    for name, values in rep.per_frame.items():
        assert rep.means[name] == float(np.mean(values))
    rows = list(rep.rows(["a", "b", "c", "d"]))
    assert len(rows) == 12 and rows[0][:2] == ("a", "psnr")
    with pytest.raises(MetricError):
        compute_metrics(refs, outs, ["lpips"])
    with pytest.raises(MetricError):
        compute_metrics(refs, outs[:2], ["psnr"])


def test_cosine_is_thread_count_independent():
    threadpoolctl = pytest.importorskip("threadpoolctl")
    a, b = np.random.default_rng(2).standard_normal((2, 300_001))
    values = []
    for n in (1, 4):
        with threadpoolctl.threadpool_limits(n):
            values.append(cosine_similarity(a, b))
    assert values[0] == values[1]
