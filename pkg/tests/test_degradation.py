import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from rvf.corpus import synthetic_clip
from rvf.degradation import (BLUR_RANGE, JPEG_RANGE, NOISE_RANGE, DegradationError, DegradationSpec,
                             add_gaussian_noise, apply_spec, degrade_sequence, gaussian_blur,
                             gaussian_kernel, jpeg_like_compress, random_pipeline, resize_bicubic,
                             sample_pipeline)
from rvf.diagnostics import psnr, radial_power_spectrum


def _img(seed, shape=(3, 32, 32)):
    return np.random.default_rng(seed).random(shape)


# --------------------------------------------------------------------------
# blur
# --------------------------------------------------------------------------
def test_blur_preserves_constants():
    img = np.full((3, 20, 17), 0.42)
    np.testing.assert_allclose(gaussian_blur(img, 1.7), img, atol=1e-6)


def test_blur_impulse_response_is_kernel():
    sigma = 1.3
    k = gaussian_kernel(sigma)
    r = k.size // 2
    img = np.zeros((25, 25))
    img[12, 12] = 1.0
    out = gaussian_blur(img, sigma)
    np.testing.assert_allclose(out[12 - r:13 + r, 12 - r:13 + r], np.outer(k, k), atol=1e-15)


def test_blur_matches_direct_convolution():
    img = _img(1, (14, 15))
    np.testing.assert_allclose(gaussian_blur(img, 1.2), oracles.gaussian_blur_direct(img, 1.2), atol=1e-5)


@given(st.floats(0.0, 10.0))
def test_blur_kernel_sums_to_one(sigma):
    assert abs(gaussian_kernel(sigma).sum() - 1.0) < 1e-7


def test_blur_rejects_negative_sigma():
    with pytest.raises(DegradationError):
        gaussian_blur(_img(0), -1.0)


# --------------------------------------------------------------------------
# noise
# --------------------------------------------------------------------------
def test_zero_noise_is_identity():
    img = _img(2)
    np.testing.assert_array_equal(add_gaussian_noise(img, 0.0, 5), img)


def test_noise_is_seed_deterministic():
    img = _img(2)
    a, b = add_gaussian_noise(img, 0.05, 99), add_gaussian_noise(img, 0.05, 99)
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != add_gaussian_noise(img, 0.05, 100).tobytes()


def test_noise_std_on_mid_gray():
    img = np.full((256, 256), 0.5)
    std = (add_gaussian_noise(img, 0.1, 7) - img).std()
    assert 0.098 <= std <= 0.102


# --------------------------------------------------------------------------
# JPEG-like compression
# --------------------------------------------------------------------------
def test_jpeg_preserves_constants():
    img = np.full((3, 24, 24), 100 / 255)
    np.testing.assert_allclose(jpeg_like_compress(img, 30), img, atol=1.5 / 255)


def test_jpeg_high_quality_roundtrip():
    img = _img(3, (3, 64, 64))
    assert psnr(img, jpeg_like_compress(img, 100)) > 45.0


def test_jpeg_low_quality_removes_high_frequencies():
    img = _img(4, (3, 64, 64))
    bins = 16
    before = radial_power_spectrum(img, bins).power
    after = radial_power_spectrum(jpeg_like_compress(img, 10), bins).power
    high = slice(bins // 2, bins)
    assert after[high].sum() < before[high].sum()


def test_jpeg_is_nearly_idempotent():
    for seed in range(3):
        for frame in synthetic_clip(seed, frames=2):
            once = jpeg_like_compress(frame, 50)
            twice = jpeg_like_compress(once, 50)
            assert abs(psnr(frame, once) - psnr(frame, twice)) < 1.0


def test_jpeg_handles_ragged_and_gray_inputs():
    assert jpeg_like_compress(_img(5, (3, 13, 21)), 40).shape == (3, 13, 21)
    assert jpeg_like_compress(_img(5, (13, 21)), 40).shape == (13, 21)


@pytest.mark.parametrize("q", [0, 101])
def test_jpeg_rejects_bad_quality(q):
    with pytest.raises(DegradationError):
        jpeg_like_compress(_img(0), q)


# --------------------------------------------------------------------------
# resize
# --------------------------------------------------------------------------
def test_resize_factor_one_is_identity():
    img = _img(6)
    np.testing.assert_allclose(resize_bicubic(img, 1.0), img, atol=1e-12)


def test_resize_reproduces_ramps():
    ramp = np.tile(np.arange(32, dtype=np.float64), (16, 1))
    out = resize_bicubic(ramp, 0.5)
    inner = out[:, 2:-2]
    np.testing.assert_allclose(np.diff(inner, axis=1), 2.0, atol=1e-9)


@pytest.mark.parametrize("factor", [0.25, 0.5, 2.0, 4.0])
def test_resize_matches_reference_resampler(factor):
    img = _img(7, (12, 10))
    np.testing.assert_allclose(resize_bicubic(img, factor), oracles.resize_bicubic(img, factor), atol=1e-4)


def test_resize_rejects_bad_factor():
    with pytest.raises(DegradationError):
        resize_bicubic(_img(0), 0.0)


# --------------------------------------------------------------------------
# specs and the random pipeline
# --------------------------------------------------------------------------
def test_pipeline_is_deterministic():
    img = _img(8, (3, 32, 32))
    a, spec_a = random_pipeline(img, 123)
    b, spec_b = random_pipeline(img, 123)
    assert spec_a.to_dict() == spec_b.to_dict()
    assert a.tobytes() == b.tobytes()


def test_sampler_covers_declared_ranges():
    draws = [sample_pipeline(seed).params["stages"] for seed in range(1000)]
    blur = [d[0].params["sigma"] for d in draws]
    noise = [d[1].params["sigma"] for d in draws]
    quality = [d[2].params["quality"] for d in draws]
    for values, (lo, hi) in ((blur, BLUR_RANGE), (noise, NOISE_RANGE)):
        span = hi - lo
        assert lo <= min(values) < lo + 0.01 * span
        assert hi - 0.01 * span < max(values) <= hi
    assert min(quality) == JPEG_RANGE[0] and max(quality) == JPEG_RANGE[1]


def test_degradation_strictly_perturbs():
    hr = synthetic_clip(3, frames=1)[0]
    clean = resize_bicubic(hr, 0.25)
    degraded, _ = random_pipeline(hr, 5)
    value = psnr(clean, degraded)
    assert np.isfinite(value) and value < psnr(clean, clean)


def test_spec_roundtrips_through_dict():
    spec = sample_pipeline(17)
    assert DegradationSpec.from_dict(spec.to_dict()).to_dict() == spec.to_dict()
    with pytest.raises(DegradationError):
        DegradationSpec("smear", {})


def test_sequence_jitter_stays_in_range():
    frames = synthetic_clip(1, frames=15)
    for seed in range(30):
        _, specs = degrade_sequence(frames[:1], seed, quality_jitter=10)
        q = specs[0].params["stages"][2].params["quality"]
        assert JPEG_RANGE[0] <= q <= JPEG_RANGE[1]
    out, specs = degrade_sequence(frames, 4)
    assert len(out) == 15 and out[0].shape == (3, 16, 16)
    noise_seeds = {s.params["stages"][1].seed for s in specs}
    assert len(noise_seeds) == 15


_SPECS = st.one_of(
    st.builds(lambda s: DegradationSpec("blur", {"sigma": s}), st.floats(0.0, 4.0)),
    st.builds(lambda s, seed: DegradationSpec("noise", {"sigma": s}, seed), st.floats(0.0, 0.5),
              st.integers(0, 2 ** 32)),
    st.builds(lambda q: DegradationSpec("jpeg", {"quality": q}), st.integers(1, 100)),
    st.builds(lambda f: DegradationSpec("resize", {"factor": f}), st.sampled_from([0.25, 0.5, 2.0])),
    st.builds(lambda seed: sample_pipeline(seed), st.integers(0, 2 ** 32)),
)


@given(_SPECS, st.integers(0, 2 ** 31))
def test_degradations_stay_in_unit_range_and_are_deterministic(spec, seed):
    img = _img(seed % 1000, (3, 16, 16))
    out = apply_spec(img, spec)
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert out.tobytes() == apply_spec(img, spec).tobytes()
