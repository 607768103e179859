"""Augmentation ops: draw-for-draw oracles and spec validation."""
import numpy as np
import pytest
from hypothesis import given, strategies as st

from corruptbench.augment import (
    LUMA_WEIGHTS,
    AugmentKind,
    AugmentationSpec,
    apply_augmentation,
    augment_from_call,
    augment_to_call,
    color_jitter,
    horizontal_flip,
    random_crop,
    random_grayscale,
    resize_bilinear,
)
from corruptbench.errors import ConfigError
from corruptbench.rngs import make_rng


def rand_img(rng, h=8, w=8, c=3):
    return rng.integers(0, 256, size=(h, w, c), dtype=np.uint8)


# ---------------------------------------------------------------------------
# spec validation and call-form parsing


def test_each_kind_requires_its_fields():
    with pytest.raises(ConfigError):
        AugmentationSpec(kind=AugmentKind.CROP)
    with pytest.raises(ConfigError):
        AugmentationSpec(kind=AugmentKind.HFLIP)
    with pytest.raises(ConfigError):
        AugmentationSpec(kind=AugmentKind.COLOR_JITTER, prob=0.5)
    with pytest.raises(ConfigError):
        AugmentationSpec(kind=AugmentKind.GRAYSCALE)
    with pytest.raises(ConfigError):
        AugmentationSpec(kind=AugmentKind.RESIZE)


def test_foreign_fields_are_rejected():
    with pytest.raises(ConfigError):
        AugmentationSpec(kind=AugmentKind.CROP, padding=2, prob=0.5)
    with pytest.raises(ConfigError):
        AugmentationSpec(kind=AugmentKind.HFLIP, prob=0.5, target=16)


def test_value_range_checks():
    with pytest.raises(ConfigError):
        AugmentationSpec(kind=AugmentKind.CROP, padding=-1)
    with pytest.raises(ConfigError):
        AugmentationSpec(kind=AugmentKind.HFLIP, prob=1.5)
    with pytest.raises(ConfigError):
        AugmentationSpec(kind=AugmentKind.COLOR_JITTER, prob=0.5, strength=-0.1)
    with pytest.raises(ConfigError):
        AugmentationSpec(kind=AugmentKind.RESIZE, target=0)


def test_call_form_defaults():
    assert augment_from_call("hflip", {}).prob == 0.5
    jitter = augment_from_call("color_jitter", {})
    assert (jitter.strength, jitter.prob) == (0.4, 0.8)
    assert augment_from_call("grayscale", {}).prob == 0.2
    # crop has no default padding on purpose
    with pytest.raises(ConfigError):
        augment_from_call("crop", {})
    assert augment_from_call("crop", {"padding": 3}).padding == 3


def test_call_form_rejects_unknowns():
    with pytest.raises(ConfigError):
        augment_from_call("rotate", {"deg": 90})
    with pytest.raises(ConfigError):
        augment_from_call("hflip", {"padding": 2})


def test_call_form_roundtrip():
    specs = [
        AugmentationSpec(kind=AugmentKind.CROP, padding=4),
        AugmentationSpec(kind=AugmentKind.HFLIP, prob=0.25),
        AugmentationSpec(kind=AugmentKind.COLOR_JITTER, strength=0.4, prob=0.8),
        AugmentationSpec(kind=AugmentKind.GRAYSCALE, prob=0.2),
        AugmentationSpec(kind=AugmentKind.RESIZE, target=16),
    ]
    for spec in specs:
        text = augment_to_call(spec)
        name, _, body = text.partition("(")
        kwargs = {}
        for part in body.rstrip(")").split(","):
            if part.strip():
                key, _, value = part.partition("=")
                kwargs[key.strip()] = float(value) if "." in value else int(value)
        assert augment_from_call(name, kwargs) == spec


# ---------------------------------------------------------------------------
# random crop


def test_crop_matches_manual_pad_and_slice(rng):
    img = rand_img(rng)
    for seed in range(8):
        out = random_crop(img, 2, make_rng([seed]))
        probe = make_rng([seed])
        top = int(probe.integers(0, 5))
        left = int(probe.integers(0, 5))
        padded = np.pad(img, ((2, 2), (2, 2), (0, 0)), mode="reflect")
        assert np.array_equal(out, padded[top : top + 8, left : left + 8])


def test_crop_offsets_cover_the_window(rng):
    img = rand_img(rng)
    seen = set()
    for seed in range(200):
        probe = make_rng([seed])
        seen.add((int(probe.integers(0, 5)), int(probe.integers(0, 5))))
    assert seen == {(t, l) for t in range(5) for l in range(5)}


def test_crop_zero_padding_copies_but_still_draws(rng):
    img = rand_img(rng)
    a, b = make_rng([7]), make_rng([7])
    out = random_crop(img, 0, a)
    assert np.array_equal(out, img) and out.base is None
    # the two offset draws must be consumed even when they cannot matter
    b.integers(0, 1)
    b.integers(0, 1)
    assert a.integers(0, 1000) == b.integers(0, 1000)


def test_crop_padding_too_large(rng):
    with pytest.raises(ConfigError):
        random_crop(rand_img(rng), 8, make_rng([0]))


# ---------------------------------------------------------------------------
# horizontal flip


def test_flip_draw_decides_mirroring(rng):
    img = rand_img(rng)
    for seed in range(12):
        out = horizontal_flip(img, 0.5, make_rng([seed]))
        fired = make_rng([seed]).random() < 0.5
        expect = img[:, ::-1] if fired else img
        assert np.array_equal(out, expect)


def test_flip_prob_extremes(rng):
    img = rand_img(rng)
    assert np.array_equal(horizontal_flip(img, 0.0, make_rng([0])), img)
    assert np.array_equal(horizontal_flip(img, 1.0, make_rng([0])), img[:, ::-1])


def test_double_flip_is_identity(rng):
    img = rand_img(rng)
    once = horizontal_flip(img, 1.0, make_rng([0]))
    assert np.array_equal(horizontal_flip(once, 1.0, make_rng([1])), img)


# ---------------------------------------------------------------------------
# color jitter


def jitter_oracle(img, strength, prob, rng):
    if rng.random() >= prob:
        return img.copy()
    lo, hi = max(0.0, 1.0 - strength), 1.0 + strength
    fb, fc, fs = rng.uniform(lo, hi, size=3)
    x = img.astype(np.float64) * fb
    w = np.asarray(LUMA_WEIGHTS)
    mean_gray = float((x * w).sum(axis=-1, keepdims=True).mean())
    x = mean_gray + (x - mean_gray) * fc
    gray = (x * w).sum(axis=-1, keepdims=True)
    x = gray + (x - gray) * fs
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def test_jitter_matches_blend_oracle(rng):
    img = rand_img(rng)
    for seed in range(10):
        out = color_jitter(img, 0.4, 0.8, make_rng([seed]))
        assert np.array_equal(out, jitter_oracle(img, 0.4, 0.8, make_rng([seed])))


def test_jitter_gate_and_degenerate_strength(rng):
    img = rand_img(rng)
    assert np.array_equal(color_jitter(img, 0.4, 0.0, make_rng([3])), img)
    # prob=1, strength=0 forces all three factors to exactly 1
    assert np.array_equal(color_jitter(img, 0.0, 1.0, make_rng([3])), img)


def test_jitter_brightness_only_scales(rng):
    # saturation/contrast blends are no-ops on a gray image, so the whole op
    # reduces to the brightness factor
    img = np.full((4, 4, 3), 100, dtype=np.uint8)
    for seed in range(5):
        out = color_jitter(img, 0.4, 1.0, make_rng([seed]))
        probe = make_rng([seed])
        probe.random()
        fb = probe.uniform(0.6, 1.4, size=3)[0]
        assert np.array_equal(out, np.full((4, 4, 3), np.clip(np.rint(100 * fb), 0, 255), dtype=np.uint8))


# ---------------------------------------------------------------------------
# grayscale


def test_grayscale_uses_luma_weights(rng):
    img = rand_img(rng)
    out = random_grayscale(img, 1.0, make_rng([0]))
    w = np.asarray(LUMA_WEIGHTS)
    gray = np.clip(
        np.rint((img.astype(np.float64) * w).sum(axis=-1, keepdims=True)), 0, 255
    ).astype(np.uint8)
    assert np.array_equal(out, np.repeat(gray, 3, axis=-1))
    assert (out[..., 0] == out[..., 1]).all() and (out[..., 1] == out[..., 2]).all()


def test_grayscale_gate(rng):
    img = rand_img(rng)
    assert np.array_equal(random_grayscale(img, 0.0, make_rng([5])), img)
    for seed in range(10):
        out = random_grayscale(img, 0.2, make_rng([seed]))
        fired = make_rng([seed]).random() < 0.2
        if fired:
            assert (out[..., 0] == out[..., 1]).all()
        else:
            assert np.array_equal(out, img)


def test_pure_channel_luma_values():
    img = np.zeros((1, 1, 3), dtype=np.uint8)
    expected = {0: 76, 1: 150, 2: 29}  # rint(255 * weight)
    for ch, value in expected.items():
        one = img.copy()
        one[0, 0, ch] = 255
        out = random_grayscale(one, 1.0, make_rng([0]))
        assert int(out[0, 0, 0]) == value


# ---------------------------------------------------------------------------
# resize


def resize_oracle(img, out_h, out_w):
    """Scalar per-pixel bilinear loop with half-pixel centers."""
    h, w, c = img.shape
    src = img.astype(np.float64)
    out = np.empty((out_h, out_w, c), dtype=np.float64)
    for oy in range(out_h):
        sy = (oy + 0.5) * (h / out_h) - 0.5
        y0 = int(np.floor(sy))
        wy = sy - y0
        y0c, y1c = min(max(y0, 0), h - 1), min(max(y0 + 1, 0), h - 1)
        for ox in range(out_w):
            sx = (ox + 0.5) * (w / out_w) - 0.5
            x0 = int(np.floor(sx))
            wx = sx - x0
            x0c, x1c = min(max(x0, 0), w - 1), min(max(x0 + 1, 0), w - 1)
            top = src[y0c, x0c] * (1 - wx) + src[y0c, x1c] * wx
            bot = src[y1c, x0c] * (1 - wx) + src[y1c, x1c] * wx
            out[oy, ox] = top * (1 - wy) + bot * wy
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


@pytest.mark.parametrize("shape", [(8, 8), (8, 6), (5, 9)])
@pytest.mark.parametrize("target", [(4, 4), (8, 8), (11, 7), (16, 16)])
def test_resize_matches_scalar_oracle(rng, shape, target):
    img = rand_img(rng, *shape)
    assert np.array_equal(resize_bilinear(img, *target), resize_oracle(img, *target))


def test_resize_same_size_is_identity(rng):
    img = rand_img(rng, 7, 5)
    out = resize_bilinear(img, 7, 5)
    assert np.array_equal(out, img)


def test_resize_constant_stays_constant(rng):
    img = np.full((4, 4, 3), 77, dtype=np.uint8)
    assert (resize_bilinear(img, 13, 9) == 77).all()


def test_resize_is_deterministic(rng):
    img = rand_img(rng)
    a = resize_bilinear(img, 16, 16)
    b = resize_bilinear(img, 16, 16)
    assert np.array_equal(a, b)


def test_resize_validation(rng):
    with pytest.raises(ConfigError):
        resize_bilinear(rand_img(rng), 0, 4)


@given(st.integers(min_value=1, max_value=24), st.integers(min_value=1, max_value=24))
def test_resize_output_shape(out_h, out_w):
    img = np.random.default_rng(0).integers(0, 256, size=(6, 10, 3), dtype=np.uint8)
    assert resize_bilinear(img, out_h, out_w).shape == (out_h, out_w, 3)


# ---------------------------------------------------------------------------
# dispatch


def test_apply_augmentation_routes_by_kind(rng):
    img = rand_img(rng)
    cases = [
        (
            AugmentationSpec(kind=AugmentKind.CROP, padding=2),
            lambda im, r: random_crop(im, 2, r),
        ),
        (
            AugmentationSpec(kind=AugmentKind.HFLIP, prob=0.7),
            lambda im, r: horizontal_flip(im, 0.7, r),
        ),
        (
            AugmentationSpec(kind=AugmentKind.COLOR_JITTER, strength=0.4, prob=0.8),
            lambda im, r: color_jitter(im, 0.4, 0.8, r),
        ),
        (
            AugmentationSpec(kind=AugmentKind.GRAYSCALE, prob=0.9),
            lambda im, r: random_grayscale(im, 0.9, r),
        ),
        (
            AugmentationSpec(kind=AugmentKind.RESIZE, target=12),
            lambda im, r: resize_bilinear(im, 12, 12),
        ),
    ]
    for seed, (spec, direct) in enumerate(cases):
        assert np.array_equal(
            apply_augmentation(img, spec, make_rng([seed])),
            direct(img, make_rng([seed])),
        )
