import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from restoreib.degrade import (
    DegradationSpec,
    PairedDataset,
    SpecError,
    apply_haze,
    apply_noise,
    apply_rain,
    apply_rain_haze,
    autocorrelation_length,
    degrade,
    depth_map,
    gen_backgrounds,
    histogram_entropy,
    make_dataset,
    random_crop,
    sample_streaks,
)
from restoreib.imageio import NetpbmError, decode_netpbm, encode_netpbm, load_image, save_image
from restoreib.metrics import psnr


@pytest.fixture(scope="module")
def scene():
    return gen_backgrounds(1, 64, 11)[0]


# backgrounds ---------------------------------------------------------------------


def test_backgrounds_deterministic_and_in_range():
    a, b = gen_backgrounds(4, 32, 5), gen_backgrounds(4, 32, 5)
    for x, y in zip(a, b):
        assert x.tobytes() == y.tobytes()
        assert x.shape == (3, 32, 32) and x.min() >= 0 and x.max() <= 1
    assert a[0].tobytes() != gen_backgrounds(1, 32, 6)[0].tobytes()


def test_backgrounds_have_content():
    for img in gen_backgrounds(20, 64, 0):
        assert histogram_entropy(img, 16) > 1.0


# noise ---------------------------------------------------------------------------


def test_noise_zero_sigma_is_identity(scene):
    np.testing.assert_array_equal(apply_noise(scene, 0.0, 1), scene)


def test_noise_empirical_std():
    y = np.full((3, 64, 64), 0.5)
    x = apply_noise(y, 0.1, 3)
    assert abs((x - y).std() - 0.1) < 0.005


def test_noise_psnr_decreases_with_sigma(scene):
    vals = [psnr(apply_noise(scene, s, 4), scene) for s in (0.02, 0.05, 0.1, 0.2)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


# rain ----------------------------------------------------------------------------


def test_rain_without_streaks_is_identity(scene):
    spec = DegradationSpec(kind="rain", streak_count=0)
    np.testing.assert_array_equal(apply_rain(scene, spec, 1), scene)
    np.testing.assert_array_equal(apply_rain(scene, DegradationSpec(kind="rain", intensity=0.0), 1), scene)


def test_rain_brightens(scene):
    x = apply_rain(scene, DegradationSpec(kind="rain"), 2)
    assert x.mean() >= scene.mean()
    assert (x >= scene).all()


def _coverage_oracle(streaks, h, w, cutoff):
    """Pixel-by-pixel point-to-segment distance test over all streaks."""
    covered = np.zeros((h, w), bool)
    for i in range(h):
        for j in range(w):
            for cy, cx, ang, length in streaks:
                dy, dx = math.sin(ang), math.cos(ang)
                t = min(max((i - cy) * dy + (j - cx) * dx, -length / 2), length / 2)
                if (i - cy - t * dy) ** 2 + (j - cx - t * dx) ** 2 <= cutoff**2:
                    covered[i, j] = True
                    break
    return covered


def test_rain_changed_fraction_matches_independent_rasterizer():
    y = np.full((3, 40, 40), 0.3)
    spec = DegradationSpec(kind="rain", streak_count=12, length=12, thickness=2.0)
    x = apply_rain(y, spec, 9)
    changed = (x != y).any(axis=0)
    covered = _coverage_oracle(sample_streaks(spec, 40, 40, 9), 40, 40, spec.thickness)
    assert abs(changed.mean() - covered.mean()) <= 0.01
    assert covered.mean() > 0.05


# haze ----------------------------------------------------------------------------


def test_haze_zero_beta_is_identity(scene):
    np.testing.assert_array_equal(apply_haze(scene, DegradationSpec(kind="haze", beta=0.0), 1), scene)


def test_haze_dense_limit_is_airlight(scene):
    spec = DegradationSpec(kind="haze", beta=50.0, airlight=(0.7, 0.8, 0.9))
    x = apply_haze(scene, spec, 1, depth=np.ones(scene.shape[1:]))
    assert np.abs(x - np.array([0.7, 0.8, 0.9])[:, None, None]).max() < 1e-6


def test_haze_half_transmission(scene):
    spec = DegradationSpec(kind="haze", beta=1.0, airlight=(0.6, 0.6, 0.6))
    x = apply_haze(scene, spec, 1, depth=np.full(scene.shape[1:], math.log(2)))
    np.testing.assert_allclose(x, 0.5 * scene + 0.5 * 0.6, atol=1e-15)


def test_depth_maps_normalised():
    ramp = depth_map("ramp", 8, 5)
    assert ramp[0, 0] == 1.0 and ramp[-1, 0] == 0.0
    d = depth_map("smooth_noise", 16, 16, 3)
    assert d.min() == pytest.approx(0.0) and d.max() == pytest.approx(1.0)


# rain + haze -----------------------------------------------------------------------


def test_rain_haze_reduces_to_haze(scene):
    spec = DegradationSpec(kind="rain_haze", streak_count=0, beta=1.2)
    np.testing.assert_array_equal(apply_rain_haze(scene, spec, 5), apply_haze(scene, spec, 5))


def test_rain_haze_reduces_to_rain(scene):
    spec = DegradationSpec(kind="rain_haze", beta=0.0)
    np.testing.assert_array_equal(apply_rain_haze(scene, spec, 5), apply_rain(scene, spec, 5))


@settings(max_examples=25, deadline=None)
@given(
    st.sampled_from(["noise", "rain", "haze", "rain_haze"]),
    st.floats(0, 0.5),
    st.floats(0, 1),
    st.floats(0, 4),
    st.integers(0, 30),
    st.integers(0, 1000),
)
def test_outputs_in_unit_range_and_target_untouched(kind, sigma, intensity, beta, count, seed):
    y = gen_backgrounds(1, 16, seed)[0]
    before = y.copy()
    spec = DegradationSpec(kind=kind, sigma=sigma, intensity=intensity, beta=beta, streak_count=count, beta_jitter=0.3)
    x = degrade(y, spec, seed)
    assert x.shape == y.shape and x.min() >= 0 and x.max() <= 1
    np.testing.assert_array_equal(y, before)


def test_abstraction_ordering_by_residual_correlation_length():
    lengths = {}
    ys = gen_backgrounds(6, 64, 21)
    specs = {
        "noise": DegradationSpec(kind="noise", sigma=0.1),
        "rain": DegradationSpec(kind="rain"),
        "haze": DegradationSpec(kind="haze"),
    }
    for name, spec in specs.items():
        lengths[name] = np.median([autocorrelation_length(degrade(y, spec, i) - y) for i, y in enumerate(ys)])
    assert lengths["noise"] < lengths["rain"] < lengths["haze"]


# specs ---------------------------------------------------------------------------


def test_spec_rejects_unknown_field_by_name():
    with pytest.raises(SpecError) as err:
        DegradationSpec.from_dict({"kind": "rain", "streaks": 3})
    assert err.value.field == "streaks"


@pytest.mark.parametrize("field,value", [("sigma", -1.0), ("intensity", 1.5), ("beta", -0.1), ("kind", "snow"), ("airlight", (2, 0, 0))])
def test_spec_rejects_bad_values(field, value):
    with pytest.raises(SpecError) as err:
        DegradationSpec(**{field: value})
    assert err.value.field == field


def test_spec_round_trip():
    spec = DegradationSpec(kind="rain_haze", beta_jitter=0.2, airlight=(0.1, 0.2, 0.3))
    assert DegradationSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec


# datasets ------------------------------------------------------------------------


def test_dataset_split_and_partition():
    ds = make_dataset(DegradationSpec(kind="noise"), 10, 16, 0)
    assert len(ds.train) == 8 and len(ds.test) == 2
    assert set(ds.train_ids).isdisjoint(ds.test_ids)
    assert sorted(ds.train_ids + ds.test_ids) == list(range(10))
    for x, y in ds.pairs:
        assert x.shape == y.shape


def test_dataset_regeneration_is_bit_exact():
    a = make_dataset(DegradationSpec(kind="rain"), 6, 16, 4)
    b = make_dataset(DegradationSpec(kind="rain"), 6, 16, 4)
    for (x1, y1), (x2, y2) in zip(a.pairs, b.pairs):
        assert x1.tobytes() == x2.tobytes() and y1.tobytes() == y2.tobytes()


def test_dataset_save_load(tmp_path):
    ds = make_dataset(DegradationSpec(kind="haze"), 5, 16, 1)
    ds.save(tmp_path)
    assert (tmp_path / "train" / "x" / f"{ds.train_ids[0]}.ppm").exists()
    assert (tmp_path / "test" / "y" / f"{ds.test_ids[0]}.ppm").exists()
    back = PairedDataset.load(tmp_path)
    assert back.spec == ds.spec and back.train_ids == ds.train_ids
    for (x1, y1), (x2, y2) in zip(ds.pairs, back.pairs):
        assert np.abs(x1 - x2).max() <= 0.5 / 255 + 1e-12


# crops ---------------------------------------------------------------------------


def test_crop_full_size_is_identity(scene):
    x, y = random_crop((scene, scene * 0.5), 64, 0)
    np.testing.assert_array_equal(x, scene)


def test_crop_offsets_paired_and_in_bounds():
    h = w = 20
    idx = np.arange(3 * h * w, dtype=np.float64).reshape(3, h, w)
    rng = np.random.default_rng(0)
    for _ in range(1000):
        x, y = random_crop((idx, idx + 0.5), 7, rng)
        assert x.shape == (3, 7, 7)
        np.testing.assert_array_equal(y - x, 0.5)
        assert x.min() >= 0 and x.max() < idx.size


# image I/O -----------------------------------------------------------------------


def test_ppm_round_trip_8bit(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (3, 7, 5)) / 255.0
    save_image(tmp_path / "a.ppm", img)
    np.testing.assert_array_equal(load_image(tmp_path / "a.ppm"), img)


def test_pgm_round_trip_and_16bit_error_bound():
    img = np.random.default_rng(1).uniform(size=(1, 6, 9))
    out, bits = decode_netpbm(encode_netpbm(img, 16))
    assert bits == 16 and out.shape == (1, 6, 9)
    assert np.abs(out - img).max() <= 1 / (2 * 65535) + 1e-15


def test_header_comments_are_skipped():
    data = b"P5\n# made by hand\n2 1\n# max\n255\n" + bytes([0, 255])
    img, _ = decode_netpbm(data)
    np.testing.assert_array_equal(img, [[[0.0, 1.0]]])


def test_bad_magic_reports_position():
    with pytest.raises(NetpbmError) as err:
        decode_netpbm(b"P3\n1 1\n255\n0 0 0")
    assert err.value.position == 0


def test_truncated_raster_rejected():
    with pytest.raises(NetpbmError, match="truncated"):
        decode_netpbm(b"P6\n2 2\n255\n" + bytes(5))
