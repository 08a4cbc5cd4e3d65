import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mimo_sarnn.acoustics import ArrayGeometry, RoomSpec, SceneConfig, SourceSpec, simulate_scene, source_position
from mimo_sarnn.dsp import MultiChannelSpectrogram, StftConfig, Waveform, stft
from mimo_sarnn.features import (
    LPS_FLOOR,
    FeatureStack,
    directional_feature,
    dump_tensor,
    feature_stack,
    ipd,
    load_tensor,
    log_power_spectra,
    steering_vector,
)

from conftest import crandn

CFG = StftConfig()
GEOM = ArrayGeometry.linear()


def _spec(Y):
    return MultiChannelSpectrogram(Y, CFG)


def test_lps_examples():
    Y = np.zeros((2, 257, 1), complex)
    Y[0, 3, 0] = 1.0
    Y[0, 4, 0] = 10.0
    lps = log_power_spectra(_spec(Y))
    assert lps[0, 3] == pytest.approx(np.log1p(LPS_FLOOR), abs=1e-15)
    assert lps[0, 4] == pytest.approx(4.60517, abs=1e-5)
    assert lps[1, 0] == pytest.approx(-23.0259, abs=1e-4)
    assert np.all(np.isfinite(lps))


def test_ipd_examples(rng):
    Y1 = crandn(rng, 3, 257)
    same = ipd(np.stack([Y1, Y1], -1), [(0, 1)])
    np.testing.assert_array_equal(same[..., 0], 1.0)
    np.testing.assert_array_equal(same[..., 1], 0.0)
    quad = ipd(np.stack([Y1, Y1 * np.exp(1j * np.pi / 2)], -1), [(0, 1)])
    np.testing.assert_allclose(quad[..., 0], 0.0, atol=1e-12)
    np.testing.assert_allclose(quad[..., 1], -1.0, atol=1e-12)
    neg = ipd(np.stack([Y1, -Y1], -1), [(0, 1)])
    np.testing.assert_allclose(neg[..., 0], -1.0, atol=1e-12)


def test_ipd_zero_bins_use_zero_phase_and_bad_pairs_raise():
    Y = np.zeros((1, 257, 2), complex)
    Y[..., 1] = 1j
    out = ipd(Y, [(0, 1)])
    np.testing.assert_allclose(out[..., 1], -1.0, atol=1e-12)
    for bad in [(0, 0), (0, 2), (-1, 0)]:
        with pytest.raises(ValueError):
            ipd(Y, [bad])


def test_steering_broadside_is_all_ones():
    v = steering_vector(90.0, GEOM, CFG).values
    np.testing.assert_allclose(v, 1.0, atol=1e-12)


def test_steering_endfire_half_wavelength():
    geom = ArrayGeometry.linear([0.0, 0.1])
    # bin 64 of a 512-point FFT sits at 1715 Hz, where 2*pi*f*0.1/343 == pi
    cfg = StftConfig(sample_rate=13720)
    assert cfg.bin_frequencies()[64] == pytest.approx(1715.0)
    v = steering_vector(0.0, geom, cfg).values
    np.testing.assert_allclose(v[64], [1.0, -1.0], atol=1e-12)


@given(st.floats(0, 180))
@settings(max_examples=30, deadline=None)
def test_steering_unit_modulus(doa):
    v = steering_vector(doa, GEOM, CFG).values
    np.testing.assert_allclose(np.abs(v), 1.0, atol=1e-12)


def test_steering_rejects_bad_input():
    with pytest.raises(ValueError):
        steering_vector(181.0, GEOM, CFG)
    bent = ArrayGeometry(np.array([[0, 0, 0], [0.1, 0, 0], [0.2, 0.05, 0]], float))
    with pytest.raises(ValueError):
        steering_vector(30.0, bent, CFG)


def test_df_plane_wave_is_one(rng):
    sv = steering_vector(37.0, GEOM, CFG)
    S = crandn(rng, 5, 257)
    Y = S[..., None] * sv.values[None]
    np.testing.assert_allclose(directional_feature(Y, sv), 1.0, atol=1e-12)


def test_df_phase_offset_pi_is_minus_one(rng):
    sv = steering_vector(90.0, GEOM, CFG)
    S = crandn(rng, 4, 257)
    Y = np.stack([S, -S, -S, -S], -1)
    np.testing.assert_allclose(directional_feature(Y, sv), -1.0, atol=1e-12)


def test_df_channel_mismatch_raises(rng):
    sv = steering_vector(90.0, GEOM, CFG)
    with pytest.raises(ValueError):
        directional_feature(crandn(rng, 2, 257, 3), sv)


def test_df_peaks_at_true_doa_for_simulated_source():
    geom = ArrayGeometry.linear(origin=(2.5, 2.0, 1.4))
    room = RoomSpec((6, 5, 3), t60=0.3, reflection_order=0)
    rng = np.random.default_rng(3)
    for true in (30.0, 75.0, 120.0):
        src = SourceSpec(source_position(geom, true, 1.5), true)
        scene = simulate_scene(SceneConfig(room, geom, [src], snr_db=None), [rng.normal(size=16000)])
        Y = stft(scene.mixture, CFG).data
        power = np.abs(Y[..., 0]) ** 2
        active = power > 1e-3 * power.max()
        at = directional_feature(Y, steering_vector(true, geom, CFG))[active].mean()
        for other in np.arange(0.0, 181.0, 5.0):
            if abs(other - true) >= 10:
                away = directional_feature(Y, steering_vector(other, geom, CFG))[active].mean()
                assert at > away


def test_feature_stack_shapes_and_invariants(rng):
    Y = crandn(rng, 6, 257, 4)
    fs = feature_stack(Y, [20.0, 140.0], GEOM, CFG)
    fs.validate()
    assert fs.ipd.shape == (6, 257, 6)
    assert fs.df.shape == (6, 257, 2)
    assert fs.concat().shape == (6, fs.width) == (6, 257 * (1 + 6 + 2))
    # frequency-major planes: the first F entries are the LPS
    np.testing.assert_array_equal(fs.concat()[:, :257], fs.lps)


def test_feature_stack_validate_rejects_bad_planes(rng):
    fs = feature_stack(crandn(rng, 2, 257, 2), [50.0], GEOM.__class__.linear([0.0, 0.05]), CFG)
    bad = FeatureStack(fs.lps, fs.ipd * 1.1, fs.df)
    with pytest.raises(ValueError):
        bad.validate()
    with pytest.raises(ValueError):
        FeatureStack(fs.lps, fs.ipd, fs.df * 2).validate()
    with pytest.raises(ValueError):
        FeatureStack(fs.lps * np.nan, fs.ipd, fs.df).validate()


@pytest.mark.parametrize("g", [0.01, 3.0, 250.0])
def test_scaling_shifts_only_lps(g):
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 8000))
    Ya = stft(Waveform(x, 16000))
    a = feature_stack(Ya, [60.0], GEOM, CFG)
    b = feature_stack(stft(Waveform(g * x, 16000)), [60.0], GEOM, CFG)
    np.testing.assert_allclose(b.ipd, a.ipd, atol=1e-9)
    np.testing.assert_allclose(b.df, a.df, atol=1e-9)
    # the floor makes the shift exact only where |Y|^2 >> 1e-10
    strong = np.abs(Ya.data[..., 0]) ** 2 * min(g, 1.0) ** 2 > 1e-4
    assert strong.mean() > 0.9
    np.testing.assert_allclose((b.lps - a.lps)[strong], 2 * np.log(g), atol=1e-6)


@pytest.mark.parametrize("dtype", [np.float64, np.float32])
def test_tensor_dump_round_trip(tmp_path, rng, dtype):
    arr = rng.normal(size=(3, 4, 5)).astype(dtype)
    dump_tensor(tmp_path / "t.bin", arr)
    back = load_tensor(tmp_path / "t.bin")
    assert back.dtype == dtype
    np.testing.assert_array_equal(back, arr)
