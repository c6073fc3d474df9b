import numpy as np
import pytest

from icenet import (ChannelConfig, ChannelFrame, DatasetFormatError,
                    FrameSample, PilotPattern, ShapeError, build_samples,
                    generate_frame, interpolate_to_grid, load_dataset,
                    observe_pilots, planes_to_complex, save_dataset)
from icenet.ofdm import read_dataset_header


def make_frame(seed=1, **kw):
    return generate_frame(ChannelConfig(seed=seed, **kw), 0)


def flat_static_frame(n_rx=2, n_sc=16, n_sym=6):
    cfg = ChannelConfig(n_rx=n_rx, n_subcarriers=n_sc, n_symbols=n_sym,
                        n_paths=1, rms_delay_spread_s=0.0, ue_speed_mps=0.0,
                        seed=5)
    return generate_frame(cfg, 0)


def test_noiseless_ls_is_exact():
    frame = make_frame()
    pat = PilotPattern()
    obs = observe_pilots(frame, pat, np.inf, noise_seed=0)
    truth = frame.h[:, pat.pilot_subcarriers(128)][:, :, pat.pilot_symbols()]
    assert np.array_equal(obs, truth.astype(np.complex128))


def test_default_pattern_shape():
    obs = observe_pilots(make_frame(), PilotPattern(), 10.0, noise_seed=0)
    assert obs.shape == (8, 64, 2)


def test_noise_deterministic_in_seed():
    frame = make_frame()
    a = observe_pilots(frame, PilotPattern(), 0.0, noise_seed=42)
    b = observe_pilots(frame, PilotPattern(), 0.0, noise_seed=42)
    c = observe_pilots(frame, PilotPattern(), 0.0, noise_seed=43)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


@pytest.mark.parametrize("snr_db", [-10.0, 0.0, 15.0])
def test_snr_calibration(snr_db):
    # empirical pilot-noise variance over >= 1e4 draws within 5%
    pat = PilotPattern()
    draws = []
    for fs in range(10):
        frame = make_frame(seed=fs)
        truth = frame.h[:, pat.pilot_subcarriers(128)][:, :, pat.pilot_symbols()]
        obs = observe_pilots(frame, pat, snr_db, noise_seed=fs)
        draws.append((obs - truth).reshape(-1))
    noise = np.concatenate(draws)
    assert noise.size >= 10_000
    var = np.mean(np.abs(noise) ** 2)
    expected = 10.0 ** (-snr_db / 10.0)
    assert abs(var - expected) / expected < 0.05


def test_pattern_validation():
    frame = make_frame()
    with pytest.raises(ShapeError):
        observe_pilots(frame, PilotPattern(pilot_symbol_indices=(1, 20)),
                       10.0, 0)
    with pytest.raises(ShapeError):
        observe_pilots(frame, PilotPattern(subcarrier_stride=0), 10.0, 0)
    with pytest.raises(ShapeError):
        observe_pilots(frame, PilotPattern(subcarrier_offset=3), 10.0, 0)


def test_interpolation_reproduces_linear_channel():
    # channel affine in subcarrier index: exact at all cells in pilot span
    pat = PilotPattern(pilot_symbol_indices=(1, 4), subcarrier_stride=2)
    n_sc, n_sym = 16, 6
    k = np.arange(n_sc)
    grid = (0.3 + 0.1 * k)[:, None] * np.ones(n_sym) + 0j
    pilots = grid[np.ix_(pat.pilot_subcarriers(n_sc), pat.pilot_symbols())]
    rec = interpolate_to_grid(pilots, pat, n_sc, n_sym)
    assert np.allclose(rec, grid, atol=1e-12)


def test_interpolation_constant_channel_exact():
    pat = PilotPattern(pilot_symbol_indices=(1, 4))
    rec = interpolate_to_grid(np.full((8, 2), 0.7 - 0.2j), pat, 16, 6)
    assert np.allclose(rec, 0.7 - 0.2j, atol=1e-12)


def test_interpolation_time_hold_rule():
    # beyond the last pilot symbol the estimate holds that symbol's value
    pat = PilotPattern(pilot_symbol_indices=(1, 10))
    v1, v2 = 1.0 + 0j, 3.0 + 0j
    pilots = np.stack([np.full(64, v1), np.full(64, v2)], axis=1)
    rec = interpolate_to_grid(pilots, pat, 128, 14)
    assert np.allclose(rec[:, 13], v2)
    assert np.allclose(rec[:, 0], v1)
    assert np.allclose(rec[:, 11], v2)


def test_interpolation_needs_two_pilot_subcarriers():
    pat = PilotPattern(pilot_symbol_indices=(1, 4), subcarrier_stride=16)
    with pytest.raises(ValueError):
        interpolate_to_grid(np.ones((1, 2), dtype=complex), pat, 16, 6)


def test_build_samples_one_per_antenna():
    frame = make_frame()
    samples = build_samples([frame], PilotPattern(), 10.0, seed=0)
    assert len(samples) == 8
    assert sorted(s.rx_index for s in samples) == list(range(8))
    assert all(s.snr_db == 10.0 for s in samples)
    assert all(s.x.shape == (2, 128, 14) for s in samples)
    assert all(s.x.dtype == np.float32 for s in samples)


def test_build_samples_uniform_policy_range():
    frames = [make_frame(seed=s) for s in range(3)]
    samples = build_samples(frames, PilotPattern(), (-10.0, 15.0), seed=1)
    snrs = np.array([s.snr_db for s in samples])
    assert np.all((snrs >= -10.0) & (snrs <= 15.0))
    assert len(np.unique(snrs)) > 1


def test_noiseless_flat_static_channel_has_zero_error():
    pat = PilotPattern(pilot_symbol_indices=(1, 4))
    samples = build_samples([flat_static_frame()], pat, None, seed=0)
    for s in samples:
        assert np.allclose(s.x, s.y, atol=1e-7)


def test_build_samples_deterministic():
    frames = [make_frame(seed=s) for s in range(2)]
    a = build_samples(frames, PilotPattern(), (-10.0, 15.0), seed=4)
    b = build_samples(frames, PilotPattern(), (-10.0, 15.0), seed=4)
    for sa, sb in zip(a, b):
        assert np.array_equal(sa.x, sb.x) and sa.snr_db == sb.snr_db


def test_save_load_roundtrip_bit_exact(tmp_path):
    frames = [make_frame(seed=s) for s in range(2)]
    samples = build_samples(frames, PilotPattern(), (-10.0, 15.0), seed=4)
    path = tmp_path / "ds.iced"
    save_dataset(samples, path, pattern=PilotPattern(),
                 channel_config=ChannelConfig())
    loaded = load_dataset(path)
    assert len(loaded) == len(samples)
    for a, b in zip(samples, loaded):
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.y, b.y)
        assert np.float32(a.snr_db) == np.float32(b.snr_db)
        assert (a.rx_index, a.frame_id) == (b.rx_index, b.frame_id)
    header = read_dataset_header(path)
    assert header["n_samples"] == len(samples)
    assert header["n_subcarriers"] == 128


def test_truncated_payload_rejected(tmp_path):
    samples = build_samples([make_frame()], PilotPattern(), 10.0, seed=0)
    path = tmp_path / "ds.iced"
    save_dataset(samples, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-10])
    with pytest.raises(DatasetFormatError) as err:
        load_dataset(path)
    assert err.value.offset is not None


def test_bad_magic_rejected(tmp_path):
    samples = build_samples([make_frame()], PilotPattern(), 10.0, seed=0)
    path = tmp_path / "ds.iced"
    save_dataset(samples, path)
    blob = bytearray(path.read_bytes())
    blob[:4] = b"NOPE"
    path.write_bytes(bytes(blob))
    with pytest.raises(DatasetFormatError):
        load_dataset(path)


def test_header_count_mismatch_rejected(tmp_path):
    samples = build_samples([make_frame()], PilotPattern(), 10.0, seed=0)
    path = tmp_path / "ds.iced"
    save_dataset(samples, path)
    blob = bytearray(path.read_bytes())
    blob[8:12] = (99).to_bytes(4, "little")  # n_samples field
    path.write_bytes(bytes(blob))
    with pytest.raises(DatasetFormatError):
        load_dataset(path)
