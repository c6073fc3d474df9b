"""Classical channel estimators: LS+LI, FT denoising, sample-LMMSE, and NMSE.

All three estimators consume the same ``FrameSample`` that the network
sees, so every method observes identical noise realizations -- paired
comparisons stay valid by construction.  The pilot cells of ``sample.x``
hold the raw LS values exactly (interpolation preserves knots), which is
how FT and LMMSE recover the pilot-grid observation.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError
from .ofdm import FrameSample, PilotPattern, _interp_axis, planes_to_complex


def nmse(est: np.ndarray, truth: np.ndarray) -> float:
    """Per-sample normalized squared error ||est - truth||^2 / ||truth||^2.

    Accepts complex grids or stacked real planes; the two give identical
    values.  Dataset-level NMSE is the mean of per-sample values.
    """
    est = np.asarray(est)
    truth = np.asarray(truth)
    if est.shape != truth.shape:
        raise ShapeError(
            f"est shape {est.shape} != truth shape {truth.shape}")
    den = np.sum(np.abs(truth.astype(np.complex128)) ** 2)
    if den == 0.0:
        raise ValueError("truth has zero power; NMSE undefined")
    num = np.sum(np.abs(est.astype(np.complex128)
                        - truth.astype(np.complex128)) ** 2)
    return float(num / den)


def estimate_ls_li(sample: FrameSample) -> np.ndarray:
    """LS at pilots + linear interpolation; this is exactly the network
    input grid, returned as a complex [S, T] estimate."""
    return planes_to_complex(sample.x)


def _pilot_grid(sample: FrameSample, pattern: PilotPattern) -> np.ndarray:
    """Raw LS values at pilot cells, [n_pilot_sc, n_pilot_sym] complex."""
    _, n_sc, n_sym = sample.x.shape
    pattern.validate_for(n_sc, n_sym)
    grid = planes_to_complex(sample.x)
    sc = pattern.pilot_subcarriers(n_sc)
    sym = pattern.pilot_symbols()
    return grid[np.ix_(sc, sym)]


def estimate_ft(sample: FrameSample, pattern: PilotPattern = PilotPattern(),
                window_len: int | None = None) -> np.ndarray:
    """Delay-domain denoising of the pilot estimates.

    Per pilot symbol: inverse DFT of the pilot-subcarrier estimates gives
    delay taps; taps beyond ``window_len`` estimate the noise floor and are
    zeroed; in-window taps survive only above 3x the per-tap noise power;
    the cleaned taps are re-evaluated on the full subcarrier grid
    (zero-padded transform).  Time axis completed like LS+LI (linear
    between pilot symbols, held at the edges).
    """
    _, n_sc, n_sym = sample.x.shape
    pilots = _pilot_grid(sample, pattern)
    m = pilots.shape[0]
    if window_len is None:
        window_len = max(1, m // 4)
    if not 1 <= window_len <= m:
        raise ValueError(
            f"window_len must be in [1, {m}], got {window_len}")

    taps = np.fft.ifft(pilots, axis=0)
    if window_len < m:
        noise_per_tap = np.mean(np.abs(taps[window_len:]) ** 2, axis=0)
    else:
        noise_per_tap = np.zeros(pilots.shape[1])
    keep = np.abs(taps) ** 2 > 3.0 * noise_per_tap[None, :]
    keep[window_len:] = False
    taps = np.where(keep, taps, 0.0)

    # Evaluate the windowed impulse response on the full subcarrier grid;
    # reduces to the inverse transform at the pilot subcarriers themselves.
    k = np.arange(n_sc) - pattern.subcarrier_offset
    n = np.arange(m)
    basis = np.exp(-2j * np.pi * np.outer(k, n)
                   / (m * pattern.subcarrier_stride))
    freq_full = basis @ taps

    sym = pattern.pilot_symbols()
    return _interp_axis(freq_full.T, sym, np.arange(n_sym),
                        hold_edges=True).T


@dataclass
class LmmseCalibration:
    """Wiener filter from pilot-grid LS estimates to the full grid."""

    W: np.ndarray
    noise_var: float
    n_calib_frames: int
    grid_shape: tuple


def calibrate_lmmse(calib_samples, snr_db: float,
                    pattern: PilotPattern = PilotPattern()) -> LmmseCalibration:
    """Estimate W = R_fp (R_pp + sigma^2 I)^-1 from calibration samples.

    R_pp is the sample autocorrelation of vectorized pilot-grid LS
    estimates, R_fp the cross-correlation between the LI-completed
    full-grid estimates and the pilot grids, pooled over all samples
    (antennas included).  Diagonal loading by the nominal noise variance
    keeps the solve well conditioned.
    """
    if len(calib_samples) < 2:
        raise ValueError("need at least 2 calibration samples")
    _, n_sc, n_sym = calib_samples[0].x.shape
    r_fp = None
    r_pp = None
    for s in calib_samples:
        full = planes_to_complex(s.x).reshape(-1)
        pil = _pilot_grid(s, pattern).reshape(-1)
        if r_fp is None:
            r_fp = np.zeros((full.size, pil.size), dtype=np.complex128)
            r_pp = np.zeros((pil.size, pil.size), dtype=np.complex128)
        r_fp += np.outer(full, np.conj(pil))
        r_pp += np.outer(pil, np.conj(pil))
    r_fp /= len(calib_samples)
    r_pp /= len(calib_samples)

    sigma2 = 10.0 ** (-snr_db / 10.0) if np.isfinite(snr_db) else 0.0
    a = r_pp + sigma2 * np.eye(r_pp.shape[0])
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NumericError(
            "pilot autocorrelation + loading is not positive definite"
        ) from exc
    w = np.linalg.solve(a, r_fp.conj().T).conj().T
    frames = len({s.frame_id for s in calib_samples})
    return LmmseCalibration(W=w, noise_var=sigma2, n_calib_frames=frames,
                            grid_shape=(n_sc, n_sym))


def estimate_lmmse(sample: FrameSample, calib: LmmseCalibration,
                   pattern: PilotPattern = PilotPattern()) -> np.ndarray:
    """Apply a calibrated Wiener filter to one sample's pilot grid."""
    _, n_sc, n_sym = sample.x.shape
    if (n_sc, n_sym) != calib.grid_shape:
        raise ShapeError(
            f"sample grid {(n_sc, n_sym)} does not match calibration grid "
            f"{calib.grid_shape}")
    pil = _pilot_grid(sample, pattern).reshape(-1)
    if calib.W.shape[1] != pil.size:
        raise ShapeError(
            f"calibration expects {calib.W.shape[1]} pilot cells, sample "
            f"has {pil.size}")
    return (calib.W @ pil).reshape(calib.grid_shape)
