"""Pilot observation, grid interpolation, sample construction, persistence.

The estimation pipeline: a known pilot occupies every ``subcarrier_stride``-th
subcarrier of two OFDM symbols per frame.  LS estimates at those cells are
noisy channel measurements; linear interpolation completes them to the full
grid.  The completed grid, split into real/imag planes, is both the network
input and the classic LS+LI baseline.

Dataset files are a small self-describing binary format (see
``save_dataset``) so that seeded datasets round-trip bit-exactly.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .channel import ChannelFrame
from .errors import DatasetFormatError, ShapeError

MAGIC = b"ICED"
VERSION = 1
_HEADER = struct.Struct("<4sI5I3f64s")
_SNR_FIXED, _SNR_UNIFORM, _SNR_NOISELESS = 0.0, 1.0, 2.0
_ECHO = struct.Struct("<HBBffHffQ")


@dataclass(frozen=True)
class PilotPattern:
    """Which grid cells carry pilots.

    Defaults follow the frame layout used throughout: pilots on the 2nd and
    11th symbols (0-based indices 1 and 10), every 2nd subcarrier.
    """

    pilot_symbol_indices: tuple = (1, 10)
    subcarrier_stride: int = 2
    subcarrier_offset: int = 0

    def validate_for(self, n_subcarriers: int, n_symbols: int):
        if len(self.pilot_symbol_indices) == 0:
            raise ShapeError("pilot pattern has no pilot symbols")
        if any(not 0 <= s < n_symbols for s in self.pilot_symbol_indices):
            raise ShapeError(
                f"pilot symbol indices {self.pilot_symbol_indices} out of "
                f"range for {n_symbols} symbols")
        if self.subcarrier_stride < 1:
            raise ShapeError(
                f"subcarrier_stride must be >= 1, got "
                f"{self.subcarrier_stride}")
        if not 0 <= self.subcarrier_offset < self.subcarrier_stride:
            raise ShapeError(
                f"subcarrier_offset must be in [0, stride), got "
                f"{self.subcarrier_offset}")
        if len(self.pilot_subcarriers(n_subcarriers)) == 0:
            raise ShapeError("pilot pattern selects no subcarriers")

    def pilot_subcarriers(self, n_subcarriers: int) -> np.ndarray:
        return np.arange(self.subcarrier_offset, n_subcarriers,
                         self.subcarrier_stride)

    def pilot_symbols(self) -> np.ndarray:
        return np.array(sorted(self.pilot_symbol_indices))


@dataclass
class FrameSample:
    """One training/eval sample: a single antenna's 2D grid.

    ``x`` is the interpolated noisy LS estimate as [2, S, T] float32
    (real plane, imag plane); ``y`` the true channel in the same layout.
    """

    x: np.ndarray
    y: np.ndarray
    snr_db: float
    rx_index: int
    frame_id: int


def planes_to_complex(planes: np.ndarray) -> np.ndarray:
    """[2, S, T] real -> [S, T] complex (inverse of complex_to_planes)."""
    return planes[0].astype(np.float64) + 1j * planes[1].astype(np.float64)


def complex_to_planes(grid: np.ndarray, dtype=np.float32) -> np.ndarray:
    return np.stack([grid.real, grid.imag]).astype(dtype)


def observe_pilots(frame: ChannelFrame, pattern: PilotPattern, snr_db: float,
                   noise_seed: int) -> np.ndarray:
    """Noisy LS estimates at pilot cells, shape [n_rx, n_pilot_sc, n_pilot_sym].

    With unit-power pilots the LS estimate is H + n where n is circularly
    symmetric complex Gaussian with variance 10^(-snr_db/10).  Pass
    ``snr_db=np.inf`` to disable noise.
    """
    n_rx, n_sc, n_sym = frame.h.shape
    pattern.validate_for(n_sc, n_sym)
    sc = pattern.pilot_subcarriers(n_sc)
    sym = pattern.pilot_symbols()
    h_p = frame.h[:, sc][:, :, sym].astype(np.complex128)
    if np.isinf(snr_db):
        return h_p
    sigma2 = 10.0 ** (-snr_db / 10.0)
    rng = np.random.default_rng(np.random.SeedSequence([int(noise_seed)]))
    gauss = rng.standard_normal(size=h_p.shape + (2,))
    noise = np.sqrt(sigma2 / 2.0) * (gauss[..., 0] + 1j * gauss[..., 1])
    return h_p + noise


def _interp_axis(values: np.ndarray, knots: np.ndarray, targets: np.ndarray,
                 hold_edges: bool) -> np.ndarray:
    """Linear interpolation of ``values`` (knots along axis 0).

    Beyond the knot span: linear extrapolation when ``hold_edges`` is False,
    nearest-knot hold when True.  A single knot is held everywhere.
    """
    if len(knots) == 1:
        return np.repeat(values, len(targets), axis=0)
    j = np.clip(np.searchsorted(knots, targets, side="right") - 1,
                0, len(knots) - 2)
    w = (targets - knots[j]) / (knots[j + 1] - knots[j])
    if hold_edges:
        w = np.clip(w, 0.0, 1.0)
    w = w.reshape((-1,) + (1,) * (values.ndim - 1))
    return values[j] + w * (values[j + 1] - values[j])


def interpolate_to_grid(pilot_est: np.ndarray, pattern: PilotPattern,
                        n_subcarriers: int, n_symbols: int) -> np.ndarray:
    """Complete pilot-cell estimates [n_pilot_sc, n_pilot_sym] to [S, T].

    Frequency axis: linear between pilot subcarriers, linear extrapolation
    at the band edges.  Time axis: linear between pilot symbols, nearest
    value held before the first / after the last pilot symbol.
    """
    sc = pattern.pilot_subcarriers(n_subcarriers)
    sym = pattern.pilot_symbols()
    if pilot_est.shape != (len(sc), len(sym)):
        raise ShapeError(
            f"pilot_est shape {pilot_est.shape} does not match pattern "
            f"({len(sc)} subcarriers x {len(sym)} symbols)")
    if len(sc) < 2:
        raise ValueError(
            "need at least 2 pilot subcarriers for frequency interpolation")
    full_freq = _interp_axis(pilot_est.astype(np.complex128), sc,
                             np.arange(n_subcarriers), hold_edges=False)
    full = _interp_axis(full_freq.T, sym, np.arange(n_symbols),
                        hold_edges=True).T
    return full


def _derive_noise_seed(seed: int, frame_idx: int, rx: int) -> int:
    ss = np.random.SeedSequence([int(seed), int(frame_idx), int(rx)])
    return int(ss.generate_state(1, np.uint64)[0])


def build_samples(frames, pattern: PilotPattern, snr_policy,
                  seed: int) -> list[FrameSample]:
    """One FrameSample per (frame, rx antenna).

    ``snr_policy`` is a fixed dB value, a (lo, hi) tuple for a uniform
    per-sample draw, or None for noiseless observation.
    """
    if len(frames) == 0:
        raise ValueError("frames must be non-empty")
    snr_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
    samples = []
    for frame_idx, frame in enumerate(frames):
        n_rx, n_sc, n_sym = frame.h.shape
        for rx in range(n_rx):
            if snr_policy is None:
                snr_db = np.inf
            elif isinstance(snr_policy, tuple):
                lo, hi = snr_policy
                snr_db = float(snr_rng.uniform(lo, hi))
            else:
                snr_db = float(snr_policy)
            obs = observe_pilots(frame, pattern, snr_db,
                                 _derive_noise_seed(seed, frame_idx, rx))
            grid = interpolate_to_grid(obs[rx], pattern, n_sc, n_sym)
            samples.append(FrameSample(
                x=complex_to_planes(grid),
                y=complex_to_planes(frame.h[rx]),
                snr_db=snr_db,
                rx_index=rx,
                frame_id=frame.frame_seed,
            ))
    return samples


def _snr_flag_block(samples) -> tuple:
    snrs = np.array([s.snr_db for s in samples], dtype=np.float64)
    if np.all(np.isinf(snrs)):
        return (_SNR_NOISELESS, 0.0, 0.0)
    if np.all(snrs == snrs[0]):
        return (_SNR_FIXED, float(snrs[0]), float(snrs[0]))
    return (_SNR_UNIFORM, float(snrs.min()), float(snrs.max()))


def _pack_echo(pattern, channel_config) -> bytes:
    if pattern is None and channel_config is None:
        return bytes(64)
    mask = 0
    stride = offset = 0
    if pattern is not None:
        for s in pattern.pilot_symbol_indices:
            if s < 16:
                mask |= 1 << s
        stride, offset = pattern.subcarrier_stride, pattern.subcarrier_offset
    cfg = channel_config
    vals = (mask, stride, offset,
            cfg.carrier_freq_hz if cfg else 0.0,
            cfg.subcarrier_spacing_hz if cfg else 0.0,
            cfg.n_paths if cfg else 0,
            cfg.rms_delay_spread_s if cfg else 0.0,
            cfg.ue_speed_mps if cfg else 0.0,
            cfg.seed if cfg else 0)
    return _ECHO.pack(*vals).ljust(64, b"\x00")


def save_dataset(samples, path, *, pattern=None, channel_config=None):
    """Write samples to ``path``.

    Wire format (little-endian): header = magic ``ICED``, u32 version=1,
    u32 x5 (n_samples, channels=2, n_subcarriers, n_symbols, n_rx), an f32
    SNR flag block (mode 0=fixed/1=uniform/2=noiseless, lo, hi), and 64
    reserved bytes carrying a compact pilot-pattern / channel-config echo.
    Payload per sample: x planes then y planes, row-major
    [channel, subcarrier, symbol] f32; then f32 snr_db, u32 rx_index,
    u32 frame_id.
    """
    if len(samples) == 0:
        raise ValueError("cannot save an empty dataset")
    shape = samples[0].x.shape
    for s in samples:
        if s.x.shape != shape or s.y.shape != shape:
            raise ShapeError("all samples must share one [2, S, T] shape")
    _, n_sc, n_sym = shape
    n_rx = max(s.rx_index for s in samples) + 1
    header = _HEADER.pack(MAGIC, VERSION, len(samples), 2, n_sc, n_sym, n_rx,
                          *_snr_flag_block(samples),
                          _pack_echo(pattern, channel_config))
    with open(path, "wb") as f:
        f.write(header)
        for s in samples:
            f.write(s.x.astype("<f4").tobytes())
            f.write(s.y.astype("<f4").tobytes())
            f.write(struct.pack("<fII", s.snr_db, s.rx_index, s.frame_id))


def read_dataset_header(path) -> dict:
    with open(path, "rb") as f:
        raw = f.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise DatasetFormatError("file shorter than header", offset=len(raw))
    (magic, version, n_samples, channels, n_sc, n_sym, n_rx,
     snr_mode, snr_lo, snr_hi, _echo) = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r}", offset=0)
    if version != VERSION:
        raise DatasetFormatError(f"unsupported version {version}", offset=4)
    return {"n_samples": n_samples, "channels": channels,
            "n_subcarriers": n_sc, "n_symbols": n_sym, "n_rx": n_rx,
            "snr_mode": snr_mode, "snr_lo": snr_lo, "snr_hi": snr_hi}


def load_dataset(path) -> list[FrameSample]:
    """Inverse of save_dataset; round-trip is bit-exact."""
    header = read_dataset_header(path)
    with open(path, "rb") as f:
        blob = f.read()
    n, channels = header["n_samples"], header["channels"]
    n_sc, n_sym = header["n_subcarriers"], header["n_symbols"]
    plane_len = channels * n_sc * n_sym
    rec_size = 2 * plane_len * 4 + 12
    expected = _HEADER.size + n * rec_size
    if len(blob) != expected:
        raise DatasetFormatError(
            f"payload length mismatch: expected {expected} bytes, file has "
            f"{len(blob)}", offset=min(expected, len(blob)))
    samples = []
    off = _HEADER.size
    for _ in range(n):
        x = np.frombuffer(blob, dtype="<f4", count=plane_len, offset=off)
        off += plane_len * 4
        y = np.frombuffer(blob, dtype="<f4", count=plane_len, offset=off)
        off += plane_len * 4
        snr_db, rx_index, frame_id = struct.unpack_from("<fII", blob, off)
        off += 12
        samples.append(FrameSample(
            x=x.reshape(channels, n_sc, n_sym).copy(),
            y=y.reshape(channels, n_sc, n_sym).copy(),
            snr_db=float(snr_db), rx_index=rx_index, frame_id=frame_id))
    return samples
