"""Synthetic time-varying SIMO-OFDM channel frequency responses.

Tapped-delay-line model: a handful of discrete paths with exponentially
distributed delays (exponential power decay over delay) and Jakes-style
Doppler shifts drawn from a uniform angle-of-arrival.  Good enough to give
an estimator the two properties that matter here -- frequency selectivity
from delay spread and time variation from UE motion -- while staying fully
seeded and reproducible.

Frames are generated in 64-bit arithmetic and stored as complex64
(paired 32-bit reals), normalized to unit mean power.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class ChannelConfig:
    """Scenario parameters for the synthetic channel generator."""

    carrier_freq_hz: float = 3.5e9
    subcarrier_spacing_hz: float = 15e3
    n_subcarriers: int = 128
    n_symbols: int = 14
    n_rx: int = 8
    n_paths: int = 12
    rms_delay_spread_s: float = 1e-6
    ue_speed_mps: float = 27.78
    seed: int = 0

    @property
    def symbol_duration_s(self):
        """One OFDM symbol period; 14 symbols at 15 kHz span ~1 ms."""
        return 1.0 / self.subcarrier_spacing_hz

    def validate(self):
        if self.n_subcarriers < 2:
            raise ConfigurationError(
                f"n_subcarriers must be >= 2, got {self.n_subcarriers}")
        if self.n_symbols < 2:
            raise ConfigurationError(
                f"n_symbols must be >= 2, got {self.n_symbols}")
        if self.n_rx < 1:
            raise ConfigurationError(f"n_rx must be >= 1, got {self.n_rx}")
        if self.n_paths < 1:
            raise ConfigurationError(
                f"n_paths must be >= 1, got {self.n_paths}")
        if self.subcarrier_spacing_hz <= 0:
            raise ConfigurationError(
                f"subcarrier_spacing_hz must be > 0, got "
                f"{self.subcarrier_spacing_hz}")
        if self.carrier_freq_hz <= 0:
            raise ConfigurationError(
                f"carrier_freq_hz must be > 0, got {self.carrier_freq_hz}")
        if self.rms_delay_spread_s < 0:
            raise ConfigurationError(
                f"rms_delay_spread_s must be >= 0, got "
                f"{self.rms_delay_spread_s}")
        if self.rms_delay_spread_s >= 1.0 / self.subcarrier_spacing_hz:
            raise ConfigurationError(
                f"rms_delay_spread_s must be < 1/subcarrier_spacing "
                f"({1.0 / self.subcarrier_spacing_hz:.3g} s), got "
                f"{self.rms_delay_spread_s}")
        if self.ue_speed_mps < 0:
            raise ConfigurationError(
                f"ue_speed_mps must be >= 0, got {self.ue_speed_mps}")
        if self.seed < 0:
            raise ConfigurationError(f"seed must be >= 0, got {self.seed}")


@dataclass(frozen=True)
class ChannelFrame:
    """Ground-truth channel over one frame.

    ``h`` is complex64 with layout [n_rx, n_subcarriers, n_symbols] and
    unit mean power.
    """

    h: np.ndarray
    config_ref: ChannelConfig
    frame_seed: int


def max_doppler_hz(cfg: ChannelConfig) -> float:
    """Maximum Doppler shift v*f_c/c for the configured UE speed."""
    return cfg.ue_speed_mps * cfg.carrier_freq_hz / SPEED_OF_LIGHT


def generate_frame(cfg: ChannelConfig, frame_seed: int) -> ChannelFrame:
    """Draw one channel realization, deterministic in (cfg, frame_seed).

    Per path p: delay tau_p ~ Exp(mean=rms_delay_spread_s), Doppler
    f_p = (v*f_c/c) * cos(theta_p) with theta_p uniform on [0, 2pi), and a
    per-antenna gain of deterministic amplitude sqrt(exp(-tau_p/rms))
    (exponential power-delay profile) with i.i.d. uniform phases.  Then

        H[r, k, t] = sum_p a[p, r] * exp(j*2pi*(f_p*t*T_sym - k*df*tau_p))

    and the frame is normalized to unit mean power.
    """
    cfg.validate()
    if frame_seed < 0:
        raise ConfigurationError(f"frame_seed must be >= 0, got {frame_seed}")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, frame_seed]))

    # Draw order is part of the reproducibility contract; do not reorder.
    delays = rng.exponential(
        scale=cfg.rms_delay_spread_s, size=cfg.n_paths)
    theta = rng.uniform(0.0, 2.0 * np.pi, size=cfg.n_paths)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(cfg.n_paths, cfg.n_rx))

    doppler = max_doppler_hz(cfg) * np.cos(theta)
    if cfg.rms_delay_spread_s > 0:
        power = np.exp(-delays / cfg.rms_delay_spread_s)
    else:
        power = np.ones(cfg.n_paths)
    power = power / power.sum()
    gains = np.sqrt(power)[:, None] * np.exp(1j * phases)

    t_sym = cfg.symbol_duration_s
    t_idx = np.arange(cfg.n_symbols)
    k_idx = np.arange(cfg.n_subcarriers)
    phase_time = np.exp(2j * np.pi * doppler[:, None] * t_idx[None, :] * t_sym)
    phase_freq = np.exp(
        -2j * np.pi * k_idx[None, :] * cfg.subcarrier_spacing_hz
        * delays[:, None])

    h = np.einsum("pr,pk,pt->rkt", gains, phase_freq, phase_time)
    h /= np.sqrt(np.mean(np.abs(h) ** 2))
    return ChannelFrame(h=h.astype(np.complex64), config_ref=cfg,
                        frame_seed=frame_seed)


def generate_dataset(cfg: ChannelConfig, n_frames: int,
                     base_seed: int) -> list[ChannelFrame]:
    """Independent frames with frame_seed = base_seed + index."""
    if n_frames < 1:
        raise ConfigurationError(f"n_frames must be >= 1, got {n_frames}")
    return [generate_frame(cfg, base_seed + i) for i in range(n_frames)]


def _corr_magnitude(a: np.ndarray, b: np.ndarray) -> float:
    num = np.abs(np.sum(a * np.conj(b), dtype=np.complex128))
    den = np.sqrt(np.sum(np.abs(a) ** 2, dtype=np.float64)
                  * np.sum(np.abs(b) ** 2, dtype=np.float64))
    if den == 0.0:
        return 1.0
    return float(num / den)


def time_correlation(frame: ChannelFrame, lag: int) -> float:
    """|complex correlation| between H[..., t] and H[..., t+lag].

    Pooled over all valid t, subcarriers, and antennas.  1.0 for lag 0 and
    for static channels; decays with lag as Doppler spread grows.
    """
    n_symbols = frame.h.shape[2]
    if not 0 <= lag < n_symbols:
        raise ValueError(f"lag must be in [0, {n_symbols}), got {lag}")
    if lag == 0:
        return 1.0
    return _corr_magnitude(frame.h[:, :, :-lag], frame.h[:, :, lag:])


def freq_correlation(frame: ChannelFrame, spacing: int) -> float:
    """|complex correlation| between subcarriers k and k+spacing, pooled."""
    n_subcarriers = frame.h.shape[1]
    if not 0 <= spacing < n_subcarriers:
        raise ValueError(
            f"spacing must be in [0, {n_subcarriers}), got {spacing}")
    if spacing == 0:
        return 1.0
    return _corr_magnitude(frame.h[:, :-spacing, :], frame.h[:, spacing:, :])
