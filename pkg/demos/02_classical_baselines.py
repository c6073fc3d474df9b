#!/usr/bin/env python3
"""The three classical estimators on a shared seeded test set.

Every estimator reads the same FrameSample (same pilots, same noise), so
the comparison is paired.  LS+LI is raw interpolation, FT denoises in the
delay domain, LMMSE applies a Wiener filter calibrated on separate frames.

Run: python demos/02_classical_baselines.py
"""

import numpy as np

from icenet import (ChannelConfig, PilotPattern, build_samples,
                    calibrate_lmmse, estimate_ft, estimate_lmmse,
                    estimate_ls_li, generate_dataset, nmse,
                    planes_to_complex)

pattern = PilotPattern()
print("pilot layout: symbols", sorted(pattern.pilot_symbol_indices),
      "of 14, every", pattern.subcarrier_stride, "subcarriers ->",
      len(pattern.pilot_subcarriers(128)), "pilot subcarriers")

channel = ChannelConfig(ue_speed_mps=100 / 3.6, seed=21)
test_frames = generate_dataset(channel, 40, base_seed=0)
calib_frames = generate_dataset(channel, 100, base_seed=50_000)

print(f"\n{'SNR':>5} {'LS+LI':>9} {'FT':>9} {'LMMSE':>9}   (mean NMSE, "
      f"{len(test_frames) * 8} samples)")
for snr_db in (-10.0, 0.0, 10.0, 15.0):
    samples = build_samples(test_frames, pattern, snr_db, seed=7)
    calib = calibrate_lmmse(
        build_samples(calib_frames, pattern, snr_db, seed=8),
        snr_db, pattern)
    scores = {"ls": [], "ft": [], "lmmse": []}
    for s in samples:
        truth = planes_to_complex(s.y)
        scores["ls"].append(nmse(estimate_ls_li(s), truth))
        scores["ft"].append(nmse(estimate_ft(s, pattern), truth))
        scores["lmmse"].append(nmse(estimate_lmmse(s, calib, pattern), truth))
    print(f"{snr_db:>5.0f} {np.mean(scores['ls']):>9.4f} "
          f"{np.mean(scores['ft']):>9.4f} {np.mean(scores['lmmse']):>9.4f}")

print("\nFT suppresses noise-only delay taps (biggest win at low SNR);")
print("LMMSE exploits second-order statistics and dominates LS+LI.")
