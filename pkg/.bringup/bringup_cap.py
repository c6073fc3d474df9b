import time
import numpy as np
import icenet as ic
from icenet.training import TrainConfig, train, estimate_iterate_spectral_radius
from icenet.baselines import estimate_ls_li, nmse
from icenet.ofdm import planes_to_complex
from icenet import solver as sv
from icenet import block as ieb

ch = ic.ChannelConfig(ue_speed_mps=100/3.6, seed=11)
frames = ic.generate_dataset(ch, 75, base_seed=0)
samples = ic.build_samples(frames, ic.PilotPattern(), (-10.0, 15.0), seed=11)
tcfg = TrainConfig(epochs=8, batch_size=20, split_sizes=(480, 60, 60), seed=1,
                   cosine_period_epochs=8)
scfg = ic.SolveConfig(eps=1e-3, max_iters=15)
report, params = train("icenet", samples, tcfg, scfg, checkpoint_path=".bringup/icenet_cap.ckpt")
for e in range(len(report.train_loss)):
    print(f"  epoch {e}: loss {report.train_loss[e]:.5f} val {report.val_nmse[e]:.5f} iters {report.mean_iters[e]:.2f}", flush=True)
print(f"training wall {report.wall_time_s:.0f}s  best epoch {report.best_epoch}", flush=True)

params = ieb.load_params(".bringup/icenet_cap.ckpt")
test_frames = ic.generate_dataset(ch, 25, base_seed=5000)
ecfg = ic.SolveConfig(eps=1e-2, max_iters=10)
for snr in (-10.0, 0.0, 10.0, 15.0):
    ts = ic.build_samples(test_frames, ic.PilotPattern(), snr, seed=77)
    xb = np.stack([s.x for s in ts]); yb = np.stack([s.y for s in ts])
    res = sv.deq_forward_batch(xb, params, ecfg)
    net = np.mean([nmse(res.z_star[i], yb[i]) for i in range(len(ts))])
    ls = np.mean([nmse(estimate_ls_li(s), planes_to_complex(s.y)) for s in ts])
    rho = estimate_iterate_spectral_radius(params, res.z_star[:8], xb[:8], 8, 6, np.random.default_rng(0))
    print(f"snr {snr:+.0f}: net {net:.4f} ls {ls:.4f} iters {res.iters_used.mean():.2f} frac<tau {np.mean(res.iters_used < 10):.2f} rho {rho:.3f}", flush=True)

ch10 = ic.ChannelConfig(ue_speed_mps=10/3.6, seed=11)
tf10 = ic.generate_dataset(ch10, 25, base_seed=5000)
ts10 = ic.build_samples(tf10, ic.PilotPattern(), 10.0, seed=77)
xb = np.stack([s.x for s in ts10]); yb = np.stack([s.y for s in ts10])
for eps, tau in ((0.5,10),(0.1,10),(0.01,20),(0.001,30)):
    res = sv.deq_forward_batch(xb, params, ic.SolveConfig(eps=eps, max_iters=tau))
    net = np.mean([nmse(res.z_star[i], yb[i]) for i in range(len(ts10))])
    print(f"table1 eps={eps} tau={tau}: iterf {res.iters_used.mean():.2f} nmse {net:.5f} frac_conv {res.converged.mean():.2f}", flush=True)
