import numpy as np
import pytest

import icenet.training as tr_mod
from icenet import (ChannelConfig, ConfigurationError, DivergenceError,
                    IEBConfig, PilotPattern, SolveConfig, build_samples,
                    generate_dataset, load_params, lr_at, nmse,
                    split_dataset)
from icenet.explicit import ECENetConfig
from icenet.training import TrainConfig, eval_nmse_icenet, export_train_report, train

SMALL_BLOCK = IEBConfig(hidden_width=8, kernel_sizes=(3, 3), n_sub_blocks=2,
                        seed=1)
SMALL_PATTERN = PilotPattern(pilot_symbol_indices=(1, 4))


def small_dataset(n_frames=6, seed=13, snr=(-10.0, 15.0)):
    cfg = ChannelConfig(n_subcarriers=16, n_symbols=6, n_rx=2,
                        ue_speed_mps=100 / 3.6, seed=seed)
    frames = generate_dataset(cfg, n_frames, base_seed=0)
    return build_samples(frames, SMALL_PATTERN, snr, seed=seed)


def small_train_cfg(**kw):
    base = dict(epochs=2, batch_size=4, split_sizes=(8, 2, 2), seed=3)
    base.update(kw)
    return TrainConfig(**base)


SOLVE = SolveConfig(eps=1e-3, max_iters=12)


def test_lr_schedule_endpoints():
    cfg = TrainConfig(epochs=100, cosine_period_epochs=50)
    assert lr_at(0, cfg) == pytest.approx(1e-3, rel=1e-12)
    # midpoint of the cycle: lr_final + half the range
    assert lr_at(25, cfg) == pytest.approx(1e-5 + 0.5 * (1e-3 - 1e-5),
                                           rel=1e-12)
    # last epoch of the cycle: the formula's exact value at phase 49/50
    expected_49 = 1e-5 + 0.5 * (1e-3 - 1e-5) * (1 + np.cos(np.pi * 49 / 50))
    assert lr_at(49, cfg) == pytest.approx(expected_49, rel=1e-12)
    assert expected_49 < 1.1e-5
    # cosine restart at the period boundary
    assert lr_at(50, cfg) == pytest.approx(1e-3, rel=1e-12)
    with pytest.raises(ValueError):
        lr_at(100, cfg)


def test_train_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(lr_final=1e-2).validate()  # final > init
    with pytest.raises(ConfigurationError):
        TrainConfig(batch_size=0).validate()
    with pytest.raises(ConfigurationError):
        TrainConfig(split_sizes=(10, 0, 2)).validate()


def test_split_dataset_disjoint():
    data = list(range(20))
    a, b, c = split_dataset(data, (10, 5, 3))
    assert (a, b, c) == (list(range(10)), list(range(10, 15)),
                         list(range(15, 18)))
    with pytest.raises(ConfigurationError):
        split_dataset(data, (15, 5, 5))


def test_seeded_rerun_identical_epoch0_loss():
    data = small_dataset()
    r1, _ = train("icenet", data, small_train_cfg(epochs=1), SOLVE,
                  ieb_cfg=SMALL_BLOCK)
    r2, _ = train("icenet", data, small_train_cfg(epochs=1), SOLVE,
                  ieb_cfg=SMALL_BLOCK)
    assert r1.train_loss[0] == r2.train_loss[0]
    assert r1.val_nmse[0] == r2.val_nmse[0]


def test_report_lengths_match_epochs():
    data = small_dataset()
    report, _ = train("icenet", data, small_train_cfg(epochs=2), SOLVE,
                      ieb_cfg=SMALL_BLOCK)
    assert len(report.train_loss) == 2
    assert len(report.val_nmse) == 2
    assert len(report.lr_trace) == 2
    assert len(report.divergence_flags) == 2


def test_overfit_small_subset():
    # a handful of samples memorized to low NMSE: the loop works end-to-end.
    # The validation slice duplicates training samples so that best-val
    # checkpointing tracks the memorization itself.
    block = IEBConfig(hidden_width=16, kernel_sizes=(3, 3, 3, 5), seed=1)
    data = small_dataset(n_frames=6, snr=10.0)
    train_part = data[:10]
    dataset = train_part + train_part[:2]
    solve = SolveConfig(eps=1e-3, max_iters=20)
    cfg = small_train_cfg(epochs=180, batch_size=5, split_sizes=(10, 2, 0),
                          lr_init=3e-3, lr_final=3e-4,
                          cosine_period_epochs=180)
    report, params = train("icenet", dataset, cfg, solve, ieb_cfg=block)
    train_nmse, _, _ = eval_nmse_icenet(train_part, params, solve)
    assert train_nmse < 1e-2


def test_checkpoint_roundtrip_reproduces_val_nmse(tmp_path):
    data = small_dataset()
    ckpt = tmp_path / "m.ckpt"
    report, params = train("icenet", data, small_train_cfg(), SOLVE,
                           ieb_cfg=SMALL_BLOCK, checkpoint_path=ckpt)
    loaded = load_params(ckpt)
    val_set = split_dataset(data, (8, 2, 2))[1]
    val, _, _ = eval_nmse_icenet(val_set, loaded, SOLVE)
    assert val == report.final_val_nmse


def test_icenet_requires_solve_config():
    with pytest.raises(ConfigurationError):
        train("icenet", small_dataset(), small_train_cfg())


def test_unknown_model_rejected():
    with pytest.raises(ConfigurationError):
        train("resnet", small_dataset(), small_train_cfg(), SOLVE)


def test_ecenet_training_improves_loss():
    data = small_dataset(n_frames=8, snr=5.0)
    cfg = small_train_cfg(epochs=8, split_sizes=(12, 2, 2))
    ecfg = ECENetConfig(n_blocks=2, block_cfg=SMALL_BLOCK, seed=2)
    report, params = train("ecenet", data, cfg, ecenet_cfg=ecfg)
    assert report.train_loss[-1] < report.train_loss[0]
    assert len(params) == 2


def test_divergence_abort(monkeypatch):
    data = small_dataset()

    def exploding(*args, **kwargs):
        raise DivergenceError("synthetic adjoint blowup")

    monkeypatch.setattr(tr_mod.solver, "deq_backward_batch", exploding)
    with pytest.raises(DivergenceError, match="abort"):
        train("icenet", data, small_train_cfg(epochs=1), SOLVE,
              ieb_cfg=SMALL_BLOCK)


def test_spectral_radius_estimate_matches_dense_jacobian():
    # oracle: assemble the full Jacobian row-by-row via vjp_z and compare
    # its leading eigenvalue magnitude with the power-iteration estimate
    from icenet import vjp_z
    from icenet.block import forward_with_cache, init_params
    from icenet.training import estimate_iterate_spectral_radius
    params = init_params(IEBConfig(hidden_width=8, kernel_sizes=(3, 3),
                                   n_sub_blocks=2, seed=6),
                         dtype=np.float64)
    rng = np.random.default_rng(4)
    z = rng.standard_normal((1, 2, 4, 3))
    x = rng.standard_normal((1, 2, 4, 3))
    _, cache = forward_with_cache(z, x, params)
    n = z.size
    jt = np.zeros((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        jt[i] = vjp_z(z, x, params, e.reshape(z.shape),
                      cache=cache).reshape(-1)
    rho_true = float(np.abs(np.linalg.eigvals(jt)).max())
    rho_est = estimate_iterate_spectral_radius(params, z, x, 1, 40,
                                               np.random.default_rng(0))
    assert abs(rho_est - rho_true) / rho_true < 0.05


def test_jacobian_cap_shrinks_iterate_pathway():
    # an absurdly tight cap forces the controller to shrink the iterate
    # projection every step; the uncapped run leaves it free
    from icenet import deq_forward_batch
    from icenet.training import estimate_iterate_spectral_radius
    data = small_dataset(n_frames=8, snr=10.0)
    solve = SolveConfig(eps=1e-3, max_iters=20)

    def rho_after(cap):
        cfg = small_train_cfg(epochs=2, batch_size=8, split_sizes=(8, 2, 2),
                              iterate_jacobian_cap=cap)
        _, params = train("icenet", data, cfg, solve, ieb_cfg=SMALL_BLOCK)
        xb = np.stack([s.x for s in data[:8]])
        res = deq_forward_batch(xb, params, solve)
        return estimate_iterate_spectral_radius(
            params, res.z_star, xb, 8, 6, np.random.default_rng(0))

    assert rho_after(0.01) < 0.5 * rho_after(0.0)


def test_export_train_report_deterministic(tmp_path):
    data = small_dataset()
    report, _ = train("icenet", data, small_train_cfg(), SOLVE,
                      ieb_cfg=SMALL_BLOCK)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    export_train_report(report, p1)
    export_train_report(report, p2)
    assert p1.read_bytes() == p2.read_bytes()
    header = p1.read_text().splitlines()[0]
    assert header == "epoch,lr,train_loss,val_nmse,mean_iters"
