import csv

import numpy as np
import pytest

from icenet import (IEBConfig, MissingArtifactError, RunConfig,
                    init_params, run_depth_comparison,
                    run_iteration_histogram, run_snr_sweep, run_table1,
                    save_params)
from icenet.evaluate import TABLE1_SETTINGS
from icenet.explicit import ECENetConfig, init_ecenet, save_ecenet


@pytest.fixture(scope="module")
def artifacts(tmp_path_factory):
    root = tmp_path_factory.mktemp("artifacts")
    ckpt = root / "icenet.ckpt"
    save_params(init_params(IEBConfig(hidden_width=16, seed=8)), ckpt)
    ece_paths = {}
    for n in (1, 2):
        p = root / f"ecenet_n{n}.ckpt"
        block = IEBConfig(hidden_width=16, seed=8)
        save_ecenet(init_ecenet(ECENetConfig(n_blocks=n, block_cfg=block,
                                             seed=8)), p)
        ece_paths[n] = str(p)
    return str(ckpt), ece_paths, root


def tiny_run(ckpt, out_dir, **kw):
    base = dict(snr_grid_db=(-10.0, 10.0), eps=0.5, tau=5, seed=3,
                out_dir=str(out_dir), checkpoint=ckpt, n_test_frames=2,
                n_calib_frames=4)
    base.update(kw)
    return RunConfig(**base)


def read_csv(path):
    with open(path) as f:
        return list(csv.reader(f))


def test_snr_sweep_columns_and_oracle(artifacts, tmp_path):
    ckpt, _, _ = artifacts
    path = run_snr_sweep(tiny_run(ckpt, tmp_path))
    rows = read_csv(path)
    assert rows[0] == ["method", "snr", "mean_nmse", "mean_iters"]
    oracle = [r for r in rows[1:] if r[0] == "oracle"]
    assert len(oracle) == 2
    assert all(float(r[2]) == 0.0 for r in oracle)
    methods = {r[0] for r in rows[1:]}
    assert methods == {"oracle", "ls_li", "ft", "lmmse", "icenet"}
    icenet_rows = [r for r in rows[1:] if r[0] == "icenet"]
    assert all(r[3] != "" for r in icenet_rows)
    ls_rows = [r for r in rows[1:] if r[0] == "ls_li"]
    assert all(r[3] == "" for r in ls_rows)


def test_snr_sweep_deterministic(artifacts, tmp_path):
    ckpt, _, _ = artifacts
    d1 = tmp_path / "a"
    d2 = tmp_path / "b"
    d1.mkdir(), d2.mkdir()
    p1 = run_snr_sweep(tiny_run(ckpt, d1))
    p2 = run_snr_sweep(tiny_run(ckpt, d2))
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_table1_rows(artifacts, tmp_path):
    ckpt, _, _ = artifacts
    path = run_table1(tiny_run(ckpt, tmp_path))
    rows = read_csv(path)
    assert rows[0] == ["eps", "tau", "iterf_mean", "param_count", "test_nmse"]
    assert len(rows) == 1 + len(TABLE1_SETTINGS)
    counts = {r[3] for r in rows[1:]}
    assert len(counts) == 1  # parameter count identical in every row
    assert [float(r[0]) for r in rows[1:]] == [0.5, 0.1, 0.01, 0.001]


def test_iteration_histogram_conserves_mass(artifacts, tmp_path):
    ckpt, _, _ = artifacts
    run = tiny_run(ckpt, tmp_path, eps=1e-2, tau=10)
    path, mean_iters = run_iteration_histogram(run)
    rows = read_csv(path)
    assert rows[0] == ["iters_used", "sample_count"]
    assert [int(r[0]) for r in rows[1:]] == list(range(1, 11))
    total = sum(int(r[1]) for r in rows[1:])
    assert total == run.n_test_frames * 8
    assert mean_iters >= 1.0


def test_depth_comparison(artifacts, tmp_path):
    ckpt, ece_paths, _ = artifacts
    run = tiny_run(ckpt, tmp_path, ecenet_checkpoints=ece_paths)
    path = run_depth_comparison(run)
    rows = read_csv(path)
    assert rows[0] == ["model_label", "param_count", "mean_nmse"]
    labels = [r[0] for r in rows[1:]]
    assert labels[0] == "ecenet_n1" and labels[1] == "ecenet_n2"
    assert labels[2].startswith("icenet_effdepth_")
    assert int(rows[2][1]) == 2 * int(rows[1][1])  # linear in depth


def test_missing_checkpoint_raises(tmp_path):
    run = tiny_run(str(tmp_path / "nope.ckpt"), tmp_path)
    with pytest.raises(MissingArtifactError):
        run_table1(run)


def test_snr_grid_validated(artifacts, tmp_path):
    from icenet import ConfigurationError
    ckpt, _, _ = artifacts
    run = tiny_run(ckpt, tmp_path, snr_grid_db=(-20.0, 0.0))
    with pytest.raises(ConfigurationError):
        run_snr_sweep(run)
