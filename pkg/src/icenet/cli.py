"""Command-line driver.

Subcommands: gen-data, train, eval-sweep, table1, iter-hist,
depth-compare.  Options come from an optional plain-text key=value config
file plus flags (flags win).  Exit codes: 0 success, 2 config error,
3 missing artifact, 4 numerical divergence.
"""

import argparse
import os
import sys

import numpy as np

from . import evaluate
from .block import IEBConfig
from .channel import ChannelConfig, generate_dataset
from .errors import (ConfigurationError, DatasetFormatError, DivergenceError,
                     IcenetError, MissingArtifactError, NumericError)
from .evaluate import RunConfig
from .explicit import ECENetConfig
from .ofdm import PilotPattern, build_samples, load_dataset, save_dataset
from .solver import SolveConfig
from .training import TrainConfig, export_train_report, train

_KNOWN_KEYS = {
    "seed", "out_dir", "speed_kmh", "eps", "tau", "checkpoint", "model",
    "snr_db", "snr_lo", "snr_hi", "noiseless", "n_frames", "n_test_frames",
    "n_calib_frames", "dataset", "epochs", "batch_size", "lr_init",
    "lr_final", "cosine_period", "split", "hidden_width", "kernel_sizes",
    "history_m", "snr_grid", "ecenet_blocks",
}


def parse_config_file(path) -> dict:
    """key=value per line; '#' starts a comment; values stay strings."""
    if not os.path.exists(path):
        raise MissingArtifactError(f"config file not found: {path}")
    out = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(
                    f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _KNOWN_KEYS and not key.startswith("ecenet_n"):
                raise ConfigurationError(
                    f"{path}:{lineno}: unknown config key {key!r}")
            out[key] = value
    return out


def _opt(cfg, args, key, cast, default):
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in cfg:
        try:
            return cast(cfg[key])
        except ValueError as exc:
            raise ConfigurationError(
                f"config key {key}={cfg[key]!r}: {exc}") from exc
    return default


def _floats(text):
    return tuple(float(v) for v in str(text).split(","))


def _ints(text):
    return tuple(int(v) for v in str(text).split(","))


def _snr_policy(cfg, args):
    if int(cfg.get("noiseless", "0")):
        return None
    if getattr(args, "snr_db", None) is not None:
        return float(args.snr_db)
    if "snr_db" in cfg:
        return float(cfg["snr_db"])
    lo = float(cfg.get("snr_lo", "-10"))
    hi = float(cfg.get("snr_hi", "15"))
    return (lo, hi)


def _run_config(cfg, args) -> RunConfig:
    speed = _opt(cfg, args, "speed_kmh", float, 100.0)
    run = RunConfig(
        speed_kmh=speed,
        snr_grid_db=_floats(cfg["snr_grid"]) if "snr_grid" in cfg
        else RunConfig.snr_grid_db,
        eps=_opt(cfg, args, "eps", float, 1e-2),
        tau=_opt(cfg, args, "tau", int, 10),
        seed=_opt(cfg, args, "seed", int, 7),
        out_dir=_opt(cfg, args, "out_dir", str, "."),
        checkpoint=_opt(cfg, args, "checkpoint", str, None),
        ecenet_checkpoints={
            int(k[len("ecenet_n"):]): v for k, v in cfg.items()
            if k.startswith("ecenet_n")},
        n_test_frames=_opt(cfg, args, "n_test_frames", int, 25),
        n_calib_frames=_opt(cfg, args, "n_calib_frames", int, 100),
    )
    run.validate()
    return run


def _cmd_gen_data(cfg, args):
    seed = _opt(cfg, args, "seed", int, 7)
    speed = _opt(cfg, args, "speed_kmh", float, 100.0)
    n_frames = _opt(cfg, args, "n_frames", int, 125)
    out_dir = _opt(cfg, args, "out_dir", str, ".")
    channel = ChannelConfig(ue_speed_mps=speed / 3.6, seed=seed)
    frames = generate_dataset(channel, n_frames, base_seed=0)
    pattern = PilotPattern()
    samples = build_samples(frames, pattern, _snr_policy(cfg, args),
                            seed=seed)
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "dataset.iced")
    save_dataset(samples, path, pattern=pattern, channel_config=channel)
    print(f"wrote {len(samples)} samples to {path}")
    return 0


def _auto_split(n):
    n_train = max(1, int(round(0.75 * n)))
    n_val = max(1, int(round(0.15 * n)))
    n_test = max(0, n - n_train - n_val)
    return (n_train, n_val, n_test)


def _cmd_train(cfg, args):
    model = _opt(cfg, args, "model", str, "icenet")
    seed = _opt(cfg, args, "seed", int, 7)
    out_dir = _opt(cfg, args, "out_dir", str, ".")
    os.makedirs(out_dir, exist_ok=True)

    if "dataset" in cfg:
        dataset = load_dataset(cfg["dataset"])
    else:
        speed = _opt(cfg, args, "speed_kmh", float, 100.0)
        n_frames = _opt(cfg, args, "n_frames", int, 125)
        channel = ChannelConfig(ue_speed_mps=speed / 3.6, seed=seed)
        frames = generate_dataset(channel, n_frames, base_seed=0)
        dataset = build_samples(frames, PilotPattern(),
                                _snr_policy(cfg, args), seed=seed)

    split = _ints(cfg["split"]) if "split" in cfg else _auto_split(
        len(dataset))
    train_cfg = TrainConfig(
        lr_init=float(cfg.get("lr_init", 1e-3)),
        lr_final=float(cfg.get("lr_final", 1e-5)),
        epochs=_opt(cfg, args, "epochs", int, 6),
        cosine_period_epochs=int(cfg.get("cosine_period", 50)),
        batch_size=int(cfg.get("batch_size", 20)),
        split_sizes=split,
        seed=seed,
    )
    solve_cfg = SolveConfig(
        eps=_opt(cfg, args, "eps", float, 1e-3),
        max_iters=_opt(cfg, args, "tau", int, 20),
        history_m=int(cfg.get("history_m", 5)),
    )
    ieb_cfg = IEBConfig(
        hidden_width=int(cfg.get("hidden_width", 32)),
        kernel_sizes=_ints(cfg["kernel_sizes"]) if "kernel_sizes" in cfg
        else (3, 3, 3, 5),
        n_sub_blocks=len(_ints(cfg["kernel_sizes"]))
        if "kernel_sizes" in cfg else 4,
        seed=seed)

    if model == "icenet":
        ckpt = os.path.join(out_dir, "icenet.ckpt")
        report, _ = train("icenet", dataset, train_cfg, solve_cfg,
                          ieb_cfg=ieb_cfg, checkpoint_path=ckpt)
    elif model == "ecenet":
        n_blocks = int(cfg.get("ecenet_blocks", 4))
        ckpt = os.path.join(out_dir, f"ecenet_n{n_blocks}.ckpt")
        ecenet_cfg = ECENetConfig(n_blocks=n_blocks, block_cfg=ieb_cfg,
                                  seed=seed)
        report, _ = train("ecenet", dataset, train_cfg,
                          ecenet_cfg=ecenet_cfg, checkpoint_path=ckpt)
    else:
        raise ConfigurationError(f"unknown model {model!r}")
    report_path = os.path.join(out_dir, "train_report.csv")
    export_train_report(report, report_path)
    print(f"best val NMSE {report.final_val_nmse:.6g} "
          f"(epoch {report.best_epoch}); checkpoint {ckpt}; "
          f"report {report_path}")
    return 0


def _cmd_eval_sweep(cfg, args):
    path = evaluate.run_snr_sweep(_run_config(cfg, args))
    print(f"wrote {path}")
    return 0


def _cmd_table1(cfg, args):
    path = evaluate.run_table1(_run_config(cfg, args))
    print(f"wrote {path}")
    return 0


def _cmd_iter_hist(cfg, args):
    path, mean_iters = evaluate.run_iteration_histogram(_run_config(cfg, args))
    print(f"wrote {path} (mean iterations {mean_iters:.3f})")
    return 0


def _cmd_depth_compare(cfg, args):
    path = evaluate.run_depth_comparison(_run_config(cfg, args))
    print(f"wrote {path}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval-sweep": _cmd_eval_sweep,
    "table1": _cmd_table1,
    "iter-hist": _cmd_iter_hist,
    "depth-compare": _cmd_depth_compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="icenet",
        description="Adaptive implicit-equilibrium channel estimation lab")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None,
                       help="plain-text key=value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out-dir", dest="out_dir", default=None)
        p.add_argument("--speed-kmh", dest="speed_kmh", type=float,
                       default=None)
        p.add_argument("--snr-db", dest="snr_db", type=float, default=None)
        p.add_argument("--eps", type=float, default=None)
        p.add_argument("--tau", type=int, default=None)
        p.add_argument("--model", default=None)
        p.add_argument("--checkpoint", default=None)
        if name in ("gen-data", "train"):
            p.add_argument("--n-frames", dest="n_frames", type=int,
                           default=None)
        if name == "train":
            p.add_argument("--epochs", type=int, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config_file(args.config) if args.config else {}
        return _COMMANDS[args.command](cfg, args)
    except (ConfigurationError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (MissingArtifactError, FileNotFoundError) as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return 3
    except (DivergenceError, NumericError) as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return 4
    except DatasetFormatError as exc:
        print(f"malformed artifact: {exc}", file=sys.stderr)
        return 3
    except IcenetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
