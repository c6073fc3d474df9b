"""Explicit multilayer-stacked counterpart of the equilibrium estimator.

The same lightweight block architecture, but n independent copies applied
in sequence (each with its own parameters, each re-injecting the input x).
With every block holding tied copies of one parameter set, the stack is
exactly k unrolled fixed-point iterations from z0 = x -- the bridge
identity between the explicit and implicit views.

Training this net stores one workspace per block (memory grows with
depth), in contrast to the equilibrium path whose retention is constant.
"""

import struct
from dataclasses import dataclass, replace

import numpy as np

from . import block as ieb
from .errors import ConfigurationError, DatasetFormatError, ShapeError

ECE_MAGIC = b"ECEP"
ECE_VERSION = 1


@dataclass(frozen=True)
class ECENetConfig:
    n_blocks: int = 9
    block_cfg: ieb.IEBConfig = ieb.IEBConfig()
    seed: int = 0

    def validate(self):
        if self.n_blocks < 1:
            raise ConfigurationError(
                f"n_blocks must be >= 1, got {self.n_blocks}")
        self.block_cfg.validate()


def init_ecenet(cfg: ECENetConfig, dtype=np.float32) -> list:
    """One independently seeded parameter set per block."""
    cfg.validate()
    seeds = np.random.SeedSequence([cfg.seed, 0xECE]).generate_state(
        cfg.n_blocks, np.uint64) >> 1  # keep seeds within int64 range
    return [ieb.init_params(replace(cfg.block_cfg, seed=int(s)), dtype=dtype)
            for s in seeds]


def ecenet_param_count(cfg: ECENetConfig) -> int:
    """Strictly linear in depth: n_blocks disjoint copies of one block."""
    cfg.validate()
    return cfg.n_blocks * ieb.config_param_count(cfg.block_cfg)


def ecenet_forward(x, params_list) -> np.ndarray:
    """z0 = x; z_{i+1} = block_i(z_i, x); returns z_n."""
    if len(params_list) == 0:
        raise ShapeError("params_list must hold at least one block")
    z = np.asarray(x)
    for p in params_list:
        z = ieb.forward(z, x, p)
    return z


def ecenet_forward_train(x, params_list):
    """Forward pass that keeps one workspace per block for the backward
    sweep; returns (output, caches).  len(caches) == n_blocks is the
    training-graph memory that the implicit estimator avoids."""
    if len(params_list) == 0:
        raise ShapeError("params_list must hold at least one block")
    z = np.asarray(x)
    caches = []
    for p in params_list:
        z, cache = ieb.forward_with_cache(z, x, p)
        caches.append(cache)
    return z, caches


def retained_tensor_count(caches) -> int:
    """How many activation arrays the training graph keeps alive."""
    total = 0
    for c in caches:
        total += len(c["hs"]) + len(c["xhats"]) + len(c["masks"])
        total += len(c["inv_stds"]) + len(c["wnorms"])
    return total


def ecenet_backward(x, params_list, caches, grad_out):
    """Reverse accumulation through the stack; per-block parameter grads.

    Gradients w.r.t. the data input x are not needed for training and are
    dropped.
    """
    if len(caches) != len(params_list):
        raise ShapeError("caches and params_list lengths differ")
    grads = [None] * len(params_list)
    g = grad_out
    for i in reversed(range(len(params_list))):
        g, grads[i] = ieb.vjp_all(caches[i]["zb"], x, params_list[i], g,
                                  cache=caches[i])
    return grads


def save_ecenet(params_list, path):
    """Checkpoint format shared with the single block: one config echo,
    then per-block flat f32 sections in order."""
    if len(params_list) == 0:
        raise ShapeError("nothing to save")
    cfg = params_list[0].cfg
    header = struct.pack("<4sII", ECE_MAGIC, ECE_VERSION, len(params_list))
    block_head = struct.pack("<IIIIQ", cfg.hidden_width, cfg.n_sub_blocks,
                             ieb._NORM_CODES[cfg.norm], 0, cfg.seed)
    kernels = struct.pack(f"<{cfg.n_sub_blocks}I", *cfg.kernel_sizes)
    with open(path, "wb") as f:
        f.write(header)
        f.write(block_head)
        f.write(kernels)
        per_block = params_list[0].n_params
        f.write(struct.pack("<Q", per_block))
        for p in params_list:
            flat = p.to_flat().astype("<f4")
            if flat.size != per_block:
                raise ShapeError("blocks disagree on parameter count")
            f.write(flat.tobytes())


def load_ecenet(path, dtype=np.float32) -> list:
    with open(path, "rb") as f:
        blob = f.read()
    head = struct.Struct("<4sII")
    if len(blob) < head.size:
        raise DatasetFormatError("checkpoint shorter than header",
                                 offset=len(blob))
    magic, version, n_blocks = head.unpack_from(blob, 0)
    if magic != ECE_MAGIC:
        raise DatasetFormatError(f"bad checkpoint magic {magic!r}", offset=0)
    if version != ECE_VERSION:
        raise DatasetFormatError(f"unsupported checkpoint version {version}",
                                 offset=4)
    off = head.size
    width, n_sub, norm_code, _inj, seed = struct.unpack_from("<IIIIQ", blob,
                                                             off)
    off += struct.calcsize("<IIIIQ")
    kernels = struct.unpack_from(f"<{n_sub}I", blob, off)
    off += 4 * n_sub
    (per_block,) = struct.unpack_from("<Q", blob, off)
    off += 8
    expected = off + 4 * per_block * n_blocks
    if len(blob) != expected:
        raise DatasetFormatError(
            f"checkpoint length mismatch: expected {expected} bytes, got "
            f"{len(blob)}", offset=min(expected, len(blob)))
    cfg = ieb.IEBConfig(hidden_width=width, n_sub_blocks=n_sub,
                        kernel_sizes=tuple(kernels),
                        norm=ieb._NORM_NAMES[norm_code], seed=seed)
    out = []
    for _ in range(n_blocks):
        flat = np.frombuffer(blob, dtype="<f4", count=per_block, offset=off)
        off += 4 * per_block
        out.append(ieb.IEBParams.from_flat(cfg, flat.copy(), dtype=dtype))
    return out
