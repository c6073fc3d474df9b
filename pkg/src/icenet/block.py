"""The weight-tied transformation f(z, x) at the core of the implicit
estimator, with analytic vector-Jacobian products.

Architecture: 1x1 input projection of the iterate z plus a 1x1 additive
projection of the conditioning input x, then a short stack of same-padded
convolutions (small kernels first, the largest kernel last), each followed
by a normalization layer and a rectifier, and a plain 1x1 readout back to
the two real/imag planes.  The readout has no skip connection -- recurrence
comes from the fixed-point iteration, not the block.

Everything is plain numpy.  Convolutions go through im2col + GEMM; the
backward passes are written out by hand and are validated against
finite-difference oracles in the test suite.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (ConfigurationError, DatasetFormatError, NumericError,
                     ShapeError)

CKPT_MAGIC = b"IEBP"
CKPT_VERSION = 1
_NORM_CODES = {"group_norm": 0, "weight_scaled": 1}
_NORM_NAMES = {v: k for k, v in _NORM_CODES.items()}
_VAR_EPS = 1e-10  # floors normalization denominators at 1e-5
_WNORM_FLOOR = 1e-5
_GROUPS = 8


@dataclass(frozen=True)
class IEBConfig:
    """Hyper-parameters of the equilibrium block.

    ``norm`` picks the per-stage normalization: "weight_scaled" (default)
    normalizes convolution kernels per output channel and keeps the
    fixed-point map's Jacobian essentially independent of the input's
    power; "group_norm" standardizes activations per channel group, which
    conditions training well but couples the iterate sensitivity to the
    observation scale.
    """

    hidden_width: int = 32
    n_sub_blocks: int = 4
    kernel_sizes: tuple = (3, 3, 3, 5)
    norm: str = "weight_scaled"
    injection: str = "additive_projection"
    seed: int = 0

    def validate(self):
        if self.hidden_width < 1:
            raise ConfigurationError(
                f"hidden_width must be >= 1, got {self.hidden_width}")
        if self.n_sub_blocks < 1:
            raise ConfigurationError(
                f"n_sub_blocks must be >= 1, got {self.n_sub_blocks}")
        if len(self.kernel_sizes) != self.n_sub_blocks:
            raise ConfigurationError(
                f"n_sub_blocks={self.n_sub_blocks} but "
                f"{len(self.kernel_sizes)} kernel sizes given")
        for k in self.kernel_sizes:
            if k < 1 or k % 2 == 0:
                raise ConfigurationError(
                    f"kernel sizes must be odd and >= 1 for exact "
                    f"same-padding, got {k}")
        if any(k > self.kernel_sizes[-1] for k in self.kernel_sizes[:-1]):
            raise ConfigurationError(
                "the last kernel must be >= every earlier kernel, got "
                f"{self.kernel_sizes}")
        if self.norm not in _NORM_CODES:
            raise ConfigurationError(f"unknown norm {self.norm!r}")
        if self.injection != "additive_projection":
            raise ConfigurationError(
                f"unknown injection {self.injection!r}")

    @property
    def n_groups(self):
        return _GROUPS if self.hidden_width % _GROUPS == 0 else 1


@dataclass
class IEBParams:
    """All trainable weights, in the canonical flat order:

    proj_in_w, proj_in_b, proj_inj_w, then per stage
    (conv_w, norm_gamma, norm_beta), then proj_out_w, proj_out_b.
    """

    cfg: IEBConfig
    proj_in_w: np.ndarray
    proj_in_b: np.ndarray
    proj_inj_w: np.ndarray
    conv_w: list
    gamma: list
    beta: list
    proj_out_w: np.ndarray
    proj_out_b: np.ndarray

    def arrays(self):
        out = [self.proj_in_w, self.proj_in_b, self.proj_inj_w]
        for i in range(self.cfg.n_sub_blocks):
            out += [self.conv_w[i], self.gamma[i], self.beta[i]]
        out += [self.proj_out_w, self.proj_out_b]
        return out

    @property
    def dtype(self):
        return self.proj_in_w.dtype

    @property
    def n_params(self):
        return sum(a.size for a in self.arrays())

    def to_flat(self) -> np.ndarray:
        return np.concatenate([a.reshape(-1) for a in self.arrays()])

    @classmethod
    def from_flat(cls, cfg: IEBConfig, flat: np.ndarray, dtype=None):
        cfg.validate()
        dtype = flat.dtype if dtype is None else dtype
        h = cfg.hidden_width
        shapes = [(h, 2), (h,), (h, 2)]
        for k in cfg.kernel_sizes:
            shapes += [(h, h, k, k), (h,), (h,)]
        shapes += [(2, h), (2,)]
        total = sum(int(np.prod(s)) for s in shapes)
        if flat.size != total:
            raise ShapeError(
                f"flat vector has {flat.size} entries, config needs {total}")
        parts = []
        off = 0
        for s in shapes:
            n = int(np.prod(s))
            parts.append(np.asarray(flat[off:off + n], dtype=dtype).reshape(s))
            off += n
        conv_w = [parts[3 + 3 * i] for i in range(cfg.n_sub_blocks)]
        gamma = [parts[4 + 3 * i] for i in range(cfg.n_sub_blocks)]
        beta = [parts[5 + 3 * i] for i in range(cfg.n_sub_blocks)]
        return cls(cfg=cfg, proj_in_w=parts[0], proj_in_b=parts[1],
                   proj_inj_w=parts[2], conv_w=conv_w, gamma=gamma,
                   beta=beta, proj_out_w=parts[-2], proj_out_b=parts[-1])

    def astype(self, dtype):
        return IEBParams.from_flat(self.cfg, self.to_flat().astype(dtype))


def param_count(params: IEBParams) -> int:
    """Total trainable scalar count; a pure function of the config and in
    particular independent of any solver setting."""
    return params.n_params


def config_param_count(cfg: IEBConfig) -> int:
    """param_count computed from the config alone."""
    cfg.validate()
    h = cfg.hidden_width
    total = h * 2 + h + h * 2  # both 1x1 projections + input bias
    for k in cfg.kernel_sizes:
        total += h * h * k * k + 2 * h  # conv + norm affine
    total += 2 * h + 2  # readout
    return total


def init_params(cfg: IEBConfig, dtype=np.float32) -> IEBParams:
    """Seeded fan-in-scaled initialization.

    The readout (final convolution) is additionally scaled by 0.1 so the
    map starts strongly contractive.  Draws happen in float64 and are cast,
    so the same config gives identical parameters at any dtype.
    """
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x1EB]))
    h = cfg.hidden_width

    def draw(shape, fan_in, scale=1.0):
        w = rng.standard_normal(shape) * (scale / np.sqrt(fan_in))
        return w.astype(dtype)

    proj_in_w = draw((h, 2), 2)
    proj_in_b = np.zeros(h, dtype=dtype)
    proj_inj_w = draw((h, 2), 2)
    conv_w, gamma, beta = [], [], []
    for k in cfg.kernel_sizes:
        conv_w.append(draw((h, h, k, k), h * k * k))
        gamma.append(np.ones(h, dtype=dtype))
        beta.append(np.zeros(h, dtype=dtype))
    proj_out_w = draw((2, h), h, scale=0.1)
    proj_out_b = np.zeros(2, dtype=dtype)
    return IEBParams(cfg=cfg, proj_in_w=proj_in_w, proj_in_b=proj_in_b,
                     proj_inj_w=proj_inj_w, conv_w=conv_w, gamma=gamma,
                     beta=beta, proj_out_w=proj_out_w, proj_out_b=proj_out_b)


def _proj(w: np.ndarray, h: np.ndarray) -> np.ndarray:
    """1x1 convolution: w [O, C] applied channel-wise to h [B, C, S, T]."""
    return np.tensordot(w, h, axes=([1], [1])).transpose(1, 0, 2, 3)


def _proj_adjoint(w: np.ndarray, g: np.ndarray) -> np.ndarray:
    return np.tensordot(w, g, axes=([0], [1])).transpose(1, 0, 2, 3)


def _proj_wgrad(g: np.ndarray, h: np.ndarray) -> np.ndarray:
    return np.tensordot(g, h, axes=([0, 2, 3], [0, 2, 3]))


def _im2col(h: np.ndarray, k: int) -> np.ndarray:
    """Same-padded patch matrix [B, S*T, C*k*k] of h [B, C, S, T]."""
    b, c, s, t = h.shape
    p = k // 2
    hp = np.pad(h, ((0, 0), (0, 0), (p, p), (p, p)))
    win = np.lib.stride_tricks.sliding_window_view(hp, (k, k), axis=(2, 3))
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b, s * t, c * k * k)


def _conv2d_same(h: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Stride-1 same-padding 2D correlation, w [O, C, k, k]."""
    b, _, s, t = h.shape
    o, _, k, _ = w.shape
    col = _im2col(h, k)
    out = col @ w.reshape(o, -1).T
    return out.transpose(0, 2, 1).reshape(b, o, s, t)


def _conv2d_adjoint(g: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Adjoint of _conv2d_same w.r.t. its input (exact for odd kernels)."""
    w_t = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    return _conv2d_same(g, np.ascontiguousarray(w_t))


def _conv2d_wgrad(g: np.ndarray, h: np.ndarray, k: int) -> np.ndarray:
    """Gradient w.r.t. the kernel: recomputes the patch matrix from h."""
    b, o, s, t = g.shape
    c = h.shape[1]
    col = _im2col(h, k).reshape(b * s * t, c * k * k)
    g2 = g.transpose(0, 2, 3, 1).reshape(b * s * t, o)
    return (g2.T @ col).reshape(o, c, k, k)


def _gn_forward(c: np.ndarray, gamma, beta, n_groups):
    b, h, s, t = c.shape
    grouped = c.reshape(b, n_groups, h // n_groups, s, t)
    mu = grouped.mean(axis=(2, 3, 4), keepdims=True)
    var = grouped.var(axis=(2, 3, 4), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + np.asarray(_VAR_EPS, dtype=c.dtype))
    xhat = ((grouped - mu) * inv_std).reshape(b, h, s, t)
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return out, xhat, inv_std


def _gn_backward_input(g, xhat, inv_std, gamma, n_groups):
    b, h, s, t = g.shape
    dxhat = (g * gamma[None, :, None, None]).reshape(
        b, n_groups, h // n_groups, s, t)
    xh = xhat.reshape(b, n_groups, h // n_groups, s, t)
    m1 = dxhat.mean(axis=(2, 3, 4), keepdims=True)
    m2 = (dxhat * xh).mean(axis=(2, 3, 4), keepdims=True)
    dc = inv_std * (dxhat - m1 - xh * m2)
    return dc.reshape(b, h, s, t)


def _wnorm(w: np.ndarray):
    """Per-output-channel weight normalization with a floored norm."""
    norms = np.sqrt(np.sum(w.reshape(w.shape[0], -1) ** 2, axis=1))
    r = np.maximum(norms, np.asarray(_WNORM_FLOOR, dtype=w.dtype))
    return w / r[:, None, None, None], r, norms


def _wnorm_backward(dwn, w, r, norms):
    dw = dwn / r[:, None, None, None]
    free = norms > _WNORM_FLOOR  # where the floor is inactive
    if np.any(free):
        inner = np.sum((dwn * w).reshape(w.shape[0], -1), axis=1)
        corr = w * (inner / r ** 3)[:, None, None, None]
        dw = np.where(free[:, None, None, None], dw - corr, dw)
    return dw


def _as_batched(a, name):
    a = np.asarray(a)
    if a.ndim == 3:
        return a[None], True
    if a.ndim == 4:
        return a, False
    raise ShapeError(f"{name} must be [2, S, T] or [B, 2, S, T], got "
                     f"shape {a.shape}")


def _check_inputs(z, x, params):
    zb, zs = _as_batched(z, "z")
    xb, xs = _as_batched(x, "x")
    if zb.shape != xb.shape:
        raise ShapeError(f"z shape {z.shape} != x shape {x.shape}")
    if zb.shape[1] != 2:
        raise ShapeError(f"expected 2 channel planes, got {zb.shape[1]}")
    if not (np.all(np.isfinite(zb)) and np.all(np.isfinite(xb))):
        raise NumericError("non-finite values in block input")
    dt = params.dtype
    return zb.astype(dt, copy=False), xb.astype(dt, copy=False), zs and xs


def _run_forward(zb, xb, params: IEBParams):
    cfg = params.cfg
    h0 = (_proj(params.proj_in_w, zb)
          + params.proj_in_b[None, :, None, None]
          + _proj(params.proj_inj_w, xb))
    hs = [h0]
    xhats, inv_stds, masks = [], [], []
    wnorms = []
    h = h0
    for i in range(cfg.n_sub_blocks):
        if cfg.norm == "group_norm":
            c = _conv2d_same(h, params.conv_w[i])
            n, xhat, inv_std = _gn_forward(c, params.gamma[i],
                                           params.beta[i], cfg.n_groups)
            xhats.append(xhat)
            inv_stds.append(inv_std)
        else:
            wn, r, norms = _wnorm(params.conv_w[i])
            c = _conv2d_same(h, wn)
            n = (params.gamma[i][None, :, None, None] * c
                 + params.beta[i][None, :, None, None])
            xhats.append(c)
            wnorms.append((wn, r, norms))
        mask = n > 0
        h = np.where(mask, n, np.zeros((), dtype=n.dtype))
        masks.append(mask)
        hs.append(h)
    out = _proj(params.proj_out_w, h) + params.proj_out_b[None, :, None, None]
    cache = {"hs": hs, "xhats": xhats, "inv_stds": inv_stds,
             "masks": masks, "wnorms": wnorms}
    return out, cache


def forward(z, x, params: IEBParams):
    """Apply f(z, x); output shape equals z's (fully convolutional)."""
    zb, xb, single = _check_inputs(z, x, params)
    out, _ = _run_forward(zb, xb, params)
    return out[0] if single else out


def forward_with_cache(z, x, params: IEBParams):
    """forward() plus the single-application workspace the VJPs below can
    reuse to avoid recomputing activations."""
    zb, xb, single = _check_inputs(z, x, params)
    out, cache = _run_forward(zb, xb, params)
    cache["single"] = single
    cache["zb"], cache["xb"] = zb, xb
    return (out[0] if single else out), cache


def _run_backward(params: IEBParams, u, cache, need_param_grads):
    cfg = params.cfg
    hs, masks = cache["hs"], cache["masks"]
    g = u
    if need_param_grads:
        d_proj_out_w = _proj_wgrad(g, hs[-1])
        d_proj_out_b = g.sum(axis=(0, 2, 3))
        d_conv, d_gamma, d_beta = [], [], []
    gh = _proj_adjoint(params.proj_out_w, g)
    for i in reversed(range(cfg.n_sub_blocks)):
        dn = np.where(masks[i], gh, np.zeros((), dtype=gh.dtype))
        if cfg.norm == "group_norm":
            xhat, inv_std = cache["xhats"][i], cache["inv_stds"][i]
            if need_param_grads:
                d_gamma.append((dn * xhat).sum(axis=(0, 2, 3)))
                d_beta.append(dn.sum(axis=(0, 2, 3)))
            dc = _gn_backward_input(dn, xhat, inv_std, params.gamma[i],
                                    cfg.n_groups)
            w_eff = params.conv_w[i]
        else:
            c = cache["xhats"][i]
            wn, r, norms = cache["wnorms"][i]
            if need_param_grads:
                d_gamma.append((dn * c).sum(axis=(0, 2, 3)))
                d_beta.append(dn.sum(axis=(0, 2, 3)))
            dc = dn * params.gamma[i][None, :, None, None]
            w_eff = wn
        if need_param_grads:
            k = cfg.kernel_sizes[i]
            dwn = _conv2d_wgrad(dc, hs[i], k)
            if cfg.norm == "weight_scaled":
                dwn = _wnorm_backward(dwn, params.conv_w[i], r, norms)
            d_conv.append(dwn)
        gh = _conv2d_adjoint(dc, w_eff)
    dz = _proj_adjoint(params.proj_in_w, gh)
    if not need_param_grads:
        return dz, None
    grads = IEBParams(
        cfg=cfg,
        proj_in_w=_proj_wgrad(gh, cache["zb"]),
        proj_in_b=gh.sum(axis=(0, 2, 3)),
        proj_inj_w=_proj_wgrad(gh, cache["xb"]),
        conv_w=list(reversed(d_conv)),
        gamma=list(reversed(d_gamma)),
        beta=list(reversed(d_beta)),
        proj_out_w=d_proj_out_w,
        proj_out_b=d_proj_out_b,
    )
    return dz, grads


def _cache_for(z, x, params, cache):
    if cache is not None:
        return cache
    _, cache = forward_with_cache(z, x, params)
    return cache


def vjp_z(z, x, params: IEBParams, u, cache=None):
    """Exact u^T (df/dz) at (z, x, params)."""
    cache = _cache_for(z, x, params, cache)
    ub, us = _as_batched(u, "u")
    if ub.shape != cache["zb"].shape:
        raise ShapeError(f"u shape {np.asarray(u).shape} does not match z")
    dz, _ = _run_backward(params, ub.astype(params.dtype, copy=False),
                          cache, need_param_grads=False)
    return dz[0] if us else dz


def vjp_theta(z, x, params: IEBParams, u, cache=None) -> IEBParams:
    """Exact u^T (df/dtheta); returned in parameter shape (sums over any
    batch dimension of u)."""
    cache = _cache_for(z, x, params, cache)
    ub, _ = _as_batched(u, "u")
    if ub.shape != cache["zb"].shape:
        raise ShapeError(f"u shape {np.asarray(u).shape} does not match z")
    _, grads = _run_backward(params, ub.astype(params.dtype, copy=False),
                             cache, need_param_grads=True)
    return grads


def vjp_all(z, x, params: IEBParams, u, cache=None):
    """(u^T df/dz, u^T df/dtheta) in one backward sweep; the workhorse of
    explicit (unrolled) training."""
    cache = _cache_for(z, x, params, cache)
    ub, us = _as_batched(u, "u")
    if ub.shape != cache["zb"].shape:
        raise ShapeError(f"u shape {np.asarray(u).shape} does not match z")
    dz, grads = _run_backward(params, ub.astype(params.dtype, copy=False),
                              cache, need_param_grads=True)
    return (dz[0] if us else dz), grads


def save_params(params: IEBParams, path):
    """Write a checkpoint: magic IEBP, version, config echo, then the flat
    float32 parameter vector in canonical order (little-endian)."""
    cfg = params.cfg
    header = struct.pack("<4sIIIIIQ", CKPT_MAGIC, CKPT_VERSION,
                         cfg.hidden_width, cfg.n_sub_blocks,
                         _NORM_CODES[cfg.norm], 0, cfg.seed)
    kernels = struct.pack(f"<{cfg.n_sub_blocks}I", *cfg.kernel_sizes)
    flat = params.to_flat().astype("<f4")
    with open(path, "wb") as f:
        f.write(header)
        f.write(kernels)
        f.write(struct.pack("<Q", flat.size))
        f.write(flat.tobytes())


def load_params(path, dtype=np.float32) -> IEBParams:
    with open(path, "rb") as f:
        blob = f.read()
    head = struct.Struct("<4sIIIIIQ")
    if len(blob) < head.size:
        raise DatasetFormatError("checkpoint shorter than header",
                                 offset=len(blob))
    magic, version, width, n_sub, norm_code, _inj, seed = head.unpack_from(
        blob, 0)
    if magic != CKPT_MAGIC:
        raise DatasetFormatError(f"bad checkpoint magic {magic!r}", offset=0)
    if version != CKPT_VERSION:
        raise DatasetFormatError(f"unsupported checkpoint version {version}",
                                 offset=4)
    off = head.size
    kernels = struct.unpack_from(f"<{n_sub}I", blob, off)
    off += 4 * n_sub
    (count,) = struct.unpack_from("<Q", blob, off)
    off += 8
    expected = off + 4 * count
    if len(blob) != expected:
        raise DatasetFormatError(
            f"checkpoint length mismatch: expected {expected} bytes, got "
            f"{len(blob)}", offset=min(expected, len(blob)))
    cfg = IEBConfig(hidden_width=width, n_sub_blocks=n_sub,
                    kernel_sizes=tuple(kernels),
                    norm=_NORM_NAMES[norm_code], seed=seed)
    flat = np.frombuffer(blob, dtype="<f4", count=count, offset=off)
    if not np.all(np.isfinite(flat)):
        raise DatasetFormatError("checkpoint contains non-finite parameters")
    return IEBParams.from_flat(cfg, flat.copy(), dtype=dtype)
