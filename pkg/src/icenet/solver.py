"""Fixed-point solving and implicit differentiation.

Forward: Anderson acceleration with a short history window, Tikhonov-
regularized coefficient solve, and the adaptive stopping rule
``||f(z)-z|| / (||f(z)|| + floor) <= eps`` capped at ``max_iters``
iterations (one f evaluation each).

Backward: the adjoint fixed-point equation u = J^T u + grad_out is solved
with the same machinery, then folded into a parameter gradient -- no
forward iterates are stored, only the fixed point, the input, and one
application's workspace.

``RetainedTensorCounter`` instruments how many iterate-sized arrays a
solve keeps alive; the peak is bounded by 2*history_m + a constant,
independent of how many iterations run.
"""

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import block as ieb
from .errors import ConfigurationError, DivergenceError, NumericError

_ALPHA_SUM_TOL = 1e-12


@dataclass(frozen=True)
class SolveConfig:
    """Stopping rule (eps, max_iters) and Anderson settings."""

    eps: float = 1e-3
    max_iters: int = 20
    history_m: int = 5
    tikhonov_lambda: float = 1e-4
    mixing_beta: float = 1.0
    denom_floor: float = 1e-8

    def validate(self):
        if not self.eps > 0:
            raise ConfigurationError(f"eps must be > 0, got {self.eps}")
        if self.max_iters < 1:
            raise ConfigurationError(
                f"max_iters must be >= 1, got {self.max_iters}")
        if self.history_m < 1:
            raise ConfigurationError(
                f"history_m must be >= 1, got {self.history_m}")
        if self.tikhonov_lambda < 0:
            raise ConfigurationError(
                f"tikhonov_lambda must be >= 0, got {self.tikhonov_lambda}")
        if not 0 < self.mixing_beta <= 1:
            raise ConfigurationError(
                f"mixing_beta must be in (0, 1], got {self.mixing_beta}")
        if not self.denom_floor > 0:
            raise ConfigurationError(
                f"denom_floor must be > 0, got {self.denom_floor}")


@dataclass
class SolveResult:
    z_star: np.ndarray
    iters_used: int
    residual_trace: list
    converged: bool
    peak_retained: int = 0


@dataclass
class BatchSolveResult:
    """Per-sample outcomes of a batched solve."""

    z_star: np.ndarray
    iters_used: np.ndarray
    converged: np.ndarray
    diverged: np.ndarray
    residual_traces: list
    peak_retained: int = 0


class RetainedTensorCounter:
    """Counts iterate-sized arrays currently kept alive by a solve."""

    def __init__(self):
        self.current = 0
        self.peak = 0

    def retain(self, n=1):
        self.current += n
        self.peak = max(self.peak, self.current)

    def release(self, n=1):
        self.current -= n


def _norm(v) -> float:
    return float(np.sqrt(np.sum(np.square(v, dtype=np.float64))))


def backward_config(forward_cfg: SolveConfig) -> SolveConfig:
    """Adjoint-solve defaults: same eps, twice the iteration budget."""
    return SolveConfig(eps=forward_cfg.eps,
                       max_iters=2 * forward_cfg.max_iters,
                       history_m=forward_cfg.history_m,
                       tikhonov_lambda=forward_cfg.tikhonov_lambda,
                       mixing_beta=forward_cfg.mixing_beta,
                       denom_floor=forward_cfg.denom_floor)


def _check_real(z0):
    z0 = np.asarray(z0)
    if np.iscomplexobj(z0):
        raise ValueError(
            "solvers operate on real arrays; pass complex grids as two "
            "real planes")
    return z0


def picard_solve(f, z0, cfg: SolveConfig) -> SolveResult:
    """Plain iteration z <- f(z); the reference oracle for anderson_solve."""
    cfg.validate()
    z0 = _check_real(z0)
    counter = RetainedTensorCounter()
    counter.retain()  # current iterate
    z = np.array(z0, copy=True)
    trace = []
    counter.retain()  # best-residual iterate slot
    best_z, best_res = z, np.inf
    for k in range(1, cfg.max_iters + 1):
        counter.retain()  # f(z)
        fz = np.asarray(f(z))
        if not np.all(np.isfinite(fz)):
            raise DivergenceError(
                f"non-finite iterate at iteration {k}",
                residual_trace=trace, last_finite=z)
        res = _norm(fz - z) / (_norm(fz) + cfg.denom_floor)
        trace.append(res)
        if res < best_res:
            best_z, best_res = z, res
        if res <= cfg.eps:
            return SolveResult(z_star=z, iters_used=k, residual_trace=trace,
                               converged=True, peak_retained=counter.peak)
        counter.release()  # previous iterate replaced
        z = fz
    return SolveResult(z_star=best_z, iters_used=cfg.max_iters,
                       residual_trace=trace, converged=False,
                       peak_retained=counter.peak)


def _anderson_alpha(g_rows: np.ndarray, lam: float) -> np.ndarray:
    """Minimize ||sum_i a_i g_i|| s.t. sum a_i = 1, Tikhonov-regularized.

    The regularizer is scaled by the mean residual energy so the solve
    behaves identically at any residual magnitude.
    """
    n = g_rows.shape[0]
    gram = g_rows @ g_rows.T
    lam_eff = lam * max(float(np.trace(gram)) / n, 1e-300)
    a = gram + lam_eff * np.eye(n)
    try:
        alpha = np.linalg.solve(a, np.ones(n))
    except np.linalg.LinAlgError:
        alpha = None
    if alpha is None or abs(alpha.sum()) < _ALPHA_SUM_TOL * np.abs(alpha).sum():
        alpha = np.zeros(n)
        alpha[-1] = 1.0  # fall back to a plain Picard step
        return alpha
    return alpha / alpha.sum()


def anderson_solve(f, z0, cfg: SolveConfig) -> SolveResult:
    """Anderson-accelerated fixed-point solve.

    Keeps up to ``history_m`` past (iterate, f-value) pairs; each step
    combines them with the least-squares coefficients and mixing beta:
    z_next = sum_i alpha_i [(1-beta) z_i + beta f(z_i)].  Stopping rule
    and divergence behavior match picard_solve.  Deterministic.
    """
    cfg.validate()
    z0 = _check_real(z0)
    shape, dtype = z0.shape, z0.dtype
    counter = RetainedTensorCounter()
    counter.retain()  # current iterate
    z = np.array(z0, copy=True).reshape(-1)
    z_hist = deque(maxlen=cfg.history_m)
    f_hist = deque(maxlen=cfg.history_m)
    trace = []
    counter.retain()  # best-residual iterate slot
    best_z, best_res = z, np.inf
    for k in range(1, cfg.max_iters + 1):
        counter.retain()  # f(z)
        fz = np.asarray(f(z.reshape(shape))).reshape(-1)
        if not np.all(np.isfinite(fz)):
            raise DivergenceError(
                f"non-finite iterate at iteration {k}",
                residual_trace=trace, last_finite=z.reshape(shape))
        z64 = z.astype(np.float64)
        f64 = fz.astype(np.float64)
        res = _norm(f64 - z64) / (_norm(f64) + cfg.denom_floor)
        trace.append(res)
        if res < best_res:
            best_z, best_res = z, res
        if res <= cfg.eps:
            return SolveResult(z_star=z.reshape(shape), iters_used=k,
                               residual_trace=trace, converged=True,
                               peak_retained=counter.peak)
        if len(z_hist) == cfg.history_m:
            counter.release(2)  # oldest pair evicted
        z_hist.append(z64)
        f_hist.append(f64)
        counter.retain(2)
        zs = np.stack(z_hist)
        fs = np.stack(f_hist)
        alpha = _anderson_alpha(fs - zs, cfg.tikhonov_lambda)
        beta = cfg.mixing_beta
        z_new = alpha @ ((1.0 - beta) * zs + beta * fs)
        counter.release(2)  # f(z) and previous iterate replaced
        counter.retain()
        z = z_new.astype(dtype)
    return SolveResult(z_star=best_z.reshape(shape), iters_used=cfg.max_iters,
                       residual_trace=trace, converged=False,
                       peak_retained=counter.peak)


def deq_forward(x, params, cfg: SolveConfig) -> SolveResult:
    """Solve z = f(z, x) by Anderson acceleration, warm-started at z0 = x.

    The returned ``z_star`` is the channel estimate; ``iters_used`` feeds
    the adaptivity statistics.
    """
    x = np.asarray(x)
    return anderson_solve(lambda z: ieb.forward(z, x, params), x, cfg)


def ift_adjoint_solve(vjp_fn, grad_out, cfg: SolveConfig) -> SolveResult:
    """Solve the linear adjoint equation u = vjp_fn(u) + grad_out."""
    g = np.asarray(grad_out)
    return anderson_solve(lambda u: vjp_fn(u) + g, g, cfg)


def deq_backward(z_star, x, params, grad_out, cfg_bw: SolveConfig):
    """Implicit-function-theorem gradient at a solved fixed point.

    Solves u = (df/dz)^T u + grad_out, then returns (df/dtheta)^T u in
    parameter shape.  Only z_star, x, and one application's workspace are
    retained.  Raises DivergenceError if the adjoint solve produces
    non-finite values.
    """
    _, cache = ieb.forward_with_cache(z_star, x, params)
    adjoint = ift_adjoint_solve(
        lambda u: ieb.vjp_z(z_star, x, params, u, cache=cache),
        grad_out, cfg_bw)
    return ieb.vjp_theta(z_star, x, params, adjoint.z_star, cache=cache)


def deq_forward_batch(xb, params, cfg: SolveConfig) -> BatchSolveResult:
    """Vectorized deq_forward over a batch [B, 2, S, T].

    Per-sample histories, coefficients, and stopping: results match
    per-sample deq_forward up to float reassociation in the batched
    GEMMs.  Samples that converge are frozen at their passing iterate;
    samples that go non-finite are frozen at their last finite iterate
    and flagged in ``diverged`` (the training-time fallback).
    """
    cfg.validate()
    xb = np.asarray(xb)
    if xb.ndim != 4:
        raise ValueError(f"expected [B, 2, S, T], got shape {xb.shape}")
    b = xb.shape[0]
    n = xb[0].size
    dtype = xb.dtype
    counter = RetainedTensorCounter()
    counter.retain()  # current iterates

    z = xb.reshape(b, n).astype(dtype, copy=True)
    z_hist = np.zeros((cfg.history_m, b, n))
    f_hist = np.zeros((cfg.history_m, b, n))
    hist_len = 0
    alive = np.ones(b, dtype=bool)
    iters = np.zeros(b, dtype=np.int64)
    converged = np.zeros(b, dtype=bool)
    diverged = np.zeros(b, dtype=bool)
    best_z = z.copy()
    counter.retain()
    best_res = np.full(b, np.inf)
    traces = [[] for _ in range(b)]

    for k in range(1, cfg.max_iters + 1):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        counter.retain()  # f(z) for the active rows
        fz = ieb.forward(z[idx].reshape(-1, *xb.shape[1:]), xb[idx], params)
        fz = np.asarray(fz).reshape(idx.size, n)
        finite = np.all(np.isfinite(fz), axis=1)
        if not np.all(finite):
            bad = idx[~finite]
            diverged[bad] = True
            alive[bad] = False
            idx = idx[finite]
            fz = fz[finite]
            if idx.size == 0:
                counter.release()
                break
        z64 = z[idx].astype(np.float64)
        f64 = fz.astype(np.float64)
        g = f64 - z64
        res = (np.sqrt(np.sum(g * g, axis=1))
               / (np.sqrt(np.sum(f64 * f64, axis=1)) + cfg.denom_floor))
        iters[idx] = k
        for j, r in zip(idx, res):
            traces[j].append(float(r))
        better = res < best_res[idx]
        best_res[idx[better]] = res[better]
        best_z[idx[better]] = z[idx[better]]
        done = res <= cfg.eps
        converged[idx[done]] = True
        alive[idx[done]] = False
        live = idx[~done]
        if live.size == 0:
            counter.release()
            continue
        sel = ~done
        slot = (k - 1) % cfg.history_m
        if hist_len == cfg.history_m:
            counter.release(2)
        z_hist[slot] = 0.0
        f_hist[slot] = 0.0
        z_hist[slot, live] = z64[sel]
        f_hist[slot, live] = f64[sel]
        counter.retain(2)
        hist_len = min(hist_len + 1, cfg.history_m)

        g_rows = (f_hist[:hist_len, live] - z_hist[:hist_len, live])
        g_rows = g_rows.transpose(1, 0, 2)  # [live, n_hist, N]
        gram = g_rows @ g_rows.transpose(0, 2, 1)
        diag_mean = np.maximum(
            np.trace(gram, axis1=1, axis2=2) / hist_len, 1e-300)
        a = gram + (cfg.tikhonov_lambda * diag_mean)[:, None, None] \
            * np.eye(hist_len)
        ones = np.ones(hist_len)
        newest = np.zeros(hist_len)
        newest[slot if hist_len == cfg.history_m else hist_len - 1] = 1.0
        try:
            alpha = np.linalg.solve(a, ones[None, :, None])[..., 0]
        except np.linalg.LinAlgError:
            alpha = np.tile(newest, (live.size, 1))
        sums = alpha.sum(axis=1)
        degenerate = np.abs(sums) < _ALPHA_SUM_TOL * np.abs(alpha).sum(axis=1)
        alpha = np.where(degenerate[:, None], newest,
                         alpha / np.where(degenerate, 1.0, sums)[:, None])
        beta = cfg.mixing_beta
        mix = ((1.0 - beta) * z_hist[:hist_len, live]
               + beta * f_hist[:hist_len, live]).transpose(1, 0, 2)
        z_new = np.einsum("bh,bhn->bn", alpha, mix)
        counter.release()  # f(z) replaced by the new iterate
        z[live] = z_new.astype(dtype)

    # Unconverged samples report their best-residual iterate.
    open_idx = np.flatnonzero(~converged & ~diverged)
    if open_idx.size:
        z[open_idx] = best_z[open_idx]
    return BatchSolveResult(
        z_star=z.reshape(xb.shape), iters_used=iters, converged=converged,
        diverged=diverged, residual_traces=traces,
        peak_retained=counter.peak)


def deq_backward_batch(z_star, xb, params, grad_out, cfg_bw: SolveConfig):
    """Batched IFT gradient; sums parameter gradients over the batch."""
    _, cache = ieb.forward_with_cache(z_star, xb, params)
    g = np.asarray(grad_out)
    sol = anderson_solve(
        lambda u: (ieb.vjp_z(z_star, xb, params,
                             u.reshape(g.shape), cache=cache)
                   + g).reshape(-1),
        g.reshape(-1), cfg_bw)
    u = sol.z_star.reshape(g.shape)
    return ieb.vjp_theta(z_star, xb, params, u, cache=cache), sol
