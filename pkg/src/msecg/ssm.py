"""Selective state-space core: input-dependent parameters, discretization, scans.

Array layout follows ``[..., L, d_inner, d_state]`` for per-step transition
tensors; any leading dims are treated as a batch. The recurrence is

    h_n = Abar_n * h_{n-1} + Bbar_n * x_n        (h_0 = 0)
    y_n = sum_s C_n[s] * h_n[:, s] + D_skip * x_n
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor


@dataclass
class SsmParams:
    """Learnable selective-SSM weights for one Mamba block."""

    A_log: Tensor    # [d_inner, d_state]; A = -exp(A_log)
    D_skip: Tensor   # [d_inner]
    W_x: Tensor      # [d_inner, dt_rank + 2 * d_state]
    W_dt: Tensor     # [dt_rank, d_inner]
    b_dt: Tensor     # [d_inner]

    @property
    def d_inner(self) -> int:
        return self.A_log.shape[0]

    @property
    def d_state(self) -> int:
        return self.A_log.shape[1]

    @property
    def dt_rank(self) -> int:
        return self.W_dt.shape[0]

    def tensors(self) -> dict[str, Tensor]:
        return {"A_log": self.A_log, "D_skip": self.D_skip, "W_x": self.W_x,
                "W_dt": self.W_dt, "b_dt": self.b_dt}


def dt_rank_for(d_inner: int) -> int:
    return math.ceil(d_inner / 16)


def init_ssm_params(d_inner: int, d_state: int, rng: np.random.Generator,
                    dtype=np.float32, dt_min: float = 1e-3, dt_max: float = 1e-1) -> SsmParams:
    rank = dt_rank_for(d_inner)
    width = rank + 2 * d_state
    bound_x = 1.0 / math.sqrt(d_inner)
    bound_dt = 1.0 / math.sqrt(rank)
    W_x = rng.uniform(-bound_x, bound_x, size=(d_inner, width))
    W_dt = rng.uniform(-bound_dt, bound_dt, size=(rank, d_inner))
    # log-uniform step sizes, stored through the inverse softplus
    dt = np.exp(rng.uniform(math.log(dt_min), math.log(dt_max), size=d_inner))
    b_dt = dt + np.log(-np.expm1(-dt))
    A_log = np.log(np.tile(np.arange(1, d_state + 1, dtype=np.float64), (d_inner, 1)))
    mk = lambda a: Tensor(np.asarray(a, dtype=dtype), requires_grad=True)  # noqa: E731
    return SsmParams(A_log=mk(A_log), D_skip=mk(np.ones(d_inner)), W_x=mk(W_x),
                     W_dt=mk(W_dt), b_dt=mk(b_dt))


def input_dependent_params(x, params: SsmParams) -> tuple[Tensor, Tensor, Tensor]:
    """Project ``x [..., L, d_inner]`` to step sizes and input/output matrices.

    Returns ``delta [..., L, d_inner]`` (strictly positive), ``B`` and ``C``
    of shape ``[..., L, d_state]``.
    """
    x = ag.as_tensor(x)
    if x.shape[-1] != params.d_inner:
        raise ValueError(f"expected last dim {params.d_inner}, got {x.shape}")
    r, n = params.dt_rank, params.d_state
    proj = x @ params.W_x
    dt_low = proj[..., :r]
    B = proj[..., r:r + n]
    C = proj[..., r + n:]
    delta = ag.softplus(dt_low @ params.W_dt + params.b_dt)
    return delta, B, C


def discretize(delta, A, B, exact_zoh_b: bool = False) -> tuple[Tensor, Tensor]:
    """Turn continuous ``(delta, A, B)`` into per-step ``(Abar, Bbar)``.

    ``Abar = exp(delta * A)`` is exact zero-order hold for diagonal ``A``.
    ``Bbar = delta * B`` by default; ``exact_zoh_b`` uses
    ``(exp(delta * A) - 1) / A * B`` instead.
    """
    delta, A, B = ag.as_tensor(delta), ag.as_tensor(A), ag.as_tensor(B)
    if np.any(delta.data <= 0):
        raise ValueError("discretize requires strictly positive step sizes")
    dA = ag.expand_dims(delta, -1) * A                  # [..., L, d_inner, d_state]
    Abar = ag.exp(dA)
    B_e = ag.expand_dims(B, -2)                         # [..., L, 1, d_state]
    if exact_zoh_b:
        Bbar = (Abar - 1.0) * ag.reciprocal(A) * B_e
    else:
        Bbar = ag.expand_dims(delta, -1) * B_e
    return Abar, Bbar


# -- scans on raw arrays ------------------------------------------------------

def _check_scan_shapes(Abar, Bbar, C, x, D_skip):
    if Abar.shape != Bbar.shape:
        raise ValueError(f"Abar {Abar.shape} and Bbar {Bbar.shape} differ")
    if x.shape != Abar.shape[:-1]:
        raise ValueError(f"x {x.shape} does not match transition shape {Abar.shape}")
    if C.shape != Abar.shape[:-2] + Abar.shape[-1:]:
        raise ValueError(f"C {C.shape} does not match transition shape {Abar.shape}")
    if D_skip.shape != x.shape[-1:]:
        raise ValueError(f"D_skip {D_skip.shape} does not match d_inner {x.shape[-1]}")


def linear_recurrence_sequential(a: np.ndarray, b: np.ndarray, axis: int) -> np.ndarray:
    """All states of ``h_n = a_n * h_{n-1} + b_n`` from ``h_{-1} = 0``."""
    a = np.moveaxis(a, axis, 0)
    b = np.moveaxis(b, axis, 0)
    h = np.empty(np.broadcast_shapes(a.shape, b.shape), dtype=np.result_type(a, b))
    prev = np.zeros(h.shape[1:], dtype=h.dtype)
    for n in range(h.shape[0]):
        prev = a[n] * prev + b[n]
        h[n] = prev
    return np.moveaxis(h, 0, axis)


def linear_recurrence_parallel(a: np.ndarray, b: np.ndarray, axis: int) -> np.ndarray:
    """Same result as the sequential recurrence via a work-efficient up/down sweep.

    Elements are affine maps ``h -> a*h + b`` composed as
    ``(a2, b2) o (a1, b1) = (a2*a1, a2*b1 + b2)``. Each tree level is one
    vectorized update, so the work is O(L) and the depth O(log L).
    """
    a = np.moveaxis(a, axis, 0)
    b = np.moveaxis(b, axis, 0)
    a, b = np.broadcast_arrays(a, b)
    L = a.shape[0]
    size = 1 << max(L - 1, 0).bit_length()
    dtype = np.result_type(a, b)
    # pad with identity maps (a=1, b=0)
    A = np.ones((size,) + a.shape[1:], dtype=dtype)
    Bv = np.zeros((size,) + a.shape[1:], dtype=dtype)
    A[:L] = a
    Bv[:L] = b

    # up-sweep: right child absorbs its left sibling's aggregate
    stride = 2
    while stride <= size:
        half = stride // 2
        la, lb = A[half - 1::stride], Bv[half - 1::stride]
        ra, rb = A[stride - 1::stride], Bv[stride - 1::stride]
        rb += ra * lb
        ra *= la
        stride *= 2

    # down-sweep to an exclusive scan; root gets the identity
    A[-1] = 1.0
    Bv[-1] = 0.0
    stride = size
    while stride >= 2:
        half = stride // 2
        la, lb = A[half - 1::stride], Bv[half - 1::stride]
        ra, rb = A[stride - 1::stride], Bv[stride - 1::stride]
        ta, tb = la.copy(), lb.copy()
        la[...] = ra
        lb[...] = rb
        # new right = left subtree applied after the prefix
        rb[...] = ta * rb + tb
        ra[...] = ta * ra
        stride //= 2

    # inclusive result from h_{-1} = 0: h_n = a_n * excl_b_n + b_n
    h = a * Bv[:L] + b
    return np.moveaxis(h, 0, axis)


_RECURRENCES = {"sequential": linear_recurrence_sequential, "parallel": linear_recurrence_parallel}


def scan_states(Abar, Bbar, x, impl: str = "parallel") -> np.ndarray:
    """Latent states ``h [..., L, d_inner, d_state]``."""
    return _RECURRENCES[impl](Abar, Bbar * x[..., None], axis=-3)


def _readout(h, C, x, D_skip):
    return np.einsum("...ls,...lds->...ld", C, h) + D_skip * x


def scan_sequential(Abar, Bbar, C, x, D_skip) -> np.ndarray:
    Abar, Bbar, C, x, D_skip = map(np.asarray, (Abar, Bbar, C, x, D_skip))
    _check_scan_shapes(Abar, Bbar, C, x, D_skip)
    return _readout(scan_states(Abar, Bbar, x, "sequential"), C, x, D_skip)


def scan_parallel(Abar, Bbar, C, x, D_skip) -> np.ndarray:
    Abar, Bbar, C, x, D_skip = map(np.asarray, (Abar, Bbar, C, x, D_skip))
    _check_scan_shapes(Abar, Bbar, C, x, D_skip)
    return _readout(scan_states(Abar, Bbar, x, "parallel"), C, x, D_skip)


def scan_backward(gy, saved: dict | None, impl: str = "parallel") -> tuple[np.ndarray, ...]:
    """Reverse-time adjoint of the scan.

    ``saved`` holds the forward inputs ``Abar, Bbar, C, x, D_skip`` and the
    states ``h``. Returns gradients for ``(Abar, Bbar, C, x, D_skip)``.
    """
    if not saved or any(k not in saved for k in ("Abar", "Bbar", "C", "x", "D_skip", "h")):
        raise ValueError("scan_backward needs the saved forward activations")
    Abar, Bbar, C, x, D_skip, h = (saved[k] for k in ("Abar", "Bbar", "C", "x", "D_skip", "h"))
    gy = np.asarray(gy)
    # gh_n = Abar_{n+1} * gh_{n+1} + gy_n C_n, run right to left
    drive = gy[..., :, None] * C[..., None, :]
    a_next = np.zeros_like(Abar)
    a_next[..., :-1, :, :] = Abar[..., 1:, :, :]
    rev = lambda t: np.flip(t, axis=-3)  # noqa: E731
    gh = rev(_RECURRENCES[impl](rev(a_next), rev(drive), axis=-3))
    h_prev = np.zeros_like(h)
    h_prev[..., 1:, :, :] = h[..., :-1, :, :]
    gA = gh * h_prev
    gB = gh * x[..., None]
    gC = np.einsum("...ld,...lds->...ls", gy, h)
    gx = np.einsum("...lds,...lds->...ld", gh, Bbar) + D_skip * gy
    gD = (gy * x).reshape(-1, x.shape[-1]).sum(axis=0)
    return gA, gB, gC, gx, gD


def selective_scan(Abar, Bbar, C, x, D_skip, impl: str = "parallel") -> Tensor:
    """Differentiable scan whose backward is the analytic adjoint."""
    Abar, Bbar, C, x, D_skip = (ag.as_tensor(t) for t in (Abar, Bbar, C, x, D_skip))
    _check_scan_shapes(Abar.data, Bbar.data, C.data, x.data, D_skip.data)
    h = scan_states(Abar.data, Bbar.data, x.data, impl)
    y = _readout(h, C.data, x.data, D_skip.data)
    saved = {"Abar": Abar.data, "Bbar": Bbar.data, "C": C.data, "x": x.data,
             "D_skip": D_skip.data, "h": h}
    return ag.custom_op(y, (Abar, Bbar, C, x, D_skip),
                        lambda g: scan_backward(g, saved, impl), "selective_scan")


def ssm_forward(x, params: SsmParams, impl: str = "parallel", exact_zoh_b: bool = False) -> Tensor:
    """Full selective SSM on ``x [..., L, d_inner]``."""
    delta, B, C = input_dependent_params(x, params)
    A = ag.neg(ag.exp(params.A_log))
    Abar, Bbar = discretize(delta, A, B, exact_zoh_b=exact_zoh_b)
    return selective_scan(Abar, Bbar, C, x, params.D_skip, impl=impl)
