"""MSECG: conv front-end, bidirectional Mamba stack, channel-expanding head,
1-D pixel shuffle and a linear-interpolation skip connection."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Iterator

import numpy as np

from . import autograd as ag
from . import ssm
from .autograd import Tensor
from .dsp import Signal, linear_interp_upsample_array


@dataclass
class ModelConfig:
    leads: int = 12
    D: int = 160
    M: int = 5
    r: int = 10
    expand: int = 2
    d_state: int = 16
    d_conv: int = 4
    conv_kernel_front: int = 7
    conv_kernel_head: int = 3
    use_pixel_shuffle: bool = True
    use_skip_connection: bool = True
    use_deconv: bool = False
    scan_impl: str = "parallel"
    exact_zoh_b: bool = False
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("upsampling ratio r must be >= 1")
        if self.M < 0:
            raise ValueError("M must be >= 0")
        if self.use_pixel_shuffle == self.use_deconv:
            raise ValueError("exactly one of use_pixel_shuffle / use_deconv must be set")
        if self.scan_impl not in ("parallel", "sequential"):
            raise ValueError(f"unknown scan_impl {self.scan_impl!r}")
        for k in (self.conv_kernel_front, self.conv_kernel_head):
            if k < 1 or k % 2 == 0:
                raise ValueError("front/head conv kernels must be odd")

    @property
    def d_inner(self) -> int:
        return self.expand * self.D

    @property
    def dt_rank(self) -> int:
        return ssm.dt_rank_for(self.d_inner)

    @property
    def deconv_strides(self) -> tuple[int, int]:
        s2 = 2 if self.r % 2 == 0 and self.r > 2 else 1
        return self.r // s2, s2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


# -- building blocks ----------------------------------------------------------

@dataclass
class MambaBlockParams:
    in_proj: Tensor    # [D, 2 * d_inner]
    conv_w: Tensor     # [d_inner, 1, d_conv] depthwise
    conv_b: Tensor     # [d_inner]
    ssm: ssm.SsmParams
    out_proj: Tensor   # [d_inner, D]

    def tensors(self) -> dict[str, Tensor]:
        out = {"in_proj": self.in_proj, "conv_w": self.conv_w, "conv_b": self.conv_b}
        out.update({f"ssm.{k}": v for k, v in self.ssm.tensors().items()})
        out["out_proj"] = self.out_proj
        return out


def _uniform(rng, shape, fan_in, dtype):
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def _zeros(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def init_mamba_block(D: int, expand: int, d_state: int, d_conv: int, rng: np.random.Generator,
                     dtype=np.float32) -> MambaBlockParams:
    d_inner = expand * D
    return MambaBlockParams(
        in_proj=_uniform(rng, (D, 2 * d_inner), D, dtype),
        conv_w=_uniform(rng, (d_inner, 1, d_conv), d_conv, dtype),
        conv_b=_zeros((d_inner,), dtype),
        ssm=ssm.init_ssm_params(d_inner, d_state, rng, dtype=dtype),
        out_proj=_uniform(rng, (d_inner, D), d_inner, dtype),
    )


def mamba_block(x, p: MambaBlockParams, scan_impl: str = "parallel", exact_zoh_b: bool = False) -> Tensor:
    """Residual Mamba block on ``x [L, D]`` or ``[B, L, D]``."""
    x = ag.as_tensor(x)
    squeeze = x.ndim == 2
    if squeeze:
        x = ag.expand_dims(x, 0)
    D = p.in_proj.shape[0]
    if x.ndim != 3 or x.shape[-1] != D:
        raise ValueError(f"mamba_block expects [B, L, {D}], got {x.shape}")
    d_inner = p.out_proj.shape[0]
    xz = x @ p.in_proj
    u, z = xz[..., :d_inner], xz[..., d_inner:]
    u = ag.swapaxes(u, 1, 2)
    u = ag.conv1d(u, p.conv_w, p.conv_b, padding="causal", groups=d_inner)
    u = ag.silu(ag.swapaxes(u, 1, 2))
    y = ssm.ssm_forward(u, p.ssm, impl=scan_impl, exact_zoh_b=exact_zoh_b)
    y = y * ag.silu(z)
    out = x + y @ p.out_proj
    if squeeze:
        out = ag.reshape(out, out.shape[1:])
    return out


def bidirectional_mamba(x, fwd: MambaBlockParams, bwd: MambaBlockParams, **kw) -> Tensor:
    """Forward block plus time-reversed backward block, one residual copy kept."""
    x = ag.as_tensor(x)
    t_axis = x.ndim - 2
    forward = mamba_block(x, fwd, **kw)
    backward = ag.flip(mamba_block(ag.flip(x, t_axis), bwd, **kw), t_axis)
    return forward + backward - x


def pixel_shuffle_1d(x, r: int) -> Tensor:
    """``[..., r*C, L] -> [..., C, r*L]`` with ``out[c, n*r + j] = in[c*r + j, n]``."""
    x = ag.as_tensor(x)
    *lead, ch, L = x.shape
    if ch % r:
        raise ValueError(f"channel count {ch} not divisible by r={r}")
    C = ch // r
    y = ag.reshape(x, (*lead, C, r, L))
    y = ag.swapaxes(y, -1, -2)
    return ag.reshape(y, (*lead, C, L * r))


def pixel_unshuffle_1d(x, r: int) -> Tensor:
    x = ag.as_tensor(x)
    *lead, C, Lr = x.shape
    if Lr % r:
        raise ValueError(f"length {Lr} not divisible by r={r}")
    y = ag.reshape(x, (*lead, C, Lr // r, r))
    y = ag.swapaxes(y, -1, -2)
    return ag.reshape(y, (*lead, C * r, Lr // r))


# -- full model ---------------------------------------------------------------

class MSECG:
    """Parameters and forward pass for one configuration.

    Parameter names are stable (``front.w``, ``layers.0.fwd.in_proj``, ...);
    each group is initialized from a generator seeded by
    ``(config.seed, group index, direction)``.
    """

    def __init__(self, config: ModelConfig, params: dict[str, Tensor] | None = None):
        self.config = config
        self.params = params if params is not None else self._init_params()

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    def _rng(self, *path: int) -> np.random.Generator:
        return np.random.default_rng([self.config.seed, *path])

    def _init_params(self) -> dict[str, Tensor]:
        c, dt = self.config, np.dtype(self.config.dtype)
        p: dict[str, Tensor] = {}
        rng = self._rng(0)
        kf = c.conv_kernel_front
        p["front.w"] = _uniform(rng, (c.D, c.leads, kf), c.leads * kf, dt)
        p["front.b"] = _zeros((c.D,), dt)
        for i in range(c.M):
            for j, direction in enumerate(("fwd", "bwd")):
                blk = init_mamba_block(c.D, c.expand, c.d_state, c.d_conv, self._rng(i + 1, j), dt)
                for k, v in blk.tensors().items():
                    p[f"layers.{i}.{direction}.{k}"] = v
        rng = self._rng(c.M + 1)
        if c.use_pixel_shuffle:
            kh = c.conv_kernel_head
            p["head.w"] = _uniform(rng, (c.leads * c.r, c.D, kh), c.D * kh, dt)
            p["head.b"] = _zeros((c.leads * c.r,), dt)
        else:
            s1, s2 = c.deconv_strides
            p["deconv1.w"] = _uniform(rng, (c.D, c.D, s1), c.D, dt)
            p["deconv1.b"] = _zeros((c.D,), dt)
            p["deconv2.w"] = _uniform(rng, (c.D, c.leads, s2), c.D, dt)
            p["deconv2.b"] = _zeros((c.leads,), dt)
        return p

    def block(self, i: int, direction: str) -> MambaBlockParams:
        pre = f"layers.{i}.{direction}."
        g = lambda k: self.params[pre + k]  # noqa: E731
        return MambaBlockParams(
            in_proj=g("in_proj"), conv_w=g("conv_w"), conv_b=g("conv_b"),
            ssm=ssm.SsmParams(A_log=g("ssm.A_log"), D_skip=g("ssm.D_skip"), W_x=g("ssm.W_x"),
                              W_dt=g("ssm.W_dt"), b_dt=g("ssm.b_dt")),
            out_proj=g("out_proj"))

    def parameters(self) -> Iterator[Tensor]:
        return iter(self.params.values())

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.params.items())

    def num_parameters(self) -> int:
        return sum(t.size for t in self.params.values())

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def __call__(self, lr) -> Tensor:
        return self.forward(lr)

    def forward(self, lr) -> Tensor:
        """``lr [leads, L]`` or ``[B, leads, L]`` -> ``[..., leads, r*L]``."""
        c = self.config
        x = ag.as_tensor(lr)
        if x.dtype != self.dtype:
            x = Tensor(x.data.astype(self.dtype))
        squeeze = x.ndim == 2
        if squeeze:
            x = ag.expand_dims(x, 0)
        if x.ndim != 3 or x.shape[1] != c.leads:
            raise ValueError(f"expected input [B, {c.leads}, L], got {x.shape}")
        kw = {"scan_impl": c.scan_impl, "exact_zoh_b": c.exact_zoh_b}
        h = ag.conv1d(x, self.params["front.w"], self.params["front.b"], padding="same")
        h = ag.swapaxes(h, 1, 2)
        for i in range(c.M):
            h = bidirectional_mamba(h, self.block(i, "fwd"), self.block(i, "bwd"), **kw)
        h = ag.swapaxes(h, 1, 2)
        if c.use_pixel_shuffle:
            h = ag.conv1d(h, self.params["head.w"], self.params["head.b"], padding="same")
            out = pixel_shuffle_1d(h, c.r)
        else:
            s1, s2 = c.deconv_strides
            h = ag.conv_transpose1d(h, self.params["deconv1.w"], self.params["deconv1.b"], stride=s1)
            h = ag.silu(h)
            out = ag.conv_transpose1d(h, self.params["deconv2.w"], self.params["deconv2.b"], stride=s2)
        if c.use_skip_connection:
            out = out + Tensor(linear_interp_upsample_array(x.data, c.r))
        if squeeze:
            out = ag.reshape(out, out.shape[1:])
        return out

    def predict(self, lr: np.ndarray, batch_size: int = 16) -> np.ndarray:
        """Inference on ``[N, leads, L]`` or ``[leads, L]`` without recording a graph."""
        lr = np.asarray(lr)
        with ag.no_grad():
            if lr.ndim == 2:
                return self.forward(lr).data
            return np.concatenate([self.forward(lr[i:i + batch_size]).data
                                   for i in range(0, len(lr), batch_size)])

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            missing = set(self.params) - set(state)
            extra = set(state) - set(self.params)
            raise ValueError(f"state dict mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise ValueError(f"shape mismatch for {k}: {v.shape} vs {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=self.dtype)


def msecg_forward(lr: Signal, model: MSECG) -> Signal:
    """Signal-level inference: ``[leads, L]`` at f Hz to ``[leads, r*L]`` at r*f Hz."""
    if lr.channels != model.config.leads:
        raise ValueError(f"model expects {model.config.leads} leads, got {lr.channels}")
    out = model.predict(lr.data)
    return Signal(out, lr.sample_rate * model.config.r)


def count_params(config: ModelConfig) -> int:
    """Exact learnable-scalar count, computed from the configuration alone."""
    c = config
    D, di, n, R = c.D, c.d_inner, c.d_state, c.dt_rank
    front = D * c.leads * c.conv_kernel_front + D
    block = (D * 2 * di                  # in-projection
             + di * c.d_conv + di        # depthwise conv
             + di * (R + 2 * n)          # x -> (dt, B, C)
             + R * di + di               # dt up-projection and bias
             + di * n + di               # A_log, D_skip
             + di * D)                   # out-projection
    if c.use_pixel_shuffle:
        head = c.leads * c.r * D * c.conv_kernel_head + c.leads * c.r
    else:
        s1, s2 = c.deconv_strides
        head = D * D * s1 + D + D * c.leads * s2 + c.leads
    return front + 2 * c.M * block + head
