"""Two-stage Adam training with best-on-validation checkpointing."""

from __future__ import annotations

import json
import logging
import struct
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autograd as ag
from . import dsp
from .autograd import NonFiniteError, Tensor
from .data import SegmentPair
from .metrics import mse
from .model import MSECG, ModelConfig

log = logging.getLogger(__name__)

MAGIC = b"MSECGCKP"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class StageConfig:
    epochs: int
    lr: float

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")


@dataclass
class TrainConfig:
    batch_size: int = 64
    stage1: StageConfig = field(default_factory=lambda: StageConfig(300, 1e-4))
    stage2: StageConfig = field(default_factory=lambda: StageConfig(50, 1e-5))
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # desk-scale caps on the number of segments used; None keeps everything
    max_train_segments: int | None = None
    max_val_segments: int | None = None

    def __post_init__(self):
        if isinstance(self.stage1, dict):
            self.stage1 = StageConfig(**self.stage1)
        if isinstance(self.stage2, dict):
            self.stage2 = StageConfig(**self.stage2)
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


# -- loss and optimizer -------------------------------------------------------

def l2_loss(pred, target) -> Tensor:
    """Mean squared error over all elements."""
    pred, target = ag.as_tensor(pred), ag.as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return ag.mean(ag.square(pred - target))


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptimizerState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              ) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """One bias-corrected Adam update. Inputs are not modified."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for {name}; step aborted")
    t = state.t + 1
    new_params, m_out, v_out = {}, {}, {}
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        if g is None:
            new_params[name], m_out[name], v_out[name] = p, m, v
            continue
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / c1
        v_hat = v / c2
        new_params[name] = (p - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype)
        m_out[name], v_out[name] = m.astype(p.dtype), v.astype(p.dtype)
    return new_params, OptimizerState(m_out, v_out, t)


# -- checkpoints --------------------------------------------------------------

@dataclass
class Checkpoint:
    model_config: dict
    params: dict[str, np.ndarray]
    optimizer: OptimizerState
    epoch: int
    stage: int
    val_mse: float
    train_config: dict | None = None
    version: int = FORMAT_VERSION

    def to_model(self) -> MSECG:
        model = MSECG(ModelConfig.from_dict(self.model_config))
        model.load_state_dict(self.params)
        return model


def _blob_dtype(arr: np.ndarray) -> np.dtype:
    return np.dtype("<f8") if arr.dtype == np.float64 else np.dtype("<f4")


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    entries, blobs, offset = [], [], 0
    groups = [("param", ckpt.params), ("adam_m", ckpt.optimizer.m), ("adam_v", ckpt.optimizer.v)]
    for group, tensors in groups:
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name])
            dt = _blob_dtype(arr)
            raw = arr.astype(dt).tobytes()
            entries.append({"group": group, "name": name, "shape": list(arr.shape),
                            "dtype": dt.str, "offset": offset, "nbytes": len(raw)})
            blobs.append(raw)
            offset += len(raw)
    payload = b"".join(blobs)
    header = {
        "model_config": ckpt.model_config, "train_config": ckpt.train_config,
        "epoch": ckpt.epoch, "stage": ckpt.stage, "val_mse": ckpt.val_mse, "adam_t": ckpt.optimizer.t,
        "tensors": entries, "payload_bytes": len(payload), "crc32": zlib.crc32(payload),
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<II", ckpt.version, len(hb)) + hb + payload


def save_checkpoint(path: Path, ckpt: Checkpoint) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(checkpoint_bytes(ckpt))
    tmp.replace(path)


def load_checkpoint(path: Path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    buf = path.read_bytes()
    if len(buf) < len(MAGIC) + 8 or buf[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not an MSECG checkpoint (bad magic or truncated)")
    version, hlen = struct.unpack_from("<II", buf, len(MAGIC))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    start = len(MAGIC) + 8
    if len(buf) < start + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(buf[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    payload = buf[start + hlen:]
    if len(payload) != header["payload_bytes"]:
        raise CheckpointError(f"{path}: truncated payload ({len(payload)} of {header['payload_bytes']} bytes)")
    if zlib.crc32(payload) != header["crc32"]:
        raise CheckpointError(f"{path}: payload checksum mismatch")
    groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "adam_m": {}, "adam_v": {}}
    for e in header["tensors"]:
        raw = payload[e["offset"]:e["offset"] + e["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"])
        groups[e["group"]][e["name"]] = arr.astype(arr.dtype.newbyteorder("="))
    return Checkpoint(
        model_config=header["model_config"], params=groups["param"],
        optimizer=OptimizerState(groups["adam_m"], groups["adam_v"], header["adam_t"]),
        epoch=header["epoch"], stage=header["stage"], val_mse=header["val_mse"],
        train_config=header["train_config"], version=version)


# -- training loop ------------------------------------------------------------

@dataclass
class EpochLog:
    epoch: int
    stage: int
    lr: float
    train_loss: float
    val_mse: float


def validation_mse(model: MSECG, pairs: Sequence[SegmentPair]) -> float:
    """Mean of per-segment MSE on the stored LR inputs."""
    lr = np.stack([p.lr.data for p in pairs])
    pred = model.predict(lr)
    return float(np.mean([mse(pred[i], p.hr.data) for i, p in enumerate(pairs)]))


def training_loss(model: MSECG, pairs: Sequence[SegmentPair]) -> float:
    """Full-set L2 loss on the stored (uncorrupted-at-train-time) inputs."""
    lr = np.stack([p.lr.data for p in pairs])
    hr = np.stack([p.hr.data for p in pairs]).astype(np.float64)
    return float(np.mean((model.predict(lr) - hr) ** 2))


def _epoch_inputs(pairs, noise_bank, dsp_cfg: dsp.DspConfig, seed: int, stage: int, epoch: int):
    """LR inputs for one epoch; re-corrupted from the GT when a noise bank is given."""
    if not noise_bank or dsp_cfg.p_noise == 0:
        return [p.lr.data for p in pairs], None
    out, records = [], []
    for i, p in enumerate(pairs):
        clean = dsp.decimate_skip(p.hr, dsp_cfg.factor)
        noisy, rec = dsp.corrupt_segment(clean, noise_bank, dsp.segment_rng(seed, stage, epoch, i),
                                         dsp_cfg.p_noise, dsp_cfg.snr_range)
        out.append(noisy.data)
        records.append(rec)
    return out, records


def _snapshot(model: MSECG, state: OptimizerState, epoch: int, stage: int, val: float,
              cfg: TrainConfig) -> Checkpoint:
    return Checkpoint(
        model_config=model.config.to_dict(),
        params={k: v.data.copy() for k, v in model.params.items()},
        optimizer=OptimizerState({k: v.copy() for k, v in state.m.items()},
                                 {k: v.copy() for k, v in state.v.items()}, state.t),
        epoch=epoch, stage=stage, val_mse=val, train_config=cfg.to_dict())


def train(train_pairs: Sequence[SegmentPair], val_pairs: Sequence[SegmentPair], model: MSECG,
          cfg: TrainConfig, noise_bank: dsp.NoiseBank | None = None,
          dsp_cfg: dsp.DspConfig | None = None, history: list[EpochLog] | None = None,
          ) -> Checkpoint:
    """Stage 1 at ``cfg.stage1.lr``, then stage 2 resumed from the stage-1 best.

    Each stage starts with an evaluation-only epoch 0. Returns the
    checkpoint with the lowest validation MSE seen in either stage.
    """
    if not train_pairs:
        raise dsp.ConfigurationError("training split is empty")
    if not val_pairs:
        raise dsp.ConfigurationError("validation split is empty")
    if cfg.max_train_segments is not None:
        train_pairs = list(train_pairs)[:cfg.max_train_segments]
    if cfg.max_val_segments is not None:
        val_pairs = list(val_pairs)[:cfg.max_val_segments]
    dsp_cfg = dsp_cfg or dsp.DspConfig()
    history = history if history is not None else []
    targets = [p.hr.data.astype(model.dtype) for p in train_pairs]
    state = OptimizerState()
    best: Checkpoint | None = None

    def record(epoch, stage, lr, train_loss):
        nonlocal best
        val = validation_mse(model, val_pairs)
        history.append(EpochLog(epoch, stage, lr, train_loss, val))
        log.info("stage %d epoch %d lr %.1e train %.6g val %.6g", stage, epoch, lr, train_loss, val)
        if best is None or val < best.val_mse:
            best = _snapshot(model, state, epoch, stage, val, cfg)

    for stage, sc in ((1, cfg.stage1), (2, cfg.stage2)):
        if stage == 2:
            model.load_state_dict(best.params)
            state = OptimizerState({k: v.copy() for k, v in best.optimizer.m.items()},
                                   {k: v.copy() for k, v in best.optimizer.v.items()}, best.optimizer.t)
        record(0, stage, sc.lr, training_loss(model, train_pairs))
        for epoch in range(1, sc.epochs + 1):
            inputs, _ = _epoch_inputs(train_pairs, noise_bank, dsp_cfg, cfg.seed, stage, epoch)
            order = np.random.default_rng([cfg.seed, 0x5EED, stage, epoch]).permutation(len(train_pairs))
            losses = []
            for s in range(0, len(order), cfg.batch_size):
                idx = order[s:s + cfg.batch_size]
                x = np.stack([inputs[i] for i in idx]).astype(model.dtype)
                y = np.stack([targets[i] for i in idx])
                model.zero_grad()
                loss = l2_loss(model.forward(x), Tensor(y))
                ag.backward(loss)
                names = list(model.params)
                grads = {k: model.params[k].grad for k in names if model.params[k].grad is not None}
                new, state = adam_step(model.state_dict(), grads, state, sc.lr,
                                       cfg.beta1, cfg.beta2, cfg.eps)
                for k in names:
                    model.params[k].data = new[k]
                losses.append(loss.item() * len(idx))
            record(epoch, stage, sc.lr, float(np.sum(losses) / len(order)))
    model.load_state_dict(best.params)
    return best

