"""Record manifests, fold splits, synthetic ECG/noise and LR/HR pair construction.

On-disk format: a JSON-lines manifest, one record per line, pointing at raw
little-endian float32 rasters (channel-major, ``.f32``).
"""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import dsp
from .dsp import CorruptionRecord, DspConfig, Signal

RASTER_DTYPE = np.dtype("<f4")


class DataError(ValueError):
    def __init__(self, message: str, record_id: str | None = None):
        super().__init__(message)
        self.record_id = record_id


class MissingFileError(DataError):
    pass


class LengthMismatchError(DataError):
    pass


class FoldError(DataError):
    pass


@dataclass
class RecordManifest:
    record_id: str
    fold: int
    leads: int
    sample_rate: float
    length: int
    path: str
    labels: dict | None = None

    def __post_init__(self):
        if not (isinstance(self.fold, int) and 1 <= self.fold <= 10):
            raise FoldError(f"record {self.record_id}: fold {self.fold!r} not in 1..10", self.record_id)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class Record:
    meta: RecordManifest
    signal: Signal

    @property
    def record_id(self) -> str:
        return self.meta.record_id

    @property
    def fold(self) -> int:
        return self.meta.fold


# -- raster / manifest io -----------------------------------------------------

def write_raster(path: Path, data: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(data, dtype=RASTER_DTYPE).tofile(path)


def read_raster(path: Path, channels: int, length: int, record_id: str | None = None) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"record {record_id}: raster file not found: {path}", record_id)
    expected = channels * length * RASTER_DTYPE.itemsize
    actual = path.stat().st_size
    if actual != expected:
        raise LengthMismatchError(
            f"record {record_id}: {path} has {actual} bytes, manifest declares "
            f"{channels}x{length} float32 = {expected} bytes", record_id)
    return np.fromfile(path, dtype=RASTER_DTYPE).reshape(channels, length)


def write_manifest(path: Path, entries: Iterable[RecordManifest]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for e in entries:
            fh.write(e.to_json() + "\n")


def read_manifest(path: Path) -> list[RecordManifest]:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"manifest not found: {path}")
    entries = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                entries.append(RecordManifest(**json.loads(line)))
            except (TypeError, json.JSONDecodeError) as exc:
                raise DataError(f"{path}:{lineno}: bad manifest line ({exc})") from exc
    return entries


def save_records(out_dir: Path, records: Sequence[tuple[str, int, Signal]] | Sequence[Record],
                 manifest_name: str = "manifest.jsonl") -> Path:
    """Write ``(record_id, fold, signal)`` items as rasters plus a manifest."""
    out_dir = Path(out_dir)
    entries = []
    for item in records:
        if isinstance(item, Record):
            rid, fold, sig, labels = item.record_id, item.fold, item.signal, item.meta.labels
        else:
            rid, fold, sig = item[:3]
            labels = item[3] if len(item) > 3 else None
        rel = f"records/{rid}.f32"
        write_raster(out_dir / rel, sig.data)
        entries.append(RecordManifest(record_id=rid, fold=int(fold), leads=sig.channels,
                                      sample_rate=float(sig.sample_rate), length=sig.length,
                                      path=rel, labels=labels))
    manifest = out_dir / manifest_name
    write_manifest(manifest, entries)
    return manifest


def load_dataset(manifest_path: Path, folds: Iterable[int] | None = None) -> list[Record]:
    """Load every record (optionally only ``folds``) named by a manifest."""
    manifest_path = Path(manifest_path)
    wanted = set(folds) if folds is not None else None
    out = []
    for meta in read_manifest(manifest_path):
        if wanted is not None and meta.fold not in wanted:
            continue
        data = read_raster(manifest_path.parent / meta.path, meta.leads, meta.length, meta.record_id)
        out.append(Record(meta, Signal(data, meta.sample_rate)))
    return out


def split_folds(records: Sequence) -> tuple[list, list, list]:
    """Partition by fold: 1-8 train, 9 validation, 10 test."""
    train = [r for r in records if 1 <= r.fold <= 8]
    val = [r for r in records if r.fold == 9]
    test = [r for r in records if r.fold == 10]
    for name, part in (("train", train), ("validation", val), ("test", test)):
        if not part:
            warnings.warn(f"{name} split is empty", stacklevel=2)
    return train, val, test


# -- synthetic generators -----------------------------------------------------

# (offset from R in s at 60 bpm, amplitude, gaussian width in s)
_PQRST = {
    "P": (-0.20, 0.15, 0.025),
    "Q": (-0.035, -0.12, 0.010),
    "R": (0.0, 1.0, 0.012),
    "S": (0.035, -0.25, 0.010),
    "T": (0.28, 0.30, 0.050),
}


def synth_ecg(seed: int, duration: float = 10.0, fs: float = 500.0, heart_rate: float = 60.0,
              leads: int = 12) -> Signal:
    """Sum-of-gaussians PQRST beats with +-5% RR jitter and per-lead gains."""
    if fs < 100:
        raise dsp.ParameterError(f"fs must be >= 100 Hz, got {fs}")
    if not 30 <= heart_rate <= 220:
        raise dsp.ParameterError(f"heart rate must be in [30, 220] bpm, got {heart_rate}")
    if duration <= 0 or leads < 1:
        raise dsp.ParameterError("duration and leads must be positive")
    rng = np.random.default_rng(seed)
    rr = 60.0 / heart_rate
    n = int(round(duration * fs))
    t = np.arange(n) / fs

    beats = []
    tb = -rr * rng.uniform(0.0, 1.0)
    while tb < duration + rr:
        beats.append(tb)
        tb += rr * rng.uniform(0.95, 1.05)
    beats = np.asarray(beats)
    # P and T positions stretch with the cycle length
    stretch = math.sqrt(rr)

    gains = rng.uniform(0.7, 1.5, size=leads)
    wave_scale = rng.uniform(0.8, 1.2, size=(leads, len(_PQRST)))
    out = np.zeros((leads, n))
    for w, (name, (off, amp, width)) in enumerate(_PQRST.items()):
        if name in ("P", "T"):
            off *= stretch
        centers = beats + off
        bump = np.exp(-0.5 * ((t[None, :] - centers[:, None]) / width) ** 2).sum(axis=0)
        scale = np.ones(leads) if name == "R" else wave_scale[:, w]
        out += (gains * scale * amp)[:, None] * bump[None, :]
    return Signal(out, fs)


def synth_noise(kind: str, seed: int, duration: float = 30.0, fs: float = 360.0,
                channels: int = 2) -> Signal:
    """Unit-RMS stand-ins for baseline wander, muscle artifact and electrode motion."""
    if kind not in dsp.NOISE_KINDS:
        raise dsp.ParameterError(f"unknown noise kind {kind!r}")
    rng = np.random.default_rng([seed, dsp.NOISE_KINDS.index(kind)])
    n = int(round(duration * fs))
    t = np.arange(n) / fs
    out = np.zeros((channels, n))
    for c in range(channels):
        if kind == "BW":
            for _ in range(int(rng.integers(2, 4))):
                f = rng.uniform(0.05, 0.5)
                drift = np.cumsum(rng.normal(0.0, math.sqrt(0.05 / fs), n))
                out[c] += rng.uniform(0.5, 1.5) * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi) + drift)
        elif kind == "MA":
            white = Signal(rng.normal(size=n), fs)
            f_hi = min(40.0, 0.45 * fs)
            out[c] = dsp.bandpass(white, 5.0, f_hi, order=2).data[0]
        else:
            count = max(1, int(rng.poisson(0.5 * duration)))
            for start in rng.uniform(0.0, duration, size=count):
                f = rng.uniform(1.0, 8.0)
                tau = rng.uniform(0.1, 0.4)
                amp = rng.uniform(0.5, 2.0) * rng.choice([-1.0, 1.0])
                local = t - start
                mask = local >= 0
                out[c, mask] += amp * np.exp(-local[mask] / tau) * np.sin(2 * np.pi * f * local[mask])
        out[c] /= math.sqrt(np.mean(out[c] ** 2))
    return Signal(out, fs)


def make_noise_bank(seed: int, duration: float = 120.0, fs_native: float = 360.0,
                    fs_target: float = 50.0, channels: int = 2) -> dict[str, list[Signal]]:
    """One synthetic recording per kind, rate-matched to the LR signals."""
    bank = {}
    for kind in dsp.NOISE_KINDS:
        native = synth_noise(kind, seed, duration, fs_native, channels)
        bank[kind] = [dsp.resample(native, fs_target)]
    return bank


def synth_records(seed: int, n: int, duration: float = 10.0, fs: float = 500.0, leads: int = 12,
                  folds: Sequence[int] | None = None) -> list[Record]:
    """``n`` synthetic records with heart rates drawn in [50, 100] bpm.

    Folds cycle 1..10 unless given explicitly.
    """
    rng = np.random.default_rng([seed, 7919])
    records = []
    for i in range(n):
        fold = int(folds[i]) if folds is not None else i % 10 + 1
        bpm = float(rng.uniform(50, 100))
        sig = synth_ecg(int(rng.integers(2**31)), duration, fs, bpm, leads)
        rid = f"syn{i:05d}"
        meta = RecordManifest(rid, fold, leads, fs, sig.length, f"records/{rid}.f32",
                              {"heart_rate": round(bpm, 3)})
        records.append(Record(meta, sig))
    return records


# -- pairs ---------------------------------------------------------------------

@dataclass
class SegmentPair:
    record_id: str
    fold: int
    lr: Signal
    hr: Signal
    corruption: CorruptionRecord = field(default_factory=CorruptionRecord)

    def __post_init__(self):
        if self.hr.length != self.lr.length * round(self.hr.sample_rate / self.lr.sample_rate):
            raise DataError(f"pair {self.record_id}: hr length {self.hr.length} is not "
                            f"ratio x lr length {self.lr.length}", self.record_id)
        if self.hr.channels != self.lr.channels:
            raise DataError(f"pair {self.record_id}: lead counts differ", self.record_id)


def ground_truth(sig: Signal, cfg: DspConfig) -> Signal:
    return dsp.bandpass(sig, cfg.f_lo, cfg.f_hi, cfg.order, zero_phase=cfg.zero_phase)


def make_pair(record: Record, cfg: DspConfig, rng: np.random.Generator,
              noise_bank: dsp.NoiseBank | None = None) -> SegmentPair:
    gt = ground_truth(record.signal, cfg)
    # trim so the HR length is an exact multiple of the factor
    usable = (gt.length // cfg.factor) * cfg.factor
    gt = Signal(gt.data[:, :usable], gt.sample_rate)
    lr = dsp.decimate_skip(gt, cfg.factor)
    lr, rec = dsp.corrupt_segment(lr, noise_bank, rng, cfg.p_noise, cfg.snr_range)
    return SegmentPair(record.record_id, record.fold, lr, gt, rec)


def make_pairs(records: Sequence[Record], cfg: DspConfig, seed: int,
               noise_bank: dsp.NoiseBank | None = None, threads: int = 1) -> list[SegmentPair]:
    """Filter to GT, skip-decimate to LR and corrupt per the noise protocol.

    Record ``i`` uses the generator seeded by ``(seed, i)``, so the result does
    not depend on ``threads``.
    """
    def one(i: int) -> SegmentPair:
        return make_pair(records[i], cfg, dsp.segment_rng(seed, i), noise_bank)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, range(len(records))))
    return [one(i) for i in range(len(records))]


def save_pairs(out_dir: Path, pairs: Sequence[SegmentPair]) -> Path:
    out_dir = Path(out_dir)
    lines = []
    for p in pairs:
        lr_rel, hr_rel = f"lr/{p.record_id}.f32", f"hr/{p.record_id}.f32"
        write_raster(out_dir / lr_rel, p.lr.data)
        write_raster(out_dir / hr_rel, p.hr.data)
        lines.append(json.dumps({
            "record_id": p.record_id, "fold": p.fold, "leads": p.hr.channels,
            "lr_rate": p.lr.sample_rate, "hr_rate": p.hr.sample_rate,
            "lr_length": p.lr.length, "hr_length": p.hr.length,
            "lr_path": lr_rel, "hr_path": hr_rel, "corruption": p.corruption.to_dict(),
        }, sort_keys=True))
    path = out_dir / "pairs.jsonl"
    path.write_text("".join(line + "\n" for line in lines))
    return path


def load_pairs(path: Path, folds: Iterable[int] | None = None) -> list[SegmentPair]:
    """Load a prepared pair set from ``pairs.jsonl`` or its directory."""
    path = Path(path)
    if path.is_dir():
        path = path / "pairs.jsonl"
    if not path.is_file():
        raise MissingFileError(f"pair manifest not found: {path}")
    wanted = set(folds) if folds is not None else None
    pairs = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        e = json.loads(line)
        if wanted is not None and e["fold"] not in wanted:
            continue
        rid = e["record_id"]
        lr = read_raster(path.parent / e["lr_path"], e["leads"], e["lr_length"], rid)
        hr = read_raster(path.parent / e["hr_path"], e["leads"], e["hr_length"], rid)
        pairs.append(SegmentPair(rid, e["fold"], Signal(lr, e["lr_rate"]), Signal(hr, e["hr_rate"]),
                                 CorruptionRecord.from_dict(e["corruption"])))
    return pairs


def save_noise_bank(out_dir: Path, bank: dsp.NoiseBank) -> Path:
    items = []
    for kind in sorted(bank):
        for i, sig in enumerate(bank[kind]):
            items.append((f"{kind}_{i:03d}", 1, sig, {"kind": kind}))
    return save_records(out_dir, items, manifest_name="manifest.jsonl")


def load_noise_bank(manifest_path: Path) -> dict[str, list[Signal]]:
    bank: dict[str, list[Signal]] = {}
    for rec in load_dataset(manifest_path):
        kind = (rec.meta.labels or {}).get("kind")
        if kind not in dsp.NOISE_KINDS:
            raise DataError(f"noise record {rec.record_id} has no valid 'kind' label", rec.record_id)
        bank.setdefault(kind, []).append(rec.signal)
    return bank
