"""Reconstruction quality metrics and their per-segment aggregation."""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

METRICS = ("mse", "cos", "snr", "mad")


def _pair(s, g) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(s, dtype=np.float64).ravel()
    g = np.asarray(g, dtype=np.float64).ravel()
    if s.shape != g.shape:
        raise ValueError(f"length mismatch: {s.size} vs {g.size}")
    if s.size == 0:
        raise ValueError("empty signals")
    return s, g


def mse(s, g) -> float:
    s, g = _pair(s, g)
    d = s - g
    return float(np.dot(d, d) / d.size)


def cosine_similarity(s, g) -> float:
    s, g = _pair(s, g)
    ns, ng = np.linalg.norm(s), np.linalg.norm(g)
    if ns == 0 or ng == 0:
        raise ValueError("cosine similarity undefined for a zero-norm signal")
    return float(np.clip(np.dot(s, g) / (ns * ng), -1.0, 1.0))


def snr_db(s, g) -> float:
    """``10 log10(sum g^2 / sum (s - g)^2)``; ``+inf`` when ``s == g``."""
    s, g = _pair(s, g)
    d = s - g
    err = np.dot(d, d)
    if err == 0:
        return math.inf
    return float(10.0 * np.log10(np.dot(g, g) / err))


def mad(s, g) -> float:
    s, g = _pair(s, g)
    return float(np.max(np.abs(s - g)))


def segment_metrics(s, g) -> dict[str, float]:
    return {"mse": mse(s, g), "cos": cosine_similarity(s, g), "snr": snr_db(s, g), "mad": mad(s, g)}


def _mean_std(values: np.ndarray) -> tuple[float, float]:
    if values.size == 0:
        return math.nan, math.nan
    std = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return float(np.mean(values)), std


@dataclass
class MetricsReport:
    """Per-segment metrics with mean and sample std (n - 1) per metric.

    Segments with infinite SNR are left out of the SNR aggregate and counted
    in ``snr_infinite``.
    """

    method: str
    segment_ids: list[str]
    values: dict[str, np.ndarray]
    summary: dict[str, tuple[float, float]] = field(init=False)
    snr_infinite: int = field(init=False)

    def __post_init__(self):
        self.values = {k: np.asarray(self.values[k], dtype=np.float64) for k in METRICS}
        self.summary = {}
        for k in METRICS:
            v = self.values[k]
            if k == "snr":
                v = v[np.isfinite(v)]
            self.summary[k] = _mean_std(v)
        self.snr_infinite = int(np.sum(~np.isfinite(self.values["snr"])))

    @property
    def count(self) -> int:
        return len(self.segment_ids)

    def mean(self, metric: str) -> float:
        return self.summary[metric][0]

    def std(self, metric: str) -> float:
        return self.summary[metric][1]

    def to_dict(self) -> dict:
        def clean(x):
            return None if not math.isfinite(x) else x
        return {
            "method": self.method,
            "count": self.count,
            "snr_infinite": self.snr_infinite,
            "summary": {k: {"mean": clean(m), "std": clean(s)} for k, (m, s) in self.summary.items()},
            "segments": [{"id": sid, **{k: clean(float(self.values[k][i])) for k in METRICS}}
                         for i, sid in enumerate(self.segment_ids)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", *METRICS])
        for i, sid in enumerate(self.segment_ids):
            w.writerow([sid, *(repr(float(self.values[k][i])) for k in METRICS)])
        w.writerow(["mean", *(repr(self.summary[k][0]) for k in METRICS)])
        w.writerow(["std", *(repr(self.summary[k][1]) for k in METRICS)])
        return buf.getvalue()


def report_from_csv(text: str, method: str = "") -> dict:
    """Parse ``to_csv`` output back into plain values (for cross-format checks)."""
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], rows[1:]
    out = {"segments": [], "summary": {}}
    for row in body:
        vals = {k: float(v) for k, v in zip(header[1:], row[1:])}
        if row[0] in ("mean", "std"):
            for k, v in vals.items():
                out["summary"].setdefault(k, {})[row[0]] = v
        else:
            out["segments"].append({"id": row[0], **vals})
    return out


def evaluate(predict: Callable[[np.ndarray], np.ndarray], segments: Sequence, method: str = "model",
             threads: int = 1) -> MetricsReport:
    """Score ``predict(lr) -> hr`` on segments exposing ``lr``, ``hr`` and ``record_id``.

    Metrics are computed over each flattened multi-lead segment.
    """
    if not segments:
        raise ValueError("evaluate needs at least one segment")

    def one(seg):
        pred = np.asarray(predict(seg.lr.data))
        if pred.shape != seg.hr.data.shape:
            raise ValueError(f"{seg.record_id}: prediction shape {pred.shape} != GT {seg.hr.data.shape}")
        return segment_metrics(pred, seg.hr.data)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, segments))
    else:
        rows = [one(s) for s in segments]
    report = MetricsReport(method, [s.record_id for s in segments],
                           {k: [r[k] for r in rows] for k in METRICS})
    if report.snr_infinite:
        warnings.warn(f"{report.snr_infinite} segment(s) reconstructed exactly; "
                      "excluded from the SNR aggregate", stacklevel=2)
    return report


def li_predictor(ratio: int = 10) -> Callable[[np.ndarray], np.ndarray]:
    from .dsp import linear_interp_upsample_array
    return lambda lr: linear_interp_upsample_array(np.asarray(lr, dtype=np.float64), ratio)


def comparison_table(reports: Sequence[MetricsReport]) -> str:
    """Markdown table of mean +- std per method."""
    lines = ["| method | MSE (x1e-3) | CoS | SNR (dB) | MAD |", "|---|---|---|---|---|"]
    for r in reports:
        m, s = r.summary["mse"]
        cells = [f"{m * 1e3:.3f} +- {s * 1e3:.3f}"]
        for k in ("cos", "snr", "mad"):
            m, s = r.summary[k]
            cells.append(f"{m:.4f} +- {s:.4f}")
        lines.append(f"| {r.method} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
