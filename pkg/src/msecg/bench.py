"""Runtime of the sequential and parallel scans as a function of sequence length."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import ssm


@dataclass
class BenchRow:
    impl: str
    length: int
    median_s: float
    reps: int


def random_scan_inputs(L: int, d_inner: int, d_state: int, rng: np.random.Generator):
    Abar = rng.uniform(0.5, 0.999, size=(L, d_inner, d_state))
    Bbar = rng.normal(size=(L, d_inner, d_state)) * 0.1
    C = rng.normal(size=(L, d_state))
    x = rng.normal(size=(L, d_inner))
    D = rng.normal(size=d_inner)
    return Abar, Bbar, C, x, D


def _median_time(fn, reps: int) -> float:
    fn()  # warm-up
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def bench_scan(lengths, reps: int = 5, d_inner: int = 8, d_state: int = 16, seed: int = 0,
               impls=("sequential", "parallel")) -> tuple[list[BenchRow], float]:
    """Time each implementation per length; also returns the largest
    parallel/sequential disagreement seen."""
    rng = np.random.default_rng(seed)
    rows, worst = [], 0.0
    for L in lengths:
        args = random_scan_inputs(int(L), d_inner, d_state, rng)
        outs = {}
        for impl in impls:
            fn = ssm.scan_parallel if impl == "parallel" else ssm.scan_sequential
            outs[impl] = fn(*args)
            rows.append(BenchRow(impl, int(L), _median_time(lambda: fn(*args), reps), reps))
        if len(outs) == 2:
            worst = max(worst, float(np.max(np.abs(outs["parallel"] - outs["sequential"]))))
    return rows, worst


def linear_fit_r2(lengths, times) -> tuple[float, float, float]:
    """Least-squares ``time = a*L + b``; returns ``(a, b, R^2)``."""
    L = np.asarray(lengths, dtype=np.float64)
    t = np.asarray(times, dtype=np.float64)
    a, b = np.polyfit(L, t, 1)
    resid = t - (a * L + b)
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(a), float(b), r2
