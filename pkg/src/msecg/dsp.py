"""Signal preparation and degradation: band-pass filtering, skip decimation,
linear-interpolation upsampling and SNR-controlled noise mixing."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np
from scipy import signal as sps

NOISE_KINDS = ("BW", "MA", "EM")


class ParameterError(ValueError):
    """Invalid argument for a signal-processing op."""


class ConfigurationError(ValueError):
    """The requested protocol cannot be run with the supplied resources."""


@dataclass
class Signal:
    """Channel-major waveform ``data[channels, length]`` sampled at ``sample_rate`` Hz."""

    data: np.ndarray
    sample_rate: float

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 1:
            data = data[None, :]
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ParameterError(f"signal must be [channels, length] with both > 0, got {data.shape}")
        if data.dtype.kind != "f":
            data = data.astype(np.float64)
        if not np.isfinite(data).all():
            raise ParameterError("signal contains non-finite samples")
        if not self.sample_rate > 0:
            raise ParameterError(f"sample rate must be positive, got {self.sample_rate}")
        self.data = data

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def length(self) -> int:
        return self.data.shape[1]

    @property
    def duration(self) -> float:
        return self.length / self.sample_rate


@dataclass
class BiquadCascade:
    """Second-order sections; ``b[i] = (b0, b1, b2)``, ``a[i] = (a1, a2)`` with a0 = 1."""

    b: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        self.b = np.atleast_2d(np.asarray(self.b, dtype=np.float64))
        self.a = np.atleast_2d(np.asarray(self.a, dtype=np.float64))
        if self.b.shape[1] != 3 or self.a.shape[1] != 2 or len(self.a) != len(self.b):
            raise ParameterError("sections need 3 feed-forward and 2 feedback coefficients")

    @property
    def n_sections(self) -> int:
        return len(self.b)

    @property
    def order(self) -> int:
        return 2 * self.n_sections

    @property
    def sos(self) -> np.ndarray:
        return np.hstack([self.b, np.ones((self.n_sections, 1)), self.a])

    def poles(self) -> np.ndarray:
        return np.concatenate([np.roots([1.0, a1, a2]) for a1, a2 in self.a])

    def is_stable(self, margin: float = 1e-9) -> bool:
        return bool(np.all(np.abs(self.poles()) < 1.0 - margin))

    def response(self, freqs, fs: float) -> np.ndarray:
        """Complex frequency response at ``freqs`` (Hz)."""
        z1 = np.exp(-2j * np.pi * np.asarray(freqs, dtype=np.float64) / fs)
        h = np.ones_like(z1)
        for (b0, b1, b2), (a1, a2) in zip(self.b, self.a):
            h = h * (b0 + b1 * z1 + b2 * z1**2) / (1.0 + a1 * z1 + a2 * z1**2)
        return h


def design_butterworth_bandpass(f_lo: float, f_hi: float, fs: float, order: int = 2) -> BiquadCascade:
    """Digital Butterworth band-pass via pre-warped bilinear transform.

    ``order`` is the low-pass prototype order; the band-pass has ``order``
    biquad sections.
    """
    if not (0 < f_lo < f_hi < fs / 2):
        raise ParameterError(f"need 0 < f_lo < f_hi < fs/2, got {f_lo}, {f_hi}, fs={fs}")
    if order < 1:
        raise ParameterError("order must be >= 1")
    # pre-warp so the cutoffs land exactly after the bilinear map
    w_lo = 2 * fs * math.tan(math.pi * f_lo / fs)
    w_hi = 2 * fs * math.tan(math.pi * f_hi / fs)
    w0 = math.sqrt(w_lo * w_hi)
    bw = w_hi - w_lo

    k = np.arange(1, order + 1)
    proto = np.exp(1j * np.pi * (2 * k + order - 1) / (2 * order))
    half = proto * bw / 2
    disc = np.sqrt(half**2 - w0**2 + 0j)
    poles_s = np.concatenate([half + disc, half - disc])
    poles_z = (2 * fs + poles_s) / (2 * fs - poles_s)

    # zeros: `order` at s=0 -> z=1, and `order` at infinity -> z=-1
    tol = 1e-10
    upper = sorted((p for p in poles_z if p.imag > tol), key=lambda p: p.real)
    reals = sorted(p.real for p in poles_z if abs(p.imag) <= tol)
    a_rows = [(-2 * p.real, abs(p) ** 2) for p in upper]
    for i in range(0, len(reals), 2):
        r1, r2 = reals[i], reals[i + 1]
        a_rows.append((-(r1 + r2), r1 * r2))
    b = np.tile([1.0, 0.0, -1.0], (order, 1))
    cascade = BiquadCascade(b=b, a=np.array(a_rows))

    # unit gain at the digital image of the analog centre frequency
    f_c = fs / math.pi * math.atan(w0 / (2 * fs))
    gain = abs(cascade.response([f_c], fs)[0])
    cascade.b[0] /= gain
    if not cascade.is_stable():
        raise ParameterError("designed filter is unstable; cutoffs too close to 0 or Nyquist")
    return cascade


def _edge_pad(n_sections: int) -> int:
    return 3 * 2 * n_sections


def apply_zero_phase(x: Signal, f: BiquadCascade) -> Signal:
    """Forward-backward filtering with odd-reflected edges and steady-state
    initial conditions; magnitude is squared and phase is zero."""
    padlen = _edge_pad(f.n_sections)
    if x.length <= padlen:
        raise ParameterError(f"signal of length {x.length} too short for edge padding {padlen}")
    sos = f.sos
    data = x.data.astype(np.float64)
    left = 2 * data[:, :1] - data[:, padlen:0:-1]
    right = 2 * data[:, -1:] - data[:, -2:-padlen - 2:-1]
    ext = np.concatenate([left, data, right], axis=1)
    zi = sps.sosfilt_zi(sos)[:, None, :]              # [sections, 1, 2]
    y, _ = sps.sosfilt(sos, ext, axis=1, zi=zi * ext[None, :, :1])
    y = y[:, ::-1]
    y, _ = sps.sosfilt(sos, y, axis=1, zi=zi * y[None, :, :1])
    y = y[:, ::-1][:, padlen:-padlen]
    return Signal(np.ascontiguousarray(y).astype(x.data.dtype), x.sample_rate)


def apply_causal(x: Signal, f: BiquadCascade) -> Signal:
    """Single forward pass, started from the steady state of the first sample."""
    data = x.data.astype(np.float64)
    zi = sps.sosfilt_zi(f.sos)[:, None, :]
    y, _ = sps.sosfilt(f.sos, data, axis=1, zi=zi * data[None, :, :1])
    return Signal(y.astype(x.data.dtype), x.sample_rate)


def bandpass(x: Signal, f_lo: float = 1.0, f_hi: float = 45.0, order: int = 2,
             zero_phase: bool = True) -> Signal:
    cascade = design_butterworth_bandpass(f_lo, f_hi, x.sample_rate, order)
    return apply_zero_phase(x, cascade) if zero_phase else apply_causal(x, cascade)


def decimate_skip(x: Signal, factor: int = 10) -> Signal:
    """Keep every ``factor``-th sample, starting at index 0. No anti-alias filter."""
    if factor < 1:
        raise ParameterError(f"decimation factor must be >= 1, got {factor}")
    return Signal(np.ascontiguousarray(x.data[:, ::factor]), x.sample_rate / factor)


def linear_interp_upsample_array(x: np.ndarray, ratio: int = 10) -> np.ndarray:
    """Upsample along the last axis; anchors at ``i * ratio`` are copied exactly
    and samples after the final anchor hold its value."""
    x = np.asarray(x)
    if x.shape[-1] < 2:
        raise ParameterError("linear interpolation needs at least 2 samples")
    if ratio < 1:
        raise ParameterError(f"ratio must be >= 1, got {ratio}")
    frac = (np.arange(ratio) / ratio).astype(x.dtype)
    start = x[..., :-1, None]
    step = (x[..., 1:] - x[..., :-1])[..., None]
    body = (start + step * frac).reshape(x.shape[:-1] + (-1,))
    tail = np.repeat(x[..., -1:], ratio, axis=-1)
    return np.concatenate([body, tail], axis=-1)


def linear_interp_upsample(x: Signal, ratio: int = 10) -> Signal:
    return Signal(linear_interp_upsample_array(x.data, ratio), x.sample_rate * ratio)


def resample(x: Signal, fs_out: float) -> Signal:
    """Polyphase resampling to ``fs_out`` (used for rate-matching noise recordings)."""
    frac = Fraction(fs_out / x.sample_rate).limit_denominator(1000)
    y = sps.resample_poly(x.data.astype(np.float64), frac.numerator, frac.denominator, axis=1)
    return Signal(y.astype(x.data.dtype), x.sample_rate * frac.numerator / frac.denominator)


def power(x: np.ndarray) -> float:
    return float(np.mean(np.square(np.asarray(x, dtype=np.float64))))


def noise_scale(clean: np.ndarray, noise: np.ndarray, snr_db: float) -> float:
    p_clean, p_noise = power(clean), power(noise)
    if p_clean <= 0 or p_noise <= 0:
        raise ParameterError("clean and noise must both have non-zero power")
    return math.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))


def mix_noise_at_snr(clean: Signal, noise: Signal, snr_db: float) -> Signal:
    """``clean + a * noise`` with ``a`` chosen so the mixture has the requested SNR.

    A single-channel noise is broadcast across all channels of ``clean``.
    """
    try:
        n = np.broadcast_to(noise.data, clean.data.shape)
    except ValueError:
        raise ParameterError(f"noise shape {noise.data.shape} incompatible with {clean.data.shape}") from None
    a = noise_scale(clean.data, n, snr_db)
    return Signal((clean.data + a * n).astype(clean.data.dtype), clean.sample_rate)


@dataclass
class CorruptionRecord:
    kind: str = "clean"
    snr_db: float | None = None
    offset: int | None = None
    source: int | None = None
    channel: int | None = None

    @property
    def is_clean(self) -> bool:
        return self.kind == "clean"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "CorruptionRecord":
        return cls(**{k: d.get(k) for k in ("kind", "snr_db", "offset", "source", "channel")})


NoiseBank = Mapping[str, Sequence[Signal]]


def corrupt_segment(clean: Signal, noise_bank: NoiseBank | None, rng: np.random.Generator,
                    p_noise: float = 0.5, snr_range: tuple[float, float] = (-5.0, 15.0),
                    ) -> tuple[Signal, CorruptionRecord]:
    """Contaminate ``clean`` with probability ``p_noise``.

    A noise kind is drawn uniformly from the bank, then an SNR uniformly from
    ``snr_range``, a source recording, one of its channels and a window
    offset. The mono window is applied to every channel.
    """
    if rng.random() >= p_noise:
        return clean, CorruptionRecord()
    kinds = sorted(noise_bank) if noise_bank else []
    if not kinds:
        raise ConfigurationError("noise was drawn but the noise bank is empty")
    kind = kinds[int(rng.integers(len(kinds)))]
    sources = noise_bank[kind]
    if len(sources) == 0:
        raise ConfigurationError(f"noise bank has no recordings of kind {kind!r}")
    lo, hi = snr_range
    snr = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
    src = int(rng.integers(len(sources)))
    noise = sources[src]
    if noise.length < clean.length:
        raise ConfigurationError(
            f"{kind} recording {src} has {noise.length} samples, segment needs {clean.length}")
    channel = int(rng.integers(noise.channels))
    offset = int(rng.integers(noise.length - clean.length + 1))
    window = Signal(noise.data[channel:channel + 1, offset:offset + clean.length], clean.sample_rate)
    mixed = mix_noise_at_snr(clean, window, snr)
    return mixed, CorruptionRecord(kind=kind, snr_db=snr, offset=offset, source=src, channel=channel)


def segment_rng(master_seed: int, *path: int) -> np.random.Generator:
    """Independent generator for one (seed, ...) coordinate; order-independent across workers."""
    return np.random.default_rng([int(master_seed), *map(int, path)])


@dataclass
class DspConfig:
    f_lo: float = 1.0
    f_hi: float = 45.0
    order: int = 2
    zero_phase: bool = True
    factor: int = 10
    p_noise: float = 0.5
    snr_range: tuple[float, float] = field(default=(-5.0, 15.0))
    noise_rate: float = 360.0

    def __post_init__(self):
        self.snr_range = tuple(float(v) for v in self.snr_range)
        if not 0.0 <= self.p_noise <= 1.0:
            raise ParameterError("p_noise must be in [0, 1]")
        if self.snr_range[0] > self.snr_range[1]:
            raise ParameterError("snr_range must be [lo, hi] with lo <= hi")
