"""Butterworth high-pass design, second-order-section filtering and the
noise-swap augmentation built on top of them.

Noise swap: a trial keeps its own content below the cutoff and receives the
above-cutoff content of a randomly chosen donor trial::

    augmented_i = signal_i - noise_i + noise_k
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import Trial, TrialSet
from .errors import DataError


@dataclass(frozen=True)
class Biquad:
    b0: float
    b1: float
    b2: float
    a1: float
    a2: float

    def is_stable(self) -> bool:
        # Jury conditions for z^2 + a1 z + a2
        return abs(self.a2) < 1.0 and abs(self.a1) < 1.0 + self.a2

    def poles(self) -> np.ndarray:
        return np.roots([1.0, self.a1, self.a2])


@dataclass(frozen=True)
class SosFilter:
    sections: tuple
    order: int
    cutoff_hz: float
    sample_rate_hz: float

    def as_array(self) -> np.ndarray:
        """``(n_sections, 5)`` array of ``b0 b1 b2 a1 a2``."""
        return np.array([[s.b0, s.b1, s.b2, s.a1, s.a2] for s in self.sections], dtype=np.float64)

    def poles(self) -> np.ndarray:
        return np.concatenate([s.poles() for s in self.sections])

    def is_stable(self) -> bool:
        return all(s.is_stable() for s in self.sections)


def design_butterworth_highpass(order: int, cutoff_hz: float, fs_hz: float) -> SosFilter:
    """Digital Butterworth high-pass as a cascade of ``order // 2`` biquads.

    Analog prototype -> high-pass transform -> bilinear transform with the
    cutoff prewarped, so the -3 dB point lands exactly on ``cutoff_hz``.
    Each section has unit gain at Nyquist.
    """
    if order < 2 or order % 2:
        raise ValueError(f"order must be a positive even integer, got {order}")
    if not 0 < cutoff_hz < fs_hz / 2:
        raise ValueError(f"cutoff {cutoff_hz} Hz must lie strictly between 0 and Nyquist ({fs_hz / 2} Hz)")
    k = 2.0 * fs_hz
    wc = k * np.tan(np.pi * cutoff_hz / fs_hz)
    sections = []
    # pole pairs from the lowest-Q pair to the highest (closest to the unit circle last)
    for m in range(order // 2, 0, -1):
        zeta = np.sin(np.pi * (2 * m - 1) / (2 * order))
        # analog section  s^2 / (s^2 + 2 zeta wc s + wc^2)
        b, c = 2.0 * zeta * wc, wc * wc
        a0 = k * k + b * k + c
        sections.append(Biquad(
            b0=k * k / a0, b1=-2.0 * k * k / a0, b2=k * k / a0,
            a1=2.0 * (c - k * k) / a0, a2=(k * k - b * k + c) / a0,
        ))
    return SosFilter(tuple(sections), order, float(cutoff_hz), float(fs_hz))


def frequency_response(filt: SosFilter, freqs_hz) -> np.ndarray:
    """Complex response of the cascade at the given frequencies."""
    w = 2 * np.pi * np.asarray(freqs_hz, dtype=np.float64) / filt.sample_rate_hz
    zi = np.exp(-1j * w)
    h = np.ones_like(zi)
    for s in filt.sections:
        h *= (s.b0 + s.b1 * zi + s.b2 * zi * zi) / (1.0 + s.a1 * zi + s.a2 * zi * zi)
    return h


def magnitude_db(filt: SosFilter, freqs_hz) -> np.ndarray:
    return 20 * np.log10(np.abs(frequency_response(filt, freqs_hz)))


def sos_filter(filt: SosFilter, signal: np.ndarray, zero_phase: bool = False) -> np.ndarray:
    """Causal cascade filtering along the last axis, zero initial conditions.

    Any leading axes (trials, channels) are filtered independently in one
    vectorised pass. ``zero_phase`` runs the cascade forward then backward.
    """
    x = np.asarray(signal, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DataError("sos_filter: input contains NaN or Inf")
    y = _cascade(filt, x)
    if zero_phase:
        y = _cascade(filt, y[..., ::-1])[..., ::-1]
    return np.ascontiguousarray(y)


def _cascade(filt: SosFilter, x: np.ndarray) -> np.ndarray:
    lead = x.shape[:-1]
    n = x.shape[-1]
    # time-major so each step touches one contiguous row
    y = np.ascontiguousarray(np.moveaxis(x, -1, 0).reshape(n, -1))
    for s in filt.sections:
        out = np.empty_like(y)
        # transposed direct form II
        z1 = np.zeros(y.shape[1])
        z2 = np.zeros(y.shape[1])
        b0, b1, b2, a1, a2 = s.b0, s.b1, s.b2, s.a1, s.a2
        for i in range(n):
            xi = y[i]
            yi = b0 * xi + z1
            z1 = b1 * xi - a1 * yi + z2
            z2 = b2 * xi - a2 * yi
            out[i] = yi
        y = out
    return np.moveaxis(y.reshape((n,) + lead), 0, -1)


def export_coefficients(filt: SosFilter) -> str:
    """Plain-text table, one section per line: ``b0 b1 b2 a1 a2``."""
    head = (f"# butterworth highpass order={filt.order} cutoff_hz={filt.cutoff_hz!r} "
            f"fs_hz={filt.sample_rate_hz!r}\n# b0 b1 b2 a1 a2\n")
    rows = [" ".join(f"{v:.17g}" for v in (s.b0, s.b1, s.b2, s.a1, s.a2)) for s in filt.sections]
    return head + "\n".join(rows) + "\n"


def parse_coefficients(text: str) -> np.ndarray:
    rows = [line.split() for line in text.splitlines() if line.strip() and not line.startswith("#")]
    return np.array(rows, dtype=np.float64)


# --------------------------------------------------------------------------
# noise extraction and swapping


@dataclass
class NoiseCandidate:
    samples: np.ndarray
    source_id: str


def extract_noise(trial: Trial, filt: SosFilter, zero_phase: bool = False) -> NoiseCandidate:
    """Above-cutoff content of every channel of ``trial``."""
    if trial.sample_rate_hz != filt.sample_rate_hz:
        raise DataError(f"trial {trial.id} sampled at {trial.sample_rate_hz} Hz, "
                        f"filter designed for {filt.sample_rate_hz} Hz")
    return NoiseCandidate(sos_filter(filt, trial.samples, zero_phase), trial.id)


def swap_noise(signal: np.ndarray, own_noise: np.ndarray, donor_noise: np.ndarray) -> np.ndarray:
    """``signal - own_noise + donor_noise``.

    Evaluated as ``signal + (donor_noise - own_noise)`` so that a trial
    paired with itself comes back bit-for-bit unchanged.
    """
    return signal + (donor_noise - own_noise)


@dataclass
class AugmentResult:
    trials: TrialSet
    provenance: list = field(default_factory=list)   # (signal index, donor index) per synthetic trial


def augment(train: TrialSet, factor: int, rng_seed: int = 0, *, filt: SosFilter | None = None,
            same_class_donors: bool = False, zero_phase: bool = False,
            order: int = 8, cutoff_hz: float = 100.0) -> AugmentResult:
    """Grow ``train`` to ``factor`` times its size by noise swapping.

    The output holds every original trial followed by ``factor - 1`` rounds
    of synthetic copies. Copy ``r`` of trial ``i`` takes its noise from donor
    ``k != i`` drawn uniformly (with replacement across rounds) from a RNG
    stream seeded by ``(rng_seed, r, i)``, and keeps the label of ``i``.
    Donors are restricted to trial ``i``'s subject, and additionally to its
    class with ``same_class_donors``.
    """
    n = len(train)
    if factor < 1:
        raise ValueError(f"augmentation factor must be >= 1, got {factor}")
    if n < 2:
        raise ValueError(f"augmentation needs at least 2 trials, got {n}")
    if factor == 1:
        return AugmentResult(train, [])
    rates = {t.sample_rate_hz for t in train}
    if len(rates) != 1:
        raise DataError(f"mixed sample rates in training set: {sorted(rates)}")
    fs = rates.pop()
    if filt is None:
        filt = design_butterworth_highpass(order, cutoff_hz, fs)
    elif filt.sample_rate_hz != fs:
        raise DataError(f"filter designed for {filt.sample_rate_hz} Hz, trials sampled at {fs} Hz")

    shapes = {t.samples.shape for t in train}
    if len(shapes) == 1:
        signals = np.stack([t.samples for t in train]).astype(np.float64)
        noises = sos_filter(filt, signals, zero_phase)
    else:
        signals = [np.asarray(t.samples, dtype=np.float64) for t in train]
        noises = [sos_filter(filt, s, zero_phase) for s in signals]

    # donors come from the same subject (and class, if requested) as trial i
    keys = [(t.subject, t.label) if same_class_donors else (t.subject,) for t in train]
    members = {}
    for idx, key in enumerate(keys):
        members.setdefault(key, []).append(idx)
    pools = {key: np.array(m) for key, m in members.items()}
    for key, pool in pools.items():
        if len(pool) < 2:
            raise ValueError(f"donor pool {key} has a single trial; no donor available")

    out = list(train.trials)
    provenance = []
    for r in range(1, factor):
        for i, trial in enumerate(train):
            pool = pools[keys[i]]
            rng = np.random.default_rng([rng_seed, r, i])
            j = int(rng.integers(len(pool) - 1))
            if j >= np.searchsorted(pool, i):
                j += 1   # skip i itself
            k = int(pool[j])
            if noises[k].shape != noises[i].shape:
                raise DataError(f"donor trial {train[k].id} shape {noises[k].shape} "
                                f"differs from {trial.id} {noises[i].shape}")
            samples = swap_noise(signals[i], noises[i], noises[k]).astype(trial.samples.dtype)
            out.append(replace(trial, id=f"{trial.id}~aug{r}", samples=samples, provenance=(i, k)))
            provenance.append((i, k))
    return AugmentResult(train.with_trials(out), provenance)
