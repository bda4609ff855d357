"""Trials, trial sets and their on-disk form.

On disk a trial set is a JSON manifest next to a binary blob of
little-endian float32 samples, trials concatenated and channel-major within
each trial. See the README for the conversion contract from the BCI
Competition IV recordings.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CorruptManifestError, DataError, NaNPayloadError, VersionMismatchError

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
SPLITS = ("train", "test", "unassigned")


@dataclass
class Trial:
    id: str
    subject: str
    label: int
    samples: np.ndarray                 # (channels, length)
    sample_rate_hz: float = 250.0
    split: str = "unassigned"
    rejected: bool = False
    provenance: tuple | None = None     # (signal index, donor index) for synthetic trials

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]


@dataclass
class TrialSet:
    trials: list
    channel_names: list
    n_classes: int
    sample_rate_hz: float = 250.0
    acceptance: dict = field(default_factory=dict)

    def __post_init__(self):
        for t in self.trials:
            if not 0 <= t.label < self.n_classes:
                raise DataError(f"trial {t.id}: label {t.label} outside [0, {self.n_classes})")
            if t.samples.ndim != 2 or t.samples.shape[0] != len(self.channel_names):
                raise DataError(f"trial {t.id}: samples {t.samples.shape} do not match "
                                f"{len(self.channel_names)} channels")
            if t.split not in SPLITS:
                raise DataError(f"trial {t.id}: unknown split tag {t.split!r}")

    def __len__(self) -> int:
        return len(self.trials)

    def __iter__(self):
        return iter(self.trials)

    def __getitem__(self, i):
        return self.trials[i]

    def with_trials(self, trials: Iterable[Trial]) -> "TrialSet":
        return TrialSet(list(trials), list(self.channel_names), self.n_classes, self.sample_rate_hz)

    @property
    def X(self) -> np.ndarray:
        """Stacked samples ``(n_trials, channels, length)``."""
        if not self.trials:
            return np.zeros((0, len(self.channel_names), 0), dtype=np.float32)
        return np.stack([t.samples for t in self.trials])

    @property
    def y(self) -> np.ndarray:
        return np.array([t.label for t in self.trials], dtype=np.int64)

    @property
    def subjects(self) -> list[str]:
        return sorted({t.subject for t in self.trials})

    def by_subject(self) -> dict[str, "TrialSet"]:
        return {s: self.with_trials(t for t in self.trials if t.subject == s) for s in self.subjects}

    def split_tagged(self, tag: str) -> "TrialSet":
        return self.with_trials(t for t in self.trials if t.split == tag)


def concat_trialsets(sets: Sequence[TrialSet]) -> TrialSet:
    if not sets:
        raise ValueError("nothing to concatenate")
    first = sets[0]
    for s in sets[1:]:
        if s.channel_names != first.channel_names or s.n_classes != first.n_classes:
            raise DataError("cannot concatenate trial sets with different channels or class counts")
    return first.with_trials(t for s in sets for t in s)


# --------------------------------------------------------------------------
# manifest + blob


def save_trialset(trialset: TrialSet, path) -> None:
    """Write ``path`` (JSON manifest) and ``path`` with suffix ``.bin`` (samples)."""
    path = Path(path)
    blob_path = path.with_suffix(".bin")
    records, offset = [], 0
    with open(blob_path, "wb") as fh:
        for t in trialset:
            raw = np.ascontiguousarray(t.samples, dtype="<f4").tobytes()
            fh.write(raw)
            records.append({"id": t.id, "subject": t.subject, "label": int(t.label),
                            "rejected": bool(t.rejected), "split": t.split,
                            "offset": offset, "length": int(t.length)})
            offset += len(raw)
    manifest = {
        "format_version": MANIFEST_VERSION,
        "blob": blob_path.name,
        "subjects": trialset.subjects,
        "channel_names": list(trialset.channel_names),
        "n_classes": int(trialset.n_classes),
        "sample_rate_hz": float(trialset.sample_rate_hz),
        "trials": records,
    }
    path.write_text(json.dumps(manifest, indent=1) + "\n")


def load_trialset(manifest_path) -> TrialSet:
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise CorruptManifestError(f"{manifest_path}: not valid JSON ({exc})") from exc
    version = manifest.get("format_version")
    if version != MANIFEST_VERSION:
        raise VersionMismatchError(f"{manifest_path}: manifest version {version!r}, expected {MANIFEST_VERSION}")
    try:
        blob_path = manifest_path.parent / manifest["blob"]
        channels = list(manifest["channel_names"])
        n_classes = int(manifest["n_classes"])
        fs = float(manifest.get("sample_rate_hz", 250.0))
        records = manifest["trials"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptManifestError(f"{manifest_path}: missing or malformed field ({exc})") from exc
    blob = blob_path.read_bytes()
    n_ch = len(channels)

    spans = []
    trials = []
    for rec in records:
        start, length = int(rec["offset"]), int(rec["length"])
        nbytes = n_ch * length * 4
        if start < 0 or length < 1 or start + nbytes > len(blob):
            raise CorruptManifestError(
                f"{manifest_path}: trial {rec.get('id')} references bytes [{start}, {start + nbytes}) "
                f"past end of blob ({len(blob)} bytes)")
        spans.append((start, start + nbytes, rec["id"]))
        samples = np.frombuffer(blob, dtype="<f4", count=n_ch * length, offset=start)
        samples = samples.reshape(n_ch, length).astype(np.float32)
        if not np.all(np.isfinite(samples)):
            raise NaNPayloadError(f"{manifest_path}: trial {rec['id']} contains NaN/Inf samples")
        trials.append(Trial(id=str(rec["id"]), subject=str(rec["subject"]), label=int(rec["label"]),
                            samples=samples, sample_rate_hz=fs, split=rec.get("split", "unassigned"),
                            rejected=bool(rec.get("rejected", False))))
    spans.sort()
    for (s0, e0, id0), (s1, e1, id1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise CorruptManifestError(f"{manifest_path}: trials {id0} and {id1} overlap in the blob")
    return TrialSet(trials, channels, n_classes, fs)


def read_trial_csv(path, label: int, subject: str = "S1", trial_id: str | None = None,
                   sample_rate_hz: float = 250.0) -> tuple[Trial, list[str]]:
    """One trial from a CSV file: header row of channel names, one column per channel."""
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != len(header):
        raise DataError(f"{path}: {data.shape[1]} columns but {len(header)} header names")
    if not np.all(np.isfinite(data)):
        raise NaNPayloadError(f"{path}: contains NaN/Inf")
    trial = Trial(id=trial_id or path.stem, subject=subject, label=int(label),
                  samples=np.ascontiguousarray(data.T, dtype=np.float32), sample_rate_hz=sample_rate_hz)
    return trial, [h.strip() for h in header]


def write_trial_csv(trial: Trial, channel_names: Sequence[str], path) -> None:
    np.savetxt(path, trial.samples.T, delimiter=",", header=",".join(channel_names), comments="", fmt="%.9g")


# --------------------------------------------------------------------------
# epoching, rejection, splitting


def window_split(trial: Trial, time_len: int = 750) -> list[Trial]:
    """Cut a trial into model-sized windows.

    A trial exactly ``time_len`` long is returned as is; a longer one gives
    two children, its first and its last ``time_len`` samples.
    """
    length = trial.length
    if length < time_len:
        raise DataError(f"trial {trial.id} has {length} samples, fewer than the window of {time_len}")
    if length == time_len:
        return [trial]
    return [
        replace(trial, id=f"{trial.id}/a", samples=trial.samples[:, :time_len].copy()),
        replace(trial, id=f"{trial.id}/b", samples=trial.samples[:, length - time_len:].copy()),
    ]


def epoch_trials(trialset: TrialSet, time_len: int = 750) -> TrialSet:
    return trialset.with_trials(child for t in trialset for child in window_split(t, time_len))


def acceptance_rates(trialset: TrialSet) -> dict[str, float]:
    rates = {}
    for s in trialset.subjects:
        flags = [t.rejected for t in trialset if t.subject == s]
        rates[s] = 1.0 - sum(flags) / len(flags)
    return rates


def filter_rejected(trialset: TrialSet) -> TrialSet:
    """Drop trials flagged as rejected; per-subject acceptance lands in ``.acceptance``."""
    rates = acceptance_rates(trialset)
    kept = trialset.with_trials(t for t in trialset if not t.rejected)
    kept.acceptance = rates
    for s, r in rates.items():
        log.info("subject %s: acceptance %.2f%%", s, 100 * r)
    if trialset.trials and not kept.trials:
        log.warning("every trial was rejected; returning an empty set")
    return kept


def train_test_split(trialset: TrialSet, ratio: float = 0.75, seed: int = 0) -> tuple[TrialSet, TrialSet]:
    """Per-subject, class-stratified split.

    Trials already tagged ``train``/``test`` keep their tag. Untagged trials
    are shuffled with ``seed`` inside each (subject, class) group and the
    train quota is handed out by largest remainder, so each group's train
    count is within one trial of ``ratio`` and the total is as close as
    possible to ``ratio * n``.
    """
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    train = [t for t in trialset if t.split == "train"]
    test = [t for t in trialset if t.split == "test"]
    free = [t for t in trialset if t.split == "unassigned"]

    groups: dict[tuple, list[Trial]] = {}
    for t in free:
        groups.setdefault((t.subject, t.label), []).append(t)
    keys = sorted(groups)
    for key in keys:
        if len(groups[key]) < 2:
            raise ValueError(f"subject {key[0]} class {key[1]} has fewer than 2 trials; cannot split")

    sizes = np.array([len(groups[k]) for k in keys])
    quota = ratio * sizes
    n_train = np.floor(quota).astype(int)
    remaining = int(round(ratio * sizes.sum())) - n_train.sum()
    order = np.argsort(-(quota - n_train), kind="stable")
    n_train[order[:max(remaining, 0)]] += 1
    n_train = np.clip(n_train, 1, sizes - 1)

    rng = np.random.default_rng(seed)
    for key, k in zip(keys, n_train):
        members = groups[key]
        perm = rng.permutation(len(members))
        train += [replace(members[i], split="train") for i in perm[:k]]
        test += [replace(members[i], split="test") for i in perm[k:]]
    return trialset.with_trials(train), trialset.with_trials(test)


# --------------------------------------------------------------------------
# synthetic motor-imagery-like data


@dataclass
class SynthConfig:
    n_trials_per_class: int = 20
    n_channels: int = 3
    n_classes: int = 2
    time_len: int = 750
    sample_rate_hz: float = 250.0
    rhythm_hz: float = 10.0
    class_channels: tuple | None = None   # class c puts its rhythm on channel class_channels[c]
    rhythm_amplitude: float = 1.0
    noise_std: float = 1.0
    high_noise_std: float = 0.0
    high_cutoff_hz: float = 100.0
    subject: str = "S1"
    seed: int = 0

    def channel_map(self) -> tuple:
        return tuple(self.class_channels) if self.class_channels is not None else tuple(range(self.n_classes))

    def validate(self) -> "SynthConfig":
        cmap = self.channel_map()
        if len(cmap) != self.n_classes:
            raise ValueError(f"class_channels needs {self.n_classes} entries, got {len(cmap)}")
        if len(set(cmap)) != len(cmap):
            raise ValueError(f"class_channels must be distinct, got {list(cmap)}")
        if any(not 0 <= c < self.n_channels for c in cmap):
            raise ValueError(f"class_channels {list(cmap)} out of range for {self.n_channels} channels")
        for name in ("rhythm_amplitude", "noise_std", "high_noise_std"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["class_channels"] is not None:
            d["class_channels"] = list(d["class_channels"])
        return d


def synth_generate(config: SynthConfig) -> TrialSet:
    """Balanced synthetic trial set with one class-specific rhythm channel.

    Every trial is white noise (``noise_std``) plus noise confined above
    ``high_cutoff_hz`` (``high_noise_std``) on all channels, plus a
    ``rhythm_hz`` sinusoid with random phase on its class's channel.
    Classes are interleaved: trial ``i`` has label ``i % n_classes``.
    """
    from .dsp import design_butterworth_highpass, sos_filter

    config.validate()
    rng = np.random.default_rng(config.seed)
    n = config.n_trials_per_class * config.n_classes
    c, length, fs = config.n_channels, config.time_len, config.sample_rate_hz
    labels = np.arange(n) % config.n_classes
    broadband = rng.standard_normal((n, c, length)) * config.noise_std
    phases = rng.uniform(0, 2 * np.pi, size=n)
    signals = broadband
    if config.high_noise_std > 0:
        hp = design_butterworth_highpass(8, config.high_cutoff_hz, fs)
        settle = int(fs)
        white = rng.standard_normal((n, c, length + settle))
        shaped = sos_filter(hp, white)[:, :, settle:]
        # unit-variance white noise through the high-pass keeps sum(h^2) of its power
        impulse = np.zeros(8 * int(fs))
        impulse[0] = 1.0
        gain = np.sqrt(np.sum(sos_filter(hp, impulse) ** 2))
        signals = signals + shaped * (config.high_noise_std / gain)
    t = np.arange(length) / fs
    cmap = config.channel_map()
    for i in range(n):
        ch = cmap[labels[i]]
        signals[i, ch] += config.rhythm_amplitude * np.sin(2 * np.pi * config.rhythm_hz * t + phases[i])
    signals = signals.astype(np.float32)
    width = len(str(n - 1))
    trials = [Trial(id=f"{config.subject}-{i:0{width}d}", subject=config.subject, label=int(labels[i]),
                    samples=signals[i], sample_rate_hz=fs)
              for i in range(n)]
    names = [f"ch{j}" for j in range(c)]
    return TrialSet(trials, names, config.n_classes, fs)
