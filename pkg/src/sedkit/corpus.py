"""Stutter annotation tags, JSONL manifests, speaker-wise splits and synthetic data.

Label vectors always use the canonical task order::

    index  task  marker  meaning
    0      p     /p      prolongation
    1      b     /b      block
    2      r     /r      sound repetition
    3      wr    []      word/phrase repetition
    4      i     /i      interjection
"""

from __future__ import annotations

import json
import re
import warnings
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError, ParseError
from .frontend import SAMPLE_RATE, FbankConfig, compute_fbank, load_wav, write_wav

TASKS = ("p", "b", "r", "wr", "i")
MARKERS = ("/p", "/b", "/r", "[]", "/i")
MARKER_OF = dict(zip(TASKS, MARKERS))
TASK_OF = {**dict(zip(MARKERS, TASKS)), **{t: t for t in TASKS}}

# speaker proportions of the reference split (43 / 7 / 20 of 70)
DEFAULT_SPLIT = (0.614, 0.10, 0.286)

_SLASH_TAG = re.compile(r"/([A-Za-z]+)")
_BRACKETS = re.compile(r"\[[^\[\]]*\]")
_SLASH_INDEX = {"p": 0, "b": 1, "r": 2, "i": 4}

LabelVector = tuple  # five ints in canonical order


class ManifestWarning(UserWarning):
    pass


def parse_annotation_tags(transcript: str, tally: Counter | None = None) -> LabelVector:
    """Clip-level labels: indicator k is 1 iff marker k occurs at least once.

    Unknown slash-tags are ignored and counted in ``tally`` when given. Every
    ``/i`` counts as positive; fluent fillers cannot be told apart from text.
    """
    labels = [0] * 5
    for m in _SLASH_TAG.finditer(transcript):
        idx = _SLASH_INDEX.get(m.group(1))
        if idx is None:
            if tally is not None:
                tally[m.group(0)] += 1
        else:
            labels[idx] = 1
    if _BRACKETS.search(transcript):
        labels[3] = 1
    return tuple(labels)


@dataclass
class ClipRecord:
    id: str
    audio: str
    speaker: str
    labels: LabelVector
    transcript: str | None = None
    split: str | None = None

    def to_json(self) -> str:
        d = {"id": self.id, "audio": self.audio, "speaker": self.speaker, "labels": list(self.labels)}
        if self.transcript is not None:
            d["transcript"] = self.transcript
        if self.split is not None:
            d["split"] = self.split
        return json.dumps(d, ensure_ascii=False)


def _check_labels(value, where: str) -> LabelVector:
    if not isinstance(value, list) or len(value) != 5 or any(v not in (0, 1) or isinstance(v, bool) for v in value):
        raise ParseError(f"{where}: labels must be a list of five 0/1 integers, got {value!r}")
    return tuple(int(v) for v in value)


def load_manifest(path: str | Path) -> list[ClipRecord]:
    """Read a UTF-8 JSONL manifest.

    Relative ``audio`` paths are resolved against the manifest's directory.
    Audio existence is not checked here; a missing file fails at first read.
    """
    path = Path(path)
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{where}: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise ParseError(f"{where}: expected an object")
            for key in ("id", "audio", "speaker"):
                if not isinstance(obj.get(key), str):
                    raise ParseError(f"{where}: missing or non-string field {key!r}")
            transcript = obj.get("transcript")
            if transcript is not None and not isinstance(transcript, str):
                raise ParseError(f"{where}: transcript must be a string")
            if "labels" in obj:
                labels = _check_labels(obj["labels"], where)
                if transcript is not None:
                    parsed = parse_annotation_tags(transcript)
                    if parsed != labels:
                        warnings.warn(
                            f"{where}: labels {list(labels)} disagree with transcript tags {list(parsed)}",
                            ManifestWarning,
                            stacklevel=2,
                        )
            elif transcript is not None:
                labels = parse_annotation_tags(transcript)
            else:
                raise ParseError(f"{where}: record has neither labels nor transcript")
            split = obj.get("split")
            if split is not None and split not in ("train", "dev", "test"):
                raise ParseError(f"{where}: unknown split {split!r}")
            audio = obj["audio"]
            if not Path(audio).is_absolute():
                audio = str(path.parent / audio)
            records.append(ClipRecord(obj["id"], audio, obj["speaker"], labels, transcript, split))
    return records


def write_manifest(path: str | Path, records: Iterable[ClipRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def label_matrix(records: Sequence[ClipRecord]) -> np.ndarray:
    return np.array([r.labels for r in records], dtype=np.int64).reshape(len(records), 5)


@dataclass
class FeatureSet:
    """Clips loaded into memory as fbank matrices alongside their labels."""

    ids: list[str]
    features: list[np.ndarray]
    labels: np.ndarray
    speakers: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1, 5)
        if not (len(self.ids) == len(self.features) == len(self.labels)):
            raise DataError(
                f"feature set is misaligned: {len(self.ids)} ids, {len(self.features)} features, {len(self.labels)} labels"
            )
        if not self.speakers:
            self.speakers = ["?"] * len(self.ids)

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def from_records(cls, records: Sequence[ClipRecord], cfg: FbankConfig = FbankConfig()) -> "FeatureSet":
        feats = []
        for r in records:
            try:
                feats.append(compute_fbank(load_wav(r.audio, cfg.sample_rate), cfg))
            except (OSError, ValueError) as exc:
                raise DataError(f"clip {r.id}: {exc}") from exc
        return cls([r.id for r in records], feats, label_matrix(records), [r.speaker for r in records])

    @classmethod
    def from_manifest(cls, path: str | Path, cfg: FbankConfig = FbankConfig()) -> "FeatureSet":
        return cls.from_records(load_manifest(path), cfg)

    def subset(self, index: Sequence[int]) -> "FeatureSet":
        return FeatureSet(
            [self.ids[i] for i in index],
            [self.features[i] for i in index],
            self.labels[list(index)],
            [self.speakers[i] for i in index],
        )


# -- speaker-wise split -----------------------------------------------------

def _apportion(total: int, fractions: Sequence[float]) -> list[int]:
    """Largest-remainder allocation of ``total`` items to ``fractions``."""
    raw = [f * total for f in fractions]
    counts = [int(np.floor(x)) for x in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: total - sum(counts)]:
        counts[i] += 1
    return counts


def split_by_speaker(
    records: Sequence[ClipRecord],
    fractions: Sequence[float] = DEFAULT_SPLIT,
    seed: int = 0,
) -> tuple[list[ClipRecord], list[ClipRecord], list[ClipRecord]]:
    """Partition records into train/dev/test so no speaker spans two splits.

    Speaker counts per split follow ``fractions`` as closely as integer
    allocation allows; which speakers go where is a seeded shuffle.
    """
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be three non-negative values summing to 1, got {fractions}")
    speakers = sorted({r.speaker for r in records})
    if len(speakers) < 3:
        raise ConfigError(f"need at least 3 distinct speakers to split, got {len(speakers)}")
    order = np.random.default_rng(seed).permutation(len(speakers))
    counts = _apportion(len(speakers), fractions)
    names = ("train", "dev", "test")
    assignment = {}
    start = 0
    for name, n in zip(names, counts):
        for k in order[start : start + n]:
            assignment[speakers[k]] = name
        start += n
    out: dict[str, list[ClipRecord]] = {n: [] for n in names}
    for r in records:
        split = assignment[r.speaker]
        out[split].append(replace(r, split=split))
    return out["train"], out["dev"], out["test"]


# -- synthetic stutter-like speech -------------------------------------------

@dataclass
class SynthSpec:
    num_clips: int = 500
    clip_seconds: float = 4.0
    probs: tuple = (0.3, 0.3, 0.3, 0.3, 0.3)
    base_freq_range: tuple = (180.0, 900.0)
    seed: int = 0
    num_speakers: int | None = None
    noise_level: float = 0.002
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.probs = tuple(float(p) for p in self.probs)
        if len(self.probs) != 5 or any(not 0.0 <= p <= 1.0 for p in self.probs):
            raise ConfigError(f"probs must be five values in [0, 1], got {self.probs}")
        if self.clip_seconds < 1.0:
            raise ConfigError("clip_seconds must be at least 1")
        if self.num_clips < 0:
            raise ConfigError("num_clips must be non-negative")
        lo, hi = self.base_freq_range
        if not 0 < lo < hi < self.sample_rate / 8:
            raise ConfigError(f"invalid base_freq_range {self.base_freq_range}")
        needed = self.required_seconds()
        if self.clip_seconds < needed:
            raise ConfigError(f"clip_seconds={self.clip_seconds} cannot hold the enabled events; need >= {needed:.2f}")

    def required_seconds(self) -> float:
        """Worst-case duration of a clip carrying every enabled event type."""
        worst = {
            "p": _PROLONG_BASE_MAX * _STRETCH_MAX + _GAP_MAX,
            "b": _BLOCK_MAX,
            "r": _REPS_MAX * (_FRAG_MAX + _REP_GAP),
            "wr": 4 * (_SYL_MAX + _GAP_MAX),
            "i": _FILLER_MAX + _GAP_MAX,
        }
        events = sum(worst[t] for t, p in zip(TASKS, self.probs) if p > 0)
        return _LEAD_MAX + events + 2 * (_SYL_MAX + _GAP_MAX)


_SYL_MIN, _SYL_MAX = 0.09, 0.12
# pauses between syllables must stay visible after 4x temporal subsampling (40 ms)
_GAP_MIN, _GAP_MAX = 0.08, 0.14
_PROLONG_BASE_MAX = 0.11
_STRETCH_MIN, _STRETCH_MAX = 4.0, 4.3
_BLOCK_MIN, _BLOCK_MAX = 0.40, 0.45
_FRAG_MIN, _FRAG_MAX = 0.07, 0.08
_REP_GAP = 0.04
_REPS_MIN, _REPS_MAX = 2, 4
_PITCH_MEMORY = 3
_FILLER_MIN, _FILLER_MAX = 0.20, 0.25
_LEAD_MAX = 0.10
_SYLLABLES = ("ba", "da", "ga", "ma", "na", "la", "ta", "ka", "pa", "sa", "wa", "ya", "ha", "fa", "za", "ca")


class _Renderer:
    def __init__(self, spec: SynthSpec, rng: np.random.Generator, timbre: np.ndarray, shift: float):
        self.spec, self.rng, self.timbre, self.shift = spec, rng, timbre, shift
        lo, hi = spec.base_freq_range
        n = int(np.floor(12 * np.log2(hi / lo))) + 1
        self.pitches = lo * 2.0 ** (np.arange(0, n, 2) / 12.0)  # whole-tone grid

    def samples(self, seconds: float) -> int:
        return int(round(seconds * self.spec.sample_rate))

    def silence(self, seconds: float) -> np.ndarray:
        return np.zeros(self.samples(seconds))

    def tone(self, pitch_idx: int, seconds: float, amp: float = 0.3) -> np.ndarray:
        n = self.samples(seconds)
        t = np.arange(n) / self.spec.sample_rate
        f0 = self.pitches[pitch_idx] * self.shift
        wave_ = sum(w * np.sin(2 * np.pi * f0 * (h + 1) * t) for h, w in enumerate(self.timbre))
        ramp = min(n // 2, self.samples(0.015))
        env = np.ones(n)
        env[:ramp] = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        env[n - ramp :] = env[:ramp][::-1]
        return amp * env * wave_ / np.sum(self.timbre)

    def filler(self, seconds: float) -> np.ndarray:
        n = self.samples(seconds)
        t = np.arange(n) / self.spec.sample_rate
        f0 = self.rng.uniform(90.0, 130.0)
        env = np.sin(np.pi * np.arange(n) / n)
        return 0.08 * env * np.sin(2 * np.pi * f0 * t)

    def gap(self) -> np.ndarray:
        return self.silence(self.rng.uniform(_GAP_MIN, _GAP_MAX))

    def syl_len(self) -> float:
        return self.rng.uniform(_SYL_MIN, _SYL_MAX)


def _pick_pitch(rng, n: int, recent: list[int]) -> int:
    choices = [k for k in range(n) if k not in recent[-_PITCH_MEMORY:]]
    return int(rng.choice(choices))


def _render_clip(spec: SynthSpec, rng: np.random.Generator, r: _Renderer, labels: LabelVector):
    """Returns (samples, transcript)."""
    total = r.samples(spec.clip_seconds)
    # event units: list of (segments, tokens, pitches-used)
    units = []
    used_pitch: list[int] = []
    for task, on in zip(TASKS, labels):
        if not on:
            continue
        if task == "p":
            k = _pick_pitch(rng, len(r.pitches), used_pitch)
            used_pitch.append(k)
            seg = r.tone(k, rng.uniform(_SYL_MIN, _PROLONG_BASE_MAX) * rng.uniform(_STRETCH_MIN, _STRETCH_MAX))
            units.append(([seg, r.gap()], [f"{_SYLLABLES[k % 16]}/p"]))
        elif task == "b":
            units.append(([r.silence(rng.uniform(_BLOCK_MIN, _BLOCK_MAX))], ["/b"]))
        elif task == "r":
            k = _pick_pitch(rng, len(r.pitches), used_pitch)
            used_pitch.append(k)
            reps = int(rng.integers(_REPS_MIN, _REPS_MAX + 1))
            frag = rng.uniform(_FRAG_MIN, _FRAG_MAX)
            segs = []
            for _ in range(reps):
                segs += [r.tone(k, frag), r.silence(_REP_GAP)]
            units.append((segs, [f"{_SYLLABLES[k % 16][0]}/r"] * (reps - 1) + [_SYLLABLES[k % 16]]))
        elif task == "wr":
            group = []
            for _ in range(2):
                k = _pick_pitch(rng, len(r.pitches), used_pitch + group)
                group.append(k)
            used_pitch += group
            lens = [r.syl_len() for _ in group]
            segs = []
            for _ in range(2):
                for k, d in zip(group, lens):
                    segs += [r.tone(k, d), r.gap()]
            words = " ".join(_SYLLABLES[k % 16] for k in group)
            units.append((segs, [f"[{words}]", words]))
        elif task == "i":
            units.append(([r.filler(rng.uniform(_FILLER_MIN, _FILLER_MAX)), r.gap()], ["uh/i"]))
    order = rng.permutation(len(units))
    units = [units[k] for k in order]

    lead = r.silence(rng.uniform(0.05, _LEAD_MAX))
    budget = total - len(lead) - sum(len(s) for segs, _ in units for s in segs)
    # fluent syllables fill the remaining time; events slot in between them
    fluent = []
    recent = list(used_pitch)
    while True:
        d = r.syl_len()
        gap = r.gap()
        need = r.samples(d) + len(gap)
        if need > budget:
            break
        k = _pick_pitch(rng, len(r.pitches), recent)
        recent.append(k)
        fluent.append(([r.tone(k, d), gap], [_SYLLABLES[k % 16]]))
        budget -= need
    # events sit strictly between fluent syllables, so blocks stay mid-utterance
    hi = max(len(fluent) - 1, 1)
    slots = sorted(rng.integers(1, hi + 1, size=len(units)).tolist())
    sequence = []
    ei = 0
    for pos in range(len(fluent) + 1):
        while ei < len(units) and slots[ei] == pos:
            sequence.append(units[ei])
            ei += 1
        if pos < len(fluent):
            sequence.append(fluent[pos])
    audio = np.concatenate([lead] + [s for segs, _ in sequence for s in segs])
    audio = np.concatenate([audio, np.zeros(max(total - len(audio), 0))])[:total]
    audio += spec.noise_level * rng.standard_normal(total)
    transcript = " ".join(tok for _, toks in sequence for tok in toks)
    return audio, transcript


def synth_generate(spec: SynthSpec, out_dir: str | Path) -> tuple[Path, list[ClipRecord]]:
    """Render ``spec.num_clips`` clips to ``out_dir/wav`` and write ``out_dir/manifest.jsonl``.

    Each clip is a sequence of short harmonic tone "syllables"; sampled events
    are rendered acoustically and recorded as labels plus a tagged transcript.
    """
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wav"
    try:
        wav_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {wav_dir}: {exc}") from exc
    rng = np.random.default_rng(spec.seed)
    n_spk = spec.num_speakers or max(3, spec.num_clips // 10)
    timbres = rng.uniform(0.2, 1.0, size=(n_spk, 3))
    timbres[:, 0] = 1.0
    shifts = rng.uniform(0.92, 1.08, size=n_spk)
    records = []
    for i in range(spec.num_clips):
        s = i % n_spk
        labels = tuple(int(rng.random() < p) for p in spec.probs)
        renderer = _Renderer(spec, rng, timbres[s], shifts[s])
        audio, transcript = _render_clip(spec, rng, renderer, labels)
        clip_id = f"synth{spec.seed}_{i:05d}"
        wav_path = wav_dir / f"{clip_id}.wav"
        try:
            write_wav(wav_path, audio, spec.sample_rate)
        except OSError as exc:
            raise DataError(f"cannot write {wav_path}: {exc}") from exc
        records.append(ClipRecord(clip_id, f"wav/{clip_id}.wav", f"spk{s:03d}", labels, transcript))
    manifest = out_dir / "manifest.jsonl"
    try:
        write_manifest(manifest, records)
    except OSError as exc:
        raise DataError(f"cannot write {manifest}: {exc}") from exc
    return manifest, [replace(r, audio=str(out_dir / r.audio)) for r in records]
