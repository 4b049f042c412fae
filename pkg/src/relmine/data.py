"""Dataset ingestion, deterministic batch sampling, and synthetic data.

The on-disk format is JSONL with one object per line, four kinds:

    {"kind": "class",   "id": 3, "pos": "V", "label": "take"}
    {"kind": "video",   "id": "vid0001", "features": [0.1, ...]}
    {"kind": "caption", "id": "vid0001_c0", "video": "vid0001",
     "text": "...", "verbs": [3], "nouns": [7, 9], "features": [...]}
    {"kind": "split",   "name": "train", "ids": ["vid0001", ...]}

Caption features are optional; absent features fall back to the
bag-of-class indicator over the declared vocabulary (verbs first, then
nouns, each block sorted by id). Loading validates references, feature
dimensions, id uniqueness and split disjointness, and rejects the file at
the first violation with its line number.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .semantics import (
    POS_NOUN,
    POS_VERB,
    CaptionAnnotation,
    ClassId,
    SemanticProfile,
    aggregate_video_profile,
)

SPLIT_NAMES = ("train", "val", "test")


class DatasetFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class ParseError(DatasetFormatError):
    pass


class DanglingReferenceError(DatasetFormatError):
    pass


class DimensionMismatchError(DatasetFormatError):
    pass


class DuplicateIdError(DatasetFormatError):
    pass


class InvalidConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ClassEntry:
    id: int
    pos: str
    label: str


@dataclass(frozen=True)
class Video:
    video_id: str
    features: np.ndarray
    caption_ids: tuple[str, ...]


@dataclass(frozen=True)
class Caption:
    annotation: CaptionAnnotation
    features: np.ndarray | None


@dataclass
class Dataset:
    classes: list[ClassEntry]
    videos: list[Video]
    captions: list[Caption]
    splits: dict[str, list[str]]

    def __post_init__(self):
        self.video_by_id = {v.video_id: v for v in self.videos}
        self.caption_by_id = {c.annotation.caption_id: c for c in self.captions}
        verb_ids = sorted(c.id for c in self.classes if c.pos == POS_VERB)
        noun_ids = sorted(c.id for c in self.classes if c.pos == POS_NOUN)
        self._bag_columns = {(POS_VERB, i): k for k, i in enumerate(verb_ids)}
        self._bag_columns.update(
            {(POS_NOUN, i): len(verb_ids) + k for k, i in enumerate(noun_ids)}
        )
        self._profile_cache: dict[tuple[str, float], SemanticProfile] = {}

    @property
    def d_video(self) -> int:
        return int(self.videos[0].features.shape[0])

    @property
    def d_text(self) -> int:
        first = self.captions[0].features
        return int(first.shape[0]) if first is not None else len(self._bag_columns)

    def video_profile(self, video_id: str, rho: float) -> SemanticProfile:
        key = (video_id, rho)
        if key not in self._profile_cache:
            annotations = [
                self.caption_by_id[c].annotation for c in self.video_by_id[video_id].caption_ids
            ]
            self._profile_cache[key] = aggregate_video_profile(annotations, rho)
        return self._profile_cache[key]

    def lexicon(self) -> dict[str, ClassId]:
        """Label -> class lookup for the exact-match tagger; the first
        declaration of a label wins when labels collide across classes."""
        table: dict[str, ClassId] = {}
        for entry in self.classes:
            table.setdefault(entry.label, ClassId(entry.id, entry.pos))
        return table

    def bag_of_class_features(self, profile: SemanticProfile) -> np.ndarray:
        vec = np.zeros(len(self._bag_columns))
        for c in profile.verbs | profile.nouns:
            vec[self._bag_columns[(c.pos, c.id)]] = 1.0
        return vec

    def video_feature_matrix(self, video_ids: Sequence[str]) -> np.ndarray:
        return np.stack([self.video_by_id[v].features for v in video_ids])

    def caption_feature_matrix(self, caption_ids: Sequence[str]) -> np.ndarray:
        rows = []
        for cid in caption_ids:
            cap = self.caption_by_id[cid]
            if cap.features is not None:
                rows.append(cap.features)
            else:
                rows.append(self.bag_of_class_features(cap.annotation.profile))
        return np.stack(rows)


def datasets_equal(a: Dataset, b: Dataset) -> bool:
    if a.classes != b.classes or a.splits != b.splits:
        return False
    if len(a.videos) != len(b.videos) or len(a.captions) != len(b.captions):
        return False
    for va, vb in zip(a.videos, b.videos):
        if va.video_id != vb.video_id or va.caption_ids != vb.caption_ids:
            return False
        if not np.array_equal(va.features, vb.features):
            return False
    for ca, cb in zip(a.captions, b.captions):
        if ca.annotation != cb.annotation:
            return False
        if (ca.features is None) != (cb.features is None):
            return False
        if ca.features is not None and not np.array_equal(ca.features, cb.features):
            return False
    return True


def _require(record: dict, key: str, line: int):
    if key not in record:
        raise ParseError(f"missing key {key!r} in {record.get('kind', '?')} record", line)
    return record[key]


def load_dataset(path: str | Path) -> Dataset:
    """Parse and validate a JSONL dataset file."""
    classes: list[ClassEntry] = []
    class_keys: dict[tuple[str, int], int] = {}
    videos_raw: list[tuple[int, str, np.ndarray]] = []
    video_lines: dict[str, int] = {}
    captions_raw: list[tuple[int, dict]] = []
    caption_lines: dict[str, int] = {}
    splits_raw: list[tuple[int, str, list[str]]] = []

    with open(path) as handle:
        for line_no, raw in enumerate(handle, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line_no) from exc
            if not isinstance(record, dict):
                raise ParseError("record is not an object", line_no)
            kind = record.get("kind")
            if kind == "class":
                cid = int(_require(record, "id", line_no))
                pos = _require(record, "pos", line_no)
                if pos not in (POS_VERB, POS_NOUN):
                    raise ParseError(f"unknown part of speech {pos!r}", line_no)
                if (pos, cid) in class_keys:
                    raise DuplicateIdError(f"duplicate class ({pos}, {cid})", line_no)
                class_keys[(pos, cid)] = line_no
                classes.append(ClassEntry(id=cid, pos=pos, label=str(_require(record, "label", line_no))))
            elif kind == "video":
                vid = str(_require(record, "id", line_no))
                if vid in video_lines:
                    raise DuplicateIdError(f"duplicate video id {vid!r}", line_no)
                video_lines[vid] = line_no
                feats = np.asarray(_require(record, "features", line_no), dtype=float)
                if feats.ndim != 1:
                    raise ParseError("video features must be a flat list", line_no)
                videos_raw.append((line_no, vid, feats))
            elif kind == "caption":
                cid = str(_require(record, "id", line_no))
                if cid in caption_lines:
                    raise DuplicateIdError(f"duplicate caption id {cid!r}", line_no)
                caption_lines[cid] = line_no
                captions_raw.append((line_no, record))
            elif kind == "split":
                name = _require(record, "name", line_no)
                if name not in SPLIT_NAMES:
                    raise ParseError(f"unknown split name {name!r}", line_no)
                if any(name == existing for _, existing, _ in splits_raw):
                    raise DuplicateIdError(f"duplicate split {name!r}", line_no)
                ids = [str(i) for i in _require(record, "ids", line_no)]
                splits_raw.append((line_no, name, ids))
            else:
                raise ParseError(f"unknown record kind {kind!r}", line_no)

    captions: list[Caption] = []
    caption_ids_by_video: dict[str, list[str]] = {vid: [] for _, vid, _ in videos_raw}
    for line_no, record in captions_raw:
        cid = str(record["id"])
        vid = str(_require(record, "video", line_no))
        if vid not in video_lines:
            raise DanglingReferenceError(f"caption {cid!r} references unknown video {vid!r}", line_no)
        for pos, key in ((POS_VERB, "verbs"), (POS_NOUN, "nouns")):
            for class_id in _require(record, key, line_no):
                if (pos, int(class_id)) not in class_keys:
                    raise DanglingReferenceError(
                        f"caption {cid!r} references unknown {key[:-1]} class {class_id}", line_no
                    )
        profile = SemanticProfile.from_ids(record["verbs"], record["nouns"])
        feats = record.get("features")
        captions.append(Caption(
            annotation=CaptionAnnotation(
                caption_id=cid, video_id=vid, text=str(record.get("text", "")), profile=profile
            ),
            features=None if feats is None else np.asarray(feats, dtype=float),
        ))
        caption_ids_by_video[vid].append(cid)

    videos = [
        Video(video_id=vid, features=feats, caption_ids=tuple(caption_ids_by_video[vid]))
        for _, vid, feats in videos_raw
    ]
    for line_no, vid, _ in videos_raw:
        if not caption_ids_by_video[vid]:
            raise DatasetFormatError(f"video {vid!r} has no captions", line_no)

    if videos:
        d_v = videos[0].features.shape[0]
        for line_no, vid, feats in videos_raw:
            if feats.shape[0] != d_v:
                raise DimensionMismatchError(
                    f"video {vid!r} has {feats.shape[0]} features, expected {d_v}", line_no
                )
    with_features = [c for c in captions if c.features is not None]
    if with_features and len(with_features) != len(captions):
        missing = next(c for c in captions if c.features is None)
        raise DimensionMismatchError(
            "caption features must be present for all captions or none; "
            f"{missing.annotation.caption_id!r} has none",
            caption_lines[missing.annotation.caption_id],
        )
    if with_features:
        d_t = with_features[0].features.shape[0]
        for c in with_features:
            if c.features.shape[0] != d_t:
                raise DimensionMismatchError(
                    f"caption {c.annotation.caption_id!r} has {c.features.shape[0]} features, expected {d_t}",
                    caption_lines[c.annotation.caption_id],
                )

    splits: dict[str, list[str]] = {}
    seen_split_ids: dict[str, str] = {}
    for line_no, name, ids in splits_raw:
        for vid in ids:
            if vid not in video_lines:
                raise DanglingReferenceError(f"split {name!r} references unknown video {vid!r}", line_no)
            if vid in seen_split_ids:
                raise DatasetFormatError(
                    f"video {vid!r} appears in both {seen_split_ids[vid]!r} and {name!r} splits", line_no
                )
            seen_split_ids[vid] = name
        splits[name] = ids

    if not videos:
        raise DatasetFormatError("dataset contains no videos")
    return Dataset(classes=classes, videos=videos, captions=captions, splits=splits)


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write the JSONL format byte-stably: classes (verbs then nouns, by
    id), videos, captions, then splits in train/val/test order."""
    lines = []
    ordered = sorted(dataset.classes, key=lambda c: (c.pos != POS_VERB, c.id))
    for c in ordered:
        lines.append(json.dumps(
            {"kind": "class", "id": c.id, "pos": c.pos, "label": c.label},
            separators=(",", ":"),
        ))
    for v in dataset.videos:
        lines.append(json.dumps(
            {"kind": "video", "id": v.video_id, "features": v.features.tolist()},
            separators=(",", ":"),
        ))
    for c in dataset.captions:
        record = {
            "kind": "caption",
            "id": c.annotation.caption_id,
            "video": c.annotation.video_id,
            "text": c.annotation.text,
            "verbs": sorted(c.annotation.profile.verb_ids),
            "nouns": sorted(c.annotation.profile.noun_ids),
        }
        if c.features is not None:
            record["features"] = c.features.tolist()
        lines.append(json.dumps(record, separators=(",", ":")))
    for name in SPLIT_NAMES:
        if name in dataset.splits:
            lines.append(json.dumps(
                {"kind": "split", "name": name, "ids": list(dataset.splits[name])},
                separators=(",", ":"),
            ))
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class SyntheticConfig:
    n_videos: int = 640
    captions_per_video: int = 3
    n_verb_classes: int = 16
    n_noun_classes: int = 48
    verbs_per_video: int = 1
    nouns_per_video: int = 2
    overlap_rate: float = 0.5
    feature_noise_sigma: float = 0.1
    caption_keep_prob: float = 0.75
    val_videos: int = 64
    test_videos: int = 64
    seed: int = 0

    def __post_init__(self):
        counts = {
            "n_videos": self.n_videos,
            "captions_per_video": self.captions_per_video,
            "n_verb_classes": self.n_verb_classes,
            "n_noun_classes": self.n_noun_classes,
            "verbs_per_video": self.verbs_per_video,
            "nouns_per_video": self.nouns_per_video,
        }
        for name, value in counts.items():
            if value < 1:
                raise InvalidConfigError(f"{name} must be >= 1, got {value}")
        for name, value in (("overlap_rate", self.overlap_rate), ("caption_keep_prob", self.caption_keep_prob)):
            if not 0.0 <= value <= 1.0:
                raise InvalidConfigError(f"{name} must be in [0, 1], got {value}")
        if self.feature_noise_sigma < 0:
            raise InvalidConfigError(f"feature_noise_sigma must be >= 0, got {self.feature_noise_sigma}")
        if self.verbs_per_video > self.n_verb_classes:
            raise InvalidConfigError("verbs_per_video exceeds the verb vocabulary")
        if self.nouns_per_video > self.n_noun_classes:
            raise InvalidConfigError("nouns_per_video exceeds the noun vocabulary")
        if self.val_videos < 0 or self.test_videos < 0:
            raise InvalidConfigError("split sizes must be >= 0")
        if self.val_videos + self.test_videos >= self.n_videos:
            raise InvalidConfigError("val and test splits leave no training videos")
        if self.overlap_rate == 0.0:
            if (self.n_videos * self.verbs_per_video > self.n_verb_classes
                    or self.n_videos * self.nouns_per_video > self.n_noun_classes):
                raise InvalidConfigError(
                    "vocabulary too small for fully disjoint videos (overlap_rate=0)"
                )

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "n_videos", "captions_per_video", "n_verb_classes", "n_noun_classes",
            "verbs_per_video", "nouns_per_video", "overlap_rate", "feature_noise_sigma",
            "caption_keep_prob", "val_videos", "test_videos", "seed",
        )}


class _ClassSampler:
    """Per-part-of-speech sampler: each slot reuses a class drawn from the
    draws of earlier videos with probability overlap_rate (preferential
    attachment, so popular classes emerge), otherwise takes a fresh unused
    class while any remain."""

    def __init__(self, vocab_size: int, overlap_rate: float):
        self.vocab_size = vocab_size
        self.overlap_rate = overlap_rate
        self.history: list[int] = []
        self.next_fresh = 0

    def sample(self, k: int, rng: np.random.Generator) -> list[int]:
        chosen: list[int] = []
        for _ in range(k):
            pick = None
            if self.history and rng.random() < self.overlap_rate:
                pool = [c for c in self.history if c not in chosen]
                if pool:
                    pick = pool[rng.integers(len(pool))]
            if pick is None:
                if self.next_fresh < self.vocab_size:
                    pick = self.next_fresh
                    self.next_fresh += 1
                else:
                    remaining = [c for c in range(self.vocab_size) if c not in chosen]
                    pick = remaining[rng.integers(len(remaining))]
            chosen.append(pick)
        self.history.extend(chosen)
        return chosen


def generate_synthetic(config: SyntheticConfig) -> Dataset:
    """Seed-deterministic synthetic dataset with controllable class
    sharing between videos.

    Each video draws latent verb/noun classes via `_ClassSampler`; its
    captions keep each latent class with probability caption_keep_prob
    (at least one class always survives). Features are the class
    indicator over the vocabulary plus Gaussian noise, so feature
    similarity tracks semantic overlap.
    """
    rng = np.random.default_rng(config.seed)
    classes = (
        [ClassEntry(id=i, pos=POS_VERB, label=f"verb_{i:03d}") for i in range(config.n_verb_classes)]
        + [ClassEntry(id=i, pos=POS_NOUN, label=f"noun_{i:03d}") for i in range(config.n_noun_classes)]
    )
    verb_sampler = _ClassSampler(config.n_verb_classes, config.overlap_rate)
    noun_sampler = _ClassSampler(config.n_noun_classes, config.overlap_rate)
    dim = config.n_verb_classes + config.n_noun_classes

    videos: list[Video] = []
    captions: list[Caption] = []
    for i in range(config.n_videos):
        video_id = f"vid{i:04d}"
        verb_ids = verb_sampler.sample(config.verbs_per_video, rng)
        noun_ids = noun_sampler.sample(config.nouns_per_video, rng)

        indicator = np.zeros(dim)
        indicator[verb_ids] = 1.0
        indicator[[config.n_verb_classes + n for n in noun_ids]] = 1.0
        noise = rng.normal(0.0, config.feature_noise_sigma, size=dim) if config.feature_noise_sigma > 0 else 0.0
        video_features = indicator + noise

        caption_ids = []
        for k in range(config.captions_per_video):
            caption_id = f"{video_id}_c{k}"
            kept_v = [v for v in verb_ids if rng.random() < config.caption_keep_prob]
            kept_n = [n for n in noun_ids if rng.random() < config.caption_keep_prob]
            if not kept_v and not kept_n:
                pool = [("V", v) for v in verb_ids] + [("N", n) for n in noun_ids]
                pos, cid = pool[rng.integers(len(pool))]
                (kept_v if pos == "V" else kept_n).append(cid)
            cap_indicator = np.zeros(dim)
            cap_indicator[kept_v] = 1.0
            cap_indicator[[config.n_verb_classes + n for n in kept_n]] = 1.0
            cap_noise = rng.normal(0.0, config.feature_noise_sigma, size=dim) if config.feature_noise_sigma > 0 else 0.0
            verbs_text = " ".join(f"verb_{v:03d}" for v in sorted(kept_v))
            nouns_text = " ".join(f"noun_{n:03d}" for n in sorted(kept_n))
            captions.append(Caption(
                annotation=CaptionAnnotation(
                    caption_id=caption_id,
                    video_id=video_id,
                    text=f"{verbs_text} {nouns_text}".strip(),
                    profile=SemanticProfile.from_ids(kept_v, kept_n),
                ),
                features=cap_indicator + cap_noise,
            ))
            caption_ids.append(caption_id)
        videos.append(Video(video_id=video_id, features=video_features, caption_ids=tuple(caption_ids)))

    n_train = config.n_videos - config.val_videos - config.test_videos
    ids = [v.video_id for v in videos]
    splits = {
        "train": ids[:n_train],
        "val": ids[n_train:n_train + config.val_videos],
        "test": ids[n_train + config.val_videos:],
    }
    return Dataset(classes=classes, videos=videos, captions=captions, splits=splits)


SYNTHETIC_PRESETS: dict[str, dict] = {
    # 64-dim features, 512 train videos: the toolkit's reference dataset
    "default": {},
    # heavier class sharing: many cross-video pairs with high relevance
    "dense": {"overlap_rate": 0.85, "n_verb_classes": 8, "n_noun_classes": 24,
              "n_videos": 320, "val_videos": 32, "test_videos": 32},
    # small and quick, for tests and smoke runs
    "tiny": {"n_videos": 24, "val_videos": 4, "test_videos": 4,
             "n_verb_classes": 8, "n_noun_classes": 16, "captions_per_video": 2},
}


def synthetic_preset(name: str, seed: int = 0) -> SyntheticConfig:
    if name not in SYNTHETIC_PRESETS:
        raise InvalidConfigError(
            f"unknown synthetic preset {name!r}; available: {sorted(SYNTHETIC_PRESETS)}"
        )
    return SyntheticConfig(seed=seed, **SYNTHETIC_PRESETS[name])


@dataclass(frozen=True)
class Batch:
    video_ids: tuple[str, ...]
    caption_ids: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.video_ids)


def sample_batches(dataset: Dataset, split: str, batch_size: int, seed) -> list[Batch]:
    """One epoch of (video, paired caption) batches.

    Video order is a seeded shuffle; multi-caption videos draw their
    caption uniformly from the same stream; the final short batch is kept.
    """
    if batch_size < 2:
        raise InvalidConfigError(f"batch_size must be >= 2, got {batch_size}")
    video_ids = dataset.splits.get(split, [])
    if not video_ids:
        raise ValueError(f"split {split!r} is empty")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(video_ids))
    pairs = []
    for idx in order:
        vid = video_ids[int(idx)]
        caps = dataset.video_by_id[vid].caption_ids
        cap = caps[int(rng.integers(len(caps)))] if len(caps) > 1 else caps[0]
        pairs.append((vid, cap))
    return [
        Batch(
            video_ids=tuple(v for v, _ in pairs[i:i + batch_size]),
            caption_ids=tuple(c for _, c in pairs[i:i + batch_size]),
        )
        for i in range(0, len(pairs), batch_size)
    ]
