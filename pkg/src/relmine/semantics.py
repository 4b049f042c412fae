"""Verb/noun class profiles and the semantic relevance function.

Relevance between two items is the mean of the Jaccard indices of their
verb-class sets and noun-class sets. Video profiles are aggregated from
the classes of their captions, keeping classes that appear in at least
``rho * n_captions`` of them.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

POS_VERB = "V"
POS_NOUN = "N"

# Jaccard of two empty sets: both items lack that part of speech, which we
# treat as maximal agreement by default. Configurable per call.
DEFAULT_EMPTY_EMPTY = 1.0


@dataclass(frozen=True)
class ClassId:
    """A semantic class: a stable integer id plus its part of speech."""

    id: int
    pos: str

    def __post_init__(self):
        if self.id < 0:
            raise ValueError(f"class id must be non-negative, got {self.id}")
        if self.pos not in (POS_VERB, POS_NOUN):
            raise ValueError(f"pos must be {POS_VERB!r} or {POS_NOUN!r}, got {self.pos!r}")


def verb(class_id: int) -> ClassId:
    return ClassId(class_id, POS_VERB)


def noun(class_id: int) -> ClassId:
    return ClassId(class_id, POS_NOUN)


@dataclass(frozen=True)
class SemanticProfile:
    """The verb-class and noun-class sets attached to a caption or video."""

    verbs: frozenset[ClassId] = field(default_factory=frozenset)
    nouns: frozenset[ClassId] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "verbs", frozenset(self.verbs))
        object.__setattr__(self, "nouns", frozenset(self.nouns))
        for c in self.verbs:
            if c.pos != POS_VERB:
                raise ValueError(f"verb set contains non-verb class {c}")
        for c in self.nouns:
            if c.pos != POS_NOUN:
                raise ValueError(f"noun set contains non-noun class {c}")

    @classmethod
    def from_ids(cls, verb_ids: Iterable[int], noun_ids: Iterable[int]) -> "SemanticProfile":
        return cls(
            verbs=frozenset(verb(i) for i in verb_ids),
            nouns=frozenset(noun(i) for i in noun_ids),
        )

    @property
    def verb_ids(self) -> frozenset[int]:
        return frozenset(c.id for c in self.verbs)

    @property
    def noun_ids(self) -> frozenset[int]:
        return frozenset(c.id for c in self.nouns)


@dataclass(frozen=True)
class CaptionAnnotation:
    """A caption with its video reference and semantic profile."""

    caption_id: str
    video_id: str
    text: str
    profile: SemanticProfile


def class_jaccard(
    a: frozenset[ClassId] | set[ClassId],
    b: frozenset[ClassId] | set[ClassId],
    empty_empty: float = DEFAULT_EMPTY_EMPTY,
) -> float:
    """Jaccard index |a∩b| / |a∪b| of two same-part-of-speech class sets.

    When both sets are empty the configured ``empty_empty`` value is
    returned. Mixing parts of speech inside one set is an error.
    """
    for s in (a, b):
        if len({c.pos for c in s}) > 1:
            raise ValueError("class set mixes parts of speech")
    if not a and not b:
        return empty_empty
    union = len(a | b)
    return len(a & b) / union


def relevance(
    x: SemanticProfile,
    y: SemanticProfile,
    empty_empty: float = DEFAULT_EMPTY_EMPTY,
) -> float:
    """Semantic relevance of two profiles in [0, 1].

    The mean of the verb-class Jaccard and the noun-class Jaccard;
    symmetric in its arguments.
    """
    jv = class_jaccard(x.verbs, y.verbs, empty_empty=empty_empty)
    jn = class_jaccard(x.nouns, y.nouns, empty_empty=empty_empty)
    return 0.5 * (jv + jn)


def aggregate_video_profile(
    captions: Sequence[CaptionAnnotation],
    rho: float,
) -> SemanticProfile:
    """Aggregate caption profiles into one video profile.

    Keeps, per part of speech, the classes that appear in at least
    ``rho * len(captions)`` captions (compared exactly, no rounding).
    With a single caption this reduces to that caption's profile.
    """
    if not captions:
        raise ValueError("caption list is empty")
    video_ids = {c.video_id for c in captions}
    if len(video_ids) > 1:
        raise ValueError(f"captions span multiple videos: {sorted(video_ids)}")
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho must be in (0, 1], got {rho}")

    threshold = rho * len(captions)
    counts: Counter[ClassId] = Counter()
    for cap in captions:
        for c in cap.profile.verbs | cap.profile.nouns:
            counts[c] += 1
    kept = {c for c, n in counts.items() if n >= threshold}
    return SemanticProfile(
        verbs=frozenset(c for c in kept if c.pos == POS_VERB),
        nouns=frozenset(c for c in kept if c.pos == POS_NOUN),
    )


def tag_profile(text: str, lexicon: Mapping[str, ClassId]) -> SemanticProfile:
    """Exact-match lexicon tagger, plumbing for synthetic data only.

    Whitespace tokens found in the lexicon contribute their class;
    everything else is ignored. No part-of-speech disambiguation or
    word-sense resolution happens here; real annotations are expected to
    arrive precomputed in the dataset.
    """
    verbs: set[ClassId] = set()
    nouns: set[ClassId] = set()
    for token in text.split():
        c = lexicon.get(token)
        if c is not None:
            (verbs if c.pos == POS_VERB else nouns).add(c)
    return SemanticProfile(verbs=frozenset(verbs), nouns=frozenset(nouns))


def relevance_matrix(
    anchors: Sequence[SemanticProfile],
    candidates: Sequence[SemanticProfile],
    empty_empty: float = DEFAULT_EMPTY_EMPTY,
) -> np.ndarray:
    """Dense matrix of pairwise relevance values, entry (i, j) =
    relevance(anchors[i], candidates[j]).

    Computed via indicator-matrix products over the ids present; exact
    integer intersection/union counts, so entries are bitwise identical
    to the scalar ``relevance`` calls.
    """
    if not anchors or not candidates:
        raise ValueError("anchor and candidate lists must be non-empty")

    out = np.zeros((len(anchors), len(candidates)))
    for pos_sets in ("verb_ids", "noun_ids"):
        a_sets = [getattr(p, pos_sets) for p in anchors]
        c_sets = [getattr(p, pos_sets) for p in candidates]
        ids = sorted(set().union(*a_sets, *c_sets))
        col = {v: k for k, v in enumerate(ids)}
        a_ind = np.zeros((len(anchors), len(ids)), dtype=np.int64)
        c_ind = np.zeros((len(candidates), len(ids)), dtype=np.int64)
        for i, s in enumerate(a_sets):
            for v in s:
                a_ind[i, col[v]] = 1
        for j, s in enumerate(c_sets):
            for v in s:
                c_ind[j, col[v]] = 1
        inter = a_ind @ c_ind.T
        sizes_a = a_ind.sum(axis=1)[:, None]
        sizes_c = c_ind.sum(axis=1)[None, :]
        union = sizes_a + sizes_c - inter
        jac = np.where(union > 0, inter / np.maximum(union, 1), empty_empty)
        out += 0.5 * jac
    return out
