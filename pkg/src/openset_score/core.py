"""Vector primitives and the per-media / per-subject score matrices.

A gallery holds several normalized feature vectors ("media") per subject;
probes are single vectors with an optional truth label.  Everything else in
the package consumes the two cosine-similarity matrices built here:

* per-subject scores: probe vs. each subject's (unnormalized) mean of its
  unit media vectors,
* per-media scores: probe vs. every individual gallery medium, in canonical
  gallery order (subject order, then media order within subject).

All structures are immutable after construction and all functions are pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    DuplicateMediaId,
    NonFinite,
    UnknownTruthSubject,
    ZeroNorm,
)

#: Truth marker for probes whose subject is not enrolled in the gallery.
NONMATED = "NONMATED"

_ZERO_NORM_FLOOR = 1e-12
_UNIT_TOL = 1e-9


def normalize(vector) -> np.ndarray:
    """Return ``vector`` scaled to unit Euclidean norm.

    Raises NonFinite for NaN/Inf entries and ZeroNorm when the norm is
    below 1e-12.  Direction is preserved; the result is float64.
    """
    v = np.asarray(vector, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise DimensionMismatch(f"expected a 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise NonFinite("vector contains NaN or Inf")
    norm = float(np.linalg.norm(v))
    if norm < _ZERO_NORM_FLOOR:
        raise ZeroNorm(f"vector norm {norm:g} is below {_ZERO_NORM_FLOOR:g}")
    return v / norm


def cosine(a, b) -> float:
    """Inner product of two unit vectors, clamped to [-1, 1].

    The clamp only absorbs floating-point overshoot (<= 1e-12); inputs are
    expected to be unit-norm already.
    """
    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    if av.shape != bv.shape:
        raise DimensionMismatch(f"shapes {av.shape} and {bv.shape} differ")
    return float(min(1.0, max(-1.0, float(np.dot(av, bv)))))


@dataclass(frozen=True, eq=False)
class Embedding:
    """One normalized feature vector tagged with subject and media ids."""

    subject_id: str
    media_id: str
    vector: np.ndarray

    def __post_init__(self):
        v = np.array(self.vector, dtype=np.float64)  # private copy, frozen below
        object.__setattr__(self, "vector", v)
        if v.ndim != 1 or v.size < 1:
            raise DimensionMismatch(f"embedding vector has shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise NonFinite(f"embedding {self.subject_id}/{self.media_id} has NaN/Inf")
        norm = float(np.linalg.norm(v))
        if abs(norm - 1.0) > _UNIT_TOL:
            raise ZeroNorm(
                f"embedding {self.subject_id}/{self.media_id} has norm {norm!r}; "
                "construct via Embedding.from_raw to normalize"
            )
        v.setflags(write=False)

    @classmethod
    def from_raw(cls, subject_id: str, media_id: str, vector) -> "Embedding":
        """Build an embedding from a raw (not yet normalized) vector."""
        return cls(subject_id, media_id, normalize(vector))


class Gallery:
    """Per-subject collections of embeddings in a fixed canonical order.

    The constructor validates uniqueness and dimension agreement and
    precomputes the stacked media matrix used by the scoring routines.
    """

    def __init__(self, subjects: Sequence[tuple[str, Sequence[Embedding]]]):
        subjects = [(sid, list(embs)) for sid, embs in subjects]
        if not subjects:
            raise ValueError("gallery has no subjects")
        seen = set()
        for sid, embs in subjects:
            if sid in seen:
                raise DuplicateMediaId(f"duplicate subject_id {sid!r}")
            seen.add(sid)
            if not embs:
                raise ValueError(f"subject {sid!r} has no media")
            for e in embs:
                if e.subject_id != sid:
                    raise ValueError(
                        f"embedding {e.subject_id}/{e.media_id} filed under subject {sid!r}"
                    )
        dims = {e.vector.size for _, embs in subjects for e in embs}
        if len(dims) != 1:
            raise DimensionMismatch(f"mixed vector dimensions in gallery: {sorted(dims)}")
        media_keys = set()
        for sid, embs in subjects:
            for e in embs:
                key = (sid, e.media_id)
                if key in media_keys:
                    raise DuplicateMediaId(f"duplicate media {sid!r}/{e.media_id!r}")
                media_keys.add(key)

        self.subjects: tuple[tuple[str, tuple[Embedding, ...]], ...] = tuple(
            (sid, tuple(embs)) for sid, embs in subjects
        )
        self.subject_ids: tuple[str, ...] = tuple(sid for sid, _ in self.subjects)
        self.media_counts = np.array([len(embs) for _, embs in self.subjects], dtype=np.int64)
        self.subject_offsets = np.concatenate(([0], np.cumsum(self.media_counts)))[:-1]
        self.media_matrix = np.vstack(
            [e.vector for _, embs in self.subjects for e in embs]
        )
        self.media_matrix.setflags(write=False)
        # owning subject index for every media column, canonical order
        self.media_subject_index = np.repeat(
            np.arange(len(self.subjects)), self.media_counts
        )
        # per-subject mean of unit media vectors; deliberately NOT re-normalized
        sums = np.add.reduceat(self.media_matrix, self.subject_offsets, axis=0)
        self.subject_centers = sums / self.media_counts[:, None]
        self.subject_centers.setflags(write=False)

    @property
    def total_media(self) -> int:
        return int(self.media_counts.sum())

    @property
    def dimension(self) -> int:
        return self.media_matrix.shape[1]

    def subject_index(self, subject_id: str) -> int:
        try:
            return self.subject_ids.index(subject_id)
        except ValueError:
            raise UnknownTruthSubject(f"subject {subject_id!r} is not in the gallery") from None

    def restrict(self, keep_subject_ids: Sequence[str]) -> "Gallery":
        """New gallery containing only the named subjects, order preserved."""
        keep = set(keep_subject_ids)
        kept = [(sid, embs) for sid, embs in self.subjects if sid in keep]
        return Gallery(kept)


@dataclass(frozen=True, eq=False)
class Probe:
    """A query vector with a unique id and a truth label (or NONMATED)."""

    probe_id: str
    embedding: Embedding
    truth: str

    @property
    def is_mated(self) -> bool:
        return self.truth != NONMATED


class ProbeSet:
    """An ordered list of probes with the stacked vector matrix."""

    def __init__(self, probes: Sequence[Probe]):
        probes = list(probes)
        ids = [p.probe_id for p in probes]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise DuplicateMediaId(f"duplicate probe ids: {dup}")
        dims = {p.embedding.vector.size for p in probes}
        if len(dims) > 1:
            raise DimensionMismatch(f"mixed probe dimensions: {sorted(dims)}")
        self.probes: tuple[Probe, ...] = tuple(probes)
        self.probe_ids: tuple[str, ...] = tuple(ids)
        self.truths: tuple[str, ...] = tuple(p.truth for p in probes)
        if probes:
            self.matrix = np.vstack([p.embedding.vector for p in probes])
        else:
            self.matrix = np.zeros((0, 0))
        self.matrix.setflags(write=False)

    def __len__(self) -> int:
        return len(self.probes)

    def validate_truths(self, gallery: Gallery) -> None:
        """Raise UnknownTruthSubject for any mated truth not in the gallery."""
        known = set(gallery.subject_ids)
        for p in self.probes:
            if p.truth != NONMATED and p.truth not in known:
                raise UnknownTruthSubject(
                    f"probe {p.probe_id!r} claims unknown subject {p.truth!r}"
                )


def _check_probe_dim(probe: Embedding, gallery: Gallery) -> None:
    if probe.vector.size != gallery.dimension:
        raise DimensionMismatch(
            f"probe dimension {probe.vector.size} != gallery dimension {gallery.dimension}"
        )


def _clip_unit(scores: np.ndarray) -> np.ndarray:
    # absorbs <=1e-12 rounding overshoot; inputs are unit vectors so values
    # cannot legitimately leave [-1, 1]
    return np.clip(scores, -1.0, 1.0)


def _centers(gallery: Gallery, renormalize: bool) -> np.ndarray:
    centers = gallery.subject_centers
    if renormalize:
        norms = np.linalg.norm(centers, axis=1, keepdims=True)
        if np.any(norms < _ZERO_NORM_FLOOR):
            raise ZeroNorm("a subject's media mean has zero norm; cannot re-normalize")
        centers = centers / norms
    return centers


def per_subject_scores(
    probe: Embedding, gallery: Gallery, renormalize_centers: bool = False
) -> np.ndarray:
    """Probe vs. per-subject aggregated centers, one value per subject.

    The center is the arithmetic mean of the subject's unit media vectors.
    By default the mean is not re-normalized; ``renormalize_centers=True``
    rescales each center to unit length first (for systems that enroll
    re-normalized templates).
    """
    _check_probe_dim(probe, gallery)
    centers = _centers(gallery, renormalize_centers)
    return _clip_unit(centers @ probe.vector)


def per_media_scores(probe: Embedding, gallery: Gallery) -> np.ndarray:
    """One cosine per gallery medium, in canonical gallery order."""
    _check_probe_dim(probe, gallery)
    return _clip_unit(gallery.media_matrix @ probe.vector)


def mean_sample_scores(probe: Embedding, gallery: Gallery) -> np.ndarray:
    """Per-subject mean of the individual probe-to-medium cosines.

    Algebraically identical to :func:`per_subject_scores` (the inner product
    is linear, and the subject center is not re-normalized); both are kept
    because they are distinct strategies in principle.
    """
    media = per_media_scores(probe, gallery)
    sums = np.add.reduceat(media, gallery.subject_offsets)
    return sums / gallery.media_counts


def subject_score_matrix(
    probes: ProbeSet, gallery: Gallery, renormalize_centers: bool = False
) -> np.ndarray:
    """Stacked per-subject scores: rows = probes, columns = subjects."""
    if len(probes) == 0:
        return np.zeros((0, len(gallery.subject_ids)))
    if probes.matrix.shape[1] != gallery.dimension:
        raise DimensionMismatch(
            f"probe dimension {probes.matrix.shape[1]} != gallery {gallery.dimension}"
        )
    return _clip_unit(probes.matrix @ _centers(gallery, renormalize_centers).T)


def media_score_matrix(probes: ProbeSet, gallery: Gallery) -> np.ndarray:
    """Stacked per-media scores: rows = probes, columns = gallery media."""
    if len(probes) == 0:
        return np.zeros((0, gallery.total_media))
    if probes.matrix.shape[1] != gallery.dimension:
        raise DimensionMismatch(
            f"probe dimension {probes.matrix.shape[1]} != gallery {gallery.dimension}"
        )
    return _clip_unit(probes.matrix @ gallery.media_matrix.T)
