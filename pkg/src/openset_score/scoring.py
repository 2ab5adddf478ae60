"""Score-fusion algorithms over per-subject and per-media matrices.

The main algorithm adds each probe's k-th-largest media similarity to the
columns tied at that probe's per-subject row maximum and leaves every other
column bit-identical.  The remaining modes are the baselines it is compared
against: plain averaging fusion, per-subject pooling, and the increment
variants (constant, doubling, averaged top-k).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Embedding, Gallery, ProbeSet, media_score_matrix, subject_score_matrix
from .errors import DimensionMismatch, KTooLarge, NonFinite

# FusionMode kinds
LOCAL_SCORE = "LOCAL_SCORE"
NAIVE_MEAN = "NAIVE_MEAN"
NONE = "NONE"
MAX_POOL = "MAX_POOL"
MIN_POOL = "MIN_POOL"
MEAN_POOL = "MEAN_POOL"
ADD_CONST = "ADD_CONST"
DOUBLE_MAX = "DOUBLE_MAX"
AVG_TOPK = "AVG_TOPK"

_POOL_KINDS = (MAX_POOL, MIN_POOL, MEAN_POOL)
_KNN_KINDS = (LOCAL_SCORE, NAIVE_MEAN, AVG_TOPK)
_ALL_KINDS = (LOCAL_SCORE, NAIVE_MEAN, NONE, *_POOL_KINDS, ADD_CONST, DOUBLE_MAX, AVG_TOPK)


@dataclass(frozen=True)
class FusionMode:
    """How a per-subject score row is rewritten before evaluation.

    ``k`` is only meaningful for the k-NN kinds, ``constant`` only for
    ADD_CONST.  Build instances through the class methods.
    """

    kind: str
    k: int = 1
    constant: float = 1.0

    def __post_init__(self):
        if self.kind not in _ALL_KINDS:
            raise ValueError(f"unknown fusion kind {self.kind!r}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not np.isfinite(self.constant):
            raise ValueError("constant must be finite")

    @classmethod
    def local_score(cls, k: int = 1) -> "FusionMode":
        return cls(LOCAL_SCORE, k=k)

    @classmethod
    def naive_mean(cls, k: int = 1) -> "FusionMode":
        return cls(NAIVE_MEAN, k=k)

    @classmethod
    def none(cls) -> "FusionMode":
        return cls(NONE)

    @classmethod
    def max_pool(cls) -> "FusionMode":
        return cls(MAX_POOL)

    @classmethod
    def min_pool(cls) -> "FusionMode":
        return cls(MIN_POOL)

    @classmethod
    def mean_pool(cls) -> "FusionMode":
        return cls(MEAN_POOL)

    @classmethod
    def add_const(cls, constant: float = 1.0) -> "FusionMode":
        return cls(ADD_CONST, constant=constant)

    @classmethod
    def double_max(cls) -> "FusionMode":
        return cls(DOUBLE_MAX)

    @classmethod
    def avg_topk(cls, k: int) -> "FusionMode":
        return cls(AVG_TOPK, k=k)

    @property
    def uses_knn(self) -> bool:
        return self.kind in _KNN_KINDS


@dataclass(frozen=True, eq=False)
class FusedScores:
    """Fused probe-by-subject matrix plus the per-row increment record.

    ``mask`` marks, per row, exactly the columns that were tied at the
    pre-fusion row maximum (the columns the increment targets).
    ``increments`` holds the value that was added to masked columns; it is
    0.0 for modes that add nothing (NONE and the pooling modes).
    """

    matrix: np.ndarray
    mask: np.ndarray
    increments: np.ndarray
    probe_ids: tuple[str, ...]
    subject_ids: tuple[str, ...]
    mode: FusionMode


def knn_score(media_row, k: int, clamp_k: bool = False) -> float:
    """The k-th largest value of a per-media score row (k=1 is the max).

    The lookup is global over all gallery media.  If k exceeds the media
    count, raises KTooLarge unless ``clamp_k``, which returns the smallest
    value instead.
    """
    row = np.asarray(media_row, dtype=np.float64)
    n = row.size
    if k > n:
        if not clamp_k:
            raise KTooLarge(f"k={k} exceeds media count {n}")
        k = n
    return float(np.partition(row, n - k)[n - k])


def knn_matrix(media_scores: np.ndarray, k: int, clamp_k: bool = False) -> np.ndarray:
    """Per-row k-th largest of a probes-by-media matrix."""
    n = media_scores.shape[1]
    if k > n:
        if not clamp_k:
            raise KTooLarge(f"k={k} exceeds media count {n}")
        k = n
    if media_scores.shape[0] == 0:
        return np.zeros(0)
    return np.partition(media_scores, n - k, axis=1)[:, n - k]


def _check_finite_row(row: np.ndarray) -> None:
    if not np.all(np.isfinite(row)):
        raise NonFinite("score row contains NaN or Inf")


def local_score(subject_row, knn: float) -> tuple[np.ndarray, np.ndarray]:
    """Add ``knn`` to every column tied at the row maximum.

    Returns ``(fused_row, mask)``.  Non-max columns are returned
    bit-identical to the input; the tie mask uses exact floating-point
    equality with the row maximum.
    """
    row = np.asarray(subject_row, dtype=np.float64)
    if row.size == 0:
        raise ValueError("empty score row")
    _check_finite_row(row)
    if not np.isfinite(knn):
        raise NonFinite("k-NN score is not finite")
    mask = row == row.max()
    fused = np.where(mask, row + knn, row)
    return fused, mask


def local_score_matrix(
    subject_scores: np.ndarray, knn: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise :func:`local_score` over a probes-by-subjects matrix."""
    if subject_scores.shape[0] == 0:
        return subject_scores.copy(), np.zeros(subject_scores.shape, dtype=bool)
    row_max = subject_scores.max(axis=1, keepdims=True)
    mask = subject_scores == row_max
    fused = np.where(mask, subject_scores + np.asarray(knn)[:, None], subject_scores)
    return fused, mask


def naive_mean_fusion(subject_row, knn: float) -> np.ndarray:
    """Average every column with the k-NN score: (s_i + knn) / 2."""
    row = np.asarray(subject_row, dtype=np.float64)
    _check_finite_row(row)
    return (row + knn) / 2.0


def pool_scores(media_row, gallery: Gallery, mode: FusionMode) -> np.ndarray:
    """Per-subject max/min/mean over that subject's media cosines."""
    if mode.kind not in _POOL_KINDS:
        raise ValueError(f"{mode.kind} is not a pooling mode")
    row = np.asarray(media_row, dtype=np.float64)
    offsets = gallery.subject_offsets
    if mode.kind == MAX_POOL:
        return np.maximum.reduceat(row, offsets)
    if mode.kind == MIN_POOL:
        return np.minimum.reduceat(row, offsets)
    return np.add.reduceat(row, offsets) / gallery.media_counts


def variant_fusion(
    subject_row,
    media_row,
    mode: FusionMode,
    clamp_k: bool = False,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Increment variants: ADD_CONST, DOUBLE_MAX, AVG_TOPK.

    Returns ``(fused_row, mask, increment)`` where the increment was added
    to the argmax-tied columns: the constant for ADD_CONST, the row maximum
    itself for DOUBLE_MAX (v -> 2v), and the mean of the 1st..k-th global
    media similarities for AVG_TOPK.
    """
    row = np.asarray(subject_row, dtype=np.float64)
    _check_finite_row(row)
    if mode.kind == ADD_CONST:
        inc = float(mode.constant)
    elif mode.kind == DOUBLE_MAX:
        inc = float(row.max())
    elif mode.kind == AVG_TOPK:
        media = np.asarray(media_row, dtype=np.float64)
        n = media.size
        k = mode.k
        if k > n:
            if not clamp_k:
                raise KTooLarge(f"k={k} exceeds media count {n}")
            k = n
        inc = float(np.sort(media)[n - k :].mean())
    else:
        raise ValueError(f"{mode.kind} is not an increment variant")
    mask = row == row.max()
    fused = np.where(mask, row + inc, row)
    return fused, mask, inc


def one_to_one_score(
    probe: Embedding, subject_media: Sequence[Embedding], k: int, clamp_k: bool = False
) -> float:
    """Single-claimed-subject score: mean media cosine + k-th largest cosine.

    With only one gallery subject the argmax indicator is always satisfied,
    so the k-NN term (restricted to that subject's media) is always added.
    """
    media = list(subject_media)
    if not media:
        raise ValueError("claimed subject has no media")
    gallery = Gallery([(media[0].subject_id, media)])
    if probe.vector.size != gallery.dimension:
        raise DimensionMismatch(
            f"probe dimension {probe.vector.size} != media dimension {gallery.dimension}"
        )
    scores = gallery.media_matrix @ probe.vector
    return float(scores.mean()) + knn_score(scores, k, clamp_k=clamp_k)


def fuse_score_matrix(
    subject_scores: np.ndarray,
    media_scores: np.ndarray | None,
    mode: FusionMode,
    *,
    gallery: Gallery | None = None,
    probe_ids: Sequence[str] = (),
    subject_ids: Sequence[str] = (),
    clamp_k: bool = False,
    per_subject_knn: bool = False,
) -> FusedScores:
    """Apply a fusion mode to precomputed score matrices.

    ``media_scores`` may be None for modes that do not consult the media
    matrix (NONE, ADD_CONST, DOUBLE_MAX).  Pooling modes and
    ``per_subject_knn`` need ``gallery`` for the media-to-subject grouping.
    """
    n_probes = subject_scores.shape[0] if subject_scores is not None else media_scores.shape[0]

    def _empty_like(n_cols):
        return FusedScores(
            matrix=np.zeros((0, n_cols)),
            mask=np.zeros((0, n_cols), dtype=bool),
            increments=np.zeros(0),
            probe_ids=tuple(probe_ids),
            subject_ids=tuple(subject_ids),
            mode=mode,
        )

    if mode.kind in _POOL_KINDS:
        if gallery is None:
            raise ValueError("pooling modes need the gallery for media grouping")
        if n_probes == 0:
            return _empty_like(len(gallery.subject_ids))
        offsets = gallery.subject_offsets
        if mode.kind == MAX_POOL:
            pooled = np.maximum.reduceat(media_scores, offsets, axis=1)
        elif mode.kind == MIN_POOL:
            pooled = np.minimum.reduceat(media_scores, offsets, axis=1)
        else:
            pooled = np.add.reduceat(media_scores, offsets, axis=1) / gallery.media_counts
        mask = pooled == pooled.max(axis=1, keepdims=True)
        return FusedScores(
            matrix=pooled,
            mask=mask,
            increments=np.zeros(n_probes),
            probe_ids=tuple(probe_ids),
            subject_ids=tuple(subject_ids),
            mode=mode,
        )

    if n_probes == 0:
        return _empty_like(subject_scores.shape[1])

    row_max = subject_scores.max(axis=1, keepdims=True)
    mask = subject_scores == row_max

    if mode.kind == NONE:
        return FusedScores(
            matrix=subject_scores.copy(),
            mask=mask,
            increments=np.zeros(n_probes),
            probe_ids=tuple(probe_ids),
            subject_ids=tuple(subject_ids),
            mode=mode,
        )

    if mode.kind == ADD_CONST:
        inc = np.full(n_probes, float(mode.constant))
    elif mode.kind == DOUBLE_MAX:
        inc = row_max[:, 0].copy()
    elif mode.kind in (LOCAL_SCORE, NAIVE_MEAN):
        # the per-subject reading only applies to the selective algorithm
        use_per_subject = per_subject_knn and mode.kind == LOCAL_SCORE
        inc = _knn_increments(media_scores, mode.k, gallery, clamp_k, use_per_subject)
    elif mode.kind == AVG_TOPK:
        n = media_scores.shape[1]
        k = mode.k
        if k > n:
            if not clamp_k:
                raise KTooLarge(f"k={k} exceeds media count {n}")
            k = n
        top = np.partition(media_scores, n - k, axis=1)[:, n - k :]
        inc = top.mean(axis=1)
    else:  # pragma: no cover - guarded by FusionMode validation
        raise ValueError(f"unhandled mode {mode.kind}")

    if mode.kind == NAIVE_MEAN:
        fused = (subject_scores + inc[:, None]) / 2.0
    elif per_subject_knn and mode.kind == LOCAL_SCORE:
        # inc is a (probes, subjects) matrix in this branch: each tied
        # column receives its own subject's k-NN score
        fused = np.where(mask, subject_scores + inc, subject_scores)
        inc = np.where(mask, inc, -np.inf).max(axis=1)
    else:
        fused = np.where(mask, subject_scores + inc[:, None], subject_scores)

    return FusedScores(
        matrix=fused,
        mask=mask,
        increments=np.asarray(inc, dtype=np.float64),
        probe_ids=tuple(probe_ids),
        subject_ids=tuple(subject_ids),
        mode=mode,
    )


def _knn_increments(media_scores, k, gallery, clamp_k, per_subject_knn):
    if not per_subject_knn:
        return knn_matrix(media_scores, k, clamp_k=clamp_k)
    if gallery is None:
        raise ValueError("per_subject_knn needs the gallery for media grouping")
    # k-th largest within each subject's own media block
    counts = gallery.media_counts
    if not clamp_k and np.any(counts < k):
        short = int(counts.min())
        raise KTooLarge(f"k={k} exceeds media count {short} of some subject")
    per_subj = np.empty((media_scores.shape[0], len(counts)))
    for j, (start, cnt) in enumerate(zip(gallery.subject_offsets, counts)):
        kj = min(k, int(cnt))
        block = media_scores[:, start : start + int(cnt)]
        per_subj[:, j] = np.partition(block, int(cnt) - kj, axis=1)[:, int(cnt) - kj]
    return per_subj


def score_matrix(
    probes: ProbeSet,
    gallery: Gallery,
    mode: FusionMode,
    *,
    clamp_k: bool = False,
    per_subject_knn: bool = False,
    renormalize_centers: bool = False,
) -> FusedScores:
    """Full pipeline: similarity matrices from embeddings, then fusion."""
    subject_scores = subject_score_matrix(probes, gallery, renormalize_centers)
    media_scores = None
    if mode.uses_knn or mode.kind in _POOL_KINDS:
        media_scores = media_score_matrix(probes, gallery)
    return fuse_score_matrix(
        subject_scores,
        media_scores,
        mode,
        gallery=gallery,
        probe_ids=probes.probe_ids,
        subject_ids=gallery.subject_ids,
        clamp_k=clamp_k,
        per_subject_knn=per_subject_knn,
    )


def make_scorer(
    probes: ProbeSet,
    gallery: Gallery,
    mode: FusionMode,
    *,
    clamp_k: bool = False,
    per_subject_knn: bool = False,
    renormalize_centers: bool = False,
):
    """Precompute full matrices once and score against subject subsets.

    Returns ``scorer(excluded_subject_ids)`` -> FusedScores over all probes
    and the gallery restricted to the non-excluded subjects.  Used by the
    multi-run evaluation protocol, where each run drops a different subject
    set from the gallery.
    """
    full_subject = subject_score_matrix(probes, gallery, renormalize_centers)
    need_media = mode.uses_knn or mode.kind in _POOL_KINDS
    need_grouping = mode.kind in _POOL_KINDS or per_subject_knn
    full_media = media_score_matrix(probes, gallery) if need_media else None
    subject_ids = gallery.subject_ids
    media_owner = gallery.media_subject_index

    def scorer(excluded_subject_ids=frozenset()) -> FusedScores:
        excluded = frozenset(excluded_subject_ids)
        if not excluded:
            sub_gallery = gallery
            subj = full_subject
            media = full_media
            kept_ids = subject_ids
        else:
            keep_idx = np.array(
                [i for i, s in enumerate(subject_ids) if s not in excluded], dtype=np.int64
            )
            kept_ids = tuple(subject_ids[i] for i in keep_idx)
            sub_gallery = gallery.restrict(kept_ids) if need_grouping else None
            subj = full_subject[:, keep_idx]
            media = None
            if full_media is not None:
                media = full_media[:, np.isin(media_owner, keep_idx)]
        return fuse_score_matrix(
            subj,
            media,
            mode,
            gallery=sub_gallery,
            probe_ids=probes.probe_ids,
            subject_ids=kept_ids,
            clamp_k=clamp_k,
            per_subject_knn=per_subject_knn,
        )

    return scorer
