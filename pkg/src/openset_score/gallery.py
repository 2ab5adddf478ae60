"""Feature-file ingestion and per-subject k-means gallery compression.

Feature CSV format (UTF-8, LF):

    subject_id,media_id,f0,f1,...,f{d-1}            # gallery role
    subject_id,media_id,truth,f0,f1,...,f{d-1}      # probe role

``truth`` is a gallery subject_id or the literal ``NONMATED``.  Floats are
written with ``repr`` so values round-trip IEEE-754 doubles exactly.
Compact galleries serialize to the same format with media ids ``cluster<k>``.
"""

from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import NONMATED, Embedding, Gallery, Probe, ProbeSet
from .errors import DuplicateMediaId, ParseError

GALLERY_ROLE = "gallery"
PROBE_ROLE = "probe"


@dataclass(frozen=True)
class ClusterConfig:
    """Settings for per-subject k-means compression.

    ``clusters_per_subject`` of None means unlimited (no compression: the
    compact gallery equals the input).
    """

    clusters_per_subject: int | None = None
    max_iterations: int = 100
    convergence_tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        c = self.clusters_per_subject
        if c is not None and c < 1:
            raise ValueError(f"clusters_per_subject must be >= 1, got {c}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True)
class SubjectClusters:
    """Provenance of one subject's compression."""

    subject_id: str
    original_media: int
    cluster_sizes: tuple[int, ...]
    raw_means: np.ndarray  # unnormalized centroids, one row per cluster


@dataclass(frozen=True, eq=False)
class CompactGallery:
    """A gallery of cluster prototypes plus compression provenance."""

    gallery: Gallery
    provenance: tuple[SubjectClusters, ...]

    @property
    def compression_ratio(self) -> float:
        """Compact media count over original media count."""
        original = sum(p.original_media for p in self.provenance)
        return self.gallery.total_media / original


# ---------------------------------------------------------------------------
# CSV ingestion / serialization
# ---------------------------------------------------------------------------


def _parse_rows(text: str, role: str):
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError(1, "empty file")
    header = lines[0].split(",")
    probe_role = role == PROBE_ROLE
    fixed = ["subject_id", "media_id"] + (["truth"] if probe_role else [])
    if header[: len(fixed)] != fixed:
        raise ParseError(1, f"expected header to start with {','.join(fixed)}")
    feat_names = header[len(fixed) :]
    d = len(feat_names)
    if d < 1:
        raise ParseError(1, "no feature columns")
    expected = [f"f{i}" for i in range(d)]
    if feat_names != expected:
        raise ParseError(1, f"feature columns must be f0..f{d - 1}")

    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if line == "":
            raise ParseError(lineno, "blank line")
        parts = line.split(",")
        if len(parts) != len(fixed) + d:
            raise ParseError(
                lineno, f"expected {len(fixed) + d} columns, got {len(parts)}"
            )
        subject_id, media_id = parts[0], parts[1]
        truth = parts[2] if probe_role else None
        try:
            values = [float(x) for x in parts[len(fixed) :]]
        except ValueError as exc:
            raise ParseError(lineno, f"bad float: {exc}") from None
        if not all(math.isfinite(v) for v in values):
            raise ParseError(lineno, "non-finite feature value")
        rows.append((lineno, subject_id, media_id, truth, values))
    return rows


def ingest(source, role: str):
    """Read a feature CSV into a Gallery or ProbeSet.

    ``source`` is a path or a text stream.  Vectors are normalized at
    ingestion; a zero-norm row or duplicate (subject_id, media_id) is an
    error, not a silent drop.
    """
    if role not in (GALLERY_ROLE, PROBE_ROLE):
        raise ValueError(f"role must be {GALLERY_ROLE!r} or {PROBE_ROLE!r}")
    if hasattr(source, "read"):
        text = source.read()
    else:
        text = Path(source).read_text(encoding="utf-8")
    rows = _parse_rows(text, role)

    if role == GALLERY_ROLE:
        by_subject: dict[str, list[Embedding]] = {}
        order: list[str] = []
        for lineno, sid, mid, _, values in rows:
            emb = Embedding.from_raw(sid, mid, values)
            if sid not in by_subject:
                by_subject[sid] = []
                order.append(sid)
            by_subject[sid].append(emb)
        return Gallery([(sid, by_subject[sid]) for sid in order])

    probes = []
    seen = set()
    for lineno, sid, mid, truth, values in rows:
        key = (sid, mid)
        if key in seen:
            raise DuplicateMediaId(f"duplicate probe media {sid!r}/{mid!r}")
        seen.add(key)
        emb = Embedding.from_raw(sid, mid, values)
        probes.append(Probe(probe_id=f"{sid}/{mid}", embedding=emb, truth=truth))
    return ProbeSet(probes)


def _format_row(fields, vector) -> str:
    return ",".join(list(fields) + [repr(float(v)) for v in vector])


def gallery_to_csv(gallery: Gallery) -> str:
    d = gallery.dimension
    out = ["subject_id,media_id," + ",".join(f"f{i}" for i in range(d))]
    for sid, embs in gallery.subjects:
        for e in embs:
            out.append(_format_row([sid, e.media_id], e.vector))
    return "\n".join(out) + "\n"


def probes_to_csv(probes: ProbeSet) -> str:
    if len(probes) == 0:
        raise ValueError("cannot serialize an empty probe set")
    d = probes.matrix.shape[1]
    out = ["subject_id,media_id,truth," + ",".join(f"f{i}" for i in range(d))]
    for p in probes.probes:
        e = p.embedding
        out.append(_format_row([e.subject_id, e.media_id, p.truth], e.vector))
    return "\n".join(out) + "\n"


def file_digest(path) -> str:
    """SHA-256 of a file, for run manifests."""
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------


def _subject_rng(seed: int, subject_id: str) -> np.random.Generator:
    # derive a per-subject stream from (seed, sha256(subject_id)) so one
    # subject's clustering never depends on the rest of the gallery
    digest = hashlib.sha256(subject_id.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), *words]))


def kmeans(
    points, c: int, config: ClusterConfig, rng: np.random.Generator | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm with greedy farthest-point seeding.

    Returns ``(centroids, assignments)``.  Each centroid is the arithmetic
    mean of its assigned points.  ``c >= len(points)`` returns the points
    themselves (one centroid per point, in input order).  Deterministic for
    a fixed RNG state; empty clusters steal the point farthest from its
    centroid.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("points must be a non-empty 2-D array")
    if c < 1:
        raise ValueError(f"cluster count must be >= 1, got {c}")
    n = pts.shape[0]
    if c >= n:
        return pts.copy(), np.arange(n, dtype=np.int64)
    if rng is None:
        rng = np.random.default_rng(config.seed)

    # seeding: random first center, then repeatedly the point with the
    # largest squared distance to its nearest chosen center
    centers = np.empty((c, pts.shape[1]))
    first = int(rng.integers(n))
    centers[0] = pts[first]
    d2 = np.sum((pts - centers[0]) ** 2, axis=1)
    for j in range(1, c):
        centers[j] = pts[int(np.argmax(d2))]
        d2 = np.minimum(d2, np.sum((pts - centers[j]) ** 2, axis=1))

    assignments = np.zeros(n, dtype=np.int64)
    for _ in range(config.max_iterations):
        # squared Euclidean distances to every center; ties -> lowest index
        dist = (
            np.sum(pts**2, axis=1)[:, None]
            - 2.0 * pts @ centers.T
            + np.sum(centers**2, axis=1)[None, :]
        )
        assignments = np.argmin(dist, axis=1)
        new_centers = np.empty_like(centers)
        counts = np.bincount(assignments, minlength=c)
        for j in range(c):
            if counts[j] > 0:
                new_centers[j] = pts[assignments == j].mean(axis=0)
        for j in np.flatnonzero(counts == 0):
            # give the empty cluster the point farthest from its centroid,
            # never draining a singleton cluster
            own = dist[np.arange(n), assignments].copy()
            own[counts[assignments] <= 1] = -np.inf
            steal = int(np.argmax(own))
            counts[assignments[steal]] -= 1
            counts[j] += 1
            new_centers[j] = pts[steal]
            assignments[steal] = j
            dist[steal] = 0.0
        movement = float(np.sqrt(np.sum((new_centers - centers) ** 2, axis=1)).sum())
        centers = new_centers
        if movement <= config.convergence_tol:
            break
    # final assignment against the converged centers
    dist = (
        np.sum(pts**2, axis=1)[:, None]
        - 2.0 * pts @ centers.T
        + np.sum(centers**2, axis=1)[None, :]
    )
    assignments = np.argmin(dist, axis=1)
    counts = np.bincount(assignments, minlength=c)
    for j in np.flatnonzero(counts == 0):
        own = dist[np.arange(n), assignments]
        steal = int(np.argmax(own))
        assignments[steal] = j
        dist[steal] = 0.0
    centers = np.vstack([pts[assignments == j].mean(axis=0) for j in range(c)])
    return centers, assignments


def cluster_gallery(gallery: Gallery, config: ClusterConfig) -> CompactGallery:
    """Cluster each subject's media independently into prototype embeddings.

    Prototypes are cluster means re-normalized to unit length.  A subject
    with m_i <= C media keeps its original embeddings bit-identical, so a
    saturated compact gallery scores exactly like the full gallery.
    """
    c_limit = config.clusters_per_subject
    subjects_out = []
    provenance = []
    for sid, embs in gallery.subjects:
        m = len(embs)
        c = m if c_limit is None else min(c_limit, m)
        if c >= m:
            subjects_out.append((sid, list(embs)))
            provenance.append(
                SubjectClusters(
                    subject_id=sid,
                    original_media=m,
                    cluster_sizes=tuple([1] * m),
                    raw_means=np.vstack([e.vector for e in embs]),
                )
            )
            continue
        pts = np.vstack([e.vector for e in embs])
        centers, assignments = kmeans(pts, c, config, rng=_subject_rng(config.seed, sid))
        sizes = np.bincount(assignments, minlength=c)
        protos = []
        for j in range(c):
            if sizes[j] == 1:
                # singleton cluster: the mean is the member itself; reuse it
                # bit-identical instead of renormalizing a unit vector
                member = int(np.flatnonzero(assignments == j)[0])
                protos.append(Embedding(sid, f"cluster{j}", embs[member].vector))
            else:
                protos.append(Embedding.from_raw(sid, f"cluster{j}", centers[j]))
        subjects_out.append((sid, protos))
        provenance.append(
            SubjectClusters(
                subject_id=sid,
                original_media=m,
                cluster_sizes=tuple(int(s) for s in sizes),
                raw_means=centers,
            )
        )
    return CompactGallery(gallery=Gallery(subjects_out), provenance=tuple(provenance))
