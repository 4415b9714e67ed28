"""Clustering and cross-image association of sonar detections.

Detections from each image are grouped with DBSCAN, clusters are paired
across the two images by their range statistics, and individual features are
then matched only inside paired clusters.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Literal, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .sonar_image import Detection, PolarImage

NOISE = -1

Mode = Literal["brute", "fast"]


@dataclass(frozen=True)
class DbscanParams:
    epsilon: float = 0.15
    min_samples: int = 4

    def __post_init__(self) -> None:
        if not self.epsilon > 0.0:
            raise ValueError("epsilon must be > 0")
        if self.min_samples < 1:
            raise ValueError("min_samples must be >= 1")


@dataclass(frozen=True)
class Cluster:
    label: int
    members: tuple[Detection, ...]

    def __post_init__(self) -> None:
        if not self.members:
            raise ValueError("a cluster needs at least one member")


@dataclass(frozen=True)
class ClusterDescriptor:
    mean_range: float
    range_variance: float
    r_min: float
    r_max: float

    def as_array(self) -> np.ndarray:
        return np.array([self.mean_range, self.range_variance, self.r_min, self.r_max])


@dataclass(frozen=True)
class FeatureDescriptor:
    """Normalised feature vector ``(r, gamma, mu_a, mu_b)``.

    For horizontal images ``mu_a`` is the kernel mean along the beam axis and
    ``mu_b`` along the range axis; vertical images swap the two.
    """

    range: float
    intensity: float
    mean_a: float
    mean_b: float

    def as_array(self) -> np.ndarray:
        return np.array([self.range, self.intensity, self.mean_a, self.mean_b])


@dataclass(frozen=True)
class Match:
    h: Detection
    v: Detection
    cost: float


# ---------------------------------------------------------------------------
# DBSCAN


def dbscan_labels(points: np.ndarray, epsilon: float, min_samples: int) -> np.ndarray:
    """Label each row of ``points`` with a cluster id, or ``NOISE``.

    A point is core when at least ``min_samples`` points (itself included)
    lie within ``epsilon``.  Clusters are the connected components of the
    core-point graph, numbered by their lowest core index.  A border point
    reachable from several clusters joins the lowest-numbered one, which is
    what index-order expansion would give.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return labels
    if pts.ndim == 1:
        pts = pts[:, None]
    edges = cKDTree(pts).query_pairs(epsilon, output_type="ndarray")
    a, b = edges[:, 0], edges[:, 1]
    degree = np.bincount(np.concatenate([a, b]), minlength=n) + 1
    core = degree >= min_samples
    if not core.any():
        return labels

    both = core[a] & core[b]
    graph = coo_matrix((np.ones(both.sum()), (a[both], b[both])), shape=(n, n))
    _, comp = connected_components(graph, directed=False)
    core_idx = np.flatnonzero(core)
    first = np.full(comp.max() + 1, n)
    np.minimum.at(first, comp[core_idx], core_idx)
    # rank components by their lowest core index
    order = np.full(n + 1, NOISE, dtype=np.int64)
    starts = np.unique(first[comp[core_idx]])
    order[starts] = np.arange(len(starts))
    labels[core_idx] = order[first[comp[core_idx]]]

    # border points: lowest-ranked adjacent cluster
    best = np.full(n, n)
    for src, dst in ((a, b), (b, a)):
        hit = core[src] & ~core[dst]
        np.minimum.at(best, dst[hit], first[comp[src[hit]]])
    border = best < n
    labels[border] = order[best[border]]
    return labels


def embed_detections(detections: Sequence[Detection]) -> np.ndarray:
    """Map detections to ``(range, range * angle)`` so distances are in metres."""
    if not detections:
        return np.zeros((0, 2))
    r = np.array([d.range for d in detections])
    a = np.array([d.angle for d in detections])
    return np.column_stack([r, r * a])


def dbscan(detections: Sequence[Detection], params: DbscanParams) -> tuple[list[Cluster], list[Detection]]:
    """Cluster detections; returns ``(clusters, noise)``."""
    labels = dbscan_labels(embed_detections(detections), params.epsilon, params.min_samples)
    groups: dict[int, list[Detection]] = {}
    noise: list[Detection] = []
    for det, lab in zip(detections, labels):
        if lab == NOISE:
            noise.append(det)
        else:
            groups.setdefault(int(lab), []).append(det)
    clusters = [Cluster(lab, tuple(members)) for lab, members in sorted(groups.items())]
    return clusters, noise


# ---------------------------------------------------------------------------
# cluster association


def cluster_descriptor(c: Cluster) -> ClusterDescriptor:
    r = np.array([d.range for d in c.members])
    mean = float(r.mean())
    return ClusterDescriptor(mean, float(np.mean((r - mean) ** 2)), float(r.min()), float(r.max()))


def associate_clusters(
    clusters_h: Sequence[Cluster],
    clusters_v: Sequence[Cluster],
    gate: float = 1.0,
) -> list[tuple[Cluster, Cluster, float]]:
    """Pair every horizontal cluster with its nearest vertical cluster.

    Several horizontal clusters may share one vertical cluster.  Pairs whose
    descriptor distance exceeds ``gate`` are dropped.  Ties go to the
    lower-index vertical cluster.
    """
    if not clusters_h or not clusters_v:
        return []
    dv = np.array([cluster_descriptor(c).as_array() for c in clusters_v])
    pairs = []
    for ch in clusters_h:
        costs = np.linalg.norm(dv - cluster_descriptor(ch).as_array(), axis=1)
        best = int(np.argmin(costs))
        if costs[best] <= gate:
            pairs.append((ch, clusters_v[best], float(costs[best])))
    return pairs


# ---------------------------------------------------------------------------
# feature descriptors


def _kernel_means(x: np.ndarray, rows: np.ndarray, cols: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean of up to ``k`` pixels either side of each cell, centre excluded.

    Returns (mean along columns, mean along rows).  Offsets that fall outside
    the raster are skipped.
    """
    n_rows, n_cols = x.shape
    sum_c = np.zeros(len(rows))
    cnt_c = np.zeros(len(rows))
    sum_r = np.zeros(len(rows))
    cnt_r = np.zeros(len(rows))
    for off in range(-k, k + 1):
        if off == 0:
            continue
        cc = cols + off
        ok = (cc >= 0) & (cc < n_cols)
        sum_c[ok] += x[rows[ok], cc[ok]]
        cnt_c += ok
        rr = rows + off
        ok = (rr >= 0) & (rr < n_rows)
        sum_r[ok] += x[rr[ok], cols[ok]]
        cnt_r += ok
    mean_c = np.divide(sum_c, cnt_c, out=np.zeros_like(sum_c), where=cnt_c > 0)
    mean_r = np.divide(sum_r, cnt_r, out=np.zeros_like(sum_r), where=cnt_r > 0)
    return mean_c, mean_r


def feature_descriptors(image: PolarImage, detections: Sequence[Detection], kernel_halfwidth: int = 2) -> np.ndarray:
    """Descriptor matrix ``(N, 4)`` for ``detections`` in ``image``.

    Intensity terms are min/max normalised over the whole image; a flat image
    maps them all to 0.  Range is divided by the image's ``max_range``.
    """
    if not detections:
        return np.zeros((0, 4))
    x = image.intensities
    lo, hi = float(x.min()), float(x.max())
    span = hi - lo
    rows = np.array([d.range_bin for d in detections], dtype=np.int64)
    cols = np.array([d.beam_index for d in detections], dtype=np.int64)
    along_beams, along_range = _kernel_means(x, rows, cols, kernel_halfwidth)

    def norm(v: np.ndarray) -> np.ndarray:
        if span <= 0.0:
            return np.zeros_like(v)
        return (v - lo) / span

    gamma = norm(x[rows, cols])
    r = np.array([d.range for d in detections]) / image.intrinsics.max_range
    if image.orientation == "horizontal":
        a, b = norm(along_beams), norm(along_range)
    else:
        a, b = norm(along_range), norm(along_beams)
    return np.column_stack([r, gamma, a, b])


def feature_descriptor(image: PolarImage, d: Detection, kernel_halfwidth: int = 2) -> FeatureDescriptor:
    return FeatureDescriptor(*(float(v) for v in feature_descriptors(image, [d], kernel_halfwidth)[0]))


# ---------------------------------------------------------------------------
# feature association


def _order_key(d: Detection) -> tuple[int, int]:
    return (d.range_bin, d.beam_index)


def _greedy_accept(h_idx: np.ndarray, v_idx: np.ndarray, costs: np.ndarray) -> list[tuple[int, int, float]]:
    """Accept edges lowest cost first, skipping any endpoint already used.

    Indices follow raster order on each side, so sorting on (cost, h, v)
    breaks ties by (h range_bin, h beam, v range_bin, v beam).
    """
    if len(costs) == 0:
        return []
    order = np.lexsort((v_idx, h_idx, costs))
    used_h: set[int] = set()
    used_v: set[int] = set()
    limit = min(len(np.unique(h_idx)), len(np.unique(v_idx)))
    accepted = []
    for hi, vi, c in zip(h_idx[order].tolist(), v_idx[order].tolist(), costs[order].tolist()):
        if hi in used_h or vi in used_v:
            continue
        used_h.add(hi)
        used_v.add(vi)
        accepted.append((hi, vi, c))
        if len(accepted) == limit:
            break
    return accepted


def _seed_tuple(seed: int | Sequence[int]) -> tuple[int, ...]:
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    return tuple(int(s) for s in seed)


def _sampled_best(
    hs: np.ndarray, cands: np.ndarray, draws: np.ndarray, desc_h: np.ndarray, desc_v: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Best sampled partner for each row of ``hs``; ties go to the lowest v index."""
    n = len(cands)
    if n <= draws.shape[1]:
        picks = np.broadcast_to(cands, (len(hs), n))
    else:
        picks = np.sort(cands[(draws[hs] * n).astype(np.int64)], axis=1)
    diff = desc_v[picks] - desc_h[hs, None, :]
    costs = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    best = np.argmin(costs, axis=1)
    rows = np.arange(len(hs))
    return picks[rows, best], costs[rows, best]


def associate_features(
    cluster_pairs: Iterable[tuple],
    image_h: PolarImage,
    image_v: PolarImage,
    mode: Mode = "brute",
    threshold: float = 0.1,
    sample_count: int = 10,
    seed: int | Sequence[int] = 0,
    kernel_halfwidth: int = 2,
    workers: int = 1,
) -> list[Match]:
    """Match features inside paired clusters.

    ``cluster_pairs`` holds ``(h_cluster, v_cluster, ...)`` tuples, where the
    vertical members are already expressed in the horizontal frame.

    Brute mode scores every pair inside each cluster pair and accepts edges
    greedily in ascending cost.  Fast mode draws ``sample_count`` candidates
    per horizontal feature (with replacement) and keeps the cheapest if its
    partner is still unclaimed, visiting features in raster order.  Draws
    come from row ``k`` of one seeded matrix, so feature ``k`` always sees
    the same samples however the scoring is split across ``workers``.

    Every accepted match costs strictly less than ``threshold``.
    """
    if mode not in ("brute", "fast"):
        raise ValueError(f"unknown mode {mode!r}")
    pairs = [(p[0], p[1]) for p in cluster_pairs]
    if not pairs:
        return []

    # distinct detections on each side, in raster order
    h_dets = sorted({d for ch, _ in pairs for d in ch.members}, key=_order_key)
    v_dets = sorted({d for _, cv in pairs for d in cv.members}, key=_order_key)
    h_pos = {d: i for i, d in enumerate(h_dets)}
    v_pos = {d: i for i, d in enumerate(v_dets)}
    desc_h = feature_descriptors(image_h, h_dets, kernel_halfwidth)
    desc_v = feature_descriptors(image_v, v_dets, kernel_halfwidth)

    # candidate v indices per h feature (union over its cluster pairs),
    # then h features grouped by identical candidate sets
    candidates: dict[int, set[int]] = {}
    for ch, cv in pairs:
        vs = {v_pos[d] for d in cv.members}
        for d in ch.members:
            candidates.setdefault(h_pos[d], set()).update(vs)
    groups: dict[frozenset, list[int]] = {}
    for hi, vs in candidates.items():
        groups.setdefault(frozenset(vs), []).append(hi)
    blocks = [
        (np.array(sorted(his), dtype=np.int64), np.array(sorted(vs), dtype=np.int64))
        for vs, his in groups.items()
    ]

    if mode == "brute":
        h_parts, v_parts, c_parts = [], [], []
        for hs, vv in blocks:
            diff = desc_h[hs, None, :] - desc_v[None, vv, :]
            cost = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
            ii, jj = np.nonzero(cost < threshold)
            h_parts.append(hs[ii])
            v_parts.append(vv[jj])
            c_parts.append(cost[ii, jj])
        accepted = _greedy_accept(np.concatenate(h_parts), np.concatenate(v_parts), np.concatenate(c_parts))
    else:
        draws = np.random.default_rng(list(_seed_tuple(seed))).random((len(h_dets), sample_count))
        jobs = [
            (chunk, vv)
            for hs, vv in blocks
            for chunk in np.array_split(hs, min(workers, len(hs)))
        ]

        def score(job):
            return job[0], *_sampled_best(job[0], job[1], draws, desc_h, desc_v)

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                scored = list(pool.map(score, jobs))
        else:
            scored = [score(job) for job in jobs]
        best_v = np.empty(len(h_dets), dtype=np.int64)
        best_c = np.full(len(h_dets), np.inf)
        for hs, vi, c in scored:
            best_v[hs] = vi
            best_c[hs] = c
        claimed: set[int] = set()
        accepted = []
        for hi in sorted(candidates):
            vi, c = int(best_v[hi]), float(best_c[hi])
            if c < threshold and vi not in claimed:
                claimed.add(vi)
                accepted.append((hi, vi, c))

    return [Match(h_dets[hi], v_dets[vi], cost) for hi, vi, cost in accepted]


def pseudo_cluster(detections: Sequence[Detection]) -> list[Cluster]:
    """All detections as one cluster, or nothing if there are none."""
    return [Cluster(0, tuple(detections))] if detections else []


def check_bijective(matches: Sequence[Match]) -> bool:
    hs = [m.h for m in matches]
    vs = [m.v for m in matches]
    return len(set(hs)) == len(hs) and len(set(vs)) == len(vs)

