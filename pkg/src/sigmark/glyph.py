"""Topology-preserving structural augmentation of signature glyphs.

Pipeline: preprocess -> skeletonize -> simplify_keypoints -> sample_control_points
-> perturb_and_clamp -> tps_warp, composed by :func:`augment`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from skimage.filters import threshold_otsu

from .errors import DegenerateControlPoints, EmptyGlyph, InsufficientKeypoints


# ---------------------------------------------------------------------------
# data containers
# ---------------------------------------------------------------------------

@dataclass
class SkeletonGraph:
    """One-pixel-wide stroke skeleton with its branch decomposition.

    ``points`` is the set of (x, y) skeleton pixels; ``branches`` are ordered
    polylines between junctions (8-neighbour degree >= 3) and endpoints.
    """

    points: set = field(default_factory=set)
    branches: list = field(default_factory=list)
    shape: tuple = (0, 0)

    def __len__(self):
        return len(self.points)


@dataclass
class KeypointSet:
    points: list          # (x, y) float pairs, branch order preserved
    epsilon: float

    def __len__(self):
        return len(self.points)


@dataclass
class ControlPointPair:
    source: np.ndarray    # (n, 2) float, columns x, y
    target: np.ndarray    # (n, 2) float, clamped to [0, W] x [0, H]
    sigma: float
    k_trunc: float


@dataclass(frozen=True)
class AugmentParams:
    epsilon: float = 2.0
    n_control: int = 16
    sigma: float = 1.0
    sigma_scale: float = 4.0   # displacement multiplier; 1.0 for the raw law
    k_trunc: float = 5.0
    open_radius: int = 1
    bending_reg: float = 0.0


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

def to_grayscale(image):
    """H x W (x C) array in [0,1] -> H x W grayscale."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    if image.shape[2] == 1:
        return image[:, :, 0]
    # ITU-R 601 luma; alpha channel (if any) is ignored
    return (0.299 * image[:, :, 0] + 0.587 * image[:, :, 1]
            + 0.114 * image[:, :, 2])


def _disk(radius):
    r = int(radius)
    y, x = np.ogrid[-r:r + 1, -r:r + 1]
    return (x * x + y * y) <= r * r


def _erode(mask, selem):
    return _morph(mask, selem, erode=True)


def _dilate(mask, selem):
    return _morph(mask, selem, erode=False)


def _morph(mask, selem, erode):
    rh, rw = selem.shape[0] // 2, selem.shape[1] // 2
    pad = np.pad(mask, ((rh, rh), (rw, rw)),
                 constant_values=1 if erode else 0)
    out = np.ones_like(mask) if erode else np.zeros_like(mask)
    for dy in range(selem.shape[0]):
        for dx in range(selem.shape[1]):
            if not selem[dy, dx]:
                continue
            view = pad[dy:dy + mask.shape[0], dx:dx + mask.shape[1]]
            out = (out & view) if erode else (out | view)
    return out


def preprocess(image, open_radius=1):
    """Grayscale -> Otsu threshold -> morphological opening; 1 = ink stroke."""
    gray = to_grayscale(image)
    if gray.min() == gray.max():
        raise EmptyGlyph("image has no contrast, no strokes found")
    thr = threshold_otsu(gray)
    mask = (gray < thr).astype(np.uint8)   # ink is dark on light background
    if open_radius > 0:
        selem = _disk(open_radius)
        mask = _dilate(_erode(mask, selem), selem)
    if not mask.any():
        raise EmptyGlyph("foreground vanished after opening")
    return mask


# ---------------------------------------------------------------------------
# Zhang-Suen thinning
# ---------------------------------------------------------------------------

def _neighbours(padded):
    """P2..P9 clockwise from north, as shifted views of a padded mask."""
    h, w = padded.shape[0] - 2, padded.shape[1] - 2
    p = padded
    return [p[0:h, 1:w + 1],      # P2 north
            p[0:h, 2:w + 2],      # P3 north-east
            p[1:h + 1, 2:w + 2],  # P4 east
            p[2:h + 2, 2:w + 2],  # P5 south-east
            p[2:h + 2, 1:w + 1],  # P6 south
            p[2:h + 2, 0:w],      # P7 south-west
            p[1:h + 1, 0:w],      # P8 west
            p[0:h, 0:w]]          # P9 north-west


def _thin_pass(mask, first_subiter):
    padded = np.pad(mask, 1)
    nb = _neighbours(padded)
    b = sum(nb)
    ring = nb + [nb[0]]
    a = sum(((ring[i] == 0) & (ring[i + 1] == 1)).astype(np.uint8)
            for i in range(8))
    p2, p4, p6, p8 = nb[0], nb[2], nb[4], nb[6]
    if first_subiter:
        cond = (p2 * p4 * p6 == 0) & (p4 * p6 * p8 == 0)
    else:
        cond = (p2 * p4 * p8 == 0) & (p2 * p6 * p8 == 0)
    deletable = (mask == 1) & (b >= 2) & (b <= 6) & (a == 1) & cond
    return deletable


def skeletonize(binary):
    """Two-subiteration thinning to fixpoint; returns a SkeletonGraph."""
    mask = np.asarray(binary, dtype=np.uint8).copy()
    while True:
        d1 = _thin_pass(mask, True)
        mask[d1] = 0
        d2 = _thin_pass(mask, False)
        mask[d2] = 0
        if not (d1.any() or d2.any()):
            break
    return _build_graph(mask)


def thinning_fixpoint(graph):
    """True when one more thinning pass deletes nothing."""
    mask = np.zeros(graph.shape, dtype=np.uint8)
    for x, y in graph.points:
        mask[y, x] = 1
    return not (_thin_pass(mask, True).any() or _thin_pass(mask, False).any())


_OFFSETS = [(-1, -1), (0, -1), (1, -1), (-1, 0),
            (1, 0), (-1, 1), (0, 1), (1, 1)]


def _build_graph(mask):
    points = {(int(x), int(y)) for y, x in zip(*np.nonzero(mask))}
    graph = SkeletonGraph(points=points, shape=mask.shape)
    if not points:
        return graph

    def neighbours(p):
        """8-neighbours, dropping a diagonal when an orthogonal step to the
        same cell exists (avoids double-counted adjacency on thin skeletons)."""
        out = []
        for dx, dy in _OFFSETS:
            q = (p[0] + dx, p[1] + dy)
            if q not in points:
                continue
            if dx and dy:
                if (p[0] + dx, p[1]) in points or (p[0], p[1] + dy) in points:
                    continue
            out.append(q)
        return out

    degree = {p: len(neighbours(p)) for p in points}
    nodes = {p for p, d in degree.items() if d != 2}
    visited_edges = set()
    branches = []

    def walk(start, nxt):
        line = [start, nxt]
        prev, cur = start, nxt
        while cur not in nodes:
            succ = [q for q in neighbours(cur) if q != prev]
            if not succ:
                break
            prev, cur = cur, succ[0]
            if cur in line and cur not in nodes:
                break
            line.append(cur)
        return line

    for node in sorted(nodes):
        for nxt in neighbours(node):
            edge = frozenset((node, nxt))
            if edge in visited_edges:
                continue
            line = walk(node, nxt)
            for a, b in zip(line, line[1:]):
                visited_edges.add(frozenset((a, b)))
            branches.append(line)

    # pure cycles have no nodes; pick an arbitrary start per component
    covered = {p for line in branches for p in line}
    remaining = sorted(points - covered)
    while remaining:
        start = remaining[0]
        succ = neighbours(start)
        if succ:
            line = walk(start, succ[0])
            if line[-1] != start:
                line.append(start)
        else:
            line = [start]
        branches.append(line)
        covered.update(line)
        remaining = sorted(points - covered)

    graph.branches = branches
    return graph


# ---------------------------------------------------------------------------
# keypoint simplification (Ramer-Douglas-Peucker)
# ---------------------------------------------------------------------------

def _point_segment_distance(p, a, b):
    p, a, b = (np.asarray(v, dtype=np.float64) for v in (p, a, b))
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return float(np.hypot(*(p - a)))
    t = float((p - a) @ ab) / denom
    t = min(1.0, max(0.0, t))
    return float(np.hypot(*(p - a - t * ab)))


def rdp(points, epsilon):
    """Iterative Ramer-Douglas-Peucker on an ordered polyline."""
    points = [tuple(map(float, p)) for p in points]
    if len(points) < 3:
        return points
    keep = [False] * len(points)
    keep[0] = keep[-1] = True
    stack = [(0, len(points) - 1)]
    while stack:
        lo, hi = stack.pop()
        if hi - lo < 2:
            continue
        dists = [_point_segment_distance(points[i], points[lo], points[hi])
                 for i in range(lo + 1, hi)]
        imax = int(np.argmax(dists))
        if dists[imax] > epsilon:
            split = lo + 1 + imax
            keep[split] = True
            stack.append((lo, split))
            stack.append((split, hi))
    return [p for p, k in zip(points, keep) if k]


def simplify_keypoints(skeleton, epsilon):
    """Per-branch RDP; junctions and endpoints are always retained."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    kept = []
    seen = set()
    for branch in skeleton.branches:
        for p in rdp(branch, epsilon):
            if p not in seen:
                seen.add(p)
                kept.append(p)
    return KeypointSet(points=kept, epsilon=epsilon)


# ---------------------------------------------------------------------------
# control points
# ---------------------------------------------------------------------------

def sample_control_points(keypoints, n, rng):
    if n > len(keypoints):
        raise InsufficientKeypoints(
            f"requested {n} control points from {len(keypoints)} keypoints")
    if n < 3:
        raise ValueError("need at least 3 control points")
    idx = rng.choice(len(keypoints), size=n, replace=False)
    return np.asarray([keypoints.points[i] for i in idx], dtype=np.float64)


def _truncated_normal(rng, sigma, k, size):
    """Exact rejection sampling from N(0, sigma^2) restricted to [-k s, k s]."""
    if sigma == 0:
        return np.zeros(size)
    out = np.empty(size)
    filled = 0
    while filled < size:
        draw = rng.normal(0.0, sigma, size=size)
        good = draw[np.abs(draw) <= k * sigma]
        take = min(size - filled, good.size)
        out[filled:filled + take] = good[:take]
        filled += take
    return out


def perturb_and_clamp(control, sigma, k_trunc, width, height, rng):
    """Truncated-Gaussian jitter on each axis, clamped to [0,W] x [0,H]."""
    if sigma < 0 or k_trunc <= 0:
        raise ValueError("sigma >= 0 and k_trunc > 0 required")
    control = np.asarray(control, dtype=np.float64)
    n = control.shape[0]
    dx = _truncated_normal(rng, sigma, k_trunc, n)
    dy = _truncated_normal(rng, sigma, k_trunc, n)
    target = control + np.stack([dx, dy], axis=1)
    target[:, 0] = np.clip(target[:, 0], 0.0, width)
    target[:, 1] = np.clip(target[:, 1], 0.0, height)
    return ControlPointPair(source=control, target=target,
                            sigma=sigma, k_trunc=k_trunc)


# ---------------------------------------------------------------------------
# thin plate spline warp
# ---------------------------------------------------------------------------

def _tps_kernel(r2):
    out = np.zeros_like(r2)
    nz = r2 > 0
    out[nz] = 0.5 * r2[nz] * np.log(r2[nz])
    return out


def tps_fit(source, target, bending_reg=0.0):
    """Fit f with f(source_i) = target_i; returns (weights, affine, source)."""
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    n = source.shape[0]
    if n < 3 or np.linalg.matrix_rank(
            np.column_stack([np.ones(n), source])) < 3:
        raise DegenerateControlPoints("control points are collinear")
    d2 = ((source[:, None, :] - source[None, :, :]) ** 2).sum(-1)
    K = _tps_kernel(d2) + bending_reg * np.eye(n)
    P = np.column_stack([np.ones(n), source])
    A = np.zeros((n + 3, n + 3))
    A[:n, :n] = K
    A[:n, n:] = P
    A[n:, :n] = P.T
    rhs = np.zeros((n + 3, 2))
    rhs[:n] = target
    try:
        sol = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise DegenerateControlPoints(str(exc)) from exc
    return sol[:n], sol[n:], source


def tps_eval(fit, points):
    weights, affine, source = fit
    points = np.asarray(points, dtype=np.float64)
    d2 = ((points[:, None, :] - source[None, :, :]) ** 2).sum(-1)
    U = _tps_kernel(d2)
    P = np.column_stack([np.ones(points.shape[0]), points])
    return U @ weights + P @ affine


def _bilinear(image, xs, ys):
    h, w = image.shape[:2]
    # snap near-integer coordinates so identity/translation warps stay exact
    xs = np.where(np.abs(xs - np.round(xs)) < 1e-6, np.round(xs), xs)
    ys = np.where(np.abs(ys - np.round(ys)) < 1e-6, np.round(ys), ys)
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    fx = xs - x0
    fy = ys - y0
    flat = image.reshape(h, w, -1)
    out = np.zeros(xs.shape + (flat.shape[2],))
    for dy in (0, 1):
        for dx in (0, 1):
            wgt = ((fx if dx else 1 - fx) * (fy if dy else 1 - fy))[..., None]
            xi = np.clip(x0 + dx, 0, w - 1)
            yi = np.clip(y0 + dy, 0, h - 1)
            inside = ((x0 + dx >= 0) & (x0 + dx <= w - 1)
                      & (y0 + dy >= 0) & (y0 + dy <= h - 1))[..., None]
            out += wgt * np.where(inside, flat[yi, xi], 1.0)  # white outside
    return out.reshape(xs.shape + image.shape[2:]) if image.ndim == 3 \
        else out[..., 0]


def tps_warp(image, pair, bending_reg=0.0):
    """Warp so that content at each source point lands on its target point.

    The resampling map is the inverse spline (target -> source); with zero
    regularization the fitted spline interpolates the pairs exactly.
    """
    image = np.asarray(image, dtype=np.float64)
    if np.array_equal(pair.source, pair.target):
        return image.copy()
    h, w = image.shape[:2]
    fit = tps_fit(pair.target, pair.source, bending_reg)
    ys, xs = np.mgrid[0:h, 0:w]
    grid = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)
    src = tps_eval(fit, grid)
    warped = _bilinear(image, src[:, 0].reshape(h, w), src[:, 1].reshape(h, w))
    return np.clip(warped, 0.0, 1.0)


# ---------------------------------------------------------------------------
# full augmentation
# ---------------------------------------------------------------------------

def augment(image, params: AugmentParams, rng):
    """Topology-preserving random warp of one signature image."""
    mask = preprocess(image, params.open_radius)
    skeleton = skeletonize(mask)
    keypoints = simplify_keypoints(skeleton, params.epsilon)
    n = min(params.n_control, len(keypoints))
    control = sample_control_points(keypoints, n, rng)
    h, w = mask.shape
    pair = perturb_and_clamp(control, params.sigma * params.sigma_scale,
                             params.k_trunc, w, h, rng)
    return tps_warp(image, pair, params.bending_reg)
