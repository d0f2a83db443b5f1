"""Two-view epipolar geometry for a single calibrated camera.

Points are ``(n, 2)`` pixel arrays.  The fundamental matrix satisfies
``m2^T F m1 = 0`` and the essential matrix is ``K^T F K`` (same intrinsics in
both frames).  Projection matrices follow ``P1 = K [I | 0]``,
``P2 = K [R | t]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MIN_POINTS = 8
# singular-value ratio below which the linear system counts as rank deficient
RANK_TOL = 1e-10


class GeometryError(ValueError):
    pass


def homogeneous(pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    return np.hstack([pts, np.ones((len(pts), 1))])


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def hartley_normalize(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Translate to the centroid and scale to mean distance sqrt(2)."""
    pts = np.asarray(pts, dtype=np.float64)
    c = pts.mean(axis=0)
    mean_dist = np.mean(np.linalg.norm(pts - c, axis=1))
    if mean_dist == 0.0:
        raise GeometryError("all points coincide")
    s = math.sqrt(2.0) / mean_dist
    T = np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])
    return homogeneous(pts) @ T.T, T


def _unit_frobenius(F: np.ndarray) -> np.ndarray:
    F = F / np.linalg.norm(F)
    # deterministic sign: largest-magnitude entry positive
    return F * np.sign(F.flat[np.argmax(np.abs(F))])


def eight_point(p1: np.ndarray, p2: np.ndarray, allow_degenerate: bool = False) -> np.ndarray:
    """Normalized linear estimate of F from >= 8 correspondences, rank 2, unit norm.

    A rank-deficient design matrix (e.g. all points on a plane, or no
    motion) raises unless ``allow_degenerate``; in that case one member of
    the solution family is returned.
    """
    p1 = np.asarray(p1, dtype=np.float64).reshape(-1, 2)
    p2 = np.asarray(p2, dtype=np.float64).reshape(-1, 2)
    if len(p1) != len(p2):
        raise GeometryError("point arrays differ in length")
    if len(p1) < MIN_POINTS:
        raise GeometryError(f"need at least {MIN_POINTS} correspondences, got {len(p1)}")
    h1, T1 = hartley_normalize(p1)
    h2, T2 = hartley_normalize(p2)
    A = np.einsum("ni,nj->nij", h2, h1).reshape(-1, 9)
    _, s, vt = np.linalg.svd(A)
    if not allow_degenerate and s[MIN_POINTS - 1] <= RANK_TOL * s[0]:
        raise GeometryError("degenerate configuration: design matrix has rank < 8")
    F = vt[-1].reshape(3, 3)
    u, sf, vtf = np.linalg.svd(F)
    F = u @ np.diag([sf[0], sf[1], 0.0]) @ vtf
    return _unit_frobenius(T2.T @ F @ T1)


def algebraic_residual(F: np.ndarray, p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    return np.einsum("ni,ij,nj->n", homogeneous(p2), F, homogeneous(p1))


def sampson_distance(F: np.ndarray, p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    """First-order geometric epipolar error in pixels."""
    h1, h2 = homogeneous(p1), homogeneous(p2)
    Fm1 = h1 @ F.T
    Ftm2 = h2 @ F
    num = np.einsum("ni,ni->n", h2, Fm1) ** 2
    den = Fm1[:, 0] ** 2 + Fm1[:, 1] ** 2 + Ftm2[:, 0] ** 2 + Ftm2[:, 1] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.sqrt(num / den)
    return np.where(den > 0, d, np.inf)


def point_line_distance(F: np.ndarray, p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    """Distance from each ``p2`` to the epipolar line ``F p1``."""
    lines = homogeneous(p1) @ F.T
    return np.abs(np.einsum("ni,ni->n", homogeneous(p2), lines)) / np.hypot(lines[:, 0], lines[:, 1])


@dataclass
class RansacResult:
    F: np.ndarray
    inliers: np.ndarray  # boolean mask
    iterations: int

    @property
    def n_inliers(self) -> int:
        return int(self.inliers.sum())


def ransac_iterations(inlier_fraction: float, confidence: float, sample: int = MIN_POINTS) -> float:
    good = inlier_fraction ** sample
    if good >= 1.0:
        return 1.0
    if good <= 0.0:
        return math.inf
    return math.log(1.0 - confidence) / math.log(1.0 - good)


def ransac_f(p1: np.ndarray, p2: np.ndarray, tol: float = 1.0, confidence: float = 0.99,
             max_iters: int = 2000, rng=None, allow_degenerate: bool = False) -> RansacResult:
    """Robust F: most-supported 8-point model, refitted on its consensus set.

    The refit is repeated until the inlier set stops changing (at most a few
    rounds).  Inliers are correspondences with Sampson distance below ``tol``.
    Degenerate samples are skipped unless ``allow_degenerate``, which is
    what an inlier count for near-identical frames needs.
    """
    p1 = np.asarray(p1, dtype=np.float64).reshape(-1, 2)
    p2 = np.asarray(p2, dtype=np.float64).reshape(-1, 2)
    n = len(p1)
    if n < MIN_POINTS:
        raise GeometryError(f"need at least {MIN_POINTS} matches, got {n}")
    rng = np.random.default_rng(rng)
    best_mask, best_key = None, None
    needed, it = max_iters, 0
    while it < min(needed, max_iters):
        it += 1
        sample = rng.choice(n, MIN_POINTS, replace=False)
        try:
            F = eight_point(p1[sample], p2[sample], allow_degenerate)
        except GeometryError:
            continue
        d = sampson_distance(F, p1, p2)
        mask = d < tol
        key = (int(mask.sum()), -float(np.sum(np.minimum(d, tol))))
        if best_key is None or key > best_key:
            best_key, best_mask = key, mask
            needed = ransac_iterations(key[0] / n, confidence)
    if best_mask is None or best_mask.sum() < MIN_POINTS:
        raise GeometryError("RANSAC found no model with at least 8 inliers")
    mask = best_mask
    F = None
    for _ in range(5):
        try:
            F_new = eight_point(p1[mask], p2[mask], allow_degenerate)
        except GeometryError:
            break
        new_mask = sampson_distance(F_new, p1, p2) < tol
        if new_mask.sum() < MIN_POINTS:
            break
        F = F_new
        if np.array_equal(new_mask, mask):
            break
        mask = new_mask
    if F is None:
        raise GeometryError("consensus set is degenerate")
    return RansacResult(F, mask, it)


def inlier_ratio(n_inliers: int, detected1: int, detected2: int) -> float:
    """Inliers relative to the mean number of detected features of the pair."""
    mean = 0.5 * (detected1 + detected2)
    return n_inliers / mean if mean > 0 else 0.0


def essential(F: np.ndarray, K: np.ndarray) -> np.ndarray:
    return K.T @ F @ K


def balance_essential(E: np.ndarray) -> np.ndarray:
    """Project onto the essential manifold: singular values (s, s, 0)."""
    u, s, vt = np.linalg.svd(E)
    m = 0.5 * (s[0] + s[1])
    return u @ np.diag([m, m, 0.0]) @ vt


def camera_matrix(K: np.ndarray, R: np.ndarray | None = None, t: np.ndarray | None = None) -> np.ndarray:
    R = np.eye(3) if R is None else R
    t = np.zeros(3) if t is None else np.asarray(t, dtype=np.float64)
    return K @ np.hstack([R, t.reshape(3, 1)])


def triangulate(P1: np.ndarray, P2: np.ndarray, p1: np.ndarray, p2: np.ndarray,
                eps: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Linear (DLT) triangulation.

    Returns the ``(n, 3)`` points and a mask that is False where the point
    is at infinity or not determined (e.g. it lies on the baseline).
    """
    p1 = np.asarray(p1, dtype=np.float64).reshape(-1, 2)
    p2 = np.asarray(p2, dtype=np.float64).reshape(-1, 2)
    A = np.stack([
        p1[:, 0:1] * P1[2] - P1[0],
        p1[:, 1:2] * P1[2] - P1[1],
        p2[:, 0:1] * P2[2] - P2[0],
        p2[:, 1:2] * P2[2] - P2[1],
    ], axis=1)
    # row-normalize so the rank test is scale free
    A = A / np.linalg.norm(A, axis=2, keepdims=True)
    _, s, vt = np.linalg.svd(A)
    X = vt[:, -1, :]
    w = X[:, 3]
    ok = (np.abs(w) > eps * np.linalg.norm(X, axis=1)) & (s[:, 2] > 1e-9 * s[:, 0])
    with np.errstate(divide="ignore", invalid="ignore"):
        pts = X[:, :3] / w[:, None]
    pts[~ok] = np.nan
    return pts, ok


def project(P: np.ndarray, X: np.ndarray, eps: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Image points of 3-D points; mask is False for w ~ 0 or points behind the camera."""
    Xh = np.hstack([np.asarray(X, dtype=np.float64).reshape(-1, 3), np.ones((len(X), 1))])
    m = Xh @ P.T
    w = m[:, 2]
    ok = w > eps * np.linalg.norm(m, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        pts = m[:, :2] / w[:, None]
    return pts, ok


def depth(R: np.ndarray, t: np.ndarray, X: np.ndarray) -> np.ndarray:
    return X @ R[2] + t[2]


_W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


def decomposition_candidates(E: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    u, _, vt = np.linalg.svd(E)
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(vt) < 0:
        vt = -vt
    t = u[:, 2]
    r1, r2 = u @ _W @ vt, u @ _W.T @ vt
    return [(r1, t), (r1, -t), (r2, t), (r2, -t)]


def decompose(E: np.ndarray, p1: np.ndarray, p2: np.ndarray, K: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Relative pose (R, unit t) of the second camera, chosen by cheirality.

    The candidate placing a strict majority of the correspondences in front
    of both cameras wins; ties raise :class:`GeometryError`.
    """
    E = balance_essential(E)
    P1 = camera_matrix(K)
    votes = []
    for R, t in decomposition_candidates(E):
        X, ok = triangulate(P1, camera_matrix(K, R, t), p1, p2)
        front = ok & (X[:, 2] > 0) & (depth(R, t, np.nan_to_num(X)) > 0)
        votes.append(int(front.sum()))
    order = np.argsort(votes)[::-1]
    n = len(np.asarray(p1).reshape(-1, 2))
    best = votes[order[0]]
    if best <= n / 2 or best == votes[order[1]]:
        raise GeometryError(f"cheirality test inconclusive (votes {votes})")
    R, t = decomposition_candidates(E)[order[0]]
    return R, t / np.linalg.norm(t)


def rotation_angle(Ra: np.ndarray, Rb: np.ndarray) -> float:
    """Geodesic distance between two rotations, radians."""
    M = Ra.T @ Rb
    c = (np.trace(M) - 1.0) / 2.0
    s = 0.5 * np.linalg.norm([M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1]])
    return float(math.atan2(s, c))


def direction_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Angle between two 3-vectors, radians (sign sensitive)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    # atan2 form keeps precision near zero
    return float(math.atan2(np.linalg.norm(np.cross(a, b)), a @ b))


@dataclass
class TwoViewGeometry:
    F: np.ndarray
    E: np.ndarray
    R: np.ndarray
    t: np.ndarray
    inliers: np.ndarray
    P1: np.ndarray
    P2: np.ndarray
    points: np.ndarray  # triangulated inliers, (n_inliers, 3)
    valid: np.ndarray


def two_view(p1: np.ndarray, p2: np.ndarray, K: np.ndarray, tol: float = 1.0,
             confidence: float = 0.99, max_iters: int = 2000, rng=None) -> TwoViewGeometry:
    """RANSAC F, essential matrix, pose by cheirality, triangulated inliers."""
    res = ransac_f(p1, p2, tol, confidence, max_iters, rng)
    E = balance_essential(essential(res.F, K))
    q1, q2 = np.asarray(p1)[res.inliers], np.asarray(p2)[res.inliers]
    R, t = decompose(E, q1, q2, K)
    P1, P2 = camera_matrix(K), camera_matrix(K, R, t)
    X, ok = triangulate(P1, P2, q1, q2)
    return TwoViewGeometry(res.F, E, R, t, res.inliers, P1, P2, X, ok)
