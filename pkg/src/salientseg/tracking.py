"""Frame-to-frame feature matching and membership transfer."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .surf import Feature, descriptor_matrix, positions


@dataclass(frozen=True)
class Match:
    prev: int
    curr: int
    distance: float


def match(prev: list[Feature], curr: list[Feature], radius: float = 60.0, threshold: float = 0.25,
          centers: np.ndarray | None = None) -> list[Match]:
    """Descriptor matching restricted to a search circle.

    Each previous feature proposes the current feature of smallest descriptor
    distance among those strictly within ``radius`` pixels of its search
    centre (its own position unless ``centers`` gives predicted ones).  A
    proposal counts only if that distance is below ``threshold``; proposals
    are then accepted greedily by ascending distance so that every current
    feature is used at most once.
    """
    if not prev or not curr:
        return []
    pc = positions(prev) if centers is None else np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    cc = positions(curr)
    dp, dc = descriptor_matrix(prev), descriptor_matrix(curr)
    proposals = []
    for i in range(len(prev)):
        near = np.flatnonzero(np.sum((cc - pc[i]) ** 2, axis=1) < radius * radius)
        if near.size == 0:
            continue
        dist = np.linalg.norm(dc[near] - dp[i], axis=1)
        j = int(np.argmin(dist))  # first index on ties
        if dist[j] < threshold:
            proposals.append((float(dist[j]), i, int(near[j])))
    proposals.sort()
    taken = set()
    out = []
    for d, i, j in proposals:
        if j in taken:
            continue
        taken.add(j)
        out.append(Match(i, j, d))
    return out


def transfer_memberships(matches: list[Match], prev: list[Feature], curr: list[Feature]) -> list[Feature]:
    """Copy of ``curr`` where matched features inherit the previous membership."""
    out = [replace(f) for f in curr]
    for m in matches:
        src = prev[m.prev].membership
        if src is not None:
            out[m.curr] = replace(out[m.curr], membership=np.array(src, dtype=np.float64))
    return out


def matched_points(matches: list[Match], prev: list[Feature], curr: list[Feature]) -> tuple[np.ndarray, np.ndarray]:
    p1 = np.array([[prev[m.prev].point.x, prev[m.prev].point.y] for m in matches], dtype=np.float64)
    p2 = np.array([[curr[m.curr].point.x, curr[m.curr].point.y] for m in matches], dtype=np.float64)
    return p1.reshape(-1, 2), p2.reshape(-1, 2)
