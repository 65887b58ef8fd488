"""Hand skeleton graph construction, neighborhood partition, adjacency normalization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

JOINTS_PER_HAND = 21
FINGERS = 5
JOINTS_PER_FINGER = 4


@dataclass(frozen=True)
class HandGraph:
    """Tree-structured hand skeleton: wrist root plus 4-joint chains per finger."""

    num_vertices: int
    edges: tuple  # unordered (u, v) pairs, u < v
    root: int
    hop_distance: tuple  # per-vertex hop count from root

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_vertices, self.num_vertices))
        for u, v in self.edges:
            a[u, v] = 1.0
            a[v, u] = 1.0
        return a


def _single_hand_edges(offset: int = 0):
    edges = []
    for f in range(FINGERS):
        base = offset + 1 + JOINTS_PER_FINGER * f
        edges.append((offset, base))
        for j in range(JOINTS_PER_FINGER - 1):
            edges.append((base + j, base + j + 1))
    return edges


def build_hand_graph(hands: str = "one") -> HandGraph:
    """Build the 21-vertex hand tree, or two disjoint replicas for ``hands="two"``.

    Vertex order: wrist (0), then each finger base-to-tip. The second hand is
    an identical copy with indices offset by 21 (block-diagonal adjacency).
    """
    if hands not in ("one", "two"):
        raise ValueError(f"hands must be 'one' or 'two', got {hands!r}")
    n_hands = 1 if hands == "one" else 2
    num_vertices = JOINTS_PER_HAND * n_hands
    edges = []
    for h in range(n_hands):
        edges.extend(_single_hand_edges(offset=JOINTS_PER_HAND * h))

    hop = np.zeros(num_vertices, dtype=int)
    for h in range(n_hands):
        off = JOINTS_PER_HAND * h
        for f in range(FINGERS):
            for j in range(JOINTS_PER_FINGER):
                hop[off + 1 + JOINTS_PER_FINGER * f + j] = j + 1
    return HandGraph(
        num_vertices=num_vertices,
        edges=tuple(edges),
        root=0,
        hop_distance=tuple(int(h) for h in hop),
    )


def partition_subsets(g: HandGraph) -> list[np.ndarray]:
    """Split each vertex neighborhood into self / toward-root / away-from-root.

    Returns three raw V x V matrices: identity, centripetal (entry (i, j) = 1
    when j is a neighbor of i closer to the root) and centrifugal (its
    transpose over a tree).
    """
    v = g.num_vertices
    hop = np.asarray(g.hop_distance)
    self_m = np.eye(v)
    toward = np.zeros((v, v))
    away = np.zeros((v, v))
    for a, b in g.edges:
        lo, hi = (a, b) if hop[a] < hop[b] else (b, a)
        # hi's neighbor lo is closer to the root
        toward[hi, lo] = 1.0
        away[lo, hi] = 1.0
    return [self_m, toward, away]


def normalize_subset(raw: np.ndarray, sigma: float = 0.001) -> np.ndarray:
    """Symmetric degree normalization D^(-1/2) raw D^(-1/2), row sums padded by sigma.

    The sigma pad keeps rows with no connections finite. sigma=0 is allowed;
    zero rows then normalize to zero instead of NaN.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2 or raw.shape[0] != raw.shape[1]:
        raise ValueError(f"raw must be square, got shape {raw.shape}")
    if np.any(raw < 0):
        raise ValueError("raw adjacency entries must be nonnegative")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    lam = raw.sum(axis=1) + sigma
    inv_sqrt = np.where(lam > 0, 1.0 / np.sqrt(np.maximum(lam, 1e-300)), 0.0)
    return inv_sqrt[:, None] * raw * inv_sqrt[None, :]


@dataclass(frozen=True)
class SubsetAdjacency:
    """Three normalized subset matrices ready to drive spatial graph layers."""

    matrices: np.ndarray  # (3, V, V)
    sigma: float

    @property
    def num_vertices(self) -> int:
        return self.matrices.shape[-1]


def build_subset_adjacency(g: HandGraph, sigma: float = 0.001) -> SubsetAdjacency:
    raws = partition_subsets(g)
    normed = np.stack([normalize_subset(r, sigma) for r in raws])
    return SubsetAdjacency(matrices=normed, sigma=sigma)
