"""Electrode adjacency graphs and the Laplacian-based spatial smoothness penalty."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidEdgeError, InvalidInputError, ShapeError

__all__ = [
    "ElectrodeGraph",
    "graph_from_edge_list",
    "graph_from_positions",
    "complete_graph",
    "smoothness_penalty",
    "load_edge_list",
    "save_edge_list",
    "preset_graph",
    "PRESET_NAMES",
    "ten_twenty_17_montage",
]


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ElectrodeGraph:
    """Undirected, unweighted electrode graph with cached matrix forms.

    Edges are stored as 1-based (i, j) pairs with i < j. adjacency_A,
    degree_D and laplacian_L = D - A are integer-valued so Laplacian row sums
    are exactly zero.
    """

    node_count: int
    edges: tuple[tuple[int, int], ...]
    adjacency_A: np.ndarray
    degree_D: np.ndarray
    laplacian_L: np.ndarray

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def laplacian_float(self) -> np.ndarray:
        return self.laplacian_L.astype(np.float64)

    def connected_components(self) -> list[list[int]]:
        """1-based node lists, one per connected component."""
        seen = [False] * self.node_count
        adj = self.adjacency_A
        comps = []
        for start in range(self.node_count):
            if seen[start]:
                continue
            stack, comp = [start], []
            seen[start] = True
            while stack:
                u = stack.pop()
                comp.append(u + 1)
                for v in np.flatnonzero(adj[u]):
                    if not seen[v]:
                        seen[v] = True
                        stack.append(int(v))
            comps.append(sorted(comp))
        return comps


def _build(node_count: int, edges) -> ElectrodeGraph:
    if node_count < 1:
        raise InvalidInputError(f"node_count must be >= 1, got {node_count}")
    norm = set()
    for i, j in edges:
        i, j = int(i), int(j)
        if i == j:
            raise InvalidEdgeError(f"self-loop at node {i}")
        if not (1 <= i <= node_count and 1 <= j <= node_count):
            raise InvalidEdgeError(f"edge ({i},{j}) outside [1, {node_count}]")
        norm.add((min(i, j), max(i, j)))
    edge_tuple = tuple(sorted(norm))
    A = np.zeros((node_count, node_count), dtype=np.int64)
    for i, j in edge_tuple:
        A[i - 1, j - 1] = 1
        A[j - 1, i - 1] = 1
    D = np.diag(A.sum(axis=1))
    return ElectrodeGraph(node_count, edge_tuple, _freeze(A), _freeze(D), _freeze(D - A))


def graph_from_edge_list(node_count: int, edges) -> ElectrodeGraph:
    """Build a graph from 1-based index pairs; duplicates are deduplicated."""
    return _build(node_count, edges)


def graph_from_positions(positions, threshold_distance: float) -> ElectrodeGraph:
    """Connect every pair of electrodes within threshold_distance (Euclidean)."""
    pos = np.asarray(positions, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[0] < 1:
        raise InvalidInputError("positions must be a non-empty (n, d) array")
    if not np.all(np.isfinite(pos)):
        raise InvalidInputError("positions must be finite")
    if not threshold_distance > 0:
        raise InvalidInputError(f"threshold_distance must be > 0, got {threshold_distance}")
    n = pos.shape[0]
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            if np.linalg.norm(pos[i] - pos[j]) <= threshold_distance:
                edges.append((i + 1, j + 1))
    return _build(n, edges)


def complete_graph(node_count: int) -> ElectrodeGraph:
    return _build(node_count, [(i, j) for i in range(1, node_count + 1) for j in range(i + 1, node_count + 1)])


def smoothness_penalty(H: np.ndarray, graph: ElectrodeGraph) -> float:
    """Spatial roughness of the rows of H on the graph: 2 * ||L @ H||_F^2.

    Equivalently 2 * Tr(H^H L^T L H) with the conjugate transpose, so the
    value is real and nonnegative for complex H. Zero exactly when every row
    is constant within its connected component (L @ H = 0).
    """
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != graph.node_count:
        raise ShapeError(
            f"H must have {graph.node_count} rows, got shape {H.shape}"
        )
    LH = graph.laplacian_float() @ H
    return float(2.0 * np.sum(np.abs(LH) ** 2))


# ---------------------------------------------------------------------------
# Edge-list text format: one "i j" pair per line, 1-based, '#' comments.
# ---------------------------------------------------------------------------

def load_edge_list(path: str, node_count: int | None = None) -> ElectrodeGraph:
    """Read an edge-list file; node_count defaults to the largest index seen."""
    edges = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise InvalidEdgeError(f"{path}:{lineno}: expected 'i j', got {raw!r}")
            edges.append((int(parts[0]), int(parts[1])))
    if node_count is None:
        if not edges:
            raise InvalidInputError(f"{path}: no edges and no node_count given")
        node_count = max(max(e) for e in edges)
    return _build(node_count, edges)


def save_edge_list(graph: ElectrodeGraph, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {graph.node_count} nodes, {graph.num_edges} edges (1-based indices)\n")
        for i, j in graph.edges:
            fh.write(f"{i} {j}\n")


# ---------------------------------------------------------------------------
# Named presets.
# ---------------------------------------------------------------------------

def ten_twenty_17_montage() -> tuple[tuple[str, ...], np.ndarray]:
    """Labels and idealized unit-sphere coordinates of the 17-site scalp montage.

    The standard 10-20 layout without the Cz and Pz midline sites. Outer-ring
    sites lie on the z = 0 great circle at 36-degree steps; C3/C4 and Fz sit
    36 degrees from the vertex along their arcs; F3/F4/P3/P4 use the common
    unit-sphere idealization.
    """
    s36, c36 = np.sin(np.deg2rad(36.0)), np.cos(np.deg2rad(36.0))
    ring = lambda deg: (np.cos(np.deg2rad(deg)), np.sin(np.deg2rad(deg)), 0.0)
    table = [
        ("Fp1", ring(108.0)),
        ("Fp2", ring(72.0)),
        ("F7", ring(144.0)),
        ("F3", (-0.545, 0.673, 0.5)),
        ("Fz", (0.0, s36, c36)),
        ("F4", (0.545, 0.673, 0.5)),
        ("F8", ring(36.0)),
        ("T7", ring(180.0)),
        ("C3", (-s36, 0.0, c36)),
        ("C4", (s36, 0.0, c36)),
        ("T8", ring(0.0)),
        ("P7", ring(216.0)),
        ("P3", (-0.545, -0.673, 0.5)),
        ("P4", (0.545, -0.673, 0.5)),
        ("P8", ring(324.0)),
        ("O1", ring(252.0)),
        ("O2", ring(288.0)),
    ]
    labels = tuple(name for name, _ in table)
    coords = np.array([xyz for _, xyz in table], dtype=np.float64)
    return labels, coords


def _preset_1020_17() -> ElectrodeGraph:
    # Distance-threshold adjacency at 1.3x the minimum inter-electrode distance.
    _, pos = ten_twenty_17_montage()
    dists = [
        np.linalg.norm(pos[i] - pos[j])
        for i in range(len(pos))
        for j in range(i + 1, len(pos))
    ]
    return graph_from_positions(pos, 1.3 * min(dists))


_PRESETS = {"1020-17": _preset_1020_17}
PRESET_NAMES = tuple(sorted(_PRESETS))


def preset_graph(name: str) -> ElectrodeGraph:
    """Return a named preset graph (currently the 17-channel scalp montage)."""
    try:
        builder = _PRESETS[name]
    except KeyError:
        raise InvalidInputError(
            f"unknown graph preset {name!r}; available: {', '.join(PRESET_NAMES)}"
        ) from None
    return builder()
