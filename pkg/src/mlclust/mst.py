"""Per-cluster minimum spanning trees and their DOT / JSON export.

Each cluster of a partition gets its own tree, built with Kruskal's algorithm
over the edges between its members. Edge weights default to the correlation
distance ``sqrt(2 * (1 - C_ij))``; any weight that decreases with correlation
yields the same topology, so the ``raw`` option only changes what is
reported (the correlation itself, via a maximum spanning tree).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import sqrt

import numpy as np

from .errors import InvalidInputError
from .likelihood import as_partition

__all__ = [
    "ClusterForest",
    "ClusterTree",
    "Edge",
    "UnionFind",
    "build_forest",
    "correlation_distance",
    "export_dot",
    "forest_to_json",
    "kruskal",
    "pen_width",
]

WEIGHTS = ("corrdist", "raw")
MIN_PEN = 0.5
MAX_PEN = 5.0


@dataclass(frozen=True)
class Edge:
    i: int
    j: int
    weight: float
    correlation: float


@dataclass
class ClusterTree:
    label: int
    members: list[int]
    edges: list[Edge] = field(default_factory=list)

    @property
    def total_weight(self) -> float:
        return sum(e.weight for e in self.edges)


@dataclass
class ClusterForest:
    n: int
    trees: list[ClusterTree]
    weights: str = "corrdist"

    @property
    def edge_count(self) -> int:
        return sum(len(t.edges) for t in self.trees)


class UnionFind:
    def __init__(self, items):
        self.parent = {x: x for x in items}
        self.rank = {x: 0 for x in items}

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        return True


def correlation_distance(c: float) -> float:
    return sqrt(max(2.0 * (1.0 - c), 0.0))


def kruskal(nodes, edges):
    """Minimum spanning forest of ``(weight, i, j)`` edges; ties broken by (i, j)."""
    uf = UnionFind(nodes)
    tree = []
    for w, i, j in sorted(edges):
        if uf.union(i, j):
            tree.append((w, i, j))
            if len(tree) == len(uf.parent) - 1:
                break
    return tree


def build_forest(p, c, weights: str = "corrdist") -> ClusterForest:
    """One spanning tree per cluster; singletons get an empty edge list."""
    if weights not in WEIGHTS:
        raise InvalidInputError(f"weights must be one of {WEIGHTS}, got {weights!r}")
    c = np.asarray(c, dtype=np.float64)
    labels = as_partition(p, c.shape[0])
    trees = []
    for lab in dict.fromkeys(labels.tolist()):
        members = np.flatnonzero(labels == lab).tolist()
        edges = []
        for a, i in enumerate(members):
            for j in members[a + 1:]:
                cij = float(c[i, j])
                # raw: maximum spanning tree on C, expressed as a minimum over -C
                key = correlation_distance(cij) if weights == "corrdist" else -cij
                edges.append((key, i, j))
        tree = ClusterTree(lab, members)
        for key, i, j in kruskal(members, edges):
            cij = float(c[i, j])
            w = key if weights == "corrdist" else cij
            tree.edges.append(Edge(i, j, w, cij))
        trees.append(tree)
    return ClusterForest(c.shape[0], trees, weights)


def pen_width(correlation: float) -> float:
    """Linear map of correlation in [0, 1] onto [MIN_PEN, MAX_PEN]; clipped outside."""
    c = min(max(correlation, 0.0), 1.0)
    return MIN_PEN + (MAX_PEN - MIN_PEN) * c


def _quote(s: str) -> str:
    return '"' + str(s).replace("\\", "\\\\").replace('"', '\\"') + '"'


def export_dot(forest: ClusterForest, labels=None) -> str:
    """Render the forest as one DOT graph with a subgraph per cluster.

    Edge pen width grows linearly with the edge's correlation. Output uses
    LF line endings and is fully determined by the forest.
    """
    names = [f"A{i}" for i in range(forest.n)] if labels is None else [str(x) for x in labels]
    if len(names) != forest.n:
        raise InvalidInputError(f"got {len(names)} asset labels for {forest.n} assets")
    lines = ["graph clusters {", "  node [shape=ellipse];"]
    for tree in sorted(forest.trees, key=lambda t: t.label):
        lines.append(f"  subgraph cluster_{tree.label} {{")
        lines.append(f'    label="cluster {tree.label}";')
        for i in sorted(tree.members):
            lines.append(f"    n{i} [label={_quote(names[i])}];")
        for e in sorted(tree.edges, key=lambda e: (e.i, e.j)):
            lines.append(
                f"    n{e.i} -- n{e.j} [weight={e.weight:.6f}, "
                f"label=\"{e.correlation:.3f}\", penwidth={pen_width(e.correlation):.3f}];"
            )
        lines.append("  }")
    lines.append("}")
    return "\n".join(lines) + "\n"


def forest_to_json(forest: ClusterForest, labels=None) -> str:
    names = [f"A{i}" for i in range(forest.n)] if labels is None else [str(x) for x in labels]
    doc = {
        "weights": forest.weights,
        "clusters": [
            {
                "label": t.label,
                "members": [names[i] for i in t.members],
                "edges": [
                    {"source": names[e.i], "target": names[e.j], "weight": e.weight, "correlation": e.correlation}
                    for e in t.edges
                ],
            }
            for t in forest.trees
        ],
    }
    return json.dumps(doc, indent=2) + "\n"
