"""Labeled trees: Pruefer coding, enumeration, path queries and degree counting.

Vertices are labeled ``1..n``. Edges are stored sorted, each as ``(a, b)``
with ``a < b``; weakening vectors are indexed in that edge order.
"""

from __future__ import annotations

import heapq
import itertools
import math
from collections import Counter
from dataclasses import dataclass
from functools import cached_property, lru_cache

DEFAULT_CAP = 9


class TreeError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledTree:
    n: int
    edges: tuple
    root: int = 1

    def __post_init__(self):
        edges = tuple(sorted(tuple(sorted(map(int, e))) for e in self.edges))
        object.__setattr__(self, "edges", edges)
        if self.n < 1:
            raise TreeError("a tree needs at least one vertex")
        if len(edges) != self.n - 1:
            raise TreeError(f"{self.n} vertices need {self.n - 1} edges, got {len(edges)}")
        if not 1 <= self.root <= self.n:
            raise TreeError(f"root {self.root} out of range")
        for a, b in edges:
            if not (1 <= a <= self.n and 1 <= b <= self.n) or a == b:
                raise TreeError(f"bad edge {(a, b)}")
        # n - 1 edges plus connectivity implies acyclic
        seen = {1}
        stack = [1]
        while stack:
            u = stack.pop()
            for v in self.adjacency[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        if len(seen) != self.n:
            raise TreeError("edges do not form a connected tree")

    @cached_property
    def adjacency(self) -> dict:
        adj = {v: [] for v in range(1, self.n + 1)}
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        return {v: sorted(nb) for v, nb in adj.items()}

    @cached_property
    def degrees(self) -> tuple:
        """Coordination numbers k_v in label order."""
        return tuple(len(self.adjacency[v]) for v in range(1, self.n + 1))

    @cached_property
    def edge_index(self) -> dict:
        return {e: i for i, e in enumerate(self.edges)}

    def with_root(self, root: int) -> "LabeledTree":
        return LabeledTree(self.n, self.edges, root)

    def path_edges(self, u: int, v: int) -> list:
        """Indices of the edges on the unique path from u to v."""
        for x in (u, v):
            if not 1 <= x <= self.n:
                raise TreeError(f"vertex {x} out of range")
        return self._paths[u][v]

    @cached_property
    def _paths(self) -> dict:
        paths = {}
        for s in range(1, self.n + 1):
            prev = {s: None}
            order = [s]
            for u in order:
                for w in self.adjacency[u]:
                    if w not in prev:
                        prev[w] = u
                        order.append(w)
            row = {}
            for t in range(1, self.n + 1):
                idx = []
                x = t
                while prev[x] is not None:
                    idx.append(self.edge_index[tuple(sorted((x, prev[x])))])
                    x = prev[x]
                row[t] = idx
            paths[s] = row
        return paths

    def children(self, root: int | None = None) -> dict:
        """Child lists with respect to ``root`` (default: the tree's root)."""
        root = self.root if root is None else root
        kids = {v: [] for v in range(1, self.n + 1)}
        seen = {root}
        order = [root]
        for u in order:
            for w in self.adjacency[u]:
                if w not in seen:
                    seen.add(w)
                    kids[u].append(w)
                    order.append(w)
        return kids

    def postorder(self, root: int | None = None) -> list:
        root = self.root if root is None else root
        kids = self.children(root)
        out = []

        def visit(u):
            for c in kids[u]:
                visit(c)
            out.append(u)

        visit(root)
        return out


def prufer_decode(code, n: int | None = None) -> LabeledTree:
    code = tuple(int(c) for c in code)
    if n is None:
        n = len(code) + 2
    if n == 1:
        if code:
            raise TreeError("a one-vertex tree has an empty code")
        return LabeledTree(1, ())
    if len(code) != n - 2:
        raise TreeError(f"code for n={n} must have length {n - 2}")
    for c in code:
        if not 1 <= c <= n:
            raise TreeError(f"label {c} out of range 1..{n}")
    degree = [1] * (n + 1)
    for c in code:
        degree[c] += 1
    leaves = [v for v in range(1, n + 1) if degree[v] == 1]
    heapq.heapify(leaves)
    edges = []
    for c in code:
        leaf = heapq.heappop(leaves)
        edges.append((leaf, c))
        degree[c] -= 1
        if degree[c] == 1:
            heapq.heappush(leaves, c)
    edges.append((heapq.heappop(leaves), heapq.heappop(leaves)))
    return LabeledTree(n, tuple(edges))


def prufer_encode(tree: LabeledTree) -> tuple:
    if tree.n <= 2:
        return ()
    adj = {v: set(nb) for v, nb in tree.adjacency.items()}
    leaves = [v for v, nb in adj.items() if len(nb) == 1]
    heapq.heapify(leaves)
    code = []
    for _ in range(tree.n - 2):
        leaf = heapq.heappop(leaves)
        (nb,) = adj.pop(leaf)
        code.append(nb)
        adj[nb].discard(leaf)
        if len(adj[nb]) == 1:
            heapq.heappush(leaves, nb)
    return tuple(code)


def enumerate_trees(n: int, cap: int = DEFAULT_CAP):
    """Every labeled tree on n vertices, in lexicographic Pruefer order."""
    if n < 1:
        raise TreeError("n must be positive")
    if n > cap:
        raise TreeError(f"n={n} exceeds the enumeration cap {cap}")
    if n == 1:
        yield LabeledTree(1, ())
        return
    for code in itertools.product(range(1, n + 1), repeat=n - 2):
        yield prufer_decode(code, n)


def path_infimum(tree: LabeledTree, w, u: int, v: int) -> float:
    """1 if u == v, otherwise the smallest weakening parameter on the u-v path."""
    idx = tree.path_edges(u, v)
    if not idx:
        return 1.0
    return float(min(w[i] for i in idx))


def count_trees_with_degrees(n: int, degrees) -> int:
    """Number of labeled trees with vertex v of degree degrees[v-1]: (n-2)!/prod (k_v-1)!."""
    degrees = tuple(int(k) for k in degrees)
    if len(degrees) != n:
        raise TreeError("need one degree per vertex")
    if n == 1:
        if degrees != (0,):
            raise TreeError("the one-vertex tree has degree 0")
        return 1
    if any(k < 1 for k in degrees) or sum(degrees) != 2 * (n - 1):
        raise TreeError(f"inconsistent degree sequence {degrees}")
    out = math.factorial(n - 2)
    for k in degrees:
        out //= math.factorial(k - 1)
    return out


def degree_histogram(n: int) -> Counter:
    return Counter(t.degrees for t in enumerate_trees(n))


def _rooted_form(tree: LabeledTree, root: int, skip=None) -> str:
    kids = [c for c in tree.adjacency[root] if c != skip]
    return "(" + "".join(sorted(_rooted_form(tree, c, root) for c in kids)) + ")"


def centers(tree: LabeledTree) -> list:
    if tree.n <= 2:
        return list(range(1, tree.n + 1))
    deg = {v: len(nb) for v, nb in tree.adjacency.items()}
    layer = [v for v, d in deg.items() if d == 1]
    left = tree.n
    while left > 2:
        left -= len(layer)
        nxt = []
        for leaf in layer:
            for nb in tree.adjacency[leaf]:
                deg[nb] -= 1
                if deg[nb] == 1:
                    nxt.append(nb)
        layer = nxt
    return sorted(layer)


def canonical_form(tree: LabeledTree, rooted_at: int | None = None) -> str:
    """Isomorphism invariant string; ``rooted_at`` distinguishes that vertex."""
    if rooted_at is not None:
        return _rooted_form(tree, rooted_at)
    return min(_rooted_form(tree, c) for c in centers(tree))


@lru_cache(maxsize=None)
def tree_classes(n: int, rooted: bool = False) -> tuple:
    """Isomorphism classes of labeled trees on n vertices.

    Returns ``(representative, multiplicity)`` pairs sorted by canonical form;
    the representative is the first tree of the class in Pruefer order and the
    multiplicities sum to n^(n-2). With ``rooted`` the classes keep vertex 1
    distinguished.
    """
    groups = {}
    for t in enumerate_trees(n):
        key = canonical_form(t, 1 if rooted else None)
        if key in groups:
            groups[key][1] += 1
        else:
            groups[key] = [t, 1]
    return tuple((groups[k][0], groups[k][1]) for k in sorted(groups))
