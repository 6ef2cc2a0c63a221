"""Plain directed graphs, ADMGs, d-separation and latent projection."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable


class GraphError(ValueError):
    pass


def _as_set(nodes) -> frozenset:
    if isinstance(nodes, str):
        return frozenset([nodes])
    return frozenset(nodes)


@dataclass(frozen=True)
class Dag:
    """Directed acyclic graph over a fixed node tuple.

    Edges are stored as a frozenset of ``(parent, child)`` pairs. Acyclicity is
    checked on construction.
    """

    nodes: tuple
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", frozenset(tuple(e) for e in self.edges))
        known = set(self.nodes)
        if len(known) != len(self.nodes):
            raise GraphError("duplicate node names")
        for a, b in self.edges:
            if a not in known or b not in known:
                raise GraphError(f"edge {a}->{b} references an unknown node")
            if a == b:
                raise GraphError(f"self loop on {a}")
        cycle = find_cycle(self.nodes, self.edges)
        if cycle:
            raise GraphError("graph has a cycle: " + " -> ".join(cycle))

    def parents(self, v) -> frozenset:
        return frozenset(a for a, b in self.edges if b == v)

    def children(self, v) -> frozenset:
        return frozenset(b for a, b in self.edges if a == v)

    def ancestors(self, vs) -> frozenset:
        """Ancestors of ``vs``, including ``vs`` themselves."""
        return _closure(_as_set(vs), self.parents)

    def descendants(self, vs) -> frozenset:
        """Descendants of ``vs``, including ``vs`` themselves."""
        return _closure(_as_set(vs), self.children)

    def topological_order(self) -> tuple:
        return topological_sort(self.nodes, self.edges)

    def subgraph(self, keep) -> "Dag":
        keep = _as_set(keep)
        return Dag(
            tuple(v for v in self.nodes if v in keep),
            frozenset((a, b) for a, b in self.edges if a in keep and b in keep),
        )

    def remove_edges(self, edges) -> "Dag":
        return Dag(self.nodes, self.edges - frozenset(edges))

    def without_outgoing(self, vs) -> "Dag":
        vs = _as_set(vs)
        return Dag(self.nodes, frozenset(e for e in self.edges if e[0] not in vs))

    def without_incoming(self, vs) -> "Dag":
        vs = _as_set(vs)
        return Dag(self.nodes, frozenset(e for e in self.edges if e[1] not in vs))


@dataclass(frozen=True)
class Admg:
    """Acyclic directed mixed graph (directed plus bidirected edges).

    Bidirected edges are stored as sorted pairs, so ``X<->Z`` and ``Z<->X`` are
    the same edge.
    """

    nodes: tuple
    directed: frozenset = field(default_factory=frozenset)
    bidirected: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "directed", frozenset(tuple(e) for e in self.directed))
        bi = set()
        for a, b in self.bidirected:
            if a == b:
                raise GraphError(f"bidirected self loop on {a}")
            bi.add(tuple(sorted((a, b))))
        object.__setattr__(self, "bidirected", frozenset(bi))
        known = set(self.nodes)
        for a, b in list(self.directed) + list(self.bidirected):
            if a not in known or b not in known:
                raise GraphError(f"edge {a},{b} references an unknown node")
        cycle = find_cycle(self.nodes, self.directed)
        if cycle:
            raise GraphError("directed part has a cycle: " + " -> ".join(cycle))

    def parents(self, v) -> frozenset:
        return frozenset(a for a, b in self.directed if b == v)

    def children(self, v) -> frozenset:
        return frozenset(b for a, b in self.directed if a == v)

    def siblings(self, v) -> frozenset:
        out = set()
        for a, b in self.bidirected:
            if a == v:
                out.add(b)
            elif b == v:
                out.add(a)
        return frozenset(out)

    def has_bidirected(self, a, b) -> bool:
        return tuple(sorted((a, b))) in self.bidirected

    def ancestors(self, vs) -> frozenset:
        return _closure(_as_set(vs), self.parents)

    def descendants(self, vs) -> frozenset:
        return _closure(_as_set(vs), self.children)

    def topological_order(self) -> tuple:
        return topological_sort(self.nodes, self.directed)

    def subgraph(self, keep) -> "Admg":
        keep = _as_set(keep)
        return Admg(
            tuple(v for v in self.nodes if v in keep),
            frozenset(e for e in self.directed if e[0] in keep and e[1] in keep),
            frozenset(e for e in self.bidirected if e[0] in keep and e[1] in keep),
        )

    def without_incoming(self, vs) -> "Admg":
        """Remove directed edges into ``vs`` and every bidirected edge touching them."""
        vs = _as_set(vs)
        return Admg(
            self.nodes,
            frozenset(e for e in self.directed if e[1] not in vs),
            frozenset(e for e in self.bidirected if e[0] not in vs and e[1] not in vs),
        )

    def districts(self) -> list:
        """C-components: connected components of the bidirected part."""
        seen, out = set(), []
        for v in self.nodes:
            if v in seen:
                continue
            comp, stack = set(), [v]
            while stack:
                w = stack.pop()
                if w in comp:
                    continue
                comp.add(w)
                stack.extend(self.siblings(w) - comp)
            seen |= comp
            out.append(frozenset(comp))
        return out


def _closure(start: frozenset, step) -> frozenset:
    out = set(start)
    queue = deque(start)
    while queue:
        v = queue.popleft()
        for w in step(v):
            if w not in out:
                out.add(w)
                queue.append(w)
    return frozenset(out)


def topological_sort(nodes, edges) -> tuple:
    """Kahn's algorithm; ties broken by the input node order."""
    nodes = list(nodes)
    rank = {v: i for i, v in enumerate(nodes)}
    indeg = {v: 0 for v in nodes}
    children = {v: [] for v in nodes}
    for a, b in edges:
        indeg[b] += 1
        children[a].append(b)
    ready = sorted((v for v in nodes if indeg[v] == 0), key=rank.get)
    out = []
    while ready:
        v = ready.pop(0)
        out.append(v)
        for c in children[v]:
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
        ready.sort(key=rank.get)
    if len(out) != len(nodes):
        raise GraphError("graph has a cycle")
    return tuple(out)


def find_cycle(nodes, edges) -> list | None:
    """Return one directed cycle as ``[v0, v1, ..., v0]`` or None."""
    children = {v: [] for v in nodes}
    for a, b in sorted(edges):
        children.setdefault(a, []).append(b)
    color = {v: 0 for v in children}
    for root in nodes:
        if color[root]:
            continue
        stack = [(root, iter(children[root]))]
        path = [root]
        color[root] = 1
        while stack:
            v, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                stack.pop()
                path.pop()
                color[v] = 2
                continue
            if color.get(nxt, 0) == 1:
                return path[path.index(nxt):] + [nxt]
            if color.get(nxt, 0) == 0:
                color[nxt] = 1
                path.append(nxt)
                stack.append((nxt, iter(children.get(nxt, []))))
    return None


def d_separated(dag: Dag, A: Iterable, B: Iterable, Z: Iterable = ()) -> bool:
    """Test whether ``A`` and ``B`` are d-separated given ``Z``.

    Uses the reachability ("Bayes-ball") formulation: walk from ``A`` tracking
    the direction each node was entered from, and report whether any node of
    ``B`` is reachable along an active trail.
    """
    A, B, Z = _as_set(A), _as_set(B), _as_set(Z)
    known = set(dag.nodes)
    for name, s in (("A", A), ("B", B), ("Z", Z)):
        missing = s - known
        if missing:
            raise GraphError(f"{name} contains unknown nodes {sorted(missing)}")
    if A & B or A & Z or B & Z:
        raise GraphError("A, B and Z must be disjoint")
    if not A or not B:
        return True

    parents = {v: set() for v in dag.nodes}
    children = {v: set() for v in dag.nodes}
    for a, b in dag.edges:
        parents[b].add(a)
        children[a].add(b)

    # nodes with a descendant in Z; colliders among them are open
    anc_z = dag.ancestors(Z) if Z else frozenset()

    # (node, arrived_from_child): True means we came up an edge v <- child
    queue = deque((a, True) for a in A)
    visited = set()
    while queue:
        v, up = queue.popleft()
        if (v, up) in visited:
            continue
        visited.add((v, up))
        if v in B:
            return False
        if up:
            if v in Z:
                continue
            for p in parents[v]:
                queue.append((p, True))
            for c in children[v]:
                queue.append((c, False))
        else:
            if v not in Z:
                for c in children[v]:
                    queue.append((c, False))
            if v in anc_z:
                for p in parents[v]:
                    queue.append((p, True))
    return True


def latent_project(dag: Dag, observed: Iterable) -> Admg:
    """Project out the nodes of ``dag`` not in ``observed``.

    ``a -> b`` appears iff there is a directed path from ``a`` to ``b`` whose
    interior nodes are all latent; ``a <-> b`` iff some latent node reaches both
    through latent-only directed paths (it may be one of the end edges).
    """
    observed = _as_set(observed)
    unknown = observed - set(dag.nodes)
    if unknown:
        raise GraphError(f"observed set has unknown nodes {sorted(unknown)}")
    latent = set(dag.nodes) - observed
    children = {v: set() for v in dag.nodes}
    for a, b in dag.edges:
        children[a].add(b)

    def observed_reach(start):
        """Observed nodes reachable from ``start`` through latent interiors."""
        out, stack, seen = set(), list(children[start]), set()
        while stack:
            w = stack.pop()
            if w in seen:
                continue
            seen.add(w)
            if w in observed:
                out.add(w)
            else:
                stack.extend(children[w])
        return out

    directed = set()
    for v in observed:
        for w in observed_reach(v):
            directed.add((v, w))
    bidirected = set()
    for u in latent:
        hit = sorted(observed_reach(u))
        for i, a in enumerate(hit):
            for b in hit[i + 1:]:
                bidirected.add((a, b))
    nodes = tuple(v for v in dag.nodes if v in observed)
    return Admg(nodes, frozenset(directed), frozenset(bidirected))


def latent_sources(dag: Dag, observed: Iterable, a, b) -> list:
    """Latent nodes responsible for the projected arc ``a <-> b``."""
    observed = _as_set(observed)
    out = []
    for u in dag.nodes:
        if u in observed:
            continue
        reach = set()
        stack, seen = list(dag.children(u)), set()
        while stack:
            w = stack.pop()
            if w in seen:
                continue
            seen.add(w)
            if w in observed:
                reach.add(w)
            else:
                stack.extend(dag.children(w))
        if a in reach and b in reach:
            out.append(u)
    return sorted(out)
