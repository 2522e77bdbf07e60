"""Acyclic directed mixed graphs and the structural machinery built on them.

Nodes are integer indices 0..n-1; names are display-only metadata. Directed
edges are ordered pairs, bidirected edges unordered pairs stored as (lo, hi).
All types are immutable after construction and all operations are pure.
"""

from __future__ import annotations

import heapq
import json
import re
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import (
    FormatError,
    GenerationError,
    GraphCycleError,
    IdentifiabilityError,
    ReductionInvariantError,
)


class UnionFind:
    """Disjoint sets over 0..n-1 with path compression."""

    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # Attach the larger root under the smaller so component ids are stable.
            if ra < rb:
                self.parent[rb] = ra
            else:
                self.parent[ra] = rb


@dataclass(frozen=True)
class Admg:
    """Mixed graph over observable variables sharing one finite alphabet.

    Invariants checked at construction: directed edges acyclic, no self-loops,
    endpoints in range, bidirected edges canonical (lo, hi) without duplicates.
    """

    node_count: int
    names: tuple[str, ...]
    alphabet_size: int
    directed_edges: frozenset[tuple[int, int]]
    bidirected_edges: frozenset[tuple[int, int]]

    def __init__(self, node_count, names=None, alphabet_size=2, directed_edges=(), bidirected_edges=()):
        n = int(node_count)
        if n <= 0:
            raise ValueError("node_count must be positive")
        if names is None:
            names = tuple(f"v{i}" for i in range(n))
        names = tuple(str(s) for s in names)
        if len(names) != n or len(set(names)) != n:
            raise ValueError("names must be %d distinct identifiers" % n)
        if int(alphabet_size) < 2:
            raise ValueError("alphabet_size must be at least 2")
        directed = frozenset((int(i), int(j)) for i, j in directed_edges)
        bidirected = set()
        for i, j in bidirected_edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop {i} <-> {j} not allowed")
            bidirected.add((min(i, j), max(i, j)))
        for i, j in directed:
            if i == j:
                raise ValueError(f"self-loop {i} -> {j} not allowed")
        for i, j in list(directed) + list(bidirected):
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge ({i}, {j}) out of range for {n} nodes")
        object.__setattr__(self, "node_count", n)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "alphabet_size", int(alphabet_size))
        object.__setattr__(self, "directed_edges", directed)
        object.__setattr__(self, "bidirected_edges", frozenset(bidirected))
        object.__setattr__(self, "_topo", tuple(_kahn_order(n, directed)))

    @property
    def max_in_degree(self) -> int:
        indeg = [0] * self.node_count
        for _, j in self.directed_edges:
            indeg[j] += 1
        return max(indeg)

    def parents(self, node: int) -> tuple[int, ...]:
        return tuple(sorted(i for i, j in self.directed_edges if j == node))

    def children(self, node: int) -> tuple[int, ...]:
        return tuple(sorted(j for i, j in self.directed_edges if i == node))

    def node_index(self, name_or_index) -> int:
        """Resolve a node given either its display name or its integer index."""
        if isinstance(name_or_index, int) or (isinstance(name_or_index, str) and name_or_index.isdigit()):
            idx = int(name_or_index)
            if not 0 <= idx < self.node_count:
                raise ValueError(f"node index {idx} out of range")
            return idx
        try:
            return self.names.index(name_or_index)
        except ValueError:
            raise ValueError(f"unknown variable name {name_or_index!r}") from None


@dataclass(frozen=True)
class CComponentPartition:
    """Partition of nodes into connected components of the bidirected graph."""

    components: tuple[tuple[int, ...], ...]
    component_of: tuple[int, ...]

    @property
    def max_size(self) -> int:
        return max(len(c) for c in self.components)

    def component_containing(self, node: int) -> tuple[int, ...]:
        return self.components[self.component_of[node]]


@dataclass(frozen=True)
class LatentGraph:
    """A DAG in which some nodes are flagged hidden; input to latent projection."""

    node_count: int
    observable_flags: tuple[bool, ...]
    directed_edges: frozenset[tuple[int, int]]
    alphabet_size: int = 2
    names: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        n = self.node_count
        if len(self.observable_flags) != n:
            raise ValueError("observable_flags length mismatch")
        if not any(self.observable_flags):
            raise ValueError("at least one node must be observable")
        for i, j in self.directed_edges:
            if i == j or not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"bad edge ({i}, {j})")
        _kahn_order(n, self.directed_edges)  # raises on cycles


@dataclass(frozen=True)
class IdentifiabilityResult:
    """Outcome of the no-confounded-child check; witness is a violating child."""

    identifiable: bool
    witness: Optional[int] = None

    def __bool__(self) -> bool:
        return self.identifiable


@dataclass(frozen=True)
class InducedSubgraph:
    """A sub-ADMG plus the original indices of its (renumbered) nodes."""

    admg: Admg
    nodes: tuple[int, ...]


@dataclass(frozen=True)
class MarginalReduction:
    """Result of the marginal reduction: projected graph, kept nodes, checks."""

    admg: Admg
    nodes: tuple[int, ...]
    report: dict


def _kahn_order(n: int, directed: Iterable[tuple[int, int]]) -> list[int]:
    indeg = [0] * n
    children: list[list[int]] = [[] for _ in range(n)]
    for i, j in directed:
        indeg[j] += 1
        children[i].append(j)
    heap = [i for i in range(n) if indeg[i] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        v = heapq.heappop(heap)
        order.append(v)
        for w in sorted(children[v]):
            indeg[w] -= 1
            if indeg[w] == 0:
                heapq.heappush(heap, w)
    if len(order) < n:
        stuck = {i for i in range(n) if indeg[i] > 0}
        edge = min((i, j) for i, j in directed if i in stuck and j in stuck)
        raise GraphCycleError(edge)
    return order


def topological_order(g: Admg) -> list[int]:
    """Deterministic topological order of the directed part; ties by index."""
    return list(g._topo)


def c_components(g: Admg) -> CComponentPartition:
    """Connected components of the bidirected graph, listed by minimum element."""
    uf = UnionFind(g.node_count)
    for i, j in g.bidirected_edges:
        uf.union(i, j)
    groups: dict[int, list[int]] = {}
    for v in range(g.node_count):
        groups.setdefault(uf.find(v), []).append(v)
    comps = sorted((tuple(sorted(m)) for m in groups.values()), key=lambda c: c[0])
    comp_of = [0] * g.node_count
    for idx, comp in enumerate(comps):
        for v in comp:
            comp_of[v] = idx
    return CComponentPartition(tuple(comps), tuple(comp_of))


def parent_sets(g: Admg, s: Iterable[int]) -> tuple[frozenset, frozenset, frozenset]:
    """Directed parents of a node set: (Pa, Pa ∪ S, Pa \\ S)."""
    s = frozenset(int(v) for v in s)
    for v in s:
        if not 0 <= v < g.node_count:
            raise ValueError(f"node index {v} out of range")
    pa = frozenset(i for i, j in g.directed_edges if j in s)
    return pa, pa | s, pa - s


def _bidirected_adjacency(g: Admg) -> list[list[int]]:
    adj: list[list[int]] = [[] for _ in range(g.node_count)]
    for i, j in g.bidirected_edges:
        adj[i].append(j)
        adj[j].append(i)
    return adj


def effective_parents(g: Admg) -> tuple[tuple[int, ...], ...]:
    """Per-node conditioning sets that factor P as a hidden-free Bayes net.

    For the node at position i of the topological order, the set is the
    parents-plus closure of its confounded component within the induced graph
    on the first i nodes, intersected with the strict predecessors.
    """
    order = topological_order(g)
    pos = {v: i for i, v in enumerate(order)}
    adj = _bidirected_adjacency(g)
    parents = [g.parents(v) for v in range(g.node_count)]
    k = c_components(g).max_size
    d = g.max_in_degree
    bound = k * d + k - 1
    result: list[tuple[int, ...]] = [()] * g.node_count
    for i, v in enumerate(order):
        prefix = {u for u in order[: i + 1]}
        # Confounded component of v within the prefix-induced graph.
        comp = {v}
        stack = [v]
        while stack:
            u = stack.pop()
            for w in adj[u]:
                if w in prefix and w not in comp:
                    comp.add(w)
                    stack.append(w)
        closure = set(comp)
        for u in comp:
            closure.update(parents[u])
        z = tuple(sorted(u for u in closure if pos[u] < i))
        if len(z) > bound:
            raise AssertionError(f"conditioning set of node {v} exceeds k*d+k-1 = {bound}")
        result[v] = z
    return tuple(result)


def check_identifiability(g: Admg, x: int) -> IdentifiabilityResult:
    """True iff no directed child of x shares a confounded component with x."""
    if not 0 <= x < g.node_count:
        raise ValueError(f"node index {x} out of range")
    comp = set(c_components(g).component_containing(x))
    bad = sorted(c for c in g.children(x) if c in comp)
    if bad:
        return IdentifiabilityResult(False, bad[0])
    return IdentifiabilityResult(True)


def latent_project(g: LatentGraph) -> Admg:
    """Project a DAG with hidden nodes onto its observables.

    Directed edge i -> j iff some directed path from i to j has an all-hidden
    interior (a direct edge counts); bidirected {i, j} iff some hidden node
    reaches both i and j by directed paths through hidden nodes only.
    """
    n = g.node_count
    children: list[list[int]] = [[] for _ in range(n)]
    for i, j in g.directed_edges:
        children[i].append(j)
    observable = [v for v in range(n) if g.observable_flags[v]]
    hidden = [v for v in range(n) if not g.observable_flags[v]]

    def reachable_observables(start_children: list[int]) -> set[int]:
        # Walk forward, traversing hidden nodes only; collect observables hit.
        seen_hidden = set()
        found = set()
        stack = list(start_children)
        while stack:
            u = stack.pop()
            if g.observable_flags[u]:
                found.add(u)
            elif u not in seen_hidden:
                seen_hidden.add(u)
                stack.extend(children[u])
        return found

    directed_out = set()
    for v in observable:
        for w in reachable_observables(children[v]):
            directed_out.add((v, w))
    bidirected_out = set()
    for u in hidden:
        targets = sorted(reachable_observables(children[u]))
        for a_idx in range(len(targets)):
            for b_idx in range(a_idx + 1, len(targets)):
                bidirected_out.add((targets[a_idx], targets[b_idx]))

    index_of = {v: i for i, v in enumerate(observable)}
    names = None
    if g.names is not None:
        names = tuple(g.names[v] for v in observable)
    return Admg(
        node_count=len(observable),
        names=names,
        alphabet_size=g.alphabet_size,
        directed_edges=[(index_of[i], index_of[j]) for i, j in directed_out],
        bidirected_edges=[(index_of[i], index_of[j]) for i, j in bidirected_out],
    )


def admg_to_latent(g: Admg, observable: Iterable[int]) -> LatentGraph:
    """Expand an ADMG into a plain DAG: one hidden root per bidirected edge,
    plus any requested nodes marked hidden."""
    obs = set(int(v) for v in observable)
    edge_list = sorted(g.bidirected_edges)
    n_total = g.node_count + len(edge_list)
    flags = [v in obs for v in range(g.node_count)] + [False] * len(edge_list)
    edges = set(g.directed_edges)
    for e_idx, (i, j) in enumerate(edge_list):
        u = g.node_count + e_idx
        edges.add((u, i))
        edges.add((u, j))
    names = tuple(g.names) + tuple(f"u{e}" for e in range(len(edge_list)))
    return LatentGraph(
        node_count=n_total,
        observable_flags=tuple(flags),
        directed_edges=frozenset(edges),
        alphabet_size=g.alphabet_size,
        names=names,
    )


def prune_to_ancestors(g: Admg, f: Iterable[int]) -> InducedSubgraph:
    """Induced sub-ADMG on the directed ancestors of f, f included."""
    f = set(int(v) for v in f)
    for v in f:
        if not 0 <= v < g.node_count:
            raise ValueError(f"node index {v} out of range")
    parents_of: list[list[int]] = [[] for _ in range(g.node_count)]
    for i, j in g.directed_edges:
        parents_of[j].append(i)
    keep = set(f)
    stack = list(f)
    while stack:
        v = stack.pop()
        for p in parents_of[v]:
            if p not in keep:
                keep.add(p)
                stack.append(p)
    nodes = tuple(sorted(keep))
    return InducedSubgraph(induced_subgraph(g, nodes), nodes)


def induced_subgraph(g: Admg, nodes: Sequence[int]) -> Admg:
    """Sub-ADMG on the given nodes, renumbered in the given order."""
    index_of = {v: i for i, v in enumerate(nodes)}
    keep = set(nodes)
    return Admg(
        node_count=len(nodes),
        names=tuple(g.names[v] for v in nodes),
        alphabet_size=g.alphabet_size,
        directed_edges=[(index_of[i], index_of[j]) for i, j in g.directed_edges if i in keep and j in keep],
        bidirected_edges=[(index_of[i], index_of[j]) for i, j in g.bidirected_edges if i in keep and j in keep],
    )


def reduce_for_marginal(g: Admg, x: int, f: Iterable[int]) -> MarginalReduction:
    """Project g onto f plus the parents-closure of x's confounded component.

    The structural guarantees of the construction are re-checked on every
    call rather than trusted: the component of x survives intact, the result
    stays identifiable, the component's parent closure is unchanged, and the
    size bounds hold. A violation raises ReductionInvariantError.
    """
    f = frozenset(int(v) for v in f)
    if x in f:
        raise ValueError("f must not contain the intervened variable")
    for v in f:
        if not 0 <= v < g.node_count:
            raise ValueError(f"node index {v} out of range")
    ident = check_identifiability(g, x)
    if not ident:
        raise IdentifiabilityError(
            f"child {ident.witness} of {x} shares a confounded component with it"
        )
    part = c_components(g)
    s1 = part.component_containing(x)
    _, pa_plus, _ = parent_sets(g, s1)
    w_nodes = tuple(sorted(f | pa_plus))
    h = latent_project(admg_to_latent(g, observable=w_nodes))
    index_of = {v: i for i, v in enumerate(w_nodes)}

    s1_mapped = tuple(sorted(index_of[v] for v in s1))
    h_part = c_components(h)
    if h_part.component_containing(index_of[x]) != s1_mapped:
        raise ReductionInvariantError("confounded component of x changed under reduction")
    h_ident = check_identifiability(h, index_of[x])
    if not h_ident:
        raise ReductionInvariantError("reduction broke identifiability")
    _, h_pa_plus, _ = parent_sets(h, s1_mapped)
    if frozenset(index_of[v] for v in pa_plus) != h_pa_plus:
        raise ReductionInvariantError("parents-closure of x's component changed under reduction")

    k = part.max_size
    d = g.max_in_degree
    f_size = len(f)
    in_degree_bound = f_size + k * (d + 1)
    ccomp_bound = f_size + k * d
    if h.max_in_degree > in_degree_bound:
        raise ReductionInvariantError(
            f"in-degree {h.max_in_degree} exceeds bound {in_degree_bound}"
        )
    other_sizes = [len(c) for c in h_part.components if c != s1_mapped]
    if other_sizes and max(other_sizes) > ccomp_bound:
        raise ReductionInvariantError(
            f"a confounded component of size {max(other_sizes)} exceeds bound {ccomp_bound}"
        )
    report = {
        "s1_preserved": True,
        "identifiable": True,
        "pa_plus_preserved": True,
        # Strong positivity transfers because the margin is over the same set.
        "positivity_margin_preserved": True,
        "in_degree": h.max_in_degree,
        "in_degree_bound": in_degree_bound,
        "max_other_component": max(other_sizes) if other_sizes else 0,
        "component_bound": ccomp_bound,
    }
    return MarginalReduction(h, w_nodes, report)


def random_admg(
    n: int,
    max_in_degree: int,
    max_component: int,
    alphabet_size: int = 2,
    seed: int = 0,
    identifiable_for: Optional[int] = None,
    attempts: int = 1000,
) -> Admg:
    """A random ADMG with bounded in-degree and confounded-component size.

    Node indices are already a topological order. When identifiable_for is
    given, rejection-resamples until the no-confounded-child condition holds
    for that node.
    """
    rng = np.random.default_rng(seed)
    for _ in range(attempts):
        directed = []
        for j in range(1, n):
            deg = int(rng.integers(0, min(max_in_degree, j) + 1))
            for p in rng.choice(j, size=deg, replace=False):
                directed.append((int(p), j))
        perm = [int(v) for v in rng.permutation(n)]
        bidirected = []
        i = 0
        while i < n:
            size = int(rng.integers(1, max_component + 1))
            group = perm[i : i + size]
            for a, b in zip(group, group[1:]):
                bidirected.append((a, b))
            i += size
        g = Admg(
            node_count=n,
            alphabet_size=alphabet_size,
            directed_edges=directed,
            bidirected_edges=bidirected,
        )
        if identifiable_for is None or check_identifiability(g, identifiable_for):
            return g
    raise GenerationError(
        f"no identifiable graph found for node {identifiable_for} in {attempts} attempts"
    )


# ---------------------------------------------------------------------------
# Graph file format: JSON with fields n, names, alphabet, directed, bidirected.


def graph_to_json(g: Admg) -> str:
    payload = {
        "n": g.node_count,
        "names": list(g.names),
        "alphabet": g.alphabet_size,
        "directed": sorted([i, j] for i, j in g.directed_edges),
        "bidirected": sorted([i, j] for i, j in g.bidirected_edges),
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _line_of(text: str, pattern: str, occurrence: int = 0) -> int:
    """1-based line of the given regex occurrence; falls back to line 1."""
    for idx, m in enumerate(re.finditer(pattern, text)):
        if idx == occurrence:
            return text.count("\n", 0, m.start()) + 1
    return 1


def _edge_line(text: str, key: str, index: int) -> int:
    key_m = re.search(rf'"{key}"\s*:', text)
    if key_m is None:
        return 1
    tail = text[key_m.end() :]
    for idx, m in enumerate(re.finditer(r"\[\s*\d+\s*,\s*\d+\s*\]", tail)):
        if idx == index:
            return text.count("\n", 0, key_m.end() + m.start()) + 1
    return text.count("\n", 0, key_m.start()) + 1


def parse_graph_json(text: str, source: str = "<graph>") -> Admg:
    """Parse the graph file format, rejecting invariant violations with
    file:line anchored messages."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(f"{source}:{e.lineno}: invalid JSON: {e.msg}") from None
    if not isinstance(raw, dict):
        raise FormatError(f"{source}:1: expected a JSON object")

    def fail(key, msg, occurrence=0):
        line = _line_of(text, rf'"{re.escape(key)}"\s*:', occurrence)
        raise FormatError(f"{source}:{line}: {msg}")

    for key in ("n", "alphabet", "directed", "bidirected"):
        if key not in raw:
            raise FormatError(f"{source}:1: missing required field {key!r}")
    n = raw["n"]
    if not isinstance(n, int) or n <= 0:
        fail("n", "n must be a positive integer")
    names = raw.get("names")
    if names is not None and (not isinstance(names, list) or len(names) != n):
        fail("names", f"names must list exactly {n} identifiers")
    alphabet = raw["alphabet"]
    if not isinstance(alphabet, int) or alphabet < 2:
        fail("alphabet", "alphabet must be an integer >= 2")

    for key in ("directed", "bidirected"):
        edges = raw[key]
        if not isinstance(edges, list):
            fail(key, f"{key} must be a list of [i, j] pairs")
        seen = set()
        for idx, pair in enumerate(edges):
            line = _edge_line(text, key, idx)
            if not (isinstance(pair, list) and len(pair) == 2 and all(isinstance(v, int) for v in pair)):
                raise FormatError(f"{source}:{line}: {key}[{idx}] must be a pair of integers")
            i, j = pair
            if i == j:
                raise FormatError(f"{source}:{line}: {key}[{idx}] is a self-loop on node {i}")
            if not (0 <= i < n and 0 <= j < n):
                raise FormatError(f"{source}:{line}: {key}[{idx}] endpoint out of range [0, {n})")
            if key == "bidirected":
                if i >= j:
                    raise FormatError(
                        f"{source}:{line}: bidirected[{idx}] must be stored as [lo, hi] with lo < hi"
                    )
                if (i, j) in seen:
                    raise FormatError(f"{source}:{line}: duplicate bidirected edge [{i}, {j}]")
                seen.add((i, j))
    try:
        return Admg(
            node_count=n,
            names=names,
            alphabet_size=alphabet,
            directed_edges=[tuple(e) for e in raw["directed"]],
            bidirected_edges=[tuple(e) for e in raw["bidirected"]],
        )
    except GraphCycleError as e:
        i, j = e.edge
        idx = raw["directed"].index([i, j]) if [i, j] in raw["directed"] else 0
        line = _edge_line(text, "directed", idx)
        raise FormatError(f"{source}:{line}: directed edges contain a cycle through {i} -> {j}") from None
    except ValueError as e:
        raise FormatError(f"{source}:1: {e}") from None


def load_graph(path: str) -> Admg:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_graph_json(fh.read(), source=path)


def save_graph(g: Admg, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(graph_to_json(g))
