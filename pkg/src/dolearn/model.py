"""Synthetic ground-truth causal models, exact brute-force oracles, distances.

Hidden structure follows the one-confounder-per-bidirected-edge convention:
each hidden variable is a root with exactly the two endpoints of its edge as
children. Exact operations enumerate the full product space and refuse spaces
above STATE_SPACE_LIMIT cells so the oracle stays honest.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import FormatError, StateSpaceError
from .graph import Admg, parse_graph_json, graph_to_json, topological_order

STATE_SPACE_LIMIT = 2**24


@dataclass(frozen=True, eq=False)
class DenseDistribution:
    """Explicit probability table over a small product space.

    mass is flat and row-major in variable order; variable ids are kept
    ascending by every constructor in this package.
    """

    variable_ids: tuple[int, ...]
    domain_sizes: tuple[int, ...]
    mass: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "variable_ids", tuple(int(v) for v in self.variable_ids))
        object.__setattr__(self, "domain_sizes", tuple(int(s) for s in self.domain_sizes))
        mass = np.asarray(self.mass, dtype=float).reshape(-1)
        object.__setattr__(self, "mass", mass)
        if len(self.variable_ids) != len(self.domain_sizes):
            raise ValueError("variable_ids and domain_sizes length mismatch")
        expected = int(np.prod(self.domain_sizes)) if self.domain_sizes else 1
        if mass.size != expected:
            raise ValueError(f"mass has {mass.size} entries, expected {expected}")
        if mass.min(initial=0.0) < -1e-12:
            raise ValueError("mass must be nonnegative")
        total = float(mass.sum())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"mass sums to {total!r}, not 1")

    def as_array(self) -> np.ndarray:
        return self.mass.reshape(self.domain_sizes)

    def marginal(self, keep: Iterable[int]) -> "DenseDistribution":
        keep = set(int(v) for v in keep)
        axes = tuple(i for i, v in enumerate(self.variable_ids) if v not in keep)
        kept = tuple(v for v in self.variable_ids if v in keep)
        if keep - set(self.variable_ids):
            raise ValueError(f"unknown variables {sorted(keep - set(self.variable_ids))}")
        arr = self.as_array().sum(axis=axes) if axes else self.as_array()
        sizes = tuple(s for i, s in enumerate(self.domain_sizes) if self.variable_ids[i] in keep)
        return DenseDistribution(kept, sizes, arr.reshape(-1))

    def probability(self, assignment: dict) -> float:
        idx = tuple(int(assignment[v]) for v in self.variable_ids)
        return float(self.as_array()[idx])

    def relabel(self, mapping: dict) -> "DenseDistribution":
        """Rename variables; the new ids must preserve the current ordering."""
        new_ids = tuple(int(mapping[v]) for v in self.variable_ids)
        if list(new_ids) != sorted(new_ids):
            raise ValueError("relabeling must preserve ascending id order")
        return DenseDistribution(new_ids, self.domain_sizes, self.mass)


def tv_distance(p: DenseDistribution, q: DenseDistribution) -> float:
    """Half the l1 distance between two distributions on the same space."""
    if p.variable_ids != q.variable_ids or p.domain_sizes != q.domain_sizes:
        raise ValueError("distributions are over different spaces")
    return 0.5 * float(np.abs(p.mass - q.mass).sum())


def kl_distance(p: DenseDistribution, q: DenseDistribution) -> float:
    """KL divergence sum p ln(p/q) with 0 ln 0 = 0; q must cover p's support."""
    if p.variable_ids != q.variable_ids or p.domain_sizes != q.domain_sizes:
        raise ValueError("distributions are over different spaces")
    support = p.mass > 0
    if np.any(q.mass[support] <= 0):
        raise ValueError("q vanishes on the support of p")
    pm = p.mass[support]
    return float(np.sum(pm * np.log(pm / q.mass[support])))


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """Rows of integer symbols; columns are node ids in topological order."""

    columns: tuple[int, ...]
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.int64)
        if data.ndim != 2 or data.shape[1] != len(self.columns):
            raise ValueError("data shape does not match columns")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "columns", tuple(int(c) for c in self.columns))

    @property
    def size(self) -> int:
        return self.data.shape[0]

    def column(self, node: int) -> np.ndarray:
        return self.data[:, self.columns.index(node)]

    def by_node(self) -> np.ndarray:
        """Data rearranged so column j holds node j's symbols; requires the
        columns to cover exactly 0..n-1."""
        n = len(self.columns)
        if sorted(self.columns) != list(range(n)):
            raise ValueError("columns do not cover a full variable range")
        inv = np.empty(n, dtype=np.int64)
        for pos, node in enumerate(self.columns):
            inv[node] = pos
        return self.data[:, inv]

    def head(self, m: int) -> "SampleBatch":
        return SampleBatch(self.columns, self.data[:m])


@dataclass(frozen=True, eq=False)
class NodeCpt:
    """Conditional table of one observable: axes are (observable parents
    ascending, incident hidden variables by edge index, the node itself)."""

    node: int
    obs_parents: tuple[int, ...]
    hidden_parents: tuple[int, ...]
    table: np.ndarray


@dataclass(frozen=True, eq=False)
class GroundTruthCbn:
    """Fully specified synthetic causal model used as simulator and oracle."""

    graph: Admg
    hidden_domain: int
    hidden_priors: tuple[np.ndarray, ...]
    cpts: tuple[NodeCpt, ...]

    def __post_init__(self):
        g = self.graph
        edges = sorted(g.bidirected_edges)
        if self.hidden_domain < 2:
            raise ValueError("hidden_domain must be at least 2")
        if len(self.hidden_priors) != len(edges):
            raise ValueError("one hidden prior per bidirected edge required")
        for prior in self.hidden_priors:
            if prior.shape != (self.hidden_domain,) or abs(prior.sum() - 1.0) > 1e-12:
                raise ValueError("hidden prior rows must sum to 1")
        if len(self.cpts) != g.node_count:
            raise ValueError("one conditional table per observable required")
        for i, cpt in enumerate(self.cpts):
            if cpt.node != i:
                raise ValueError("cpts must be listed by node index")
            expect_hidden = tuple(e for e, (a, b) in enumerate(edges) if i in (a, b))
            if cpt.obs_parents != g.parents(i) or cpt.hidden_parents != expect_hidden:
                raise ValueError(f"table domain of node {i} does not match the graph")
            shape = tuple([g.alphabet_size] * len(cpt.obs_parents)) + tuple(
                [self.hidden_domain] * len(cpt.hidden_parents)
            ) + (g.alphabet_size,)
            if cpt.table.shape != shape:
                raise ValueError(f"table of node {i} has shape {cpt.table.shape}, expected {shape}")
            sums = cpt.table.sum(axis=-1)
            if np.max(np.abs(sums - 1.0)) > 1e-12 or cpt.table.min() < 0:
                raise ValueError(f"rows of node {i} must be distributions")

    @property
    def hidden_count(self) -> int:
        return len(self.hidden_priors)


def random_cbn(g: Admg, hidden_domain: Optional[int] = None, smoothing: float = 0.0, seed: int = 0) -> GroundTruthCbn:
    """Random model on g: rows are normalized unit-exponential draws mixed
    with uniform, so smoothing lower-bounds every entry by smoothing/|domain|."""
    if not 0.0 <= smoothing <= 1.0:
        raise ValueError("smoothing must lie in [0, 1]")
    if hidden_domain is None:
        hidden_domain = g.alphabet_size
    rng = np.random.default_rng(seed)
    edges = sorted(g.bidirected_edges)

    def draw_rows(shape):
        rows = rng.standard_exponential(shape)
        rows /= rows.sum(axis=-1, keepdims=True)
        return (1.0 - smoothing) * rows + smoothing / shape[-1]

    priors = tuple(draw_rows((hidden_domain,)) for _ in edges)
    cpts = []
    for i in range(g.node_count):
        obs = g.parents(i)
        hid = tuple(e for e, (a, b) in enumerate(edges) if i in (a, b))
        shape = tuple([g.alphabet_size] * len(obs)) + tuple([hidden_domain] * len(hid)) + (g.alphabet_size,)
        cpts.append(NodeCpt(i, obs, hid, draw_rows(shape)))
    return GroundTruthCbn(g, hidden_domain, priors, tuple(cpts))


def _sample_rows(tables: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw per row: tables (m, D), u (m,) uniforms."""
    cdf = np.cumsum(tables, axis=1)
    vals = (u[:, None] > cdf).sum(axis=1)
    return np.minimum(vals, tables.shape[1] - 1)


def sample_observational(cbn: GroundTruthCbn, m: int, seed: int = 0) -> SampleBatch:
    """m ancestral draws; hidden columns are discarded."""
    if m < 1:
        raise ValueError("m must be at least 1")
    g = cbn.graph
    rng = np.random.default_rng(seed)
    hidden_vals = []
    for prior in cbn.hidden_priors:
        hidden_vals.append(_sample_rows(np.broadcast_to(prior, (m, prior.size)), rng.random(m)))
    order = topological_order(g)
    values = np.zeros((m, g.node_count), dtype=np.int64)
    for node in order:
        cpt = cbn.cpts[node]
        flat = cpt.table.reshape(-1, g.alphabet_size)
        idx = np.zeros(m, dtype=np.int64)
        for p in cpt.obs_parents:
            idx = idx * g.alphabet_size + values[:, p]
        for h in cpt.hidden_parents:
            idx = idx * cbn.hidden_domain + hidden_vals[h]
        values[:, node] = _sample_rows(flat[idx], rng.random(m))
    return SampleBatch(tuple(order), values[:, order])


def _broadcast_factor(table: np.ndarray, axes: Sequence[int], rank: int, sizes: Sequence[int]) -> np.ndarray:
    """Reshape a factor whose axes live at the given global positions so it
    broadcasts against the full joint array."""
    perm = np.argsort(axes, kind="stable")
    t = np.transpose(table, perm)
    shape = [1] * rank
    for pos, ax in enumerate(sorted(axes)):
        shape[ax] = sizes[ax]
    return t.reshape(shape)


def _full_joint(cbn: GroundTruthCbn, skip_node: Optional[int] = None) -> tuple[np.ndarray, int]:
    """Product of all factors (optionally omitting one node's own factor)
    over the axes (observables 0..n-1, hidden variables after)."""
    g = cbn.graph
    n, h = g.node_count, cbn.hidden_count
    sizes = [g.alphabet_size] * n + [cbn.hidden_domain] * h
    total = 1
    for s in sizes:
        total *= s
    if total > STATE_SPACE_LIMIT:
        raise StateSpaceError(f"product space of {total} states exceeds the {STATE_SPACE_LIMIT} guard")
    rank = n + h
    joint = np.ones(sizes)
    for e, prior in enumerate(cbn.hidden_priors):
        joint = joint * _broadcast_factor(prior, [n + e], rank, sizes)
    for cpt in cbn.cpts:
        if cpt.node == skip_node:
            continue
        axes = list(cpt.obs_parents) + [n + e for e in cpt.hidden_parents] + [cpt.node]
        joint = joint * _broadcast_factor(cpt.table, axes, rank, sizes)
    return joint, n


def exact_observational(cbn: GroundTruthCbn) -> DenseDistribution:
    """Exact observational distribution: hidden variables marginalized out."""
    joint, n = _full_joint(cbn)
    obs = joint.sum(axis=tuple(range(n, joint.ndim))) if joint.ndim > n else joint
    g = cbn.graph
    return DenseDistribution(tuple(range(n)), (g.alphabet_size,) * n, obs.reshape(-1))


def exact_interventional(cbn: GroundTruthCbn, x_node: int, x_val: int) -> DenseDistribution:
    """Truncated factorization: drop x's mechanism, pin x, marginalize hidden.

    This is the oracle; it never consults the identification formulas.
    """
    g = cbn.graph
    if not 0 <= x_val < g.alphabet_size:
        raise ValueError(f"x_val {x_val} outside alphabet")
    joint, n = _full_joint(cbn, skip_node=x_node)
    joint = np.take(joint, x_val, axis=x_node)
    hidden_axes = tuple(range(n - 1, joint.ndim))
    if hidden_axes:
        joint = joint.sum(axis=hidden_axes)
    ids = tuple(v for v in range(n) if v != x_node)
    return DenseDistribution(ids, (g.alphabet_size,) * (n - 1), joint.reshape(-1))


def strong_positivity_margin(p: DenseDistribution, s: Iterable[int]) -> float:
    """Smallest marginal mass over assignments of s; 1.0 when s is empty."""
    s = tuple(sorted(set(int(v) for v in s)))
    if not s:
        return 1.0
    return float(p.marginal(s).mass.min())


# ---------------------------------------------------------------------------
# File formats: model JSON and sample CSV.


def model_to_json(cbn: GroundTruthCbn) -> str:
    payload = {
        "graph": json.loads(graph_to_json(cbn.graph)),
        "hidden_domain": cbn.hidden_domain,
        "hidden_priors": [prior.tolist() for prior in cbn.hidden_priors],
        "cpts": [
            {
                "node": cpt.node,
                "obs_parents": list(cpt.obs_parents),
                "hidden_parents": list(cpt.hidden_parents),
                "table": cpt.table.tolist(),
            }
            for cpt in cbn.cpts
        ],
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def parse_model_json(text: str, source: str = "<model>") -> GroundTruthCbn:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(f"{source}:{e.lineno}: invalid JSON: {e.msg}") from None
    for key in ("graph", "hidden_domain", "hidden_priors", "cpts"):
        if key not in raw:
            raise FormatError(f"{source}:1: missing required field {key!r}")
    g = parse_graph_json(json.dumps(raw["graph"]), source=f"{source}#graph")
    try:
        priors = tuple(np.asarray(p, dtype=float) for p in raw["hidden_priors"])
        cpts = tuple(
            NodeCpt(
                node=entry["node"],
                obs_parents=tuple(entry["obs_parents"]),
                hidden_parents=tuple(entry["hidden_parents"]),
                table=np.asarray(entry["table"], dtype=float),
            )
            for entry in raw["cpts"]
        )
        return GroundTruthCbn(g, int(raw["hidden_domain"]), priors, cpts)
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{source}:1: invalid model: {e}") from None


def load_model(path: str) -> GroundTruthCbn:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_model_json(fh.read(), source=path)


def save_model(cbn: GroundTruthCbn, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(model_to_json(cbn))


def samples_to_csv(batch: SampleBatch, names: Sequence[str]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow([names[c] for c in batch.columns])
    for row in batch.data:
        writer.writerow([int(v) for v in row])
    return out.getvalue()


def parse_samples_csv(text: str, names: Sequence[str], alphabet_size: int, source: str = "<samples>") -> SampleBatch:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError(f"{source}:1: empty sample file") from None
    name_to_id = {name: i for i, name in enumerate(names)}
    if sorted(header) != sorted(names):
        raise FormatError(f"{source}:1: header does not match the graph's variable names")
    columns = tuple(name_to_id[h] for h in header)
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(columns):
            raise FormatError(f"{source}:{lineno}: expected {len(columns)} cells, found {len(row)}")
        try:
            vals = [int(v) for v in row]
        except ValueError:
            raise FormatError(f"{source}:{lineno}: non-integer cell") from None
        for v in vals:
            if not 0 <= v < alphabet_size:
                raise FormatError(f"{source}:{lineno}: symbol {v} outside alphabet [0, {alphabet_size})")
        rows.append(vals)
    if not rows:
        raise FormatError(f"{source}:1: sample file has no rows")
    return SampleBatch(columns, np.asarray(rows, dtype=np.int64))


def load_samples(path: str, names: Sequence[str], alphabet_size: int) -> SampleBatch:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_samples_csv(fh.read(), names, alphabet_size, source=path)


def save_samples(batch: SampleBatch, names: Sequence[str], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(samples_to_csv(batch, names))


def empirical_marginal(batch: SampleBatch, keep: Sequence[int], domain_size: int) -> DenseDistribution:
    """Empirical distribution of the kept columns."""
    keep = tuple(sorted(int(v) for v in keep))
    key = np.zeros(batch.size, dtype=np.int64)
    for v in keep:
        key = key * domain_size + batch.column(v)
    counts = np.bincount(key, minlength=domain_size ** len(keep)).astype(float)
    return DenseDistribution(keep, (domain_size,) * len(keep), counts / batch.size)
