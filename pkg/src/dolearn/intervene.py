"""Interventional artifacts: evaluate and sample the learned distribution,
the split per-component evaluator, and marginal estimation via reduction.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import IdentifiabilityError, StateSpaceError
from .graph import (
    Admg,
    c_components,
    check_identifiability,
    parent_sets,
    prune_to_ancestors,
    reduce_for_marginal,
    topological_order,
)
from .identify import _spread
from .learn import (
    BayesNetModel,
    LearnConfig,
    exact_ccomponent_model,
    learn_ccomponent_intervention,
    learn_do,
)
from .model import DenseDistribution, SampleBatch, STATE_SPACE_LIMIT, empirical_marginal

ENUMERATION_LIMIT = 2**16


@dataclass(frozen=True, eq=False)
class InterventionalModel:
    """A learned substituted net together with the intervention it encodes."""

    dx: BayesNetModel
    x_node: int
    x_val: int

    def __post_init__(self):
        if self.dx.x_substitution != (self.x_node, self.x_val):
            raise ValueError("model's substitution does not match the declared intervention")


def evaluate_do(im: InterventionalModel, w: dict) -> float:
    """Probability of a full assignment to the non-intervened variables:
    the substituted joint summed over the intervened coordinate."""
    total = 0.0
    assignment = dict(w)
    for x_prime in range(im.dx.alphabet_size):
        assignment[im.x_node] = x_prime
        total += im.dx.joint_probability(assignment)
    return total


def sample_do(im: InterventionalModel, count: int, seed: int = 0) -> SampleBatch:
    """Ancestral draws from the substituted net with the intervened column
    dropped afterwards."""
    if count < 1:
        raise ValueError("count must be at least 1")
    model = im.dx
    rng = np.random.default_rng(seed)
    width = max(model.order) + 1
    values = np.zeros((count, width), dtype=np.int64)
    for node in model.order:
        z = model.conditioning_sets[node]
        idx = np.zeros(count, dtype=np.int64)
        for u in z:
            idx = idx * model.alphabet_size + values[:, u]
        tbl = model.table(node)
        cdf = np.cumsum(tbl[idx], axis=1)
        vals = (rng.random(count)[:, None] > cdf).sum(axis=1)
        values[:, node] = np.minimum(vals, model.alphabet_size - 1)
    keep = [v for v in model.order if v != im.x_node]
    return SampleBatch(tuple(keep), values[:, keep])


def model_to_dense(model: BayesNetModel, keep: Iterable[int]) -> DenseDistribution:
    """Exact enumeration of the model's joint, marginalized to keep."""
    keep = set(int(v) for v in keep)
    if keep - set(model.order):
        raise ValueError(f"unknown variables {sorted(keep - set(model.order))}")
    ids = tuple(sorted(model.order))
    sizes = tuple(model.alphabet_size for _ in ids)
    total = 1
    for s in sizes:
        total *= s
    if total > STATE_SPACE_LIMIT:
        raise StateSpaceError(f"product space of {total} states exceeds the {STATE_SPACE_LIMIT} guard")
    joint = np.ones(sizes if sizes else (1,))
    for node in model.order:
        z = model.conditioning_sets[node]
        tbl = model.table(node).reshape(
            tuple(model.alphabet_size for _ in z) + (model.alphabet_size,)
        )
        joint = joint * _spread(tbl, z + (node,), ids, sizes)
    dense = DenseDistribution(ids, sizes, joint.reshape(-1))
    return dense.marginal(keep)


@dataclass(frozen=True, eq=False)
class SplitDoEvaluator:
    """Per-component evaluator: one learned table for x's own confounded
    component per assignment of its outside parents, and one for everything
    else per assignment of the component's other members."""

    x_node: int
    x_val: int
    alphabet_size: int
    head_vars: tuple[int, ...]  # x's component minus x
    border_vars: tuple[int, ...]  # outside parents of x's component
    tail_vars: tuple[int, ...]  # the rest
    head_tables: dict
    tail_tables: dict

    def __post_init__(self):
        if len(self.head_tables) != self.alphabet_size ** len(self.border_vars):
            raise ValueError("one head table per border assignment required")
        if len(self.tail_tables) != self.alphabet_size ** len(self.head_vars):
            raise ValueError("one tail table per head assignment required")


def _split_vars(g: Admg, x_node: int):
    part = c_components(g)
    s1 = tuple(part.component_containing(x_node))
    _, _, pa_minus = parent_sets(g, s1)
    head = tuple(v for v in s1 if v != x_node)
    border = tuple(sorted(pa_minus))
    tail = tuple(v for v in range(g.node_count) if v not in set(s1) and v not in pa_minus)
    return s1, head, border, tail


def _build_split(g: Admg, x_node: int, x_val: int, component_model) -> SplitDoEvaluator:
    ident = check_identifiability(g, x_node)
    if not ident:
        raise IdentifiabilityError(
            f"child {ident.witness} of {x_node} shares a confounded component with it"
        )
    s1, head, border, tail = _split_vars(g, x_node)
    if g.alphabet_size ** len(head) > ENUMERATION_LIMIT or g.alphabet_size ** len(border) > ENUMERATION_LIMIT:
        raise StateSpaceError("component or border assignment space exceeds the enumeration guard")
    rest = tuple(sorted(set(range(g.node_count)) - set(s1)))
    _, _, rest_pa_minus = parent_sets(g, rest)

    tail_tables = {}
    for a in itertools.product(range(g.alphabet_size), repeat=len(head)):
        context = dict(zip(head, a))
        context[x_node] = x_val
        pinned = {v: context[v] for v in rest_pa_minus}
        tail_tables[a] = component_model(rest, pinned)
    head_tables = {}
    for b in itertools.product(range(g.alphabet_size), repeat=len(border)):
        head_tables[b] = component_model(s1, dict(zip(border, b)))
    return SplitDoEvaluator(
        x_node=x_node,
        x_val=x_val,
        alphabet_size=g.alphabet_size,
        head_vars=head,
        border_vars=border,
        tail_vars=tail,
        head_tables=head_tables,
        tail_tables=tail_tables,
    )


def build_split_evaluator(
    samples: SampleBatch, g: Admg, x_node: int, x_val: int, cfg: Optional[LearnConfig] = None
) -> SplitDoEvaluator:
    """Learn the split evaluator from observational rows."""

    def fit(y_set, pinned):
        return learn_ccomponent_intervention(samples, g, y_set, pinned, cfg)

    return _build_split(g, x_node, x_val, fit)


def build_split_evaluator_exact(p: DenseDistribution, g: Admg, x_node: int, x_val: int) -> SplitDoEvaluator:
    """Split evaluator with exact conditionals substituted for learned rows."""

    def fit(y_set, pinned):
        return exact_ccomponent_model(p, g, y_set, pinned)

    return _build_split(g, x_node, x_val, fit)


def evaluate_split(ev: SplitDoEvaluator, w: dict) -> float:
    """Head table summed over the intervened coordinate times the tail table."""
    a = tuple(w[v] for v in ev.head_vars)
    b = tuple(w[v] for v in ev.border_vars)
    head_model = ev.head_tables[b]
    tail_model = ev.tail_tables[a]
    head_assignment = {v: w[v] for v in ev.head_vars}
    head_val = 0.0
    for x_prime in range(ev.alphabet_size):
        head_assignment[ev.x_node] = x_prime
        head_val += head_model.joint_probability(head_assignment)
    tail_val = tail_model.joint_probability({v: w[v] for v in ev.border_vars + ev.tail_vars})
    return head_val * tail_val


def generator_sample_count(alphabet_size: int, f_size: int, epsilon: float) -> int:
    """Draws needed for an empirical marginal over f at accuracy epsilon."""
    return math.ceil(10.0 * alphabet_size**f_size / epsilon**2)


def learn_marginal_do(
    samples: SampleBatch,
    g: Admg,
    x_node: int,
    x_val: int,
    f: Iterable[int],
    cfg: Optional[LearnConfig] = None,
    via_generator: bool = False,
) -> DenseDistribution:
    """Marginal interventional distribution over the target set f.

    Default route: prune to the ancestors of f and x, project everything else
    out, learn the substituted net on the small graph, and enumerate its
    marginal. Generator route (flag): learn on the full graph, draw from the
    sampler, and return the empirical marginal over f.
    """
    cfg = cfg or LearnConfig()
    f = tuple(sorted(set(int(v) for v in f)))
    if x_node in f:
        raise ValueError("f must not contain the intervened variable")
    for v in f:
        if not 0 <= v < g.node_count:
            raise ValueError(f"node index {v} out of range")

    if via_generator:
        model = learn_do(samples, g, x_node, x_val, cfg)
        im = InterventionalModel(model, x_node, x_val)
        count = generator_sample_count(g.alphabet_size, len(f), cfg.epsilon)
        draw_seed = int(np.random.SeedSequence([cfg.seed, 1]).generate_state(1)[0])
        draws = sample_do(im, count, seed=draw_seed)
        return empirical_marginal(draws, f, g.alphabet_size)

    pruned = prune_to_ancestors(g, set(f) | {x_node})
    to_pruned = {v: i for i, v in enumerate(pruned.nodes)}
    reduction = reduce_for_marginal(pruned.admg, to_pruned[x_node], [to_pruned[v] for v in f])
    h = reduction.admg
    orig_w = tuple(pruned.nodes[i] for i in reduction.nodes)
    to_h = {v: i for i, v in enumerate(orig_w)}

    vals = samples.by_node()
    h_cols = tuple(topological_order(h))
    batch = SampleBatch(h_cols, vals[:, [orig_w[c] for c in h_cols]])
    model = learn_do(batch, h, to_h[x_node], x_val, cfg)
    dense = model_to_dense(model, keep=[to_h[v] for v in f])
    return dense.relabel({to_h[v]: v for v in f})


def write_report(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")
