"""Exact identification on dense distributions.

Bridges the observational and interventional worlds: Q-factors of confounded
components, the c-component product formula for P after do(x), and the exact
intervention-substituted joint whose marginal on the other variables is that
same interventional distribution. Conditionals on zero-probability events
raise rather than impute; this layer is the trust anchor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IdentifiabilityError, NormalizationError, PositivityError
from .graph import Admg, c_components, check_identifiability, effective_parents, parent_sets
from .model import DenseDistribution


@dataclass(frozen=True, eq=False)
class QFactor:
    """Interventional factor of one confounded component.

    values is a table over variable_ids (the component plus its parents); for
    each fixing of the parents it is a distribution over the component.
    """

    component: tuple[int, ...]
    variable_ids: tuple[int, ...]
    domain_sizes: tuple[int, ...]
    values: np.ndarray

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.domain_sizes)


def _decode(index: int, sizes) -> tuple[int, ...]:
    out = []
    for s in reversed(sizes):
        out.append(index % s)
        index //= s
    return tuple(reversed(out))


def conditional_table(p: DenseDistribution, child: int, cond: tuple[int, ...]) -> np.ndarray:
    """Exact conditional P(child | cond) as an array over (cond..., child).

    Raises PositivityError naming the first zero-probability conditioning
    assignment encountered.
    """
    ids = tuple(sorted(set(cond) | {child}))
    marg = p.marginal(ids).as_array()
    # Reorder axes to (cond..., child).
    src = {v: i for i, v in enumerate(ids)}
    marg = np.transpose(marg, [src[v] for v in cond] + [src[child]])
    den = marg.sum(axis=-1)
    flat_den = den.reshape(-1)
    zeros = np.flatnonzero(flat_den <= 0.0)
    if zeros.size:
        sizes = tuple(p.domain_sizes[p.variable_ids.index(v)] for v in cond)
        event = dict(zip(cond, _decode(int(zeros[0]), sizes)))
        raise PositivityError(
            f"conditioning event {event} for variable {child} has zero probability"
        )
    return marg / den[..., None]


def _axis_map(ids: tuple[int, ...]) -> dict[int, int]:
    return {v: i for i, v in enumerate(ids)}


def _spread(table: np.ndarray, table_ids, target_ids, target_sizes) -> np.ndarray:
    """Broadcast a factor over table_ids against the target product space."""
    amap = _axis_map(target_ids)
    axes = [amap[v] for v in table_ids]
    perm = np.argsort(axes, kind="stable")
    t = np.transpose(table, perm)
    shape = [1] * len(target_ids)
    for ax in sorted(axes):
        shape[ax] = target_sizes[ax]
    return t.reshape(shape)


def compute_q_factor(p: DenseDistribution, g: Admg, component_index: int) -> QFactor:
    """Q-factor of one confounded component from the observational table.

    Built as the product of the component members' conditionals on their
    effective parents, so by construction it only reads the coordinates of
    the component and its directed parents.
    """
    part = c_components(g)
    comp = part.components[component_index]
    zs = effective_parents(g)
    _, pa_plus, _ = parent_sets(g, comp)
    ids = tuple(sorted(pa_plus))
    sizes = tuple(g.alphabet_size for _ in ids)
    values = np.ones(sizes if sizes else (1,))
    for v in comp:
        tbl = conditional_table(p, v, zs[v])
        values = values * _spread(tbl, zs[v] + (v,), ids, sizes)
    return QFactor(comp, ids, sizes, values.reshape(-1))


def tian_pearl_do(p: DenseDistribution, g: Admg, x_node: int, x_val: int) -> DenseDistribution:
    """Interventional distribution after do(x) via the c-component product.

    The factor of x's own component is summed over the intervened coordinate;
    every other factor is evaluated at it. The output must already normalize;
    a miss beyond 1e-9 raises instead of silently rescaling.
    """
    ident = check_identifiability(g, x_node)
    if not ident:
        raise IdentifiabilityError(
            f"child {ident.witness} of {x_node} shares a confounded component with it"
        )
    if not 0 <= x_val < g.alphabet_size:
        raise ValueError(f"x_val {x_val} outside alphabet")
    part = c_components(g)
    x_comp = part.component_of[x_node]
    w_ids = tuple(v for v in range(g.node_count) if v != x_node)
    w_sizes = tuple(g.alphabet_size for _ in w_ids)
    result = np.ones(w_sizes if w_sizes else (1,))
    for j in range(len(part.components)):
        q = compute_q_factor(p, g, j)
        arr = q.as_array()
        ids = q.variable_ids
        if j == x_comp:
            axis = ids.index(x_node)
            arr = arr.sum(axis=axis)
            ids = tuple(v for v in ids if v != x_node)
        elif x_node in ids:
            axis = ids.index(x_node)
            arr = np.take(arr, x_val, axis=axis)
            ids = tuple(v for v in ids if v != x_node)
        result = result * _spread(arr, ids, w_ids, w_sizes)
    total = float(result.sum())
    if abs(total - 1.0) > 1e-9:
        raise NormalizationError(f"identified distribution sums to {total!r}")
    return DenseDistribution(w_ids, w_sizes, result.reshape(-1))


def exact_dx(p: DenseDistribution, g: Admg, x_node: int, x_val: int) -> DenseDistribution:
    """Exact intervention-substituted joint over all variables.

    Every factor outside x's confounded component that conditions on x has x
    replaced by the constant x_val; all other factors, including x's own, are
    untouched. The marginal over the other variables equals tian_pearl_do.
    """
    ident = check_identifiability(g, x_node)
    if not ident:
        raise IdentifiabilityError(
            f"child {ident.witness} of {x_node} shares a confounded component with it"
        )
    part = c_components(g)
    s1 = set(part.component_containing(x_node))
    zs = effective_parents(g)
    ids = tuple(range(g.node_count))
    sizes = tuple(g.alphabet_size for _ in ids)
    result = np.ones(sizes)
    for v in range(g.node_count):
        z = zs[v]
        tbl = conditional_table(p, v, z)
        if v not in s1 and x_node in z:
            axis = z.index(x_node)
            tbl = np.take(tbl, x_val, axis=axis)
            z = tuple(u for u in z if u != x_node)
        result = result * _spread(tbl, z + (v,), ids, sizes)
    return DenseDistribution(ids, sizes, result.reshape(-1))
