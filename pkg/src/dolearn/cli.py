"""Command-line surface: reproducible, file-based workflows.

Exit codes: 0 ok, 2 usage, 3 input format, 4 contract violation
(identifiability, positivity, guards), 5 internal error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from decimal import Decimal
from typing import Optional, Sequence

import numpy as np

from . import experiments as exp
from .errors import (
    FormatError,
    GenerationError,
    GraphCycleError,
    IdentifiabilityError,
    ReductionInvariantError,
    NormalizationError,
    PositivityError,
    StateSpaceError,
)
from .graph import Admg, c_components, load_graph, random_admg, save_graph
from .intervene import (
    InterventionalModel,
    evaluate_do,
    learn_marginal_do,
    model_to_dense,
    sample_do,
    write_report,
)
from .learn import (
    LearnConfig,
    default_parameters,
    estimate_alpha,
    learn_do,
    load_learned_model,
    practical_threshold,
    save_learned_model,
)
from .model import (
    DenseDistribution,
    exact_interventional,
    load_model,
    load_samples,
    random_cbn,
    sample_observational,
    save_model,
    save_samples,
    tv_distance,
)

CONTRACT_ERRORS = (
    IdentifiabilityError,
    PositivityError,
    StateSpaceError,
    NormalizationError,
    ReductionInvariantError,
    GraphCycleError,
    GenerationError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def format_significant(x: float, digits: int = 12) -> str:
    """Fixed-point decimal with the given number of significant digits."""
    return format(Decimal(f"{x:.{digits - 1}e}"), "f")


def parse_assignment(text: str, names: Sequence[str], alphabet_size: int) -> list[int]:
    """Parse "a=0,b=1" into symbol values ordered like names; every listed
    name must appear exactly once."""
    values: dict[str, int] = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise UsageError(f"malformed assignment term {part!r}")
        name, _, raw = part.partition("=")
        name = name.strip()
        if name not in names:
            raise UsageError(f"unknown variable name {name!r}")
        if name in values:
            raise UsageError(f"duplicate assignment to {name!r}")
        try:
            val = int(raw)
        except ValueError:
            raise UsageError(f"non-integer value for {name!r}") from None
        if not 0 <= val < alphabet_size:
            raise UsageError(f"value {val} for {name!r} outside alphabet [0, {alphabet_size})")
        values[name] = val
    missing = [n for n in names if n not in values]
    if missing:
        raise UsageError(f"missing assignment for {', '.join(missing)}")
    return [values[n] for n in names]


def _dense_to_json(dense: DenseDistribution, names: Optional[Sequence[str]] = None) -> str:
    payload = {
        "variables": list(dense.variable_ids),
        "names": list(names) if names is not None else None,
        "domain_sizes": list(dense.domain_sizes),
        "mass": dense.mass.tolist(),
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _load_dense(path: str) -> DenseDistribution:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}:{e.lineno}: invalid JSON: {e.msg}") from None
    try:
        return DenseDistribution(
            tuple(raw["variables"]), tuple(raw["domain_sizes"]), np.asarray(raw["mass"], dtype=float)
        )
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{path}:1: invalid distribution: {e}") from None


def _node(g: Admg, spec) -> int:
    try:
        return g.node_index(spec)
    except ValueError as e:
        raise UsageError(str(e)) from None


def _check_symbol(g: Admg, val: int) -> int:
    if not 0 <= val < g.alphabet_size:
        raise UsageError(f"value {val} outside alphabet [0, {g.alphabet_size})")
    return val


def _resolve_budget(args, g: Admg, samples, x_node: int):
    """(m_used, t, alpha_report) from either explicit --m/--t or the
    worst-case formulas driven by --epsilon."""
    part = c_components(g)
    k = part.max_size
    d = g.max_in_degree
    n = g.node_count
    alpha_est = None
    floored = False
    if args.m is not None:
        m_requested = args.m
        t = args.t if args.t is not None else practical_threshold(n, g.alphabet_size, k, d)
    else:
        alpha = args.alpha
        if alpha is None:
            alpha_est = estimate_alpha(samples, g, x_node)
            alpha = alpha_est
            if alpha <= 0.0:
                alpha = 1.0 / (2.0 * samples.size)
                floored = True
            print(
                f"warning: strong-positivity parameter not supplied; using empirical estimate {alpha:.6g}",
                file=sys.stderr,
            )
        plan = default_parameters(n, g.alphabet_size, k, d, alpha, args.epsilon)
        m_requested = plan.m
        t = args.t if args.t is not None else plan.t
    m_used = min(m_requested, samples.size)
    return m_requested, m_used, t, alpha_est, floored


def _cmd_gen_graph(args) -> int:
    g = random_admg(
        n=args.nodes,
        max_in_degree=args.in_degree,
        max_component=args.ccomp_size,
        alphabet_size=args.alphabet,
        seed=args.seed,
        identifiable_for=args.x_var,
    )
    save_graph(g, args.out)
    return 0


def _cmd_gen_model(args) -> int:
    g = load_graph(args.graph)
    cbn = random_cbn(g, hidden_domain=args.hidden_domain, smoothing=args.smoothing, seed=args.seed)
    save_model(cbn, args.out)
    return 0


def _cmd_sample(args) -> int:
    cbn = load_model(args.model)
    batch = sample_observational(cbn, args.m, seed=args.seed)
    save_samples(batch, cbn.graph.names, args.out)
    return 0


def _cmd_learn_do(args) -> int:
    start = time.perf_counter()
    g = load_graph(args.graph)
    samples = load_samples(args.samples, g.names, g.alphabet_size)
    x_node = _node(g, args.x_var)
    x_val = _check_symbol(g, args.x_val)
    m_requested, m_used, t, alpha_est, floored = _resolve_budget(args, g, samples, x_node)
    cfg = LearnConfig(m=m_used, t=t, epsilon=args.epsilon, seed=args.seed)
    model = learn_do(samples.head(m_used), g, x_node, x_val, cfg)
    save_learned_model(model, args.out)

    tv_exact = None
    if args.truth_model:
        cbn = load_model(args.truth_model)
        oracle = exact_interventional(cbn, x_node, args.x_val)
        keep = [v for v in range(g.node_count) if v != x_node]
        tv_exact = tv_distance(oracle, model_to_dense(model, keep))
    part = c_components(g)
    report = {
        "m": m_used,
        "epsilon": args.epsilon,
        "alpha_est": alpha_est,
        "tv_exact": tv_exact,
        "wallclock_ms": round((time.perf_counter() - start) * 1000.0, 3),
        "seed": args.seed,
        "params": {
            "t": t,
            "m_requested": m_requested,
            "alpha_floored": floored,
            "n": g.node_count,
            "alphabet": g.alphabet_size,
            "k": part.max_size,
            "d": g.max_in_degree,
            "x_var": g.names[x_node],
            "x_val": args.x_val,
            "diagnostics": model.diagnostics,
        },
    }
    write_report(args.out + ".report.json", report)
    return 0


def _cmd_eval(args) -> int:
    model = load_learned_model(args.learned)
    if model.x_substitution is None:
        raise FormatError(f"{args.learned}:1: model carries no intervention")
    if model.names is None:
        raise FormatError(f"{args.learned}:1: model carries no variable names")
    x_node, x_val = model.x_substitution
    w_nodes = [v for v in model.order if v != x_node]
    w_names = [model.names[v] for v in w_nodes]
    vals = parse_assignment(args.assignment, w_names, model.alphabet_size)
    im = InterventionalModel(model, x_node, x_val)
    p = evaluate_do(im, dict(zip(w_nodes, vals)))
    print(format_significant(p, 12))
    return 0


def _cmd_sample_do(args) -> int:
    model = load_learned_model(args.learned)
    if model.x_substitution is None:
        raise FormatError(f"{args.learned}:1: model carries no intervention")
    x_node, x_val = model.x_substitution
    im = InterventionalModel(model, x_node, x_val)
    batch = sample_do(im, args.m, seed=args.seed)
    save_samples(batch, model.names, args.out)
    return 0


def _cmd_marginal(args) -> int:
    g = load_graph(args.graph)
    samples = load_samples(args.samples, g.names, g.alphabet_size)
    x_node = _node(g, args.x_var)
    x_val = _check_symbol(g, args.x_val)
    targets = [_node(g, s.strip()) for s in args.targets.split(",") if s.strip()]
    if not targets:
        raise UsageError("no target variables given")
    m_requested, m_used, t, _, _ = _resolve_budget(args, g, samples, x_node)
    cfg = LearnConfig(m=m_used, t=t, epsilon=args.epsilon, seed=args.seed)
    dense = learn_marginal_do(
        samples.head(m_used), g, x_node, x_val, targets, cfg, via_generator=args.via_generator
    )
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_dense_to_json(dense, [g.names[v] for v in dense.variable_ids]))
    return 0


def _cmd_tv(args) -> int:
    a = _load_dense(args.dense_a)
    b = _load_dense(args.dense_b)
    print(f"{tv_distance(a, b):.12f}")
    return 0


def _cmd_experiment(args) -> int:
    with open(args.spec, "r", encoding="utf-8") as fh:
        try:
            spec = json.load(fh)
        except json.JSONDecodeError as e:
            raise FormatError(f"{args.spec}:{e.lineno}: invalid JSON: {e.msg}") from None
    kind = spec.get("kind")
    if kind == "convergence":
        cbn = load_model(spec["model"])
        try:
            x_node = cbn.graph.node_index(spec["x_var"])
        except ValueError as e:
            raise FormatError(f"{args.spec}:1: {e}") from None
        cfg = LearnConfig(t=spec["t"]) if "t" in spec else None
        result = exp.convergence_experiment(
            cbn,
            x_node,
            int(spec["x_val"]),
            [int(m) for m in spec["m_grid"]],
            int(spec["trials"]),
            cfg,
            seed=int(spec.get("seed", 0)),
        )
    elif kind == "alpha-sweep":
        result = exp.alpha_sweep_experiment(
            [float(a) for a in spec["alphas"]],
            int(spec["n_effect"]),
            float(spec["epsilon"]),
            int(spec["m"]),
            int(spec["trials"]),
            seed=int(spec.get("seed", 0)),
            t=spec.get("t"),
            confounded=bool(spec.get("confounded", False)),
        )
    else:
        raise FormatError(f"{args.spec}:1: unknown experiment kind {kind!r}")
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(result.to_csv())
    write_report(args.out + ".summary.json", result.summary())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dolearn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-graph", help="random identifiable ADMG")
    p.add_argument("--nodes", type=int, required=True)
    p.add_argument("--in-degree", type=int, required=True)
    p.add_argument("--ccomp-size", type=int, required=True)
    p.add_argument("--alphabet", type=int, default=2)
    p.add_argument("--x-var", type=int, default=0, help="node whose interventions must be identifiable")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_graph)

    p = sub.add_parser("gen-model", help="random ground-truth model on a graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--lambda", dest="smoothing", type=float, default=0.0)
    p.add_argument("--hidden-domain", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_model)

    p = sub.add_parser("sample", help="draw observational samples")
    p.add_argument("--model", required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("learn-do", help="learn the interventional distribution")
    p.add_argument("--graph", required=True)
    p.add_argument("--samples", required=True)
    p.add_argument("--x-var", required=True)
    p.add_argument("--x-val", type=int, required=True)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--t", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--truth-model", default=None, help="optional oracle for the report's exact TV")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_learn_do)

    p = sub.add_parser("eval", help="probability of one assignment under the learned model")
    p.add_argument("--learned", required=True)
    p.add_argument("--assignment", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sample-do", help="draw from the learned interventional model")
    p.add_argument("--learned", required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sample_do)

    p = sub.add_parser("marginal", help="marginal interventional distribution over targets")
    p.add_argument("--graph", required=True)
    p.add_argument("--samples", required=True)
    p.add_argument("--x-var", required=True)
    p.add_argument("--x-val", type=int, required=True)
    p.add_argument("--targets", required=True, help="comma-separated variable names")
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--t", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--via-generator", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_marginal)

    p = sub.add_parser("tv", help="total variation between two stored distributions")
    p.add_argument("--dense-a", required=True)
    p.add_argument("--dense-b", required=True)
    p.set_defaults(func=_cmd_tv)

    p = sub.add_parser("experiment", help="run a scripted experiment")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_experiment)
    return parser


def dispatch(argv: Sequence[str]) -> int:
    # The thread-count variable is accepted for interface stability; every
    # code path is deterministic and single-threaded, so it cannot change
    # any output.
    os.environ.setdefault("DOLEARN_THREADS", "1")
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except SystemExit as e:  # help text path
        return int(e.code or 0)
    try:
        return args.func(args) or 0
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except FormatError as e:
        print(f"input error: {e}", file=sys.stderr)
        return 3
    except CONTRACT_ERRORS as e:
        print(f"contract violation: {e}", file=sys.stderr)
        return 4
    except OSError as e:
        print(f"input error: {e}", file=sys.stderr)
        return 3
    except Exception as e:  # single funnel to exit code 5
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 5


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))
