import math

import numpy as np
import pytest

from dolearn.graph import Admg, c_components, parent_sets, random_admg
from dolearn.identify import conditional_table, exact_dx
from dolearn.intervene import model_to_dense
from dolearn.learn import (
    BayesNetModel,
    LearnConfig,
    add_one_estimator,
    amplify,
    default_parameters,
    estimate_alpha,
    exact_ccomponent_model,
    exact_do_model,
    learn_ccomponent_intervention,
    learn_do,
    learn_observational,
    learned_model_to_json,
    parse_learned_model_json,
    practical_threshold,
    save_learned_model,
)
from dolearn.model import (
    DenseDistribution,
    SampleBatch,
    exact_observational,
    kl_distance,
    random_cbn,
    sample_observational,
    tv_distance,
)


class TestAddOne:
    def test_direct_formula(self):
        assert np.allclose(add_one_estimator([3, 1]), [4 / 6, 2 / 6])

    def test_all_zero_is_uniform(self):
        assert np.allclose(add_one_estimator([0, 0, 0]), 1 / 3)

    def test_consistency_limit(self):
        row = add_one_estimator([10**9, 0, 0])
        assert row[0] > 1 - 1e-8

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            add_one_estimator([-1, 2])


class TestDefaultParameters:
    def test_threshold_value(self):
        # ceil(10 ln(6 * 2^6)) = ceil(59.506...) = 60
        plan = default_parameters(6, 2, 2, 2, alpha=0.1, epsilon=0.1)
        assert plan.t == 60
        assert practical_threshold(6, 2, 2, 2) == 60

    def test_doubling_n_slightly_more_than_doubles_m(self):
        a = default_parameters(6, 2, 2, 2, 0.1, 0.1).m
        b = default_parameters(12, 2, 2, 2, 0.1, 0.1).m
        assert 2 * a < b < 3 * a

    def test_alpha_scaling_is_two_to_the_k(self):
        for k in (1, 2, 3):
            a = default_parameters(6, 2, k, 2, 0.2, 0.1).m
            b = default_parameters(6, 2, k, 2, 0.1, 0.1).m
            assert b / a == pytest.approx(2**k, rel=1e-6)

    def test_headline_reported(self):
        plan = default_parameters(6, 2, 2, 2, 0.1, 0.1)
        assert plan.headline_m == math.ceil(2**8 * 6 / (0.1**2 * 0.1**2))


def reference_instance(seed, smoothing=0.25, n=6):
    g = random_admg(n, 2, 2, seed=seed, identifiable_for=0)
    cbn = random_cbn(g, smoothing=smoothing, seed=seed + 100)
    return g, cbn


class TestLearnObservational:
    def test_rows_converge_to_truth(self):
        g, cbn = reference_instance(1)
        batch = sample_observational(cbn, 1_000_000, seed=0)
        model = learn_observational(batch, g)
        p = exact_observational(cbn)
        worst = 0.0
        for (node, assignment), row in model.cpts.items():
            z = model.conditioning_sets[node]
            truth = conditional_table(p, node, z)[assignment]
            worst = max(worst, 0.5 * np.abs(row - truth).sum())
        assert worst <= 0.01

    def test_threshold_above_m_gives_all_uniform(self):
        g, cbn = reference_instance(2)
        batch = sample_observational(cbn, 100, seed=0)
        model = learn_observational(batch, g, t=101)
        assert not model.cpts
        dense = model_to_dense(model, keep=range(6))
        assert np.allclose(dense.mass, 1.0 / dense.mass.size)

    def test_product_uniform_truth(self):
        g, cbn = reference_instance(3, smoothing=1.0)
        batch = sample_observational(cbn, 100_000, seed=1)
        model = learn_observational(batch, g)
        dense = model_to_dense(model, keep=range(6))
        uniform = DenseDistribution(tuple(range(6)), (2,) * 6, np.full(64, 1 / 64))
        assert tv_distance(dense, uniform) <= 0.05


class TestLearnDo:
    def test_childless_x_matches_observational(self):
        g = Admg(4, directed_edges=[(1, 2), (2, 3)], bidirected_edges=[(0, 1)])
        cbn = random_cbn(g, smoothing=0.25, seed=5)
        batch = sample_observational(cbn, 5000, seed=2)
        do_model = learn_do(batch, g, 0, 1, LearnConfig(t=1))
        obs_model = learn_observational(batch, g, t=1)
        assert do_model.substituted_nodes == frozenset()
        assert do_model.conditioning_sets == obs_model.conditioning_sets
        assert set(do_model.cpts) == set(obs_model.cpts)
        for key, row in do_model.cpts.items():
            assert np.array_equal(row, obs_model.cpts[key])

    def test_uniform_truth_at_moderate_budget(self):
        g, cbn = reference_instance(4, smoothing=1.0)
        batch = sample_observational(cbn, 100_000, seed=3)
        model = learn_do(batch, g, 0, 1)
        from dolearn.model import exact_interventional

        oracle = exact_interventional(cbn, 0, 1)
        dense = model_to_dense(model, keep=[v for v in range(6) if v != 0])
        assert tv_distance(oracle, dense) <= 0.05

    def test_three_node_sketch_converges(self):
        # Z uniform, X flips Z w.p. alpha, Y biased only when X != Z:
        # the learned interventional P(Y=1 | do(X=1)) approaches (1+eps)/2.
        from dolearn.experiments import HardInstanceSpec, build_hard_instance

        eps = 0.2
        cbn = build_hard_instance(HardInstanceSpec(1, 0.3, eps, ((1,),)))
        batch = sample_observational(cbn, 200_000, seed=4)
        model = learn_do(batch, cbn.graph, 1, 1, LearnConfig(t=10))
        dense = model_to_dense(model, keep=[2])
        assert dense.mass[1] == pytest.approx((1 + eps) / 2, abs=0.01)

    def test_exact_substitution_reproduces_exact_dx(self):
        for seed in range(8):
            g, cbn = reference_instance(seed)
            p = exact_observational(cbn)
            model = exact_do_model(p, g, 0, 1)
            dense = model_to_dense(model, keep=range(6))
            dx = exact_dx(p, g, 0, 1)
            assert np.max(np.abs(dense.mass - dx.mass)) <= 1e-12

    def test_kl_local_subadditivity(self):
        # kl(true joint, learned joint) is bounded by the weighted sum of
        # per-row divergences, within numeric slack.
        g, cbn = reference_instance(6)
        p = exact_observational(cbn)
        dx = exact_dx(p, g, 0, 1)
        batch = sample_observational(cbn, 20_000, seed=9)
        model = learn_do(batch, g, 0, 1, LearnConfig(t=20))
        learned = model_to_dense(model, keep=range(6))
        lhs = kl_distance(dx, learned)
        rhs = 0.0
        for node in model.order:
            z = model.conditioning_sets[node]
            weights = dx.marginal(z).as_array() if z else np.array(1.0)
            true_rows = conditional_table(dx, node, z)
            flat_w = np.atleast_1d(weights.reshape(-1))
            flat_rows = true_rows.reshape(-1, model.alphabet_size)
            for idx in range(flat_rows.shape[0]):
                assignment = []
                rem = idx
                for _ in z:
                    assignment.append(rem % model.alphabet_size)
                    rem //= model.alphabet_size
                assignment = tuple(reversed(assignment))
                learned_row = model.row(node, assignment)
                tr = flat_rows[idx]
                mask = tr > 0
                rhs += flat_w[idx] * float(np.sum(tr[mask] * np.log(tr[mask] / learned_row[mask])))
        assert lhs <= rhs + 1e-9

    def test_diagnostics_count_uniform_fallbacks(self):
        g, cbn = reference_instance(7)
        batch = sample_observational(cbn, 50, seed=0)
        model = learn_do(batch, g, 0, 1, LearnConfig(t=1000))
        assert model.diagnostics["below_threshold_rows"] > 0


class TestLearnComponentIntervention:
    def test_whole_vertex_set_matches_observational(self):
        g, cbn = reference_instance(8)
        batch = sample_observational(cbn, 5000, seed=5)
        got = learn_ccomponent_intervention(batch, g, range(6), {}, LearnConfig(t=3))
        want = learn_observational(batch, g, t=3)
        assert set(got.cpts) == set(want.cpts)
        for key, row in got.cpts.items():
            assert np.allclose(row, want.cpts[key])

    def test_exact_inputs_match_product_formula(self):
        # P_{ybar}(y) = prod_i P(v_i | z_in, ybar on z_out) evaluated pointwise.
        g = Admg(4, directed_edges=[(0, 1), (1, 2), (2, 3)], bidirected_edges=[(1, 3)])
        cbn = random_cbn(g, smoothing=0.3, seed=11)
        p = exact_observational(cbn)
        y = c_components(g).component_containing(1)  # {1, 3}
        _, _, pa_minus = parent_sets(g, y)
        ybar = {v: 1 for v in pa_minus}
        model = exact_ccomponent_model(p, g, y, ybar)
        import itertools

        for vals in itertools.product(range(2), repeat=len(y)):
            assignment = dict(zip(sorted(y), vals))
            expected = 1.0
            from dolearn.graph import effective_parents

            zs = effective_parents(g)
            for node in sorted(y):
                z = zs[node]
                tbl = conditional_table(p, node, z)
                key = tuple(assignment[u] if u in assignment else ybar[u] for u in z)
                expected *= tbl[key + (assignment[node],)]
            assert model.joint_probability(assignment) == pytest.approx(expected, abs=1e-12)

    def test_observational_interventional_mass_inequality(self):
        # P(ybar_1, y) >= alpha^{|Pa-(Y)|} P_{ybar_1}(y) on positive models.
        import itertools

        for seed in range(8):
            g, cbn = reference_instance(seed, smoothing=0.3, n=5)
            p = exact_observational(cbn)
            part = c_components(g)
            y = part.component_containing(4)
            _, _, pa_minus = parent_sets(g, y)
            from dolearn.model import strong_positivity_margin

            _, y_pa_plus, _ = parent_sets(g, sorted(set(range(5)) - set(y)))
            alpha = strong_positivity_margin(p, y_pa_plus)
            for ybar_vals in itertools.product(range(2), repeat=len(pa_minus)):
                ybar = dict(zip(sorted(pa_minus), ybar_vals))
                model = exact_ccomponent_model(p, g, y, ybar)
                for yvals in itertools.product(range(2), repeat=len(y)):
                    assignment = dict(zip(sorted(y), yvals))
                    inter = model.joint_probability(assignment)
                    joint = p.marginal(sorted(set(y) | set(pa_minus))).probability({**assignment, **ybar})
                    assert joint >= alpha ** len(pa_minus) * inter - 1e-12

    def test_rejects_partial_component(self):
        g = Admg(3, bidirected_edges=[(0, 1)])
        batch = SampleBatch((0, 1, 2), np.zeros((5, 3), dtype=int))
        with pytest.raises(ValueError, match="splits"):
            learn_ccomponent_intervention(batch, g, {0}, {}, LearnConfig(t=1))

    def test_rejects_wrong_assignment_shape(self):
        g = Admg(3, directed_edges=[(0, 1)], bidirected_edges=[(1, 2)])
        batch = SampleBatch((0, 1, 2), np.zeros((5, 3), dtype=int))
        with pytest.raises(ValueError, match="outside parents"):
            learn_ccomponent_intervention(batch, g, {1, 2}, {}, LearnConfig(t=1))


class TestAmplify:
    def test_single_rep_is_identity(self):
        g, cbn = reference_instance(9)
        batch = sample_observational(cbn, 3000, seed=7)
        holdout = sample_observational(cbn, 500, seed=8)

        def learner(part, seed):
            return learn_do(part, g, 0, 1, LearnConfig(t=10))

        direct = learner(batch, 0)
        chosen = amplify(learner, batch, 1, holdout)
        assert learned_model_to_json(chosen) == learned_model_to_json(direct)

    def test_corrupted_candidate_never_selected(self):
        from dolearn.model import exact_interventional

        g, cbn = reference_instance(10)
        oracle = exact_interventional(cbn, 0, 1)
        keep = [v for v in range(6) if v != 0]
        for trial in range(50):
            batch = sample_observational(cbn, 10_000, seed=100 + trial)
            holdout = sample_observational(cbn, 2_000, seed=900 + trial)
            produced = []

            def learner(part, seed):
                model = learn_do(part, g, 0, 1, LearnConfig(t=10))
                if len(produced) == 2:  # corrupt the third candidate: shuffle its rows
                    rng = np.random.default_rng(trial)
                    keys = list(model.cpts)
                    rows = [model.cpts[k] for k in keys]
                    perm = rng.permutation(len(rows))
                    model.cpts.update({k: rows[p] for k, p in zip(keys, perm)})
                produced.append(model)
                return model

            chosen = amplify(learner, batch, 5, holdout, seed=trial)
            # Ranking by the exact metric confirms the corruption is the worst
            # candidate, and selection must never pick it.
            tvs = [tv_distance(oracle, model_to_dense(m, keep)) for m in produced]
            assert np.argmax(tvs) == 2
            assert chosen is not produced[2]

    def test_selection_invariant_to_duplicates(self):
        g, cbn = reference_instance(11)
        batch = sample_observational(cbn, 3000, seed=12)
        holdout = sample_observational(cbn, 600, seed=13)
        models = []

        def learner(part, seed):
            model = learn_do(part, g, 0, 1, LearnConfig(t=10))
            models.append(model)
            return model

        chosen = amplify(learner, batch, 3, holdout)
        idx = next(i for i, m in enumerate(models) if m is chosen)

        # Re-run with candidate list [c0, c1, c2, winner, winner]: still the winner.
        seq = models + [models[idx], models[idx]]
        calls = {"i": 0}

        def learner_five(part, seed):
            m = seq[calls["i"]]
            calls["i"] += 1
            return m

        chosen5 = amplify(learner_five, batch, 5, holdout)
        assert learned_model_to_json(chosen5) == learned_model_to_json(models[idx])

    def test_insufficient_samples(self):
        g, cbn = reference_instance(12)
        batch = sample_observational(cbn, 2, seed=1)

        def learner(part, seed):
            return learn_do(part, g, 0, 1)

        with pytest.raises(ValueError, match="slice"):
            amplify(learner, batch, 5, batch)

    def test_even_reps_rejected(self):
        g, cbn = reference_instance(12)
        batch = sample_observational(cbn, 100, seed=1)
        with pytest.raises(ValueError, match="odd"):
            amplify(lambda b, s: None, batch, 4, batch)


class TestEstimateAlpha:
    def test_matches_empirical_margin(self):
        g, cbn = reference_instance(13)
        batch = sample_observational(cbn, 20_000, seed=3)
        a = estimate_alpha(batch, g, 0)
        assert 0.0 <= a <= 1.0
        p = exact_observational(cbn)
        part = c_components(g)
        _, pa_plus, _ = parent_sets(g, part.component_containing(0))
        from dolearn.model import strong_positivity_margin

        truth = strong_positivity_margin(p, pa_plus)
        assert a == pytest.approx(truth, abs=0.05)


class TestLearnedModelFile:
    def test_round_trip_bit_exact(self, tmp_path):
        g, cbn = reference_instance(14)
        batch = sample_observational(cbn, 2000, seed=2)
        model = learn_do(batch, g, 0, 1, LearnConfig(t=10))
        path = tmp_path / "learned.json"
        save_learned_model(model, str(path))
        text = path.read_text()
        back = parse_learned_model_json(text)
        assert learned_model_to_json(back) == text
        assert back.order == model.order
        assert back.x_substitution == model.x_substitution
        assert back.substituted_nodes == model.substituted_nodes
        for key, row in model.cpts.items():
            assert np.array_equal(back.cpts[key], row)

    def test_invariant_rejection(self):
        with pytest.raises(ValueError, match="predecessors"):
            BayesNetModel(
                order=(0, 1),
                conditioning_sets={0: (1,), 1: ()},
                alphabet_size=2,
                cpts={},
            )

    def test_substituted_node_cannot_condition_on_x(self):
        with pytest.raises(ValueError, match="still conditions"):
            BayesNetModel(
                order=(0, 1),
                conditioning_sets={0: (), 1: (0,)},
                alphabet_size=2,
                cpts={},
                x_substitution=(0, 1),
                substituted_nodes=frozenset({1}),
            )
