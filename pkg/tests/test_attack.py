import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from costadv.attack import (
    AttackSpec,
    Objective,
    export_jsonl,
    input_rng,
    load_spec,
    maximin_objective,
    objective_maximin,
    objective_targeted_ce,
    pgd_attack,
    pgd_attack_batch,
    project_linf,
    save_spec,
    select_cost_sensitive_target,
    select_random_target,
    targeted_ce_objective,
)
from costadv import harness
from costadv.cost import CostMatrix, build_supercategory_cost_matrix, expected_cost, maximin_simplex_point
from costadv.errors import ValidationError
from costadv.model import Network, forward_logits, init_network, input_gradient, probabilities
from oracles import central_difference


def bias_net(logits, d=3):
    """A network that ignores its input and always outputs ``logits``."""
    logits = np.asarray(logits, dtype=float)
    return Network([np.zeros((d, len(logits)))], [logits], ["identity"])


# ---------------------------------------------------------------- spec


def test_spec_defaults_follow_budget_ratios():
    s = AttackSpec()
    assert s.epsilon == pytest.approx(16 / 255)
    assert s.alpha == pytest.approx(s.epsilon / 10)
    assert s.n_steps == 10 and s.random_init


@pytest.mark.parametrize("kw", [{"epsilon": 0}, {"alpha": -1}, {"n_steps": 0}, {"n_steps": 2.5},
                                {"domain_box": (1.0, 0.0)}, {"temperature": 0}, {"objective": "Nope"}])
def test_spec_validation(kw):
    with pytest.raises((ValidationError, ValueError)):
        AttackSpec(**kw)


def test_spec_json_round_trip(tmp_path):
    spec = AttackSpec(epsilon=0.1, alpha=0.01, n_steps=7, objective=Objective.MAXIMIN, temperature=1.3, seed=9)
    save_spec(spec, tmp_path / "s.json")
    assert load_spec(tmp_path / "s.json") == spec
    (tmp_path / "bad.json").write_text(json.dumps({"epsilon": 0.1, "colour": "red"}))
    with pytest.raises(ValidationError):
        load_spec(tmp_path / "bad.json")


# ---------------------------------------------------------------- target selection


def test_cost_sensitive_target_sensitive_truth(desk):
    cm = desk["cm"]
    sensitive = [b for b in range(10) if cm.entries[:, b].max() == 200]
    rng = np.random.default_rng(0)
    for b in sensitive:
        for _ in range(20):
            a = select_cost_sensitive_target(b, cm, rng)
            assert cm.entries[a, b] == 200


def test_cost_sensitive_target_two_classes():
    assert select_cost_sensitive_target(1, [[0, 3], [1, 0]], np.random.default_rng(0)) == 0


def test_cost_sensitive_target_uniform_ties():
    rng = np.random.default_rng(1)
    cm = CostMatrix.zero_one(5)
    draws = [select_cost_sensitive_target(2, cm, rng) for _ in range(10_000)]
    counts = np.bincount(draws, minlength=5)
    assert counts[2] == 0
    assert chisquare(counts[[0, 1, 3, 4]]).pvalue > 1e-3


def test_random_target_excludes_truth_and_is_uniform():
    rng = np.random.default_rng(2)
    draws = [select_random_target(3, 6, rng) for _ in range(10_000)]
    counts = np.bincount(draws, minlength=6)
    assert counts[3] == 0
    assert chisquare(np.delete(counts, 3)).pvalue > 1e-3


# ---------------------------------------------------------------- objectives


def test_targeted_ce_examples():
    assert objective_targeted_ce(bias_net([0.0, 2000.0, 0.0]), 1.0, np.zeros(3), 1) == 0.0
    assert objective_targeted_ce(bias_net([0.5, 0.5, 0.5, 0.5]), 1.0, np.zeros(3), 2) == pytest.approx(math.log(1 / 4))


def test_targeted_ce_compositional(small_net):
    rng = np.random.default_rng(3)
    for _ in range(20):
        x, t, temp = rng.uniform(size=6), int(rng.integers(5)), float(rng.uniform(0.3, 3))
        ref = math.log(probabilities(forward_logits(small_net, x), temp)[t])
        assert objective_targeted_ce(small_net, temp, x, t) == pytest.approx(ref, abs=1e-12)


def test_maximin_examples(steep3):
    net = bias_net(np.log([0.4, 0.4, 0.2]))
    assert objective_maximin(net, 1.0, steep3, np.zeros(3)) == pytest.approx(12 / 5, abs=1e-12)
    assert objective_maximin(bias_net([0.0, 0.0, 2000.0]), 1.0, steep3, np.zeros(3)) == 0.0


def test_maximin_compositional(small_net):
    rng = np.random.default_rng(4)
    c = rng.uniform(0.5, 5, size=(5, 5))
    np.fill_diagonal(c, 0)
    for _ in range(20):
        x, temp = rng.uniform(size=6), float(rng.uniform(0.3, 3))
        p = probabilities(forward_logits(small_net, x), temp)
        assert objective_maximin(small_net, temp, c, x) == pytest.approx(expected_cost(c, p).min(), abs=1e-12)


def attack_gradient_errors(n_pairs, seed):
    """Worst relative error of both attack objectives against central differences."""
    rng = np.random.default_rng(seed)
    worst, checked = 0.0, 0
    while checked < n_pairs:
        net = init_network([6, 16, 12, 5], int(rng.integers(2**31)))
        for b in net.biases:
            b += rng.normal(scale=0.2, size=b.shape)
        c = rng.uniform(0.5, 10, size=(5, 5))
        np.fill_diagonal(c, 0)
        x = rng.uniform(size=6)
        temp = float(rng.uniform(0.5, 2.0))
        # exclude points near ReLU kinks or near ties of the inner minimum
        h1 = x @ net.weights[0] + net.biases[0]
        h2 = np.maximum(h1, 0) @ net.weights[1] + net.biases[1]
        ec = np.sort(probabilities(forward_logits(net, x), temp) @ c.T)
        if min(np.abs(h1).min(), np.abs(h2).min()) < 1e-3 or ec[1] - ec[0] < 1e-3:
            continue
        for obj in (targeted_ce_objective([int(rng.integers(5))], temp), maximin_objective(c, temp)):
            _, g = input_gradient(net, x[None, :], obj)
            num = central_difference(lambda v: float(obj(forward_logits(net, v[None, :]))[0][0]), x)
            worst = max(worst, np.max(np.abs(g[0] - num)) / max(np.max(np.abs(num)), 1e-8))
        checked += 1
    return worst


def test_attack_objective_gradients_match_finite_differences():
    assert attack_gradient_errors(30, seed=5) < 1e-4


# ---------------------------------------------------------------- projection


def test_projection_examples():
    x0 = np.array([0.5, 0.5])
    assert np.array_equal(project_linf([0.55, 0.45], x0, 0.1), [0.55, 0.45])
    assert np.allclose(project_linf(x0 + 0.2, x0, 0.1), x0 + 0.1)
    assert np.allclose(project_linf([0.95, 0.02], [0.95, 0.05], 0.1), [0.95, 0.02])
    assert np.allclose(project_linf([1.2, -0.3], [0.95, 0.05], 0.1), [1.0, 0.0])


def test_projection_is_nearest_feasible_point():
    rng = np.random.default_rng(6)
    for _ in range(200):
        x0 = rng.uniform(size=4)
        cand = x0 + rng.normal(scale=0.3, size=4)
        eps = float(rng.uniform(0.01, 0.3))
        out = project_linf(cand, x0, eps)
        for i in range(4):
            # feasible interval for coordinate i is the ball slice intersected with the box
            lo, hi = max(x0[i] - eps, 0.0), min(x0[i] + eps, 1.0)
            assert out[i] == pytest.approx(min(max(cand[i], lo), hi), abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=3, max_size=3), st.lists(st.floats(-2, 2), min_size=3, max_size=3),
       st.floats(1e-6, 0.5))
def test_property_projection_idempotent(x0, cand, eps):
    once = project_linf(cand, x0, eps)
    assert np.array_equal(project_linf(once, x0, eps), once)
    assert np.all(np.abs(once - np.asarray(x0)) <= eps + 1e-12)
    assert np.all((once >= 0) & (once <= 1))


# ---------------------------------------------------------------- PGD


def test_tiny_epsilon_leaves_input(desk):
    spec = AttackSpec(epsilon=1e-12, alpha=1e-13, objective=Objective.MAXIMIN)
    res = pgd_attack(desk["net"], desk["x"][0], spec, desk["cm"])
    assert np.max(np.abs(res.x_adv - desk["x"][0])) <= 1e-9


def test_linear_model_one_step_closed_form():
    rng = np.random.default_rng(7)
    w = rng.normal(size=(4, 2))
    net = Network([w], [np.zeros(2)], ["identity"])
    x = np.full(4, 0.5)
    for target in (0, 1):
        spec = AttackSpec(epsilon=0.05, alpha=0.02, n_steps=1, random_init=False)
        res = pgd_attack(net, x, spec, true_label=1 - target)
        assert res.target == target
        expected = np.clip(0.02 * np.sign(w[:, target] - w[:, 1 - target]), -0.05, 0.05)
        assert np.allclose(res.x_adv - x, expected, atol=1e-15)
        big = pgd_attack(net, x, spec.replace(alpha=0.2), true_label=1 - target)
        assert np.allclose(big.x_adv - x, 0.05 * np.sign(w[:, target] - w[:, 1 - target]), atol=1e-15)


@pytest.mark.parametrize("objective", list(Objective))
def test_feasibility_and_trace(desk, objective):
    spec = AttackSpec(objective=objective, seed=1)
    x = desk["x"][:300]
    res = pgd_attack_batch(desk["net"], x, spec, desk["cm"], desk["y"][:300])
    assert res.objective_trace.shape == (300, 11)
    assert np.all(res.linf_norms(x) <= spec.epsilon + 1e-9)
    assert np.all((res.x_adv >= 0) & (res.x_adv <= 1))
    if objective.targeted:
        assert np.all(res.targets != desk["y"][:300])
    else:
        assert np.all(res.targets == -1)


def test_attack_is_deterministic(desk):
    spec = AttackSpec(objective=Objective.RANDOM_TARGET, seed=5)
    a = pgd_attack_batch(desk["net"], desk["x"][:100], spec, true_labels=desk["y"][:100])
    b = pgd_attack_batch(desk["net"], desk["x"][:100], spec, true_labels=desk["y"][:100])
    assert np.array_equal(a.x_adv, b.x_adv) and np.array_equal(a.targets, b.targets)


def test_single_attack_matches_batch_row(desk):
    spec = AttackSpec(objective=Objective.COST_SENSITIVE_TARGET, seed=2)
    batch = pgd_attack_batch(desk["net"], desk["x"][:40], spec, desk["cm"], desk["y"][:40], input_ids=np.arange(40))
    one = pgd_attack(desk["net"], desk["x"][17], spec, desk["cm"], desk["y"][17], input_id=17)
    assert np.array_equal(one.x_adv, batch.x_adv[17])
    # matrix products over a different batch size may round differently in the last bit
    assert np.allclose(one.objective_trace, batch.objective_trace[17], rtol=0, atol=1e-12)
    assert one.target == batch.targets[17]


def test_parallel_matches_serial(desk):
    spec = AttackSpec(objective=Objective.MAXIMIN, seed=3)
    x = desk["x"][:600]
    serial = pgd_attack_batch(desk["net"], x, spec, desk["cm"], jobs=1)
    parallel = pgd_attack_batch(desk["net"], x, spec, desk["cm"], jobs=2)
    assert np.array_equal(serial.x_adv, parallel.x_adv)
    assert np.array_equal(serial.objective_trace, parallel.objective_trace)


def test_result_independent_of_batch_position(desk):
    spec = AttackSpec(objective=Objective.RANDOM_TARGET, seed=4)
    ids = np.arange(100, 400)
    full = pgd_attack_batch(desk["net"], desk["x"][:300], spec, true_labels=desk["y"][:300], input_ids=ids)
    tail = pgd_attack_batch(desk["net"], desk["x"][250:300], spec, true_labels=desk["y"][250:300],
                            input_ids=ids[250:])
    assert np.array_equal(full.x_adv[250:], tail.x_adv)


def test_snapshot_equals_shorter_run(desk):
    spec = AttackSpec(objective=Objective.MAXIMIN, n_steps=20, seed=6)
    long = pgd_attack_batch(desk["net"], desk["x"][:200], spec, desk["cm"], snapshots=[0, 5, 20])
    short = pgd_attack_batch(desk["net"], desk["x"][:200], spec.replace(n_steps=5), desk["cm"])
    assert np.array_equal(long.snapshots[5], short.x_adv)
    assert np.array_equal(long.snapshots[20], long.x_adv)
    assert np.array_equal(long.objective_trace[:, :6], short.objective_trace)


def test_more_steps_do_not_weaken_attacks(desk):
    x = desk["x"][:600]
    for objective in Objective:
        spec = AttackSpec(objective=objective, seed=8)
        ten = pgd_attack_batch(desk["net"], x, spec, desk["cm"], desk["y"][:600])
        hundred = pgd_attack_batch(desk["net"], x, spec.replace(n_steps=100), desk["cm"], desk["y"][:600])
        assert hundred.objective_trace[:, -1].mean() >= ten.objective_trace[:, -1].mean()


def test_endpoint_improvement_on_most_inputs(default_run):
    # the adversarially trained defender of the default experiment, on 1000 held-out inputs
    res, cfg = default_run["result"], default_run["config"]
    _, (x, y), _ = harness.evaluation_split(cfg, res.dataset)
    cm = build_supercategory_cost_matrix(cfg.cost)
    improved = {}
    for objective in Objective:
        out = pgd_attack_batch(res.models[cfg.defender], x[:1000], AttackSpec(objective=objective, seed=9), cm,
                               y[:1000])
        improved[objective.value] = float(np.mean(out.objective_trace[:, -1] > out.objective_trace[:, 0]))
    assert min(improved.values()) >= 0.9, improved


def test_maximin_trace_bounded_by_simplex_value(desk):
    _, bound = maximin_simplex_point(desk["cm"])
    for temp in (1.0, 0.5, 2.0):
        spec = AttackSpec(objective=Objective.MAXIMIN, n_steps=30, temperature=temp, seed=10)
        res = pgd_attack_batch(desk["net"], desk["x"][:500], spec, desk["cm"])
        assert np.all(res.objective_trace <= bound + 1e-6)


def test_pgd_input_validation(desk):
    net, x = desk["net"], desk["x"][:5]
    with pytest.raises(ValidationError):
        pgd_attack_batch(net, x, AttackSpec(objective=Objective.MAXIMIN))
    with pytest.raises(ValidationError):
        pgd_attack_batch(net, x, AttackSpec(objective=Objective.RANDOM_TARGET))
    with pytest.raises(ValidationError):
        pgd_attack_batch(net, x + 2.0, AttackSpec(objective=Objective.MAXIMIN), desk["cm"])
    with pytest.raises(ValidationError):
        pgd_attack_batch(net, x, AttackSpec(objective=Objective.MAXIMIN), CostMatrix.zero_one(3))
    with pytest.raises(ValidationError):
        pgd_attack_batch(net, x, AttackSpec(objective=Objective.MAXIMIN), desk["cm"], snapshots=[11])


def test_jsonl_export(tmp_path, desk):
    x = desk["x"][:20]
    res = pgd_attack_batch(desk["net"], x, AttackSpec(objective=Objective.COST_SENSITIVE_TARGET), desk["cm"],
                           desk["y"][:20], input_ids=np.arange(50, 70))
    export_jsonl(res, x, tmp_path / "a.jsonl")
    recs = [json.loads(line) for line in (tmp_path / "a.jsonl").read_text().splitlines()]
    assert len(recs) == 20
    assert set(recs[0]) == {"input_id", "objective", "target", "final_objective", "linf_norm"}
    assert recs[3]["input_id"] == 53 and recs[3]["objective"] == "CostSensitiveTarget"
    assert recs[3]["target"] == int(res.targets[3])
    assert all(r["linf_norm"] <= 16 / 255 + 1e-9 for r in recs)


def test_input_rng_is_keyed_by_seed_and_id():
    a = input_rng(1, 5).uniform(size=3)
    assert np.array_equal(a, input_rng(1, 5).uniform(size=3))
    assert not np.array_equal(a, input_rng(1, 6).uniform(size=3))
    assert not np.array_equal(a, input_rng(2, 5).uniform(size=3))
