import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from implicit_attacks.bounds import alpha2_star
from implicit_attacks.cps import CpsConfig, attack_cost, build_subproblem, naive_record, run_cps
from implicit_attacks.linprog import OPTIMAL, solve_lp
from implicit_attacks.mdp import ADVERSARY, TabularPolicy, influence_mix, occupancy_bundle, true_gap

from _instances import attack_instance, random_policy

seeds = st.integers(0, 2**32 - 1)


def _x_for(pi, pi0, sub, nv):
    d = (pi.probs - pi0.probs).ravel()
    x = np.zeros(nv)
    x[: sub.n_pi], x[sub.n_pi : 2 * sub.n_pi] = np.maximum(d, 0), np.maximum(-d, 0)
    return x


@given(seeds, seeds, st.sampled_from([1, np.inf]))
def test_cost_is_a_norm_of_row_distances(s1, s2, p):
    rng = np.random.default_rng(s1)
    a, b = random_policy(rng, ADVERSARY, 4, 3), random_policy(np.random.default_rng(s2), ADVERSARY, 4, 3)
    c = random_policy(rng, ADVERSARY, 4, 3)
    assert attack_cost(a, a, p) == 0
    assert attack_cost(a, b, p) == pytest.approx(attack_cost(b, a, p))
    assert attack_cost(a, c, p) <= attack_cost(a, b, p) + attack_cost(b, c, p) + 1e-12
    rows = np.abs(a.probs - b.probs).sum(1)
    assert attack_cost(a, b, p) == pytest.approx(rows.sum() if p == 1 else rows.max())


@given(seeds, st.sampled_from([1.0, 0.6]), st.sampled_from(["ergodic", "general"]))
def test_frozen_margins_are_exact_when_adversary_cannot_steer(seed, iota, mode):
    rng = np.random.default_rng(seed)
    mdp, pi0, target = attack_instance(rng, 3, 3, 2, adv_free=True, ergodic=mode == "ergodic", sparse=mode == "general")
    cur = random_policy(rng, ADVERSARY, 3, 3)
    cfg = CpsConfig(influence=iota, mode=mode)
    bundle = occupancy_bundle(mdp, influence_mix(pi0, cur, iota), target, mode)
    sub = build_subproblem(mdp, cur, pi0, target, bundle, cfg)
    other = random_policy(rng, ADVERSARY, 3, 3)
    for pi in (cur, other):
        x = _x_for(pi, pi0, sub, sub.lp.n_vars)
        lin = sub.lp.b_ub[: len(sub.pairs)] - sub.lp.A_ub[: len(sub.pairs)] @ x
        exact = true_gap(mdp, influence_mix(pi0, pi, iota), target, mode).per_pair_margins
        if mode == "ergodic":
            np.testing.assert_allclose(lin, [exact[k] for k in sub.pairs], atol=1e-9)
        else:
            # occupancies of the extended neighbors are frozen too; exact only at the current point
            if pi is cur:
                np.testing.assert_allclose(lin, [exact[k] for k in sub.pairs], atol=1e-9)


@given(seeds, st.sampled_from(["cps", "cops", "ups"]), st.sampled_from([1, np.inf]))
def test_subproblem_step_stays_in_trust_region(seed, variant, p):
    rng = np.random.default_rng(seed)
    mdp, pi0, target = attack_instance(rng, 3, 2, 2)
    cur = random_policy(rng, ADVERSARY, 3, 2)
    cfg = CpsConfig(delta=0.05, variant=variant, p=p, epsilon=0.1)
    sub = build_subproblem(mdp, cur, pi0, target, occupancy_bundle(mdp, cur, target, "ergodic"), cfg)
    sol = solve_lp(sub.lp)
    assert sol.status == OPTIMAL
    new = pi0.probs + sub.policy(sol.x, cur.probs.shape)
    assert np.abs(new.sum(1) - 1).max() < 1e-9
    assert new.min() > -1e-9
    if variant != "ups":
        assert np.abs(new - cur.probs).max() <= 0.05 + 1e-9
    assert sub.eps_prime(sol.x) <= sub.lp.bounds[2 * sub.n_pi, 1] + 1e-9


@given(seeds)
def test_run_cps_reports_cheapest_verified_iterate(seed):
    rng = np.random.default_rng(seed)
    mdp, pi0, target = attack_instance(rng, 3, 3, 2, adv_free=True)
    a2, _ = alpha2_star(mdp, pi0, target)
    eps = max(a2, 0) / 2 + 1e-3
    cfg = CpsConfig(epsilon=eps, max_iters=40, delta=0.1)
    tr = run_cps(mdp, pi0, target, cfg)
    assert len(tr.records) <= 41
    feas = [r for r in tr.records if r.true_gap >= eps - 1e-9]
    assert tr.feasible == bool(feas)
    if tr.feasible:
        assert tr.best.cost == min(r.cost for r in feas)
        assert true_gap(mdp, tr.best.pi_adv, target, "ergodic").gap >= eps - 1e-9
    for r in tr.records:
        assert r.cost == pytest.approx(attack_cost(r.pi_adv, pi0))
    assert [row[0] for row in tr.to_csv_rows()] == list(range(len(tr.records)))


def test_ups_solves_steerless_instances_in_one_step():
    # with fixed occupancies the LP model is exact, so one unrestricted step reaches the margin
    rng = np.random.default_rng(3)
    for _ in range(5):
        mdp, pi0, target = attack_instance(rng, 4, 3, 2, adv_free=True)
        a2, _ = alpha2_star(mdp, pi0, target)
        if a2 <= 0.02:
            continue
        tr = run_cps(mdp, pi0, target, CpsConfig(epsilon=a2 / 2, variant="ups", max_iters=1, lam=1e3))
        assert tr.feasible and tr.records[1].true_gap >= a2 / 2 - 1e-9


def test_pi_init_is_first_record():
    rng = np.random.default_rng(0)
    mdp, pi0, target = attack_instance(rng, 3, 2, 2)
    init = random_policy(rng, ADVERSARY, 3, 2)
    tr = run_cps(mdp, pi0, target, CpsConfig(max_iters=2), pi_init=init)
    assert tr.records[0].pi_adv is init
    assert tr.records[0].cost == pytest.approx(attack_cost(init, pi0))


def test_config_validation():
    assert CpsConfig.from_dict({"lambda": 3, "p": "inf"}).lam == 3
    assert CpsConfig.from_dict({"p": "inf"}).p == np.inf
    assert CpsConfig(variant="ups").effective().delta == 1.0
    for bad in ({"delta": 0}, {"p": 2}, {"mode": "x"}, {"variant": "x"}, {"influence": 1.5}, {"epsilon": -1}):
        with pytest.raises(ValueError):
            CpsConfig(**bad)
    rng = np.random.default_rng(0)
    mdp, pi0, _ = attack_instance(rng, 2, 2, 2)
    with pytest.raises(ValueError):
        run_cps(mdp, pi0, TabularPolicy("victim", np.full((2, 2), 0.5)), CpsConfig())


def test_naive_record():
    rng = np.random.default_rng(1)
    mdp, pi0, target = attack_instance(rng, 3, 2, 2)
    pi = random_policy(rng, ADVERSARY, 3, 2)
    r = naive_record(mdp, pi, pi0, target, 0.1)
    assert r.true_gap == pytest.approx(true_gap(mdp, pi, target).gap)
    assert r.cost == pytest.approx(attack_cost(pi, pi0))
