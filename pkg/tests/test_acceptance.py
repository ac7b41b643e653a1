"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import json
import time

import numpy as np
import pytest

from implicit_attacks.apu import VARIANTS, ApuConfig, SoftmaxPolicy, imitation_loss_and_grad, ppo_surrogate, run_apu
from implicit_attacks.bounds import alpha2_star, lower_bound_cost, upper_bound_cost
from implicit_attacks.cli import ExperimentConfig, Runner, main, run_seed
from implicit_attacks.cps import CpsConfig, attack_cost, run_cps
from implicit_attacks.envs import build_env, naive_baseline
from implicit_attacks.hardness import assignment_to_policy, encode_3sat, enumerate_deterministic, random_formula
from implicit_attacks.mdp import (
    ADVERSARY,
    VICTIM,
    TabularPolicy,
    discounted_return,
    is_feasible,
    occupancy_measure,
    true_gap,
    value_functions,
)

from _instances import attack_instance, enum_feasible, fd_grad, grad_close, random_mdp, random_policy, surrogate_case


@pytest.fixture
def report(capsys):
    def _report(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}")
        assert ok, detail

    return _report


def test_criterion_1_exact_identities(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst_ret = worst_occ = 0.0
    for _ in range(100):
        S, A1, A2 = rng.integers(1, 7), rng.integers(1, 4), rng.integers(1, 4)
        mdp = random_mdp(rng, S, A1, A2, ergodic=bool(rng.integers(2)))
        pa, pv = random_policy(rng, ADVERSARY, S, A1), random_policy(rng, VICTIM, S, A2)
        V, _ = value_functions(mdp, pa, pv)
        worst_ret = max(worst_ret, abs(discounted_return(mdp, pa, pv) - (1 - mdp.gamma) * mdp.sigma @ V))
        worst_occ = max(worst_occ, abs(occupancy_measure(mdp, pa, pv).sum() - 1))
    dt = time.perf_counter() - t0
    report(1, worst_ret <= 1e-9 and worst_occ <= 1e-9 and dt < 5,
           f"max return error {worst_ret:.2e}, max occupancy error {worst_occ:.2e}, {dt:.2f}s")


def test_criterion_2_neighbor_oracle(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    compared = mismatches = outcomes = 0
    seen = set()
    for _ in range(30):
        S, A1, A2 = rng.integers(1, 5), rng.integers(1, 4), rng.integers(2, 4)
        mdp, _, target = attack_instance(rng, S, A1, A2)
        pa = random_policy(rng, ADVERSARY, S, A1, alpha=0.3)
        gap = true_gap(mdp, pa, target, "ergodic").gap
        scale = max(abs(gap), 0.01)
        for eps in scale * np.array([0.25, 0.5, 0.9, 1.1, 2.0]):
            want = enum_feasible(mdp, pa, target, eps)
            if want is None:
                continue
            compared += 1
            seen.add(want)
            mismatches += (gap >= eps - 1e-9) != want
    outcomes = len(seen)
    dt = time.perf_counter() - t0
    report(2, mismatches == 0 and compared >= 140 and outcomes == 2 and dt < 30,
           f"{compared} checks, {mismatches} mismatches, both outcomes seen: {outcomes == 2}, {dt:.2f}s")


def _default_runs(env, eps, mode):
    out = {}
    for v in ("cps", "ups", "cops"):
        tr = run_cps(env.mdp, env.pi_default, env.pi_target, CpsConfig(epsilon=eps, mode=mode, variant=v))
        out[v] = tr.best
    return out


def test_criterion_3_navigation_defaults(report):
    t0 = time.perf_counter()
    env = build_env("navigation")
    runs = _default_runs(env, 0.05, "ergodic")
    cps = runs["cps"]
    naive = naive_baseline(env)
    naive_cost = attack_cost(naive, env.pi_default)
    naive_gap = true_gap(env.mdp, naive, env.pi_target).gap
    cost = {k: (r.cost if r else np.inf) for k, r in runs.items()}
    gap = true_gap(env.mdp, cps.pi_adv, env.pi_target, "general").gap if cps else -np.inf
    dt = time.perf_counter() - t0
    ok = cps is not None and gap >= 0.05 - 1e-9 and cost["cps"] < naive_cost
    ok = ok and cost["cps"] <= cost["ups"] and cost["cps"] <= cost["cops"] and dt < 60
    report(3, ok, f"CPS cost {cost['cps']:.3f} gap {gap:.4f}; UPS {cost['ups']:.3f}; COPS {cost['cops']:.3f}; "
                  f"Naive cost {naive_cost:.0f} (gap {naive_gap:.3f}); {dt:.1f}s")


def test_criterion_4_inventory(report):
    t0 = time.perf_counter()
    env = build_env("inventory")
    runs = {}
    for v in ("cps", "ups"):
        runs[v] = run_cps(env.mdp, env.pi_default, env.pi_target, CpsConfig(epsilon=0.4, mode="general", variant=v)).best
    lb = lower_bound_cost(env.mdp, env.pi_default, env.pi_target)
    cps = runs["cps"]
    cost = {k: (r.cost if r else np.inf) for k, r in runs.items()}
    gap = true_gap(env.mdp, cps.pi_adv, env.pi_target, "general").gap if cps else -np.inf
    dt = time.perf_counter() - t0
    ok = cps is not None and gap >= 0.4 - 1e-9 and cost["cps"] <= cost["ups"] and lb <= cost["cps"] and dt < 300
    report(4, ok, f"CPS cost {cost['cps']:.3f} gap {gap:.4f}; UPS {cost['ups']:.3f}; lower bound {lb:.4f}; {dt:.1f}s")


def _violations(costs, increasing):
    bad = []
    for a, b in zip(costs, costs[1:]):
        drop = (a - b) if increasing else (b - a)
        if np.isfinite(drop) and drop > 0 or (np.isinf(a) and np.isfinite(b) and increasing):
            bad.append(drop)
        elif not increasing and np.isfinite(a) and np.isinf(b):
            bad.append(np.inf)
    return bad


def test_criterion_5_sweep_monotonicity(report, tmp_path):
    t0 = time.perf_counter()
    res = {}
    for axis, increasing in (("epsilon", True), ("influence", False)):
        cfg = ExperimentConfig(env="navigation", algorithms=("cps",), axis=axis, name=f"nav_{axis}")
        rows = Runner(cfg, tmp_path / axis).run()
        costs = [float(r["cost"]) for r in rows]
        cold = [float(r["cost_cold"]) for r in rows]
        res[axis] = (_violations(costs, increasing), _violations(cold, increasing), costs)
    dt = time.perf_counter() - t0
    ok = dt < 600
    for bad, _, _ in res.values():
        ok = ok and (len(bad) == 0 or (len(bad) == 1 and bad[0] <= 1e-6))
    detail = "; ".join(
        f"{a}: {len(b)} violations (cold starts alone: {len(c)}), costs {[round(x, 3) for x in cs]}"
        for a, (b, c, cs) in res.items()
    )
    report(5, ok, f"{detail}; {dt:.1f}s")


def _steerless_instance(rng):
    while True:
        mdp, pi0, target = attack_instance(rng, int(rng.integers(2, 5)), int(rng.integers(2, 4)), 2, adv_free=True)
        a2, _ = alpha2_star(mdp, pi0, target)
        if a2 > 1e-3:
            return mdp, pi0, target, a2


def test_criterion_6_upper_bound_witness(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(606)
    worst = -np.inf
    ok = True
    for i in range(10):
        mdp, pi0, target, a2 = _steerless_instance(rng)
        eps = a2 * rng.uniform(0.2, 0.9)
        p = 1 if i % 2 == 0 else np.inf
        rep = upper_bound_cost(mdp, pi0, target, eps, p)
        gap = true_gap(mdp, rep.witness_policy, target).gap
        cost = attack_cost(rep.witness_policy, pi0, p)
        worst = max(worst, cost - rep.upper)
        ok = ok and gap >= eps - 1e-9 and cost <= rep.upper + 1e-9 and rep.lower <= rep.upper
    dt = time.perf_counter() - t0
    report(6, ok and dt < 60, f"10 instances, max(cost - bound) = {worst:.2e}, {dt:.2f}s")


def _formulas(rng, count, want_sat, n_range, m_range):
    found, seen = [], set()
    while len(found) < count:
        f = random_formula(rng, int(rng.integers(*n_range)), int(rng.integers(*m_range)))
        key = f.to_dimacs()
        if key in seen or bool(f.satisfying_assignments()) != want_sat:
            continue
        seen.add(key)
        found.append(f)
    return found


def test_criterion_7_hardness(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(707)
    sat_ok = 0
    for f in _formulas(rng, 20, True, (1, 5), (1, 7)):
        red = encode_3sat(f)
        a = f.satisfying_assignments()[int(rng.integers(len(f.satisfying_assignments())))]
        pi = assignment_to_policy(f, red.params, a)
        sat_ok += true_gap(red.mdp, pi, red.pi_target).gap >= red.epsilon - 1e-9
    unsat_hits = probes = 0
    for f in _formulas(rng, 10, False, (1, 3), (2, 7)):
        red = encode_3sat(f)
        S = red.mdp.n_states
        for pi in enumerate_deterministic(red):
            probes += 1
            unsat_hits += is_feasible(red.mdp, pi, red.pi_target, red.epsilon)
        for k in range(10_000):
            alpha = (0.05, 0.3, 1.0, 5.0)[k % 4]
            pi = TabularPolicy(ADVERSARY, rng.dirichlet(alpha * np.ones(3), size=S))
            probes += 1
            unsat_hits += is_feasible(red.mdp, pi, red.pi_target, red.epsilon)
    dt = time.perf_counter() - t0
    report(7, sat_ok == 20 and unsat_hits == 0 and dt < 600,
           f"{sat_ok}/20 satisfiable witnesses feasible; {unsat_hits} feasible among {probes} probes "
           f"of 10 unsatisfiable formulas; {dt:.1f}s")


def test_criterion_8_gradients(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(808)
    bad = 0
    for i in range(50):
        S, A = int(rng.integers(2, 6)), int(rng.integers(2, 5))
        theta = SoftmaxPolicy(rng.normal(size=(S, A)), ADVERSARY)
        kind = "cross_entropy" if i % 2 == 0 else "kl"
        p0 = np.eye(A)[rng.integers(A, size=S)] if kind == "cross_entropy" else rng.dirichlet(np.ones(A), size=S)
        states = rng.integers(S, size=40)
        _, g = imitation_loss_and_grad(theta, p0, states, kind)
        fd = fd_grad(lambda L: imitation_loss_and_grad(SoftmaxPolicy(L, ADVERSARY), p0, states, kind)[0], theta.logits)
        bad += not grad_close(g, fd)
        pol, batch, adv = surrogate_case(rng, S, A)
        _, g = ppo_surrogate(pol, batch, adv, 0.2)
        fd = fd_grad(lambda L: ppo_surrogate(SoftmaxPolicy(L, ADVERSARY), batch, adv, 0.2)[0], pol.logits)
        bad += not grad_close(g, fd)
    dt = time.perf_counter() - t0
    report(8, bad == 0 and dt < 30, f"{bad} of 100 gradient checks off by more than 1e-5 relative, {dt:.2f}s")


def _final_dist(env_name, variant, seeds):
    env = build_env(env_name)
    return [run_apu(env, ApuConfig(seed=run_seed(0, i, VARIANTS.index(variant))), variant).dist[-1] for i in seeds]


def test_criterion_9_apu_reproduction(report):
    t0 = time.perf_counter()
    seeds = range(5)
    inv_apu, inv_ra = _final_dist("inventory", "apu", seeds), _final_dist("inventory", "ra", seeds)
    nav = {v: _final_dist("navigation", v, seeds) for v in VARIANTS}
    base = [d for v in VARIANTS if v != "apu" for d in nav[v]]
    nav_ok = np.median(nav["apu"]) <= max(base)
    inv_ok = np.median(inv_apu) < np.median(inv_ra)
    dt = time.perf_counter() - t0
    report(9, inv_ok and nav_ok and dt < 1200,
           f"Inventory median dist APU {np.median(inv_apu):.3f} vs RA {np.median(inv_ra):.3f}; Navigation APU median "
           f"{np.median(nav['apu']):.3f}, baseline spread [{min(base):.3f}, {max(base):.3f}]; {dt:.1f}s")


def test_criterion_10_determinism(report, tmp_path):
    cfg = {
        "name": "determinism",
        "env": "navigation",
        "algorithms": ["cps", "ups", "naive", "apu", "ra"],
        "sweep": {"axis": "influence", "values": [0.9, 1.0]},
        "cps": {"max_iters": 30, "delta": 0.05},
        "apu": {"epochs": 3, "phi_pretrain_steps": 500, "phi_update_steps": 250, "episodes_per_collection": 5,
                "horizon": 20, "eval_episodes": 5},
        "seeds": [0, 1],
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    outs = []
    for k, threads in enumerate((1, 1, 3)):
        main(["run", "--config", str(path), "--out", str(tmp_path / f"r{k}"), "--seed", "42", "--threads", str(threads)])
        outs.append((tmp_path / f"r{k}" / "results.csv").read_bytes())
    same = outs[0] == outs[1] == outs[2]
    report(10, same and len(outs[0]) > 0, f"3 reruns (1, 1 and 3 threads) byte-identical: {same}")
