"""Experiment harness: sweeps, bounds, hardness checks and SVG plots.

    python -m implicit_attacks run --config cfg.json --out results/
    python -m implicit_attacks bounds --config cfg.json --out results/
    python -m implicit_attacks hardness formula.cnf --witness 1,0,1 --brute-force
    python -m implicit_attacks plot results/results.csv --out fig.svg

Log level comes from the IAK_LOG environment variable.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .apu import VARIANTS as APU_ALGOS
from .apu import ApuConfig, run_apu
from .bounds import AssumptionError, always_visited, lower_bound_cost, upper_bound_cost, upper_bound_cost_per_state
from .cps import CpsConfig, attack_cost, run_cps
from .envs import build_env, naive_baseline
from .hardness import ReductionParams, brute_force_feasible, encode_3sat, read_dimacs
from .mdp import ADVERSARY, GAP_SLACK, TabularPolicy, influence_mix, load_mdp, load_policy, true_gap

log = logging.getLogger("implicit_attacks")

SCHEMA_VERSION = 1
CPS_ALGOS = ("cps", "cops", "ups")
ALGORITHMS = CPS_ALGOS + ("naive",) + APU_ALGOS
AXES = ("epsilon", "influence", "lambda", "none")
DEFAULT_EPSILON = {"navigation": 0.05, "inventory": 0.4}
COLUMNS = ["schema_version", "experiment", "env", "axis", "axis_value", "algorithm", "seed",
           "feasible", "cost", "cost_cold", "gap", "dist", "iterations", "policy_file"]


def default_grid(env, axis):
    if axis == "epsilon":
        if env == "inventory":
            return [round(0.1 * i, 10) for i in range(1, 9)]
        return [round(0.01 * i, 10) for i in range(1, 16)]
    if axis == "influence":
        return [round(0.1 * i, 10) for i in range(2, 11)]
    if axis == "lambda":
        return [0.0, 1.0, 5.0, 10.0, 20.0]
    return [float("nan")]


@dataclass(frozen=True)
class ExperimentConfig:
    env: str
    algorithms: tuple = ("cps", "cops", "ups", "naive")
    axis: str = "epsilon"
    values: tuple = ()
    env_params: dict = field(default_factory=dict)
    cps: dict = field(default_factory=dict)
    apu: dict = field(default_factory=dict)
    seeds: tuple = (0,)
    warm_start: bool = True
    name: str = "experiment"

    def __post_init__(self):
        bad = [a for a in self.algorithms if a not in ALGORITHMS]
        if bad or not self.algorithms:
            raise ValueError(f"unknown algorithms {bad}")
        if self.axis not in AXES:
            raise ValueError(f"unknown sweep axis {self.axis!r}")
        vals = tuple(float(v) for v in (self.values or default_grid(self.env, self.axis)))
        if self.axis != "none" and any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("grid must be strictly increasing")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "algorithms", tuple(self.algorithms))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ValueError("need at least one seed")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        sweep = d.pop("sweep", None)
        if sweep:
            d["axis"] = sweep.get("axis", "none").removesuffix("_grid")
            d["values"] = tuple(sweep.get("values", ()))
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".12g")


def run_seed(master, *keys):
    return int(np.random.SeedSequence([master, *keys]).generate_state(1)[0])


class Runner:
    def __init__(self, cfg: ExperimentConfig, out: Path, master_seed=0, threads=1):
        self.cfg, self.out, self.master, self.threads = cfg, Path(out), master_seed, threads
        self.env = build_env(cfg.env, cfg.env_params)
        self.mode = "ergodic" if self.env.ergodic else "general"
        self.timings = {}

    def cps_config(self, algo, value):
        base = {"epsilon": DEFAULT_EPSILON.get(self.cfg.env, 0.05), "mode": self.mode}
        base.update(self.cfg.cps)
        base["variant"] = algo
        if self.cfg.axis in ("epsilon", "influence"):
            base[self.cfg.axis] = value
        elif self.cfg.axis == "lambda":
            base["lambda"] = value
        return CpsConfig.from_dict(base)

    def policy_path(self, algo, gi, seed):
        return Path("policies") / f"{algo}_{self.cfg.axis}_{gi:03d}_seed{seed}.json"

    def save_policy(self, rel, pi, **meta):
        path = self.out / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump({"schema_version": SCHEMA_VERSION, **pi.to_dict(), **meta}, f)

    def save_trace(self, algo, gi, seed, header, rows):
        path = self.out / "traces" / f"{algo}_{self.cfg.axis}_{gi:03d}_seed{seed}.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(header)
            w.writerows([[_fmt(x) for x in r] for r in rows])

    def _row(self, algo, gi, seed, **kw):
        row = dict.fromkeys(COLUMNS, "")
        row.update(schema_version=SCHEMA_VERSION, experiment=self.cfg.name, env=self.cfg.env,
                   axis=self.cfg.axis, axis_value=self.cfg.values[gi], algorithm=algo, seed=seed)
        row.update(kw)
        return {k: _fmt(v) if not isinstance(v, str) else v for k, v in row.items()}

    def cps_chain(self, algo, seed):
        """One sweep of a CPS-family algorithm, warm-started along the easing direction."""
        env, vals, axis = self.env, self.cfg.values, self.cfg.axis
        order = list(range(len(vals)))
        if axis == "epsilon":
            order.reverse()  # larger margins are harder; their solutions stay feasible below
        rows, prev = {}, None
        for gi in order:
            cfg = self.cps_config(algo, vals[gi])
            t0 = time.perf_counter()
            cold = run_cps(env.mdp, env.pi_default, env.pi_target, cfg)
            best, iters, used = cold.best, len(cold.records), cold
            cold_cost = best.cost if best else math.inf
            if self.cfg.warm_start and prev is not None and axis in ("epsilon", "influence"):
                init = prev[0]
                if axis == "influence":
                    # same executed policy at higher influence, with a smaller deviation
                    init = influence_mix(env.pi_default, init, prev[1] / vals[gi])
                warm = run_cps(env.mdp, env.pi_default, env.pi_target, cfg, pi_init=init)
                iters += len(warm.records)
                if warm.best and (best is None or warm.best.cost < best.cost):
                    best, used = warm.best, warm
            self.timings[f"{algo}/{gi}/{seed}"] = time.perf_counter() - t0
            self.save_trace(algo, gi, seed, ["iter", "gap", "cost", "objective"], used.to_csv_rows())
            if best is None:
                rows[gi] = self._row(algo, gi, seed, feasible=False, cost=math.inf, cost_cold=math.inf,
                                     gap=max(r.true_gap for r in cold.records), iterations=iters)
                continue
            rel = self.policy_path(algo, gi, seed)
            self.save_policy(rel, best.pi_adv, epsilon=cfg.epsilon, influence=cfg.influence, mode=cfg.mode)
            rows[gi] = self._row(algo, gi, seed, feasible=True, cost=best.cost, cost_cold=cold_cost,
                                 gap=best.true_gap, iterations=iters, policy_file=str(rel))
            prev = (best.pi_adv, cfg.influence)
        return [rows[gi] for gi in range(len(vals))]

    def naive_chain(self, seed):
        env, rows = self.env, []
        pi = naive_baseline(env)
        for gi in range(len(self.cfg.values)):
            cfg = self.cps_config("cps", self.cfg.values[gi])
            gap = true_gap(env.mdp, influence_mix(env.pi_default, pi, cfg.influence), env.pi_target, cfg.mode).gap
            ok = gap >= cfg.epsilon - GAP_SLACK
            cost = attack_cost(pi, env.pi_default, cfg.p)
            rel = ""
            if ok:
                rel = self.policy_path("naive", gi, seed)
                self.save_policy(rel, pi, epsilon=cfg.epsilon, influence=cfg.influence, mode=cfg.mode)
            rows.append(self._row("naive", gi, seed, feasible=ok, cost=cost if ok else math.inf,
                                  cost_cold=cost if ok else math.inf, gap=gap, iterations=0,
                                  policy_file=str(rel)))
        return rows

    def apu_chain(self, algo, seed):
        env, rows = self.env, []
        for gi, v in enumerate(self.cfg.values):
            d = dict(self.cfg.apu)
            if self.cfg.axis == "lambda":
                d["lambda"] = v
            d["seed"] = run_seed(self.master, gi, ALGORITHMS.index(algo), seed)
            acfg = ApuConfig.from_dict(d)
            t0 = time.perf_counter()
            tr = run_apu(env, acfg, algo)
            self.timings[f"{algo}/{gi}/{seed}"] = time.perf_counter() - t0
            self.save_trace(algo, gi, seed, ["epoch", "cost", "dist", "objective"], tr.rows())
            theta = tr.theta.tabular()
            cps_cfg = self.cps_config("cps", v)
            gap = true_gap(env.mdp, influence_mix(env.pi_default, theta, cps_cfg.influence),
                           env.pi_target, cps_cfg.mode).gap
            rel = self.policy_path(algo, gi, seed)
            self.save_policy(rel, theta, epsilon=cps_cfg.epsilon, influence=cps_cfg.influence, mode=cps_cfg.mode)
            rows.append(self._row(algo, gi, seed, feasible=gap >= cps_cfg.epsilon - GAP_SLACK,
                                  cost=tr.cost[-1], cost_cold=tr.cost[-1], gap=gap, dist=tr.dist[-1],
                                  iterations=acfg.epochs, policy_file=str(rel)))
        return rows

    def job(self, algo, seed):
        try:
            if algo in CPS_ALGOS:
                return self.cps_chain(algo, seed)
            if algo == "naive":
                return self.naive_chain(seed)
            return self.apu_chain(algo, seed)
        except Exception as e:  # recorded, the sweep goes on
            log.error("%s seed %d failed: %s", algo, seed, e)
            return [self._row(algo, gi, seed, feasible=False, cost=math.nan, gap=math.nan,
                              policy_file=f"error: {e}") for gi in range(len(self.cfg.values))]

    def run(self):
        self.out.mkdir(parents=True, exist_ok=True)
        jobs = [(a, s) for a in self.cfg.algorithms for s in self.cfg.seeds]
        if self.threads > 1:
            with ThreadPoolExecutor(self.threads) as ex:
                results = list(ex.map(lambda j: self.job(*j), jobs))
        else:
            results = [self.job(*j) for j in jobs]
        rows = [r for rs in results for r in rs]
        with open(self.out / "results.csv", "w", newline="") as f:
            w = csv.DictWriter(f, COLUMNS, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
        summary = {"schema_version": SCHEMA_VERSION, "config": asdict(self.cfg), "master_seed": self.master,
                   "n_rows": len(rows), "best": {}}
        for a in self.cfg.algorithms:
            feas = [r for r in rows if r["algorithm"] == a and r["feasible"] == "1"]
            summary["best"][a] = {"feasible_points": len(feas), "grid_points": len(self.cfg.values) * len(self.cfg.seeds)}
        with open(self.out / "summary.json", "w") as f:
            json.dump(summary, f, indent=2, sort_keys=True)
        with open(self.out / "timings.json", "w") as f:
            json.dump(self.timings, f, indent=2, sort_keys=True)
        return rows


def cmd_run(config_path, out="results", seed=0, threads=1) -> int:
    try:
        cfg = ExperimentConfig.load(config_path)
    except (OSError, ValueError, TypeError) as e:
        log.error("bad config %s: %s", config_path, e)
        return 2
    rows = Runner(cfg, Path(out), seed, threads).run()
    log.info("wrote %d rows to %s", len(rows), Path(out) / "results.csv")
    return 0


def _bounds_instance(d):
    if "mdp" in d:
        mdp = load_mdp(d["mdp"])
        return mdp, load_policy(d["pi_default"]), load_policy(d["pi_target"]), d.get("name", "custom")
    env = build_env(d["env"], d.get("env_params"))
    return env.mdp, env.pi_default, env.pi_target, env.name


def compute_bounds(mdp, pi0, target, epsilon, p=1):
    visited = [always_visited(mdp, target, s) for s in range(mdp.n_states)]
    out = {"schema_version": SCHEMA_VERSION, "epsilon": epsilon, "p": "inf" if p == np.inf else p,
           "lower": lower_bound_cost(mdp, pi0, target, visited), "always_visited": visited}
    try:
        rep = upper_bound_cost(mdp, pi0, target, epsilon, p)
        out["steerless"] = rep.to_dict()
    except AssumptionError as e:
        out["steerless"] = None
        out["steerless_skipped"] = str(e)
    try:
        rep = upper_bound_cost_per_state(mdp, pi0, target, epsilon, p)
        out["per_state"] = rep.to_dict()
    except AssumptionError as e:
        out["per_state"] = None
        out["per_state_skipped"] = str(e)
    return out


def cmd_bounds(config_path, out="results", seed=0, threads=1) -> int:
    try:
        with open(config_path) as f:
            d = json.load(f)
        mdp, pi0, target, name = _bounds_instance(d)
    except (OSError, ValueError, KeyError, TypeError) as e:
        log.error("bad config %s: %s", config_path, e)
        return 2
    eps = d.get("epsilon", DEFAULT_EPSILON.get(name, 0.05))
    p = np.inf if d.get("p") in ("inf", "infinity") else d.get("p", 1)
    res = compute_bounds(mdp, pi0, target, eps, p)
    res["name"] = name
    Path(out).mkdir(parents=True, exist_ok=True)
    with open(Path(out) / "bounds.json", "w") as f:
        json.dump(res, f, indent=2)
    print(f"lower bound: {res['lower']:.6g}")
    if res["steerless"] and res["steerless"]["upper"] is not None:
        print(f"upper bound: {res['steerless']['upper']:.6g}")
    return 0


def _parse_assignment(s, n):
    toks = [t for t in s.replace(",", " ").split()] if ("," in s or " " in s) else list(s)
    vals = [t.strip().lower() in ("1", "t", "true") for t in toks]
    if len(vals) != n:
        raise ValueError(f"assignment has {len(vals)} values, formula has {n} variables")
    return vals


def cmd_hardness(cnf_path, params: ReductionParams | None = None, out="results", witness=None,
                 brute_force=False, grid_step=0.25, cps=False, seed=0) -> int:
    from .hardness import assignment_to_policy

    try:
        f = read_dimacs(cnf_path)
        red = encode_3sat(f, params or ReductionParams())
    except (OSError, ValueError) as e:
        log.error("cannot encode %s: %s", cnf_path, e)
        return 2
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "mdp.json", "w") as fh:
        json.dump(red.mdp.to_dict(), fh)
    with open(out / "labels.json", "w") as fh:
        json.dump(red.labels, fh)
    report = {"schema_version": SCHEMA_VERSION, "n_states": red.mdp.n_states, "epsilon": red.epsilon}
    print(f"encoded {f.n_vars} variables, {f.n_clauses} clauses into {red.mdp.n_states} states")
    if witness is not None:
        a = _parse_assignment(witness, f.n_vars)
        pi = assignment_to_policy(f, red.params, a)
        gap = true_gap(red.mdp, pi, red.pi_target).gap
        ok = gap >= red.epsilon - GAP_SLACK
        report["witness"] = {"assignment": a, "satisfies": f.satisfied_by(a), "gap": gap, "feasible": ok}
        print(f"witness gap {gap:.6g}: feasibility {'PASS' if ok else 'FAIL'}")
    if brute_force:
        pi = brute_force_feasible(red.mdp, red.pi_target, red.epsilon, grid_step)
        report["brute_force"] = {"grid_step": grid_step, "found": pi is not None}
        print("feasible grid policy found" if pi is not None else "no feasible policy on grid")
    if cps:
        cfg = CpsConfig(epsilon=red.epsilon, mode="general")
        start = TabularPolicy.uniform(ADVERSARY, red.mdp.n_states, 3)
        tr = run_cps(red.mdp, start, red.pi_target, cfg)
        report["cps"] = {"feasible": tr.feasible, "gap": tr.best.true_gap if tr.feasible else None}
        print(f"cps (general mode): {'feasible' if tr.feasible else 'no feasible iterate'}")
    if brute_force and cps:
        # CPS is a heuristic: it may miss a feasible policy but can never invent one
        report["consistent"] = report["brute_force"]["found"] or not report["cps"]["feasible"]
        print(f"cps and grid oracle {'consistent' if report['consistent'] else 'INCONSISTENT'}")
    with open(out / "hardness.json", "w") as fh:
        json.dump(report, fh, indent=2)
    return 0


def read_results(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def render_svg(rows, title="", width=640, height=400) -> str:
    """Cost-vs-axis line chart, one series per algorithm; inf drawn as markers on the top edge."""
    series = {}
    for r in rows:
        key = r["algorithm"] if r.get("seed", "0") in ("0", "") else f"{r['algorithm']}/{r['seed']}"
        series.setdefault(key, []).append((float(r["axis_value"]), float(r["cost"])))
    pts = [p for s in series.values() for p in s]
    xs = [x for x, _ in pts if math.isfinite(x)] or [0.0, 1.0]
    ys = [y for _, y in pts if math.isfinite(y)] or [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(0.0, min(ys)), max(ys) * 1.1 or 1.0
    if x1 == x0:
        x1 = x0 + 1
    ml, mr, mt, mb = 60, 120, 30, 40
    W, H = width - ml - mr, height - mt - mb

    def px(x):
        return ml + (x - x0) / (x1 - x0) * W

    def py(y):
        return mt + H - (y - y0) / (y1 - y0) * H

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           f'<rect x="{ml}" y="{mt}" width="{W}" height="{H}" fill="none" stroke="black"/>',
           f'<text x="{ml}" y="{mt - 10}" font-size="12">{title}</text>',
           f'<text x="{ml - 5}" y="{mt + H}" font-size="10" text-anchor="end">{y0:.3g}</text>',
           f'<text x="{ml - 5}" y="{mt + 10}" font-size="10" text-anchor="end">{y1:.3g}</text>',
           f'<text x="{ml}" y="{mt + H + 15}" font-size="10">{x0:.3g}</text>',
           f'<text x="{ml + W}" y="{mt + H + 15}" font-size="10" text-anchor="end">{x1:.3g}</text>']
    for k, (name, pts) in enumerate(sorted(series.items())):
        col = colors[k % len(colors)]
        pts = sorted(pts)
        fin = [(x, y) for x, y in pts if math.isfinite(y)]
        if fin:
            coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in fin)
            out.append(f'<polyline fill="none" stroke="{col}" points="{coords}"/>')
        for x, y in pts:
            if math.isinf(y):
                out.append(f'<path class="inf" d="M{px(x) - 4:.2f},{mt + 8} L{px(x):.2f},{mt} L{px(x) + 4:.2f},{mt + 8}" '
                           f'fill="none" stroke="{col}"/>')
        out.append(f'<text x="{ml + W + 10}" y="{mt + 15 * (k + 1)}" font-size="11" fill="{col}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cmd_plot(results_csv, out_svg) -> int:
    try:
        rows = read_results(results_csv)
    except OSError as e:
        log.error("cannot read %s: %s", results_csv, e)
        return 2
    rows = [r for r in rows if r.get("cost") not in ("", "nan")]
    if not rows:
        log.error("%s has no plottable rows", results_csv)
        return 1
    title = f"{rows[0].get('env', '')}: cost vs {rows[0].get('axis', '')}"
    Path(out_svg).parent.mkdir(parents=True, exist_ok=True)
    with open(out_svg, "w") as f:
        f.write(render_svg(rows, title))
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="implicit_attacks", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="results")
        p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("run", help="run a sweep from a JSON config")
    p.add_argument("--config", required=True)
    common(p)
    p = sub.add_parser("bounds", help="cost bounds for an environment or MDP")
    p.add_argument("--config", required=True)
    common(p)
    p = sub.add_parser("hardness", help="encode a 3-SAT instance and check it")
    p.add_argument("cnf")
    p.add_argument("--gamma", type=float, default=0.9)
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--B", type=float, default=None)
    p.add_argument("--witness", default=None, help="assignment such as 1,0,1")
    p.add_argument("--brute-force", action="store_true")
    p.add_argument("--grid-step", type=float, default=0.25)
    p.add_argument("--cps", action="store_true")
    common(p)
    p = sub.add_parser("plot", help="render results.csv as SVG")
    p.add_argument("results")
    p.add_argument("--out", default="plot.svg")
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("IAK_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.cmd == "run":
        return cmd_run(args.config, args.out, args.seed, args.threads)
    if args.cmd == "bounds":
        return cmd_bounds(args.config, args.out, args.seed, args.threads)
    if args.cmd == "hardness":
        params = ReductionParams(args.gamma, args.epsilon, args.B)
        return cmd_hardness(args.cnf, params, args.out, args.witness, args.brute_force, args.grid_step,
                            args.cps, args.seed)
    return cmd_plot(args.results, args.out)


if __name__ == "__main__":
    sys.exit(main())
