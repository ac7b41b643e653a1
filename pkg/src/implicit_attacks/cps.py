"""Conservative policy search for implicit attacks.

Each iteration freezes the occupancy measures of the target policy and of
every deviation at the current adversary policy.  Returns then become linear
in the adversary policy and the cost-vs-margin trade-off inside a small trust
region is an LP.  The true gap of every iterate is re-evaluated exactly and
the cheapest iterate that meets the margin is returned.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .linprog import OPTIMAL, LpError, LpProblem, solve_lp
from .mdp import (
    ADVERSARY,
    GAP_SLACK,
    OccupancyBundle,
    TabularPolicy,
    gap_from_bundle,
    occupancy_bundle,
)

log = logging.getLogger(__name__)

FIXED_POINT_TOL = 1e-10


@dataclass(frozen=True)
class CpsConfig:
    epsilon: float = 0.05
    delta: float = 0.01
    delta_eps: float = 0.1
    lam: float = 20.0
    p: float = 1
    max_iters: int = 200
    mode: str = "ergodic"
    variant: str = "cps"
    influence: float = 1.0

    def __post_init__(self):
        if self.epsilon < 0 or self.delta_eps < 0 or self.lam < 0:
            raise ValueError("epsilon, delta_eps and lam must be non-negative")
        if not 0 < self.delta <= 1:
            raise ValueError("delta must lie in (0, 1]")
        if self.p not in (1, np.inf):
            raise ValueError("only p = 1 and p = inf give a linear program")
        if self.mode not in ("ergodic", "general"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.variant not in ("cps", "cops", "ups"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.max_iters < 0 or not 0 <= self.influence <= 1:
            raise ValueError("bad max_iters or influence")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        if d.get("p") in ("inf", "infinity"):
            d["p"] = np.inf
        return cls(**d)

    def effective(self):
        """Config after applying the variant (UPS drops the trust region)."""
        return replace(self, delta=1.0) if self.variant == "ups" else self


@dataclass(frozen=True)
class CpsRecord:
    pi_adv: TabularPolicy
    true_gap: float
    cost: float
    subproblem_objective: float


@dataclass
class CpsTrace:
    records: list = field(default_factory=list)
    best_index: int | None = None
    epsilon: float = 0.0

    @property
    def feasible(self) -> bool:
        return self.best_index is not None

    @property
    def best(self) -> CpsRecord | None:
        return None if self.best_index is None else self.records[self.best_index]

    def to_csv_rows(self):
        return [(i, r.true_gap, r.cost, r.subproblem_objective) for i, r in enumerate(self.records)]


def attack_cost(pi_adv, pi_default, p=1) -> float:
    """l_{1,p} distance: the p-norm over states of per-state L1 distances."""
    per_state = np.abs(_probs(pi_adv) - _probs(pi_default)).sum(1)
    if p == np.inf:
        return float(per_state.max(initial=0.0))
    return float((per_state**p).sum() ** (1 / p))


def _probs(pi):
    return pi.probs if isinstance(pi, TabularPolicy) else np.asarray(pi)


@dataclass(frozen=True)
class Subproblem:
    """LP over d+ and d- (pi = pi_default + d+ - d-), eps', m and an optional epigraph z."""

    lp: LpProblem
    n_pi: int
    pairs: list

    def policy(self, x, shape):
        n = self.n_pi
        return (x[:n] - x[n : 2 * n]).reshape(shape)

    def eps_prime(self, x):
        return x[2 * self.n_pi]


def build_subproblem(mdp, pi_current, pi_default, pi_target, bundle: OccupancyBundle, cfg: CpsConfig) -> Subproblem:
    """Trust-region LP with frozen occupancy measures from ``bundle``.

    Rows: one margin constraint per eligible (s, a2), one simplex row per state,
    m <= eps', and for p = inf one epigraph row per state.
    """
    cfg = cfg.effective()
    S, A = mdp.n_states, mdp.n_actions_adv
    pc, p0 = pi_current.probs, pi_default.probs
    if pc.shape != (S, A) or p0.shape != (S, A):
        raise ValueError("policy shapes do not match the MDP")
    if bundle.mu_target.shape != (S,):
        raise ValueError("occupancy bundle does not match the MDP")
    n = S * A
    iota = cfg.influence
    R = mdp.reward_vic
    span = R.max() - R.min()
    eps_box = span / (1 - mdp.gamma)

    target = pi_target.actions()
    rt = R[np.arange(S), :, target]  # (S, A1) reward when the victim plays the target
    g_t = (bundle.mu_target[:, None] * rt).ravel()
    pairs = sorted(bundle.mu_neighbor)
    H = np.empty((len(pairs), n))
    for k, key in enumerate(pairs):
        rd = R[np.arange(S), :, bundle.deviations[key]]
        H[k] = (bundle.mu_neighbor[key][:, None] * rd).ravel() - g_t
    # margin_k(pi) = -H_k . pi_exec with pi_exec = pi0 + iota * (d+ - d-)
    const = H @ p0.ravel()

    with_z = cfg.p == np.inf
    nv = 2 * n + 2 + with_z
    ie, im = 2 * n, 2 * n + 1
    c = np.zeros(nv)
    if cfg.variant != "cops":
        if with_z:
            c[-1] = 1.0
        else:
            c[: 2 * n] = 1.0
    c[im] = -cfg.lam if cfg.lam > 0 or cfg.variant != "cops" else -1.0

    rows, rhs = [], []
    for k in range(len(pairs)):
        row = np.zeros(nv)
        row[:n] = iota * H[k]
        row[n : 2 * n] = -iota * H[k]
        row[ie] = 1.0
        rows.append(row)
        rhs.append(-const[k])
    row = np.zeros(nv)
    row[im], row[ie] = 1.0, -1.0
    rows.append(row)
    rhs.append(0.0)
    if with_z:
        for s in range(S):
            row = np.zeros(nv)
            row[s * A : (s + 1) * A] = 1.0
            row[n + s * A : n + (s + 1) * A] = 1.0
            row[-1] = -1.0
            rows.append(row)
            rhs.append(0.0)

    A_eq = np.zeros((S, nv))
    for s in range(S):
        A_eq[s, s * A : (s + 1) * A] = 1.0
        A_eq[s, n + s * A : n + (s + 1) * A] = -1.0

    lo = np.clip(pc - cfg.delta, 0, 1).ravel() - p0.ravel()
    hi = np.clip(pc + cfg.delta, 0, 1).ravel() - p0.ravel()
    bounds = np.zeros((nv, 2))
    bounds[:n, 0], bounds[:n, 1] = np.maximum(lo, 0), np.maximum(hi, 0)
    bounds[n : 2 * n, 0], bounds[n : 2 * n, 1] = np.maximum(-hi, 0), np.maximum(-lo, 0)
    bounds[ie] = (-eps_box, eps_box)
    bounds[im] = (-eps_box, min(eps_box, cfg.epsilon * (1 + cfg.delta_eps)))
    if with_z:
        bounds[-1] = (0.0, np.inf)
    lp = LpProblem(c, A_eq, np.zeros(S), np.array(rows), np.array(rhs), bounds)
    return Subproblem(lp, n, pairs)


def _executed(pi, pi_default, iota):
    if iota == 1:
        return pi
    return TabularPolicy(ADVERSARY, (1 - iota) * pi_default.probs + iota * pi.probs)


def run_cps(mdp, pi_default, pi_target, cfg: CpsConfig, pi_init=None) -> CpsTrace:
    """Iterate trust-region LPs from pi_default (or pi_init); keep every iterate."""
    if not pi_target.is_deterministic():
        raise ValueError("target policy must be deterministic")
    trace = CpsTrace(epsilon=cfg.epsilon)
    pi = pi_default if pi_init is None else pi_init
    shape = pi.probs.shape
    objective = float("nan")
    for t in range(cfg.max_iters + 1):
        bundle = occupancy_bundle(mdp, _executed(pi, pi_default, cfg.influence), pi_target, cfg.mode)
        gap = gap_from_bundle(bundle).gap
        trace.records.append(CpsRecord(pi, gap, attack_cost(pi, pi_default, cfg.p), objective))
        if t == cfg.max_iters:
            break
        sub = build_subproblem(mdp, pi, pi_default, pi_target, bundle, cfg)
        try:
            sol = solve_lp(sub.lp)
        except LpError as e:
            raise LpError(f"iteration {t}: {e}") from e
        if sol.status != OPTIMAL:
            raise LpError(f"iteration {t}: subproblem {sol.status}")
        objective = sol.objective_value
        new = np.clip(pi_default.probs + sub.policy(sol.x, shape), 0, 1)
        new /= new.sum(1, keepdims=True)
        if np.abs(new - pi.probs).max() <= FIXED_POINT_TOL:
            log.debug("fixed point after %d iterations", t)
            break
        pi = TabularPolicy(ADVERSARY, new)
        log.debug("iter %d gap %.6f cost %.6f obj %.6f", t, gap, trace.records[-1].cost, objective)
    ok = [i for i, r in enumerate(trace.records) if r.true_gap >= cfg.epsilon - GAP_SLACK]
    if ok:
        trace.best_index = min(ok, key=lambda i: (trace.records[i].cost, i))
    return trace


def naive_record(mdp, pi_naive, pi_default, pi_target, epsilon, p=1, mode="general") -> CpsRecord:
    """Evaluate a fixed baseline policy as a one-record trace entry."""
    gap = gap_from_bundle(occupancy_bundle(mdp, pi_naive, pi_target, mode)).gap
    return CpsRecord(pi_naive, gap, attack_cost(pi_naive, pi_default, p), float("nan"))
