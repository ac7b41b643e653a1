"""Discrete experimental environments: Navigation (9-state grid loop) and Inventory."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import ADVERSARY, VICTIM, TabularPolicy, TwoAgentMDP

LEFT, RIGHT = 0, 1

# intended successor of each Navigation state under "left" / "right"
NAV_LEFT = {0: 0, 1: 0, 2: 3, 3: 1, 4: 5, 5: 6, 6: 6, 7: 4, 8: 7}
NAV_RIGHT = {0: 1, 1: 2, 2: 3, 3: 4, 4: 7, 5: 4, 6: 5, 7: 8, 8: 8}


@dataclass(frozen=True)
class EnvBundle:
    mdp: TwoAgentMDP
    pi_default: TabularPolicy
    pi_target: TabularPolicy
    name: str
    ergodic: bool = True


@dataclass(frozen=True)
class NavigationParams:
    r_match: float = 5.0
    r_mismatch: float = -5.0
    r_base1: float = 5.0
    r_base2: float = 50.0
    p_bar: float = 0.9
    gamma: float = 0.9


@dataclass(frozen=True)
class InventoryParams:
    M: int = 10
    k: int = 7
    gamma: float = 0.9
    invalid_buy: str = "clip"  # or "penalty"
    invalid_penalty: float = 100.0


def build_navigation(params: NavigationParams | dict | None = None) -> EnvBundle:
    """Nine states s0..s8, both agents pick left/right.

    On a match the victim's direction is followed with probability p_bar; a
    mismatch, and the remaining 1 - p_bar, sends the agent to a uniformly random
    state.  In s1 the adversary alone picks the direction, in s3 the victim
    alone, and s2 leads to s3 regardless of actions.  The loop s1 -> s2 -> s3
    holds the large base reward at s2.
    """
    p = _params(NavigationParams, params)
    S, u = 9, np.full(9, 1 / 9)
    P = np.zeros((S, 2, 2, S))
    R = np.zeros((S, 2, 2))
    base = np.zeros(S)
    base[[0, 4, 8]] = p.r_base1
    base[2] = p.r_base2
    succ = (NAV_LEFT, NAV_RIGHT)
    for s in range(S):
        for a1 in range(2):
            for a2 in range(2):
                R[s, a1, a2] = base[s] + (p.r_match if a1 == a2 else p.r_mismatch)
                if s == 2:
                    nxt = 3
                elif s == 1:
                    nxt = succ[a1][s]
                elif s == 3:
                    nxt = succ[a2][s]
                elif a1 == a2:
                    nxt = succ[a2][s]
                else:
                    P[s, a1, a2] = u
                    continue
                P[s, a1, a2] = (1 - p.p_bar) * u
                P[s, a1, a2, nxt] += p.p_bar
    sigma = np.eye(S)[0]
    mdp = TwoAgentMDP(P, R, p.gamma, sigma)
    pi0 = TabularPolicy.deterministic(ADVERSARY, [LEFT] * S, 2)
    target = TabularPolicy.deterministic(VICTIM, [RIGHT] * S, 2)
    return EnvBundle(mdp, pi0, target, "navigation", ergodic=True)


def _buy_cost(x):
    return np.where(x > 0, 4 + 2 * x, 0)


def build_inventory(params: InventoryParams | dict | None = None) -> EnvBundle:
    """Stock levels 0..M-1; the adversary sets demand a1, the victim buys a2.

    Purchases that would exceed capacity are clipped to M-1-s (or, with
    invalid_buy="penalty", clipped and additionally charged invalid_penalty).
    """
    p = _params(InventoryParams, params)
    M, k = p.M, p.k
    if not 0 < k < M:
        raise ValueError("need 0 < k < M")
    if p.invalid_buy not in ("clip", "penalty"):
        raise ValueError(f"unknown invalid_buy mode {p.invalid_buy!r}")
    P = np.zeros((M, M, M, M))
    R = np.zeros((M, M, M))
    for s in range(M):
        for a2 in range(M):
            buy = min(a2, M - 1 - s)
            stock = s + buy
            for a1 in range(M):
                sold = a1 <= stock
                R[s, a1, a2] = sold * 10 * a1 - stock - _buy_cost(buy)
                if p.invalid_buy == "penalty" and buy != a2:
                    R[s, a1, a2] -= p.invalid_penalty
                P[s, a1, a2, stock - a1 if sold else s] = 1.0
    sigma = np.eye(M)[0]
    mdp = TwoAgentMDP(P, R, p.gamma, sigma)
    pi0 = TabularPolicy.uniform(ADVERSARY, M, M)
    target = TabularPolicy.deterministic(VICTIM, [0 if s > k else k - s for s in range(M)], M)
    return EnvBundle(mdp, pi0, target, "inventory", ergodic=False)


def naive_baseline(env: EnvBundle) -> TabularPolicy:
    S = env.mdp.n_states
    if env.name == "navigation":
        return TabularPolicy.deterministic(ADVERSARY, [RIGHT] * S, 2)
    if env.name == "inventory":
        return TabularPolicy.deterministic(ADVERSARY, [7] * S, env.mdp.n_actions_adv)
    raise ValueError(f"no naive baseline for environment {env.name!r}")


ENVIRONMENTS = {"navigation": build_navigation, "inventory": build_inventory}


def build_env(name: str, overrides: dict | None = None) -> EnvBundle:
    if name not in ENVIRONMENTS:
        raise ValueError(f"unknown environment {name!r}")
    return ENVIRONMENTS[name](overrides)


def _params(cls, params):
    if params is None:
        return cls()
    if isinstance(params, cls):
        return params
    return cls(**params)
