"""Alternating policy updates with tabular softmax policies.

The adversary (theta) minimizes an imitation loss toward its default policy
minus lambda times a clipped-surrogate estimate of how much better the target
policy does than the current victim (phi).  The victim is trained by PPO on
its own reward against the current adversary.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .envs import EnvBundle
from .mdp import ADVERSARY, VICTIM, TabularPolicy

log = logging.getLogger(__name__)

VARIANTS = ("apu", "ra", "rl", "sapu", "dapu")


class ApuDivergence(RuntimeError):
    pass


def softmax(logits):
    z = logits - logits.max(-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(-1, keepdims=True)


@dataclass(frozen=True)
class SoftmaxPolicy:
    logits: np.ndarray
    owner: str

    def __post_init__(self):
        lg = np.array(self.logits, dtype=float)
        if lg.ndim != 2 or not np.all(np.isfinite(lg)):
            raise ValueError("logits must be a finite 2-d table")
        object.__setattr__(self, "logits", lg)

    @property
    def probs(self):
        return softmax(self.logits)

    def tabular(self) -> TabularPolicy:
        return TabularPolicy(self.owner, self.probs)

    @classmethod
    def from_probs(cls, probs, owner, smoothing=0.0):
        p = (1 - smoothing) * np.asarray(probs) + smoothing / probs.shape[1]
        with np.errstate(divide="ignore"):
            return cls(np.maximum(np.log(p), -30.0), owner)


@dataclass(frozen=True)
class Batch:
    states: np.ndarray  # (E, H)
    a_adv: np.ndarray
    a_vic: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    p_adv: np.ndarray  # probability of the taken action under the collecting policy
    p_vic: np.ndarray
    gamma: float

    @property
    def size(self) -> int:
        return self.states.size

    def returns(self):
        """Discounted reward-to-go within each (truncated) episode."""
        G = np.zeros_like(self.rewards)
        run = np.zeros(self.rewards.shape[0])
        for t in range(self.rewards.shape[1] - 1, -1, -1):
            run = self.rewards[:, t] + self.gamma * run
            G[:, t] = run
        return G

    def actions(self, owner):
        return self.a_adv if owner == ADVERSARY else self.a_vic

    def old_probs(self, owner):
        return self.p_adv if owner == ADVERSARY else self.p_vic


def _probs(pi):
    return pi.probs if hasattr(pi, "probs") else np.asarray(pi)


def _sample(rng, probs):
    """One categorical draw per row of probs."""
    u = rng.random(probs.shape[0])
    return np.minimum((probs.cumsum(1) < u[:, None]).sum(1), probs.shape[1] - 1)


def collect_trajectories(mdp, pi_adv, pi_vic, episodes, horizon, rng_seed) -> Batch:
    if horizon < 1 or episodes < 1:
        raise ValueError("need at least one episode of length >= 1")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    pa, pv = _probs(pi_adv), _probs(pi_vic)
    P, R = mdp.transition, mdp.reward_vic
    E, H = episodes, horizon
    out = {k: np.zeros((E, H), int) for k in ("s", "a1", "a2", "s2")}
    rew, qa, qv = np.zeros((E, H)), np.zeros((E, H)), np.zeros((E, H))
    s = rng.choice(mdp.n_states, size=E, p=mdp.sigma)
    for t in range(H):
        a1 = _sample(rng, pa[s])
        a2 = _sample(rng, pv[s])
        s2 = _sample(rng, P[s, a1, a2])
        out["s"][:, t], out["a1"][:, t], out["a2"][:, t], out["s2"][:, t] = s, a1, a2, s2
        rew[:, t] = R[s, a1, a2]
        qa[:, t], qv[:, t] = pa[s, a1], pv[s, a2]
        s = s2
    return Batch(out["s"], out["a1"], out["a2"], rew, out["s2"], qa, qv, mdp.gamma)


def imitation_loss_and_grad(theta: SoftmaxPolicy, pi_default, batch, cost_kind="cross_entropy"):
    """Mean over batch states of CE(pi_default, pi_theta) or KL(pi_default || pi_theta)."""
    states = batch.states.ravel() if isinstance(batch, Batch) else np.asarray(batch).ravel()
    if states.size == 0:
        raise ValueError("empty batch")
    p0 = _probs(pi_default)[states]
    logp = theta.logits[states] - theta.logits[states].max(1, keepdims=True)
    logp = logp - np.log(np.exp(logp).sum(1, keepdims=True))
    with np.errstate(divide="ignore", invalid="ignore"):
        ce = -np.where(p0 > 0, p0 * logp, 0.0).sum(1)
        if cost_kind == "kl":
            ce += np.where(p0 > 0, p0 * np.log(p0), 0.0).sum(1)
        elif cost_kind != "cross_entropy":
            raise ValueError(f"unknown cost_kind {cost_kind!r}")
    grad = np.zeros_like(theta.logits)
    np.add.at(grad, states, np.exp(logp) - p0)
    return float(ce.mean()), grad / states.size


def ppo_surrogate(policy: SoftmaxPolicy, batch: Batch, advantages, clip_ratio):
    """Sum over transitions of min(r A, clip(r) A) and its gradient w.r.t. the logits."""
    states = batch.states.ravel()
    act = batch.actions(policy.owner).ravel()
    adv = np.asarray(advantages, dtype=float).ravel()
    probs = policy.probs[states]
    ratio = probs[np.arange(len(states)), act] / batch.old_probs(policy.owner).ravel()
    clipped = np.clip(ratio, 1 - clip_ratio, 1 + clip_ratio)
    value = np.minimum(ratio * adv, clipped * adv).sum()
    # the clipped branch is constant: no gradient once the ratio has moved past the band
    active = ~(((adv > 0) & (ratio >= 1 + clip_ratio)) | ((adv < 0) & (ratio <= 1 - clip_ratio)))
    w = np.where(active, ratio * adv, 0.0)
    g = -probs * w[:, None]
    g[np.arange(len(states)), act] += w
    grad = np.zeros_like(policy.logits)
    np.add.at(grad, states, g)
    return float(value), grad


def ppo_surrogate_grad(policy, batch, advantages, clip_ratio):
    """Gradient of the mean clipped surrogate over the batch."""
    _, g = ppo_surrogate(policy, batch, advantages, clip_ratio)
    return g / batch.size


def metrics_cost_dist(pi_theta, pi_phi, pi_default, pi_target, batch):
    """Average per-visited-state L1 distances: adversary to default, victim to target."""
    states = batch.states.ravel() if isinstance(batch, Batch) else np.asarray(batch).ravel()
    if states.size == 0:
        raise ValueError("empty batch")
    cost = np.abs(_probs(pi_theta) - _probs(pi_default)).sum(1)[states].mean()
    dist = np.abs(_probs(pi_phi) - _probs(pi_target)).sum(1)[states].mean()
    return float(cost), float(dist)


class Adam:
    def __init__(self, shape, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m, self.v, self.t = np.zeros(shape), np.zeros(shape), 0

    def step(self, grad):
        """Descent direction for a loss gradient."""
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad**2
        mh = self.m / (1 - self.b1**self.t)
        vh = self.v / (1 - self.b2**self.t)
        return -self.lr * mh / (np.sqrt(vh) + self.eps)


@dataclass(frozen=True)
class ApuConfig:
    lam: float = 10.0
    epochs: int = 60
    phi_pretrain_steps: int = 10_000
    phi_update_steps: int = 5_000
    episodes_per_collection: int = 40
    horizon: int = 50
    clip_ratio: float = 0.2
    lr_theta: float = 0.1
    lr_phi: float = 0.3
    victim_update_multiplier: int = 5
    cost_kind: str | None = None  # None: cross-entropy for deterministic pi0, else KL
    init_smoothing: float = 0.1
    eval_episodes: int = 40
    seed: int = 0

    def __post_init__(self):
        counts = (self.epochs, self.phi_update_steps, self.episodes_per_collection, self.horizon,
                  self.victim_update_multiplier, self.eval_episodes)
        if min(counts) < 1 or self.phi_pretrain_steps < 0:
            raise ValueError("counts must be positive")
        if not 0 < self.clip_ratio < 1:
            raise ValueError("clip_ratio must lie in (0, 1)")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        return cls(**d)


@dataclass
class ApuTrace:
    cost: list = field(default_factory=list)
    dist: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    imitation: list = field(default_factory=list)
    theta: SoftmaxPolicy | None = None
    phi: SoftmaxPolicy | None = None

    def rows(self):
        return list(zip(range(len(self.cost)), self.cost, self.dist, self.objective))


class _Baseline:
    """Tabular state-value estimate refit to Monte Carlo returns each epoch."""

    def __init__(self, n_states):
        self.v = np.zeros(n_states)

    def advantages(self, batch, G=None):
        G = batch.returns() if G is None else G
        adv = G - self.v[batch.states]
        s, g = batch.states.ravel(), G.ravel()
        cnt = np.bincount(s, minlength=len(self.v))
        tot = np.bincount(s, weights=g, minlength=len(self.v))
        seen = cnt > 0
        self.v[seen] = tot[seen] / cnt[seen]
        return adv


def _check_logits(*pols):
    for p in pols:
        if np.abs(p.logits).max() > 1e3:
            raise ApuDivergence(f"{p.owner} logits exceeded 1e3")


class _Victim:
    def __init__(self, phi, cfg, rng, n_states):
        self.phi, self.cfg, self.rng = phi, cfg, rng
        self.opt = Adam(phi.logits.shape, cfg.lr_phi)
        self.base = _Baseline(n_states)

    def train(self, mdp, theta_probs, steps, grad_steps):
        cfg = self.cfg
        episodes = max(1, -(-steps // cfg.horizon))
        batch = collect_trajectories(mdp, theta_probs, self.phi.probs, episodes, cfg.horizon, self.rng)
        adv = self.base.advantages(batch)
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        for _ in range(grad_steps):
            g = ppo_surrogate_grad(self.phi, batch, adv, cfg.clip_ratio)
            self.phi = SoftmaxPolicy(self.phi.logits + self.opt.step(-g), VICTIM)


def run_apu(env: EnvBundle, cfg: ApuConfig, variant: str = "apu") -> ApuTrace:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    mdp, pi0, target = env.mdp, env.pi_default, env.pi_target
    S, A1, A2 = mdp.n_states, mdp.n_actions_adv, mdp.n_actions_vic
    rng = np.random.default_rng(cfg.seed)
    kind = cfg.cost_kind or ("cross_entropy" if pi0.is_deterministic() else "kl")

    if variant == "ra":
        theta = SoftmaxPolicy(np.zeros((S, A1)), ADVERSARY)
    else:
        theta = SoftmaxPolicy.from_probs(pi0.probs, ADVERSARY, cfg.init_smoothing)
    phi = SoftmaxPolicy(rng.normal(size=(S, A2)) if variant == "rl" else np.zeros((S, A2)), VICTIM)
    victim = _Victim(phi, cfg, rng, S)
    opt_theta = Adam((S, A1), cfg.lr_theta)
    base_phi, base_t = _Baseline(S), _Baseline(S)
    bc_weight = 0.0 if variant == "dapu" else 1.0
    lam = cfg.lam
    E, H = cfg.episodes_per_collection, cfg.horizon

    if variant in ("apu", "ra", "dapu") and cfg.phi_pretrain_steps > 0:
        for _ in range(-(-cfg.phi_pretrain_steps // cfg.phi_update_steps)):
            victim.train(mdp, theta.probs, cfg.phi_update_steps, cfg.victim_update_multiplier)

    trace = ApuTrace()
    for epoch in range(cfg.epochs):
        objective = float("nan")
        bc = float("nan")
        if variant != "ra":
            tp = theta.probs
            tau_phi = collect_trajectories(mdp, tp, victim.phi.probs, E, H, rng)
            tau_t = collect_trajectories(mdp, tp, target.probs, E, H, rng)
            adv_phi = base_phi.advantages(tau_phi)
            adv_t = base_t.advantages(tau_t)
            j_phi, g_phi = ppo_surrogate(theta, tau_phi, adv_phi, cfg.clip_ratio)
            j_t, g_t = ppo_surrogate(theta, tau_t, adv_t, cfg.clip_ratio)
            n = tau_phi.size + tau_t.size
            # the adversary wants the target to gain and the victim's current policy to lose
            pl, g_pl = (j_phi - j_t) / n, (g_phi - g_t) / n
            bc, g_bc = imitation_loss_and_grad(theta, pi0, np.concatenate([tau_phi.states, tau_t.states]), kind)
            objective = bc_weight * bc + lam * pl
            grad = bc_weight * g_bc + lam * g_pl
            theta = SoftmaxPolicy(theta.logits + opt_theta.step(grad), ADVERSARY)

        if variant == "sapu":
            victim.train(mdp, theta.probs, E * H, 1)
        elif variant != "rl":
            victim.train(mdp, theta.probs, cfg.phi_update_steps, cfg.victim_update_multiplier)
        _check_logits(theta, victim.phi)

        test = collect_trajectories(mdp, theta.probs, victim.phi.probs, cfg.eval_episodes, H, rng)
        c, d = metrics_cost_dist(theta, victim.phi, pi0, target, test)
        trace.cost.append(c)
        trace.dist.append(d)
        trace.objective.append(objective)
        trace.imitation.append(bc)
        log.debug("%s epoch %d cost %.4f dist %.4f obj %.4f", variant, epoch, c, d, objective)
    trace.theta, trace.phi = theta, victim.phi
    return trace
