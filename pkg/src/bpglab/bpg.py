"""Batch off-policy policy gradient with lambda-returns.

For every logged step the policy score is weighted by
``clip(rho_t * (R_t - V(s_t)), +-clip) / T`` where ``R_t`` is the
importance-reweighted lambda-return computed backwards from the episode's
terminal reward. Mini-batches group episodes of equal output length; the
episode gradients in a batch are summed (not averaged) and applied with a
constant step size.

Two ablations share the machinery: ``BPG-NIS`` forces every importance
weight to one, and ``OPG`` is an online off-policy actor-critic that only
sees the reward through the final TD error and updates after each episode.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import critic as C
from .mdp import Dataset, Episode
from .policy import (Packed, PolicyParams, Q_MIN, bottom_pass, pack, target_logprobs,
                     top_pass, weighted_score_packed)

VARIANTS = ("BPG", "BPG-NIS", "OPG")
CRITICS = ("constant", "gtd")


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 1e-5
    lam: float = 0.5
    gamma: float = 1.0
    clip: float = 5.0
    batch_size: int = 32
    epochs: int = 200
    trunc_len: int = 64
    variant: str = "BPG"
    critic_kind: str = "constant"
    alpha_xi: float = 1e-5
    alpha_w: float = 1e-6
    q_min: float = Q_MIN
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", normalize_variant(self.variant))
        if not self.alpha >= 0:
            raise ValueError("alpha must be non-negative")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if not self.clip > 0:
            raise ValueError("clip must be positive")
        if self.critic_kind not in CRITICS:
            raise ValueError(f"critic_kind must be one of {CRITICS}")
        if self.variant == "OPG" and self.critic_kind != "gtd":
            raise ValueError("OPG needs the gtd critic")


def normalize_variant(name: str) -> str:
    key = name.upper().replace("_", "-")
    if key not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; choose from {VARIANTS}")
    return key


def importance_weight(pi_prob: float, q_prob: float, variant: str = "BPG", q_min: float = Q_MIN) -> float:
    if q_prob < q_min:
        raise ValueError(f"behaviour probability {q_prob} below floor {q_min}")
    if normalize_variant(variant) == "BPG-NIS":
        return 1.0
    return pi_prob / q_prob


def lambda_returns(reward: float, values_next: Sequence[float], rhos: Sequence[float], lam: float) -> np.ndarray:
    """Backward recursion R_{T+1} = r, R_t = (1-lam) V(s_{t+1}) + lam rho_t R_{t+1}."""
    if len(values_next) != len(rhos):
        raise ValueError(f"{len(values_next)} successor values but {len(rhos)} importance weights")
    T = len(rhos)
    out = np.empty(T)
    nxt = float(reward)
    for t in range(T - 1, -1, -1):
        nxt = (1.0 - lam) * values_next[t] + lam * rhos[t] * nxt
        out[t] = nxt
    return out


@dataclass
class StepRecords:
    """Per-step quantities of one episode's update."""

    rho: np.ndarray
    advantage: np.ndarray
    raw_weight: np.ndarray
    clipped_weight: np.ndarray


@dataclass
class EpochStats:
    mean_rho: float
    frac_clipped: float
    mean_advantage: float
    mean_clipped_weight: float
    max_abs_weight: float
    n_steps: int

    def as_dict(self) -> dict:
        return asdict(self)


class _StatsAccumulator:
    def __init__(self):
        self.rho = []
        self.adv = []
        self.raw = []
        self.clipped = []

    def add(self, rec: StepRecords) -> None:
        self.rho.append(rec.rho)
        self.adv.append(rec.advantage)
        self.raw.append(rec.raw_weight)
        self.clipped.append(rec.clipped_weight)

    def finish(self, clip: float) -> EpochStats:
        if not self.rho:
            return EpochStats(math.nan, math.nan, math.nan, math.nan, 0.0, 0)
        rho = np.concatenate(self.rho)
        raw = np.concatenate(self.raw)
        clipped = np.concatenate(self.clipped)
        return EpochStats(
            mean_rho=float(np.mean(np.abs(rho))),
            frac_clipped=float(np.mean(np.abs(raw) > clip)),
            mean_advantage=float(np.mean(np.concatenate(self.adv))),
            mean_clipped_weight=float(np.mean(clipped)),
            max_abs_weight=float(np.max(np.abs(clipped))),
            n_steps=int(rho.size),
        )


def _values(critic, phis: np.ndarray) -> np.ndarray:
    if isinstance(critic, C.ConstantCritic):
        return np.full(len(phis), critic.mean_reward)
    return 1.0 / (1.0 + np.exp(-(phis @ critic.xi)))


def _bpg_step_weights(critic, e: Episode, pi: np.ndarray, phis: np.ndarray, cfg: TrainConfig):
    q = np.asarray(e.behavior_probs, float)
    if q.size != pi.size:
        raise ValueError("episode has no behaviour probabilities of matching length")
    if np.any(q < cfg.q_min):
        raise ValueError(f"behaviour probability below floor {cfg.q_min}")
    rho = np.ones_like(pi) if cfg.variant == "BPG-NIS" else pi / q
    values = _values(critic, phis)
    # the terminal successor's value is the observed reward
    values_next = np.append(values[1:], e.reward)
    R = lambda_returns(e.reward, values_next, rho, cfg.lam)
    adv = R - values
    raw = rho * adv
    clipped = np.clip(raw, -cfg.clip, cfg.clip)
    return StepRecords(rho, adv, raw, clipped), clipped / len(pi)


def _opg_step_weights(critic: C.GtdParams, e: Episode, pi: np.ndarray, phis: np.ndarray, cfg: TrainConfig):
    q = np.asarray(e.behavior_probs, float)
    rho = pi / q
    values = _values(critic, phis)
    T = len(pi)
    delta = np.empty(T)
    delta[:-1] = cfg.gamma * values[1:] - values[:-1]
    delta[-1] = e.reward - values[-1]
    # sum_t delta_t u_t with u_t = rho_t (psi_t + gamma lam u_{t-1}) regrouped per psi_k
    coef = np.empty(T)
    acc = 0.0
    for k in range(T - 1, -1, -1):
        acc = delta[k] + (cfg.gamma * cfg.lam * rho[k + 1] * acc if k + 1 < T else 0.0)
        coef[k] = rho[k] * acc
    clipped = np.clip(coef, -cfg.clip, cfg.clip)
    return StepRecords(rho, delta, coef, clipped), clipped / T


class _Batch:
    """Packed episodes plus their frozen bottom-layer activations."""

    def __init__(self, p: PolicyParams, episodes: Sequence[Episode]):
        self.episodes = list(episodes)
        self.packed: Packed = pack([(e.input, e.actions) for e in self.episodes])
        _, self.Hb, _ = bottom_pass(p, self.packed)
        self.phis = self.packed.split(self.Hb[self.packed.rows, self.packed.cols])


def _batch_update(p: PolicyParams, critic, batch: _Batch, cfg: TrainConfig, where: str = ""):
    """Summed policy direction and critic increments for one batch.

    Everything is computed from the pre-update actor and critic.
    """
    logp, Ht, cache = top_pass(p, batch.Hb, batch.packed)
    pis = batch.packed.split(np.exp(target_logprobs(logp, batch.packed)))
    weights, records = [], []
    d_xi = d_w = None
    if isinstance(critic, C.GtdParams):
        d_xi, d_w = np.zeros(critic.dim), np.zeros(critic.dim)
    for k, (e, pi, phis) in enumerate(zip(batch.episodes, pis, batch.phis)):
        step_fn = _opg_step_weights if cfg.variant == "OPG" else _bpg_step_weights
        rec, w = step_fn(critic, e, pi, phis, cfg)
        if not np.all(np.isfinite(w)):
            bad = int(np.flatnonzero(~np.isfinite(w))[0])
            raise FloatingPointError(f"non-finite update weight at {where}episode {k}, step {bad}")
        weights.append(w)
        records.append(rec)
        if d_xi is not None:
            rhos = np.ones_like(pi) if cfg.variant == "BPG-NIS" else rec.rho
            dx, dw = C.gtd_episode_deltas(critic, phis, e.reward, rhos, cfg.lam, cfg.gamma)
            d_xi += dx
            d_w += dw
    grad = weighted_score_packed(p, batch.packed, batch.Hb, np.concatenate(weights), logp, Ht, cache)
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError(f"non-finite policy gradient at {where}")
    return grad, (d_xi, d_w), records


def episode_policy_gradient(p: PolicyParams, critic, e: Episode, cfg: TrainConfig) -> tuple[np.ndarray, StepRecords]:
    """Length-normalised clipped gradient direction for one episode (BPG or BPG-NIS)."""
    if cfg.variant == "OPG":
        raise ValueError("use opg_episode_update for the OPG variant")
    grad, _, records = _batch_update(p, critic, _Batch(p, [e]), cfg)
    return grad, records[0]


def batch_gradient(p: PolicyParams, critic, episodes: Sequence[Episode], cfg: TrainConfig) -> np.ndarray:
    """Sum of episode gradients over a mini-batch, without batch-size normalisation."""
    grad, _, _ = _batch_update(p, critic, _Batch(p, episodes), cfg)
    return grad


def opg_episode_update(p: PolicyParams, critic: C.GtdParams, e: Episode,
                       cfg: TrainConfig) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray]]:
    """Online actor-critic increments for one episode: (actor direction, (d_xi, d_w))."""
    if cfg.variant != "OPG" or not isinstance(critic, C.GtdParams):
        raise ValueError("opg_episode_update needs variant OPG and a GTD critic")
    grad, deltas, _ = _batch_update(p, critic, _Batch(p, [e]), cfg)
    return grad, deltas


def make_batches(d: Dataset | Sequence[Episode], batch_size: int) -> list[tuple[int, ...]]:
    """Group episode indices by output length, chunked to ``batch_size``; dataset order kept."""
    buckets: dict[int, list[int]] = {}
    for i, e in enumerate(d):
        buckets.setdefault(len(e.actions), []).append(i)
    out = []
    for length in sorted(buckets):
        idx = buckets[length]
        out.extend(tuple(idx[k:k + batch_size]) for k in range(0, len(idx), batch_size))
    return out


def init_critic(d: Dataset, cfg: TrainConfig, dim: int):
    if cfg.critic_kind == "constant":
        return C.constant_fit(d)
    return C.gtd_init(dim, cfg.alpha_xi, cfg.alpha_w)


def train_epoch(p: PolicyParams, critic, d: Dataset, cfg: TrainConfig, rng: np.random.Generator,
                cache: dict | None = None) -> tuple[PolicyParams, object, EpochStats]:
    """One pass over the dataset.

    BPG variants update once per same-length mini-batch; OPG updates after
    every episode. ``cache`` may be a dict reused across epochs to keep the
    frozen bottom-layer activations of each batch.
    """
    if cache is None:
        cache = {}
    acc = _StatsAccumulator()
    if cfg.variant == "OPG":
        order = rng.permutation(len(d))
        units = [(int(i),) for i in order]
    else:
        batches = make_batches(d, cfg.batch_size)
        units = [batches[i] for i in rng.permutation(len(batches))]
    for b, key in enumerate(units):
        batch = cache.get(key)
        if batch is None:
            batch = cache[key] = _Batch(p, [d[i] for i in key])
        grad, (d_xi, d_w), records = _batch_update(p, critic, batch, cfg, where=f"batch {b} ")
        for rec in records:
            acc.add(rec)
        if cfg.alpha != 0.0:
            p = p.add_trainable(grad, cfg.alpha)
        if d_xi is not None:
            critic = C.gtd_apply(critic, d_xi, d_w)
    return p, critic, acc.finish(cfg.clip)
