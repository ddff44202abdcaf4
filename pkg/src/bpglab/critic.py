"""Value estimators used as baselines by the policy-gradient updates.

Two critics are provided: a constant equal to the mean dataset reward, and
a logistic value function ``V(s) = sigmoid(xi . phi(s))`` fitted with
nonlinear GTD(lambda) using eligibility traces and two step sizes (a fast
one for ``xi`` and a slow one for the auxiliary vector ``w``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .mdp import Dataset


@dataclass(frozen=True)
class ConstantCritic:
    mean_reward: float

    def value(self, phi=None) -> float:
        return self.mean_reward

    def to_json(self) -> dict:
        return {"mean_reward": self.mean_reward}


def constant_fit(d: Dataset | Sequence[float]) -> ConstantCritic:
    rewards = d.rewards if isinstance(d, Dataset) else list(d)
    if not rewards:
        raise ValueError("cannot fit a constant critic on an empty dataset")
    return ConstantCritic(math.fsum(rewards) / len(rewards))


@dataclass(frozen=True)
class GtdParams:
    xi: np.ndarray
    w: np.ndarray
    alpha_xi: float = 1e-5
    alpha_w: float = 1e-6

    def __post_init__(self):
        if self.xi.shape != self.w.shape:
            raise ValueError("xi and w must have the same shape")
        if self.alpha_w > self.alpha_xi:
            raise ValueError("two-timescale updates need alpha_w <= alpha_xi")

    @property
    def dim(self) -> int:
        return self.xi.shape[0]

    def value(self, phi) -> float:
        return gtd_value(self, phi)

    def to_json(self) -> dict:
        return {"xi": self.xi.tolist(), "w": self.w.tolist(),
                "alpha_xi": self.alpha_xi, "alpha_w": self.alpha_w}

    @classmethod
    def from_json(cls, d: dict) -> "GtdParams":
        return cls(np.asarray(d["xi"], float), np.asarray(d["w"], float), d["alpha_xi"], d["alpha_w"])


def gtd_init(dim: int, alpha_xi: float = 1e-5, alpha_w: float = 1e-6) -> GtdParams:
    return GtdParams(np.zeros(dim), np.zeros(dim), alpha_xi, alpha_w)


def _check_dim(g: GtdParams, *vecs) -> None:
    for v in vecs:
        if np.shape(v) != (g.dim,):
            raise ValueError(f"expected a vector of length {g.dim}, got shape {np.shape(v)}")


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def gtd_value(g: GtdParams, phi) -> float:
    _check_dim(g, phi)
    return _sigmoid(float(g.xi @ phi))


def gtd_grad(g: GtdParams, phi) -> np.ndarray:
    """Gradient of the logistic value w.r.t. xi: V(1 - V) phi."""
    v = gtd_value(g, phi)
    return v * (1.0 - v) * np.asarray(phi, float)


def gtd_hvp(g: GtdParams, phi, v) -> np.ndarray:
    """Hessian-vector product in O(d): V(1-V)(1-2V)(phi . v) phi."""
    _check_dim(g, phi, v)
    val = gtd_value(g, phi)
    return (val * (1.0 - val) * (1.0 - 2.0 * val) * float(np.dot(phi, v))) * np.asarray(phi, float)


def gtd_episode_deltas(g: GtdParams, features: np.ndarray, reward: float, rhos: Sequence[float],
                       lam: float, gamma: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Accumulated GTD(lambda) increments for one episode.

    ``features`` holds phi(s_1..s_T) row-wise. The reward arrives on the
    transition out of s_T and the terminal successor has value zero, so the
    last TD error is ``r - V(s_T)``. The eligibility trace ``e`` carries the
    importance weights; ``gtrace`` is the matching trace of Hessian-vector
    products ``rho (H_t w + gamma lam gtrace)``, which stays O(d) because
    ``w`` is fixed for the whole episode.
    """
    features = np.asarray(features, float)
    T = features.shape[0]
    if len(rhos) != T:
        raise ValueError(f"{T} feature rows but {len(rhos)} importance weights")
    _check_dim(g, *features)
    w = g.w
    values = [gtd_value(g, phi) for phi in features]
    grads = [v * (1.0 - v) * phi for v, phi in zip(values, features)]
    d_xi = np.zeros(g.dim)
    d_w = np.zeros(g.dim)
    e = np.zeros(g.dim)
    gtrace = np.zeros(g.dim)
    for t in range(T):
        rho = float(rhos[t])
        last = t == T - 1
        v_next = 0.0 if last else values[t + 1]
        grad_next = np.zeros(g.dim) if last else grads[t + 1]
        delta = (reward if last else 0.0) + gamma * v_next - values[t]
        e = rho * (grads[t] + gamma * lam * e)
        hw = gtd_hvp(g, features[t], w)
        gtrace = rho * (hw + gamma * lam * gtrace)
        gw = float(grads[t] @ w)
        # second-order correction: +(grad.w) H w - delta * gtrace; both vanish while w = 0
        d_xi += delta * e - gamma * (1.0 - lam) * float(e @ w) * grad_next + gw * hw - delta * gtrace
        d_w += delta * e - gw * grads[t]
    return d_xi, d_w


def gtd_apply(g: GtdParams, d_xi: np.ndarray, d_w: np.ndarray) -> GtdParams:
    if not (np.all(np.isfinite(d_xi)) and np.all(np.isfinite(d_w))):
        raise FloatingPointError("non-finite GTD update")
    return replace(g, xi=g.xi + g.alpha_xi * d_xi, w=g.w + g.alpha_w * d_w)


def save_critic(critic: ConstantCritic | GtdParams, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(critic.to_json()))


def load_critic(path: str | Path) -> ConstantCritic | GtdParams:
    d = json.loads(Path(path).read_text())
    if "mean_reward" in d:
        return ConstantCritic(d["mean_reward"])
    return GtdParams.from_json(d)
