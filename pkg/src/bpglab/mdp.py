"""Episodic MDP with deterministic transitions and terminal-only rewards.

States are ``(input, partial_output)`` pairs. Taking an action appends it to
the partial output; a state is terminal once the output ends with EOS or
reaches the truncation length. Logged data lives in :class:`Dataset`, a list
of :class:`Episode` records read from / written to JSON Lines.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

EOS = 0
DEFAULT_TRUNC_LEN = 64


class TerminalStateError(ValueError):
    """Raised when an operation tries to extend a terminal state."""


@dataclass(frozen=True)
class State:
    input: tuple[int, ...]
    partial_output: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "input", tuple(int(a) for a in self.input))
        object.__setattr__(self, "partial_output", tuple(int(a) for a in self.partial_output))


def is_terminal(s: State, trunc_len: int = DEFAULT_TRUNC_LEN) -> bool:
    out = s.partial_output
    if not out:
        return False
    return out[-1] == EOS or len(out) >= trunc_len


def step(s: State, a: int, trunc_len: int = DEFAULT_TRUNC_LEN) -> State:
    if is_terminal(s, trunc_len):
        raise TerminalStateError(f"cannot step from terminal state {s}")
    return State(s.input, s.partial_output + (int(a),))


@dataclass(frozen=True)
class Episode:
    """One logged trajectory: input, emitted actions, terminal reward.

    ``behavior_probs`` holds q(a_t|s_t) for each action when the logging
    policy recorded them; ``None`` means they must be recomputed from a
    learned behaviour policy.
    """

    input: tuple[int, ...]
    actions: tuple[int, ...]
    reward: float
    behavior_probs: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "input", tuple(int(a) for a in self.input))
        object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))
        object.__setattr__(self, "reward", float(self.reward))
        if self.behavior_probs is not None:
            object.__setattr__(self, "behavior_probs", tuple(float(q) for q in self.behavior_probs))

    def __len__(self):
        return len(self.actions)

    def states(self) -> list[State]:
        """States s_1..s_T at which each action was taken."""
        return [State(self.input, self.actions[:t]) for t in range(len(self.actions))]

    def with_behavior_probs(self, probs: Sequence[float]) -> "Episode":
        return Episode(self.input, self.actions, self.reward, tuple(probs))

    def to_json(self) -> dict:
        d = {"input": list(self.input), "actions": list(self.actions), "reward": self.reward}
        if self.behavior_probs is not None:
            d["q"] = list(self.behavior_probs)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Episode":
        return cls(d["input"], d["actions"], d["reward"], d.get("q"))


def replay(e: Episode, trunc_len: int = DEFAULT_TRUNC_LEN) -> list[State]:
    """Fold :func:`step` over the episode's actions; returns every visited state."""
    s = State(e.input, ())
    visited = [s]
    for a in e.actions:
        s = step(s, a, trunc_len)
        visited.append(s)
    return visited


@dataclass(frozen=True)
class Dataset:
    episodes: tuple[Episode, ...]
    vocab_size: int

    def __post_init__(self):
        object.__setattr__(self, "episodes", tuple(self.episodes))
        if not self.episodes:
            raise ValueError("dataset must contain at least one episode")

    def __len__(self):
        return len(self.episodes)

    def __iter__(self):
        return iter(self.episodes)

    def __getitem__(self, i):
        return self.episodes[i]

    @property
    def rewards(self) -> list[float]:
        return [e.reward for e in self.episodes]


@dataclass
class ValidationReport:
    n_episodes: int
    reward_min: float
    reward_max: float
    q_floor_violations: list[int] = field(default_factory=list)
    vocab_violations: list[int] = field(default_factory=list)
    length_violations: list[int] = field(default_factory=list)
    probs_length_mismatch: list[int] = field(default_factory=list)
    non_finite_rewards: list[int] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (
            self.q_floor_violations
            or self.vocab_violations
            or self.length_violations
            or self.probs_length_mismatch
            or self.non_finite_rewards
        )


def validate_dataset(d: Dataset, trunc_len: int = DEFAULT_TRUNC_LEN) -> ValidationReport:
    """Check a dataset without modifying it; failures are listed by episode index."""
    rewards = [e.reward for e in d.episodes]
    rep = ValidationReport(len(d.episodes), min(rewards), max(rewards))
    for i, e in enumerate(d.episodes):
        if not math.isfinite(e.reward):
            rep.non_finite_rewards.append(i)
        if any(a < 0 or a >= d.vocab_size for a in e.input + e.actions):
            rep.vocab_violations.append(i)
        ends_ok = bool(e.actions) and (e.actions[-1] == EOS or len(e.actions) == trunc_len)
        early_eos = EOS in e.actions[:-1]
        if not ends_ok or early_eos or len(e.actions) > trunc_len:
            rep.length_violations.append(i)
        if e.behavior_probs is not None:
            if len(e.behavior_probs) != len(e.actions):
                rep.probs_length_mismatch.append(i)
            if any(not (q > 0.0) or q > 1.0 for q in e.behavior_probs):
                rep.q_floor_violations.append(i)
    return rep


def write_jsonl(path: str | Path, episodes: Iterable[Episode]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as f:
        for e in episodes:
            f.write(json.dumps(e.to_json()) + "\n")


def read_jsonl(path: str | Path, vocab_size: int) -> Dataset:
    with Path(path).open() as f:
        eps = [Episode.from_json(json.loads(line)) for line in f if line.strip()]
    return Dataset(tuple(eps), vocab_size)


def write_vocab(path: str | Path, tokens: Sequence[str]) -> None:
    if not tokens or tokens[0] != "<eos>":
        raise ValueError("vocabulary must start with the EOS token '<eos>' at id 0")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(t + "\n" for t in tokens))


def read_vocab(path: str | Path) -> list[str]:
    return Path(path).read_text().splitlines()
