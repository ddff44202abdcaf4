"""Reverse-copy benchmark with forbidden words and noisy rewards.

Inputs are Zipf-distributed token sentences. A good output reproduces the
input's words while avoiding the most frequent ("forbidden") tokens. The
expected score of an output is

    r = 0.75 * r_r + 0.25 * 0.01 ** p_f

where ``r_r`` is the fraction of distinct input words that appear in the
output and ``p_f`` the fraction of output tokens that are forbidden. The
learner only observes the mean of five Bernoulli(r) draws.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .mdp import EOS, Dataset, Episode
from .policy import Q_MIN, PolicyParams, generate_batch


@dataclass(frozen=True)
class CorpusConfig:
    vocab_size: int = 120
    n_sentences: int = 2000
    min_len: int = 4
    max_len: int = 10
    zipf_exponent: float = 0.7

    def validate(self) -> None:
        if self.vocab_size < 2 or self.n_sentences < 1:
            raise ValueError("corpus needs at least one sentence and one non-EOS token")
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError("sentence lengths need 1 <= min_len <= max_len")
        if not self.zipf_exponent >= 0:
            raise ValueError("zipf_exponent must be non-negative")


@dataclass(frozen=True)
class TaskSpec:
    vocab_size: int
    forbidden: frozenset[int] = field(default_factory=frozenset)
    w_r: float = 0.75
    w_f: float = 0.25
    base: float = 0.01
    bernoulli_draws: int = 5

    def __post_init__(self):
        object.__setattr__(self, "forbidden", frozenset(int(a) for a in self.forbidden))
        if any(a <= EOS or a >= self.vocab_size for a in self.forbidden):
            raise ValueError("forbidden tokens must be non-EOS vocabulary ids")
        if not math.isclose(self.w_r + self.w_f, 1.0):
            raise ValueError("reward weights must sum to 1")


@dataclass(frozen=True)
class RewardBreakdown:
    r_r: float
    p_f: float
    r_f: float
    r: float
    empty: bool = False


def token_names(vocab_size: int) -> list[str]:
    return ["<eos>"] + [f"w{i}" for i in range(1, vocab_size)]


def build_corpus(cfg: CorpusConfig, rng: np.random.Generator) -> list[list[int]]:
    """Sentences whose token frequencies follow a Zipf law over a shuffled vocabulary."""
    ids = rng.permutation(np.arange(1, cfg.vocab_size))
    ranks = np.arange(1, cfg.vocab_size, dtype=float)
    probs = ranks ** -cfg.zipf_exponent
    probs /= probs.sum()
    lengths = rng.integers(cfg.min_len, cfg.max_len + 1, size=cfg.n_sentences)
    return [[int(a) for a in ids[rng.choice(len(ids), size=n, p=probs)]] for n in lengths]


def reverse_pairs(corpus: Sequence[Sequence[int]]) -> list[tuple[list[int], list[int]]]:
    """(sentence, reversed sentence + EOS) pairs for maximum-likelihood training."""
    return [(list(s), list(reversed(s)) + [EOS]) for s in corpus]


def forbidden_words(corpus: Sequence[Sequence[int]], k: int) -> frozenset[int]:
    """The ``k`` most frequent tokens; ties go to the lower id."""
    counts = Counter(a for s in corpus for a in s if a != EOS)
    if not counts:
        raise ValueError("empty corpus")
    if k > len(counts):
        raise ValueError(f"k={k} exceeds the {len(counts)} distinct tokens")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return frozenset(a for a, _ in ranked[:k])


def expected_reward(input: Sequence[int], output: Sequence[int], spec: TaskSpec) -> RewardBreakdown:
    words_in = {a for a in input if a != EOS}
    words_out = [a for a in output if a != EOS]
    if not words_out:
        r_r, p_f, empty = 0.0, 0.0, True
    else:
        r_r = len(words_in.intersection(words_out)) / len(words_in) if words_in else 0.0
        p_f = sum(a in spec.forbidden for a in words_out) / len(words_out)
        empty = False
    r_f = spec.base ** p_f
    return RewardBreakdown(r_r, p_f, r_f, spec.w_r * r_r + spec.w_f * r_f, empty)


def sample_reward(r: float, rng: np.random.Generator, draws: int = 5) -> float:
    """Mean of ``draws`` independent Bernoulli(r) rewards."""
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"Bernoulli parameter {r} outside [0, 1]")
    return float(np.count_nonzero(rng.random(draws) < r)) / draws


def _streams(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Independent child generators, one per item, derived from ``rng``."""
    base = np.random.SeedSequence(int(rng.integers(2**63)))
    return [np.random.default_rng(s) for s in base.spawn(n)]


@dataclass(frozen=True)
class RLPool:
    train: Dataset
    test: Dataset

    @property
    def all(self) -> list[Episode]:
        return list(self.test) + list(self.train)


def build_rl_pool(behavior_bots: Sequence[PolicyParams], inputs: Sequence[Sequence[int]], spec: TaskSpec,
                  rng: np.random.Generator, test_size: int, trunc_len: int = 64) -> RLPool:
    """Each bot answers its own slice of ``inputs``; answers are scored stochastically.

    Inputs are split evenly across bots in order. Behaviour probabilities are
    recorded from the generating bot, floored at ``Q_MIN``. A random ``test_size`` subset of the
    pool is held out as the fixed test split.
    """
    n_bots = len(behavior_bots)
    if len(inputs) % n_bots:
        raise ValueError("number of inputs must be a multiple of the number of bots")
    per_bot = len(inputs) // n_bots
    gen_streams = _streams(rng, len(inputs))
    reward_streams = _streams(rng, len(inputs))
    episodes = []
    for b, bot in enumerate(behavior_bots):
        sl = slice(b * per_bot, (b + 1) * per_bot)
        outs, qs = generate_batch(bot, inputs[sl], trunc_len, gen_streams[sl])
        for k, (x, y, q) in enumerate(zip(inputs[sl], outs, qs)):
            r = expected_reward(x, y, spec).r
            reward = sample_reward(r, reward_streams[b * per_bot + k], spec.bernoulli_draws)
            episodes.append(Episode(x, y, reward, [max(v, Q_MIN) for v in q]))
    perm = rng.permutation(len(episodes))
    test = [episodes[i] for i in sorted(perm[:test_size])]
    train = [episodes[i] for i in sorted(perm[test_size:])]
    return RLPool(Dataset(tuple(train), spec.vocab_size), Dataset(tuple(test), spec.vocab_size))


@dataclass(frozen=True)
class EvalReport:
    mean: float
    stderr: float
    n: int
    mean_r_r: float
    mean_p_f: float

    def as_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "n": self.n,
                "mean_r_r": self.mean_r_r, "mean_p_f": self.mean_p_f}


def evaluate_policy(p: PolicyParams, test_inputs: Sequence[Sequence[int]], spec: TaskSpec,
                    rng: np.random.Generator, max_len: int = 64) -> EvalReport:
    """Mean expected reward of one sampled output per test input."""
    outs, _ = generate_batch(p, test_inputs, max_len, _streams(rng, len(test_inputs)))
    parts = [expected_reward(x, y, spec) for x, y in zip(test_inputs, outs)]
    scores = np.array([b.r for b in parts])
    n = len(scores)
    stderr = float(scores.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return EvalReport(float(scores.mean()), stderr, n,
                      float(np.mean([b.r_r for b in parts])), float(np.mean([b.p_f for b in parts])))
