import numpy as np
import pytest

from bpglab import policy as P
from bpglab.mdp import EOS, Episode


@pytest.fixture
def small_policy():
    """Random policy with large enough weights that probabilities are far from uniform."""
    return P.init_params(vocab_size=9, embed_dim=4, bottom_hidden=5, top_hidden=6, seed=3, scale=0.7)


def random_episode(rng, vocab_size, max_in=5, max_out=6, trunc_len=64, with_q=False):
    x = rng.integers(1, vocab_size, size=rng.integers(1, max_in + 1)).tolist()
    n = int(rng.integers(1, max_out + 1))
    y = rng.integers(1, vocab_size, size=n - 1).tolist() + [EOS]
    q = rng.uniform(0.05, 1.0, size=n).tolist() if with_q else None
    return Episode(x, y, float(rng.uniform(0, 1)), q)


def on_policy_episode(p, rng, max_len=8, reward=None):
    """Episode sampled from ``p`` itself with q recorded at sampling time."""
    x = rng.integers(1, p.vocab_size, size=rng.integers(2, 6)).tolist()
    outs, qs = P.generate_batch(p, [x], max_len, [rng])
    r = float(rng.uniform()) if reward is None else reward
    return Episode(x, outs[0], r, qs[0])


# -- acceptance report ------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion_report():
    """Record (and print) one pass/fail line per acceptance criterion."""

    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number:2d} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
