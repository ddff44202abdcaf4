import numpy as np
import pytest
from hypothesis import given, strategies as st

from bpglab.mdp import (EOS, Dataset, Episode, State, TerminalStateError, is_terminal, read_jsonl,
                        read_vocab, replay, step, validate_dataset, write_jsonl, write_vocab)

from conftest import random_episode


def test_step_appends():
    assert step(State([5, 7], []), 5) == State([5, 7], [5])


def test_step_to_eos_is_terminal():
    s = step(State([5, 7], [5]), EOS)
    assert s == State([5, 7], [5, EOS])
    assert is_terminal(s)


def test_step_from_terminal_raises():
    with pytest.raises(TerminalStateError):
        step(State([1], [2, EOS]), 3)


@pytest.mark.parametrize("out, expected", [([], False), ([3], False), ([3, EOS], True)])
def test_is_terminal(out, expected):
    assert is_terminal(State([1, 2], out)) is expected


def test_truncation_counts_as_terminal():
    s = State([1], [4] * 64)
    assert is_terminal(s, trunc_len=64)
    assert not is_terminal(State([1], [4] * 63), trunc_len=64)
    with pytest.raises(TerminalStateError):
        step(s, 4, trunc_len=64)


def test_replay_visits_every_state_and_ends_terminal():
    rng = np.random.default_rng(0)
    for _ in range(100):
        e = random_episode(rng, vocab_size=20, max_out=12)
        visited = replay(e)
        assert len(visited) == len(e.actions) + 1
        assert is_terminal(visited[-1])
        assert not any(is_terminal(s) for s in visited[:-1])


def test_replay_truncated_episode():
    e = Episode([1, 2], [3] * 5, 0.5)
    assert is_terminal(replay(e, trunc_len=5)[-1], trunc_len=5)


@given(st.lists(st.integers(1, 30), max_size=6), st.lists(st.integers(1, 30), max_size=6), st.integers(0, 30))
def test_step_is_deterministic(x, out, a):
    s = State(x, out)
    assert step(s, a) == step(s, a)


def _dataset(n=10):
    rng = np.random.default_rng(1)
    return Dataset(tuple(random_episode(rng, 12, with_q=True) for _ in range(n)), 12)


def test_validate_well_formed():
    rep = validate_dataset(_dataset())
    assert rep.ok
    assert rep.n_episodes == 10
    assert 0.0 <= rep.reward_min <= rep.reward_max <= 1.0


def test_validate_flags_zero_probability():
    d = _dataset()
    e = d[3]
    bad = Episode(e.input, e.actions, e.reward, (0.0,) + e.behavior_probs[1:])
    rep = validate_dataset(Dataset(d.episodes[:3] + (bad,) + d.episodes[4:], d.vocab_size))
    assert not rep.ok
    assert rep.q_floor_violations == [3]


def test_validate_flags_vocab_violation():
    d = _dataset()
    bad = Episode([d.vocab_size], [1, EOS], 0.2)
    rep = validate_dataset(Dataset(d.episodes + (bad,), d.vocab_size))
    assert rep.vocab_violations == [10]


def test_validate_does_not_mutate():
    d = _dataset()
    before = [e.to_json() for e in d]
    validate_dataset(d)
    assert [e.to_json() for e in d] == before


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        Dataset((), 5)


def test_jsonl_round_trip(tmp_path):
    d = _dataset()
    d2 = Dataset((Episode([1, 2], [3, EOS], 0.4),) + d.episodes, d.vocab_size)
    write_jsonl(tmp_path / "pool.jsonl", d2)
    back = read_jsonl(tmp_path / "pool.jsonl", d2.vocab_size)
    assert back == d2
    assert back[0].behavior_probs is None


def test_vocab_file(tmp_path):
    write_vocab(tmp_path / "vocab.txt", ["<eos>", "a", "b"])
    assert read_vocab(tmp_path / "vocab.txt") == ["<eos>", "a", "b"]
    with pytest.raises(ValueError):
        write_vocab(tmp_path / "bad.txt", ["a", "<eos>"])
