"""Two-level LSTM sequence policy pi_theta(a|s) in plain numpy.

The policy reads ``input ++ [EOS] ++ partial_output`` token by token. Tokens
are embedded, passed through a bottom LSTM, whose hidden state feeds a top
LSTM, whose hidden state feeds a softmax head over the vocabulary. The EOS
separator marks where the input stops and generation begins.

During reinforcement learning only the top LSTM and head are trainable; the
embedding table and bottom LSTM are frozen and the bottom hidden state is the
state representation phi(s) used by the critic.

All batched routines take right-padded token matrices with a 0/1 mask. On a
padded step the recurrent state is carried through unchanged, so padded rows
produce exactly the same numbers as running them alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .mdp import EOS, Episode, State

TRAINABLE = ("top_W", "top_b", "head_W", "head_b")
ALL_PARAMS = ("embed", "bottom_W", "bottom_b", "top_W", "top_b", "head_W", "head_b")
CHECKPOINT_VERSION = 1
Q_MIN = 1e-6
PROB_UNDERFLOW = 1e-30


@dataclass(frozen=True)
class PolicyParams:
    """All policy weights.

    ``bottom_W`` has shape ``(E + H_b, 4 H_b)`` and ``top_W`` has shape
    ``(H_b + H_t, 4 H_t)``; gate columns are ordered input, forget, output,
    candidate. ``trainable`` names the arrays RL updates may touch.
    """

    embed: np.ndarray
    bottom_W: np.ndarray
    bottom_b: np.ndarray
    top_W: np.ndarray
    top_b: np.ndarray
    head_W: np.ndarray
    head_b: np.ndarray
    trainable: tuple[str, ...] = TRAINABLE
    init_seed: int | None = None

    def __post_init__(self):
        if any(name not in TRAINABLE for name in self.trainable):
            raise ValueError(f"only {TRAINABLE} may be marked trainable, got {self.trainable}")

    @property
    def vocab_size(self) -> int:
        return self.embed.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.embed.shape[1]

    @property
    def bottom_hidden(self) -> int:
        return self.bottom_b.shape[0] // 4

    @property
    def top_hidden(self) -> int:
        return self.top_b.shape[0] // 4

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in ALL_PARAMS}

    def trainable_vector(self) -> np.ndarray:
        return np.concatenate([getattr(self, k).ravel() for k in self.trainable])

    @property
    def n_trainable(self) -> int:
        return sum(getattr(self, k).size for k in self.trainable)

    def add_trainable(self, delta: np.ndarray, scale: float = 1.0) -> "PolicyParams":
        """Return params with ``scale * delta`` added to the trainable arrays.

        Frozen arrays are shared, not copied.
        """
        updates, off = {}, 0
        for k in self.trainable:
            a = getattr(self, k)
            updates[k] = a + scale * delta[off:off + a.size].reshape(a.shape)
            off += a.size
        if off != delta.size:
            raise ValueError(f"delta has {delta.size} entries, expected {off}")
        return replace(self, **updates)

    def with_trainable_vector(self, vec: np.ndarray) -> "PolicyParams":
        updates, off = {}, 0
        for k in self.trainable:
            a = getattr(self, k)
            updates[k] = vec[off:off + a.size].reshape(a.shape).copy()
            off += a.size
        return replace(self, **updates)


def init_params(vocab_size: int, embed_dim: int = 16, bottom_hidden: int = 16,
                top_hidden: int = 16, seed: int = 0, scale: float | None = None) -> PolicyParams:
    """Random initialisation; forget-gate biases start at 1."""
    rng = np.random.default_rng(seed)

    def mat(n_in, n_out):
        s = scale if scale is not None else 1.0 / np.sqrt(n_in)
        return rng.uniform(-s, s, size=(n_in, n_out))

    def bias(h):
        b = np.zeros(4 * h)
        b[h:2 * h] = 1.0
        return b

    return PolicyParams(
        embed=rng.normal(0.0, 0.1 if scale is None else scale, size=(vocab_size, embed_dim)),
        bottom_W=mat(embed_dim + bottom_hidden, 4 * bottom_hidden),
        bottom_b=bias(bottom_hidden),
        top_W=mat(bottom_hidden + top_hidden, 4 * top_hidden),
        top_b=bias(top_hidden),
        head_W=mat(top_hidden, vocab_size),
        head_b=np.zeros(vocab_size),
        init_seed=seed,
    )


def zero_params(vocab_size: int, embed_dim: int = 16, bottom_hidden: int = 16,
                top_hidden: int = 16) -> PolicyParams:
    return PolicyParams(
        embed=np.zeros((vocab_size, embed_dim)),
        bottom_W=np.zeros((embed_dim + bottom_hidden, 4 * bottom_hidden)),
        bottom_b=np.zeros(4 * bottom_hidden),
        top_W=np.zeros((bottom_hidden + top_hidden, 4 * top_hidden)),
        top_b=np.zeros(4 * top_hidden),
        head_W=np.zeros((top_hidden, vocab_size)),
        head_b=np.zeros(vocab_size),
        init_seed=None,
    )


# --- LSTM kernels -----------------------------------------------------------

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _cell(W, b, x, h, c):
    n_in = x.shape[-1]
    H = h.shape[-1]
    a = x @ W[:n_in] + h @ W[n_in:] + b
    i = _sigmoid(a[:, :H])
    f = _sigmoid(a[:, H:2 * H])
    o = _sigmoid(a[:, 2 * H:3 * H])
    g = np.tanh(a[:, 3 * H:])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    return o * tc, c_new, (i, f, o, g, tc)


def _lstm_forward(W, b, X, mask):
    """Run one LSTM layer over ``X`` of shape (B, L, n_in)."""
    B, L, _ = X.shape
    H = b.shape[0] // 4
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    Hs = np.empty((B, L, H))
    cache = []
    for t in range(L):
        m = mask[:, t:t + 1]
        h_new, c_new, gates = _cell(W, b, X[:, t], h, c)
        cache.append((h, c, c_new, gates))
        h = m * h_new + (1.0 - m) * h
        c = m * c_new + (1.0 - m) * c
        Hs[:, t] = h
    return Hs, cache


def _lstm_backward(W, X, mask, cache, dHs, need_dX=True):
    B, L, n_in = X.shape
    H = dHs.shape[-1]
    dW = np.zeros_like(W)
    db = np.zeros(W.shape[1])
    dX = np.zeros_like(X) if need_dX else None
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in reversed(range(L)):
        m = mask[:, t:t + 1]
        h_prev, c_prev, c_new, (i, f, o, g, tc) = cache[t]
        dh = dHs[:, t] + dh_next
        dh_new = m * dh
        dc_new = m * dc_next + dh_new * o * (1.0 - tc * tc)
        da = np.concatenate([
            dc_new * g * i * (1.0 - i),
            dc_new * c_prev * f * (1.0 - f),
            dh_new * tc * o * (1.0 - o),
            dc_new * i * (1.0 - g * g),
        ], axis=1)
        x = X[:, t]
        dW[:n_in] += x.T @ da
        dW[n_in:] += h_prev.T @ da
        db += da.sum(axis=0)
        dz = da @ W.T
        if need_dX:
            dX[:, t] = dz[:, :n_in]
        dh_next = (1.0 - m) * dh + dz[:, n_in:]
        dc_next = (1.0 - m) * dc_next + dc_new * f
    return dW, db, dX


# --- batching ---------------------------------------------------------------

@dataclass
class Packed:
    """Teacher-forced batch of (input, outputs) pairs.

    Row ``k`` holds ``input ++ [EOS] ++ outputs[:-1]``; the prediction for
    ``outputs[j]`` is read at column ``len(input) + j``.
    """

    tokens: np.ndarray
    mask: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    targets: np.ndarray
    lengths: list[int] = field(default_factory=list)

    def split(self, flat: np.ndarray) -> list[np.ndarray]:
        return np.split(flat, np.cumsum(self.lengths)[:-1])


def pack(pairs: Sequence[tuple[Sequence[int], Sequence[int]]]) -> Packed:
    seqs = [list(x) + [EOS] + list(y[:-1]) for x, y in pairs]
    L = max(len(s) for s in seqs)
    B = len(seqs)
    tokens = np.zeros((B, L), dtype=np.int64)
    mask = np.zeros((B, L))
    rows, cols, targets, lengths = [], [], [], []
    for k, ((x, y), s) in enumerate(zip(pairs, seqs)):
        tokens[k, :len(s)] = s
        mask[k, :len(s)] = 1.0
        n = len(x)
        rows.extend([k] * len(y))
        cols.extend(range(n, n + len(y)))
        targets.extend(y)
        lengths.append(len(y))
    return Packed(tokens, mask, np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64),
                  np.asarray(targets, dtype=np.int64), lengths)


def _check_tokens(p: PolicyParams, tokens: np.ndarray) -> None:
    if tokens.size and (tokens.min() < 0 or tokens.max() >= p.vocab_size):
        raise IndexError(f"token id out of range [0, {p.vocab_size})")


def bottom_pass(p: PolicyParams, packed: Packed):
    """Embedding + bottom LSTM. Returns (embedded inputs, hidden states, cache)."""
    _check_tokens(p, packed.tokens)
    X = p.embed[packed.tokens]
    Hb, cache = _lstm_forward(p.bottom_W, p.bottom_b, X, packed.mask)
    return X, Hb, cache


def top_pass(p: PolicyParams, Hb: np.ndarray, packed: Packed):
    """Top LSTM + head on the prediction positions only.

    Returns (log-prob matrix at predicted positions, top hidden, cache).
    """
    Ht, cache = _lstm_forward(p.top_W, p.top_b, Hb, packed.mask)
    h = Ht[packed.rows, packed.cols]
    logp = log_softmax(h @ p.head_W + p.head_b)
    return logp, Ht, cache


def _head_and_top_backward(p, packed, Hb, logp, Ht, top_cache, weights, need_dHb):
    """Gradient of sum_j weights[j] * logp[j, target_j] w.r.t. top + head."""
    probs = np.exp(logp)
    dz = -probs * weights[:, None]
    dz[np.arange(len(weights)), packed.targets] += weights
    h = Ht[packed.rows, packed.cols]
    g_head_W = h.T @ dz
    g_head_b = dz.sum(axis=0)
    dHt = np.zeros_like(Ht)
    np.add.at(dHt, (packed.rows, packed.cols), dz @ p.head_W.T)
    g_top_W, g_top_b, dHb = _lstm_backward(p.top_W, Hb, packed.mask, top_cache, dHt, need_dX=need_dHb)
    return {"top_W": g_top_W, "top_b": g_top_b, "head_W": g_head_W, "head_b": g_head_b}, dHb


def target_logprobs(logp: np.ndarray, packed: Packed) -> np.ndarray:
    return logp[np.arange(len(packed.targets)), packed.targets]


def weighted_score_packed(p: PolicyParams, packed: Packed, Hb: np.ndarray, weights: np.ndarray,
                          logp=None, Ht=None, top_cache=None) -> np.ndarray:
    """sum_j weights[j] * grad log pi(target_j | s_j) over trainable params.

    ``Hb`` are the (frozen) bottom hidden states, treated as constants. Pass
    the outputs of :func:`top_pass` to skip recomputing the forward pass.
    """
    if logp is None:
        logp, Ht, top_cache = top_pass(p, Hb, packed)
    grads, _ = _head_and_top_backward(p, packed, Hb, logp, Ht, top_cache,
                                      np.asarray(weights, dtype=float), need_dHb=False)
    return np.concatenate([grads[k].ravel() for k in p.trainable])


def weighted_score(p: PolicyParams, episodes: Sequence[Episode], weights: Sequence[np.ndarray]) -> np.ndarray:
    """Sum over episodes and steps of ``w_t * psi(a_t, s_t)``."""
    packed = pack([(e.input, e.actions) for e in episodes])
    _, Hb, _ = bottom_pass(p, packed)
    return weighted_score_packed(p, packed, Hb, np.concatenate([np.asarray(w, float) for w in weights]))


def full_gradient(p: PolicyParams, packed: Packed, weights: np.ndarray) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Gradient of sum_j weights[j] * log pi(target_j) w.r.t. every array.

    Also returns the target log-probabilities from the forward pass.
    """
    X, Hb, b_cache = bottom_pass(p, packed)
    logp, Ht, t_cache = top_pass(p, Hb, packed)
    grads, dHb = _head_and_top_backward(p, packed, Hb, logp, Ht, t_cache, weights, need_dHb=True)
    gW, gb, dX = _lstm_backward(p.bottom_W, X, packed.mask, b_cache, dHb, need_dX=True)
    g_embed = np.zeros_like(p.embed)
    np.add.at(g_embed, packed.tokens, dX * packed.mask[..., None])
    grads.update(bottom_W=gW, bottom_b=gb, embed=g_embed)
    return grads, target_logprobs(logp, packed)


# --- public single-state API ------------------------------------------------

@dataclass(frozen=True)
class PolicyOutput:
    probs: np.ndarray
    features: np.ndarray


def forward(p: PolicyParams, s: State) -> PolicyOutput:
    """Action distribution and bottom hidden state phi(s) at state ``s``."""
    if s.partial_output and s.partial_output[-1] == EOS:
        raise ValueError("forward called on a terminal state")
    tokens = np.asarray([list(s.input) + [EOS] + list(s.partial_output)], dtype=np.int64)
    _check_tokens(p, tokens)
    mask = np.ones(tokens.shape)
    Hb, _ = _lstm_forward(p.bottom_W, p.bottom_b, p.embed[tokens], mask)
    Ht, _ = _lstm_forward(p.top_W, p.top_b, Hb, mask)
    logp = log_softmax(Ht[0, -1] @ p.head_W + p.head_b)
    return PolicyOutput(np.exp(logp), Hb[0, -1].copy())


def log_prob(p: PolicyParams, s: State, a: int) -> float:
    packed = pack([(s.input, list(s.partial_output) + [a])])
    _, Hb, _ = bottom_pass(p, packed)
    logp, _, _ = top_pass(p, Hb, packed)
    return float(logp[-1, a])


def score(p: PolicyParams, s: State, a: int) -> np.ndarray:
    """psi(a, s) = grad of log pi(a|s) w.r.t. the trainable parameters."""
    packed = pack([(s.input, list(s.partial_output) + [a])])
    _, Hb, _ = bottom_pass(p, packed)
    logp, Ht, cache = top_pass(p, Hb, packed)
    if np.exp(logp[-1, a]) < PROB_UNDERFLOW:
        raise FloatingPointError(f"pi(a={a}|s) underflows below {PROB_UNDERFLOW}")
    w = np.zeros(len(packed.targets))
    w[-1] = 1.0
    return weighted_score_packed(p, packed, Hb, w, logp, Ht, cache)


def sample_action(out: PolicyOutput | np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw over ids in increasing order."""
    probs = out.probs if isinstance(out, PolicyOutput) else out
    cdf = np.cumsum(probs)
    a = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(a, len(probs) - 1)


def generate_batch(p: PolicyParams, inputs: Sequence[Sequence[int]], max_len: int,
                   rngs: Sequence[np.random.Generator]) -> tuple[list[list[int]], list[list[float]]]:
    """Sample one output per input; each row draws from its own stream.

    Returns the outputs and the probability each sampled action had.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    B = len(inputs)
    prompts = [list(x) + [EOS] for x in inputs]
    L = max(len(s) for s in prompts)
    tokens = np.zeros((B, L), dtype=np.int64)
    mask = np.zeros((B, L))
    for k, s in enumerate(prompts):
        tokens[k, :len(s)] = s
        mask[k, :len(s)] = 1.0
    _check_tokens(p, tokens)
    hb = np.zeros((B, p.bottom_hidden)); cb = np.zeros_like(hb)
    ht = np.zeros((B, p.top_hidden)); ct = np.zeros_like(ht)
    for t in range(L):
        m = mask[:, t:t + 1]
        hb2, cb2, _ = _cell(p.bottom_W, p.bottom_b, p.embed[tokens[:, t]], hb, cb)
        ht2, ct2, _ = _cell(p.top_W, p.top_b, hb2, ht, ct)
        hb = m * hb2 + (1 - m) * hb; cb = m * cb2 + (1 - m) * cb
        ht = m * ht2 + (1 - m) * ht; ct = m * ct2 + (1 - m) * ct
    outs: list[list[int]] = [[] for _ in range(B)]
    qs: list[list[float]] = [[] for _ in range(B)]
    active = np.ones(B, dtype=bool)
    for _ in range(max_len):
        probs = np.exp(log_softmax(ht @ p.head_W + p.head_b))
        nxt = np.zeros(B, dtype=np.int64)
        for k in np.flatnonzero(active):
            a = sample_action(probs[k], rngs[k])
            outs[k].append(a)
            qs[k].append(float(probs[k, a]))
            nxt[k] = a
            if a == EOS:
                active[k] = False
        if not active.any():
            break
        # finished rows keep stepping on EOS; their outputs are never read again
        hb, cb, _ = _cell(p.bottom_W, p.bottom_b, p.embed[nxt], hb, cb)
        ht, ct, _ = _cell(p.top_W, p.top_b, hb, ht, ct)
    return outs, qs


def generate(p: PolicyParams, input: Sequence[int], max_len: int, rng: np.random.Generator) -> list[int]:
    outs, _ = generate_batch(p, [input], max_len, [rng])
    return outs[0]


def greedy_batch(p: PolicyParams, inputs: Sequence[Sequence[int]], lengths: Sequence[int]) -> list[list[int]]:
    """Argmax decoding of exactly ``lengths[k]`` tokens per input (teacher-free)."""
    B = len(inputs)
    prompts = [list(x) + [EOS] for x in inputs]
    L = max(len(s) for s in prompts)
    tokens = np.zeros((B, L), dtype=np.int64)
    mask = np.zeros((B, L))
    for k, s in enumerate(prompts):
        tokens[k, :len(s)] = s
        mask[k, :len(s)] = 1.0
    hb = np.zeros((B, p.bottom_hidden)); cb = np.zeros_like(hb)
    ht = np.zeros((B, p.top_hidden)); ct = np.zeros_like(ht)
    for t in range(L):
        m = mask[:, t:t + 1]
        hb2, cb2, _ = _cell(p.bottom_W, p.bottom_b, p.embed[tokens[:, t]], hb, cb)
        ht2, ct2, _ = _cell(p.top_W, p.top_b, hb2, ht, ct)
        hb = m * hb2 + (1 - m) * hb; cb = m * cb2 + (1 - m) * cb
        ht = m * ht2 + (1 - m) * ht; ct = m * ct2 + (1 - m) * ct
    outs: list[list[int]] = [[] for _ in range(B)]
    for _ in range(max(lengths)):
        nxt = np.argmax(ht @ p.head_W + p.head_b, axis=1)
        for k in range(B):
            outs[k].append(int(nxt[k]))
        hb, cb, _ = _cell(p.bottom_W, p.bottom_b, p.embed[nxt], hb, cb)
        ht, ct, _ = _cell(p.top_W, p.top_b, hb, ht, ct)
    return [o[:n] for o, n in zip(outs, lengths)]


def behavior_probs(p: PolicyParams, e: Episode, q_min: float = Q_MIN) -> list[float]:
    """q(a_t|s_t) under ``p`` for every step of ``e``, floored at ``q_min``."""
    return behavior_probs_batch(p, [e], q_min)[0]


def behavior_probs_batch(p: PolicyParams, episodes: Sequence[Episode], q_min: float = Q_MIN) -> list[list[float]]:
    packed = pack([(e.input, e.actions) for e in episodes])
    _, Hb, _ = bottom_pass(p, packed)
    logp, _, _ = top_pass(p, Hb, packed)
    q = np.clip(np.exp(target_logprobs(logp, packed)), q_min, 1.0)
    return [list(map(float, part)) for part in packed.split(q)]


def fill_behavior_probs(p: PolicyParams, episodes: Sequence[Episode], q_min: float = Q_MIN) -> list[Episode]:
    """Attach recomputed behaviour probabilities to episodes that lack them."""
    missing = [e for e in episodes if e.behavior_probs is None]
    filled = iter(behavior_probs_batch(p, missing, q_min)) if missing else iter(())
    return [e if e.behavior_probs is not None else e.with_behavior_probs(next(filled)) for e in episodes]


# --- maximum likelihood -----------------------------------------------------

@dataclass(frozen=True)
class MLConfig:
    epochs: int = 20
    step_size: float = 0.5
    batch_size: int = 32
    clip_norm: float = 5.0


def mean_nll(p: PolicyParams, corpus: Sequence[tuple[Sequence[int], Sequence[int]]], batch_size: int = 256) -> float:
    total, n = 0.0, 0
    for k in range(0, len(corpus), batch_size):
        packed = pack(corpus[k:k + batch_size])
        _, Hb, _ = bottom_pass(p, packed)
        logp, _, _ = top_pass(p, Hb, packed)
        total -= target_logprobs(logp, packed).sum()
        n += len(packed.targets)
    return total / n


def train_ml(p: PolicyParams, corpus: Sequence[tuple[Sequence[int], Sequence[int]]], cfg: MLConfig,
             rng: np.random.Generator) -> tuple[PolicyParams, list[float]]:
    """SGD on mean per-token negative log-likelihood over all parameters.

    Returns the trained params and the mean training loss of each epoch.
    """
    for _, y in corpus:
        if not y or y[-1] != EOS:
            raise ValueError("ML targets must end with EOS")
    params = p.arrays()
    losses = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(corpus))
        ep_loss, ep_tok = 0.0, 0
        for k in range(0, len(order), cfg.batch_size):
            packed = pack([corpus[i] for i in order[k:k + cfg.batch_size]])
            cur = replace(p, **params)
            n = len(packed.targets)
            grads, lp = full_gradient(cur, packed, np.full(n, 1.0 / n))
            ep_loss -= lp.sum()
            ep_tok += n
            norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            s = cfg.step_size * min(1.0, cfg.clip_norm / norm) if norm > 0 else 0.0
            for name, g in grads.items():
                params[name] = params[name] + s * g
        losses.append(ep_loss / ep_tok)
    return replace(p, **params), losses


# --- checkpoints ------------------------------------------------------------

def save_checkpoint(p: PolicyParams, path: str | Path, extra: dict | None = None) -> None:
    """JSON checkpoint: shapes, flat float arrays (repr-exact), mask, seed."""
    doc = {
        "format": "bpglab-policy",
        "version": CHECKPOINT_VERSION,
        "init_seed": p.init_seed,
        "trainable": list(p.trainable),
        "arrays": {k: {"shape": list(a.shape), "data": a.ravel().tolist()} for k, a in p.arrays().items()},
    }
    if extra:
        doc["extra"] = extra
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc))


def load_checkpoint(path: str | Path) -> PolicyParams:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "bpglab-policy" or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} bpglab policy checkpoint")
    arrays = {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in doc["arrays"].items()}
    return PolicyParams(**arrays, trainable=tuple(doc["trainable"]), init_seed=doc["init_seed"])


def checkpoint_extra(path: str | Path) -> dict:
    return json.loads(Path(path).read_text()).get("extra", {})
