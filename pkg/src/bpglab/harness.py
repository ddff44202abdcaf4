"""Experiment pipeline: corpus -> ML pretraining -> logged pool -> RL training -> evaluation.

Every stage reads a flat ``key = value`` config, writes into its own
directory under the output root and leaves a ``manifest.json`` carrying a
hash of the configuration it was produced with. Downstream stages recompute
the upstream hash and refuse to run on outputs made with a different config.

All randomness derives from the root seed through named sub-streams, so
changing one stage (say, the number of RL seeds) never perturbs another.
"""

import configparser
import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from . import bpg as B
from . import critic as C
from . import policy as P
from . import synthetic as S
from .mdp import Dataset, read_jsonl, write_jsonl, write_vocab

CSV_COLUMNS = ("epoch", "test_score", "test_stderr", "mean_rho", "frac_clipped", "mean_advantage",
               "mean_clipped_weight", "max_abs_weight", "config_hash")


class ConfigError(ValueError):
    """Bad, inconsistent or missing configuration / upstream artifacts (exit code 2)."""


class NumericError(RuntimeError):
    """A non-finite quantity aborted training (exit code 3)."""


# --- configuration ----------------------------------------------------------

def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in str(s).replace(" ", "").split(",") if x)


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in str(s).replace(" ", "").split(",") if x)


def _dims(s: str) -> tuple[tuple[int, int, int], ...]:
    out = []
    for spec in str(s).replace(" ", "").split(","):
        parts = tuple(int(x) for x in spec.lower().split("x"))
        if len(parts) != 3:
            raise ValueError(f"bot dims {spec!r} must look like EMBEDxBOTTOMxTOP")
        out.append(parts)
    return tuple(out)


def _bool(s) -> bool:
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


_PARSERS = {int: int, float: float, str: str, bool: _bool}


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat experiment configuration; config-file keys use dots (``rl.alpha``) for underscores."""

    seed: int
    out: str = "runs"
    # corpus and task
    corpus_vocab_size: int = 120
    corpus_n_sentences: int = 2000
    corpus_min_len: int = 4
    corpus_max_len: int = 10
    corpus_zipf_exponent: float = 0.7
    corpus_heldout: int = 200
    task_forbidden_k: int = 12
    # RL policy and behaviour bots (embed x bottom x top)
    policy_embed_dim: int = 16
    policy_bottom_hidden: int = 16
    policy_top_hidden: int = 16
    ml_bots: tuple = ((16, 32, 32), (12, 24, 24))
    ml_epochs: int = 100
    ml_step_size: float = 3.0
    ml_batch_size: int = 32
    ml_clip_norm: float = 5.0
    # logged pool
    pool_test_size: int = 50
    pool_trunc_len: int = 24
    # RL
    rl_variant: str = "BPG"
    rl_critic: str = "constant"
    rl_lambda: tuple = (0.5,)
    rl_alpha: float = 0.01
    rl_gamma: float = 1.0
    rl_clip: float = 5.0
    rl_batch_size: int = 32
    rl_epochs: int = 200
    rl_alpha_xi: float = 1e-2
    rl_alpha_w: float = 1e-3
    rl_n_train: int = 0
    rl_seeds: tuple = (0, 1, 2, 3, 4)
    rl_ml_init: bool = True
    rl_eval_every: int = 1

    _LIST_PARSERS = {"ml_bots": _dims, "rl_lambda": _floats, "rl_seeds": _ints}

    def __post_init__(self):
        if not 0 <= self.task_forbidden_k < self.corpus_vocab_size - 1:
            raise ConfigError("task.forbidden_k must leave some allowed tokens")
        try:
            S.CorpusConfig.validate(self.corpus_config())
            self.train_config(self.rl_lambda[0] if self.rl_lambda else 0.5, 0)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if not self.rl_lambda or not self.rl_seeds or not self.ml_bots:
            raise ConfigError("rl.lambda, rl.seeds and ml.bots must be non-empty")
        if self.corpus_heldout % len(self.ml_bots):
            raise ConfigError("corpus.heldout must be a multiple of the number of bots")
        if not 0 < self.pool_test_size < self.corpus_heldout:
            raise ConfigError("pool.test_size must lie strictly between 0 and corpus.heldout")
        if not 0 < self.corpus_heldout < self.corpus_n_sentences:
            raise ConfigError("corpus.heldout must leave sentences for ML training")
        if self.rl_eval_every < 1 or self.rl_epochs < 0 or self.rl_n_train < 0:
            raise ConfigError("rl.eval_every >= 1, rl.epochs >= 0 and rl.n_train >= 0 required")
        if self.pool_trunc_len < 1:
            raise ConfigError("pool.trunc_len must be positive")

    # -- parsing -----------------------------------------------------------

    @classmethod
    def _field_for(cls, key: str) -> dataclasses.Field:
        name = key.strip().replace(".", "_").replace("-", "_")
        for f in dataclasses.fields(cls):
            if f.name == name:
                return f
        raise ConfigError(f"unknown config key {key!r}")

    @classmethod
    def _parse_value(cls, f: dataclasses.Field, raw):
        try:
            if f.name in cls._LIST_PARSERS:
                return raw if isinstance(raw, tuple) else cls._LIST_PARSERS[f.name](raw)
            return _PARSERS[f.type](raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {f.name}: {raw!r} ({exc})") from exc

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        kwargs = {}
        for key, raw in values.items():
            f = cls._field_for(key)
            kwargs[f.name] = cls._parse_value(f, raw)
        if "seed" not in kwargs:
            raise ConfigError("config must set 'seed' (there is no clock-based default)")
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: dict | None = None) -> "ExperimentConfig":
        """Read a flat ``key = value`` file (``#`` comments) and apply ``overrides`` on top."""
        values = {}
        if path is not None:
            path = Path(path)
            if not path.is_file():
                raise ConfigError(f"config file {path} not found")
            parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                               inline_comment_prefixes=("#",))
            parser.optionxform = str
            try:
                parser.read_string("[config]\n" + path.read_text())
            except configparser.Error as exc:
                raise ConfigError(f"{path}: {exc}") from exc
            values.update(parser["config"])
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_mapping(values)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return {f.name: _jsonable(getattr(self, f.name)) for f in dataclasses.fields(self)}

    def dumps(self) -> str:
        """Round-trippable flat config text."""
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "ml_bots":
                v = ",".join("x".join(map(str, d)) for d in v)
            elif isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            key = f.name if f.name in ("seed", "out") else f.name.replace("_", ".", 1)
            lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"

    # -- derived objects ---------------------------------------------------

    @property
    def out_root(self) -> Path:
        return Path(os.environ.get("BPGLAB_OUT") or self.out)

    def corpus_config(self) -> S.CorpusConfig:
        return S.CorpusConfig(self.corpus_vocab_size, self.corpus_n_sentences, self.corpus_min_len,
                              self.corpus_max_len, self.corpus_zipf_exponent)

    def ml_config(self) -> P.MLConfig:
        return P.MLConfig(self.ml_epochs, self.ml_step_size, self.ml_batch_size, self.ml_clip_norm)

    def net_dims(self) -> dict[str, tuple[int, int, int]]:
        nets = {"target": (self.policy_embed_dim, self.policy_bottom_hidden, self.policy_top_hidden)}
        nets.update({f"bot{i}": tuple(d) for i, d in enumerate(self.ml_bots)})
        return nets

    def train_config(self, lam: float, run_seed: int) -> B.TrainConfig:
        return B.TrainConfig(alpha=self.rl_alpha, lam=lam, gamma=self.rl_gamma, clip=self.rl_clip,
                             batch_size=self.rl_batch_size, epochs=self.rl_epochs, trunc_len=self.pool_trunc_len,
                             variant=self.rl_variant, critic_kind=self.rl_critic, alpha_xi=self.rl_alpha_xi,
                             alpha_w=self.rl_alpha_w, seed=run_seed)

    # -- stage hashes ------------------------------------------------------

    def _subset(self, *prefixes: str) -> dict:
        d = self.as_dict()
        return {k: v for k, v in d.items() if k == "seed" or k.startswith(prefixes)}

    def corpus_hash(self) -> str:
        return config_hash({"stage": "corpus", **self._subset("corpus_", "task_")})

    def ml_hash(self) -> str:
        return config_hash({"stage": "ml", "up": self.corpus_hash(), **self._subset("policy_", "ml_")})

    def pool_hash(self) -> str:
        return config_hash({"stage": "pool", "up": self.ml_hash(), **self._subset("pool_")})

    def run_hash(self, lam: float, run_seed: int) -> str:
        rl = self._subset("rl_")
        rl.pop("rl_lambda"), rl.pop("rl_seeds")
        rl["rl_variant"] = B.normalize_variant(self.rl_variant)
        return config_hash({"stage": "rl", "up": self.pool_hash(), "lam": lam, "run_seed": run_seed, **rl})

    def run_name(self, lam: float, run_seed: int) -> str:
        init = "ml" if self.rl_ml_init else "rand"
        return f"{B.normalize_variant(self.rl_variant).lower()}-{self.rl_critic}-lam{lam:g}-{init}-s{run_seed}"


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    return v


def config_hash(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def stream(root_seed: int, name: str, *keys: int) -> np.random.Generator:
    """Independent generator for a named pipeline stage (and optional integer sub-keys)."""
    return np.random.default_rng([int(root_seed), zlib.crc32(name.encode()), *map(int, keys)])


# --- manifests --------------------------------------------------------------

@dataclass
class RunManifest:
    stage: str
    config_hash: str
    version: str = __version__
    config: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    info: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def write(self, directory: Path) -> Path:
        path = Path(directory) / "manifest.json"
        path.write_text(json.dumps(dataclasses.asdict(self), indent=1, sort_keys=True))
        return path

    @classmethod
    def read(cls, directory: Path) -> "RunManifest":
        path = Path(directory) / "manifest.json"
        if not path.is_file():
            raise ConfigError(f"{path} missing; run the upstream stage first")
        return cls(**json.loads(path.read_text()))


def _require(directory: Path, stage: str, expected_hash: str) -> RunManifest:
    m = RunManifest.read(directory)
    if m.config_hash != expected_hash:
        raise ConfigError(f"{directory} was produced by a different {stage} configuration "
                          f"(hash {m.config_hash}, expected {expected_hash}); rerun that stage")
    return m


def _stage_dir(cfg: ExperimentConfig, name: str) -> Path:
    d = cfg.out_root / name
    d.mkdir(parents=True, exist_ok=True)
    return d


# --- stage 1: corpus ---------------------------------------------------------

def cmd_make_corpus(cfg: ExperimentConfig) -> Path:
    """Write corpus.txt (token ids per line), vocab.txt and forbidden.txt."""
    t0 = time.perf_counter()
    d = _stage_dir(cfg, "corpus")
    corpus = S.build_corpus(cfg.corpus_config(), stream(cfg.seed, "corpus"))
    forbidden = S.forbidden_words(corpus, cfg.task_forbidden_k) if cfg.task_forbidden_k else frozenset()
    (d / "corpus.txt").write_text("".join(" ".join(map(str, s)) + "\n" for s in corpus))
    write_vocab(d / "vocab.txt", S.token_names(cfg.corpus_vocab_size))
    (d / "forbidden.txt").write_text("".join(f"{a}\n" for a in sorted(forbidden)))
    RunManifest("corpus", cfg.corpus_hash(), config=cfg.as_dict(),
                info={"n_sentences": len(corpus), "forbidden": sorted(forbidden)},
                wall_time=time.perf_counter() - t0).write(d)
    return d


def load_corpus(cfg: ExperimentConfig) -> tuple[list[list[int]], S.TaskSpec]:
    d = cfg.out_root / "corpus"
    _require(d, "corpus", cfg.corpus_hash())
    corpus = [[int(t) for t in line.split()] for line in (d / "corpus.txt").read_text().splitlines()]
    forbidden = [int(t) for t in (d / "forbidden.txt").read_text().split()]
    return corpus, S.TaskSpec(cfg.corpus_vocab_size, frozenset(forbidden))


def split_corpus(cfg: ExperimentConfig, corpus):
    """(ML training sentences, held-out sentences used as pool inputs)."""
    return corpus[:-cfg.corpus_heldout], corpus[-cfg.corpus_heldout:]


# --- stage 2: maximum-likelihood pretraining --------------------------------

def _train_one_net(args):
    name, dims, index, cfg, ml_pairs, held_pairs = args
    rng = stream(cfg.seed, "ml", index)
    E, Hb, Ht = dims
    p0 = P.init_params(cfg.corpus_vocab_size, E, Hb, Ht, seed=int(rng.integers(2**31)))
    initial = P.mean_nll(p0, ml_pairs)
    p, losses = P.train_ml(p0, ml_pairs, cfg.ml_config(), rng)
    final = P.mean_nll(p, ml_pairs)
    greedy = P.greedy_batch(p, [x for x, _ in held_pairs], [len(y) for _, y in held_pairs])
    hits = [a == b for (_, y), g in zip(held_pairs, greedy) for a, b in zip(y, g)]
    info = {"name": name, "dims": list(dims), "initial_nll": initial, "final_nll": final,
            "epoch_losses": losses, "heldout_token_accuracy": float(np.mean(hits)),
            "chance_accuracy": 1.0 / cfg.corpus_vocab_size}
    if not math.isfinite(final):
        raise NumericError(f"ML training of {name} diverged")
    return name, p, info


def cmd_train_ml(cfg: ExperimentConfig, jobs: int = 1) -> Path:
    """Train the RL policy's initialisation ("target") and the behaviour bots by maximum likelihood."""
    t0 = time.perf_counter()
    corpus, _ = load_corpus(cfg)
    ml_sents, held = split_corpus(cfg, corpus)
    ml_pairs, held_pairs = S.reverse_pairs(ml_sents), S.reverse_pairs(held)
    d = _stage_dir(cfg, "ml")
    tasks = [(name, dims, i, cfg, ml_pairs, held_pairs) for i, (name, dims) in enumerate(cfg.net_dims().items())]
    results = _map(_train_one_net, tasks, jobs)
    h = cfg.ml_hash()
    infos = []
    for name, p, info in results:
        P.save_checkpoint(p, d / f"{name}.json", extra={"config_hash": h, **info})
        infos.append({k: v for k, v in info.items() if k != "epoch_losses"})
    RunManifest("ml", h, config=cfg.as_dict(), info={"nets": infos}, wall_time=time.perf_counter() - t0).write(d)
    return d


def load_net(cfg: ExperimentConfig, name: str) -> P.PolicyParams:
    d = cfg.out_root / "ml"
    _require(d, "ml", cfg.ml_hash())
    path = d / f"{name}.json"
    if not path.is_file():
        raise ConfigError(f"checkpoint {path} missing; rerun train-ml")
    return P.load_checkpoint(path)


# --- stage 3: logged pool -----------------------------------------------------

def cmd_gen_pool(cfg: ExperimentConfig) -> Path:
    """Let the bots answer the held-out inputs and score the answers; write train/test JSONL."""
    t0 = time.perf_counter()
    corpus, spec = load_corpus(cfg)
    _, held = split_corpus(cfg, corpus)
    bots = [load_net(cfg, f"bot{i}") for i in range(len(cfg.ml_bots))]
    pool = S.build_rl_pool(bots, held, spec, stream(cfg.seed, "pool"), cfg.pool_test_size, cfg.pool_trunc_len)
    d = _stage_dir(cfg, "pool")
    write_jsonl(d / "train.jsonl", pool.train)
    write_jsonl(d / "test.jsonl", pool.test)
    RunManifest("pool", cfg.pool_hash(), config=cfg.as_dict(),
                info={"n_train": len(pool.train), "n_test": len(pool.test),
                      "mean_train_reward": float(np.mean(pool.train.rewards))},
                wall_time=time.perf_counter() - t0).write(d)
    return d


def load_pool(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    d = cfg.out_root / "pool"
    _require(d, "pool", cfg.pool_hash())
    return read_jsonl(d / "train.jsonl", cfg.corpus_vocab_size), read_jsonl(d / "test.jsonl", cfg.corpus_vocab_size)


# --- stage 4: RL training -----------------------------------------------------

def eval_rng(cfg: ExperimentConfig, run_seed: int, epoch: int) -> np.random.Generator:
    return stream(cfg.seed, "eval", run_seed, epoch)


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def _run_one(args) -> dict:
    cfg, lam, run_seed = args
    t0 = time.perf_counter()
    _, spec = load_corpus(cfg)
    train, test = load_pool(cfg)
    test_inputs = [list(e.input) for e in test]
    tc = cfg.train_config(lam, run_seed)
    rng = stream(cfg.seed, "rl", run_seed)
    if cfg.rl_n_train and cfg.rl_n_train < len(train):
        idx = sorted(rng.permutation(len(train))[:cfg.rl_n_train].tolist())
        train = Dataset(tuple(train[i] for i in idx), train.vocab_size)
    if cfg.rl_ml_init:
        p = load_net(cfg, "target")
    else:
        E, Hb, Ht = cfg.net_dims()["target"]
        p = P.init_params(cfg.corpus_vocab_size, E, Hb, Ht, seed=int(stream(cfg.seed, "init", run_seed).integers(2**31)))
    critic = B.init_critic(train, tc, p.bottom_hidden)
    h = cfg.run_hash(lam, run_seed)
    name = cfg.run_name(lam, run_seed)

    def evaluate(epoch):
        return S.evaluate_policy(p, test_inputs, spec, eval_rng(cfg, run_seed, epoch), cfg.pool_trunc_len)

    rows = []
    rep = evaluate(0)
    rows.append({"epoch": 0, "test_score": rep.mean, "test_stderr": rep.stderr, "mean_rho": None,
                 "frac_clipped": None, "mean_advantage": None, "mean_clipped_weight": None,
                 "max_abs_weight": None})
    cache: dict = {}
    for epoch in range(1, cfg.rl_epochs + 1):
        try:
            p, critic, stats = B.train_epoch(p, critic, train, tc, rng, cache)
        except FloatingPointError as exc:
            raise NumericError(f"run {name}, epoch {epoch}: {exc}") from exc
        if stats.max_abs_weight > tc.clip:
            raise NumericError(f"run {name}, epoch {epoch}: update weight {stats.max_abs_weight} exceeds clip")
        row = {"epoch": epoch, "test_score": None, "test_stderr": None, **{
            k: getattr(stats, k) for k in ("mean_rho", "frac_clipped", "mean_advantage", "mean_clipped_weight",
                                           "max_abs_weight")}}
        if epoch % cfg.rl_eval_every == 0 or epoch == cfg.rl_epochs:
            rep = evaluate(epoch)
            row["test_score"], row["test_stderr"] = rep.mean, rep.stderr
        rows.append(row)

    d = _stage_dir(cfg, f"rl/{name}")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in rows:
        writer.writerow([r["epoch"]] + [_fmt(r[c]) for c in CSV_COLUMNS[1:-1]] + [h])
    (d / "metrics.csv").write_text(buf.getvalue())
    P.save_checkpoint(p, d / "final.json", extra={"config_hash": h, "run_seed": run_seed, "epoch": cfg.rl_epochs})
    C.save_critic(critic, d / "critic.json")
    summary = {"run": name, "lambda": lam, "run_seed": run_seed, "variant": tc.variant, "critic": tc.critic_kind,
               "ml_init": cfg.rl_ml_init, "initial_score": rows[0]["test_score"],
               "final_score": rows[-1]["test_score"], "final_stderr": rows[-1]["test_stderr"],
               "n_train": len(train)}
    RunManifest("rl", h, config=cfg.as_dict(), rows=[{k: v for k, v in r.items()} for r in rows], info=summary,
                wall_time=time.perf_counter() - t0).write(d)
    return summary


def cmd_train_rl(cfg: ExperimentConfig, jobs: int = 1) -> list[dict]:
    """Train one RL run per (lambda, seed); returns the per-run summaries."""
    load_pool(cfg)  # fail fast on missing or stale upstream stages
    load_net(cfg, "target")
    tasks = [(cfg, lam, s) for lam in cfg.rl_lambda for s in cfg.rl_seeds]
    return _map(_run_one, tasks, jobs)


def read_metrics(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def summarize(summaries: Sequence[dict]) -> list[dict]:
    """Group run summaries by condition: mean and standard error of final / initial scores across seeds."""
    groups: dict = {}
    for s in summaries:
        key = (s["variant"], s["critic"], s["lambda"], s["ml_init"])
        groups.setdefault(key, []).append(s)
    out = []
    for (variant, critic, lam, ml_init), runs in groups.items():
        fin = np.array([r["final_score"] for r in runs])
        ini = np.array([r["initial_score"] for r in runs])
        se = lambda x: float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0
        out.append({"variant": variant, "critic": critic, "lambda": lam, "ml_init": ml_init, "n_seeds": len(runs),
                    "final_mean": float(fin.mean()), "final_stderr": se(fin),
                    "initial_mean": float(ini.mean()), "initial_stderr": se(ini)})
    return out


def format_summary(rows: Sequence[dict]) -> str:
    lines = [f"{'variant':8} {'critic':8} {'lambda':>6} {'init':4} {'seeds':>5}  {'initial':>15}  {'final':>15}"]
    for r in rows:
        lines.append(f"{r['variant']:8} {r['critic']:8} {r['lambda']:6g} {'ml' if r['ml_init'] else 'rand':4} "
                     f"{r['n_seeds']:5d}  {r['initial_mean']:.4f} ± {r['initial_stderr']:.4f}  "
                     f"{r['final_mean']:.4f} ± {r['final_stderr']:.4f}")
    return "\n".join(lines)


# --- stage 5: evaluation ----------------------------------------------------

def cmd_eval(cfg: ExperimentConfig, checkpoint: str | Path, run_seed: int | None = None,
             epoch: int | None = None) -> dict:
    """Score a checkpoint on the pool's test inputs.

    The evaluation stream is keyed by (run seed, epoch); both default to the
    values stored in an RL checkpoint, so evaluating a run's final checkpoint
    reproduces the last row of its metrics CSV.
    """
    checkpoint = Path(checkpoint)
    if not checkpoint.is_file():
        raise ConfigError(f"checkpoint {checkpoint} not found")
    extra = P.checkpoint_extra(checkpoint)
    run_seed = int(extra.get("run_seed", 0) if run_seed is None else run_seed)
    epoch = int(extra.get("epoch", 0) if epoch is None else epoch)
    p = P.load_checkpoint(checkpoint)
    _, spec = load_corpus(cfg)
    _, test = load_pool(cfg)
    rep = S.evaluate_policy(p, [list(e.input) for e in test], spec, eval_rng(cfg, run_seed, epoch), cfg.pool_trunc_len)
    report = {"checkpoint": str(checkpoint), "run_seed": run_seed, "epoch": epoch,
              "config_hash": config_hash({"stage": "eval", "up": cfg.pool_hash(), "run_seed": run_seed,
                                          "epoch": epoch}), **rep.as_dict()}
    d = _stage_dir(cfg, "eval")
    (d / f"{checkpoint.parent.name}-{checkpoint.stem}.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    return report


def run_pipeline(cfg: ExperimentConfig, jobs: int = 1) -> list[dict]:
    """All stages in order; returns the RL run summaries."""
    cmd_make_corpus(cfg)
    cmd_train_ml(cfg, jobs)
    cmd_gen_pool(cfg)
    return cmd_train_rl(cfg, jobs)


def _map(fn, tasks, jobs: int):
    """Ordered map, optionally over worker processes; results do not depend on ``jobs``."""
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, tasks))
