"""
The whole experiment in miniature
=================================

Corpus -> maximum-likelihood pretraining -> logged pool -> RL runs, using the
same harness as the ``bpglab`` command line but at toy scale (under a minute).
"""

import tempfile

from bpglab import harness as H

out = tempfile.mkdtemp(prefix="bpglab-demo-")
cfg = H.ExperimentConfig.from_mapping({
    "seed": 0, "out": out,
    "corpus.vocab_size": 30, "corpus.n_sentences": 240, "corpus.heldout": 40,
    "corpus.min_len": 3, "corpus.max_len": 6, "task.forbidden_k": 4,
    "policy.embed_dim": 6, "policy.bottom_hidden": 8, "policy.top_hidden": 8,
    "ml.bots": "6x8x8,5x6x6", "ml.epochs": 12, "ml.step_size": 2.0,
    "pool.test_size": 10, "pool.trunc_len": 10,
    "rl.epochs": 5, "rl.seeds": "0,1",
})
print(cfg.dumps())

# Every stage writes its outputs plus a manifest carrying a hash of the
# configuration it depends on; later stages refuse stale inputs.
H.cmd_make_corpus(cfg)
H.cmd_train_ml(cfg)
H.cmd_gen_pool(cfg)

summaries = H.cmd_train_rl(cfg) + H.cmd_train_rl(cfg.replace(rl_variant="BPG-NIS"))
print(H.format_summary(H.summarize(summaries)))

# Per-epoch metrics live in one CSV per run.
first = summaries[0]["run"]
print(open(f"{cfg.out_root}/rl/{first}/metrics.csv").read())
