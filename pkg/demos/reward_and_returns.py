"""
Rewards, importance weights and lambda-returns by hand
======================================================

A walk through the scalar pieces of a batch policy-gradient update on one
logged episode, before any network is involved.
"""

import numpy as np

from bpglab import bpg as B
from bpglab import synthetic as S
from bpglab.mdp import EOS

# The task: reverse the input sentence, but avoid a few "forbidden" words.
# The expected score mixes recall of input words with a penalty that decays
# geometrically in the fraction of forbidden words in the output.
spec = S.TaskSpec(vocab_size=120, forbidden={101, 102})
x = [1, 2, 3, 4, 5, 6, 7, 8, 101, 102]
y = [1, 2, 3, 4, 5, 6, 7, 101, EOS]          # 8 of 10 input words, 1 of 8 forbidden
b = S.expected_reward(x, y, spec)
print(f"recall {b.r_r:.3f}, forbidden fraction {b.p_f:.3f}, expected score {b.r:.4f}")

# Logged rewards are noisy: the mean of five Bernoulli draws with that mean.
rng = np.random.default_rng(0)
print("five noisy labels:", [S.sample_reward(b.r, rng) for _ in range(5)])

# Importance weights compare the policy being trained with whoever produced
# the log. BPG-NIS simply ignores the correction.
print("rho(0.2 | 0.1) =", B.importance_weight(0.2, 0.1))
print("rho under BPG-NIS =", B.importance_weight(0.2, 0.1, variant="BPG-NIS"))

# Lambda-returns are computed from the end of the episode backwards,
# mixing the critic's next-state value with the importance-weighted return.
reward = 1.0
rhos = np.array([2.0, 0.5, 1.0])
values_next = np.array([0.4, 0.6, 0.5])
for lam in (0.0, 0.5, 1.0):
    print(f"lambda={lam}:", np.round(B.lambda_returns(reward, values_next, rhos, lam), 4))

# The update weight at each step is rho * (return - value), clipped at +-5
# and divided by the episode length.
values = np.array([0.3, 0.4, 0.6])
R = B.lambda_returns(reward, values_next, rhos, 0.5)
raw = rhos * (R - values)
print("raw weights", np.round(raw, 4), "-> clipped / T", np.round(np.clip(raw, -5, 5) / len(raw), 4))
