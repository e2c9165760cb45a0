"""
Watching an RBM learn bars and stripes
======================================

The 2x2 bars-and-stripes set has six patterns, small enough that the
partition function and the exact log-likelihood can be enumerated. We train
with CD-1 and compare against exact gradient ascent on the same model.
"""
import numpy as np

from hbdr.rbm import (CdConfig, RbmParams, bars_and_stripes, exact_gradient,
                      exact_log_likelihood, init_rbm, joint_probabilities, train_rbm)
from hbdr.tensor import make_rng

data = bars_and_stripes(2)
print(data.astype(int))

# %%
# CD-1 with learning rate 0.1, momentum 0.5, weight penalty 2e-4. With six
# samples every epoch is a single minibatch update.
params = init_rbm(4, 4, make_rng(0, "init"), dtype=np.float64)
gibbs = make_rng(0, "gibbs")
cfg = CdConfig(learning_rate=0.1, momentum=0.5, weight_penalty=2e-4)
print("epoch  log-likelihood (CD-1)")
for epoch in range(0, 1001, 100):
    print(f"{epoch:5d}  {exact_log_likelihood(data, params):.4f}")
    params = train_rbm(data, params, cfg, 100, gibbs)

# %%
# Exact gradient ascent reaches the same region far faster because it sees
# the true model expectation. The ceiling is log(1/6) = -1.7918.
exact = init_rbm(4, 4, make_rng(0, "init"), dtype=np.float64)
for step in range(3000):
    g = exact_gradient(data, exact)
    exact = RbmParams(exact.w + 0.5 * g.w, exact.a + 0.5 * g.a, exact.b + 0.5 * g.b)
print("exact ascent:", round(exact_log_likelihood(data, exact), 4), "ceiling", round(np.log(1 / 6), 4))

# %%
# Where the probability mass sits after training, per visible pattern.
vs, _, joint = joint_probabilities(exact)
for v, p in zip(vs.astype(int), joint.sum(axis=1)):
    if p > 0.01:
        print(v, round(p, 3))
