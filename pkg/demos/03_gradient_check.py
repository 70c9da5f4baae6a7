# %% [markdown]
# # Checking the autodiff against finite differences
#
# The model is small enough that every parameter of a tiny instance can be
# checked. LogitConcat multiplies the trie-constrained entity distributions by
# a stopped copy of the shared embedding, so the finite-difference side must
# hold that copy fixed too.

# %%
import numpy as np

from eco.autodiff import Tensor, numerical_grad, parameter, stop_grad

x = parameter(np.random.default_rng(0).normal(size=(3, 4)))
w = parameter(np.random.default_rng(1).normal(size=(4, 2)))

def f():
    return float((Tensor(x.data) @ w.data).tanh().sum().data)

((x @ w).tanh().sum()).backward()
num = numerical_grad(f, x)
print("max |autodiff - FD| on x:", np.abs(x.grad - num).max())

# %% [markdown]
# ``stop_grad`` is the identity going forward and a wall going backward.

# %%
x.zero_grad()
(stop_grad(x) @ w).sum().backward()
print("gradient reaching x through stop_grad:", x.grad)
print("gradient on w is still there:", w.grad is not None)

# %% [markdown]
# The same check over every parameter of a small model, with the stopped
# embedding copy frozen while the FD probes move W_e.

# %%
import sys
from pathlib import Path
from unittest import mock

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from _tiny import tiny_problem  # noqa: E402

from eco import training  # noqa: E402
from eco.model import logit_concat  # noqa: E402
from eco.training import TrainFlags, joint_loss  # noqa: E402

kb, vocab, trie, params, samples = tiny_problem()
tries = trie
frozen = Tensor(params.W_e.data.copy())

def frozen_concat(dists, w_e, stop_gradient=True):
    return logit_concat(dists, frozen if stop_gradient else w_e, stop_gradient)

with mock.patch.object(training, "logit_concat", frozen_concat):
    loss = joint_loss(params, samples, tries, TrainFlags(), vocab).total
    loss.backward()
    worst = 0.0
    for t in params.tensors():
        num = numerical_grad(lambda: float(joint_loss(params, samples, tries, TrainFlags(), vocab).total.data), t)
        rel = np.abs(t.grad - num) / np.maximum(np.maximum(np.abs(t.grad), np.abs(num)), 1e-5)
        worst = max(worst, float(rel.max()))
print("max relative error over all parameters:", worst)
