"""Demo: the numpy autodiff core and its finite-difference gradient checker.

Builds a small MLP from raw tensor ops, trains it for a few steps, and then
verifies every analytic gradient against central finite differences.

Run: python3 demos/01_autodiff_and_gradcheck.py
"""

import numpy as np

from adapterlab import tensor as T
from adapterlab.tensor import ParameterSet, finite_difference_check

rng = np.random.default_rng(0)

# a 2-layer MLP regression on a toy target
ps = ParameterSet()
ps.add("w1", rng.normal(0, 0.3, size=(4, 16)))
ps.add("b1", np.zeros(16))
ps.add("w2", rng.normal(0, 0.3, size=(16, 1)))
ps.add("b2", np.zeros(1))

x = rng.normal(size=(64, 4))
y = np.sin(x.sum(axis=1, keepdims=True))


def loss_fn():
    h = T.relu(T.add(T.matmul(T.Tensor(x), ps["w1"]), ps["b1"]))
    pred = T.add(T.matmul(h, ps["w2"]), ps["b2"])
    err = T.sub(pred, T.Tensor(y))
    return T.tmean(T.mul(err, err))


print("step  loss")
for step in range(50):
    loss = loss_fn()
    grads = T.gradients(loss, ps)
    for name, g in grads.items():
        ps[name].data -= 0.1 * g
    if step % 10 == 0:
        print(f"{step:4d}  {loss.item():.5f}")

report = finite_difference_check(loss_fn, ps, max_entries_per_param=20,
                                 rng=np.random.default_rng(1))
print(f"\ngradient check: max relative error {report.max_error:.2e} "
      f"(tolerance {report.tolerance:.0e}) -> "
      f"{'PASS' if report.passed else 'FAIL'}")
