"""Tour of the reverse-mode engine: tapes, gradients, finite-difference checks.

Everything downstream (encoder, objectives, trainer) runs on these ops,
so this file doubles as the smallest possible correctness argument.
"""

import numpy as np

import polyspeech.numerics.tensor as tn
from polyspeech.numerics.gradcheck import grad_check
from polyspeech.objectives import gradient_reversal


def section(title: str):
    print(f"\n== {title} ==")


section("scalars through a small graph")
# y = sum(tanh(x @ w) * s): one matmul, one nonlinearity, one reduction.
rng = np.random.default_rng(0)
x = tn.Tensor(rng.standard_normal((3, 4)), requires_grad=True, name="x")
w = tn.Tensor(rng.standard_normal((4, 2)), requires_grad=True, name="w")
y = tn.sum_(tn.mul(tn.tanh(tn.matmul(x, w)), 0.5))
y.backward()
print("y      =", float(y.data))
print("dy/dx  =", np.round(x.grad, 4).tolist())

section("gradients match finite differences")
report = grad_check(
    lambda: tn.sum_(tn.mul(tn.tanh(tn.matmul(x, w)), 0.5)),
    [x, w],
)
print(report)
assert report.max_rel_err < 1e-6

section("no_grad suspends taping")
with tn.no_grad():
    frozen = tn.matmul(x, w)
print("node built under no_grad keeps no parents:", not frozen._parents)

section("gradient reversal: identity forward, negated backward")
# The adversarial branch uses this to push the encoder AWAY from
# whatever the discriminator finds.
g = tn.Tensor(np.ones((2, 2)), requires_grad=True)
plain = tn.sum_(tn.tanh(g))
plain.backward()
grad_plain = g.grad.copy()
g.grad = None
rev = tn.sum_(tn.tanh(gradient_reversal(g)))
rev.backward()
print("forward values equal:", np.array_equal(plain.data, rev.data))
print("backward sign flipped, max |g_rev + g_plain| =",
      float(np.abs(g.grad + grad_plain).max()))
