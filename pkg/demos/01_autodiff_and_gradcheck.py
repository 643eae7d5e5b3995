"""
Reverse-mode gradients on a tiny graph
======================================

Build a small expression, backpropagate, and compare against central
finite differences. Then run the same check over every primitive and the
whole fusion model.
"""

import numpy as np

from pedfusion import harness
from pedfusion import tensor as T

rng = np.random.default_rng(0)
x = T.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
w = T.Tensor(rng.normal(size=(4, 2)), requires_grad=True)

# softmax over a relu'd projection, reduced to a scalar
loss = T.sum_(T.log(T.softmax(T.relu(T.matmul(x, w)))))
T.backward(loss, params=[x, w])
print("dloss/dw =\n", w.grad)

# the analytic gradient against finite differences, in float64
err, where = T.gradcheck(lambda a, b: T.log(T.softmax(T.relu(T.matmul(a, b)))), [x.data, w.data])
print(f"worst relative error {err:.2e} at input {where[0]}, flat index {where[1]}")

# the full suite behind `pedfusion gradcheck`
for result in harness.gradcheck_suite():
    print(result.to_line())
