"""
Taped gradients and masked attention
====================================

A tour of the small autograd engine the detector is built on.
"""

import numpy as np

from chunkhalu import tensor as T
from chunkhalu.tensor import Tape, Tensor

# Leaves that should receive gradients are marked with requires_grad.
x = Tensor(np.array([[0.5, -1.0, 2.0]]), requires_grad=True)
w = Tensor(np.random.default_rng(0).normal(size=(3, 2)), requires_grad=True)

# Ops run eagerly; the tape only records while the context is open.
with Tape() as tape:
    h = T.gelu(T.matmul(x, w))
    loss = T.sum_all(T.mul(h, h))
tape.backward(loss)
print("loss", float(loss.data))
print("dloss/dw\n", w.grad)

# Compare against central differences.
err = T.finite_difference_check(lambda p: T.sum_all(T.gelu(T.matmul(p[0], p[1]))), [x, w])
print("max relative error vs finite differences", err)

## Masked softmax: masked keys get exactly zero weight
scores = Tensor(np.array([[1.0, 3.0, 0.5, 2.0]]))
mask = np.array([[True, False, True, True]])
print(T.softmax_rows(scores, mask).data)

# A row with nothing to attend to is an error, not a silent NaN.
try:
    T.softmax_rows(scores, np.zeros_like(mask))
except T.DegenerateRowError as err:
    print("refused:", err)
