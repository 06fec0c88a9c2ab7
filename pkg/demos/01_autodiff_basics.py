"""Tour of the tensor core: building graphs, backprop, gradient checking.

Run from the repository root:  python3 demos/01_autodiff_basics.py
"""

import numpy as np

from actionflow import Parameter, Tensor, backward, grad_check, max_error
from actionflow.tensor import exp, matmul, reduce_mean, relu

# A tensor wraps a numpy array; Parameters are trainable leaves.
x = Tensor(np.linspace(-1, 1, 6).reshape(2, 3))
w = Parameter(np.random.default_rng(0).standard_normal((3, 2)), "w")

# Ops build a graph as they run. This is a tiny one-layer network with a
# mean-squared readout.
hidden = relu(matmul(x, w))
loss = reduce_mean(hidden * hidden)
print("loss =", loss.item())

# backward() walks the graph in reverse topological order and leaves
# dL/dw on the parameter.
backward(loss)
print("dL/dw =\n", w.grad)

# The same gradient, verified against central finite differences. Double
# precision keeps the comparison honest (these tensors already are).
report = grad_check(lambda: reduce_mean(relu(matmul(x, w)) * relu(matmul(x, w))), [w])
print(f"max relative error vs finite differences: {max_error(report):.2e}")

# Gradients are exact for smooth composites too.
w2 = Parameter(np.random.default_rng(1).standard_normal((3, 1)) * 0.3, "w2")
report = grad_check(lambda: reduce_mean(exp(matmul(x, w2))), [w2])
print(f"exp composite: {max_error(report):.2e}")

# Determinism: running backward twice gives bit-identical gradients.
backward(loss)
g1 = w.grad.copy()
backward(loss)
assert np.array_equal(g1, w.grad)
print("backward is deterministic: gradients identical across reruns")
