"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NumericalError
from .tensor import Tape, Tensor, backward, mul, sum_all


def _scalarize(out: Tensor, proj: np.ndarray | None) -> Tensor:
    if proj is None:
        return sum_all(out)
    return sum_all(mul(out, Tensor(proj)))


def grad_check(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-4,
    seed: int = 0,
) -> float:
    """Max relative error between backprop and central differences.

    ``f(*inputs)`` may return any shape; a non-scalar output is contracted
    with a fixed random projection so every output element is exercised.
    Inputs are perturbed in place (and restored), so ``f`` may also close
    over tensors that are passed here. The error per coordinate is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    inputs = list(inputs)
    for t in inputs:
        t.requires_grad = True
        t.grad = None

    first = f(*inputs).data.copy()
    second = f(*inputs).data
    if not np.array_equal(first, second):
        raise NumericalError("grad_check: f is not deterministic (two forward passes differ)")
    proj = None
    if first.size != 1:
        proj = np.random.default_rng(seed).uniform(0.5, 1.5, size=first.shape).astype(first.dtype)

    with Tape() as tape:
        loss = _scalarize(f(*inputs), proj)
    backward(tape, loss)
    analytic = [t.grad.copy() for t in inputs]

    def value() -> float:
        return _scalarize(f(*inputs), proj).item()

    worst = 0.0
    for t, ga in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = value()
            flat[i] = orig - eps
            down = value()
            flat[i] = orig
            num = (up - down) / (2 * eps)
            a = float(gflat[i])
            err = abs(a - num) / max(1.0, abs(a), abs(num))
            worst = max(worst, err)
    for t in inputs:
        t.grad = None
    return worst
