"""Finite-difference gradient suite over every op and block, in float64.

Inputs are drawn in [-2, 2]. A draw is accepted only if every ReLU/LeakyReLU
input reached during the forward pass, including hidden pre-activations, lies
more than ``KINK_MARGIN`` from the kink at zero; otherwise the case is redrawn.
Dropout runs in eval mode. Block-level checks
perturb the block inputs plus a representative subset of the block's
parameters to keep the run short.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional
from unittest import mock

import numpy as np

from . import blocks
from .blocks import (
    ModelConfig,
    ca_forward,
    depth_refine_forward,
    fe_forward,
    init_params,
    igaf_forward,
    model_forward,
    saf_forward,
    wf_forward,
)
from .errors import NumericalError
from .gradcheck import grad_check
from .tensor import Tensor, add, conv2d, global_avg_pool, leaky_relu, linear, mul, relu, sigmoid

EPS = 1e-4
TOLERANCE = 1e-5
KINK_MARGIN = 1e-3
MAX_DRAWS = 5000

CONFIG = ModelConfig(channels=4, n_fe=1, num_igaf=1, ca_reduction=2)


def _rand(rng: np.random.Generator, *shape, lo: float = -2.0, hi: float = 2.0) -> Tensor:
    x = rng.uniform(lo, hi, size=shape)
    near = np.abs(x) < KINK_MARGIN
    x[near] = np.copysign(2 * KINK_MARGIN, x[near] + 1e-300)
    return Tensor(x)


def _params(rng: np.random.Generator):
    p = init_params(CONFIG, int(rng.integers(2**31)), dtype=np.float64)
    for name, t in p.items():
        if name.endswith(".bias"):
            t.data[...] = rng.uniform(-0.1, 0.1, size=t.shape)
    return p


def _pick(p, names: Iterable[str]) -> list[Tensor]:
    return [p[n] for n in names]


def _all_under(p, prefix: str) -> list[Tensor]:
    return [t for n, t in p.items() if n.startswith(prefix + ".")]


def _case_conv2d(rng):
    x, w, b = _rand(rng, 1, 2, 6, 6), _rand(rng, 3, 2, 3, 3), _rand(rng, 3)

    def f(x, w, b):
        return add(add(conv2d(x, w, b, padding=1), conv2d(x, w, b, padding=2, dilation=2)), conv2d(x, w, b, padding=3, dilation=3))

    return f, [x, w, b]


def _case_linear(rng):
    return (lambda x, w, b: linear(x, w, b)), [_rand(rng, 2, 3, 2, 2), _rand(rng, 4, 3), _rand(rng, 4)]


def _case_activations(rng):
    return (lambda t: add(add(leaky_relu(t, 0.1), mul(relu(t), relu(t))), sigmoid(t))), [_rand(rng, 1, 2, 4, 4)]


def _case_pool(rng):
    return global_avg_pool, [_rand(rng, 2, 3, 3, 4)]


def _case_elementwise(rng):
    a, b, gate = _rand(rng, 1, 3, 3, 3), _rand(rng, 1, 3, 3, 3), _rand(rng, 1, 3, 1, 1)
    return (lambda a, b, g: add(mul(add(a, b), mul(a, b)), mul(g, a))), [a, b, gate]


def _case_ca(rng):
    p = _params(rng)
    pre = "igaf.0.rgb_fwf.fe.0.ca"
    return (lambda k, *w: ca_forward(p.scope(pre), k)), [_rand(rng, 1, 4, 4, 4)] + _all_under(p, pre)


def _case_fe(rng):
    p = _params(rng)
    pre = "igaf.0.rgb_fwf.fe.0"
    return (lambda m, *w: fe_forward(p.scope(pre), m)), [_rand(rng, 1, 4, 5, 5)] + _all_under(p, pre)


def _case_wf(rng):
    p = _params(rng)
    pre = "igaf.0.depth_fwf.wf"
    return (lambda x, *w: wf_forward(p.scope(pre), x)), [_rand(rng, 1, 4, 6, 6)] + _all_under(p, pre)


def _case_saf(rng):
    p = _params(rng)
    pre = "igaf.0.saf1"
    a, b = _rand(rng, 1, 4, 6, 6), _rand(rng, 1, 4, 6, 6)
    return (lambda a, b, *w: saf_forward(p.scope(pre), a, b)), [a, b] + _all_under(p, pre)


def _case_igaf(rng):
    p = _params(rng)
    s = p.scope("igaf.0")
    r, d = _rand(rng, 1, 4, 5, 5), _rand(rng, 1, 4, 5, 5)
    weights = _pick(
        p,
        [
            "igaf.0.saf1.mlp_a.0.weight",
            "igaf.0.saf2.mlp_b.1.weight",
            "igaf.0.fuse_conv.weight",
            "igaf.0.fuse_conv.bias",
            "igaf.0.rgb_fwf.wf.branch.2.weight",
            "igaf.0.depth_fwf.fe.0.ca.conv1.weight",
        ],
    )

    def both(r, d, *w):
        d_out, r_out = igaf_forward(s, r, d)
        return add(d_out, mul(r_out, r_out))

    return both, [r, d] + weights


def _case_refine(rng):
    p = _params(rng)
    weights = _pick(p, ["refine.fe.2.conv3.weight", "refine.conv1.weight", "refine.conv2.weight", "refine.conv2.bias"])
    return (lambda x, *w: depth_refine_forward(p.scope("refine"), x)), [_rand(rng, 1, 4, 5, 5)] + weights


def _case_model(rng):
    p = _params(rng)
    g, l_up = _rand(rng, 1, 3, 4, 4, lo=0.0, hi=1.0), _rand(rng, 1, 1, 4, 4, lo=0.0, hi=1.0)
    weights = _pick(
        p,
        [
            "stem_rgb.weight",
            "stem_depth.bias",
            "igaf.0.saf2.mlp_a.1.weight",
            "igaf.0.rgb_fwf.fe.0.conv2.weight",
            "refine.conv2.weight",
        ],
    )
    return (lambda g, l, *w: model_forward(p, g, l)), [g, l_up] + weights


CASES: dict[str, Callable[[np.random.Generator], tuple]] = {
    "conv2d": _case_conv2d,
    "linear": _case_linear,
    "activations": _case_activations,
    "global_avg_pool": _case_pool,
    "elementwise": _case_elementwise,
    "ca": _case_ca,
    "fe": _case_fe,
    "wf": _case_wf,
    "saf": _case_saf,
    "igaf": _case_igaf,
    "refine": _case_refine,
    "model": _case_model,
}


def kink_distance(f: Callable, inputs: list[Tensor]) -> float:
    """Smallest |input| seen by any ReLU/LeakyReLU during ``f(*inputs)``."""
    seen = [np.inf]

    def watch(fn):
        def wrapped(x, *args, **kwargs):
            seen.append(float(np.min(np.abs(x.data))))
            return fn(x, *args, **kwargs)

        return wrapped

    with mock.patch.object(blocks, "relu", watch(relu)), mock.patch.object(blocks, "leaky_relu", watch(leaky_relu)):
        f(*inputs)
    return min(seen)


def check_case(name: str, rng: np.random.Generator) -> float:
    for _ in range(MAX_DRAWS):
        f, inputs = CASES[name](rng)
        if kink_distance(f, inputs) > KINK_MARGIN:
            return grad_check(f, inputs, EPS)
    raise NumericalError(f"gradcheck {name}: no kink-free draw in {MAX_DRAWS} attempts")


def run_suite(blocks: Optional[Iterable[str]] = None, seed: int = 0) -> dict[str, float]:
    """Worst relative error per block name."""
    names = list(CASES) if blocks is None else list(blocks)
    unknown = [n for n in names if n not in CASES]
    if unknown:
        raise KeyError(f"unknown gradcheck block(s) {unknown}; choose from {sorted(CASES)}")
    return {n: check_case(n, np.random.default_rng([seed, i])) for i, n in enumerate(names)}
