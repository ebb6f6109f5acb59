"""IGAF network blocks as pure functions of (parameters, inputs).

Parameters live in a flat, ordered :class:`ParamStore` with hierarchical
dotted names (``igaf.0.rgb_fwf.fe.1.conv1.weight``). Block functions take a
:class:`Scope` (a prefix view into the store) so the same code serves every
instance of a block. The model configuration travels with the store.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import (
    Tensor,
    add,
    concat_channels,
    conv2d,
    dropout,
    global_avg_pool,
    leaky_relu,
    linear,
    mul,
    relu,
    sigmoid,
)

FUSION_KINDS = ("igaf", "add", "concat")
SKIP_LOCATIONS = ("after_fe", "after_wf")


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 32
    n_fe: int = 2
    num_igaf: int = 3
    scale: int = 4
    wf_dilations: tuple = (1, 2, 3)
    ca_reduction: int = 4
    saf_mlp_layers: int = 2
    saf_weighted: bool = True
    use_wf: bool = True
    skip_location: str = "after_fe"
    fusion_kind: str = "igaf"
    leaky_slope: float = 0.1
    dropout_p: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "wf_dilations", tuple(int(d) for d in self.wf_dilations))
        if self.channels < 1 or self.ca_reduction < 1 or self.channels % self.ca_reduction:
            raise ConfigError(
                f"channels ({self.channels}) must be a positive multiple of ca_reduction ({self.ca_reduction})"
            )
        if self.num_igaf < 1 or self.n_fe < 1:
            raise ConfigError("num_igaf and n_fe must be >= 1")
        if self.scale < 1:
            raise ConfigError(f"scale must be >= 1, got {self.scale}")
        if not self.wf_dilations or any(d < 1 for d in self.wf_dilations):
            raise ConfigError(f"wf_dilations must be non-empty and positive, got {self.wf_dilations}")
        if self.saf_mlp_layers not in (1, 2):
            raise ConfigError(f"saf_mlp_layers must be 1 or 2, got {self.saf_mlp_layers}")
        if self.skip_location not in SKIP_LOCATIONS:
            raise ConfigError(f"skip_location must be one of {SKIP_LOCATIONS}, got {self.skip_location!r}")
        if self.fusion_kind not in FUSION_KINDS:
            raise ConfigError(f"fusion_kind must be one of {FUSION_KINDS}, got {self.fusion_kind!r}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["wf_dilations"] = list(self.wf_dilations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config key(s): {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)


# --------------------------------------------------------------------------
# parameter store
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamSpec:
    shape: tuple
    fan_in: int = 0  # 0 marks a bias

    @property
    def is_bias(self) -> bool:
        return self.fan_in == 0


class ParamStore:
    """Ordered name -> Tensor map; iteration follows registration order."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, t: Tensor) -> None:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t.requires_grad = True
        self._params[name] = t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def scope(self, prefix: str) -> "Scope":
        return Scope(self, prefix)

    def num_params(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def fill_(self, value: float) -> "ParamStore":
        for t in self._params.values():
            t.data[...] = value
        return self

    def copy(self) -> "ParamStore":
        new = ParamStore(self.config)
        for name, t in self._params.items():
            new.add(name, Tensor(t.data.copy()))
        return new


class Scope:
    """Prefix view into a :class:`ParamStore`."""

    def __init__(self, store: ParamStore, prefix: str):
        self.store = store
        self.prefix = prefix

    @property
    def config(self) -> ModelConfig:
        return self.store.config

    def _full(self, name: str) -> str:
        return f"{self.prefix}.{name}" if self.prefix else name

    def __getitem__(self, name: str) -> Tensor:
        return self.store[self._full(name)]

    def __contains__(self, name: str) -> bool:
        return self._full(name) in self.store

    def scope(self, name: str) -> "Scope":
        return Scope(self.store, self._full(name))


def _as_scope(p) -> Scope:
    return p.scope("") if isinstance(p, ParamStore) else p


def _conv_spec(specs: dict, name: str, cin: int, cout: int, k: int) -> None:
    specs[f"{name}.weight"] = ParamSpec((cout, cin, k, k), cin * k * k)
    specs[f"{name}.bias"] = ParamSpec((cout,))


def _linear_spec(specs: dict, name: str, cin: int, cout: int) -> None:
    specs[f"{name}.weight"] = ParamSpec((cout, cin), cin)
    specs[f"{name}.bias"] = ParamSpec((cout,))


def _fe_specs(specs: dict, name: str, c: int, r: int) -> None:
    _conv_spec(specs, f"{name}.conv1", c, c, 3)
    _conv_spec(specs, f"{name}.conv2", c, c, 3)
    _conv_spec(specs, f"{name}.ca.conv1", c, c // r, 1)
    _conv_spec(specs, f"{name}.ca.conv2", c // r, c, 1)
    _conv_spec(specs, f"{name}.conv3", c, c, 3)


def param_specs(cfg: ModelConfig) -> dict[str, ParamSpec]:
    """Every parameter name and shape for ``cfg``, in registration order."""
    c, r = cfg.channels, cfg.ca_reduction
    specs: dict[str, ParamSpec] = {}
    _conv_spec(specs, "stem_rgb", 3, c, 3)
    _conv_spec(specs, "stem_depth", 1, c, 3)
    for i in range(cfg.num_igaf):
        for stream in ("rgb_fwf", "depth_fwf"):
            for j in range(cfg.n_fe):
                _fe_specs(specs, f"igaf.{i}.{stream}.fe.{j}", c, r)
            if cfg.use_wf:
                for b in range(len(cfg.wf_dilations)):
                    _conv_spec(specs, f"igaf.{i}.{stream}.wf.branch.{b}", c, c, 3)
                _conv_spec(specs, f"igaf.{i}.{stream}.wf.out", c, c, 3)
        if cfg.fusion_kind == "igaf":
            for saf in ("saf1", "saf2"):
                if cfg.saf_weighted:
                    for side in ("mlp_a", "mlp_b"):
                        for layer in range(cfg.saf_mlp_layers):
                            _linear_spec(specs, f"igaf.{i}.{saf}.{side}.{layer}", c, c)
                if saf == "saf1":
                    _conv_spec(specs, f"igaf.{i}.fuse_conv", c, c, 3)
        elif cfg.fusion_kind == "concat":
            _conv_spec(specs, f"igaf.{i}.concat_proj", 2 * c, c, 1)
    for j in range(3):
        _fe_specs(specs, f"refine.fe.{j}", c, r)
    _conv_spec(specs, "refine.conv1", c, c, 3)
    _conv_spec(specs, "refine.conv2", c, 1, 3)
    return specs


def count_params(cfg: ModelConfig) -> int:
    return sum(int(np.prod(s.shape)) for s in param_specs(cfg).values())


def init_params(config: ModelConfig, seed: int, dtype=np.float32) -> ParamStore:
    """Kaiming-uniform (fan-in, LeakyReLU gain) weights and zero biases.

    Draws happen in registration order from one generator seeded by
    ``seed``, in float64, then cast, so results are bitwise reproducible.
    """
    rng = np.random.default_rng(seed)
    gain = np.sqrt(2.0 / (1.0 + config.leaky_slope**2))
    store = ParamStore(config)
    for name, spec in param_specs(config).items():
        if spec.is_bias:
            data = np.zeros(spec.shape, dtype=dtype)
        else:
            bound = gain / np.sqrt(spec.fan_in)
            data = rng.uniform(-bound, bound, size=spec.shape).astype(dtype)
        store.add(name, Tensor(data))
    return store


# --------------------------------------------------------------------------
# blocks
# --------------------------------------------------------------------------


def _conv(p: Scope, name: str, x: Tensor, dilation: int = 1) -> Tensor:
    w = p[f"{name}.weight"]
    pad = dilation * (w.shape[-1] - 1) // 2
    return conv2d(x, w, p[f"{name}.bias"], padding=pad, dilation=dilation)


def ca_forward(params, k: Tensor) -> Tensor:
    """Channel attention: ``K * sigmoid(conv(relu(conv(avgpool(K)))))``."""
    p = _as_scope(params)
    cin = p["conv1.weight"].shape[1]
    if k.ndim != 4 or k.shape[1] != cin:
        raise ShapeError(f"channel attention expects {cin} channels, got {k.shape}")
    if cin % p["conv1.weight"].shape[0]:
        raise ConfigError(f"channels ({cin}) not divisible by the attention reduction")
    z = global_avg_pool(k)
    z = relu(_conv(p, "conv1", z))
    gate = sigmoid(_conv(p, "conv2", z))
    return mul(k, gate)


def fe_forward(params, m: Tensor) -> Tensor:
    """``M + conv3(M + CA(conv2(lrelu(conv1(M)))))``."""
    p = _as_scope(params)
    slope = p.config.leaky_slope
    y = leaky_relu(_conv(p, "conv1", m), slope)
    y = ca_forward(p.scope("ca"), _conv(p, "conv2", y))
    y = _conv(p, "conv3", add(m, y))
    return add(m, y)


def wf_forward(params, x: Tensor, training: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Wide-focus: parallel dilated 3x3 branches, summed, then one more conv.

    Each conv is followed by LeakyReLU and dropout.
    """
    p = _as_scope(params)
    cfg = p.config
    total = None
    for b, d in enumerate(cfg.wf_dilations):
        y = leaky_relu(_conv(p, f"branch.{b}", x, dilation=d), cfg.leaky_slope)
        y = dropout(y, cfg.dropout_p, training, rng)
        total = y if total is None else add(total, y)
    y = leaky_relu(_conv(p, "out", total), cfg.leaky_slope)
    return dropout(y, cfg.dropout_p, training, rng)


def fwf_forward(params, x: Tensor, training: bool = False, rng=None) -> tuple[Tensor, Tensor]:
    """FE stack then WF. Returns ``(deep, shallow)``.

    ``shallow`` is the post-FE feature; with ``skip_location='after_wf'``
    the deep feature is returned in its place.
    """
    p = _as_scope(params)
    cfg = p.config
    shallow = x
    for j in range(cfg.n_fe):
        shallow = fe_forward(p.scope(f"fe.{j}"), shallow)
    if cfg.use_wf:
        deep = add(shallow, wf_forward(p.scope("wf"), shallow, training, rng))
    else:
        deep = shallow
    if cfg.skip_location == "after_wf":
        return deep, deep
    return deep, shallow


def _mlp(p: Scope, x: Tensor, layers: int) -> Tensor:
    for layer in range(layers):
        x = linear(x, p[f"{layer}.weight"], p[f"{layer}.bias"])
    return x


def saf_forward(params, x_a: Tensor, x_b: Tensor) -> Tensor:
    """Cross-gated fusion ``x_a * sigmoid(mlp_b(x_b)) + x_b * sigmoid(mlp_a(x_a))``.

    The MLPs are affine maps along the channel axis (no hidden activation).
    Unweighted variant: ``x_a + x_b``.
    """
    if x_a.shape != x_b.shape:
        raise ShapeError(f"SAF inputs differ in shape: {x_a.shape} vs {x_b.shape}")
    p = _as_scope(params)
    cfg = p.config
    if not cfg.saf_weighted:
        return add(x_a, x_b)
    y_a = _mlp(p.scope("mlp_a"), x_a, cfg.saf_mlp_layers)
    y_b = _mlp(p.scope("mlp_b"), x_b, cfg.saf_mlp_layers)
    return add(mul(x_a, sigmoid(y_b)), mul(x_b, sigmoid(y_a)))


def igaf_forward(params, r_in: Tensor, d_in: Tensor, training: bool = False, rng=None) -> tuple[Tensor, Tensor]:
    """One IGAF stage. Returns ``(d_out, r_out)``."""
    if r_in.shape != d_in.shape:
        raise ShapeError(f"IGAF streams differ in shape: {r_in.shape} vs {d_in.shape}")
    p = _as_scope(params)
    cfg = p.config
    r_deep, r_shallow = fwf_forward(p.scope("rgb_fwf"), r_in, training, rng)
    d_deep, _ = fwf_forward(p.scope("depth_fwf"), d_in, training, rng)
    if cfg.fusion_kind == "add":
        d_out = add(r_deep, d_deep)
    elif cfg.fusion_kind == "concat":
        d_out = _conv(p, "concat_proj", concat_channels(r_deep, d_deep))
    else:
        m = mul(r_deep, d_deep)
        s1 = saf_forward(p.scope("saf1"), m, r_deep)
        c = _conv(p, "fuse_conv", s1)
        d_out = saf_forward(p.scope("saf2"), c, d_deep)
    return d_out, r_shallow


def depth_refine_forward(params, x: Tensor) -> Tensor:
    """Three FE blocks, then conv -> LeakyReLU -> conv down to one channel."""
    p = _as_scope(params)
    for j in range(3):
        x = fe_forward(p.scope(f"fe.{j}"), x)
    x = leaky_relu(_conv(p, "conv1", x), p.config.leaky_slope)
    return _conv(p, "conv2", x)


def model_forward(params: ParamStore, g: Tensor, l_up: Tensor, training: bool = False, rng=None) -> Tensor:
    """Predicted HR depth: ``L_U + refine(IGAF_k(...IGAF_1(stem(G), stem(L_U))))``."""
    if g.ndim != 4 or l_up.ndim != 4 or g.shape[1] != 3 or l_up.shape[1] != 1:
        raise ShapeError(f"expected G [N,3,H,W] and L_U [N,1,H,W], got {g.shape} and {l_up.shape}")
    if g.shape[0] != l_up.shape[0] or g.shape[2:] != l_up.shape[2:]:
        raise ShapeError(f"G {g.shape} and L_U {l_up.shape} are not spatially aligned")
    p = _as_scope(params)
    slope = p.config.leaky_slope
    r = leaky_relu(_conv(p, "stem_rgb", g), slope)
    d = leaky_relu(_conv(p, "stem_depth", l_up), slope)
    for i in range(p.config.num_igaf):
        d, r = igaf_forward(p.scope(f"igaf.{i}"), r, d, training, rng)
    return add(l_up, depth_refine_forward(p.scope("refine"), d))
