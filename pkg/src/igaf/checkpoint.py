"""Checkpoint directories: ``checkpoint.json`` index plus raw little-endian blobs.

Layout::

    ckpt/
      checkpoint.json    format_version, model config, meta, tensor index
      params.bin         parameters, concatenated in registration order
      optimizer.bin      Adam first/second moments (when saved)
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np

from .blocks import ModelConfig, ParamStore, param_specs
from .errors import CheckpointError
from .optim import AdamState
from .tensor import Tensor

FORMAT_VERSION = 1
INDEX = "checkpoint.json"


def _write_blob(path: Path, arrays: dict[str, np.ndarray]) -> dict:
    index = {}
    offset = 0
    with open(path, "wb") as fh:
        for name, arr in arrays.items():
            le = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
            buf = le.tobytes()
            fh.write(buf)
            index[name] = {
                "shape": list(arr.shape),
                "dtype": le.dtype.str,
                "offset": offset,
                "nbytes": len(buf),
                "file": path.name,
            }
            offset += len(buf)
    return index


def _read_tensor(root: Path, name: str, info: dict, cache: dict) -> np.ndarray:
    fname = info["file"]
    if fname not in cache:
        try:
            cache[fname] = (root / fname).read_bytes()
        except OSError as exc:
            raise CheckpointError(f"{root}: cannot read blob {fname} ({exc})") from exc
    raw = cache[fname]
    dtype = np.dtype(info["dtype"])
    shape = tuple(info["shape"])
    count = int(np.prod(shape))
    end = info["offset"] + count * dtype.itemsize
    if end > len(raw):
        raise CheckpointError(f"{root}: tensor {name!r} extends past the end of {fname}")
    arr = np.frombuffer(raw, dtype=dtype, count=count, offset=info["offset"]).reshape(shape)
    return arr.astype(dtype.newbyteorder("="))


def save_checkpoint(path, params: ParamStore, state: Optional[AdamState] = None, meta: Optional[dict] = None) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    doc = {
        "format_version": FORMAT_VERSION,
        "model": params.config.to_dict(),
        "meta": meta or {},
        "params": _write_blob(root / "params.bin", {n: t.data for n, t in params.items()}),
    }
    if state is not None:
        moments = {f"m/{n}": a for n, a in state.m.items()}
        moments.update({f"v/{n}": a for n, a in state.v.items()})
        doc["optimizer"] = {
            "t": state.t,
            "beta1": state.beta1,
            "beta2": state.beta2,
            "eps": state.eps,
            "moments": _write_blob(root / "optimizer.bin", moments),
        }
    (root / INDEX).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return root


def _config_diff(a: ModelConfig, b: ModelConfig) -> str:
    da, db = a.to_dict(), b.to_dict()
    return ", ".join(f"{k}: {da[k]!r} (checkpoint) vs {db[k]!r} (expected)" for k in da if da[k] != db[k])


def load_checkpoint(path, config: Optional[ModelConfig] = None) -> tuple[ParamStore, Optional[AdamState], dict]:
    """Load ``(params, adam_state_or_None, meta)``.

    Every parameter implied by the stored model config must be present with
    the right shape, and nothing else. When ``config`` is given it must
    equal the stored one.
    """
    root = Path(path)
    try:
        doc = json.loads((root / INDEX).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CheckpointError(f"{root}: no {INDEX} found") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{root}: unreadable checkpoint index ({exc})") from exc
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{root}: unknown checkpoint format_version {version!r} (expected {FORMAT_VERSION})")
    stored = ModelConfig.from_dict(doc["model"])
    if config is not None and stored != config:
        raise CheckpointError(f"{root}: model config mismatch: {_config_diff(stored, config)}")

    index = doc.get("params", {})
    specs = param_specs(stored)
    for name in specs:
        if name not in index:
            raise CheckpointError(f"{root}: checkpoint is missing tensor {name!r}")
    extra = [n for n in index if n not in specs]
    if extra:
        raise CheckpointError(f"{root}: checkpoint has unexpected tensor {extra[0]!r}")

    cache: dict = {}
    params = ParamStore(stored)
    for name, spec in specs.items():
        arr = _read_tensor(root, name, index[name], cache)
        if arr.shape != spec.shape:
            raise CheckpointError(f"{root}: tensor {name!r} has shape {arr.shape}, config implies {spec.shape}")
        params.add(name, Tensor(arr))

    state = None
    opt = doc.get("optimizer")
    if opt is not None:
        state = AdamState(beta1=opt["beta1"], beta2=opt["beta2"], eps=opt["eps"], t=opt["t"])
        moments = opt["moments"]
        for name in specs:
            for kind, target in (("m", state.m), ("v", state.v)):
                key = f"{kind}/{name}"
                if key not in moments:
                    raise CheckpointError(f"{root}: optimizer state is missing {key!r}")
                target[name] = _read_tensor(root, key, moments[key], cache)
    return params, state, doc.get("meta", {})
