"""Named-tensor parameter containers and their JSON serialization.

File layout::

    {"format": "lstm_laglasso.params/1", "kind": "lstm" | "mlp",
     "tensors": [{"name": "W_fx", "shape": [3, 1], "data": [...row-major...]}, ...]}

Floats are written with ``repr`` precision, so a save/load round trip is bit-exact.
"""
from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

FORMAT = "lstm_laglasso.params/1"
_KINDS: dict[str, type] = {}


def register(kind: str):
    def deco(cls):
        cls.kind = kind
        _KINDS[kind] = cls
        return cls
    return deco


class TensorParams:
    """Mixin for dataclasses whose fields are all float64 arrays."""

    kind = "abstract"

    def __post_init__(self):
        for f in dataclasses.fields(self):
            arr = np.array(getattr(self, f.name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"parameter {f.name} has non-finite entries")
            object.__setattr__(self, f.name, arr)
        self.validate()

    def validate(self) -> None:
        pass

    @classmethod
    def unchecked(cls, **arrays):
        """Build without shape/finiteness validation (gradient containers)."""
        obj = cls.__new__(cls)
        for name in cls.names():
            object.__setattr__(obj, name, arrays[name])
        return obj

    @classmethod
    def names(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.names()}

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def flat(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors().values()])

    def from_flat(self, vec: np.ndarray):
        vec = np.asarray(vec, dtype=np.float64)
        out, pos = {}, 0
        for name, t in self.tensors().items():
            out[name] = vec[pos:pos + t.size].reshape(t.shape)
            pos += t.size
        if pos != vec.size:
            raise ValueError(f"flat vector has {vec.size} entries, expected {pos}")
        return type(self)(**out)

    def zeros_like(self):
        return type(self)(**{k: np.zeros_like(v) for k, v in self.tensors().items()})

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "kind": self.kind,
            "tensors": [
                {"name": k, "shape": list(v.shape), "data": [float(x) for x in v.ravel()]}
                for k, v in self.tensors().items()
            ],
        }


def params_from_dict(d: dict):
    if d.get("format") != FORMAT:
        raise ValueError(f"unsupported parameter format {d.get('format')!r}")
    cls = _KINDS.get(d.get("kind"))
    if cls is None:
        raise ValueError(f"unknown parameter kind {d.get('kind')!r}")
    tensors = {t["name"]: np.array(t["data"], dtype=np.float64).reshape(t["shape"]) for t in d["tensors"]}
    missing = set(cls.names()) - set(tensors)
    if missing:
        raise ValueError(f"missing tensors {sorted(missing)}")
    return cls(**{k: tensors[k] for k in cls.names()})


def save_params(params: TensorParams, path) -> None:
    Path(path).write_text(json.dumps(params.to_dict()), encoding="utf-8")


def load_params(path):
    return params_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
