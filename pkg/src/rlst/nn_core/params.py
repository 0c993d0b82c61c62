from __future__ import annotations

from collections import OrderedDict
from collections.abc import Iterator
from dataclasses import dataclass

import numpy as np

from rlst.nn_core.tensor import Tensor

INIT_SCALE = 0.08


class ConfigurationError(ValueError):
    """Shapes or dimensions that do not fit together."""


class ParameterSet:
    """Insertion-ordered named tensors with per-entry trainable flags."""

    def __init__(self):
        self._entries: OrderedDict[str, Tensor] = OrderedDict()
        self._trainable: dict[str, bool] = {}

    def add(self, name: str, values, trainable: bool = True) -> Tensor:
        if name in self._entries:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(values, dtype=np.float64), requires_grad=trainable)
        self._entries[name] = t
        self._trainable[name] = trainable
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def set_trainable(self, name: str, flag: bool) -> None:
        self._trainable[name] = flag
        self._entries[name].requires_grad = flag

    def zero_grad(self) -> None:
        for t in self._entries.values():
            t.grad = None

    def copy(self) -> ParameterSet:
        out = ParameterSet()
        for name, t in self._entries.items():
            out.add(name, t.values.copy(), self._trainable[name])
        return out

    def assign(self, other: ParameterSet) -> None:
        """Overwrite values in place from ``other`` (same names and shapes)."""
        for name, t in self._entries.items():
            src = other[name].values
            if src.shape != t.shape:
                raise ConfigurationError(f"{name}: shape {src.shape} != {t.shape}")
            t.values[...] = src

    def global_grad_norm(self) -> float:
        total = 0.0
        for name, t in self._entries.items():
            if self._trainable[name] and t.grad is not None:
                total += float(np.sum(t.grad * t.grad))
        return float(np.sqrt(total))

    def equal(self, other: ParameterSet) -> bool:
        if list(self) != list(other):
            return False
        return all(np.array_equal(t.values, other[n].values) for n, t in self.items())


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)


@dataclass(frozen=True)
class GruParams:
    """Update gate z, reset gate r, candidate n; weights stored (hidden, input)."""

    w_z: Tensor
    u_z: Tensor
    b_z: Tensor
    w_r: Tensor
    u_r: Tensor
    b_r: Tensor
    w_n: Tensor
    u_n: Tensor
    b_n: Tensor

    @property
    def hidden_dim(self) -> int:
        return self.u_z.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w_z.shape[1]

    @classmethod
    def create(cls, params: ParameterSet, prefix: str, input_dim: int, hidden_dim: int,
               rng: np.random.Generator) -> GruParams:
        tensors = {}
        for gate in "zrn":
            tensors[f"w_{gate}"] = params.add(f"{prefix}.w_{gate}", uniform_init(rng, (hidden_dim, input_dim)))
            tensors[f"u_{gate}"] = params.add(f"{prefix}.u_{gate}", uniform_init(rng, (hidden_dim, hidden_dim)))
            tensors[f"b_{gate}"] = params.add(f"{prefix}.b_{gate}", np.zeros(hidden_dim))
        gru = cls(**tensors)
        gru.validate()
        return gru

    @classmethod
    def view(cls, params: ParameterSet, prefix: str) -> GruParams:
        gru = cls(**{f"{k}_{g}": params[f"{prefix}.{k}_{g}"] for g in "zrn" for k in "wub"})
        gru.validate()
        return gru

    def validate(self) -> None:
        h, i = self.hidden_dim, self.input_dim
        for gate in "zrn":
            w, u, b = (getattr(self, f"{k}_{gate}") for k in "wub")
            if w.shape != (h, i) or u.shape != (h, h) or b.shape != (h,):
                raise ConfigurationError(
                    f"gate {gate}: shapes {w.shape}, {u.shape}, {b.shape} inconsistent with hidden={h}, input={i}"
                )
