"""Closed registry of parametric scalar functions on R^n.

Every family exposes exact values, gradients and Hessians, plus vectorized
batch evaluation over stacked parameters so that a network of agents sharing a
family can be evaluated with a handful of numpy calls.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, ClassVar

import numpy as np


class ScalarFunction:
    """Base class for the registered families."""

    family: ClassVar[str] = ""
    convex: ClassVar[bool] = True
    affine: ClassVar[bool] = False

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def __call__(self, x):
        return self.evaluate(x)

    def evaluate(self, x) -> float:
        raise NotImplementedError

    def gradient(self, x) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, x) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> dict[str, Any]:
        raise NotImplementedError

    def to_spec(self) -> dict[str, Any]:
        spec = {"family": self.family}
        for key, val in self.params().items():
            spec[key] = np.asarray(val).tolist()
        return spec

    # batch interface: params stacked along a leading agent axis
    @classmethod
    def stack(cls, funcs: list[ScalarFunction]) -> dict[str, np.ndarray]:
        keys = funcs[0].params().keys()
        return {k: np.stack([np.asarray(f.params()[k], dtype=float) for f in funcs]) for k in keys}

    @staticmethod
    def batch_value(params, X) -> np.ndarray:
        raise NotImplementedError

    @staticmethod
    def batch_gradient(params, X) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Quadratic(ScalarFunction):
    """``0.5 x'Qx + b'x + c`` with symmetric positive semidefinite ``Q``."""

    Q: np.ndarray
    b: np.ndarray
    c: float = 0.0

    family: ClassVar[str] = "quadratic"

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if Q.shape != (b.size, b.size):
            raise ValueError(f"quadratic: Q shape {Q.shape} incompatible with b of size {b.size}")
        Q = 0.5 * (Q + Q.T)
        if np.linalg.eigvalsh(Q).min() < -1e-12:
            raise ValueError("quadratic: Q must be positive semidefinite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", float(self.c))

    @classmethod
    def isotropic(cls, n: int, weight: float = 1.0, center=None) -> Quadratic:
        """``0.5 * weight * ||x - center||^2``."""
        center = np.zeros(n) if center is None else np.asarray(center, dtype=float)
        return cls(weight * np.eye(n), -weight * center, 0.5 * weight * float(center @ center))

    @property
    def dim(self) -> int:
        return self.b.size

    def evaluate(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.Q @ x + self.b @ x + self.c)

    def gradient(self, x) -> np.ndarray:
        return self.Q @ np.asarray(x, dtype=float) + self.b

    def hessian(self, x) -> np.ndarray:
        return self.Q.copy()

    def params(self):
        return {"Q": self.Q, "b": self.b, "c": self.c}

    @staticmethod
    def batch_value(params, X):
        QX = (params["Q"] @ X[:, :, None])[:, :, 0]
        return ((0.5 * QX + params["b"]) * X).sum(axis=1) + params["c"]

    @staticmethod
    def batch_gradient(params, X):
        return (params["Q"] @ X[:, :, None])[:, :, 0] + params["b"]


@dataclass(frozen=True, eq=False)
class Affine(ScalarFunction):
    """``a'x + c``."""

    a: np.ndarray
    c: float = 0.0

    family: ClassVar[str] = "affine"
    affine: ClassVar[bool] = True

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float).reshape(-1))
        object.__setattr__(self, "c", float(self.c))

    @classmethod
    def zero(cls, n: int) -> Affine:
        return cls(np.zeros(n), 0.0)

    @property
    def dim(self) -> int:
        return self.a.size

    def evaluate(self, x) -> float:
        return float(self.a @ np.asarray(x, dtype=float) + self.c)

    def gradient(self, x) -> np.ndarray:
        return self.a.copy()

    def hessian(self, x) -> np.ndarray:
        return np.zeros((self.dim, self.dim))

    def params(self):
        return {"a": self.a, "c": self.c}

    @staticmethod
    def batch_value(params, X):
        return np.einsum("gi,gi->g", params["a"], X) + params["c"]

    @staticmethod
    def batch_gradient(params, X):
        return params["a"].copy()


@dataclass(frozen=True, eq=False)
class ExpAffine(ScalarFunction):
    """``coef * exp(a'x + b) + c``; convex for ``coef >= 0``."""

    a: np.ndarray
    b: float = 0.0
    coef: float = 1.0
    c: float = 0.0

    family: ClassVar[str] = "exp_affine"

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float).reshape(-1))
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "coef", float(self.coef))
        object.__setattr__(self, "c", float(self.c))
        if self.coef < 0:
            raise ValueError("exp_affine: coef must be nonnegative to stay convex")

    @property
    def dim(self) -> int:
        return self.a.size

    def evaluate(self, x) -> float:
        return float(self.coef * np.exp(self.a @ np.asarray(x, dtype=float) + self.b) + self.c)

    def gradient(self, x) -> np.ndarray:
        return self.coef * np.exp(self.a @ np.asarray(x, dtype=float) + self.b) * self.a

    def hessian(self, x) -> np.ndarray:
        return self.coef * np.exp(self.a @ np.asarray(x, dtype=float) + self.b) * np.outer(self.a, self.a)

    def params(self):
        return {"a": self.a, "b": self.b, "coef": self.coef, "c": self.c}

    @staticmethod
    def batch_value(params, X):
        return params["coef"] * np.exp((params["a"] * X).sum(axis=1) + params["b"]) + params["c"]

    @staticmethod
    def batch_gradient(params, X):
        scale = params["coef"] * np.exp((params["a"] * X).sum(axis=1) + params["b"])
        return scale[:, None] * params["a"]


FAMILIES: dict[str, type[ScalarFunction]] = {
    cls.family: cls for cls in (Quadratic, Affine, ExpAffine)
}


def from_spec(spec: dict[str, Any], dim: int | None = None) -> ScalarFunction:
    """Build a registered function from a declarative mapping.

    ``{"family": "zero"}`` needs ``dim``; ``{"family": "isotropic", "weight": w,
    "center": [...]}`` is accepted as a shorthand for a scaled squared distance.
    """
    spec = dict(spec)
    name = spec.pop("family", None)
    if name == "zero":
        if dim is None:
            raise ValueError("zero function needs the agent dimension")
        return Affine.zero(dim)
    if name == "isotropic":
        n = len(spec["center"]) if "center" in spec else dim
        if n is None:
            raise ValueError("isotropic function needs a center or the agent dimension")
        return Quadratic.isotropic(n, spec.get("weight", 1.0), spec.get("center"))
    if name not in FAMILIES:
        raise ValueError(f"unknown function family {name!r}; known: {sorted(FAMILIES) + ['isotropic', 'zero']}")
    fn = FAMILIES[name](**spec)
    if dim is not None and fn.dim != dim:
        raise ValueError(f"{name} function has dimension {fn.dim}, expected {dim}")
    return fn


@dataclass(frozen=True, eq=False)
class FunctionStack:
    """One function per agent, evaluated in bulk on an ``(N, n)`` array."""

    funcs: tuple[ScalarFunction, ...]
    _groups: list = field(init=False, repr=False)

    def __post_init__(self):
        if not self.funcs:
            raise ValueError("function stack needs at least one function")
        if len({f.dim for f in self.funcs}) > 1:
            raise ValueError("all agent functions must share the agent dimension")
        by_cls: dict[type, list[int]] = {}
        for i, f in enumerate(self.funcs):
            by_cls.setdefault(type(f), []).append(i)
        groups = []
        for cls, idx in by_cls.items():
            groups.append((cls, np.array(idx), cls.stack([self.funcs[i] for i in idx])))
        object.__setattr__(self, "_groups", groups)

    def __len__(self):
        return len(self.funcs)

    def __getitem__(self, i):
        return self.funcs[i]

    @property
    def all_affine(self) -> bool:
        return all(f.affine for f in self.funcs)

    def values(self, X: np.ndarray) -> np.ndarray:
        if len(self._groups) == 1:
            cls, _, params = self._groups[0]
            return cls.batch_value(params, X)
        out = np.empty(len(self.funcs))
        for cls, idx, params in self._groups:
            out[idx] = cls.batch_value(params, X[idx])
        return out

    def gradients(self, X: np.ndarray) -> np.ndarray:
        if len(self._groups) == 1:
            cls, _, params = self._groups[0]
            return cls.batch_gradient(params, X)
        out = np.empty(X.shape)
        for cls, idx, params in self._groups:
            out[idx] = cls.batch_gradient(params, X[idx])
        return out
