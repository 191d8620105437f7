"""Ground-truth potentials and interaction kernels (numpy, batched over rows)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

ROSTER = (
    "sphere",
    "styblinski_tang",
    "bohachevsky",
    "holder_table",
    "double_exponential",
    "oakley_ohagan",
    "flat",
    "quadratic",
    "user_expression",
)


def _rows(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[None, :] if x.ndim == 1 else x


@dataclass
class Potential:
    """A scalar field V: R^D -> R with its gradient.

    ``value`` and ``grad`` take (N, D) arrays. ``analytic`` is False for
    user expressions, whose gradient is a central finite difference.
    """

    name: str
    value_fn: Callable[[np.ndarray], np.ndarray]
    grad_fn: Callable[[np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)
    analytic: bool = True

    def value(self, x) -> np.ndarray:
        return self.value_fn(_rows(x))

    def grad(self, x) -> np.ndarray:
        return self.grad_fn(_rows(x))

    def describe(self) -> dict:
        return {"name": self.name, **self.params}


def sphere() -> Potential:
    return Potential("sphere", lambda x: np.sum(x**2, axis=1), lambda x: 2.0 * x)


def styblinski_tang() -> Potential:
    return Potential(
        "styblinski_tang",
        lambda x: 0.5 * np.sum(x**4 - 16.0 * x**2 + 5.0 * x, axis=1),
        lambda x: 0.5 * (4.0 * x**3 - 32.0 * x + 5.0),
    )


def _bohachevsky_value(x):
    if x.shape[1] < 2:
        raise ValueError("bohachevsky needs D >= 2")
    a, b = x[:, :-1], x[:, 1:]
    return np.sum(a**2 + 2 * b**2 - 0.3 * np.cos(3 * np.pi * a) - 0.4 * np.cos(4 * np.pi * b) + 0.7, axis=1)


def _bohachevsky_grad(x):
    a, b = x[:, :-1], x[:, 1:]
    g = np.zeros_like(x)
    g[:, :-1] += 2 * a + 0.9 * np.pi * np.sin(3 * np.pi * a)
    g[:, 1:] += 4 * b + 1.6 * np.pi * np.sin(4 * np.pi * b)
    return g


def bohachevsky() -> Potential:
    return Potential("bohachevsky", _bohachevsky_value, _bohachevsky_grad)


def _holder_parts(x):
    if x.shape[1] != 2:
        raise ValueError("holder_table is defined for D = 2")
    r = np.linalg.norm(x, axis=1)
    s = 1.0 - r / np.pi
    e = np.exp(np.abs(s))
    p = np.sin(x[:, 0]) * np.cos(x[:, 1]) * e
    return r, s, e, p


def _holder_value(x):
    return -np.abs(_holder_parts(x)[3])


def _holder_grad(x):
    r, s, e, p = _holder_parts(x)
    sgn = np.sign(p)
    r_safe = np.where(r > 0, r, 1.0)
    # d e / d x = e * sign(s) * (-1/pi) * x / r
    de = (e * np.sign(s) * (-1.0 / np.pi) / r_safe)[:, None] * x
    dp = np.stack(
        [np.cos(x[:, 0]) * np.cos(x[:, 1]) * e, -np.sin(x[:, 0]) * np.sin(x[:, 1]) * e], axis=1
    ) + (np.sin(x[:, 0]) * np.cos(x[:, 1]))[:, None] * de
    return -sgn[:, None] * dp


def holder_table() -> Potential:
    return Potential("holder_table", _holder_value, _holder_grad)


def double_exponential(shift: float = 1.0) -> Potential:
    """Two Gaussian wells at +/- shift * (1, ..., 1)."""

    def parts(x):
        c = np.full(x.shape[1], shift)
        ea = np.exp(-0.5 * np.sum((x - c) ** 2, axis=1))
        eb = np.exp(-0.5 * np.sum((x + c) ** 2, axis=1))
        return c, ea, eb

    def value(x):
        _, ea, eb = parts(x)
        return -(ea + eb)

    def grad(x):
        c, ea, eb = parts(x)
        return ea[:, None] * (x - c) + eb[:, None] * (x + c)

    return Potential("double_exponential", value, grad, {"shift": shift})


def oakley_ohagan() -> Potential:
    return Potential(
        "oakley_ohagan",
        lambda x: np.sum(5.0 + x + np.cos(x), axis=1),
        lambda x: 1.0 - np.sin(x),
    )


def flat() -> Potential:
    return Potential("flat", lambda x: np.zeros(x.shape[0]), lambda x: np.zeros_like(x))


def quadratic(A, b=None) -> Potential:
    """V(x) = 1/2 x^T A x + b^T x with A symmetrized."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    A = 0.5 * (A + A.T)
    b = np.zeros(A.shape[0]) if b is None else np.asarray(b, dtype=np.float64).reshape(-1)
    if b.shape[0] != A.shape[0]:
        raise ValueError(f"b has length {b.shape[0]}, A is {A.shape[0]}x{A.shape[0]}")
    return Potential(
        "quadratic",
        lambda x: 0.5 * np.einsum("ni,ij,nj->n", x, A, x) + x @ b,
        lambda x: x @ A + b,
        {"A": A.tolist(), "b": b.tolist()},
    )


def finite_difference_grad(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    g = np.empty_like(x)
    for j in range(x.shape[1]):
        e = np.zeros(x.shape[1])
        e[j] = h
        g[:, j] = (fn(x + e) - fn(x - e)) / (2 * h)
    return g


def user_expression(expr: str) -> Potential:
    """Potential from a numpy expression in ``x`` (shape N x D), e.g. ``np.sum(x**2, axis=1)``."""
    code = compile(expr, "<potential>", "eval")

    def value(x):
        out = eval(code, {"np": np, "__builtins__": {}}, {"x": x})
        return np.broadcast_to(np.asarray(out, dtype=np.float64), (x.shape[0],)).copy()

    return Potential("user_expression", value, lambda x: finite_difference_grad(value, x),
                     {"expression": expr}, analytic=False)


def make_potential(name: str, **params) -> Potential:
    builders = {
        "sphere": sphere,
        "styblinski_tang": styblinski_tang,
        "bohachevsky": bohachevsky,
        "holder_table": holder_table,
        "double_exponential": double_exponential,
        "oakley_ohagan": oakley_ohagan,
        "flat": flat,
        "quadratic": quadratic,
        "user_expression": user_expression,
    }
    if name not in builders:
        raise ValueError(f"unknown potential {name!r}; choose from {', '.join(ROSTER)}")
    return builders[name](**params)


def potential_from_meta(d: dict | str | None) -> Potential | None:
    if d is None:
        return None
    if isinstance(d, str):
        return make_potential(d)
    d = dict(d)
    return make_potential(d.pop("name"), **d)


def symmetrize_kernel(W_b: Callable[[np.ndarray], np.ndarray]) -> Callable[[np.ndarray], np.ndarray]:
    """Even part of a kernel: W(z) = (W_b(z) + W_b(-z)) / 2."""
    return lambda z: 0.5 * (W_b(z) + W_b(-z))


def symmetrized(kernel: Potential) -> Potential:
    return Potential(
        f"sym_{kernel.name}",
        symmetrize_kernel(kernel.value),
        lambda z: 0.5 * (kernel.grad(z) - kernel.grad(-z)),
        {"base": kernel.describe()},
        kernel.analytic,
    )
