"""Differentiation primitives.

Thin layer over torch autograd in float64. ``jacobian`` is built from forward
tangents (one per input coordinate) and stays on the recorded graph, so
``gradient`` can differentiate through log-det-Jacobian terms.
"""

from __future__ import annotations

from typing import Callable

import torch
from torch.func import jacfwd, vmap

DET_FLOOR = 1e-12


class NonFiniteError(FloatingPointError):
    """Raised when a recorded computation produces a non-finite value.

    ``node`` is the index of the first offending operation in recording order,
    or -1 when only the final result could be inspected.
    """

    def __init__(self, message: str, node: int = -1):
        super().__init__(message)
        self.node = node


def as_tensor(x) -> torch.Tensor:
    return torch.as_tensor(x, dtype=torch.float64)


class _FiniteWatch(torch.autograd.graph.saved_tensors_hooks):
    """Record the index of the first saved intermediate that is not finite."""

    def __init__(self):
        self.count = 0
        self.bad: int | None = None

        def pack(t):
            if self.bad is None and t.is_floating_point() and not torch.isfinite(t).all():
                self.bad = self.count
            self.count += 1
            return t

        super().__init__(pack, lambda t: t)


def gradient(f: Callable[[torch.Tensor], torch.Tensor], params, *, create_graph: bool = False) -> torch.Tensor:
    """Return df/dparams for a scalar-valued ``f``.

    ``f`` may itself call :func:`jacobian` / :func:`logabsdet`; second-order
    terms are carried through the graph.
    """
    p = as_tensor(params).detach().clone().requires_grad_(True)
    watch = _FiniteWatch()
    with torch.enable_grad(), watch:
        out = f(p)
    if out.numel() != 1:
        raise ValueError(f"gradient needs a scalar output, got shape {tuple(out.shape)}")
    if not torch.isfinite(out).all():
        raise NonFiniteError("non-finite function value", watch.bad if watch.bad is not None else -1)
    (g,) = torch.autograd.grad(out.reshape(()), p, create_graph=create_graph, allow_unused=True)
    if g is None:
        g = torch.zeros_like(p)
    if not torch.isfinite(g).all():
        raise NonFiniteError("non-finite gradient", watch.bad if watch.bad is not None else -1)
    return g if create_graph else g.detach()


def jacobian(T: Callable[[torch.Tensor], torch.Tensor], x) -> torch.Tensor:
    """D x D Jacobian of ``T`` at a single point, entry (i, j) = dT_i/dx_j."""
    x = as_tensor(x)
    if x.ndim != 1:
        raise ValueError(f"jacobian expects a 1-D point, got shape {tuple(x.shape)}")
    y = T(x)
    if y.shape != x.shape:
        raise ValueError(f"map must be R^D -> R^D; got {tuple(x.shape)} -> {tuple(y.shape)}")
    return jacfwd(T)(x)


def batch_jacobian(T: Callable[[torch.Tensor], torch.Tensor], X: torch.Tensor) -> torch.Tensor:
    """Jacobians of a pointwise map at every row of ``X``; returns B x D x D."""
    if X.ndim != 2:
        raise ValueError(f"batch_jacobian expects B x D input, got shape {tuple(X.shape)}")
    return vmap(jacfwd(T))(X)


def logabsdet(M) -> tuple[torch.Tensor, torch.Tensor]:
    """Return (log|det M|, sign) with |det| floored at ``DET_FLOOR``.

    Works on a single matrix or a batch (..., D, D).
    """
    M = as_tensor(M)
    if M.ndim < 2 or M.shape[-1] != M.shape[-2]:
        raise ValueError(f"logabsdet needs square matrices, got shape {tuple(M.shape)}")
    sign, logabs = torch.linalg.slogdet(M)
    floor = torch.full_like(logabs, float(torch.log(torch.tensor(DET_FLOOR))))
    logabs = torch.where(logabs < floor, floor, logabs)
    sign = torch.where(sign == 0, torch.ones_like(sign), sign)
    return logabs, sign
