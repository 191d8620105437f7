"""Closed-form checks of the potential-recovery quality bound on quadratics.

For V(x) = 1/2 x^T A x + b^T x the prox map, the conjugate of
V_q = tau V + |.|^2 / 2 and its Bregman divergence are all explicit, so the
gap epsilon(V) can be computed two independent ways and the bound
E_{rho_1} |grad V* - grad V|^2 <= C epsilon(V), C = 2 lambda_max(tau A + I) / tau,
can be checked directly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np


@dataclass
class QuadraticPotential:
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        if not np.allclose(self.A, self.A.T, atol=1e-12):
            raise ValueError("A must be symmetric")
        self.b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if self.b.shape[0] != self.A.shape[0]:
            raise ValueError("A and b dimensions disagree")

    @property
    def dim(self) -> int:
        return self.b.shape[0]

    def value(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        return 0.5 * np.einsum("ni,ij,nj->n", x, self.A, x) + x @ self.b

    def grad(self, x) -> np.ndarray:
        return np.atleast_2d(x) @ self.A + self.b

    def shifted(self, c: float) -> "ShiftedQuadratic":
        return ShiftedQuadratic(self.A, self.b, c)

    def modified_hessian(self, tau: float) -> np.ndarray:
        """Hessian of V_q = tau V + |.|^2 / 2, i.e. tau A + I."""
        M = tau * self.A + np.eye(self.dim)
        if np.linalg.eigvalsh(M).min() <= 0:
            raise ValueError("tau A + I is not positive definite; V_q is not strictly convex")
        return M


@dataclass
class ShiftedQuadratic(QuadraticPotential):
    """Quadratic plus an additive constant (gradients unchanged)."""

    c: float = 0.0

    def value(self, x) -> np.ndarray:
        return super().value(x) + self.c


def exact_map(V: QuadraticPotential, tau: float) -> Callable[[np.ndarray], np.ndarray]:
    """x -> (tau A + I)^{-1} (x - tau b), the minimizer of V(y) + |x - y|^2 / (2 tau)."""
    M = V.modified_hessian(tau)
    Minv = np.linalg.inv(M)
    shift = Minv @ (tau * V.b)
    return lambda x: np.atleast_2d(x) @ Minv.T - shift


def jko_loss(V: QuadraticPotential, T: Callable, rho0: np.ndarray, rho1: np.ndarray, tau: float) -> float:
    """E_{rho0}[V(T x)] - E_{rho1}[V] + E_{rho0}|x - T x|^2 / (2 tau)."""
    Tx = T(rho0)
    return float(V.value(Tx).mean() - V.value(rho1).mean() + np.sum((rho0 - Tx) ** 2, axis=1).mean() / (2 * tau))


def gap_epsilon(V_star: QuadraticPotential, V: QuadraticPotential, rho0, tau: float) -> tuple[float, float]:
    """(epsilon from the loss difference, epsilon from the dual Bregman identity)."""
    rho0 = np.atleast_2d(np.asarray(rho0, dtype=np.float64))
    T_star = exact_map(V_star, tau)
    T_cand = exact_map(V, tau)
    rho1 = T_star(rho0)
    eps_loss = jko_loss(V_star, T_star, rho0, rho1, tau) - jko_loss(V, T_cand, rho0, rho1, tau)

    u = tau * V_star.grad(rho1) + rho1  # grad V*_q
    v = tau * V.grad(rho1) + rho1  # grad V_q
    Minv = np.linalg.inv(V.modified_hessian(tau))
    d = u - v
    bregman = 0.5 * np.einsum("ni,ij,nj->n", d, Minv, d)
    return float(eps_loss), float(bregman.mean() / tau)


@dataclass
class GapReport:
    epsilon_via_loss: float
    epsilon_via_bregman: float
    lhs: float
    lhs_stderr: float
    C: float
    beta: float
    bound_holds: bool
    slack: float
    lhs_closed_form: float | None = None
    tau: float = 0.0
    dim: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def gaussian_pushforward(V_star: QuadraticPotential, tau: float, mean, cov) -> tuple[np.ndarray, np.ndarray]:
    Minv = np.linalg.inv(V_star.modified_hessian(tau))
    mean = np.asarray(mean, dtype=np.float64).reshape(-1)
    return Minv @ (mean - tau * V_star.b), Minv @ np.atleast_2d(cov) @ Minv.T


def gradient_gap_closed_form(V_star: QuadraticPotential, V: QuadraticPotential, mean1, cov1) -> float:
    """E|dA y + db|^2 for y ~ N(mean1, cov1)."""
    dA = V_star.A - V.A
    db = V_star.b - V.b
    r = dA @ mean1 + db
    return float(np.trace(dA @ cov1 @ dA.T) + r @ r)


def verify_bound(V_star: QuadraticPotential, V: QuadraticPotential, rho0, tau: float,
                 gaussian: tuple | None = None) -> GapReport:
    """Estimate both sides of the bound; ``gaussian=(mean0, cov0)`` adds the closed-form lhs."""
    rho0 = np.atleast_2d(np.asarray(rho0, dtype=np.float64))
    eps_loss, eps_breg = gap_epsilon(V_star, V, rho0, tau)
    rho1 = exact_map(V_star, tau)(rho0)
    sq = np.sum((V_star.grad(rho1) - V.grad(rho1)) ** 2, axis=1)
    lhs = float(sq.mean())
    stderr = float(sq.std(ddof=1) / np.sqrt(len(sq))) if len(sq) > 1 else 0.0
    lam_max = float(np.linalg.eigvalsh(V.modified_hessian(tau)).max())
    beta = 1.0 / lam_max
    C = 2.0 / (beta * tau)
    rhs = C * eps_loss
    closed = None
    if gaussian is not None:
        m1, S1 = gaussian_pushforward(V_star, tau, *gaussian)
        closed = gradient_gap_closed_form(V_star, V, m1, S1)
    return GapReport(eps_loss, eps_breg, lhs, stderr, C, beta, bool(lhs <= rhs + 3.0 * stderr),
                     rhs - lhs, closed, tau, V.dim)


def random_quadratic(dim: int, rng: np.random.Generator, eig_range=(0.1, 5.0)) -> QuadraticPotential:
    Q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    A = (Q * rng.uniform(*eig_range, size=dim)) @ Q.T
    return QuadraticPotential(0.5 * (A + A.T), rng.standard_normal(dim))


def run_trials(trials: int, dim: int, tau: float, samples: int, seed: int = 0,
               identical: bool = False) -> Iterable[GapReport]:
    """Random (V*, V) pairs with rho_0 = N(0, I); ``identical`` sets V = V*."""
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        V_star = random_quadratic(dim, rng)
        V = V_star if identical else random_quadratic(dim, rng)
        rho0 = rng.standard_normal((samples, dim))
        yield verify_bound(V_star, V, rho0, tau, gaussian=(np.zeros(dim), np.eye(dim)))


def write_reports(reports: Iterable[GapReport], path: str | Path) -> None:
    with open(path, "w") as fh:
        for r in reports:
            fh.write(r.to_json() + "\n")
