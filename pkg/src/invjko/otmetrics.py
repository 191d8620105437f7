"""Sample-based distances between snapshot distributions."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

EXACT_LIMIT = 4000
EIG_CLAMP = 1e-10


def _pair(X, Y) -> tuple[np.ndarray, np.ndarray]:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    return X, Y


def _assignment_cost(C: np.ndarray) -> float:
    rows, cols = linear_sum_assignment(C)
    return float(C[rows, cols].mean())


def _check_counts(X, Y):
    if len(X) != len(Y):
        raise ValueError(
            f"exact matching needs equal sample counts ({len(X)} vs {len(Y)}); "
            "resample with equalize() first"
        )
    if len(X) > EXACT_LIMIT:
        raise ValueError(f"exact matching is limited to {EXACT_LIMIT} samples, got {len(X)}")


def emd(X, Y) -> float:
    """W1 between two equal-size empirical measures (exact assignment)."""
    X, Y = _pair(X, Y)
    _check_counts(X, Y)
    return _assignment_cost(cdist(X, Y))


def w2_empirical(X, Y) -> float:
    X, Y = _pair(X, Y)
    _check_counts(X, Y)
    return float(np.sqrt(max(_assignment_cost(cdist(X, Y, "sqeuclidean")), 0.0)))


def equalize(X, Y, seed: int = 0) -> tuple[np.ndarray, np.ndarray, dict]:
    """Resample the larger set with replacement down to the smaller size."""
    X, Y = _pair(X, Y)
    info = {"resampled": False, "n": min(len(X), len(Y))}
    if len(X) == len(Y):
        return X, Y, info
    rng = np.random.default_rng(seed)
    n = info["n"]
    if len(X) > n:
        X = X[rng.choice(len(X), n, replace=True)]
    else:
        Y = Y[rng.choice(len(Y), n, replace=True)]
    info["resampled"] = True
    return X, Y, info


def psd_sqrt(S: np.ndarray) -> np.ndarray:
    w, U = np.linalg.eigh(0.5 * (S + S.T))
    if w.min() < -EIG_CLAMP * max(1.0, abs(w).max()):
        raise ValueError(f"matrix is not PSD within tolerance (min eigenvalue {w.min():.3e})")
    return (U * np.sqrt(np.clip(w, 0.0, None))) @ U.T


def bures_wasserstein2(mu_p, S_p, mu_q, S_q) -> float:
    rq = psd_sqrt(S_q)
    cross = psd_sqrt(rq @ S_p @ rq)
    return float(np.sum((np.asarray(mu_p) - mu_q) ** 2) + np.trace(S_p + S_q - 2 * cross))


def _moments(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if len(X) < X.shape[1] + 1:
        raise ValueError(f"need at least D+1 = {X.shape[1] + 1} samples for a covariance, got {len(X)}")
    return X.mean(axis=0), np.atleast_2d(np.cov(X, rowvar=False))


def bw_uvp(X, Y) -> float:
    """100 * BW^2(X, Y) / (Var(X) / 2), with Var the covariance trace of the reference X."""
    X, Y = _pair(X, Y)
    mx, Sx = _moments(X)
    my, Sy = _moments(Y)
    var = np.trace(Sx)
    if var <= 0:
        raise ValueError("reference covariance has zero trace")
    return 100.0 * max(bures_wasserstein2(mx, Sx, my, Sy), 0.0) / (0.5 * var)


def total_variance(X) -> float:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return float(np.trace(np.atleast_2d(np.cov(X, rowvar=False))))


def l2_uvp(grad_hat, grad_star, samples_next, var_prev: float, tau: float) -> float:
    """100 * tau^2 * E_{rho_{k+1}} |grad_hat - grad_star|^2 / Var(rho_k).

    ``grad_hat`` / ``grad_star`` are callables mapping an (N, D) array to (N, D).
    """
    if var_prev <= 0:
        raise ValueError("var_prev must be positive")
    Y = np.atleast_2d(np.asarray(samples_next, dtype=np.float64))
    diff = np.asarray(grad_hat(Y)) - np.asarray(grad_star(Y))
    return float(100.0 * tau**2 * np.mean(np.sum(diff**2, axis=1)) / var_prev)


def adaptive_sigma(X, Y) -> float:
    """Bandwidth with sigma^2 = mean squared distance over distinct pooled pairs."""
    Z = np.vstack(_pair(X, Y))
    d2 = cdist(Z, Z, "sqeuclidean")
    n = len(Z)
    return float(np.sqrt(d2[np.triu_indices(n, 1)].mean()))


def mmd2(X, Y, sigma: float | str = 10.0) -> float:
    """Unbiased squared MMD with a Gaussian kernel exp(-|x-y|^2 / (2 sigma^2))."""
    X, Y = _pair(X, Y)
    N, M = len(X), len(Y)
    if N < 2 or M < 2:
        raise ValueError("unbiased MMD needs at least two samples per set")
    if sigma == "adaptive":
        sigma = adaptive_sigma(X, Y)
    g = 1.0 / (2.0 * float(sigma) ** 2)
    kxx = np.exp(-g * cdist(X, X, "sqeuclidean"))
    kyy = np.exp(-g * cdist(Y, Y, "sqeuclidean"))
    kxy = np.exp(-g * cdist(X, Y, "sqeuclidean"))
    sxx = (kxx.sum() - np.trace(kxx)) / (N * (N - 1))
    syy = (kyy.sum() - np.trace(kyy)) / (M * (M - 1))
    return float(sxx + syy - 2.0 * kxy.mean())


@dataclass
class StepMetrics:
    k: int
    emd: float
    w2: float
    bw_uvp_percent: float
    mmd2: float
    l2_uvp_percent: float | None = None
    n_pred: int = 0
    n_ref: int = 0


@dataclass
class MetricReport:
    steps: list[StepMetrics] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    COLUMNS = ("k", "emd", "w2", "bw_uvp", "l2_uvp", "mmd2")

    def to_dict(self) -> dict:
        return {"steps": [asdict(s) for s in self.steps], "meta": self.meta}

    def table(self) -> str:
        def fmt(v):
            return "-" if v is None else f"{v:.6g}"

        lines = ["\t".join(self.COLUMNS)]
        for s in self.steps:
            lines.append("\t".join([str(s.k), fmt(s.emd), fmt(s.w2), fmt(s.bw_uvp_percent),
                                    fmt(s.l2_uvp_percent), fmt(s.mmd2)]))
        return "\n".join(lines)


def compare(pred, ref, k: int, *, seed: int = 0, sigma: float | str = 10.0) -> tuple[StepMetrics, dict]:
    """All sample metrics for one step; unequal sizes are resampled for EMD/W2."""
    P, R, info = equalize(pred, ref, seed)
    m = StepMetrics(k, emd(P, R), w2_empirical(P, R), bw_uvp(np.asarray(ref), np.asarray(pred)),
                    mmd2(pred, ref, sigma), None, len(pred), len(ref))
    return m, info
