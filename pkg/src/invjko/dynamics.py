"""Ground-truth snapshot generation and the on-disk snapshot format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .potentials import Potential


@dataclass
class GenConfig:
    n: int = 2000
    steps: int = 5
    tau: float = 0.01
    sde_substeps: int = 100
    beta: float = 0.0
    seed: int = 0
    dim: int = 2
    init: dict = field(default_factory=lambda: {"kind": "gaussian", "mean": 0.0, "std": 1.0})

    def __post_init__(self):
        if self.sde_substeps < 1:
            raise ValueError("sde_substeps must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.steps < 1 or self.n < 1 or self.tau <= 0:
            raise ValueError("need steps >= 1, n >= 1, tau > 0")


@dataclass
class SnapshotSequence:
    snapshots: list[np.ndarray]
    tau: float
    mode: str = "unpaired"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.snapshots = [np.ascontiguousarray(s, dtype=np.float64) for s in self.snapshots]
        if len(self.snapshots) < 2:
            raise ValueError("a sequence needs at least two snapshots (K >= 1)")
        dims = {s.shape[1] for s in self.snapshots}
        if len(dims) != 1 or any(s.ndim != 2 for s in self.snapshots):
            raise ValueError("snapshots must be 2-D arrays with a common dimension")
        if self.mode not in ("paired", "unpaired"):
            raise ValueError(f"mode must be paired or unpaired, got {self.mode!r}")
        if self.mode == "paired" and len({len(s) for s in self.snapshots}) != 1:
            raise ValueError("paired mode needs equal snapshot sizes")

    @property
    def K(self) -> int:
        return len(self.snapshots) - 1

    @property
    def dim(self) -> int:
        return self.snapshots[0].shape[1]

    @property
    def counts(self) -> list[int]:
        return [len(s) for s in self.snapshots]


def initial_sample(cfg: GenConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    init = cfg.init
    kind = init.get("kind", "gaussian")
    if kind == "gaussian":
        mean = np.broadcast_to(np.asarray(init.get("mean", 0.0), dtype=np.float64), (cfg.dim,))
        if "cov" in init:
            L = np.linalg.cholesky(np.asarray(init["cov"], dtype=np.float64))
            return mean + rng.standard_normal((n, cfg.dim)) @ L.T
        return mean + init.get("std", 1.0) * rng.standard_normal((n, cfg.dim))
    if kind == "uniform":
        return rng.uniform(init.get("low", -1.0), init.get("high", 1.0), size=(n, cfg.dim))
    if kind == "point":
        return np.broadcast_to(np.asarray(init["at"], dtype=np.float64), (n, cfg.dim)).copy()
    raise ValueError(f"unknown initial distribution {kind!r}")


def interaction_drift(W: Potential, x: np.ndarray) -> np.ndarray:
    """(2/N) sum_j grad W(x_i - x_j) for every particle i."""
    n, d = x.shape
    diffs = (x[:, None, :] - x[None, :, :]).reshape(-1, d)
    return 2.0 / n * W.grad(diffs).reshape(n, n, d).sum(axis=1)


def euler_maruyama(V: Potential, cfg: GenConfig, W: Potential | None = None, n_traj: int | None = None,
                   x0: np.ndarray | None = None) -> np.ndarray:
    """Simulate dX = -(grad V + interaction) dt + sqrt(2 beta) dB; returns N x (K+1) x D."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n if n_traj is None else n_traj
    x = initial_sample(cfg, n, rng) if x0 is None else np.array(x0, dtype=np.float64).reshape(n, cfg.dim)
    dt = cfg.tau / cfg.sde_substeps
    noise = np.sqrt(2.0 * cfg.beta * dt)
    out = np.empty((n, cfg.steps + 1, cfg.dim))
    out[:, 0] = x
    for k in range(cfg.steps):
        for s in range(cfg.sde_substeps):
            drift = V.grad(x)
            if W is not None:
                drift = drift + interaction_drift(W, x)
            x = x - drift * dt
            if cfg.beta > 0:
                x = x + noise * rng.standard_normal(x.shape)
            if not np.isfinite(x).all():
                raise FloatingPointError(f"non-finite state at step {k}, substep {s}")
        out[:, k + 1] = x
    return out


FD_PROX_TOL = 1e-8


def prox_step(V: Potential, x: np.ndarray, tau: float, tol: float = 1e-10, max_iter: int = 10_000) -> np.ndarray:
    """Pointwise argmin_y V(y) + |x - y|^2 / (2 tau).

    Closed form for quadratics; otherwise damped gradient descent started at
    ``x`` with per-particle step halving whenever the objective would rise.
    Finite-difference gradients cannot resolve 1e-10, so potentials without
    an analytic gradient stop at ``FD_PROX_TOL``.
    """
    x = np.asarray(x, dtype=np.float64)
    if V.name == "quadratic":
        A, b = np.asarray(V.params["A"]), np.asarray(V.params["b"])
        M = tau * A + np.eye(len(b))
        return np.linalg.solve(M, (x - tau * b).T).T
    if V.name == "flat":
        return x.copy()

    def objective(y):
        return V.value(y) + np.sum((y - x) ** 2, axis=1) / (2 * tau)

    if not V.analytic:
        tol = max(tol, FD_PROX_TOL)
    y = x.copy()
    step = np.full(len(x), 0.5 * tau)
    f = objective(y)
    for _ in range(max_iter):
        g = V.grad(y) + (y - x) / tau
        gn = np.linalg.norm(g, axis=1)
        if gn.max() <= tol:
            return y
        trial = y - step[:, None] * g
        ft = objective(trial)
        ok = ft <= f + 1e-13 * (1.0 + np.abs(f))
        y = np.where(ok[:, None], trial, y)
        f = np.where(ok, ft, f)
        # grow accepted steps back toward the nominal size, shrink rejected ones
        step = np.where(ok, np.minimum(step * 1.2, 0.5 * tau), step * 0.5)
    raise RuntimeError(f"prox solver did not reach gradient norm {tol} in {max_iter} iterations")


def prox_trajectories(V: Potential, cfg: GenConfig, n_traj: int | None = None) -> np.ndarray:
    """Exact potential-only JKO steps, N x (K+1) x D."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n if n_traj is None else n_traj
    x = initial_sample(cfg, n, rng)
    out = np.empty((n, cfg.steps + 1, cfg.dim))
    out[:, 0] = x
    for k in range(cfg.steps):
        x = prox_step(V, x, cfg.tau)
        out[:, k + 1] = x
    return out


def trajectories_needed(n: int, steps: int, mode: str, pair_fraction: float | None = None) -> int:
    p = _pair_fraction(mode, pair_fraction)
    shared = int(round(p * n))
    return shared + (steps + 1) * (n - shared)


def _pair_fraction(mode: str, pair_fraction: float | None) -> float:
    if pair_fraction is not None:
        if not 0.0 <= pair_fraction <= 1.0:
            raise ValueError("pair_fraction must lie in [0, 1]")
        return pair_fraction
    if mode not in ("paired", "unpaired"):
        raise ValueError(f"mode must be paired or unpaired, got {mode!r}")
    return 1.0 if mode == "paired" else 0.0


def assemble(traj: np.ndarray, n: int, mode: str = "paired", pair_fraction: float | None = None,
             tau: float = 0.01, meta: dict | None = None) -> SnapshotSequence:
    """Slice trajectories into snapshots.

    Row ``i < round(p * n)`` of every snapshot comes from shared trajectory
    ``i``. The remaining rows of snapshot ``k`` come from a trajectory block
    used by no other snapshot, so they carry no temporal correlation.
    """
    p = _pair_fraction(mode, pair_fraction)
    n_total, n_times, _ = traj.shape
    steps = n_times - 1
    need = trajectories_needed(n, steps, mode, p)
    if n_total < need:
        raise ValueError(f"{mode} assembly of {n} rows x {n_times} snapshots needs {need} trajectories, got {n_total}")
    shared = int(round(p * n))
    rest = n - shared
    snaps = []
    for k in range(n_times):
        start = shared + k * rest
        idx = np.concatenate([np.arange(shared), np.arange(start, start + rest)])
        snaps.append(traj[idx, k])
    seq_mode = "paired" if p == 1.0 else "unpaired"
    m = dict(meta or {})
    m["pair_fraction"] = p
    return SnapshotSequence(snaps, tau, seq_mode, m)


def generate(V: Potential, cfg: GenConfig, mode: str = "paired", W: Potential | None = None,
             generator: str = "auto", pair_fraction: float | None = None) -> SnapshotSequence:
    """Simulate and assemble a dataset; ``auto`` uses the exact prox steps when beta = 0 and W is absent."""
    if generator == "auto":
        generator = "prox" if cfg.beta == 0 and W is None else "sde"
    if generator == "prox" and (cfg.beta != 0 or W is not None):
        raise ValueError("the prox generator handles potential-only, zero-diffusion dynamics")
    n_traj = trajectories_needed(cfg.n, cfg.steps, mode, pair_fraction)
    if generator == "prox":
        traj = prox_trajectories(V, cfg, n_traj)
    elif generator == "sde":
        traj = euler_maruyama(V, cfg, W, n_traj)
    else:
        raise ValueError(f"unknown generator {generator!r}")
    meta = {
        "seed": cfg.seed,
        "generator": generator,
        "potential": V.describe(),
        "interaction": None if W is None else W.describe(),
        "beta": cfg.beta,
        "sde_substeps": cfg.sde_substeps if generator == "sde" else None,
        "init": cfg.init,
    }
    return assemble(traj, cfg.n, mode, pair_fraction, cfg.tau, meta)


def split(seq: SnapshotSequence, test_fraction: float, seed: int) -> tuple[SnapshotSequence, SnapshotSequence]:
    """Per-step train/test split. Paired data share one permutation so rows stay aligned."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train, test = [], []
    shared_perm = rng.permutation(seq.counts[0]) if seq.mode == "paired" else None
    for s in seq.snapshots:
        perm = shared_perm if shared_perm is not None else rng.permutation(len(s))
        n_test = int(round(test_fraction * len(s)))
        if n_test < 1 or n_test >= len(s):
            raise ValueError(f"test_fraction {test_fraction} leaves an empty split for {len(s)} rows")
        test.append(s[perm[:n_test]])
        train.append(s[perm[n_test:]])
    return (SnapshotSequence(train, seq.tau, seq.mode, dict(seq.meta)),
            SnapshotSequence(test, seq.tau, seq.mode, dict(seq.meta)))


# -- dataset directory -------------------------------------------------------

class DatasetError(ValueError):
    pass


def save_dataset(seq: SnapshotSequence, path: str | Path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {
        "dim": seq.dim,
        "K": seq.K,
        "tau": seq.tau,
        "mode": seq.mode,
        "potential": seq.meta.get("potential"),
        "seed": seq.meta.get("seed"),
        "counts": seq.counts,
        **{k: v for k, v in seq.meta.items() if k not in ("potential", "seed")},
    }
    (path / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    for k, s in enumerate(seq.snapshots):
        lines = [",".join(repr(float(v)) for v in row) for row in s]
        (path / f"snapshot_{k}.csv").write_text("".join(line + "\n" for line in lines))
    return path


def _read_csv(file: Path, dim: int) -> np.ndarray:
    rows = []
    with open(file, newline="") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != dim:
                raise DatasetError(f"{file}:{lineno}: expected {dim} values, found {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise DatasetError(f"{file}:{lineno}: {exc}") from None
    return np.array(rows, dtype=np.float64).reshape(-1, dim)


def load_dataset(path: str | Path) -> SnapshotSequence:
    path = Path(path)
    manifest = path / "meta.json"
    try:
        meta = json.loads(manifest.read_text())
    except FileNotFoundError:
        raise DatasetError(f"{manifest}: missing manifest") from None
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{manifest}:{exc.lineno}: malformed manifest ({exc.msg})") from None
    for key in ("dim", "K", "tau"):
        if key not in meta:
            raise DatasetError(f"{manifest}: missing field {key!r}")
    K, dim = int(meta["K"]), int(meta["dim"])
    files = sorted(path.glob("snapshot_*.csv"))
    if len(files) != K + 1:
        raise DatasetError(f"{manifest}: K={K} needs {K + 1} snapshot files, found {len(files)}")
    snaps = []
    for k in range(K + 1):
        f = path / f"snapshot_{k}.csv"
        if not f.exists():
            raise DatasetError(f"{f}: missing snapshot file")
        snaps.append(_read_csv(f, dim))
    counts = meta.get("counts")
    if counts is not None and [len(s) for s in snaps] != list(counts):
        raise DatasetError(f"{manifest}: counts {counts} disagree with files {[len(s) for s in snaps]}")
    extra = {k: v for k, v in meta.items() if k not in ("dim", "K", "tau", "mode", "counts")}
    return SnapshotSequence(snaps, float(meta["tau"]), meta.get("mode", "unpaired"), extra)
