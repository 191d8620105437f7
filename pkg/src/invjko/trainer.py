"""Adversarial fitting of the energy: maps descend, energy ascends the gap."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .diffcore import NonFiniteError, gradient
from .dynamics import SnapshotSequence, split
from .energy import EnergyParams, EntropyCache, Mask, estimate_energy, mean_logabsdet
from .nets import (MapEnsemble, ensemble_from_dict, ensemble_to_dict, load_json, param_from_dict,
                   param_to_dict, save_json)


@dataclass
class TrainConfig:
    inner_iters: int = 10
    epochs: int = 1000
    batch_size: int = 500
    energy_lr: float = 5e-4
    energy_betas: tuple[float, float] = (0.9, 0.999)
    energy_eps: float = 1e-8
    clip_norm: float = 10.0
    map_lr: float = 1e-3
    map_betas: tuple[float, float] = (0.5, 0.9)
    map_eps: float = 1e-8
    mask: str = "V"
    time_conditioned: bool = True
    time_varying: bool = False
    symmetrize_W: bool = True
    normalize_time: bool = False
    residual_maps: bool = False
    hidden: tuple[int, ...] = (64, 64)
    theta3_init: float = 0.0
    entropy_neighbors: int = 5
    seed: int = 0
    test_fraction: float = 0.4

    def __post_init__(self):
        self.energy_betas = tuple(self.energy_betas)
        self.map_betas = tuple(self.map_betas)
        self.hidden = tuple(self.hidden)
        if self.inner_iters < 1:
            raise ValueError("inner_iters must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1 or (self.batch_size < 2 and Mask.parse(self.mask).use_W):
            raise ValueError("batch_size must be >= 2 when the interaction term is on")
        Mask.parse(self.mask)

    @property
    def mask_obj(self) -> Mask:
        return Mask.parse(self.mask)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


# -- optimizer ---------------------------------------------------------------

@dataclass
class OptimizerState:
    m: torch.Tensor
    v: torch.Tensor
    step: int = 0

    @classmethod
    def zeros_like(cls, params: torch.Tensor) -> "OptimizerState":
        return cls(torch.zeros_like(params), torch.zeros_like(params), 0)


def adam_update(state: OptimizerState, params: torch.Tensor, grad: torch.Tensor, lr: float,
                betas=(0.9, 0.999), eps: float = 1e-8) -> tuple[OptimizerState, torch.Tensor]:
    b1, b2 = betas
    t = state.step + 1
    m = b1 * state.m + (1 - b1) * grad
    v = b2 * state.v + (1 - b2) * grad * grad
    m_hat = m / (1 - b1**t)
    v_hat = v / (1 - b2**t)
    return OptimizerState(m, v, t), params - lr * m_hat / (v_hat.sqrt() + eps)


def clip_global_norm(grad: torch.Tensor, max_norm: float) -> torch.Tensor:
    norm = torch.linalg.vector_norm(grad)
    if norm > max_norm:
        return grad * (max_norm / norm)
    return grad


# -- objective ---------------------------------------------------------------

def _energy_at(theta: EnergyParams, X, entropy, tv, k):
    return estimate_energy(theta, X, entropy, tv, k if theta.n_potentials > 1 else 0)


def pushforward_terms(theta: EnergyParams, phi: MapEnsemble, X: torch.Tensor, k: int, base_entropy: float,
                      tv=None, pv=None, need_entropy: bool | None = None):
    """(J at T#X, mean transport cost |x - T x|^2) for one step."""
    TX = phi(X, k, pv)
    use_U = theta.mask.use_U if need_entropy is None else need_entropy
    h = base_entropy + mean_logabsdet(phi, k, X, pv) if use_U else 0.0
    J = _energy_at(theta, TX, h, tv, k)
    cost = torch.sum((X - TX) ** 2, dim=1).mean()
    return J, cost, TX


def empirical_loss(theta: EnergyParams, phi: MapEnsemble, batches, entropy: EntropyCache | None, tau: float,
                   theta_values=None, phi_values=None) -> torch.Tensor:
    """sum_k [J(T^k X_k) - J(X_{k+1}) + E|x - T^k x|^2 / (2 tau)].

    The transport term is a batch mean so the inner optimum is the prox map.
    """
    K = len(batches) - 1
    if K < 1 or any(b is None for b in batches):
        raise ValueError("empirical_loss needs a batch for every step 0..K")
    if theta.mask.use_U and entropy is None:
        raise ValueError("the entropy cache is required when the internal energy is on")
    total = torch.zeros((), dtype=torch.float64)
    for k in range(K):
        h_k = entropy[k] if entropy is not None else 0.0
        h_next = entropy[k + 1] if entropy is not None else 0.0
        J_pred, cost, _ = pushforward_terms(theta, phi, _t(batches[k]), k, h_k, theta_values, phi_values)
        J_next = _energy_at(theta, _t(batches[k + 1]), h_next, theta_values, k)
        total = total + J_pred - J_next + cost / (2 * tau)
    return total


def _t(x) -> torch.Tensor:
    return torch.as_tensor(x, dtype=torch.float64)


def map_objective(theta: EnergyParams, phi: MapEnsemble, batches, entropy, tau, phi_values=None) -> torch.Tensor:
    """Terms of the loss that depend on the maps."""
    total = torch.zeros((), dtype=torch.float64)
    for k in range(len(batches) - 1):
        if batches[k] is None:
            continue
        h_k = entropy[k] if entropy is not None else 0.0
        J_pred, cost, _ = pushforward_terms(theta, phi, _t(batches[k]), k, h_k, None, phi_values)
        total = total + J_pred + cost / (2 * tau)
    return total


def energy_objective(theta: EnergyParams, preds, pred_entropy, batches, entropy, theta_values=None) -> torch.Tensor:
    """sum_k [-J(X_pred) + J(X_{k+1})], with predictions held fixed."""
    total = torch.zeros((), dtype=torch.float64)
    for k, Xp in enumerate(preds):
        if Xp is None or batches[k + 1] is None:
            continue
        h_next = entropy[k + 1] if entropy is not None else 0.0
        total = total - _energy_at(theta, Xp, pred_entropy[k], theta_values, k)
        total = total + _energy_at(theta, _t(batches[k + 1]), h_next, theta_values, k)
    return total


def _check(grad: torch.Tensor, what: str) -> torch.Tensor:
    if not torch.isfinite(grad).all():
        raise NonFiniteError(f"non-finite gradient in {what}")
    return grad


def _grad(f, values, what):
    try:
        return _check(gradient(f, values), what)
    except NonFiniteError as exc:
        raise NonFiniteError(f"{what}: {exc}", exc.node) from None


def inner_map_step(theta: EnergyParams, phi: MapEnsemble, state: OptimizerState, batches, entropy, tau: float,
                   cfg: TrainConfig) -> tuple[MapEnsemble, OptimizerState, torch.Tensor]:
    """One adaptive-moment descent step on the maps; returns (phi, state, grad)."""
    g = _grad(lambda p: map_objective(theta, phi, batches, entropy, tau, p), phi.values, "transport maps")
    state, new = adam_update(state, phi.values, g, cfg.map_lr, cfg.map_betas, cfg.map_eps)
    phi.values = new.detach()
    return phi, state, g


def outer_energy_step(theta: EnergyParams, phi: MapEnsemble, state: OptimizerState, batches, entropy,
                      cfg: TrainConfig) -> tuple[EnergyParams, OptimizerState, torch.Tensor]:
    """One clipped adaptive-moment step on the energy; returns (theta, state, unclipped grad)."""
    K = len(batches) - 1
    preds, pred_h = [], []
    with torch.no_grad():
        for k in range(K):
            X = _t(batches[k])
            preds.append(phi(X, k))
    for k in range(K):
        h = 0.0
        if theta.mask.use_U:
            with torch.no_grad():
                h = float(entropy[k] + mean_logabsdet(phi, k, _t(batches[k])))
        pred_h.append(h)
    g = _grad(lambda v: energy_objective(theta, preds, pred_h, batches, entropy, v), theta.values, "energy")
    state, new = adam_update(state, theta.values, clip_global_norm(g, cfg.clip_norm), cfg.energy_lr,
                             cfg.energy_betas, cfg.energy_eps)
    theta.values = new.detach()
    return theta, state, g


def predict_next(phi: MapEnsemble, X, k: int) -> np.ndarray:
    if not 0 <= k < phi.n_steps:
        raise IndexError(f"no map for step {k}; trained steps are 0..{phi.n_steps - 1}")
    with torch.no_grad():
        return phi(_t(X), k).numpy()


# -- training loop -----------------------------------------------------------

@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)
    wall_clock: float = 0.0

    COLUMNS = ("epoch", "loss", "grad_theta1", "grad_theta2", "grad_theta3", "grad_phi", "theta3")

    def append(self, row: dict) -> None:
        self.rows.append(row)

    @property
    def theta3_trace(self) -> list[float]:
        return [r["theta3"] for r in self.rows]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow([r["epoch"], *(repr(float(r[c])) for c in self.COLUMNS[1:])])


class BatchSampler:
    """Per-step minibatches; paired data reuse one index set so rows stay aligned."""

    def __init__(self, seq: SnapshotSequence, batch_size: int, seed: int):
        self.seq = seq
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)
        self.aligned = seq.mode == "paired" and len(set(seq.counts)) == 1

    def _idx(self, n):
        b = min(self.batch_size, n)
        return self.rng.choice(n, size=b, replace=False)

    def draw(self) -> list[torch.Tensor]:
        if self.aligned:
            idx = self._idx(self.seq.counts[0])
            return [torch.from_numpy(s[idx]) for s in self.seq.snapshots]
        return [torch.from_numpy(s[self._idx(len(s))]) for s in self.seq.snapshots]


def _block_norms(theta: EnergyParams, g: torch.Tensor) -> dict[str, float]:
    return {f"grad_{name}": float(torch.linalg.vector_norm(b)) for name, b in theta.blocks(g).items()}


def init_models(seq: SnapshotSequence, cfg: TrainConfig) -> tuple[EnergyParams, MapEnsemble]:
    theta = EnergyParams.create(seq.dim, cfg.mask_obj, cfg.seed, hidden=cfg.hidden, theta3_init=cfg.theta3_init,
                                symmetrize_W=cfg.symmetrize_W, n_potentials=seq.K if cfg.time_varying else 1)
    phi = MapEnsemble.create(seq.dim, seq.K, cfg.seed + 7, time_conditioned=cfg.time_conditioned,
                             hidden=cfg.hidden, normalize_time=cfg.normalize_time,
                             residual=cfg.residual_maps)
    return theta, phi


def train(dataset: SnapshotSequence, cfg: TrainConfig, *, already_split: bool = False, callback=None):
    """Alternate ``inner_iters`` map steps with one energy step per epoch.

    Returns (theta, phi, log, test split). ``already_split`` treats
    ``dataset`` as the training part.
    """
    torch.manual_seed(cfg.seed)
    if already_split:
        train_seq, test_seq = dataset, None
    else:
        train_seq, test_seq = split(dataset, cfg.test_fraction, cfg.seed)
    entropy = EntropyCache.compute(train_seq.snapshots, cfg.entropy_neighbors) if cfg.mask_obj.use_U else None
    theta, phi = init_models(train_seq, cfg)
    map_state = OptimizerState.zeros_like(phi.values)
    energy_state = OptimizerState.zeros_like(theta.values)
    sampler = BatchSampler(train_seq, cfg.batch_size, cfg.seed)
    tau = train_seq.tau
    log = TrainLog()
    start = time.perf_counter()
    for epoch in range(cfg.epochs):
        for _ in range(cfg.inner_iters):
            phi, map_state, g_phi = inner_map_step(theta, phi, map_state, sampler.draw(), entropy, tau, cfg)
        batches = sampler.draw()
        with torch.no_grad():
            loss = float(empirical_loss(theta, phi, batches, entropy, tau))
        theta, energy_state, g_theta = outer_energy_step(theta, phi, energy_state, batches, entropy, cfg)
        row = {"epoch": epoch, "loss": loss, **_block_norms(theta, g_theta),
               "grad_phi": float(torch.linalg.vector_norm(g_phi)), "theta3": theta.theta3}
        log.append(row)
        if callback is not None:
            callback(row)
    log.wall_clock = time.perf_counter() - start
    return theta, phi, log, (test_seq, entropy)


# -- run directory -----------------------------------------------------------

def save_models(run_dir: str | Path, theta: EnergyParams, phi: MapEnsemble) -> None:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    m = theta.mask
    energy_meta = {"mask": str(m), "n_potentials": theta.n_potentials, "symmetrize_W": theta.symmetrize_W}
    if m.use_V:
        for k in range(theta.n_potentials):
            name = "potential.json" if theta.n_potentials == 1 else f"potential_{k}.json"
            save_json(param_to_dict(theta.theta1(k)), run_dir / name)
    if m.use_W:
        save_json(param_to_dict(theta.theta2), run_dir / "interaction.json")
    if m.use_U:
        energy_meta["theta3_raw"] = theta.theta3_raw
        energy_meta["theta3"] = theta.theta3
    save_json(energy_meta, run_dir / "energy.json")
    save_json(ensemble_to_dict(phi), run_dir / "maps.json")


def load_models(run_dir: str | Path) -> tuple[EnergyParams, MapEnsemble]:
    run_dir = Path(run_dir)
    meta = load_json(run_dir / "energy.json")
    phi = ensemble_from_dict(load_json(run_dir / "maps.json"))
    mask = Mask.parse(meta["mask"])
    n_pot = meta.get("n_potentials", 1)
    theta = EnergyParams.create(phi.dim, mask, 0, n_potentials=n_pot, symmetrize_W=meta.get("symmetrize_W", True))
    blocks = []
    if mask.use_V:
        names = ["potential.json"] if n_pot == 1 else [f"potential_{k}.json" for k in range(n_pot)]
        for name in names:
            p = param_from_dict(load_json(run_dir / name))
            blocks.append(p.values)
        v_spec = p.spec
    else:
        v_spec = theta.v_spec
        blocks.append(torch.zeros(theta.n1))
    if mask.use_W:
        w = param_from_dict(load_json(run_dir / "interaction.json"))
        w_spec, w_vals = w.spec, w.values
    else:
        w_spec, w_vals = theta.w_spec, torch.zeros(theta.n2)
    t3 = torch.tensor([meta.get("theta3_raw", 0.0)], dtype=torch.float64)
    values = torch.cat([*blocks, w_vals, t3])
    return EnergyParams(v_spec, w_spec, mask, values, meta.get("symmetrize_W", True), n_pot), phi


def write_config(run_dir: str | Path, config: dict) -> None:
    Path(run_dir).mkdir(parents=True, exist_ok=True)
    Path(run_dir, "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
