"""Parametrized free energy J(rho) = E[V] + E[W(x - x')] - theta3 * H(rho)."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from scipy.spatial import cKDTree
from scipy.special import digamma, gammaln

from .diffcore import NonFiniteError, batch_jacobian, logabsdet
from .nets import MapEnsemble, MlpSpec, ParamVector, init_params, mlp_apply


@dataclass(frozen=True)
class Mask:
    use_V: bool = True
    use_W: bool = False
    use_U: bool = False

    @classmethod
    def parse(cls, text: str) -> "Mask":
        """``"V"``, ``"VW"``, ``"V+W+U"`` ... -> Mask."""
        letters = set(text.upper().replace("+", "").replace(",", ""))
        if not letters or letters - set("VWU"):
            raise ValueError(f"mask must combine V, W, U; got {text!r}")
        return cls("V" in letters, "W" in letters, "U" in letters)

    def __str__(self):
        return "".join(c for c, on in zip("VWU", (self.use_V, self.use_W, self.use_U)) if on)


@dataclass
class EnergyParams:
    """theta = (potential net(s), interaction net, raw diffusion scalar) in one flat vector.

    Layout of ``values``: [theta1 (one block per potential) | theta2 | theta3_raw].
    ``n_potentials > 1`` gives one potential per time step. Masked-off blocks
    stay in the vector but never touch the output.
    """

    v_spec: MlpSpec
    w_spec: MlpSpec
    mask: Mask
    values: torch.Tensor = field(repr=False)
    symmetrize_W: bool = True
    n_potentials: int = 1

    @classmethod
    def create(cls, dim: int, mask: Mask, seed: int, *, hidden=(64, 64), activation: str = "softplus",
               theta3_init: float = 0.0, symmetrize_W: bool = True, n_potentials: int = 1) -> "EnergyParams":
        v_spec = MlpSpec(dim, tuple(hidden), activation, 1)
        w_spec = MlpSpec(dim, tuple(hidden), activation, 1)
        blocks = [init_params(v_spec, seed + 1000 * k).values for k in range(n_potentials)]
        values = torch.cat([
            *blocks,
            init_params(w_spec, seed + 1).values,
            torch.tensor([theta3_init], dtype=torch.float64),
        ])
        return cls(v_spec, w_spec, mask, values, symmetrize_W, n_potentials)

    @property
    def n1(self) -> int:
        return self.v_spec.n_params * self.n_potentials

    @property
    def n2(self) -> int:
        return self.w_spec.n_params

    def blocks(self, values: torch.Tensor | None = None) -> dict[str, torch.Tensor]:
        """Named views: ``theta1`` (all potential blocks), ``theta2``, ``theta3``."""
        v = self.values if values is None else values
        return {"theta1": v[: self.n1], "theta2": v[self.n1 : self.n1 + self.n2], "theta3": v[self.n1 + self.n2 :]}

    def _v_block(self, values: torch.Tensor | None, k: int) -> torch.Tensor:
        t1 = self.blocks(values)["theta1"]
        if self.n_potentials == 1:
            return t1
        n = self.v_spec.n_params
        return t1[k * n : (k + 1) * n]

    def theta1(self, k: int = 0) -> ParamVector:
        return ParamVector(self.v_spec, self._v_block(None, k).detach().clone())

    @property
    def theta2(self) -> ParamVector:
        return ParamVector(self.w_spec, self.blocks()["theta2"].detach().clone())

    @property
    def theta3_raw(self) -> float:
        return float(self.blocks()["theta3"][0])

    @property
    def theta3(self) -> float:
        return float(F.softplus(self.blocks()["theta3"][0]))

    def potential(self, x: torch.Tensor, values: torch.Tensor | None = None, k: int = 0) -> torch.Tensor:
        return mlp_apply(self.v_spec, self._v_block(values, k), x)[..., 0]

    def interaction(self, z: torch.Tensor, values: torch.Tensor | None = None) -> torch.Tensor:
        w = self.blocks(values)["theta2"]
        out = mlp_apply(self.w_spec, w, z)[..., 0]
        if self.symmetrize_W:
            out = 0.5 * (out + mlp_apply(self.w_spec, w, -z)[..., 0])
        return out

    def diffusion(self, values: torch.Tensor | None = None) -> torch.Tensor:
        return F.softplus(self.blocks(values)["theta3"][0])


def estimate_energy(params: EnergyParams, batch, entropy_value, values: torch.Tensor | None = None,
                    k: int = 0) -> torch.Tensor:
    """Monte Carlo J on a B x D batch; the double sum includes i == j.

    ``k`` selects the potential block when potentials vary per step.
    """
    X = torch.as_tensor(batch, dtype=torch.float64)
    B = X.shape[0]
    m = params.mask
    total = torch.zeros((), dtype=torch.float64)
    if m.use_V:
        pv = params.potential(X, values, k)
        if not torch.isfinite(pv).all():
            raise NonFiniteError("potential network produced a non-finite value")
        total = total + pv.mean()
    if m.use_W:
        if B < 2:
            raise ValueError("interaction term needs a batch of at least 2 samples")
        Z = (X[:, None, :] - X[None, :, :]).reshape(-1, X.shape[1])
        pw = params.interaction(Z, values)
        if not torch.isfinite(pw).all():
            raise NonFiniteError("interaction network produced a non-finite value")
        total = total + pw.mean()
    if m.use_U:
        total = total - params.diffusion(values) * entropy_value
    return total


def kl_entropy(samples, k: int = 5, seed: int = 0) -> float:
    """Kozachenko-Leonenko differential entropy estimate in nats."""
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    N, D = X.shape
    if N <= k:
        raise ValueError(f"need more than k={k} samples, got {N}")
    if len(np.unique(X, axis=0)) < N:
        X = X + np.random.default_rng(seed).uniform(-1e-12, 1e-12, X.shape)
    dist, _ = cKDTree(X).query(X, k=k + 1)
    r = dist[:, k]
    if np.any(r <= 0):
        raise ValueError("zero nearest-neighbour distance after tie perturbation")
    log_vd = 0.5 * D * math.log(math.pi) - gammaln(0.5 * D + 1)
    return float(digamma(N) - digamma(k) + log_vd + D * np.mean(np.log(r)))


def mean_logabsdet(ens: MapEnsemble, k: int, batch: torch.Tensor, values: torch.Tensor | None = None) -> torch.Tensor:
    J = batch_jacobian(ens.step_fn(k, values), batch)
    return logabsdet(J)[0].mean()


def pushforward_entropy(base_entropy, ens: MapEnsemble, k: int, batch, values: torch.Tensor | None = None) -> torch.Tensor:
    """H(T#rho) = H(rho) + E log|det dT|."""
    X = torch.as_tensor(batch, dtype=torch.float64)
    return base_entropy + mean_logabsdet(ens, k, X, values)


@dataclass
class EntropyCache:
    estimates: list[float]
    neighbors: int = 5
    counts: list[int] = field(default_factory=list)

    @classmethod
    def compute(cls, snapshots, k: int = 5) -> "EntropyCache":
        return cls([kl_entropy(s, k) for s in snapshots], k, [len(s) for s in snapshots])

    def __getitem__(self, step: int) -> float:
        return self.estimates[step]

    def to_dict(self) -> dict:
        return {
            "estimates": {str(i): h for i, h in enumerate(self.estimates)},
            "estimator": "kozachenko-leonenko",
            "neighbors": self.neighbors,
            "counts": self.counts,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EntropyCache":
        est = d["estimates"]
        return cls([est[str(i)] for i in range(len(est))], d.get("neighbors", 5), d.get("counts", []))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "EntropyCache":
        return cls.from_dict(json.loads(Path(path).read_text()))
