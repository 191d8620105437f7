"""Small MLPs over flat float64 parameter vectors.

Every network is a pure function of ``(values, spec, x)``; the flat vector is
what the optimizers update and what gets differentiated.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

ACTIVATIONS = {"softplus": F.softplus, "selu": F.selu, "celu": F.celu}


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "softplus"
    output_dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        widths = (self.input_dim, *self.hidden, self.output_dim)
        if any(w < 1 for w in widths):
            raise ValueError(f"all layer widths must be >= 1, got {widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.output_dim)

    def layout(self) -> list[dict]:
        """Weight/bias slices, in order, as ``{name, offset, shape}``."""
        out, off = [], 0
        for i, (a, b) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            out.append({"name": f"W{i}", "offset": off, "shape": [b, a]})
            off += a * b
            out.append({"name": f"b{i}", "offset": off, "shape": [b]})
            off += b
        return out

    @property
    def n_params(self) -> int:
        return sum(a * b + b for a, b in zip(self.widths[:-1], self.widths[1:]))


@dataclass
class ParamVector:
    spec: MlpSpec
    values: torch.Tensor = field(repr=False)

    def __post_init__(self):
        self.values = torch.as_tensor(self.values, dtype=torch.float64)
        if self.values.shape != (self.spec.n_params,):
            raise ValueError(f"expected {self.spec.n_params} values, got {tuple(self.values.shape)}")

    def layers(self, values: torch.Tensor | None = None):
        return layer_views(self.spec, self.values if values is None else values)


def layer_views(spec: MlpSpec, values: torch.Tensor) -> list[tuple[torch.Tensor, torch.Tensor]]:
    """(W, b) views into a flat vector, input layer first."""
    lay = spec.layout()
    out = []
    for w, b in zip(lay[::2], lay[1::2]):
        W = values[w["offset"] : w["offset"] + w["shape"][0] * w["shape"][1]].view(*w["shape"])
        out.append((W, values[b["offset"] : b["offset"] + b["shape"][0]]))
    return out


def init_params(spec: MlpSpec, seed: int) -> ParamVector:
    """Weights ~ N(0, 1/fan_in), zero biases."""
    rng = np.random.default_rng(seed)
    values = np.zeros(spec.n_params)
    for entry in spec.layout():
        if entry["name"].startswith("W"):
            rows, fan_in = entry["shape"]
            n = rows * fan_in
            values[entry["offset"] : entry["offset"] + n] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), n)
    return ParamVector(spec, torch.from_numpy(values))


def mlp_apply(spec: MlpSpec, values: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    """Affine/activation stack; last layer affine. Accepts (..., input_dim)."""
    if x.shape[-1] != spec.input_dim:
        raise ValueError(f"input has {x.shape[-1]} features, network expects {spec.input_dim}")
    act = ACTIVATIONS[spec.activation]
    layers = layer_views(spec, values)
    h = x
    for W, b in layers[:-1]:
        h = act(h @ W.T + b)
    W, b = layers[-1]
    return h @ W.T + b


def forward_scalar(params: ParamVector, x, values: torch.Tensor | None = None) -> torch.Tensor:
    """Scalar network output; ``x`` of shape (D,) gives a 0-d tensor, (B, D) gives (B,)."""
    x = torch.as_tensor(x, dtype=torch.float64)
    if params.spec.output_dim != 1:
        raise ValueError("forward_scalar needs a network with one output")
    v = params.values if values is None else values
    return mlp_apply(params.spec, v, x)[..., 0]


@dataclass
class MapEnsemble:
    """Transport maps T^k, k = 0..K-1.

    Either one network fed ``(x, k)`` (``time_conditioned``) or ``K`` separate
    networks packed back to back in ``values``. Both are called as
    ``ens(x, k)``.
    """

    spec: MlpSpec
    n_steps: int
    time_conditioned: bool
    values: torch.Tensor = field(repr=False)
    normalize_time: bool = False
    residual: bool = False

    @classmethod
    def create(cls, dim: int, n_steps: int, seed: int, *, time_conditioned: bool = True,
               hidden=(64, 64), activation: str = "selu", normalize_time: bool = False,
               residual: bool = False) -> "MapEnsemble":
        in_dim = dim + 1 if time_conditioned else dim
        spec = MlpSpec(in_dim, tuple(hidden), activation, dim)
        if time_conditioned:
            values = init_params(spec, seed).values
        else:
            values = torch.cat([init_params(spec, seed + k).values for k in range(n_steps)])
        if residual:
            # zero output layer: every residual map starts as the identity
            last = spec.layout()[-2]
            lo = last["offset"]
            n_last = spec.layout()[-1]["offset"] + spec.widths[-1] - lo
            for j in range(1 if time_conditioned else n_steps):
                values[j * spec.n_params + lo : j * spec.n_params + lo + n_last] = 0.0
        return cls(spec, n_steps, time_conditioned, values, normalize_time, residual)

    @property
    def dim(self) -> int:
        return self.spec.output_dim

    def step_values(self, k: int, values: torch.Tensor | None = None) -> torch.Tensor:
        v = self.values if values is None else values
        if self.time_conditioned:
            return v
        n = self.spec.n_params
        return v[k * n : (k + 1) * n]

    def time_input(self, k: int) -> float:
        return k / max(self.n_steps - 1, 1) if self.normalize_time else float(k)

    def __call__(self, x, k: int, values: torch.Tensor | None = None) -> torch.Tensor:
        return forward_map(self, x, k, values)

    def step_fn(self, k: int, values: torch.Tensor | None = None):
        """Single-point map ``x -> T^k(x)`` suitable for jacobian()."""
        return lambda x: forward_map(self, x, k, values)


def forward_map(ens: MapEnsemble, x, k: int | None, values: torch.Tensor | None = None) -> torch.Tensor:
    if k is None:
        raise ValueError("a time index k is required")
    if not 0 <= k < ens.n_steps:
        raise IndexError(f"time index {k} outside 0..{ens.n_steps - 1}")
    x = torch.as_tensor(x, dtype=torch.float64)
    if x.shape[-1] != ens.dim:
        raise ValueError(f"input has {x.shape[-1]} features, map expects {ens.dim}")
    v = ens.step_values(k, values)
    inp = x
    if ens.time_conditioned:
        t = torch.full((*x.shape[:-1], 1), ens.time_input(k), dtype=x.dtype)
        inp = torch.cat([x, t], dim=-1)
    out = mlp_apply(ens.spec, v, inp)
    # residual maps start near the identity, which is where prox maps live for small tau
    return x + out if ens.residual else out


# -- checkpoints -------------------------------------------------------------

def _fmt(values: torch.Tensor) -> list[float]:
    return [float(v) for v in values.detach().cpu().numpy()]


def param_to_dict(p: ParamVector) -> dict:
    return {"spec": asdict(p.spec), "layout": p.spec.layout(), "values": _fmt(p.values)}


def param_from_dict(d: dict) -> ParamVector:
    spec = MlpSpec(**{**d["spec"], "hidden": tuple(d["spec"]["hidden"])})
    return ParamVector(spec, torch.tensor(d["values"], dtype=torch.float64))


def ensemble_to_dict(e: MapEnsemble) -> dict:
    return {
        "spec": asdict(e.spec),
        "layout": e.spec.layout(),
        "n_steps": e.n_steps,
        "time_conditioned": e.time_conditioned,
        "normalize_time": e.normalize_time,
        "residual": e.residual,
        "values": _fmt(e.values),
    }


def ensemble_from_dict(d: dict) -> MapEnsemble:
    spec = MlpSpec(**{**d["spec"], "hidden": tuple(d["spec"]["hidden"])})
    return MapEnsemble(spec, d["n_steps"], d["time_conditioned"],
                       torch.tensor(d["values"], dtype=torch.float64), d.get("normalize_time", False), d.get("residual", False))


def save_json(obj: dict, path: str | Path) -> None:
    # repr-roundtrip floats keep checkpoints bit-exact
    Path(path).write_text(json.dumps(obj, indent=1) + "\n")


def load_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
