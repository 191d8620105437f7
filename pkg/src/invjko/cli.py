"""Command-line entry point: generate, train, evaluate, verify-theory, plot-levels."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import dynamics, otmetrics, plotting, theory
from .dynamics import DatasetError, GenConfig
from .potentials import make_potential, potential_from_meta, symmetrized
from .trainer import TrainConfig, load_models, predict_next, save_models, train, write_config

log = logging.getLogger("invjko")


class ConfigError(ValueError):
    pass


def parse_matrix(text: str) -> np.ndarray:
    """``"1,0;0,2"`` -> 2 x 2 array."""
    try:
        rows = [[float(v) for v in r.split(",")] for r in text.split(";")]
    except ValueError as exc:
        raise ConfigError(f"bad matrix {text!r}: {exc}") from None
    if len({len(r) for r in rows}) != 1:
        raise ConfigError(f"ragged matrix {text!r}")
    return np.array(rows)


def parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise ConfigError(f"bad vector {text!r}: {exc}") from None


def load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def merge(base: dict, overrides: dict) -> dict:
    out = dict(base)
    out.update({k: v for k, v in overrides.items() if v is not None})
    return out


# -- generate ----------------------------------------------------------------

def build_potential(cfg: dict):
    name = cfg.get("potential", "sphere")
    if name == "quadratic":
        if cfg.get("A") is None:
            raise ConfigError("--potential quadratic needs --A")
        A = parse_matrix(cfg["A"]) if isinstance(cfg["A"], str) else np.asarray(cfg["A"])
        b = cfg.get("b")
        b = parse_vector(b) if isinstance(b, str) else b
        return make_potential("quadratic", A=A, b=b)
    if name == "user_expression":
        if not cfg.get("expr"):
            raise ConfigError("--potential user_expression needs --expr")
        return make_potential(name, expr=cfg["expr"])
    try:
        return make_potential(name)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_generate(args) -> int:
    cfg = merge(load_config_file(args.config), {
        "potential": args.potential, "A": args.A, "b": args.b, "expr": args.expr,
        "interaction": args.interaction, "tau": args.tau, "steps": args.steps, "n": args.n,
        "mode": args.mode, "pair_fraction": args.pair_fraction, "beta": args.beta,
        "sde_substeps": args.sde_substeps, "seed": args.seed, "dim": args.dim,
        "generator": args.generator, "init": json.loads(args.init) if args.init else None,
    })
    V = build_potential(cfg)
    dim = cfg.get("dim")
    if dim is None:
        dim = len(V.params["b"]) if V.name == "quadratic" else 2
    if V.name == "quadratic" and dim != len(V.params["b"]):
        raise ConfigError(f"--dim {dim} disagrees with A of size {len(V.params['b'])}")
    try:
        gen = GenConfig(n=cfg.get("n", 2000), steps=cfg.get("steps", 5), tau=cfg.get("tau", 0.01),
                        sde_substeps=cfg.get("sde_substeps", 100), beta=cfg.get("beta", 0.0),
                        seed=cfg.get("seed", 0), dim=dim,
                        **({"init": cfg["init"]} if cfg.get("init") else {}))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    W = None
    if cfg.get("interaction"):
        try:
            W = symmetrized(make_potential(cfg["interaction"]))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    mode = cfg.get("mode", "unpaired")
    if mode not in ("paired", "unpaired"):
        raise ConfigError(f"--mode must be paired or unpaired, got {mode!r}")
    try:
        seq = dynamics.generate(V, gen, mode, W, cfg.get("generator", "auto"), cfg.get("pair_fraction"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    dynamics.save_dataset(seq, args.out)
    print(f"wrote {args.out}: K={seq.K} dim={seq.dim} mode={seq.mode} counts={seq.counts} "
          f"generator={seq.meta['generator']} potential={V.name}")
    return 0


# -- train -------------------------------------------------------------------

def train_config_from(args) -> tuple[TrainConfig, dict]:
    file_cfg = load_config_file(args.config)
    raw = merge(file_cfg, {
        "epochs": args.epochs, "inner_iters": args.inner_iters, "batch_size": args.batch_size,
        "mask": args.mask, "seed": args.seed, "test_fraction": args.test_fraction,
        "time_varying": True if args.time_varying else None,
        "time_conditioned": False if args.per_step_maps else None,
        "normalize_time": True if args.normalize_time else None,
        "residual_maps": True if args.residual_maps else None,
        "symmetrize_W": False if args.no_symmetrize_W else None,
        "energy_lr": args.energy_lr, "map_lr": args.map_lr,
    })
    try:
        tc = TrainConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return tc, raw


def cmd_train(args) -> int:
    tc, raw = train_config_from(args)
    data = args.data or raw.get("data")
    if not data:
        raise ConfigError("--data is required")
    run = Path(args.out)
    resolved = {"data": str(Path(data).resolve()), **tc.to_dict()}
    write_config(run, resolved)
    seq = dynamics.load_dataset(data)
    every = max(1, tc.epochs // 20)

    def progress(row):
        if row["epoch"] % every == 0 or row["epoch"] == tc.epochs - 1:
            log.info("epoch %d loss %.6g theta3 %.4g", row["epoch"], row["loss"], row["theta3"])

    theta, phi, tlog, (_, entropy) = train(seq, tc, callback=progress)
    save_models(run, theta, phi)
    tlog.write_csv(run / "train_log.csv")
    if entropy is not None:
        entropy.save(run / "entropy.json")
    (run / "timing.json").write_text(json.dumps({"wall_clock_s": tlog.wall_clock}) + "\n")
    print(f"trained {tc.epochs} epochs (mask {tc.mask}) -> {run}; final loss {tlog.rows[-1]['loss']:.6g}"
          if tlog.rows else f"wrote untrained models -> {run}")
    return 0


# -- evaluate ----------------------------------------------------------------

def potential_grad_fn(theta, k: int):
    def grad(Y):
        X = torch.as_tensor(Y, dtype=torch.float64).requires_grad_(True)
        (g,) = torch.autograd.grad(theta.potential(X, None, k if theta.n_potentials > 1 else 0).sum(), X)
        return g.detach().numpy()

    return grad


def cmd_evaluate(args) -> int:
    run = Path(args.run)
    cfg = json.loads((run / "config.json").read_text())
    tc = TrainConfig.from_dict(cfg)
    data = args.data or cfg.get("data")
    seq = dynamics.load_dataset(data)
    _, test = dynamics.split(seq, tc.test_fraction, tc.seed)
    theta, phi = load_models(run)
    rng = np.random.default_rng(args.seed)
    truth = potential_from_meta(seq.meta.get("potential"))
    l2_note = None
    if truth is None:
        l2_note = "no ground-truth potential in dataset metadata; l2_uvp omitted"
    elif not theta.mask.use_V:
        l2_note = "model has no potential network; l2_uvp omitted"
    report = otmetrics.MetricReport(meta={"eval_samples": args.eval_samples, "sigma": args.sigma,
                                          "mode": test.mode, "seed": args.seed})
    for k in range(seq.K):
        Xk, Xn = test.snapshots[k], test.snapshots[k + 1]
        if test.mode == "paired":
            idx = rng.choice(len(Xk), min(args.eval_samples, len(Xk)), replace=False)
            Xk_s, Xn_s = Xk[idx], Xn[idx]
        else:
            Xk_s = Xk[rng.choice(len(Xk), min(args.eval_samples, len(Xk)), replace=False)]
            Xn_s = Xn[rng.choice(len(Xn), min(args.eval_samples, len(Xn)), replace=False)]
        pred = predict_next(phi, Xk_s, k)
        sigma = args.sigma if args.sigma == "adaptive" else float(args.sigma)
        m, info = otmetrics.compare(pred, Xn_s, k, seed=args.seed, sigma=sigma)
        if l2_note is None:
            m.l2_uvp_percent = otmetrics.l2_uvp(potential_grad_fn(theta, k), truth.grad, Xn_s,
                                                otmetrics.total_variance(Xk_s), seq.tau)
        report.steps.append(m)
        report.meta.setdefault("resampling", []).append(info)
    if l2_note:
        report.meta["note"] = l2_note
    out = Path(args.out) if args.out else run / "metrics.json"
    out.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    print(report.table())
    if l2_note:
        print(f"note: {l2_note}")
    return 0


# -- verify-theory -----------------------------------------------------------

def cmd_verify_theory(args) -> int:
    if args.dim < 1 or args.trials < 1 or args.samples < 2 or args.tau <= 0:
        raise ConfigError("need --dim >= 1, --trials >= 1, --samples >= 2, --tau > 0")
    sink = open(args.out, "w") if args.out else sys.stdout
    ok = True
    try:
        for r in theory.run_trials(args.trials, args.dim, args.tau, args.samples, args.seed, args.identical):
            sink.write(r.to_json() + "\n")
            ok &= r.bound_holds
    finally:
        if args.out:
            sink.close()
    return 0 if ok else 1


# -- plot-levels -------------------------------------------------------------

def parse_box(text: str) -> tuple[float, float, float, float]:
    vals = parse_vector(text)
    if len(vals) != 4 or vals[0] >= vals[1] or vals[2] >= vals[3]:
        raise ConfigError(f"--box needs xmin,xmax,ymin,ymax; got {text!r}")
    return tuple(float(v) for v in vals)


def cmd_plot_levels(args) -> int:
    run = Path(args.run)
    theta, phi = load_models(run)
    box = parse_box(args.box)
    dim = phi.dim
    if args.which == "V" and not theta.mask.use_V:
        raise ConfigError("checkpoint has no potential network")
    if args.which == "W" and not theta.mask.use_W:
        raise ConfigError("checkpoint has no interaction network")

    def learned(P):
        with torch.no_grad():
            X = torch.as_tensor(P)
            out = theta.potential(X, None, args.k) if args.which == "V" else theta.interaction(X)
            return out.numpy()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if dim != 2:
        log.warning("dimension %d != 2: writing the grid CSV only, no SVG", dim)
    if dim == 1:
        xs = np.linspace(box[0], box[1], args.grid)
        vals = learned(xs[:, None])
        (out / "grid.csv").write_text("".join(f"{plotting.fmt(x)},{plotting.fmt(v)}\n" for x, v in zip(xs, vals)))
        return 0
    gx, gy, z = plotting.eval_grid(learned, box, args.grid, dim)
    plotting.write_grid_csv(out / "grid.csv", gx, gy, z)
    if dim != 2:
        return 0
    layers = []
    truth = None
    data = args.data
    if data is None:
        cfg_file = run / "config.json"
        if cfg_file.exists():
            data = json.loads(cfg_file.read_text()).get("data")
    if data and args.which == "V":
        try:
            meta = json.loads((Path(data) / "meta.json").read_text())
            truth = potential_from_meta(meta.get("potential"))
        except (OSError, ValueError):
            truth = None
    z_learned = z - z.mean()
    if truth is not None:
        _, _, zt = plotting.eval_grid(truth.value, box, args.grid, 2)
        zt = zt - zt.mean()
        levels = plotting.interior_levels(zt, args.levels)
        layers.append(("ground_truth", "green", plotting.contour_lines(gx, gy, zt, levels)))
    else:
        levels = plotting.interior_levels(z_learned, args.levels)
    if np.ptp(z_learned) > 1e-12:
        layers.append(("learned", "blue", plotting.contour_lines(gx, gy, z_learned, levels)))
    plotting.write_svg(out / "levels.svg", box, layers)
    return 0


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="invjko", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a snapshot dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--config")
    g.add_argument("--potential")
    g.add_argument("--A", help='quadratic matrix, rows split by ";" e.g. "1,0;0,2"')
    g.add_argument("--b", help="quadratic linear term, comma separated")
    g.add_argument("--expr", help="numpy expression in x for user_expression")
    g.add_argument("--interaction", help="base kernel name; symmetrized before use")
    g.add_argument("--tau", type=float)
    g.add_argument("--steps", type=int)
    g.add_argument("--n", type=int)
    g.add_argument("--mode", choices=["paired", "unpaired"])
    g.add_argument("--pair-fraction", type=float)
    g.add_argument("--beta", type=float)
    g.add_argument("--sde-substeps", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--dim", type=int)
    g.add_argument("--init", help='JSON, e.g. {"kind": "uniform", "low": -2, "high": 2}')
    g.add_argument("--generator", choices=["auto", "prox", "sde"])
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="fit energy and transport maps")
    t.add_argument("--data")
    t.add_argument("--out", required=True)
    t.add_argument("--config")
    t.add_argument("--mask", help="energy components, e.g. V, VW, V+W+U")
    t.add_argument("--time-varying", action="store_true", help="one potential per step")
    t.add_argument("--per-step-maps", action="store_true", help="K map networks instead of one time-conditioned")
    t.add_argument("--normalize-time", action="store_true")
    t.add_argument("--no-symmetrize-W", action="store_true")
    t.add_argument("--residual-maps", action="store_true", help="maps of the form x + net(x)")
    t.add_argument("--epochs", type=int)
    t.add_argument("--inner-iters", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--energy-lr", type=float)
    t.add_argument("--map-lr", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--test-fraction", type=float)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="metrics of next-step predictions on held-out samples")
    e.add_argument("--run", required=True)
    e.add_argument("--data")
    e.add_argument("--eval-samples", type=int, default=250)
    e.add_argument("--sigma", default="10", help='MMD bandwidth or "adaptive"')
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    v = sub.add_parser("verify-theory", help="check the potential quality bound on random quadratics")
    v.add_argument("--trials", type=int, default=100)
    v.add_argument("--dim", type=int, default=2)
    v.add_argument("--tau", type=float, default=0.1)
    v.add_argument("--samples", type=int, default=100_000)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--identical", action="store_true", help="use V = V* (zero gap)")
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify_theory)

    pl = sub.add_parser("plot-levels", help="grid CSV and SVG level curves of a learned net")
    pl.add_argument("--run", required=True)
    pl.add_argument("--out", required=True)
    pl.add_argument("--which", choices=["V", "W"], default="V")
    pl.add_argument("--k", type=int, default=0, help="potential index for time-varying runs")
    pl.add_argument("--box", default="-3,3,-3,3")
    pl.add_argument("--grid", type=int, default=201)
    pl.add_argument("--levels", type=int, default=10)
    pl.add_argument("--data")
    pl.set_defaults(func=cmd_plot_levels)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    threads = os.environ.get("IJKO_THREADS")
    if threads:
        torch.set_num_threads(max(1, int(threads)))
    try:
        return args.func(args)
    except (ConfigError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DatasetError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
