"""Command-line entry point.

Every subcommand writes ``summary.json`` (bounds, factors, seeds, solver
statistics) and, when it draws samples, CSV files of errors into
``--out-dir``.  Exit codes: 0 success, 2 solver failure, 3 configuration
error.

Model files are JSON objects with a ``kind`` field:

* ``random``: ``A``, ``A_alpha``, ``B``, ``sigma`` (+ optional noise laws),
  ``X`` (ellitope) and ``norm`` (``{"R": [...]}``);
* ``ubb``: ``A``, ``B``, ``sigma``, ``uncertainty`` (scalar/general blocks),
  ``X`` and ``norm``;
* ``ubb-ball``: like ``random`` but ``eta`` ranges over the unit ball;
* ``deconv``: parameters of the built-in deconvolution generator;
* ``robust-norm``: ``uncertainty``, ``X`` and ``Bstar``.
"""
from __future__ import annotations

import os

# cap BLAS/solver threads before numpy is loaded
if os.environ.get("ROBINV_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "RAYON_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["ROBINV_THREADS"])

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .conic import SolverError, Tolerances
from .deconv import boundary_signals, build_deconv_model
from .geometry import EllitopeSpec, ErrorNorm, SpectratopeSpec, gauge
from .linear import UncertaintyModel, risk_bound_linear, synthesize_linear
from .polyhedral import (
    ContrastMatrix,
    PolyhedralEstimator,
    ball_coordinates,
    extract_contrasts,
    risk_bound_poly,
    synthesize_poly_ball,
)
from .robust import (
    RobustModel,
    StructuredUncertainty,
    risk_bound_linear_ubb,
    robust_norm_bound,
    robust_norm_oracle,
    synthesize_linear_ubb,
    synthesize_poly_ubb_ball,
)
from .stochastics import make_stream, monte_carlo_risk, split_streams, write_error_csv

EXIT_OK, EXIT_SOLVER, EXIT_CONFIG = 0, 2, 3


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


@dataclass
class DeconvParams:
    n: int = 32
    m: int = 32
    nu: int = 16
    kernel: list | None = None
    gamma: list = field(default_factory=lambda: [1e-3, 1e-2, 1e-1, 1.0])
    sigma: float = 1e-4
    noise: str = "gaussian"
    perturbation: str = "gaussian"
    dof: float = 3.0


@dataclass
class ExperimentConfig:
    """Everything needed to rerun an experiment bit for bit."""

    model: str | None = None  # path of a model JSON file
    deconv: DeconvParams | None = None
    estimators: list = field(default_factory=lambda: ["linear", "nominal", "poly"])
    eps: float = 0.05
    n_mc: int = 500
    seed: int = 0
    trials: int = 20
    out_dir: str = "out"
    tol_gap: float = 1e-8
    tol_feas: float = 1e-8

    def validate(self) -> "ExperimentConfig":
        if not 0 < self.eps < 1:
            raise ConfigError("eps must lie in (0, 1)")
        if self.n_mc < 0:
            raise ConfigError("n-mc must be nonnegative")
        if self.model is None and self.deconv is None:
            raise ConfigError("need a model file or deconvolution parameters")
        if self.model is not None and not Path(self.model).is_file():
            raise ConfigError(f"model file {self.model} not found")
        bad = set(self.estimators) - {"linear", "nominal", "poly"}
        if bad:
            raise ConfigError(f"unknown estimators {sorted(bad)}")
        if self.deconv is not None:
            d = self.deconv
            if min(d.n, d.m, d.nu) < 1 or d.nu > d.n:
                raise ConfigError("deconvolution needs n, m >= 1 and 1 <= nu <= n")
            if any(g < 0 for g in d.gamma):
                raise ConfigError("gamma values must be nonnegative")
        return self

    @property
    def tol(self) -> Tolerances:
        return Tolerances(gap=self.tol_gap, feas=self.tol_feas)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if d.get("deconv") is not None:
            d["deconv"] = DeconvParams(**d["deconv"])
        return cls(**d)


def _read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc


def load_set(d: dict):
    if d.get("type", "ellitope") == "spectratope":
        return SpectratopeSpec.from_dict(d)
    return EllitopeSpec.from_dict(d)


def load_model(d: dict) -> dict:
    """Parse a model description into library objects (keys depend on kind)."""
    kind = d.get("kind", "random")
    try:
        if kind == "deconv":
            params = {k: d[k] for k in ("n", "m", "nu", "kernel", "sigma", "noise", "perturbation", "dof") if k in d}
            model, X, norm = build_deconv_model(gamma=float(d.get("gamma", 0.01)), **params)
            return {"kind": "random", "model": model, "X": X, "norm": norm}
        if kind == "robust-norm":
            return {"kind": kind, "uncertainty": StructuredUncertainty.from_dict(d["uncertainty"]),
                    "X": load_set(d["X"]), "Bstar": load_set(d["Bstar"])}
        X = load_set(d["X"])
        norm = ErrorNorm.from_dict(d["norm"]) if "norm" in d else None
        if kind in ("random", "ubb-ball"):
            model = UncertaintyModel.from_dict(d)
            norm = norm or ErrorNorm.euclidean(model.nu)
            return {"kind": kind, "model": model, "X": X, "norm": norm}
        if kind == "ubb":
            model = RobustModel.from_dict(d)
            norm = norm or ErrorNorm.euclidean(model.nu)
            return {"kind": kind, "model": model, "X": X, "norm": norm}
    except KeyError as exc:
        raise ConfigError(f"model description lacks field {exc}") from exc
    raise ConfigError(f"unknown model kind {kind!r}")


def _load_contrast(path) -> ContrastMatrix:
    d = _read_json(path)
    if isinstance(d, list):
        return ContrastMatrix(np.asarray(d, dtype=float))
    if "blocks" in d:
        return ContrastMatrix.from_dict(d)
    if "H" in d:
        return ContrastMatrix(np.asarray(d["H"], dtype=float))
    raise ConfigError(f"{path}: expected a matrix, {{'H': ...}} or {{'blocks': ...}}")


def random_boundary_signals(X, count: int, seed: int) -> np.ndarray:
    """Random points on the boundary of X (pushed out along random directions)."""
    rng = make_stream(seed)
    basic = EllitopeSpec(X.T, X.base) if isinstance(X, EllitopeSpec) else SpectratopeSpec(X.blocks, X.base)
    P = np.eye(X.N) if X.P is None else X.P
    out = []
    for _ in range(count):
        y = rng.standard_normal(X.N)
        out.append(P @ (y / gauge(basic, y)))
    return np.array(out)


# ---------------------------------------------------------------------------
# output


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def _observe_random(model: UncertaintyModel):
    return lambda x, stream: model.observe(x, stream)


def _mc(estimator, observe, signals, B, norm, n_mc, eps, seed):
    return monte_carlo_risk(estimator, observe, signals, B, n_mc, eps, seed=seed, norm=norm)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth_linear(args, out: Path) -> dict:
    m = load_model(_read_json(args.model))
    if m["kind"] != "random":
        raise ConfigError("synth-linear needs a model of kind 'random' or 'deconv'")
    H, cert = synthesize_linear(m["model"], m["X"], m["norm"], args.eps, _tol(args))
    _write_json(out / "H.json", {"H": H})
    summary = {"bound": cert.bound, "certificate": cert.to_dict()}
    if args.n_mc:
        xs = random_boundary_signals(m["X"], args.signals, args.seed)
        r = _mc(lambda w: H.T @ w, _observe_random(m["model"]), xs, m["model"].B, m["norm"], args.n_mc,
                args.eps, args.seed)
        write_error_csv(out / "errors.csv", r.errors)
        summary["quantiles"] = r.quantiles
    return summary


def cmd_synth_linear_ubb(args, out: Path) -> dict:
    m = load_model(_read_json(args.model))
    if m["kind"] != "ubb":
        raise ConfigError("synth-linear-ubb needs a model of kind 'ubb'")
    H, cert = synthesize_linear_ubb(m["model"], m["X"], m["norm"], args.eps, _tol(args))
    _write_json(out / "H.json", {"H": H})
    summary = {"bound": cert.bound, "certificate": cert.to_dict()}
    if args.n_mc:
        model = m["model"]
        xs = random_boundary_signals(m["X"], args.signals, args.seed)
        draws = [model.uncertainty.sample(s) for s in split_streams(args.seed + 1, args.signals)]
        errors = []
        for x, (d, D), stream in zip(xs, draws, split_streams(args.seed, len(xs))):
            errs = [m["norm"](H.T @ model.observe(x, d, D, stream) - model.B @ x) for _ in range(args.n_mc)]
            errors.append(errs)
        errors = np.array(errors)
        write_error_csv(out / "errors.csv", errors)
        summary["quantiles"] = np.quantile(errors, 1 - args.eps, axis=1, method="higher")
    return summary


def _poly_pipeline(model: UncertaintyModel, X: EllitopeSpec, norm, eps, trials, seed, tol, ubb: bool):
    my, P = ball_coordinates(model, X)
    syn = (synthesize_poly_ubb_ball if ubb else synthesize_poly_ball)(my, norm, eps, tol=tol)
    H = extract_contrasts(syn.Theta, syn.varrho, syn.hspec, trials=trials, seed=seed)
    bound = risk_bound_poly(H, my, EllitopeSpec.ball(my.n), norm, eps, hspec=syn.hspec, tol=tol)
    return syn, H, bound


def cmd_synth_poly(args, out: Path, ubb: bool) -> dict:
    m = load_model(_read_json(args.model))
    want = "ubb-ball" if ubb else "random"
    if m["kind"] != want:
        raise ConfigError(f"this subcommand needs a model of kind {want!r}")
    model, X, norm = m["model"], m["X"], m["norm"]
    syn, H, bound = _poly_pipeline(model, X, norm, args.eps, args.trials, args.seed, _tol(args), ubb)
    _write_json(out / "H.json", H.to_dict())
    summary = {"opt": syn.opt, "kappa": syn.kappa, "relaxation_bound": syn.bound, "bound": bound.value,
               "synthesis": syn.to_dict(), "certificate": bound.to_dict()}
    if args.n_mc:
        est = PolyhedralEstimator(H, model.A, X, model.B, _tol(args))
        xs = random_boundary_signals(X, args.signals, args.seed)
        if ubb:
            errors = _poly_ubb_errors(est, model, xs, norm, args.n_mc, args.seed)
        else:
            errors = _mc(est, _observe_random(model), xs, model.B, norm, args.n_mc, args.eps, args.seed).errors
        write_error_csv(out / "errors.csv", errors)
        summary["quantiles"] = np.quantile(errors, 1 - args.eps, axis=1, method="higher")
    return summary


def _poly_ubb_errors(est, model: UncertaintyModel, xs, norm, n_mc, seed):
    """Errors with one adversarial-direction perturbation per signal."""
    rows = []
    for i, (x, stream) in enumerate(zip(xs, split_streams(seed, len(xs)))):
        eta = stream.standard_normal(model.q)
        eta = eta / max(np.linalg.norm(eta), 1e-300)
        Aeta = model.A + np.einsum("a,aij->ij", eta, model.Aa)
        rows.append([norm(est(Aeta @ x + model.sigma * stream.standard_normal(model.m)) - model.B @ x)
                     for _ in range(n_mc)])
    return np.array(rows)


def cmd_certify(args, out: Path) -> dict:
    m = load_model(_read_json(args.model))
    H = _load_contrast(args.H)
    if m["kind"] == "ubb":
        cert = risk_bound_linear_ubb(H.matrix, m["model"], m["X"], m["norm"], args.eps, _tol(args))
        return {"estimate": "linear", "bound": cert.bound, "certificate": cert.to_dict()}
    if args.estimate == "polyhedral":
        b = risk_bound_poly(H, m["model"], m["X"], m["norm"], args.eps, tol=_tol(args))
        return {"estimate": "polyhedral", "bound": b.value, "certificate": b.to_dict()}
    cert = risk_bound_linear(H.matrix, m["model"], m["X"], m["norm"], args.eps, _tol(args))
    return {"estimate": "linear", "bound": cert.bound, "certificate": cert.to_dict()}


def cmd_risk_eval(args, out: Path) -> dict:
    m = load_model(_read_json(args.model))
    if m["kind"] != "random":
        raise ConfigError("risk-eval needs a model of kind 'random' or 'deconv'")
    H = _load_contrast(args.H)
    model, X, norm = m["model"], m["X"], m["norm"]
    if args.estimate == "polyhedral":
        est = PolyhedralEstimator(H, model.A, X, model.B, _tol(args))
    else:
        Hm = H.matrix
        est = lambda w: Hm.T @ w  # noqa: E731
    xs = random_boundary_signals(X, args.signals, args.seed)
    r = _mc(est, _observe_random(model), xs, model.B, norm, max(args.n_mc, 1), args.eps, args.seed)
    write_error_csv(out / "errors.csv", r.errors)
    return {"estimate": args.estimate, "quantiles": r.quantiles, "worst_quantile": r.worst_quantile}


def cmd_robust_norm(args, out: Path) -> dict:
    m = load_model(_read_json(args.model))
    if m["kind"] != "robust-norm":
        raise ConfigError("robust-norm needs a model of kind 'robust-norm'")
    res = robust_norm_bound(m["uncertainty"], m["X"], m["Bstar"], _tol(args))
    low = robust_norm_oracle(m["uncertainty"], m["X"], m["Bstar"], budget=args.trials, seed=args.seed)
    return {"bound": res.value, "tightness_factor": res.factor, "kappa": res.kappa, "oracle_lower_bound": low,
            "solver": res.stats}


def run_deconv_experiment(cfg: ExperimentConfig, log=print) -> dict:
    """Per gamma: robust linear, nominal linear and polyhedral (ball variant)
    estimates with their bounds and Monte Carlo quantiles on boundary signals."""
    d = cfg.deconv
    out = Path(cfg.out_dir)
    tol = cfg.tol
    rows = []
    nominal_H = None
    for gamma in d.gamma:
        model, X, norm = build_deconv_model(d.n, d.m, d.nu, d.kernel, gamma, d.sigma, d.noise, d.perturbation, d.dof)
        xs = boundary_signals(d.n, 3, seed=cfg.seed, model=model)
        observe = _observe_random(model)
        row = {"gamma": gamma}
        if "linear" in cfg.estimators:
            H, cert = synthesize_linear(model, X, norm, cfg.eps, tol)
            r = _mc(lambda w: H.T @ w, observe, xs, model.B, norm, cfg.n_mc, cfg.eps, cfg.seed)
            write_error_csv(out / f"errors_linear_gamma{gamma:g}.csv", r.errors)
            row.update(linear_bound=cert.bound, linear_quantile=r.worst_quantile,
                       linear_median=float(np.median(r.errors)))
        if "nominal" in cfg.estimators:
            if nominal_H is None:
                nominal_H, _ = synthesize_linear(model.nominal(), X, norm, cfg.eps, tol)
            Hn = nominal_H
            cert = risk_bound_linear(Hn, model, X, norm, cfg.eps, tol)
            r = _mc(lambda w: Hn.T @ w, observe, xs, model.B, norm, cfg.n_mc, cfg.eps, cfg.seed)
            write_error_csv(out / f"errors_nominal_gamma{gamma:g}.csv", r.errors)
            row.update(nominal_bound=cert.bound, nominal_quantile=r.worst_quantile,
                       nominal_median=float(np.median(r.errors)))
        if "poly" in cfg.estimators and d.sigma > 0:
            syn, Hp, pb = _poly_pipeline(model, X, norm, cfg.eps, cfg.trials, cfg.seed, tol, ubb=False)
            est = PolyhedralEstimator(Hp, model.A, X, model.B, tol)
            r = _mc(est, observe, xs, model.B, norm, cfg.n_mc, cfg.eps, cfg.seed)
            write_error_csv(out / f"errors_poly_gamma{gamma:g}.csv", r.errors)
            row.update(poly_bound=pb.value, poly_relaxation_bound=syn.bound, poly_quantile=r.worst_quantile,
                       poly_median=float(np.median(r.errors)))
        rows.append(row)
        log("  ".join(f"{k}={v:.4g}" for k, v in row.items()))
    keys = sorted({k for r in rows for k in r}, key=lambda k: (k != "gamma", k))
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "table.csv", "w") as fh:
        fh.write(",".join(keys) + "\n")
        for r in rows:
            fh.write(",".join(repr(float(r[k])) if k in r else "" for k in keys) + "\n")
    return {"rows": rows}


def cmd_experiment(args, out: Path) -> dict:
    if args.name != "deconv":
        raise ConfigError(f"unknown experiment {args.name!r}")
    cfg = config_from_args(args).validate()
    _write_json(out / "config.json", cfg.to_dict())
    res = run_deconv_experiment(cfg)
    return {"config": cfg.to_dict(), **res}


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse number list {text!r}") from exc


def config_from_args(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        return ExperimentConfig.from_dict(_read_json(args.config))
    d = DeconvParams(n=args.n, m=args.m, nu=args.nu, gamma=_floats(args.gamma), sigma=args.sigma,
                     noise=args.noise, perturbation=args.perturbation,
                     kernel=_floats(args.kernel) if args.kernel else None)
    return ExperimentConfig(model=None, deconv=d, estimators=args.estimators.split(","), eps=args.eps,
                            n_mc=args.n_mc, seed=args.seed, trials=args.trials, out_dir=str(args.out_dir),
                            tol_gap=args.tol_gap, tol_feas=args.tol_feas)


def _tol(args) -> Tolerances:
    return Tolerances(gap=args.tol_gap, feas=args.tol_feas)


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--eps", type=float, default=0.05, help="risk level")
    common.add_argument("--n-mc", type=int, default=0, help="Monte Carlo draws per signal (0: none)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out-dir", type=Path, default=Path("out"))
    common.add_argument("--tol-gap", type=float, default=1e-8)
    common.add_argument("--tol-feas", type=float, default=1e-8)
    common.add_argument("--trials", type=int, default=20,
                        help="candidates in contrast extraction / restarts of sampling oracles")
    common.add_argument("--signals", type=int, default=3, help="boundary signals for Monte Carlo")

    p = argparse.ArgumentParser(prog="robinv", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, hlp in [("synth-linear", "linear estimate, random perturbations"),
                      ("synth-linear-ubb", "linear estimate, structured bounded perturbations"),
                      ("synth-poly-ball", "polyhedral estimate, random perturbations, ellipsoidal X"),
                      ("synth-poly-ubb", "polyhedral estimate, ball of perturbations, ellipsoidal X"),
                      ("robust-norm", "bound on the robust norm of an uncertain matrix")]:
        sp = sub.add_parser(name, parents=[common], help=hlp)
        sp.add_argument("--model", required=True)
    for name, hlp in [("certify", "risk bound for a given contrast"), ("risk-eval", "Monte Carlo risk")]:
        sp = sub.add_parser(name, parents=[common], help=hlp)
        sp.add_argument("--model", required=True)
        sp.add_argument("--H", required=True, help="contrast JSON")
        sp.add_argument("--estimate", choices=["linear", "polyhedral"], default="linear")
    sp = sub.add_parser("experiment", parents=[common], help="built-in experiments")
    sp.add_argument("name", choices=["deconv"])
    sp.add_argument("--config", help="ExperimentConfig JSON (overrides the flags below)")
    sp.add_argument("--gamma", default="0.001,0.01,0.1,1")
    sp.add_argument("--n", type=int, default=32)
    sp.add_argument("--m", type=int, default=32)
    sp.add_argument("--nu", type=int, default=16)
    sp.add_argument("--sigma", type=float, default=1e-4)
    sp.add_argument("--kernel", default=None, help="comma-separated kernel taps")
    sp.add_argument("--noise", default="gaussian")
    sp.add_argument("--perturbation", default="gaussian")
    sp.add_argument("--estimators", default="linear,nominal,poly")
    return p


COMMANDS = {
    "synth-linear": cmd_synth_linear,
    "synth-linear-ubb": cmd_synth_linear_ubb,
    "synth-poly-ball": lambda a, o: cmd_synth_poly(a, o, ubb=False),
    "synth-poly-ubb": lambda a, o: cmd_synth_poly(a, o, ubb=True),
    "certify": cmd_certify,
    "risk-eval": cmd_risk_eval,
    "robust-norm": cmd_robust_norm,
    "experiment": cmd_experiment,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out_dir)
    try:
        if not 0 < args.eps < 1:
            raise ConfigError("--eps must lie in (0, 1)")
        summary = COMMANDS[args.command](args, out)
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        _write_json(out / "summary.json", {"command": args.command, "status": "solver-failure", "error": str(exc)})
        return EXIT_SOLVER
    except (ConfigError, ValueError, KeyError, TypeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    summary = {"command": args.command, "status": "ok", "eps": args.eps, "seed": args.seed, **summary}
    _write_json(out / "summary.json", summary)
    print(json.dumps({k: _jsonable(v) for k, v in summary.items() if k in ("command", "bound", "quantiles")}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
