"""Command-line pipelines.

    shiftgen scenario    generative scenario model for count data
    shiftgen stress      worst-case stress test of a portfolio (or the linear toy)
    shiftgen posterior   latent Langevin posterior sampling
    shiftgen flow-demo   ODE and SDE samplers on a 2-d Gaussian mixture

Parameters come from per-command defaults, then an optional JSON config file
({"seed": ..., "output_dir": ..., "<command>": {...}}), then command-line
flags (``--name value`` for top-level parameters, ``--set a.b=value`` for
nested ones; values parse as JSON when possible).

Every run writes ``report.txt`` (key=value lines, deterministic given config
and seed) plus data files into the output directory, and ``timing.txt`` with
the wall-clock time. Exit codes: 0 ok, 2 config error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .diffusion import AnalyticScore, VpSchedule, pf_ode_sample, reverse_sde_sample
from .dro import GdaConfig, GdaDivergedError, LinearLoss, PortfolioShortfall, backtest, fit_nominal, gda_run, nominal_risk
from .fields import NonFiniteStateError
from .flowmatch import OdeConfig, TrainingDivergedError, load_flow, push, save_flow, train_fm
from .metrics import MmdConfig, corr_diff, ks_per_coordinate, median_heuristic, mmd, write_ecdf_csv
from .ndmath import FullGaussian, RngState, read_csv, sample_gaussian, write_csv
from .posterior import (
    AffineGenerator,
    FlowGenerator,
    LangevinConfig,
    LinearGaussianLikelihood,
    latent_langevin,
    oracle_posterior,
    tv_gaussians_1d,
)
from .synthetic import correlated_counts, factor_returns
from .transport import w2_assignment, w2_gaussian

OUTPUT_ENV = "SHIFTGEN_OUTPUT_DIR"
DEFAULT_OUTPUT = "shiftgen_out"
DEFAULT_SEED = 0

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


DEFAULTS = {
    "scenario": {
        "input": None,  # CSV of counts; None: built-in synthetic data
        "n_rows": 1500,
        "train_frac": 0.8,
        "epochs": 200,
        "batch": 256,
        "lr": 2e-3,
        "lr_final": 1e-4,
        "hidden": [64, 64],
        "ode_steps": 64,
        "n_samples": 1000,
        "mmd_estimator": "unbiased",
        "bandwidth": None,  # None: median heuristic
    },
    "stress": {
        "mode": "portfolio",  # portfolio | linear
        "input": None,  # CSV of returns; None: built-in synthetic data
        "n_rows": 1500,
        "split": 0.8,
        "lambdas": [0.05, 0.1, 0.2, 0.5],
        "q": 0.0,
        "beta": 10.0,
        "tau": 4.0,
        "eta": None,  # None: min(lambda / 2, 0.1)
        "iters": 400,
        "inner_iters": 5,
        "nominal_iters": 2000,
        "n_particles": 200,  # linear mode
        "a": [1.0, 0.0],  # linear mode
    },
    "posterior": {
        "generator": {"kind": "identity", "d": 1},
        "likelihood": {"H": [[1.0]], "sigma2": 1.0, "y": [1.0]},
        "langevin": {"step": 1e-3, "n_steps": 200000, "burn_in": None, "thin": 10, "chains": 4},
        "true_prior": None,  # optional {"mean": [...], "cov": [[...]]}
    },
    "flow-demo": {
        "n": 500,
        "steps": 100,
        "t_max": 8.0,
        "sde_beta": 0.02,
        "sde_steps": 400,
        "weights": [0.5, 0.5],
        "means": [[-1.5, 0.0], [1.5, 0.5]],
        "variance": 0.3,
    },
}


def fmt(v) -> str:
    if v is None:
        return "absent"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ",".join(fmt(x) for x in v) + "]"
    if isinstance(v, dict):
        return "{" + ",".join(f"{k}:{fmt(x)}" for k, x in sorted(v.items())) + "}"
    return str(v)


class Report:
    """Ordered, unique key=value lines."""

    def __init__(self):
        self.items: dict[str, str] = {}
        self.files: list[str] = []

    def add(self, key: str, value) -> None:
        if key in self.items:
            raise KeyError(f"duplicate report key {key!r}")
        self.items[key] = fmt(value)

    def add_params(self, params: dict, prefix: str = "param.") -> None:
        for k in sorted(params):
            v = params[k]
            if isinstance(v, dict):
                self.add_params(v, f"{prefix}{k}.")
            else:
                self.add(prefix + k, v)

    def text(self) -> str:
        lines = [f"{k}={v}" for k, v in self.items.items()]
        lines += [f"file={f}" for f in self.files]
        return "\n".join(lines) + "\n"


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set_nested(d: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    for k in keys[:-1]:
        if not isinstance(d.get(k), dict):
            raise ConfigError(f"unknown nested parameter {dotted!r}")
        d = d[k]
    if keys[-1] not in d:
        raise ConfigError(f"unknown parameter {dotted!r}")
    d[keys[-1]] = value


def _merge(base: dict, over: dict, path: str = "") -> None:
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown parameter {path + k!r}")
        if isinstance(base[k], dict) and isinstance(v, dict) and k not in ("generator", "true_prior"):
            _merge(base[k], v, f"{path}{k}.")
        else:
            base[k] = v


def resolve_config(command: str, args) -> tuple[int, Path, dict]:
    params = copy.deepcopy(DEFAULTS[command])
    seed = DEFAULT_SEED
    out = os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        seed = raw.get("seed", seed)
        out = raw.get("output_dir", out)
        _merge(params, raw.get(command, {}))
    for key in params:
        v = getattr(args, "p_" + key.replace("-", "_"), None)
        if v is not None:
            params[key] = _parse_value(v)
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        _set_nested(params, k.strip(), _parse_value(v))
    if args.seed is not None:
        seed = args.seed
    if args.out is not None:
        out = args.out
    if not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        raise ConfigError("seed must be an integer in [0, 2^64)")
    return seed, Path(out), params


def _num(params: dict, key: str, kind=float, positive: bool = False, allow_none: bool = False):
    v = params[key]
    if v is None and allow_none:
        return None
    try:
        if kind is int and (isinstance(v, bool) or float(v) != int(v)):
            raise ValueError
        v = kind(v)
    except (TypeError, ValueError):
        raise ConfigError(f"parameter {key!r} must be a {kind.__name__}, got {params[key]!r}") from None
    if positive and not v > 0:
        raise ConfigError(f"parameter {key!r} must be positive")
    return v


# scenario


def _load_numeric(path, what: str) -> tuple[np.ndarray, list[str]]:
    try:
        return read_csv(path)
    except OSError as e:
        raise DataError(f"cannot read {what} file: {e}") from None
    except ValueError as e:
        raise DataError(str(e)) from None


def _standardize(train: np.ndarray, names: list[str]):
    mu = train.mean(axis=0)
    sd = train.std(axis=0)
    for j in np.nonzero(np.ptp(train, axis=0) == 0)[0]:
        raise DataError(f"column {names[j]!r} has zero variance in the training split")
    return mu, sd


def cmd_scenario(seed: int, out: Path, params: dict) -> Report:
    rng = RngState(seed)
    if params["input"]:
        counts, names = _load_numeric(params["input"], "input")
    else:
        counts = correlated_counts(_num(params, "n_rows", int, True), rng.child(1))
        names = [f"region{j}" for j in range(counts.shape[1])]
    bad = np.nonzero(np.any(counts <= -1.0, axis=0))[0]
    if bad.size:
        raise DataError(f"column {names[bad[0]]!r} has values <= -1; log(1 + x) is undefined")
    z = np.log1p(counts)
    frac = _num(params, "train_frac")
    n_train = int(round(frac * z.shape[0]))
    if not 2 <= n_train <= z.shape[0] - 2:
        raise ConfigError("train_frac leaves fewer than 2 rows in a split")
    mu, sd = _standardize(z[:n_train], names)
    train = (z[:n_train] - mu) / sd
    test = (z[n_train:] - mu) / sd
    d = z.shape[1]
    batch = min(_num(params, "batch", int, True), n_train)
    model, trace = train_fm(
        train,
        FullGaussian.standard(d),
        _num(params, "epochs", int),
        batch,
        _num(params, "lr", positive=True),
        rng.child(2),
        hidden=tuple(params["hidden"]),
        lr_final=_num(params, "lr_final", positive=True, allow_none=True),
    )
    n = _num(params, "n_samples", int, True)
    gen = push(model, rng.child(3).normal((n, d)), OdeConfig("rk4", _num(params, "ode_steps", int, True), "reverse"))
    if not np.all(np.isfinite(gen)):
        raise NonFiniteStateError(-1, "generated samples")
    bw = _num(params, "bandwidth", positive=True, allow_none=True)
    bw = bw if bw is not None else median_heuristic(gen, test)
    m2 = mmd(gen, test, MmdConfig(bw, params["mmd_estimator"]))
    ks = ks_per_coordinate(gen, test)
    _, _, fro = corr_diff(gen, test)

    out.mkdir(parents=True, exist_ok=True)
    gen_counts = np.expm1(gen * sd + mu)
    write_csv(out / "samples.csv", gen_counts, names)
    write_ecdf_csv(out / "ecdf_generated.csv", gen_counts, names)
    write_ecdf_csv(out / "ecdf_test.csv", counts[n_train:], names)
    save_flow(model, out / "flow.txt")

    rep = Report()
    rep.add("n_train", n_train)
    rep.add("n_test", z.shape[0] - n_train)
    rep.add("dim", d)
    rep.add("train_steps", len(trace))
    rep.add("final_loss", trace[-1] if trace else None)
    rep.add("mmd_kernel", "rbf")
    rep.add("mmd_bandwidth", bw)
    rep.add("mmd2", m2)
    rep.add("mmd", math.sqrt(m2) if m2 >= 0 else None)
    rep.add("ks_max", float(ks.max()))
    rep.add("ks", ks)
    rep.add("corr_fro", fro)
    rep.files += ["samples.csv", "ecdf_generated.csv", "ecdf_test.csv", "flow.txt"]
    return rep


# stress


def _sweep_line(lam, res, loss, base) -> str:
    st_theta, st_map = res.stationarity
    vals = (lam, res.worst_case, nominal_risk(loss, res.theta, base), st_theta, st_map)
    keys = ("lambda", "worst_case", "nominal", "stationarity_theta", "stationarity_map")
    return " ".join(f"{k}={fmt(v)}" for k, v in zip(keys, vals))


def _write_sweep(out: Path, lines: list[str], rep: Report) -> None:
    (out / "sweep.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    rep.files.append("sweep.txt")


def _stress_linear(seed: int, out: Path, params: dict, rep: Report) -> None:
    rng = RngState(seed)
    a = np.asarray(params["a"], dtype=np.float64)
    base = rng.child(1).normal((_num(params, "n_particles", int, True), a.size))
    loss = LinearLoss(a)
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    for i, lam in enumerate(params["lambdas"]):
        lam = float(lam)
        if not lam > 0:
            raise ConfigError("every lambda must be positive")
        eta = params["eta"] if params["eta"] is not None else 0.5 * lam
        res = gda_run(loss, np.zeros(0), base, GdaConfig(lam, 0.0, float(eta), _num(params, "iters", int), _num(params, "inner_iters", int, True)))
        dev = float(np.max(np.abs(res.transported - (base + lam * a))))
        st_theta, st_map = res.stationarity
        key = f"sweep.{i}."
        rep.add(key + "lambda", lam)
        rep.add(key + "worst_case", res.worst_case)
        rep.add(key + "nominal", nominal_risk(loss, res.theta, base))
        rep.add(key + "closed_form", float(np.mean(base @ a) + 0.5 * lam * a @ a))
        rep.add(key + "max_deviation", dev)
        rep.add(key + "stationarity_theta", st_theta)
        rep.add(key + "stationarity_map", st_map)
        summary.append(_sweep_line(lam, res, loss, base))
        name = f"worst_case_{i}.csv"
        write_csv(out / name, np.hstack([base, res.transported]), [f"base_x{j}" for j in range(a.size)] + [f"worst_x{j}" for j in range(a.size)])
        rep.files.append(name)
    _write_sweep(out, summary, rep)


def _stress_portfolio(seed: int, out: Path, params: dict, rep: Report) -> None:
    rng = RngState(seed)
    if params["input"]:
        returns, names = _load_numeric(params["input"], "returns")
    else:
        returns = factor_returns(_num(params, "n_rows", int, True), rng.child(1))
        names = [f"asset{j}" for j in range(returns.shape[1])]
    if returns.shape[0] < 10:
        raise DataError(f"returns have {returns.shape[0]} rows; at least 10 are required")
    for j in np.nonzero(np.ptp(returns, axis=0) == 0)[0]:
        raise DataError(f"asset {names[j]!r} has zero variance")
    split = _num(params, "split")
    n_train = int(math.floor(split * returns.shape[0]))
    if not 2 <= n_train < returns.shape[0]:
        raise ConfigError("split leaves an empty training or test period")
    mu = returns[:n_train].mean(axis=0)
    sd = returns[:n_train].std(axis=0)
    for j in np.nonzero(np.ptp(returns[:n_train], axis=0) == 0)[0]:
        raise DataError(f"asset {names[j]!r} has zero variance in the training split")
    base = (returns[:n_train] - mu) / sd
    d = returns.shape[1]
    loss = PortfolioShortfall(d, _num(params, "q"), _num(params, "beta", positive=True))
    theta_nom = fit_nominal(loss, np.zeros(d), base, _num(params, "tau", positive=True), _num(params, "nominal_iters", int))
    rep.add("n_train", n_train)
    rep.add("n_test", returns.shape[0] - n_train)
    rep.add("nominal_risk", nominal_risk(loss, theta_nom, base))
    rep.add("nominal_weights", np.exp(theta_nom - theta_nom.max()) / np.exp(theta_nom - theta_nom.max()).sum())

    out.mkdir(parents=True, exist_ok=True)
    test = returns[n_train:]
    nominal_bt = backtest(np.exp(theta_nom) / np.exp(theta_nom).sum(), test)
    summary = []
    paths = {"nominal": nominal_bt}
    for i, lam in enumerate(params["lambdas"]):
        lam = float(lam)
        if not lam > 0:
            raise ConfigError("every lambda must be positive")
        eta = params["eta"] if params["eta"] is not None else min(0.5 * lam, 0.1)
        cfg = GdaConfig(lam, _num(params, "tau", positive=True), float(eta), _num(params, "iters", int), _num(params, "inner_iters", int, True))
        res = gda_run(loss, theta_nom, base, cfg)
        w = np.exp(res.theta - res.theta.max())
        w /= w.sum()
        st_theta, st_map = res.stationarity
        key = f"sweep.{i}."
        rep.add(key + "lambda", lam)
        rep.add(key + "worst_case", res.worst_case)
        rep.add(key + "nominal", nominal_risk(loss, res.theta, base))
        rep.add(key + "stationarity_theta", st_theta)
        rep.add(key + "stationarity_map", st_map)
        rep.add(key + "weights", w)
        bt = backtest(w, test)
        paths[f"lambda_{i}"] = bt
        rep.add(key + "final_wealth", bt.wealth[-1])
        summary.append(_sweep_line(lam, res, loss, base))
        name = f"worst_case_{i}.csv"
        write_csv(out / name, np.hstack([base, res.transported]), [f"base_{c}" for c in names] + [f"worst_{c}" for c in names])
        rep.files.append(name)
    rep.add("nominal_final_wealth", nominal_bt.wealth[-1])
    rep.add("bankrupt", [k for k, b in paths.items() if b.bankrupt] or None)
    T = test.shape[0]
    cols = [np.pad(b.wealth, (0, T - b.wealth.size)) for b in paths.values()]
    write_csv(out / "wealth.csv", np.column_stack([np.arange(1, T + 1), *cols]), ["t", *paths])
    rep.files.append("wealth.csv")
    _write_sweep(out, summary, rep)


def cmd_stress(seed: int, out: Path, params: dict) -> Report:
    rep = Report()
    if params["mode"] == "linear":
        _stress_linear(seed, out, params, rep)
    elif params["mode"] == "portfolio":
        _stress_portfolio(seed, out, params, rep)
    else:
        raise ConfigError(f"unknown stress mode {params['mode']!r}")
    return rep


# posterior


def _gaussian_from(block, what: str) -> FullGaussian:
    try:
        return FullGaussian(np.asarray(block["mean"], dtype=np.float64), np.asarray(block["cov"], dtype=np.float64))
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"invalid {what}: {e}") from None


def build_generator(gen_cfg: dict):
    kind = gen_cfg.get("kind") if isinstance(gen_cfg, dict) else None
    try:
        if kind == "identity":
            return AffineGenerator.identity(int(gen_cfg.get("d", 1)))
        if kind == "affine":
            return AffineGenerator(gen_cfg["A"], gen_cfg["b"])
        if kind == "checkpoint":
            return FlowGenerator(load_flow(gen_cfg["path"]), steps=int(gen_cfg.get("steps", 64)))
    except (KeyError, TypeError, ValueError, OSError) as e:
        raise ConfigError(f"invalid generator config: {e}") from None
    raise ConfigError(f"invalid generator config: kind must be identity, affine or checkpoint (got {kind!r})")


def cmd_posterior(seed: int, out: Path, params: dict) -> Report:
    gen = build_generator(params["generator"])
    lk = params["likelihood"]
    try:
        lik = LinearGaussianLikelihood(np.asarray(lk["H"], dtype=np.float64), float(lk["sigma2"]), np.asarray(lk["y"], dtype=np.float64))
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"invalid likelihood: {e}") from None
    if lik.H.shape[1] != gen.dim:
        raise ConfigError(f"H has {lik.H.shape[1]} columns for a {gen.dim}-dimensional generator")
    lg = params["langevin"]
    try:
        cfg = LangevinConfig(float(lg["step"]), int(lg["n_steps"]), lg["burn_in"], int(lg["thin"]), seed, int(lg["chains"]))
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"invalid langevin settings: {e}") from None
    samples = latent_langevin(gen, lik, cfg)
    mean = samples.mean(axis=0)
    var = samples.var(axis=0, ddof=1)

    rep = Report()
    rep.add("n_samples", samples.shape[0])
    rep.add("sample_mean", mean)
    rep.add("sample_var", var)
    affine = isinstance(gen, AffineGenerator)
    if affine:
        post = oracle_posterior(gen, lik)
        rep.add("oracle_mean", post.mean)
        rep.add("oracle_var", np.diag(post.covariance))
        rep.add("post_mean_err", float(np.max(np.abs(mean - post.mean))))
        rep.add("post_var_err", float(np.max(np.abs(var - np.diag(post.covariance)))))
    else:
        rep.add("oracle_mean", None)
        rep.add("oracle_var", None)
        rep.add("post_mean_err", None)
        rep.add("post_var_err", None)
    if params["true_prior"] is None:
        rep.add("prior_disc", None)
        rep.add("prior_disc_metric", None)
    else:
        truth = _gaussian_from(params["true_prior"], "true_prior")
        if truth.dim != gen.dim:
            raise ConfigError("true_prior dimension does not match the generator")
        if affine and gen.dim == 1:
            rep.add("prior_disc", tv_gaussians_1d(truth, gen.prior))
            rep.add("prior_disc_metric", "tv")
        elif affine:
            rep.add("prior_disc", w2_gaussian(truth, gen.prior))
            rep.add("prior_disc_metric", "w2_bures")
        else:
            r = RngState(seed).child(7)
            model_draws = gen.forward(r.normal((512, gen.dim)))
            rep.add("prior_disc", w2_assignment(model_draws, sample_gaussian(r, truth, 512))[0])
            rep.add("prior_disc_metric", "w2_assignment")
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "posterior_samples.csv", samples)
    rep.files.append("posterior_samples.csv")
    return rep


# flow-demo


def cmd_flow_demo(seed: int, out: Path, params: dict) -> Report:
    rng = RngState(seed)
    n = _num(params, "n", int, True)
    if n > 512:
        raise ConfigError("n is limited to 512 (exact assignment distances)")
    var = _num(params, "variance", positive=True)
    weights = [float(w) for w in params["weights"]]
    means = [np.asarray(m, dtype=np.float64) for m in params["means"]]
    if len(weights) != len(means):
        raise ConfigError("weights and means differ in length")
    try:
        mixture = [(w, FullGaussian.isotropic(m, var)) for w, m in zip(weights, means)]
        score = AnalyticScore(mixture, t_max=_num(params, "t_max", positive=True))
    except ValueError as e:
        raise ConfigError(f"invalid mixture: {e}") from None
    ode = pf_ode_sample(score, n, _num(params, "steps", int, True), rng.child(1))
    try:
        sched = VpSchedule.constant(_num(params, "sde_beta", positive=True), _num(params, "sde_steps", int, True))
    except ValueError as e:
        raise ConfigError(str(e)) from None
    sde = reverse_sde_sample(score, sched, n, rng.child(2))

    def draw(r: RngState) -> np.ndarray:
        comp = r.uniform(n) * sum(weights)
        idx = np.searchsorted(np.cumsum(weights), comp, side="right").clip(0, len(weights) - 1)
        x = r.normal((n, score.dim)) * math.sqrt(var)
        return x + np.stack(means)[idx]

    t1, t2 = draw(rng.child(3)), draw(rng.child(4))
    w2 = lambda a, b: w2_assignment(a, b)[0]
    rep = Report()
    rep.add("sde_terminal_alpha_bar", float(sched.alpha_bars[-1]))
    rep.add("sde_terminal_ok", sched.terminal_ok())
    rep.add("finite", bool(np.all(np.isfinite(ode)) and np.all(np.isfinite(sde))))
    w_os = w2(ode, sde)
    w_tt = w2(t1, t2)
    rep.add("w2_ode_sde", w_os)
    rep.add("w2_ode_target", w2(ode, t1))
    rep.add("w2_sde_target", w2(sde, t2))
    rep.add("w2_target_target", w_tt)
    rep.add("ode_sde_ratio", w_os / w_tt)
    out.mkdir(parents=True, exist_ok=True)
    for name, cloud in (("ode_cloud.csv", ode), ("sde_cloud.csv", sde), ("target_cloud.csv", t1)):
        write_csv(out / name, cloud)
        rep.files.append(name)
    return rep


COMMANDS = {
    "scenario": cmd_scenario,
    "stress": cmd_stress,
    "posterior": cmd_posterior,
    "flow-demo": cmd_flow_demo,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shiftgen", description="Distribution-shift generation pipelines.")
    p.add_argument("--version", action="version", version=f"shiftgen {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, params in DEFAULTS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help=f"output directory (default: ${OUTPUT_ENV} or {DEFAULT_OUTPUT})")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a (nested) parameter")
        for key, val in params.items():
            sp.add_argument("--" + key.replace("_", "-"), dest="p_" + key, metavar=type(val).__name__.upper() if val is not None else "VALUE")
    return p


def run(command: str, seed: int, out: Path, params: dict) -> tuple[Report, float]:
    t0 = time.perf_counter()
    body = COMMANDS[command](seed, out, params)
    rep = Report()
    rep.add("command", command)
    rep.add("version", __version__)
    rep.add("seed", seed)
    rep.add_params(params)
    for k, v in body.items.items():
        rep.items[k] = v
    rep.files = body.files
    elapsed = time.perf_counter() - t0
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(rep.text(), encoding="utf-8")
    (out / "timing.txt").write_text(f"wall_clock_seconds={elapsed:.6g}\n", encoding="utf-8")
    return rep, elapsed


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        seed, out, params = resolve_config(args.command, args)
        rep, elapsed = run(args.command, seed, out, params)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, NonFiniteStateError, TrainingDivergedError, GdaDivergedError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    sys.stdout.write(rep.text())
    print(f"wall_clock_seconds={elapsed:.6g}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
