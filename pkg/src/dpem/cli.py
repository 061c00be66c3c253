"""Benchmark harness: generate datasets, execute runs and sweeps, preprocess
labeled data, and summarize result rows.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
non-convergence.  Any option can also be supplied from a ``--config`` file
of ``key = value`` lines (dotted ``command.key`` entries bind to a single
subcommand); explicit flags win over the file.
"""

from __future__ import annotations

import functools
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np

from . import io
from .accounting import make_budget
from .errors import ConfigError, ConvergenceError, DataError, DomainError
from .estimators import (
    SIGN_SYMMETRIC_KINDS,
    align_sign,
    clipped_dp_gradient_em,
    dp_em_gmm,
    dp_gradient_em,
    gradient_em,
    initial_beta,
)
from .models import (
    MODEL_KINDS,
    GroundTruth,
    ModelSpec,
    preprocess_real_gmm,
    sample_observations,
    tau_bound,
)
from .numeric import RngStream

ALGORITHMS = ("em", "clipped", "dpgem", "dpem")


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved settings for one run or sweep."""

    model: ModelSpec
    algorithm: str
    n_values: tuple[int, ...]
    d_values: tuple[int, ...]
    eps_values: tuple
    clip_values: tuple
    delta_rule: str
    eta: float
    iters: object
    tau: object
    zeta: float
    snr: float
    seed: int
    n_seeds: int
    threads: int
    timing: bool
    disable_noise: bool


def _fail(message: str, code: int):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guarded(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except ConfigError as exc:
            _fail(str(exc), 2)
        except DataError as exc:  # ParseError included
            _fail(str(exc), 3)
        except DomainError as exc:
            _fail(str(exc), 2)
        except ConvergenceError as exc:
            _fail(str(exc), 4)
        except OSError as exc:
            _fail(str(exc), 3)

    return wrapper


# ---------------------------------------------------------------- option glue


def _load_config(config_path) -> dict:
    return io.parse_config_file(config_path) if config_path else {}


def _resolve(ctx, cfg: dict, command: str, name: str):
    """Flag if given on the command line, else config file, else flag default."""
    param = name.replace("-", "_")
    source = ctx.get_parameter_source(param)
    if source is not None and source.name == "COMMANDLINE":
        return ctx.params[param]
    for key in (f"{command}.{name}", name):
        if key in cfg:
            return cfg[key]
    return ctx.params[param]


def _as_int(name: str, value) -> int:
    try:
        return int(str(value))
    except ValueError:
        raise ConfigError(f"{name}: expected an integer, got {value!r}") from None


def _as_float(name: str, value) -> float:
    try:
        return float(str(value))
    except ValueError:
        raise ConfigError(f"{name}: expected a number, got {value!r}") from None


def _as_bool(name: str, value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{name}: expected a boolean, got {value!r}")


def _as_float_list(name: str, value) -> tuple[float, ...]:
    parts = [p.strip() for p in str(value).split(",") if p.strip()]
    if not parts:
        raise ConfigError(f"{name}: expected a nonempty comma-separated list")
    return tuple(_as_float(name, p) for p in parts)


def _as_int_list(name: str, value) -> tuple[int, ...]:
    parts = [p.strip() for p in str(value).split(",") if p.strip()]
    if not parts:
        raise ConfigError(f"{name}: expected a nonempty comma-separated list")
    return tuple(_as_int(name, p) for p in parts)


def _auto_or_float(name: str, value):
    return "auto" if str(value) == "auto" else _as_float(name, value)


def _auto_or_int(name: str, value):
    return "auto" if str(value) == "auto" else _as_int(name, value)


def _check_model(value: str) -> str:
    if value not in MODEL_KINDS:
        raise ConfigError(f"model: expected one of {MODEL_KINDS}, got {value!r}")
    return value


def _check_algorithm(value: str) -> str:
    if value not in ALGORITHMS:
        raise ConfigError(f"algorithm: expected one of {ALGORITHMS}, got {value!r}")
    return value


def _resolve_delta(rule, n: int) -> float:
    if rule == "auto":
        return float(n) ** -1.1
    return float(rule)


def _resolve_iters(iters, n: int) -> int:
    if iters == "auto":
        return max(1, math.ceil(math.log(n)))
    return int(iters)


def _resolve_tau(tau, model: ModelSpec, beta_star: np.ndarray) -> float:
    if tau == "auto":
        return tau_bound(
            model,
            float(np.max(np.abs(beta_star))),
            float(np.linalg.norm(beta_star)),
        )
    return float(tau)


# ------------------------------------------------------------------- running


def _execute(algorithm, data, model, beta0, rng, truth, *, eps, delta, eta,
             T, clip, tau, zeta, shuffle, disable_noise):
    if algorithm == "em":
        return gradient_em(data, model, beta0, eta, T, truth)
    budget = make_budget(eps, delta)
    if algorithm == "clipped":
        return clipped_dp_gradient_em(
            data, model, beta0, clip, eta, T, budget, rng, truth,
            disable_noise=disable_noise,
        )
    if algorithm == "dpgem":
        return dp_gradient_em(
            data, model, beta0, tau, eta, T, budget, zeta, rng, truth,
            shuffle=shuffle, disable_noise=disable_noise,
        )
    return dp_em_gmm(
        data, model, beta0, tau, T, budget, zeta, rng, truth,
        disable_noise=disable_noise,
    )


def _trace_rows(trace, *, model_kind, algorithm, eps, delta, d, n, T, clip,
                seed, wall_ms) -> list[dict]:
    rows = []
    for it in range(trace.betas.shape[0]):
        rows.append({
            "model": model_kind,
            "algorithm": algorithm,
            "eps": "" if eps is None else float(eps),
            "delta": "" if eps is None else float(delta),
            "d": d,
            "n": n,
            "T": T,
            "C": "" if clip is None else float(clip),
            "seed": seed,
            "iter": it,
            "error": float(trace.errors[it]),
            "wall_ms": wall_ms,
        })
    return rows


def _run_parallel(tasks, worker, threads: int) -> dict:
    """Execute worker over keyed tasks, any order; return {key: rows}."""
    results = {}
    if threads <= 1:
        for key, spec in tasks:
            results[key] = worker(spec)
        return results
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = {key: pool.submit(worker, spec) for key, spec in tasks}
        for key, future in futures.items():
            results[key] = future.result()
    return results


# ------------------------------------------------------------------ commands


@click.group()
def cli():
    """Differentially private EM benchmark harness."""


@cli.command("gen")
@click.option("--model", default="gmm", help=f"one of {'|'.join(MODEL_KINDS)}")
@click.option("--n", default="2000")
@click.option("--d", default="10")
@click.option("--snr", default="3.0", help="||beta*||_2 / sigma")
@click.option("--sigma", default="1.0")
@click.option("--p-m", default="0.0", help="rmc missingness probability")
@click.option("--seed", default="0")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--config", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
@_guarded
def cmd_gen(ctx, **_):
    """Generate a synthetic dataset plus its metadata sidecar."""
    cfg = _load_config(ctx.params["config"])
    get = lambda name: _resolve(ctx, cfg, "gen", name)
    model_kind = _check_model(get("model"))
    n = _as_int("n", get("n"))
    d = _as_int("d", get("d"))
    snr = _as_float("snr", get("snr"))
    sigma = _as_float("sigma", get("sigma"))
    p_m = _as_float("p-m", get("p-m"))
    seed = _as_int("seed", get("seed"))
    out = get("out")

    model = ModelSpec(model_kind, d, sigma, p_m if model_kind == "rmc" else 0.0)
    root = RngStream(seed)
    beta_star = snr * sigma * initial_beta(d, root.split(0))
    data = sample_observations(model, n, beta_star, root.split(1))
    io.write_dataset(out, data)
    io.write_metadata(f"{out}.meta.json", {
        "model": model_kind,
        "n": n,
        "d": d,
        "sigma": sigma,
        "p_m": model.p_m,
        "snr": snr,
        "seed": seed,
        "beta_star": [float(v) for v in beta_star],
    })
    click.echo(f"wrote {out} and {out}.meta.json")


@cli.command("run")
@click.option("--algorithm", default="dpgem", help=f"one of {'|'.join(ALGORITHMS)}")
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--meta", type=click.Path(exists=True, dir_okay=False))
@click.option("--eps", default="1.0")
@click.option("--delta", default="auto", help="'auto' means n^-1.1")
@click.option("--eta", default="1.0")
@click.option("--iters", default="auto", help="'auto' means ceil(ln n)")
@click.option("--clip", default="1.0")
@click.option("--tau", default="auto")
@click.option("--zeta", default="0.05")
@click.option("--shuffle", default="true")
@click.option("--seed", default="0")
@click.option("--n-seeds", default="1")
@click.option("--threads", default="1")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--unsafe-no-noise", is_flag=True,
              help="disable privacy noise; output is NOT private")
@click.option("--timing", is_flag=True, help="record real wall_ms (non-reproducible)")
@click.option("--config", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
@_guarded
def cmd_run(ctx, **_):
    """Run one algorithm on an existing dataset, once per seed."""
    cfg = _load_config(ctx.params["config"])
    get = lambda name: _resolve(ctx, cfg, "run", name)
    algorithm = _check_algorithm(get("algorithm"))
    data_path = get("data")
    meta_path = get("meta") or f"{data_path}.meta.json"
    eps = _as_float("eps", get("eps"))
    delta_rule = get("delta")
    eta = _as_float("eta", get("eta"))
    iters = _auto_or_int("iters", get("iters"))
    clip = _as_float("clip", get("clip"))
    tau = _auto_or_float("tau", get("tau"))
    zeta = _as_float("zeta", get("zeta"))
    shuffle = _as_bool("shuffle", get("shuffle"))
    seed = _as_int("seed", get("seed"))
    n_seeds = _as_int("n-seeds", get("n-seeds"))
    threads = _as_int("threads", get("threads"))
    out = get("out")
    disable_noise = _as_bool("unsafe-no-noise", get("unsafe-no-noise"))
    timing = _as_bool("timing", get("timing"))

    meta = io.read_metadata(meta_path)
    model_kind = meta.get("model")
    if model_kind not in MODEL_KINDS:
        raise ConfigError(f"model: metadata has invalid kind {model_kind!r}")
    data = io.read_dataset(data_path, model_kind)
    if data.n != int(meta["n"]):
        raise ConfigError(f"n: metadata says {meta['n']}, dataset has {data.n}")
    if data.d != int(meta["d"]):
        raise ConfigError(f"d: metadata says {meta['d']}, dataset has {data.d}")
    model = ModelSpec(model_kind, data.d, float(meta["sigma"]),
                      float(meta.get("p_m", 0.0)))
    beta_star = np.asarray(meta["beta_star"], dtype=float)
    if beta_star.shape != (data.d,):
        raise ConfigError("beta_star: metadata dimension mismatch")
    if algorithm == "dpem" and model_kind != "gmm":
        raise ConfigError("algorithm: dpem applies to the gmm model only")

    truth = GroundTruth(beta_star)
    delta = _resolve_delta(delta_rule, data.n)
    T = _resolve_iters(iters, data.n)
    tau_value = None
    if algorithm in ("dpgem", "dpem"):
        tau_value = _resolve_tau(tau, model, beta_star)
    if disable_noise:
        click.echo("NON-PRIVATE: noise injection disabled", err=True)

    def worker(k: int) -> list[dict]:
        root = RngStream(seed + k)
        beta0 = initial_beta(data.d, root.split(0))
        if model_kind in SIGN_SYMMETRIC_KINDS:
            # beta -> -beta is a symmetry of these models; fix the gauge so
            # error curves measure convergence, not the arbitrary sign
            beta0 = align_sign(beta0, beta_star)
        started = time.perf_counter()
        trace = _execute(
            algorithm, data, model, beta0, root.split(1), truth,
            eps=eps, delta=delta, eta=eta, T=T, clip=clip, tau=tau_value,
            zeta=zeta, shuffle=shuffle, disable_noise=disable_noise,
        )
        wall = (time.perf_counter() - started) * 1e3 if timing else 0.0
        private = algorithm != "em"
        return _trace_rows(
            trace, model_kind=model_kind, algorithm=algorithm,
            eps=eps if private else None, delta=delta, d=data.d, n=data.n,
            T=T, clip=clip if algorithm == "clipped" else None,
            seed=seed + k, wall_ms=wall,
        )

    results = _run_parallel([(k, k) for k in range(n_seeds)], worker, threads)
    rows = [row for k in sorted(results) for row in results[k]]
    io.write_results(out, rows)
    click.echo(f"wrote {len(rows)} rows to {out}")


@cli.command("sweep")
@click.option("--model", default="gmm")
@click.option("--algorithm", default="dpgem")
@click.option("--n-list", default="2000")
@click.option("--d-list", default="10")
@click.option("--eps-list", default="0.2,0.5,1")
@click.option("--clip-list", default="1.0")
@click.option("--snr", default="3.0")
@click.option("--sigma", default="1.0")
@click.option("--p-m", default="0.0")
@click.option("--delta", default="auto")
@click.option("--eta", default="1.0")
@click.option("--iters", default="auto")
@click.option("--tau", default="auto")
@click.option("--zeta", default="0.05")
@click.option("--shuffle", default="true")
@click.option("--seed", default="0")
@click.option("--n-seeds", default="20")
@click.option("--threads", default="1")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--unsafe-no-noise", is_flag=True)
@click.option("--timing", is_flag=True)
@click.option("--config", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
@_guarded
def cmd_sweep(ctx, **_):
    """Run a Cartesian sweep over n, d, eps (and clip for the clipped
    algorithm) with per-cell synthetic data; rows come out in canonical
    order no matter how many threads execute the cells."""
    cfg = _load_config(ctx.params["config"])
    get = lambda name: _resolve(ctx, cfg, "sweep", name)
    model_kind = _check_model(get("model"))
    algorithm = _check_algorithm(get("algorithm"))
    if algorithm == "dpem" and model_kind != "gmm":
        raise ConfigError("algorithm: dpem applies to the gmm model only")
    config = ExperimentConfig(
        model=ModelSpec(model_kind, 1, 1.0),  # placeholder; real specs are per-cell
        algorithm=algorithm,
        n_values=_as_int_list("n-list", get("n-list")),
        d_values=_as_int_list("d-list", get("d-list")),
        eps_values=(_as_float_list("eps-list", get("eps-list"))
                    if algorithm != "em" else (None,)),
        clip_values=(_as_float_list("clip-list", get("clip-list"))
                     if algorithm == "clipped" else (None,)),
        delta_rule=get("delta"),
        eta=_as_float("eta", get("eta")),
        iters=_auto_or_int("iters", get("iters")),
        tau=_auto_or_float("tau", get("tau")),
        zeta=_as_float("zeta", get("zeta")),
        snr=_as_float("snr", get("snr")),
        seed=_as_int("seed", get("seed")),
        n_seeds=_as_int("n-seeds", get("n-seeds")),
        threads=_as_int("threads", get("threads")),
        timing=_as_bool("timing", get("timing")),
        disable_noise=_as_bool("unsafe-no-noise", get("unsafe-no-noise")),
    )
    sigma = _as_float("sigma", get("sigma"))
    p_m = _as_float("p-m", get("p-m"))
    shuffle = _as_bool("shuffle", get("shuffle"))
    out = get("out")
    if config.n_seeds < 1:
        raise ConfigError("n-seeds: need at least one seed")
    if config.disable_noise:
        click.echo("NON-PRIVATE: noise injection disabled", err=True)

    tasks = []
    for i_n, n in enumerate(config.n_values):
        for i_d, d in enumerate(config.d_values):
            for i_eps, eps in enumerate(config.eps_values):
                for i_clip, clip in enumerate(config.clip_values):
                    for k in range(config.n_seeds):
                        key = (i_n, i_d, i_eps, i_clip, k)
                        tasks.append((key, (n, d, eps, clip, i_eps, i_clip, k)))

    master = config.seed

    def worker(spec) -> list[dict]:
        n, d, eps, clip, i_eps, i_clip, k = spec
        model = ModelSpec(model_kind, d, sigma, p_m if model_kind == "rmc" else 0.0)
        # data and init are shared across the eps and clip axes so cells
        # differ only in privacy noise
        beta_star = config.snr * sigma * initial_beta(
            d, RngStream(master).split(0).split(d).split(k))
        data = sample_observations(
            model, n, beta_star, RngStream(master).split(1).split(n).split(d).split(k))
        beta0 = initial_beta(d, RngStream(master).split(2).split(d).split(k))
        if model_kind in SIGN_SYMMETRIC_KINDS:
            beta0 = align_sign(beta0, beta_star)
        noise_rng = (RngStream(master).split(3).split(n).split(d)
                     .split(i_eps).split(i_clip).split(k))
        truth = GroundTruth(beta_star)
        delta = _resolve_delta(config.delta_rule, n)
        T = _resolve_iters(config.iters, n)
        tau_value = None
        if algorithm in ("dpgem", "dpem"):
            tau_value = _resolve_tau(config.tau, model, beta_star)
        started = time.perf_counter()
        trace = _execute(
            algorithm, data, model, beta0, noise_rng, truth,
            eps=eps, delta=delta, eta=config.eta, T=T, clip=clip,
            tau=tau_value, zeta=config.zeta, shuffle=shuffle,
            disable_noise=config.disable_noise,
        )
        wall = (time.perf_counter() - started) * 1e3 if config.timing else 0.0
        return _trace_rows(
            trace, model_kind=model_kind, algorithm=algorithm, eps=eps,
            delta=delta, d=d, n=n, T=T, clip=clip, seed=master + k,
            wall_ms=wall,
        )

    results = _run_parallel(tasks, worker, config.threads)
    rows = [row for key in sorted(results) for row in results[key]]
    io.write_results(out, rows)
    click.echo(f"wrote {len(rows)} rows to {out}")


@cli.command("preprocess")
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--config", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
@_guarded
def cmd_preprocess(ctx, **_):
    """Turn labeled rows (f1..fd,label) into a centered two-cluster dataset."""
    cfg = _load_config(ctx.params["config"])
    get = lambda name: _resolve(ctx, cfg, "preprocess", name)
    data_path = get("data")
    out = get("out")
    try:
        features, labels = io.read_labeled(data_path)
    except io.ParseError as exc:
        if exc.line == 1:
            # wrong file shape for this command, not corrupt data
            raise ConfigError(str(exc)) from None
        raise
    obs, truth, sigma = preprocess_real_gmm(features, labels)
    io.write_dataset(out, obs)
    io.write_metadata(f"{out}.meta.json", {
        "model": "gmm",
        "n": obs.n,
        "d": obs.d,
        "sigma": sigma,
        "sigma_rule": "sqrt of max per-cluster covariance eigenvalue",
        "sigma_floor_applied": sigma <= 1e-6,
        "p_m": 0.0,
        "snr": float(np.linalg.norm(truth.beta_star) / sigma),
        "source": str(data_path),
        "beta_star": [float(v) for v in truth.beta_star],
    })
    click.echo(f"wrote {out} and {out}.meta.json")


@cli.command("report")
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.pass_context
@_guarded
def cmd_report(ctx, **_):
    """Summarize result rows: median and quartiles per cell per iteration."""
    rows = io.read_results(ctx.params["data"])
    groups: dict[tuple, list[float]] = {}
    for row in rows:
        key = tuple(row[c] for c in
                    ("model", "algorithm", "eps", "delta", "d", "n", "T", "C", "iter"))
        groups.setdefault(key, []).append(row["error"])

    def sort_key(key):
        return tuple(-math.inf if v == "" else v for v in key[2:])

    summary = []
    for key in sorted(groups, key=lambda k: (k[0], k[1], sort_key(k))):
        errors = np.array(groups[key])
        q25, q50, q75 = np.percentile(errors, [25, 50, 75])
        summary.append(dict(
            zip(("model", "algorithm", "eps", "delta", "d", "n", "T", "C", "iter"), key),
            n_seeds=errors.size,
            median_error=float(q50),
            q25_error=float(q25),
            q75_error=float(q75),
        ))
    io.write_summary(ctx.params["out"], summary)
    click.echo(f"wrote {len(summary)} summary rows to {ctx.params['out']}")


def main():
    cli(prog_name="dpem")


if __name__ == "__main__":
    main()
