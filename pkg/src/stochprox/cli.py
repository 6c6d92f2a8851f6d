"""Command-line surface.

Commands: simulate, fit, rate, path, compare, validate-schedule, benchmark.
All take an INI-style config file; every run writes a fully resolved copy
of its configuration next to its outputs, and rerunning from that copy
reproduces the outputs byte for byte at any thread count.

Exit codes: 0 success, 2 configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import BACKEND, __version__, lmm, pk, plots
from .diagnostics import (
    estimate_lambda_max,
    lambda_grid,
    predicted_l2_slope,
    rate_experiment,
    reg_path,
    support_set,
)
from .engine import ALGORITHMS, EngineConfig, run
from .penalty import KINDS as PENALTY_KINDS
from .penalty import PenaltySpec
from .schedules import ScheduleSpec, validate_H5
from .trace_io import load_checkpoint, save_checkpoint, save_trace_csv

log = logging.getLogger("stochprox")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ConfigError(Exception):
    pass


# every known key with its default (None = required when used)
_SCHEMA = {
    "model": {
        "kind": "toy",
        "n_subjects": "20",
        "n_obs": "8",
        "n_covariates": "20",
        "seed": "123",
        "dataset_dir": "",
        "dose": "100.0",
        "sigma_residual": "auto",
        "covariate_rows": "all",
        "pinned_variances": "",
    },
    "penalty": {
        "kind": "lasso",
        "lambda": "0.0",
        "alpha": "1.0",
        "box_lo": "",
        "box_hi": "",
    },
    "schedule": {
        "gamma_star": "0.004",
        "alpha": "0.75",
        "n_alpha": "0",
        "delta_star": "0.5",
        "beta": "0.5",
        "n_beta": "0",
        "m_star": "60",
        "c": "0.0",
        "adaptive": "false",
        "n0": "0",
    },
    "engine": {
        "algorithm": "sapg",
        "max_iter": "500",
        "seed": "0",
        "sampler": "auto",
        "init_theta": "default",
        "track_f": "true",
        "track_stat_error": "true",
        "early_stop_tol": "0.0",
        "checkpoint_every": "0",
        "rw_sd": "0.5",
        "mcmc_target_rate": "0.4",
        "mcmc_window": "50",
        "mcmc_frozen": "false",
    },
    "diagnostics": {
        "replicates": "30",
        "rate_pairs": "0.9:0.4,0.6:0.1,0.5:0.5",
        "path_length": "40",
        "path_min_ratio": "0.01",
        "path_iters_after_first": "0",
        "gamma_ebic": "0.5",
        "ebic_particles": "1000",
        "compare_seeds": "30",
        "agree_tol": "0.01",
        "profile": "desk",
    },
    "output": {"directory": "out"},
}

_PK_ROW_NAMES = {name: i for i, name in enumerate(pk.LATENT_NAMES)}


def read_config(path) -> dict:
    """Parse and validate an INI config; unknown sections/keys are errors."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    found = parser.read(path)
    if not found:
        raise ConfigError(f"config file not found: {path}")
    cfg = {sec: dict(defaults) for sec, defaults in _SCHEMA.items()}
    for sec in parser.sections():
        if sec not in _SCHEMA:
            raise ConfigError(f"unknown config section [{sec}]")
        for key, val in parser.items(sec):
            if key not in _SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in section [{sec}]")
            cfg[sec][key] = val
    return cfg


def write_resolved(cfg: dict, path) -> None:
    parser = configparser.ConfigParser()
    for sec in _SCHEMA:
        parser[sec] = {k: str(v) for k, v in cfg[sec].items()}
    with open(path, "w") as fh:
        fh.write(f"# resolved by stochprox {__version__}\n")
        parser.write(fh)


def _as_int(cfg, sec, key):
    try:
        return int(cfg[sec][key])
    except ValueError as exc:
        raise ConfigError(f"[{sec}] {key} must be an integer") from exc


def _as_float(cfg, sec, key):
    try:
        return float(cfg[sec][key])
    except ValueError as exc:
        raise ConfigError(f"[{sec}] {key} must be a number") from exc


def _as_bool(cfg, sec, key):
    val = cfg[sec][key].strip().lower()
    if val in ("true", "1", "yes", "on"):
        return True
    if val in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"[{sec}] {key} must be a boolean")


def build_schedule(cfg: dict, model=None) -> ScheduleSpec:
    raw = cfg["schedule"]["gamma_star"].strip()
    if raw.startswith("inv_L"):
        if model is None or model.lipschitz_L() is None:
            raise ConfigError(
                "[schedule] gamma_star=inv_L needs a model with a known "
                "Lipschitz constant"
            )
        factor = float(raw.split("*", 1)[1]) if "*" in raw else 1.0
        gamma_star = factor / model.lipschitz_L()
        cfg["schedule"]["gamma_star"] = repr(gamma_star)
    else:
        gamma_star = _as_float(cfg, "schedule", "gamma_star")
    try:
        return ScheduleSpec(
            gamma_star=gamma_star,
            alpha=_as_float(cfg, "schedule", "alpha"),
            n_alpha=_as_int(cfg, "schedule", "n_alpha"),
            delta_star=_as_float(cfg, "schedule", "delta_star"),
            beta=_as_float(cfg, "schedule", "beta"),
            n_beta=_as_int(cfg, "schedule", "n_beta"),
            m_star=_as_int(cfg, "schedule", "m_star"),
            c=_as_float(cfg, "schedule", "c"),
            adaptive=_as_bool(cfg, "schedule", "adaptive"),
            n0=_as_int(cfg, "schedule", "n0"),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid schedule: {exc}") from exc


def build_penalty(cfg: dict, dim: int | None = None) -> PenaltySpec:
    kind = cfg["penalty"]["kind"].strip()
    if kind not in PENALTY_KINDS:
        raise ConfigError(f"[penalty] kind must be one of {PENALTY_KINDS}")
    box = None
    if kind == "box-projection":
        if not cfg["penalty"]["box_lo"] or not cfg["penalty"]["box_hi"]:
            raise ConfigError("[penalty] box-projection needs box_lo and box_hi")
        if dim is None:
            raise ConfigError("box penalty needs a model dimension")
        lo = _as_float(cfg, "penalty", "box_lo")
        hi = _as_float(cfg, "penalty", "box_hi")
        box = np.tile([lo, hi], (dim, 1))
    try:
        return PenaltySpec(
            kind=kind,
            lam=_as_float(cfg, "penalty", "lambda"),
            alpha=_as_float(cfg, "penalty", "alpha"),
            box=box,
        )
    except ValueError as exc:
        raise ConfigError(f"invalid penalty: {exc}") from exc


def _parse_covariate_rows(raw: str):
    raw = raw.strip()
    if raw in ("", "all"):
        return None
    rows = [False] * pk.R_LATENT
    for tok in raw.split(","):
        tok = tok.strip()
        idx = _PK_ROW_NAMES.get(tok)
        if idx is None:
            try:
                idx = int(tok)
            except ValueError as exc:
                raise ConfigError(f"unknown latent coordinate {tok!r}") from exc
        if not 0 <= idx < pk.R_LATENT:
            raise ConfigError(f"latent coordinate index {idx} outside 0..4")
        rows[idx] = True
    return tuple(rows)


def _parse_pinned(raw: str) -> dict:
    out = {}
    raw = raw.strip()
    if not raw:
        return out
    for tok in raw.split(","):
        name, _, val = tok.partition("=")
        if not val:
            raise ConfigError("pinned_variances entries look like 'Q=0.01'")
        idx = _PK_ROW_NAMES.get(name.strip())
        if idx is None:
            idx = int(name)
        out[idx] = float(val)
    return out


def simulate_dataset(cfg: dict):
    kind = cfg["model"]["kind"].strip()
    N = _as_int(cfg, "model", "n_subjects")
    J = _as_int(cfg, "model", "n_obs")
    D = _as_int(cfg, "model", "n_covariates")
    seed = _as_int(cfg, "model", "seed")
    if kind == "toy":
        ds, _ = lmm.simulate_lmm(N, J, D, seed)
        return ds
    if kind == "pk":
        sig_raw = cfg["model"]["sigma_residual"].strip()
        sigma = None if sig_raw == "auto" else float(sig_raw)
        ds = pk.simulate_pk(
            N, J, D, seed, dose=_as_float(cfg, "model", "dose"),
            sigma_residual=sigma,
        )
        cfg["model"]["sigma_residual"] = repr(ds.sigma_residual)
        return ds
    raise ConfigError(f"[model] kind must be 'toy' or 'pk', got {kind!r}")


def dataset_dir(cfg: dict, out_dir: Path) -> Path:
    raw = cfg["model"]["dataset_dir"].strip()
    return Path(raw) if raw else out_dir / "dataset"


def load_model(cfg: dict):
    kind = cfg["model"]["kind"].strip()
    ds_dir = cfg["model"]["dataset_dir"].strip()
    if not ds_dir:
        raise ConfigError("[model] dataset_dir is required (run simulate first)")
    if kind == "toy":
        return lmm.LmmModel(lmm.load_dataset(ds_dir))
    if kind == "pk":
        dataset = pk.load_dataset(ds_dir)
        return pk.PkModel(
            dataset,
            covariate_rows=_parse_covariate_rows(cfg["model"]["covariate_rows"]),
            pinned_omega=_parse_pinned(cfg["model"]["pinned_variances"]),
        )
    raise ConfigError(f"[model] kind must be 'toy' or 'pk', got {kind!r}")


def build_engine_config(cfg: dict, model) -> EngineConfig:
    algo = cfg["engine"]["algorithm"].strip()
    if algo not in ALGORITHMS:
        raise ConfigError(f"[engine] algorithm must be one of {ALGORITHMS}")
    init_raw = cfg["engine"]["init_theta"].strip()
    if init_raw in ("default", ""):
        init_theta = None
    elif init_raw == "zeros":
        init_theta = np.zeros(model.dim_theta)
    else:
        try:
            init_theta = np.load(init_raw)
        except OSError as exc:
            raise ConfigError(f"cannot load init_theta from {init_raw!r}") from exc
    try:
        return EngineConfig(
            algorithm=algo,
            schedule=build_schedule(cfg, model),
            penalty=build_penalty(cfg, model.dim_theta),
            max_iter=_as_int(cfg, "engine", "max_iter"),
            seed=_as_int(cfg, "engine", "seed"),
            init_theta=init_theta,
            sampler=cfg["engine"]["sampler"].strip(),
            rw_sd=_as_float(cfg, "engine", "rw_sd"),
            mcmc_target_rate=_as_float(cfg, "engine", "mcmc_target_rate"),
            mcmc_window=_as_int(cfg, "engine", "mcmc_window"),
            mcmc_frozen=_as_bool(cfg, "engine", "mcmc_frozen"),
            track_f=_as_bool(cfg, "engine", "track_f"),
            track_stat_error=_as_bool(cfg, "engine", "track_stat_error"),
            early_stop_tol=_as_float(cfg, "engine", "early_stop_tol"),
            checkpoint_every=_as_int(cfg, "engine", "checkpoint_every"),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid engine config: {exc}") from exc


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: dict, out_dir: Path, args) -> int:
    ds = simulate_dataset(cfg)
    target = dataset_dir(cfg, out_dir)
    if cfg["model"]["kind"] == "toy":
        lmm.save_dataset(ds, target)
    else:
        pk.save_dataset(ds, target)
    cfg["model"]["dataset_dir"] = str(target)
    write_resolved(cfg, out_dir / "resolved.ini")
    print(f"dataset written to {target}")
    return EXIT_OK


def cmd_fit(cfg: dict, out_dir: Path, args) -> int:
    model = load_model(cfg)
    engine_cfg = build_engine_config(cfg, model)
    resume = load_checkpoint(args.resume) if args.resume else None
    ckpt_path = out_dir / "checkpoint.npz"

    def periodic(snapshot):
        save_checkpoint(snapshot, ckpt_path)

    trace = None
    try:
        trace = run(model, engine_cfg, resume=resume, checkpoint_cb=periodic)
    except (FloatingPointError, RuntimeError) as exc:
        log.error("numeric failure: %s", exc)
        if trace is None:
            return EXIT_NUMERIC
    save_trace_csv(trace, out_dir / "trace.csv")
    save_checkpoint(trace.meta["checkpoint"], ckpt_path)
    write_resolved(cfg, out_dir / "resolved.ini")
    mask = engine_cfg.penalty.mask
    if mask is None:
        mask = model.default_mask()
    support = support_set(trace.theta_final, mask)
    summary = {
        "algorithm": engine_cfg.algorithm,
        "iterations": len(trace.gamma),
        "support_size": int(support.size),
        "support": [int(i) for i in support],
        "projections": trace.meta["projections"],
        "bad_proposals": trace.meta["n_bad_proposals"],
        "stopped_early_at": trace.meta["stopped_early_at"],
        "backend": BACKEND,
    }
    (out_dir / "fit_summary.json").write_text(
        json.dumps(summary, indent=1, sort_keys=True)
    )
    plots.component_script(
        out_dir / "component.gp", "trace.csv",
        int(support[0]) if support.size else 0, "component.png",
    )
    plots.objective_script(
        out_dir / "objective.gp", ["trace.csv"],
        [engine_cfg.algorithm], "objective.png",
    )
    print(
        f"fit complete: {len(trace.gamma)} iterations, "
        f"support size {support.size}; trace at {out_dir / 'trace.csv'}"
    )
    return EXIT_OK


def _parse_rate_pairs(raw: str):
    pairs = []
    for tok in raw.split(","):
        a, _, b = tok.strip().partition(":")
        pairs.append((float(a), float(b)))
    if not pairs:
        raise ConfigError("[diagnostics] rate_pairs is empty")
    return pairs


def cmd_rate(cfg: dict, out_dir: Path, args) -> int:
    model = load_model(cfg)
    engine_cfg = build_engine_config(cfg, model)
    replicates = _as_int(cfg, "diagnostics", "replicates")
    pairs = _parse_rate_pairs(cfg["diagnostics"]["rate_pairs"])
    csvs, labels = [], []
    summary_rows = []
    for i, (a, b) in enumerate(pairs):
        sched = replace(engine_cfg.schedule, alpha=a, beta=b)
        report = rate_experiment(
            model, replace(engine_cfg, schedule=sched),
            replicates=replicates, threads=args.threads,
        )
        name = f"rate_{i}.csv"
        with open(out_dir / name, "w") as fh:
            fh.write("# schema=stochprox.rate.v1\n")
            fh.write("iteration,l2\n")
            for n, l2 in zip(report.iterations, report.l2):
                fh.write(f"{n},{l2!r}\n")
        csvs.append(name)
        labels.append(f"{engine_cfg.algorithm} a={a} b={b}")
        summary_rows.append(
            f"{engine_cfg.algorithm},{a},{b},{report.slope!r},"
            f"{report.predicted_slope!r},{replicates}"
        )
        print(
            f"({a},{b}): fitted slope {report.slope:+.3f} "
            f"(theory {report.predicted_slope:+.3f})"
        )
    with open(out_dir / "rate_summary.csv", "w") as fh:
        fh.write("# schema=stochprox.rate-summary.v1\n")
        fh.write("algorithm,alpha,beta,fitted_slope,predicted_slope,replicates\n")
        for row in summary_rows:
            fh.write(row + "\n")
    plots.rate_script(out_dir / "rate.gp", csvs, labels, "rate.png")
    write_resolved(cfg, out_dir / "resolved.ini")
    return EXIT_OK


def cmd_path(cfg: dict, out_dir: Path, args) -> int:
    model = load_model(cfg)
    engine_cfg = build_engine_config(cfg, model)
    lam_max = estimate_lambda_max(model, engine_cfg)
    grid = lambda_grid(
        lam_max,
        length=_as_int(cfg, "diagnostics", "path_length"),
        min_ratio=_as_float(cfg, "diagnostics", "path_min_ratio"),
    )
    after = _as_int(cfg, "diagnostics", "path_iters_after_first")
    report = reg_path(
        model, engine_cfg, grid,
        gamma_e=_as_float(cfg, "diagnostics", "gamma_ebic"),
        iters_after_first=after if after > 0 else None,
    )
    d = model.dim_theta
    with open(out_dir / "path.csv", "w") as fh:
        fh.write("# schema=stochprox.path.v1\n")
        fh.write(
            "lambda,ebic,loglik,selected,support_size,support,"
            + ",".join(f"theta_{i}" for i in range(d))
            + "\n"
        )
        for i, lam in enumerate(report.lambdas):
            th = report.thetas[i]
            sup = report.supports[i]
            fh.write(
                f"{lam!r},{report.ebics[i]!r},{report.logliks[i]!r},"
                f"{int(i == report.selected_index)},"
                f"{-1 if sup is None else sup.size},"
                f"{'' if sup is None else ';'.join(str(s) for s in sup)},"
                + ",".join("" if th is None else repr(float(v)) for v in th)
                + "\n"
            )
    mask = engine_cfg.penalty.mask
    if mask is None:
        mask = model.default_mask()
    theta_cols = [7 + i for i in np.flatnonzero(mask)]
    plots.path_script(out_dir / "path.gp", "path.csv", theta_cols, "path.png")
    write_resolved(cfg, out_dir / "resolved.ini")
    print(
        f"path of {len(grid)} points done; selected lambda = "
        f"{report.selected_lambda!r} (index {report.selected_index}); "
        f"{len(report.failures)} failures"
    )
    return EXIT_OK


def _compare_worker(job):
    model, cfg = job
    trace = run(model, cfg)
    return trace.theta_final


def cmd_compare(cfg: dict, out_dir: Path, args) -> int:
    model = load_model(cfg)
    engine_cfg = build_engine_config(cfg, model)
    n_seeds = _as_int(cfg, "diagnostics", "compare_seeds")
    tol = _as_float(cfg, "diagnostics", "agree_tol")
    mask = engine_cfg.penalty.mask
    if mask is None:
        mask = model.default_mask()

    ref_cfg = replace(engine_cfg, algorithm="em-pen")
    ref_theta = run(model, ref_cfg).theta_final
    ref_support = support_set(ref_theta, mask)

    algos = ("mcpg", "sapg", "saem-pen")
    jobs = [
        (model, replace(engine_cfg, algorithm=algo, seed=engine_cfg.seed + s))
        for algo in algos
        for s in range(n_seeds)
    ]
    if args.threads > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(_compare_worker, jobs))
    else:
        results = [_compare_worker(j) for j in jobs]

    freq = np.zeros(model.dim_theta)
    with open(out_dir / "compare.csv", "w") as fh:
        fh.write("# schema=stochprox.compare.v1\n")
        fh.write("algorithm,seed,max_deviation,support_size,support_matches\n")
        agree = {a: 0 for a in algos}
        within = {a: 0 for a in algos}
        for idx, job_theta in enumerate(results):
            algo = algos[idx // n_seeds]
            seed = idx % n_seeds
            dev = float(np.max(np.abs(job_theta - ref_theta)))
            sup = support_set(job_theta, mask)
            same = bool(np.array_equal(sup, ref_support))
            freq[sup] += 1.0
            agree[algo] += same
            within[algo] += dev <= tol
            fh.write(f"{algo},{seed},{dev!r},{sup.size},{int(same)}\n")
    freq /= len(jobs)
    with open(out_dir / "support_frequency.csv", "w") as fh:
        fh.write("# schema=stochprox.supportfreq.v1\n")
        fh.write("coordinate,frequency\n")
        for i in np.flatnonzero(mask):
            fh.write(f"{i},{freq[i]!r}\n")
    plots.support_frequency_script(
        out_dir / "support.gp", "support_frequency.csv", "support.png"
    )
    write_resolved(cfg, out_dir / "resolved.ini")
    for algo in algos:
        print(
            f"{algo}: within tol {within[algo]}/{n_seeds}, "
            f"support match {agree[algo]}/{n_seeds} "
            f"(reference em-pen support size {ref_support.size})"
        )
    return EXIT_OK


def cmd_validate_schedule(cfg: dict, out_dir: Path, args) -> int:
    sched = build_schedule(cfg)
    report = validate_H5(sched)
    lines = [f"schedule admissibility: {'PASS' if report.passed else 'FAIL'}"]
    for name, ok in report.checks.items():
        lines.append(f"  {name}: {'ok' if ok else 'FAIL'}")
    for name, ratio in report.flattening.items():
        lines.append(f"  tail-mass ratio {name}: {ratio:.4f}")
    for note in report.notes:
        lines.append(f"  note: {note}")
    text = "\n".join(lines)
    print(text)
    (out_dir / "schedule_report.txt").write_text(text + "\n")
    write_resolved(cfg, out_dir / "resolved.ini")
    return EXIT_OK


def cmd_benchmark(cfg: dict, out_dir: Path, args) -> int:
    from .benchmark import run_benchmark

    rows = run_benchmark()
    with open(out_dir / "benchmark.csv", "w") as fh:
        fh.write("# schema=stochprox.benchmark.v1\n")
        fh.write("kernel,backend,calls_per_second\n")
        for kernel, backend, rate in rows:
            fh.write(f"{kernel},{backend},{rate!r}\n")
    for kernel, backend, rate in rows:
        print(f"{kernel:14s} {backend:10s} {rate:12.1f} calls/s")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "rate": cmd_rate,
    "path": cmd_path,
    "compare": cmd_compare,
    "validate-schedule": cmd_validate_schedule,
    "benchmark": cmd_benchmark,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="stochprox",
        description="Stochastic proximal-gradient and penalized EM solvers "
        "for latent-variable mixed models",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("-c", "--config", required=(name != "benchmark"))
        p.add_argument("-o", "--output", help="override [output] directory")
        p.add_argument(
            "--threads",
            type=int,
            default=int(os.environ.get("STOCHPROX_THREADS", "1")),
            help="worker processes for replicates/seeds "
            "(STOCHPROX_THREADS as fallback; determinism is unaffected)",
        )
        if name == "fit":
            p.add_argument("--resume", help="checkpoint.npz to continue from")
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        if args.config:
            cfg = read_config(args.config)
        else:
            cfg = {sec: dict(d) for sec, d in _SCHEMA.items()}
        if args.output:
            cfg["output"]["directory"] = args.output
        out_dir = Path(cfg["output"]["directory"])
        out_dir.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        code = COMMANDS[args.command](cfg, out_dir, args)
        log.info("%s finished in %.2f s", args.command, time.perf_counter() - t0)
        return code
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (ValueError, KeyError, OSError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (FloatingPointError, RuntimeError, ArithmeticError) as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
