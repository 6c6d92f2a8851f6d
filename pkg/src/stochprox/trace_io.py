"""Trace and checkpoint serialization.

Trace CSVs are versioned and contain no timing columns, so rerunning a
command with the same config and seed reproduces them byte for byte at
any thread count.  Checkpoints are npz archives capturing everything a
run needs to continue bit-identically (the random streams are counter
based, so no generator state is stored).
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np

from .engine import RunTrace
from .mcmc import McmcState
from .schedules import AdaptiveGammaState

TRACE_SCHEMA = "stochprox.trace.v1"
CHECKPOINT_SCHEMA = "stochprox.checkpoint.v1"


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float) and np.isnan(x):
        return ""
    return repr(float(x))


def save_trace_csv(trace: RunTrace, path) -> None:
    """One row per iterate; step columns on row n describe the update
    that produced row n+1 (empty on the final row)."""
    path = Path(path)
    d = trace.theta[0].shape[0]
    cols = (
        ["iteration"]
        + [f"theta_{i}" for i in range(d)]
        + ["f_value", "support_size", "stat_error", "gamma", "delta", "m",
           "accept_rate"]
    )
    n_steps = len(trace.gamma)
    with open(path, "w") as fh:
        fh.write(f"# schema={TRACE_SCHEMA}\n")
        fh.write(",".join(cols) + "\n")
        for i, th in enumerate(trace.theta):
            step = (
                [
                    _fmt(trace.stat_error[i]),
                    _fmt(trace.gamma[i]),
                    _fmt(trace.delta[i]),
                    str(trace.m[i]),
                    _fmt(trace.accept_rate[i]),
                ]
                if i < n_steps
                else ["", "", "", "", ""]
            )
            row = (
                [str(i)]
                + [repr(float(v)) for v in th]
                + [_fmt(trace.f_value[i]), str(trace.support_size[i])]
                + step
            )
            fh.write(",".join(row) + "\n")


def load_trace_csv(path) -> dict:
    """Columns of a trace CSV as arrays (None-encoded floats become nan)."""
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip()
        if header != f"# schema={TRACE_SCHEMA}":
            raise ValueError(f"unsupported trace schema line {header!r}")
        names = fh.readline().strip().split(",")
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    out = {}
    for j, name in enumerate(names):
        vals = [r[j] for r in rows]
        if name in ("iteration", "support_size", "m"):
            out[name] = np.array(
                [int(v) if v else -1 for v in vals], dtype=int
            )
        else:
            out[name] = np.array(
                [float(v) if v else np.nan for v in vals], dtype=float
            )
    return out


def _encode_optional(values, length) -> tuple[np.ndarray, np.ndarray]:
    arr = np.full(length, np.nan)
    mask = np.zeros(length, dtype=bool)
    for i, v in enumerate(values):
        if v is not None:
            arr[i] = float(v)
            mask[i] = True
    return arr, mask


def save_checkpoint(snapshot: dict, path) -> None:
    trace: RunTrace = snapshot["trace"]
    n = len(trace.theta)
    n_steps = len(trace.gamma)
    f_arr, f_mask = _encode_optional(trace.f_value, n)
    e_arr, e_mask = _encode_optional(trace.stat_error, n_steps)
    a_arr, a_mask = _encode_optional(trace.accept_rate, n_steps)
    payload = {
        "schema": np.array(CHECKPOINT_SCHEMA),
        "iteration": np.array(snapshot["iteration"], dtype=np.int64),
        "theta": snapshot["theta"],
        "stat": snapshot["stat"],
        "small_steps": np.array(snapshot.get("small_steps", 0), dtype=np.int64),
        "trace_theta": np.stack(trace.theta),
        "trace_f": f_arr,
        "trace_f_mask": f_mask,
        "trace_support": np.array(trace.support_size, dtype=np.int64),
        "trace_stat_error": e_arr,
        "trace_stat_error_mask": e_mask,
        "trace_gamma": np.array(trace.gamma, dtype=float),
        "trace_delta": np.array(trace.delta, dtype=float),
        "trace_m": np.array(trace.m, dtype=np.int64),
        "trace_accept": a_arr,
        "trace_accept_mask": a_mask,
        "trace_wall": np.array(trace.wall_time, dtype=float),
        "meta_json": np.array(
            json.dumps(
                {
                    k: v
                    for k, v in trace.meta.items()
                    if isinstance(v, (str, int, float, bool, type(None)))
                },
                sort_keys=True,
            )
        ),
    }
    gs: AdaptiveGammaState = snapshot["gamma_state"]
    payload["gamma_state_iter"] = np.array(gs.iteration, dtype=np.int64)
    payload["gamma_state_h"] = (
        gs.hessian_diag if gs.hessian_diag is not None else np.array([])
    )
    mc: Optional[McmcState] = snapshot.get("mcmc")
    payload["has_mcmc"] = np.array(mc is not None)
    if mc is not None:
        payload.update(
            mcmc_z=mc.z,
            mcmc_rw_sd=mc.rw_sd,
            mcmc_window_accepts=mc.window_accepts,
            mcmc_counters=np.array(
                [mc.window_sweeps, mc.windows_done, mc.total_sweeps, mc.n_bad],
                dtype=np.int64,
            ),
            mcmc_accepts_indep=mc.accepts_indep,
            mcmc_accepts_rw=mc.accepts_rw,
            mcmc_params=np.array([mc.target_rate, float(mc.window), float(mc.frozen)]),
        )
    np.savez(path, **payload)


def load_checkpoint(path) -> dict:
    with np.load(path, allow_pickle=False) as data:
        if str(data["schema"]) != CHECKPOINT_SCHEMA:
            raise ValueError(f"unsupported checkpoint schema {data['schema']!r}")
        n = data["trace_theta"].shape[0]
        n_steps = data["trace_gamma"].shape[0]
        trace = RunTrace(
            theta=[data["trace_theta"][i].copy() for i in range(n)],
            f_value=[
                float(data["trace_f"][i]) if data["trace_f_mask"][i] else None
                for i in range(n)
            ],
            support_size=[int(v) for v in data["trace_support"]],
            stat_error=[
                float(data["trace_stat_error"][i])
                if data["trace_stat_error_mask"][i]
                else None
                for i in range(n_steps)
            ],
            gamma=[float(v) for v in data["trace_gamma"]],
            delta=[float(v) for v in data["trace_delta"]],
            m=[int(v) for v in data["trace_m"]],
            accept_rate=[
                float(data["trace_accept"][i])
                if data["trace_accept_mask"][i]
                else None
                for i in range(n_steps)
            ],
            wall_time=[float(v) for v in data["trace_wall"]],
            meta=json.loads(str(data["meta_json"])),
        )
        h = data["gamma_state_h"]
        gamma_state = AdaptiveGammaState(
            hessian_diag=h.copy() if h.size else None,
            iteration=int(data["gamma_state_iter"]),
        )
        mcmc = None
        if bool(data["has_mcmc"]):
            counters = data["mcmc_counters"]
            params = data["mcmc_params"]
            mcmc = McmcState(
                z=data["mcmc_z"].copy(),
                rw_sd=data["mcmc_rw_sd"].copy(),
                window_accepts=data["mcmc_window_accepts"].copy(),
                window_sweeps=int(counters[0]),
                windows_done=int(counters[1]),
                accepts_indep=data["mcmc_accepts_indep"].copy(),
                accepts_rw=data["mcmc_accepts_rw"].copy(),
                total_sweeps=int(counters[2]),
                n_bad=int(counters[3]),
                target_rate=float(params[0]),
                window=int(params[1]),
                frozen=bool(params[2]),
            )
        return {
            "iteration": int(data["iteration"]),
            "theta": data["theta"].copy(),
            "stat": data["stat"].copy(),
            "gamma_state": gamma_state,
            "small_steps": int(data["small_steps"]),
            "trace": trace,
            "mcmc": mcmc,
        }
