"""Timing comparison of the kernel backends.

Exercises the three hot kernels (concentration curves, Metropolis
sweeps, coordinate descent) on realistic shapes for every importable
backend.  Run via ``stochprox benchmark`` or ``python -m
stochprox.benchmark``.
"""

from __future__ import annotations

import time

import numpy as np

from ._kernels import backends
from . import pk


def _time(fn, min_time: float = 0.3) -> float:
    """Calls per second, measured over at least ``min_time`` seconds."""
    fn()  # warm up
    calls = 0
    t0 = time.perf_counter()
    while True:
        fn()
        calls += 1
        dt = time.perf_counter() - t0
        if dt >= min_time:
            return calls / dt


def run_benchmark() -> list:
    rows = []
    ds = pk.simulate_pk(20, 12, 10, seed=3)
    model = pk.PkModel(ds)
    theta = model.default_init()
    _, sig, sres = model.split(theta)
    pm = model.prior_mean(theta)
    z0 = model.init_latent(theta)
    rng = np.random.default_rng(0)
    zbatch = z0[rng.integers(0, 20, size=500)] + 0.1 * rng.standard_normal((500, 5))

    d = 105
    M = rng.standard_normal((200, d))
    A = M.T @ M / 200 + 0.05 * np.eye(d)
    b = rng.standard_normal(d)
    thr = np.full(d, 0.1)
    thr[::21] = 0.0
    den = np.zeros(d)
    lo = np.full(d, -np.inf)
    hi = np.full(d, np.inf)

    for name, impl in backends().items():
        rows.append(
            (
                "pk_conc_500x12",
                name,
                _time(lambda: impl.pk_conc_batch(zbatch, ds.times[0], ds.dose)),
            )
        )

        def sweep(impl=impl):
            z = z0.copy()
            pred, _ = impl.pk_conc_batch(z, ds.times, ds.dose)
            sse = np.sum((ds.Y - pred) ** 2, axis=1)
            gen = np.random.default_rng(1)
            impl.pk_mh_sweep(
                z, np.full((20, 5), 0.3), pm, np.ascontiguousarray(sig),
                ds.Y, ds.times, ds.dose, float(sres),
                gen.standard_normal((20, 5)), gen.random(20),
                gen.standard_normal((20, 5)), gen.random((20, 5)),
                pred, sse,
                np.zeros(20, dtype=np.int64), np.zeros((20, 5), dtype=np.int64),
            )

        rows.append(("mh_sweep_20x5", name, _time(sweep)))
        rows.append(
            (
                "quad_cd_105",
                name,
                _time(
                    lambda impl=impl: impl.quad_cd_core(
                        A, b, np.zeros(d), thr, den, lo, hi, False, 1e-8, 10000
                    )
                ),
            )
        )
    return rows


if __name__ == "__main__":
    for kernel, backend, rate in run_benchmark():
        print(f"{kernel:16s} {backend:10s} {rate:12.1f} calls/s")
