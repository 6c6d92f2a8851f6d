"""Self-contained gnuplot script emitters.

Scripts reference the CSVs written next to them, so figures can be
reproduced without any Python plotting dependency:
``gnuplot <script>.gp`` renders a PNG into the same directory.
"""

from __future__ import annotations

from pathlib import Path

_PRELUDE = """\
set datafile separator ','
set datafile commentschars '#'
set terminal pngcairo size 900,600
set grid
"""


def _write(path, body: str) -> None:
    Path(path).write_text(_PRELUDE + body)


def rate_script(path, csv_names: list, labels: list, out_png: str) -> None:
    """Log-log statistic-error decay, one curve per algorithm/schedule."""
    plots = ", ".join(
        f"'{name}' skip 1 using 1:2 with lines title '{label}'"
        for name, label in zip(csv_names, labels)
    )
    body = (
        f"set output '{out_png}'\n"
        "set logscale xy\n"
        "set xlabel 'iteration'\n"
        "set ylabel 'L2 error of statistic'\n"
        f"plot {plots}\n"
    )
    _write(path, body)


def component_script(path, trace_csv: str, component: int, out_png: str) -> None:
    """Path of one parameter coordinate against iteration (log x)."""
    body = (
        f"set output '{out_png}'\n"
        "set logscale x\n"
        "set xlabel 'iteration'\n"
        f"set ylabel 'theta[{component}]'\n"
        f"plot '{trace_csv}' skip 2 using ($1+1):{component + 2} "
        f"with lines title 'component {component}'\n"
    )
    _write(path, body)


def objective_script(path, csv_names: list, labels: list, out_png: str) -> None:
    """Penalized objective against iteration for several runs."""
    plots = ", ".join(
        f"'{name}' skip 2 using 1:'f_value' with lines title '{label}'"
        for name, label in zip(csv_names, labels)
    )
    body = (
        f"set output '{out_png}'\n"
        "set xlabel 'iteration'\n"
        "set ylabel 'penalized objective'\n"
        f"plot {plots}\n"
    )
    _write(path, body)


def support_frequency_script(path, csv_name: str, out_png: str) -> None:
    """Per-coordinate selection frequency across seeds (impulse plot)."""
    body = (
        f"set output '{out_png}'\n"
        "set xlabel 'coordinate'\n"
        "set ylabel 'selection frequency'\n"
        "set yrange [0:1.05]\n"
        f"plot '{csv_name}' skip 1 using 1:2 with impulses title 'frequency'\n"
    )
    _write(path, body)


def path_script(path, csv_name: str, theta_cols: list, out_png: str) -> None:
    """Regularization path: coefficients against lambda, EBIC pick marked."""
    plots = ", ".join(
        f"'{csv_name}' skip 1 using 1:{c} with lines notitle" for c in theta_cols
    )
    body = (
        f"set output '{out_png}'\n"
        "set logscale x\n"
        "set xlabel 'lambda'\n"
        "set ylabel 'coefficient'\n"
        f"stats '{csv_name}' skip 1 using ($4 == 1 ? $1 : 1/0) nooutput\n"
        "set arrow from STATS_min, graph 0 to STATS_min, graph 1 "
        "nohead dashtype 2 lc 'black'\n"
        f"plot {plots}\n"
    )
    _write(path, body)
