"""Compare the compiled and pure-Python kernels on the solver's hot sweeps.

Usage::

    python3 benchmarks/bench_kernels.py [--sizes 64 128 256] [--repeat 5] [--json out.json]

For every grid size the extremal sweep, the Lévy sweep and one short
solve are timed with both backends; the outputs are checked to agree.
"""

from __future__ import annotations

import argparse
import json
import timeit

import numpy as np

from hjlab import kernels
from hjlab.grid import GridFunction
from hjlab.jumps import LevyMeasureSpec
from hjlab.operators import LevyIntegralSpec, make_jump_map, monotone_extremal, monotone_levy
from hjlab.params import StructureParams
from hjlab.solver import EquationSpec, SolverConfig, solve_terminal

PR = StructureParams(delta=1.0, q=4.0)
LEVY = LevyIntegralSpec(LevyMeasureSpec(dim=1, index=1.0, intensity=0.5),
                        [[make_jump_map("linear", gamma=1.0), make_jump_map("sine", amp=0.5)]])


def _best(fn, repeat: int) -> float:
    number = 1
    while timeit.timeit(fn, number=number) < 0.05 and number < 10_000:
        number *= 4
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def bench_size(nx: int, repeat: int) -> list[dict]:
    rng = np.random.default_rng(nx)
    v = np.cumsum(rng.standard_normal(nx)) / np.sqrt(nx)
    v -= np.linspace(0, v[-1], nx)  # periodic
    dx = 1.0 / nx
    term = GridFunction(0.5 * np.cos(2 * np.pi * np.arange(nx) * dx), dx)
    cases = {
        "extremal_sweep": lambda b: monotone_extremal(v, dx, upper=True, backend=b)[0],
        "levy_sweep": lambda b: monotone_levy(LEVY, v, dx, backend=b),
        "solve(lower, nt=10)": lambda b: solve_terminal(EquationSpec("lower", PR), term,
                                                        SolverConfig(nt=10, backend=b)).values[0],
    }
    rows = []
    for name, fn in cases.items():
        ref = fn("python")
        out = fn("compiled")
        err = float(np.max(np.abs(np.asarray(ref) - np.asarray(out))))
        tp = _best(lambda: fn("python"), repeat)
        tc = _best(lambda: fn("compiled"), repeat)
        rows.append(dict(kernel=name, nx=nx, python_s=tp, compiled_s=tc, speedup=tp / tc, max_abs_diff=err))
    return rows


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[64, 128])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", default=None, help="also write the rows as JSON")
    args = ap.parse_args(argv)
    if kernels._compiled is None:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    rows = [r for nx in args.sizes for r in bench_size(nx, args.repeat)]
    print(f"{'kernel':22s} {'nx':>5s} {'python [s]':>12s} {'compiled [s]':>13s} {'speedup':>8s} {'max|diff|':>10s}")
    for r in rows:
        print(f"{r['kernel']:22s} {r['nx']:5d} {r['python_s']:12.3e} {r['compiled_s']:13.3e} "
              f"{r['speedup']:8.1f} {r['max_abs_diff']:10.1e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
