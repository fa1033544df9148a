"""Compare the compiled kernels with the numpy fallback.

Run ``python benchmarks/bench_kernels.py`` after building the extension.
Each kernel is timed on the stacks a 100-block scenario produces; the
last row times a full optimal-time solve in a subprocess per backend.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from l2game import _pykernels
from l2game.scenario import generate_scenario
from l2game.system import DEFAULT_QUADRATURE

try:
    from l2game import _ckernels
except ImportError:
    sys.exit("compiled extension not built; run `pip install -e . --no-build-isolation` first")

END_TO_END = """
import time
from l2game.control import solve_optimal_time, null_control
from l2game.scenario import generate_scenario
from l2game.system import propagate
sc = generate_scenario(100, seed=1)
t = time.perf_counter()
for _ in range({reps}):
    v = solve_optimal_time(sc.system, sc.initial_state, sc.theta).vartheta
    propagate(sc.system, sc.initial_state, null_control(sc.system, sc.initial_state, v), v)
print((time.perf_counter() - t) / {reps})
"""


def _best(fn, number, repeat):
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def kernel_cases(blocks: int, dim: int, tau: float):
    rng = np.random.default_rng(0)
    sc = generate_scenario(blocks, dim_range=(dim, dim), seed=0)
    a = np.ascontiguousarray(np.stack(sc.blocks))
    q = DEFAULT_QUADRATURE
    panels = q.panels_for(tau)
    h = tau / panels
    xi, wq = q.rule
    x0 = rng.standard_normal((blocks, dim))
    w = rng.standard_normal((blocks, panels, xi.size, dim))
    spd = _pykernels.gramian_stack(a, h, panels, xi, wq, 1.0)
    lower, _ = _pykernels.cholesky_stack(spd)
    return {
        "expm_stack": lambda m: m.expm_stack(a, np.full(blocks, tau)),
        "gramian_stack": lambda m: m.gramian_stack(a, h, panels, xi, wq, 1.0),
        "propagate_stack": lambda m: m.propagate_stack(a, x0, w, h, xi, wq),
        "exp_action_stack": lambda m: m.exp_action_stack(a, x0, h, panels, xi),
        "cholesky_stack": lambda m: m.cholesky_stack(spd),
        "cho_solve_stack": lambda m: m.cho_solve_stack(lower, x0),
    }


def end_to_end(pure: bool, reps: int) -> float:
    env = dict(os.environ, L2GAME_PURE_PYTHON="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", END_TO_END.format(reps=reps)], env=env,
                         capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--blocks", type=int, default=100)
    p.add_argument("--dim", type=int, default=4)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--number", type=int, default=10)
    args = p.parse_args(argv)

    print(f"{args.blocks} blocks of dim {args.dim}, tau={args.tau}, default quadrature")
    print(f"{'kernel':<18}{'cython [ms]':>14}{'python [ms]':>14}{'speedup':>10}")
    for name, fn in kernel_cases(args.blocks, args.dim, args.tau).items():
        tc = _best(lambda: fn(_ckernels), args.number, args.repeat)
        tp = _best(lambda: fn(_pykernels), args.number, args.repeat)
        print(f"{name:<18}{1e3 * tc:>14.3f}{1e3 * tp:>14.3f}{tp / tc:>10.1f}")
    tc, tp = end_to_end(False, 5), end_to_end(True, 5)
    print(f"{'solve+steer':<18}{1e3 * tc:>14.3f}{1e3 * tp:>14.3f}{tp / tc:>10.1f}")


if __name__ == "__main__":
    main()
