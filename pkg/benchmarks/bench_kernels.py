"""Compare the compiled and numpy kernel backends.

Run with ``python benchmarks/bench_kernels.py``.  Each kernel is timed on
inputs of the size it sees inside a default campaign, and the two
backends' outputs are checked to agree before timing.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from starnoma import _kernels_py

try:
    from starnoma import _kernels
except ImportError:  # pragma: no cover
    _kernels = None


def _cases(rng):
    k = 2
    gains = np.abs(rng.standard_normal((k, k))) + 0.1
    lams = np.linspace(0.05, 0.95, 200)
    a = rng.standard_normal((4, 30)) + 1j * rng.standard_normal((4, 30))
    n = 40
    x = rng.standard_normal((n, n))
    chol = np.linalg.cholesky(x @ x.T + n * np.eye(n))
    d = rng.standard_normal((n, n))
    d = d + d.T
    return {
        "back_substitute_powers": ((gains, np.array([0.3, 0.3]), 1e-12), 20000),
        "psum_min_curve (200-point grid)": ((lams, np.array([0.5, 0.5]), gains,
                                             np.array([0.2, 0.2]), 1e-12), 2000),
        "refine_phases (N_T=4, M=30)": ((a, np.ones(30, dtype=complex)), 500),
        "min_congruence_eig (n=40)": ((chol, d), 5000),
    }


_FUNCS = {
    "back_substitute_powers": "back_substitute_powers",
    "psum_min_curve (200-point grid)": "psum_min_curve",
    "refine_phases (N_T=4, M=30)": "refine_phases",
    "min_congruence_eig (n=40)": "min_congruence_eig",
}


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--scale", type=float, default=1.0, help="multiply repeat counts")
    parser.add_argument("--end-to-end", action="store_true",
                        help="also time one full P-AltOp solve under each backend")
    args = parser.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; nothing to compare")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':34s} {'python us':>10s} {'cython us':>10s} {'speedup':>8s}")
    for name, (inputs, reps) in _cases(rng).items():
        reps = max(1, int(reps * args.scale))
        fn_py = getattr(_kernels_py, _FUNCS[name])
        fn_cy = getattr(_kernels, _FUNCS[name])
        a, b = fn_py(*inputs), fn_cy(*inputs)
        a, b = (a[0], b[0]) if isinstance(a, tuple) else (a, b)
        assert np.allclose(a, b, rtol=1e-9, atol=1e-12), name
        t_py = min(timeit.repeat(lambda: fn_py(*inputs), number=reps, repeat=3)) / reps
        t_cy = min(timeit.repeat(lambda: fn_cy(*inputs), number=reps, repeat=3)) / reps
        print(f"{name:34s} {1e6 * t_py:10.2f} {1e6 * t_cy:10.2f} {t_py / t_cy:7.1f}x")
    if args.end_to_end:
        times = {b: _end_to_end(b == "python") for b in ("python", "cython")}
        print(f"{'p_altop (M=20, N_T=4)':34s} {1e6 * times['python']:10.0f} "
              f"{1e6 * times['cython']:10.0f} {times['python'] / times['cython']:7.1f}x")


_E2E = """
import time, numpy as np
from starnoma import BACKEND, SystemConfig, draw_channels, p_altop
cfg = SystemConfig(n_elements=20)
chan = draw_channels(cfg, np.random.default_rng(0))
t0 = time.perf_counter()
p_altop(chan, cfg, rng=np.random.default_rng(1))
print(BACKEND, time.perf_counter() - t0)
"""


def _end_to_end(pure: bool) -> float:
    env = dict(os.environ, STARNOMA_PURE_PYTHON="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", _E2E], env=env, check=True,
                         capture_output=True, text=True).stdout.split()
    assert out[0] == ("python" if pure else "cython"), out
    return float(out[1])


if __name__ == "__main__":
    main()
