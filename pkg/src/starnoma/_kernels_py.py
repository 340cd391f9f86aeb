"""Pure-Python/numpy implementations of the hot kernels.

These mirror ``_kernels.pyx`` function for function and are used when the
compiled extension is unavailable (or ``STARNOMA_PURE_PYTHON=1``).
"""

import numpy as np
from scipy.linalg import solve_triangular


def back_substitute_powers(gains, thresholds, sigma2):
    """Minimum SIC powers, last-decoded user first.

    ``gains[j, k]`` is user j's channel seen through user k's beamformer,
    users in decoding order.
    """
    gains = np.asarray(gains, dtype=float)
    thresholds = np.asarray(thresholds, dtype=float)
    k = len(thresholds)
    p = np.zeros(k)
    for i in range(k - 1, -1, -1):
        interference = 0.0
        for j in range(i + 1, k):
            interference += p[j] * gains[j, i]
        p[i] = thresholds[i] * (interference + sigma2) / gains[i, i]
    return p


def psum_min_curve(lams, pbar, gains, qos_bits, sigma2):
    """Minimum sum power at each time fraction in ``lams`` (inf if infeasible)."""
    lams = np.asarray(lams, dtype=float)
    pbar = np.asarray(pbar, dtype=float)
    gains = np.asarray(gains, dtype=float)
    qos_bits = np.asarray(qos_bits, dtype=float)
    k = len(pbar)
    out = np.empty(len(lams))
    interference = np.array([np.dot(pbar[i + 1:], gains[i + 1:, i]) for i in range(k)])
    own = pbar * np.diag(gains)
    for n, lam in enumerate(lams):
        worst = 0.0
        feasible = lam > 0
        if feasible:
            for i in range(k):
                with np.errstate(over="ignore"):  # inf threshold -> infeasible
                    r = np.expm1(qos_bits[i] / lam * np.log(2.0))
                d = own[i] / r - interference[i]
                if not d > 0:
                    feasible = False
                    break
                worst = max(worst, sigma2 / d)
        out[n] = worst if feasible else np.inf
    return out


def refine_phases(a, v, max_sweeps=50, tol=1e-6):
    """Coordinate ascent on ``||a @ v||^2`` over unit-modulus ``v``.

    Each element is set to the phase that aligns its column with the sum of
    all the others.  Returns ``(v, gain_history)``; the history holds the
    gain after every completed sweep, starting with the initial gain.
    """
    a = np.asarray(a, dtype=complex)
    v = np.array(v, dtype=complex)
    total = a @ v
    gain = float(np.real(np.vdot(total, total)))
    history = [gain]
    for _ in range(max_sweeps):
        for m in range(a.shape[1]):
            col = a[:, m]
            rest = total - col * v[m]
            inner = np.vdot(col, rest)  # col^H rest
            if inner != 0:
                v[m] = inner / abs(inner)
            total = rest + col * v[m]
        new_gain = float(np.real(np.vdot(total, total)))
        history.append(new_gain)
        if new_gain - gain <= tol * max(new_gain, 1e-300):
            break
        gain = new_gain
    return v, history


def min_congruence_eig(chol, d):
    """Smallest eigenvalue of ``L^{-1} D L^{-T}`` for lower-triangular ``L``."""
    tmp = solve_triangular(chol, d, lower=True, check_finite=False)
    tmp = solve_triangular(chol, tmp.T, lower=True, check_finite=False)
    return float(np.linalg.eigvalsh(0.5 * (tmp + tmp.T))[0])
