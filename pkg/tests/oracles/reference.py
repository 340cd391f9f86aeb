"""Independent reference implementations used as test oracles.

Nothing here imports the package's algorithms; only plain numpy/mpmath
and brute force.  The SDP instance builder constructs problems whose
optimum is known from a KKT certificate chosen up front.
"""

from __future__ import annotations

import itertools

import numpy as np


def required_sinr(r_min, lam):
    return 2.0 ** (np.asarray(r_min, dtype=float) / lam) - 1.0


def bisection_psum(lam, pbar, gains, qos_bits, sigma2, *, rel_tol=1e-13):
    """Smallest ``P`` with ``p = P * pbar`` meeting every SINR target; inf if none.

    Feasibility of ``P`` is checked directly from the SINR definition.
    """
    pbar = np.asarray(pbar, float)
    gains = np.asarray(gains, float)
    r = required_sinr(qos_bits, lam)
    k = len(pbar)

    def feasible(total):
        p = total * pbar
        for i in range(k):
            interference = sum(p[j] * gains[j, i] for j in range(i + 1, k))
            if p[i] * gains[i, i] < r[i] * (interference + sigma2):
                return False
        return True

    hi = 1e-30
    while not feasible(hi):
        hi *= 2.0
        if hi > 1e30:
            return np.inf
    lo = 0.0
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi


def rejection_min_total(gains, thresholds, sigma2, n_samples, rng, box, low=None):
    """Smallest total of uniformly sampled power vectors meeting every SINR target.

    Returns ``(best_total, n_feasible)``; samples are drawn in ``[low, box]``
    (``low`` defaults to zero).
    """
    gains = np.asarray(gains, float)
    k = gains.shape[0]
    box = np.asarray(box, float)
    low = np.zeros(k) if low is None else np.asarray(low, float)
    p = low[None, :] + rng.uniform(0.0, 1.0, size=(n_samples, k)) * (box - low)[None, :]
    ok = np.ones(n_samples, dtype=bool)
    for i in range(k):
        interference = sum(p[:, j] * gains[j, i] for j in range(i + 1, k))
        ok &= p[:, i] * gains[i, i] >= thresholds[i] * (interference + sigma2)
    if not ok.any():
        return np.inf, 0
    return float(p[ok].sum(axis=1).min()), int(ok.sum())


def grid_best_gain(a, levels):
    """``max ||a @ v||^2`` over every unit-modulus ``v`` with phases on a uniform grid."""
    a = np.asarray(a, complex)
    phases = np.exp(2j * np.pi * np.arange(levels) / levels)
    best = 0.0
    for combo in itertools.product(range(levels), repeat=a.shape[1]):
        v = phases[list(combo)]
        h = a @ v
        best = max(best, float(np.real(np.vdot(h, h))))
    return best


def grid_best_gain_2(a, levels):
    """Vectorized :func:`grid_best_gain` for two-element surfaces."""
    a = np.asarray(a, complex)
    phases = np.exp(2j * np.pi * np.arange(levels) / levels)
    v1, v2 = np.meshgrid(phases, phases, indexing="ij")
    h = a[:, 0, None, None] * v1[None] + a[:, 1, None, None] * v2[None]
    return float(np.max(np.sum(np.abs(h) ** 2, axis=0)))


def toy_brute_force(f, g_r, g_t, r_min, sigma2, *, levels=64, lam_step=1e-3):
    """Global optimum of the single-user-per-side, single-antenna problem.

    Each side's power is ``sigma2 (2^(R/lam) - 1) / G`` with ``G`` the best
    cascaded gain over a phase grid; the split is searched on a uniform grid.
    """
    f = np.asarray(f, complex)
    g_best = {}
    for side, g in (("r", g_r), ("t", g_t)):
        a = f * np.asarray(g, complex)[None, :]
        g_best[side] = grid_best_gain_2(a, levels)
    lams = np.arange(lam_step, 1.0, lam_step)
    total = (sigma2 * (2.0 ** (r_min / lams) - 1.0) / g_best["r"]
             + sigma2 * (2.0 ** (r_min / (1.0 - lams)) - 1.0) / g_best["t"])
    i = int(np.argmin(total))
    return float(total[i]), float(lams[i])


def splitmix64_stream(state, n):
    """First ``n`` outputs of the reference SplitMix64 generator."""
    mask = (1 << 64) - 1
    out = []
    for _ in range(n):
        state = (state + 0x9E3779B97F4A7C15) & mask
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        out.append(z ^ (z >> 31))
    return out


def random_hermitian(rng, n):
    x = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return 0.5 * (x + x.conj().T)


def random_orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))[None, :]


def kkt_instance(rng, n, m, rank=None, n_lp=0):
    """Random SDP ``min <C,X> + c'x  s.t.  <A_i,X> + a_i'x = b_i`` with a known optimum.

    Picks a strictly complementary pair ``X* Z* = 0`` (and ``x*, z*`` for the
    LP part) plus a dual ``y``; then ``b = A(X*, x*)`` and ``C = A^T y + Z*``.
    Returns ``(blocks_coeffs, lp_coeffs, b, c_mat, c_lp, optimum, x_star)``.
    """
    rank = rank if rank is not None else max(1, n // 2)
    q = random_orthogonal(rng, n)
    lam_x = np.concatenate([rng.uniform(0.5, 2.0, rank), np.zeros(n - rank)])
    lam_z = np.concatenate([np.zeros(rank), rng.uniform(0.5, 2.0, n - rank)])
    x_star = (q * lam_x) @ q.T
    z_star = (q * lam_z) @ q.T
    xl = np.zeros(n_lp)
    zl = np.zeros(n_lp)
    if n_lp:
        basic = rng.uniform(size=n_lp) < 0.5
        xl[basic] = rng.uniform(0.5, 2.0, basic.sum())
        zl[~basic] = rng.uniform(0.5, 2.0, (~basic).sum())
    a_mats, a_lp = [], []
    for _ in range(m):
        s = rng.standard_normal((n, n))
        a_mats.append(0.5 * (s + s.T))
        a_lp.append(rng.standard_normal(n_lp))
    y = rng.standard_normal(m)
    b = np.array([np.sum(a * x_star) + al @ xl for a, al in zip(a_mats, a_lp)])
    c_mat = sum(yi * a for yi, a in zip(y, a_mats)) + z_star
    c_lp = sum(yi * al for yi, al in zip(y, a_lp)) + zl if n_lp else np.zeros(0)
    optimum = float(np.sum(c_mat * x_star) + c_lp @ xl)
    return a_mats, a_lp, b, c_mat, c_lp, optimum, x_star
