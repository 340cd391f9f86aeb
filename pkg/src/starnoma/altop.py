"""Penalty-based alternating optimization of the TS-mode surface.

One outer pass updates, in this order: the R/T time split, the surface
phases of each side, the receive beamformers of each side, and the
transmit powers.  The two beamforming steps solve lifted SDPs whose
rank-one constraint is handled by a linearized ``nuclear - spectral``
norm penalty whose weight grows geometrically until the relaxed matrix
is rank one.

All per-side arrays are kept in decoding order: position 0 is the user
decoded first (strongest), the last position sees no interference.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .model import (
    SIDES,
    ChannelError,
    ChannelRealization,
    SideState,
    Solution,
    SystemConfig,
    gain_matrix,
    initial_decoding_order,
    mrt_beamformers,
)
from .sdp import LinearFunctional, SdpOptions, SdpProblem, embed_hermitian, extract_complex, solve_sdp

__all__ = [
    "PenaltyOptions",
    "AltOpOptions",
    "InfeasibleError",
    "BeamStepResult",
    "TraceRecord",
    "qos_coefficient",
    "optimal_powers",
    "psum_min_of_lambda",
    "lambda_bounds",
    "time_slot_search",
    "star_beamforming_step",
    "receive_beamforming_step",
    "p_altop",
]


class InfeasibleError(RuntimeError):
    """The trial has no feasible point at some stage of the algorithm."""

    def __init__(self, message, stage="", side=None, iteration=None, bounds=None):
        super().__init__(message)
        self.stage = stage
        self.side = side
        self.iteration = iteration
        self.bounds = bounds


class MonotonicityError(RuntimeError):
    """A block update increased the objective beyond the allowed slack."""


@dataclass(frozen=True)
class PenaltyOptions:
    mu_init: float = 10.0
    delta: float = 0.5
    eps_violation: float = 1e-6
    eps_inner: float = 1e-5
    max_outer: int = 30
    max_inner: int = 30
    sdp: SdpOptions = field(default_factory=SdpOptions)

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.eps_violation <= 0 or self.mu_init <= 0:
            raise ValueError("eps_violation and mu_init must be positive")


@dataclass(frozen=True)
class AltOpOptions:
    outer_tol: float = 1e-3
    max_alt_iters: int = 50
    lambda_grid_points: int = 200
    lambda_guard: float = 1e-3
    # relative increase tolerated per block update before flagging a bug
    monotone_slack: float = 1e-6

    def __post_init__(self):
        if self.outer_tol <= 0:
            raise ValueError("outer_tol must be positive")
        if self.lambda_grid_points < 2:
            raise ValueError("lambda_grid_points must be >= 2")


@dataclass
class TraceRecord:
    iteration: int
    total_power: float
    p_sum_r: float
    p_sum_t: float
    lambda_r: float
    max_violation: float
    wall_ms: float


@dataclass
class BeamStepResult:
    relaxed: np.ndarray | list  # V (M x M) or list of W_k
    vector: np.ndarray  # v (M,) or w rows (K, N_T)
    p_sum: float
    violation: float
    converged: bool  # penalty loop met eps_violation
    accepted: bool  # False when the incoming point was kept
    sdp_solves: int


# ---------------------------------------------------------------------------
# closed-form pieces
# ---------------------------------------------------------------------------

def qos_coefficient(r_min, lambda_q):
    """SINR threshold ``2**(R/lambda) - 1`` that meets rate ``R`` in fraction ``lambda``."""
    lambda_q = np.asarray(lambda_q, dtype=float)
    if np.any(lambda_q <= 0):
        raise ValueError("time fraction must be positive")
    out = np.expm1(np.log(2.0) * np.asarray(r_min, dtype=float) / lambda_q)
    return float(out) if out.ndim == 0 else out


def optimal_powers(gains, qos_coeffs, sigma2: float) -> np.ndarray:
    """Minimum powers meeting every SINR threshold with equality.

    Users in decoding order; solved from the last-decoded user upward.
    """
    gains = np.asarray(gains, dtype=float)
    if np.any(np.diag(gains) <= 0):
        raise ChannelError("nonpositive own gain; the side cannot be served")
    return kernels.back_substitute_powers(gains, np.atleast_1d(qos_coeffs), sigma2)


def psum_min_of_lambda(lambda_q: float, pbar, gains, qos_bits, sigma2: float) -> float:
    """Smallest side sum power for fixed power split ``pbar``; ``inf`` if none."""
    return float(kernels.psum_min_curve(np.array([lambda_q]), pbar, gains, qos_bits, sigma2)[0])


def _lambda_min(pbar, gains, qos_bits) -> float:
    pbar = np.asarray(pbar, dtype=float)
    gains = np.asarray(gains, dtype=float)
    worst = 0.0
    for k in range(len(pbar)):
        interference = float(np.dot(pbar[k + 1:], gains[k + 1:, k]))
        own = pbar[k] * gains[k, k]
        if interference <= 0:
            if own <= 0:
                return np.inf
            continue  # interference-free: any positive fraction works
        rate = np.log2(1.0 + own / interference)
        if rate <= 0:
            return np.inf
        worst = max(worst, qos_bits[k] / rate)
    return worst


def lambda_bounds(pbar: dict, gains: dict, qos: dict) -> tuple[float, float]:
    """Open interval of R-period fractions that keep both sides feasible."""
    lo = _lambda_min(pbar["r"], gains["r"], qos["r"])
    hi = 1.0 - _lambda_min(pbar["t"], gains["t"], qos["t"])
    return lo, hi


def time_slot_search(pbar: dict, gains: dict, qos: dict, sigma2: float,
                     opts: AltOpOptions | None = None, current: float | None = None):
    """Grid search of the R-period fraction.

    The grid spans ``[lambda_min + guard, lambda_max - guard]``; ties go to
    the smaller fraction.  Returns ``(lambda_r, p_sum_r, p_sum_t)``.
    ``current``, when given, is kept unless a grid point is strictly
    better, so the update never increases the objective.
    """
    opts = opts or AltOpOptions()
    lo, hi = lambda_bounds(pbar, gains, qos)
    # both ends are strict: at either bound one side's power diverges
    start, stop = max(lo, 0.0) + opts.lambda_guard, min(hi, 1.0) - opts.lambda_guard
    if not start < stop:
        raise InfeasibleError(
            f"empty time-split interval ({lo:.4g}, {hi:.4g})", stage="time_slot", bounds=(lo, hi))
    grid = np.linspace(start, stop, opts.lambda_grid_points)
    pr = kernels.psum_min_curve(grid, pbar["r"], gains["r"], qos["r"], sigma2)
    pt = kernels.psum_min_curve(1.0 - grid, pbar["t"], gains["t"], qos["t"], sigma2)
    total = pr + pt
    best = int(np.argmin(total))
    if not np.isfinite(total[best]):
        raise InfeasibleError("no feasible grid point", stage="time_slot", bounds=(lo, hi))
    lam, p_r, p_t = float(grid[best]), float(pr[best]), float(pt[best])
    if current is not None and 0 < current < 1:
        cr = psum_min_of_lambda(current, pbar["r"], gains["r"], qos["r"], sigma2)
        ct = psum_min_of_lambda(1.0 - current, pbar["t"], gains["t"], qos["t"], sigma2)
        if cr + ct <= p_r + p_t:
            return float(current), cr, ct
    return lam, p_r, p_t


# ---------------------------------------------------------------------------
# penalized SDP steps
# ---------------------------------------------------------------------------

_LMI_OFFDIAG = np.array([[0.0, 0.5], [0.5, 0.0]])
_LMI_U = np.array([[0.0, 0.0], [0.0, 1.0]])
_LMI_S = np.array([[1.0, 0.0], [0.0, 0.0]])


def _top_eigvec(mat: np.ndarray) -> tuple[float, np.ndarray]:
    vals, vecs = np.linalg.eigh(mat)
    return float(vals[-1]), vecs[:, -1]


def _rank_gap(mat: np.ndarray) -> float:
    vals = np.linalg.eigvalsh(mat)
    return float(np.sum(np.abs(vals)) - vals[-1])


def _ordering_ok(gains: np.ndarray, rtol: float = 1e-6) -> bool:
    own = np.diag(gains)
    return bool(np.all(own[:-1] >= own[1:] * (1.0 - rtol)))


def _side_power(gains, pbar, lam, qos_bits, sigma2) -> float:
    if not _ordering_ok(gains):
        return np.inf
    return psum_min_of_lambda(lam, pbar, gains, qos_bits, sigma2)


def _solve_checked(problem: SdpProblem, opts: PenaltyOptions, stage: str):
    sol = solve_sdp(problem, opts.sdp)
    if sol.status == "infeasible":
        raise InfeasibleError(f"{stage}: SDP subproblem infeasible", stage=stage)
    if sol.status != "optimal" and not (sol.primal_residual < 1e-6 and sol.relative_gap < 1e-4):
        raise InfeasibleError(f"{stage}: SDP solver ended with status {sol.status}", stage=stage)
    return sol


def _penalty_loop(build, init_mats, opts: PenaltyOptions, stage: str):
    """Weak-to-strong penalty schedule around a linearized rank penalty.

    ``build(tops, weight)`` returns the SDP for linearization directions
    ``tops`` (one unit vector per lifted matrix) and penalty weight; the
    returned callable maps an SDP solution to the list of complex matrices.
    """
    mats = [np.array(m) for m in init_mats]
    mu = opts.mu_init
    solves = 0
    violation = sum(_rank_gap(m) for m in mats)
    converged = False
    for _ in range(opts.max_outer):
        prev = None
        for _ in range(opts.max_inner):
            tops = [_top_eigvec(m)[1] for m in mats]
            problem, unpack = build(tops, 1.0 / mu)
            sol = _solve_checked(problem, opts, stage)
            solves += 1
            mats = unpack(sol)
            obj = sol.primal_objective
            if prev is not None and abs(prev - obj) <= opts.eps_inner * max(1.0, abs(obj)):
                break
            prev = obj
        violation = sum(_rank_gap(m) for m in mats)
        if violation <= opts.eps_violation:
            converged = True
            break
        mu *= opts.delta
    return mats, violation, converged, solves


def _unit_modulus(vec: np.ndarray) -> np.ndarray:
    mag = np.abs(vec)
    out = np.where(mag > 0, vec / np.where(mag > 0, mag, 1.0), 1.0)
    return out * np.exp(-1j * np.angle(out[0]))


def _phase_ref(vec: np.ndarray) -> np.ndarray:
    if abs(vec[0]) > 0:
        vec = vec * np.exp(-1j * np.angle(vec[0]))
    return vec


def star_beamforming_step(chan: ChannelRealization, side: str, v_init: np.ndarray,
                          w: np.ndarray, pbar, lam: float, qos_bits, sigma2: float,
                          opts: PenaltyOptions | None = None) -> BeamStepResult:
    """Update the surface phases of ``side`` with everything else fixed.

    ``chan`` and the per-user arrays must already be in decoding order.
    The returned sum power never exceeds the incoming one: if the extracted
    rank-one phases are worse, the incoming phases are returned with
    ``accepted=False``.
    """
    opts = opts or PenaltyOptions()
    pbar = np.asarray(pbar, dtype=float)
    qos_bits = np.asarray(qos_bits, dtype=float)
    v_init = np.asarray(v_init, dtype=complex)
    m_el = len(v_init)
    k_users = len(pbar)
    r = np.atleast_1d(qos_coefficient(qos_bits, lam))

    gains_in = gain_matrix(chan, side, v_init, w)
    p_in = _side_power(gains_in, pbar, lam, qos_bits, sigma2)
    if not np.isfinite(p_in):
        raise InfeasibleError("incoming point infeasible", stage="star_beamforming", side=side)

    # C[j][k] = b b^H with b = A_j^H w_k, so that H[j, k] = Tr(V C[j][k])
    a = chan.a_matrices(side)
    b = [[a[j].conj().T @ w[kk] for kk in range(k_users)] for j in range(k_users)]
    scale = p_in / sigma2
    qos_rows = []
    for kk in range(k_users):
        mat = pbar[kk] * np.outer(b[kk][kk], b[kk][kk].conj())
        for j in range(kk + 1, k_users):
            mat = mat - r[kk] * pbar[j] * np.outer(b[j][kk], b[j][kk].conj())
        qos_rows.append(0.5 * embed_hermitian(mat * scale / r[kk], tol=1e-8))
    order_rows = []
    for kk in range(k_users - 1):
        mat = (np.outer(b[kk][kk], b[kk][kk].conj())
               - np.outer(b[kk + 1][kk + 1], b[kk + 1][kk + 1].conj()))
        order_rows.append(0.5 * embed_hermitian(mat * scale, tol=1e-8))
    diag_rows = []
    for mm in range(m_el):
        e = np.zeros((m_el, m_el))
        e[mm, mm] = 1.0
        diag_rows.append(0.5 * embed_hermitian(e))

    eq = [(LinearFunctional({0: d}), 1.0) for d in diag_rows]
    eq.append((LinearFunctional({1: _LMI_OFFDIAG}), 1.0))
    ineq = [(LinearFunctional({0: q, 1: -_LMI_U}), 0.0) for q in qos_rows]
    ineq += [(LinearFunctional({0: o}), 0.0) for o in order_rows]

    def build(tops, weight):
        e = tops[0]
        pen = 0.5 * embed_hermitian(np.eye(m_el) - np.outer(e, e.conj())) * (weight / m_el)
        problem = SdpProblem([2 * m_el, 2], 0, LinearFunctional({0: pen, 1: _LMI_S}), eq, ineq,
                             hermitian_blocks=(0,))
        return problem, lambda sol: [extract_complex(sol.blocks[0])]

    v0 = np.outer(v_init, v_init.conj())
    mats, violation, converged, solves = _penalty_loop(build, [v0], opts, "star_beamforming")
    big_v = mats[0]
    v_new = _unit_modulus(_top_eigvec(big_v)[1])
    p_new = _side_power(gain_matrix(chan, side, v_new, w), pbar, lam, qos_bits, sigma2)
    if p_new <= p_in:
        return BeamStepResult(big_v, v_new, p_new, violation, converged, True, solves)
    return BeamStepResult(v0, v_init, p_in, violation, converged, False, solves)


def receive_beamforming_step(chan: ChannelRealization, side: str, v: np.ndarray,
                             w_init: np.ndarray, pbar, lam: float, qos_bits, sigma2: float,
                             opts: PenaltyOptions | None = None) -> BeamStepResult:
    """Update the receive beamformers of ``side``; same contract as the surface step."""
    opts = opts or PenaltyOptions()
    pbar = np.asarray(pbar, dtype=float)
    qos_bits = np.asarray(qos_bits, dtype=float)
    w_init = np.asarray(w_init, dtype=complex)
    k_users, n_ant = w_init.shape
    r = np.atleast_1d(qos_coefficient(qos_bits, lam))

    gains_in = gain_matrix(chan, side, v, w_init)
    p_in = _side_power(gains_in, pbar, lam, qos_bits, sigma2)
    if not np.isfinite(p_in):
        raise InfeasibleError("incoming point infeasible", stage="receive_beamforming", side=side)

    h = chan.combined(side, v)  # B_j = h_j h_j^H
    outer = [np.outer(h[j], h[j].conj()) for j in range(k_users)]
    scale = p_in / sigma2
    lmi = k_users
    ineq = []
    for kk in range(k_users):
        mat = pbar[kk] * outer[kk]
        for j in range(kk + 1, k_users):
            mat = mat - r[kk] * pbar[j] * outer[j]
        coef = 0.5 * embed_hermitian(mat * scale / r[kk], tol=1e-8)
        ineq.append((LinearFunctional({kk: coef, lmi: -_LMI_U}), 0.0))
    for kk in range(k_users - 1):
        ineq.append((LinearFunctional({
            kk: 0.5 * embed_hermitian(outer[kk] * scale, tol=1e-8),
            kk + 1: -0.5 * embed_hermitian(outer[kk + 1] * scale, tol=1e-8),
        }), 0.0))
    trace_row = 0.5 * embed_hermitian(np.eye(n_ant))
    eq = [(LinearFunctional({kk: trace_row}), 1.0) for kk in range(k_users)]
    eq.append((LinearFunctional({lmi: _LMI_OFFDIAG}), 1.0))

    def build(tops, weight):
        blocks = {lmi: _LMI_S}
        for kk, e in enumerate(tops):
            blocks[kk] = 0.5 * embed_hermitian(np.eye(n_ant) - np.outer(e, e.conj())) * (
                weight / k_users)
        problem = SdpProblem([2 * n_ant] * k_users + [2], 0, LinearFunctional(blocks), eq, ineq,
                             hermitian_blocks=tuple(range(k_users)))
        return problem, lambda sol: [extract_complex(sol.blocks[kk]) for kk in range(k_users)]

    w0 = [np.outer(wk, wk.conj()) for wk in w_init]
    mats, violation, converged, solves = _penalty_loop(build, w0, opts, "receive_beamforming")
    w_new = np.array([_phase_ref(_top_eigvec(mk)[1]) for mk in mats])
    w_new /= np.linalg.norm(w_new, axis=1, keepdims=True)
    p_new = _side_power(gain_matrix(chan, side, v, w_new), pbar, lam, qos_bits, sigma2)
    if p_new <= p_in:
        return BeamStepResult(mats, w_new, p_new, violation, converged, True, solves)
    return BeamStepResult(w0, w_init, p_in, violation, converged, False, solves)


# ---------------------------------------------------------------------------
# outer loop
# ---------------------------------------------------------------------------

@dataclass
class _SideWork:
    chan_order: np.ndarray
    v: np.ndarray
    big_v: np.ndarray
    w: np.ndarray
    big_w: list
    pbar: np.ndarray
    qos: np.ndarray


def _initial_side(chan: ChannelRealization, side: str, cfg: SystemConfig, v: np.ndarray):
    h = chan.combined(side, v)
    w = mrt_beamformers(h)
    own = np.sum(np.abs(h) ** 2, axis=1)
    order = initial_decoding_order(own)
    k = len(order)
    return _SideWork(order, v, np.outer(v, v.conj()), w[order],
                     [np.outer(x, x.conj()) for x in w[order]], np.full(k, 1.0 / k),
                     cfg.qos(side)[order])


def _side_from_solution(st: SideState, cfg: SystemConfig, side: str) -> _SideWork:
    return _SideWork(np.asarray(st.order), np.asarray(st.v), np.asarray(st.big_v),
                     np.asarray(st.w), [np.asarray(x) for x in st.big_w],
                     np.asarray(st.normalized_powers), cfg.qos(side)[np.asarray(st.order)])


def p_altop(chan: ChannelRealization, cfg: SystemConfig,
            penalty_opts: PenaltyOptions | None = None,
            alt_opts: AltOpOptions | None = None, *,
            rng: np.random.Generator | None = None,
            initial: Solution | None = None,
            fixed_lambda: float | None = None,
            fixed_phases: dict | None = None) -> tuple[Solution, list[TraceRecord]]:
    """Minimize total transmit power by alternating over all blocks.

    ``fixed_lambda`` pins the R-period fraction and ``fixed_phases``
    (``{side: v}``) pins the surface phases; both are used by the
    restricted benchmark schemes.  Without ``initial``, phases start at
    random values drawn from ``rng`` (seeded from ``cfg.rng_seed`` when
    omitted), receive beamformers at MRT and power splits uniform.
    """
    penalty_opts = penalty_opts or PenaltyOptions()
    alt_opts = alt_opts or AltOpOptions()
    sigma2 = cfg.noise_power
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)

    if initial is not None:
        work = {q: _side_from_solution(initial.side(q), cfg, q) for q in SIDES}
        lam = initial.lambda_r if fixed_lambda is None else fixed_lambda
    else:
        work = {}
        for q in SIDES:
            if fixed_phases is not None:
                v = np.asarray(fixed_phases[q], dtype=complex)
            else:
                v = _unit_modulus(np.exp(2j * np.pi * rng.uniform(size=cfg.n_elements)))
            work[q] = _initial_side(chan, q, cfg, v)
        lam = fixed_lambda
    chans = {q: chan.permuted(q, work[q].chan_order) for q in SIDES}

    def gains(q):
        return gain_matrix(chans[q], q, work[q].v, work[q].w)

    def lam_of(q, lam_r):
        return lam_r if q == "r" else 1.0 - lam_r

    def side_power(q, lam_r):
        return _side_power(gains(q), work[q].pbar, lam_of(q, lam_r), work[q].qos, sigma2)

    if lam is None:
        lam, _, _ = time_slot_search({q: work[q].pbar for q in SIDES},
                                     {q: gains(q) for q in SIDES},
                                     {q: work[q].qos for q in SIDES}, sigma2, alt_opts)
    p_sum = {q: side_power(q, lam) for q in SIDES}
    if not all(np.isfinite(p) for p in p_sum.values()):
        raise InfeasibleError(f"initial point infeasible at lambda_r={lam:.4g}", stage="init")
    objective = p_sum["r"] + p_sum["t"]
    powers = {q: p_sum[q] * work[q].pbar for q in SIDES}

    def check(new, old, stage, it):
        if new > old * (1.0 + alt_opts.monotone_slack):
            raise MonotonicityError(
                f"{stage} raised the objective from {old:.6e} to {new:.6e} at iteration {it}")

    trace: list[TraceRecord] = []
    converged = False
    it = 0
    for it in range(1, alt_opts.max_alt_iters + 1):
        t0 = time.perf_counter()
        start_obj = objective
        violation = 0.0

        if fixed_lambda is None:
            lam, pr, pt = time_slot_search({q: work[q].pbar for q in SIDES},
                                           {q: gains(q) for q in SIDES},
                                           {q: work[q].qos for q in SIDES}, sigma2, alt_opts,
                                           current=lam)
            p_sum = {"r": pr, "t": pt}
            check(pr + pt, objective, "time-slot update", it)
            objective = pr + pt

        if fixed_phases is None:
            for q in SIDES:
                res = star_beamforming_step(chans[q], q, work[q].v, work[q].w, work[q].pbar,
                                            lam_of(q, lam), work[q].qos, sigma2, penalty_opts)
                work[q].v, work[q].big_v = res.vector, res.relaxed
                violation = max(violation, res.violation if res.accepted else 0.0)
                p_sum[q] = res.p_sum
            check(sum(p_sum.values()), objective, "surface update", it)
            objective = sum(p_sum.values())

        for q in SIDES:
            res = receive_beamforming_step(chans[q], q, work[q].v, work[q].w, work[q].pbar,
                                           lam_of(q, lam), work[q].qos, sigma2, penalty_opts)
            work[q].w, work[q].big_w = res.vector, res.relaxed
            violation = max(violation, res.violation if res.accepted else 0.0)
            p_sum[q] = res.p_sum
        check(sum(p_sum.values()), objective, "receive update", it)
        objective = sum(p_sum.values())

        for q in SIDES:
            g = gains(q)
            powers[q] = optimal_powers(g, qos_coefficient(work[q].qos, lam_of(q, lam)), sigma2)
            p_sum[q] = float(np.sum(powers[q]))
            work[q].pbar = powers[q] / p_sum[q]
        check(sum(p_sum.values()), objective, "power update", it)
        objective = sum(p_sum.values())

        trace.append(TraceRecord(it, objective, p_sum["r"], p_sum["t"], lam, violation,
                                 1e3 * (time.perf_counter() - t0)))
        if abs(start_obj - objective) <= alt_opts.outer_tol * objective:
            converged = True
            break

    sides = {
        q: SideState(
            v=work[q].v, big_v=work[q].big_v, w=work[q].w,
            big_w=np.array(work[q].big_w), powers=powers[q],
            normalized_powers=powers[q] / np.sum(powers[q]), p_sum=float(np.sum(powers[q])),
            order=work[q].chan_order,
        )
        for q in SIDES
    }
    return Solution(sides["r"], sides["t"], float(lam), iterations=it, converged=converged), trace
