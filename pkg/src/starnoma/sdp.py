"""Dense primal-dual interior-point solver for small linear SDPs.

The canonical problem is

    minimize    sum_b <C_b, X_b> + c . x
    subject to  sum_b <A_ib, X_b> + a_i . x  (= | >=)  b_i
                X_b symmetric PSD,  x >= 0

Inequality rows get a nonnegative slack scalar each, so the iteration
itself only ever sees equality constraints.  Search directions use
Nesterov-Todd scaling with a Mehrotra predictor-corrector; the Schur
complement is formed densely and factored with Cholesky.

Complex Hermitian problems are solved over the real embedding
``[[Re, -Im], [Im, Re]]`` (see :func:`embed_hermitian`).  Note that
``Tr(P Q) == 0.5 * Tr(embed(P) embed(Q))`` for Hermitian ``P, Q``, so
callers assembling complex constraints must carry the factor 1/2.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg as sla

from . import kernels

__all__ = [
    "LinearFunctional",
    "SdpProblem",
    "SdpOptions",
    "SdpSolution",
    "SdpError",
    "solve_sdp",
    "embed_hermitian",
    "extract_complex",
    "dump_problem",
    "load_problem",
]

MAX_BLOCK_DIM = 128
_STALL_LIMIT = 5  # iterations without a better merit before giving up


class SdpError(RuntimeError):
    """Malformed problem or a KKT system that stays singular."""


@dataclass
class LinearFunctional:
    """Sparse-by-block linear functional ``sum_b <M_b, X_b> + sum_s c_s x_s``.

    ``blocks`` maps a block index to its (symmetric) coefficient matrix,
    ``scalars`` maps a scalar index to its coefficient.
    """

    blocks: dict[int, np.ndarray] = field(default_factory=dict)
    scalars: dict[int, float] = field(default_factory=dict)


@dataclass
class SdpProblem:
    block_dims: list[int]
    n_scalars: int
    objective: LinearFunctional
    eq_constraints: list[tuple[LinearFunctional, float]] = field(default_factory=list)
    # each row reads  functional(X, x) >= rhs
    ineq_constraints: list[tuple[LinearFunctional, float]] = field(default_factory=list)
    # indices of blocks that embed a complex Hermitian variable; iterates on
    # these are projected onto the embedding structure every step
    hermitian_blocks: tuple[int, ...] = ()

    def validate(self) -> None:
        if not self.block_dims and self.n_scalars == 0:
            raise SdpError("problem has no variables")
        for n in self.block_dims:
            if not 1 <= n <= MAX_BLOCK_DIM:
                raise SdpError(f"block dimension {n} outside [1, {MAX_BLOCK_DIM}]")
        if self.n_scalars < 0:
            raise SdpError("negative scalar count")
        rows = [(self.objective, 0.0)] + self.eq_constraints + self.ineq_constraints
        for func, rhs in rows:
            if not np.isfinite(rhs):
                raise SdpError("non-finite right-hand side")
            for b, mat in func.blocks.items():
                if not 0 <= b < len(self.block_dims):
                    raise SdpError(f"block index {b} out of range")
                n = self.block_dims[b]
                mat = np.asarray(mat)
                if mat.shape != (n, n):
                    raise SdpError(f"block {b}: coefficient shape {mat.shape}, expected {(n, n)}")
                if np.iscomplexobj(mat):
                    raise SdpError(f"block {b}: complex coefficients; embed them first")
                if not np.allclose(mat, mat.T, atol=1e-12 * max(1.0, np.abs(mat).max())):
                    raise SdpError(f"block {b}: coefficient matrix not symmetric")
            for s in func.scalars:
                if not 0 <= s < self.n_scalars:
                    raise SdpError(f"scalar index {s} out of range")
        for b in self.hermitian_blocks:
            if not 0 <= b < len(self.block_dims) or self.block_dims[b] % 2:
                raise SdpError(f"block {b} cannot hold a Hermitian embedding")


@dataclass
class SdpOptions:
    gap_tol: float = 1e-9
    feas_tol: float = 1e-9
    # looser thresholds still reported as optimal when progress stalls
    accept_gap: float = 1e-6
    accept_feas: float = 1e-7
    max_iter: int = 100
    # diagonal regularization, applied only when plain Cholesky fails
    reg: float = 1e-9
    reg_retry: float = 1e-7
    step_fraction: float = 0.98


@dataclass
class SdpSolution:
    blocks: list[np.ndarray]
    scalars: np.ndarray
    slacks: np.ndarray
    y: np.ndarray
    dual_blocks: list[np.ndarray]
    primal_objective: float
    dual_objective: float
    status: str  # "optimal" | "infeasible" | "unbounded" | "max_iter"
    iterations: int
    primal_residual: float
    dual_residual: float
    relative_gap: float
    history: list[dict] = field(default_factory=list)

    @property
    def objective(self) -> float:
        return self.primal_objective


# ---------------------------------------------------------------------------
# complex <-> real embedding
# ---------------------------------------------------------------------------

def embed_hermitian(h: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Real symmetric ``2n x 2n`` embedding ``[[Re, -Im], [Im, Re]]``."""
    h = np.asarray(h)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {h.shape}")
    scale = max(1.0, float(np.abs(h).max(initial=0.0)))
    if np.abs(h - h.conj().T).max(initial=0.0) > tol * scale:
        raise ValueError("matrix is not Hermitian")
    re, im = h.real, h.imag
    out = np.block([[re, -im], [im, re]])
    return 0.5 * (out + out.T)


def extract_complex(x: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """Inverse of :func:`embed_hermitian`, averaging the duplicated parts."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] != x.shape[1] or x.shape[0] % 2:
        raise ValueError(f"expected an even square matrix, got shape {x.shape}")
    n = x.shape[0] // 2
    a, b = x[:n, :n], x[:n, n:]
    c, d = x[n:, :n], x[n:, n:]
    scale = max(1.0, float(np.abs(x).max(initial=0.0)))
    violation = max(np.abs(a - d).max(initial=0.0), np.abs(b + c).max(initial=0.0))
    if violation > tol * scale:
        raise ValueError(f"embedding structure violated by {violation:.3e}")
    re = 0.5 * (a + d)
    im = 0.5 * (c - b)
    out = re + 1j * im
    return 0.5 * (out + out.conj().T)


# ---------------------------------------------------------------------------
# canonical form
# ---------------------------------------------------------------------------

@dataclass
class _Canonical:
    dims: list[int]
    n_user: int
    n_slack: int
    a_blocks: list[np.ndarray]  # (m, n, n) per block
    a_lp: np.ndarray  # (m, n_user + n_slack)
    b: np.ndarray
    c_blocks: list[np.ndarray]
    c_lp: np.ndarray


def _project_embedding(x: np.ndarray) -> np.ndarray:
    """Orthogonal projection onto matrices of the form [[A, -B], [B, A]]."""
    n = x.shape[0] // 2
    a = 0.5 * (x[:n, :n] + x[n:, n:])
    b = 0.5 * (x[n:, :n] - x[:n, n:])
    return np.block([[a, -b], [b, a]])


def _canonicalize(p: SdpProblem) -> _Canonical:
    rows = p.eq_constraints + p.ineq_constraints
    m = len(rows)
    n_slack = len(p.ineq_constraints)
    n_lp = p.n_scalars + n_slack
    a_blocks = [np.zeros((m, n, n)) for n in p.block_dims]
    a_lp = np.zeros((m, n_lp))
    b = np.zeros(m)
    for i, (func, rhs) in enumerate(rows):
        for blk, mat in func.blocks.items():
            mat = np.asarray(mat, dtype=float)
            a_blocks[blk][i] = 0.5 * (mat + mat.T)
        for s, coef in func.scalars.items():
            a_lp[i, s] = coef
        b[i] = rhs
    for j in range(n_slack):
        a_lp[len(p.eq_constraints) + j, p.n_scalars + j] = -1.0
    c_blocks = [np.zeros((n, n)) for n in p.block_dims]
    for blk, mat in p.objective.blocks.items():
        mat = np.asarray(mat, dtype=float)
        c_blocks[blk] = 0.5 * (mat + mat.T)
    c_lp = np.zeros(n_lp)
    for s, coef in p.objective.scalars.items():
        c_lp[s] = coef
    return _Canonical(list(p.block_dims), p.n_scalars, n_slack, a_blocks, a_lp, b, c_blocks, c_lp)


# ---------------------------------------------------------------------------
# interior-point iteration
# ---------------------------------------------------------------------------

def _apply_a(can: _Canonical, xs: list[np.ndarray], x: np.ndarray) -> np.ndarray:
    out = can.a_lp @ x if x.size else np.zeros(len(can.b))
    for a, xb in zip(can.a_blocks, xs):
        out = out + a.reshape(a.shape[0], -1) @ xb.ravel()
    return out


def _apply_at(can: _Canonical, y: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    mats = [np.tensordot(y, a, axes=1) for a in can.a_blocks]
    return mats, can.a_lp.T @ y


def _max_step(chol: np.ndarray, dx: np.ndarray) -> float:
    """Largest alpha with ``X + alpha dX`` PSD, given ``X = chol chol^T``."""
    lam = kernels.min_congruence_eig(chol, dx)
    return np.inf if lam >= 0 else -1.0 / lam


def _max_step_lp(x: np.ndarray, dx: np.ndarray) -> float:
    neg = dx < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-x[neg] / dx[neg]))


def _nt_scaling(x: np.ndarray, z: np.ndarray):
    """NT scaling ``(G, G^{-1}, d, chol X, chol Z)``.

    ``G^{-1} X G^{-T} = G^T Z G = diag(d)`` and ``W = G G^T`` satisfies
    ``W Z W = X``.
    """
    lx = np.linalg.cholesky(x)
    lz = np.linalg.cholesky(z)
    _, s, vt = np.linalg.svd(lz.T @ lx)
    rs = np.sqrt(s)
    g = (lx @ vt.T) / rs
    ginv = rs[:, None] * sla.solve_triangular(lx, vt.T, lower=True, trans="T",
                                              check_finite=False).T
    return g, ginv, s, lx, lz


def _initial_point(can: _Canonical):
    xs, zs = [], []
    bnorm = np.abs(can.b)
    for a, c, n in zip(can.a_blocks, can.c_blocks, can.dims):
        anorm = np.sqrt((a.reshape(a.shape[0], -1) ** 2).sum(axis=1)) if a.shape[0] else np.zeros(0)
        xi = max(10.0, np.sqrt(n), n * float(np.max((1 + bnorm) / (1 + anorm), initial=0.0)))
        eta = max(10.0, np.sqrt(n), float(np.max(anorm, initial=0.0)), float(np.linalg.norm(c)))
        xs.append(xi * np.eye(n))
        zs.append(eta * np.eye(n))
    n_lp = can.a_lp.shape[1]
    if n_lp:
        anorm = np.sqrt((can.a_lp ** 2).sum(axis=1))
        xi = max(10.0, float(np.max((1 + bnorm) / (1 + anorm), initial=0.0)))
        eta = max(10.0, float(np.max(anorm, initial=0.0)), float(np.linalg.norm(can.c_lp)))
        x = np.full(n_lp, xi)
        z = np.full(n_lp, eta)
    else:
        x = np.zeros(0)
        z = np.zeros(0)
    return xs, zs, x, z


def solve_sdp(problem: SdpProblem, opts: SdpOptions | None = None) -> SdpSolution:
    """Solve ``problem`` with an infeasible-start primal-dual method.

    Deterministic for identical inputs.  Raises :class:`SdpError` for
    malformed input or a Schur complement that cannot be factored even
    after the regularization retry.
    """
    opts = opts or SdpOptions()
    problem.validate()
    can = _canonicalize(problem)
    m = len(can.b)
    n_lp = can.a_lp.shape[1]
    nu = sum(can.dims) + n_lp

    xs, zs, x, z = _initial_point(can)
    y = np.zeros(m)
    b_norm = 1.0 + np.linalg.norm(can.b)
    c_norm = 1.0 + np.sqrt(sum(np.sum(c * c) for c in can.c_blocks) + can.c_lp @ can.c_lp)

    history: list[dict] = []
    status = "max_iter"
    it = 0
    pobj = dobj = np.nan
    pinf = dinf = gap = np.inf
    best, best_merit, stall = None, np.inf, 0

    for it in range(opts.max_iter + 1):
        rp = can.b - _apply_a(can, xs, x)
        aty, aty_lp = _apply_at(can, y)
        rd = [c - a - zb for c, a, zb in zip(can.c_blocks, aty, zs)]
        rd_lp = can.c_lp - aty_lp - z
        pobj = sum(np.sum(c * xb) for c, xb in zip(can.c_blocks, xs)) + can.c_lp @ x
        dobj = can.b @ y
        compl = sum(np.sum(xb * zb) for xb, zb in zip(xs, zs)) + x @ z
        mu = compl / nu
        pinf = np.linalg.norm(rp) / b_norm
        dinf = np.sqrt(sum(np.sum(r * r) for r in rd) + rd_lp @ rd_lp) / c_norm
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        history.append(
            {"iter": it, "pobj": float(pobj), "dobj": float(dobj), "pinf": float(pinf),
             "dinf": float(dinf), "gap": float(gap), "mu": float(mu)}
        )
        if pinf < opts.feas_tol and dinf < opts.feas_tol and gap < opts.gap_tol:
            status = "optimal"
            break
        # near the boundary the Schur system loses accuracy and residuals can
        # creep back up; remember the best iterate and stop once stalled
        merit = max(pinf, dinf, gap)
        if merit < best_merit:
            best_merit, stall = merit, 0
            best = (it, xs, x, y, zs, z, pobj, dobj, pinf, dinf, gap)
        else:
            stall += 1
            if stall >= _STALL_LIMIT:
                break
        # infeasibility certificates: diverging dual (primal infeasible) or primal ray
        if dobj > 0 and it > 5:
            ray = np.sqrt(sum(np.sum((a + zb) ** 2) for a, zb in zip(aty, zs))
                          + np.sum((aty_lp + z) ** 2))
            if dobj > 1e8 * c_norm and ray / dobj < 1e-6:
                status = "infeasible"
                break
        if pobj < 0 and it > 5:
            ax = np.linalg.norm(can.b - rp)
            if -pobj > 1e8 * b_norm and ax / -pobj < 1e-6:
                status = "unbounded"
                break
        if it == opts.max_iter:
            break

        try:
            scal = [_nt_scaling(xb, zb) for xb, zb in zip(xs, zs)]
        except np.linalg.LinAlgError:
            break
        ws = [sc[0] @ sc[0].T for sc in scal]
        wlp = x / z if n_lp else x

        schur = (can.a_lp * wlp) @ can.a_lp.T if n_lp else np.zeros((m, m))
        waw = []
        for a, w in zip(can.a_blocks, ws):
            t = np.matmul(np.matmul(w, a), w)
            waw.append(t)
            schur = schur + a.reshape(m, -1) @ t.reshape(m, -1).T
        schur = 0.5 * (schur + schur.T)
        factor = None
        diag = np.maximum(np.diag(schur), 1e-300)
        for reg in (0.0, opts.reg, opts.reg_retry):
            try:
                factor = sla.cho_factor(schur + np.diag(reg * diag), lower=True)
                break
            except np.linalg.LinAlgError:
                continue
        if factor is None:
            raise SdpError(f"Schur complement singular at iteration {it}")

        wrdw = [w @ r @ w for w, r in zip(ws, rd)]

        def direction(rc, rc_lp):
            rhs = rp - _apply_a(can, [a - b for a, b in zip(rc, wrdw)], rc_lp - wlp * rd_lp)
            dy = sla.cho_solve(factor, rhs)
            # refinement against the unregularized matrix removes the bias
            for _ in range(3):
                res = rhs - schur @ dy
                if np.linalg.norm(res) <= 1e-14 * (1.0 + np.linalg.norm(rhs)):
                    break
                dy = dy + sla.cho_solve(factor, res)
            ady, ady_lp = _apply_at(can, dy)
            dz = [r - a for r, a in zip(rd, ady)]
            dz_lp = rd_lp - ady_lp
            dx = []
            for rcb, w, dzb in zip(rc, ws, dz):
                d = rcb - w @ dzb @ w
                dx.append(0.5 * (d + d.T))
            dx_lp = rc_lp - wlp * dz_lp
            return dx, dx_lp, dy, dz, dz_lp

        def steps(dx, dx_lp, dz, dz_lp):
            ap = min([_max_step(sc[3], d) for sc, d in zip(scal, dx)] + [_max_step_lp(x, dx_lp)])
            ad = min([_max_step(sc[4], d) for sc, d in zip(scal, dz)] + [_max_step_lp(z, dz_lp)])
            return ap, ad

        # predictor
        dx, dx_lp, dy, dz, dz_lp = direction([-xb for xb in xs], -x)
        ap, ad = steps(dx, dx_lp, dz, dz_lp)
        ap, ad = min(1.0, ap), min(1.0, ad)
        mu_aff = (sum(np.sum((xb + ap * d1) * (zb + ad * d2))
                      for xb, d1, zb, d2 in zip(xs, dx, zs, dz))
                  + (x + ap * dx_lp) @ (z + ad * dz_lp)) / nu
        sigma = min(1.0, (mu_aff / mu) ** 3) if mu > 0 else 0.0

        # corrector
        rc = []
        for (g, ginv, d, _, _), d1, d2 in zip(scal, dx, dz):
            sx = ginv @ d1 @ ginv.T
            sz = g.T @ d2 @ g
            prod = sx @ sz
            rhs = -0.5 * (prod + prod.T)
            rhs[np.diag_indices_from(rhs)] += sigma * mu - d * d
            s_mat = 2.0 * rhs / (d[:, None] + d[None, :])
            rc.append(g @ s_mat @ g.T)
        rc_lp = (sigma * mu - x * z - dx_lp * dz_lp) / z if n_lp else x
        dx, dx_lp, dy, dz, dz_lp = direction(rc, rc_lp)
        ap, ad = steps(dx, dx_lp, dz, dz_lp)
        ap = min(1.0, opts.step_fraction * ap)
        ad = min(1.0, opts.step_fraction * ad)
        if ap < 1e-12 and ad < 1e-12:
            break

        xs = [xb + ap * d for xb, d in zip(xs, dx)]
        zs = [zb + ad * d for zb, d in zip(zs, dz)]
        xs = [0.5 * (xb + xb.T) for xb in xs]
        zs = [0.5 * (zb + zb.T) for zb in zs]
        for blk in problem.hermitian_blocks:
            xs[blk] = _project_embedding(xs[blk])
            zs[blk] = _project_embedding(zs[blk])
        x = x + ap * dx_lp
        z = z + ad * dz_lp
        y = y + ad * dy

    if status == "max_iter" and best is not None and best_merit < max(pinf, dinf, gap):
        it, xs, x, y, zs, z, pobj, dobj, pinf, dinf, gap = best
    if status == "max_iter" and pinf < opts.accept_feas and dinf < opts.accept_feas \
            and gap < opts.accept_gap:
        status = "optimal"

    return SdpSolution(
        blocks=xs,
        scalars=x[: can.n_user].copy(),
        slacks=x[can.n_user:].copy(),
        y=y,
        dual_blocks=zs,
        primal_objective=float(pobj),
        dual_objective=float(dobj),
        status=status,
        iterations=it,
        primal_residual=float(pinf),
        dual_residual=float(dinf),
        relative_gap=float(gap),
        history=history,
    )


# ---------------------------------------------------------------------------
# debug dump
# ---------------------------------------------------------------------------

def _functional_to_json(func: LinearFunctional) -> dict:
    entries = []
    for blk, mat in sorted(func.blocks.items()):
        mat = np.asarray(mat, dtype=float)
        rows, cols = np.nonzero(np.triu(mat))
        entries.extend([int(blk), int(i), int(j), float(mat[i, j])] for i, j in zip(rows, cols))
    return {
        "blocks": entries,
        "scalars": [[int(s), float(c)] for s, c in sorted(func.scalars.items())],
    }


def _functional_from_json(obj: dict, dims: list[int]) -> LinearFunctional:
    blocks: dict[int, np.ndarray] = {}
    for blk, i, j, val in obj["blocks"]:
        mat = blocks.setdefault(blk, np.zeros((dims[blk], dims[blk])))
        mat[i, j] = val
        mat[j, i] = val
    return LinearFunctional(blocks, {int(s): float(c) for s, c in obj["scalars"]})


def dump_problem(problem: SdpProblem, path: str | Path) -> None:
    """Write ``problem`` as JSON: block sizes, upper-triangle triplets, RHS."""
    doc = {
        "block_dims": list(problem.block_dims),
        "n_scalars": problem.n_scalars,
        "objective": _functional_to_json(problem.objective),
        "eq": [{**_functional_to_json(f), "rhs": float(r)} for f, r in problem.eq_constraints],
        "ineq": [{**_functional_to_json(f), "rhs": float(r)} for f, r in problem.ineq_constraints],
        "hermitian_blocks": [int(b) for b in problem.hermitian_blocks],
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_problem(path: str | Path) -> SdpProblem:
    doc = json.loads(Path(path).read_text())
    dims = doc["block_dims"]
    return SdpProblem(
        block_dims=dims,
        n_scalars=doc["n_scalars"],
        objective=_functional_from_json(doc["objective"], dims),
        eq_constraints=[(_functional_from_json(r, dims), r["rhs"]) for r in doc["eq"]],
        ineq_constraints=[(_functional_from_json(r, dims), r["rhs"]) for r in doc["ineq"]],
        hermitian_blocks=tuple(doc.get("hermitian_blocks", ())),
    )
