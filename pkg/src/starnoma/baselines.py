"""Benchmark schemes: pinned time split, pinned phases, and TDMA with conventional surfaces."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import kernels
from .altop import AltOpOptions, PenaltyOptions, p_altop
from .model import SIDES, ChannelError, ChannelRealization, Solution, SystemConfig

__all__ = [
    "BaselineKind",
    "OmaUser",
    "OmaResult",
    "run_eq_paltop",
    "run_fixed_paltop",
    "run_ris_oma",
    "run_scheme",
]

EQUAL_SPLIT = 0.5


class BaselineKind(enum.Enum):
    EQ_PALTOP = "Eq-PAltOp"
    FIXED_PALTOP = "Fixed-PAltOp"
    RIS_OMA = "RIS-OMA"


def run_eq_paltop(chan: ChannelRealization, cfg: SystemConfig,
                  penalty_opts: PenaltyOptions | None = None,
                  alt_opts: AltOpOptions | None = None, *,
                  rng: np.random.Generator | None = None):
    """P-AltOp with the R/T time split pinned to one half each."""
    return p_altop(chan, cfg, penalty_opts, alt_opts, rng=rng, fixed_lambda=EQUAL_SPLIT)


def run_fixed_paltop(chan: ChannelRealization, cfg: SystemConfig,
                     penalty_opts: PenaltyOptions | None = None,
                     alt_opts: AltOpOptions | None = None, *,
                     rng: np.random.Generator | None = None):
    """P-AltOp with every surface element pinned to phase zero."""
    ones = np.ones(cfg.n_elements, dtype=complex)
    return p_altop(chan, cfg, penalty_opts, alt_opts, rng=rng,
                   fixed_phases={q: ones for q in SIDES})


@dataclass(frozen=True)
class OmaUser:
    side: str
    index: int  # original user index on its side
    v: np.ndarray
    w: np.ndarray
    gain: float
    power: float
    rate: float
    refinement_gains: tuple  # combined-channel gain after each sweep


@dataclass(frozen=True)
class OmaResult:
    users: tuple
    time_share: float

    @property
    def total_power(self) -> float:
        return float(sum(u.power for u in self.users))


def run_ris_oma(chan: ChannelRealization, cfg: SystemConfig, *, max_sweeps: int = 50,
                tol: float = 1e-6) -> OmaResult:
    """Each user gets an equal TDMA slot and its own surface configuration.

    R users are served through a reflection-only surface and T users through
    a transmission-only one, both with ``cfg.n_elements`` elements.  Phases
    come from successive refinement of ``||F diag(g) v||^2`` started at zero
    phase; the receiver combines with MRT.
    """
    n_users = cfg.k_r + cfg.k_t
    share = 1.0 / n_users
    sigma2 = cfg.noise_power
    users = []
    for q in SIDES:
        qos = cfg.qos(q)
        for k, a in enumerate(chan.a_matrices(q)):
            v0 = np.ones(a.shape[1], dtype=complex)
            v, history = kernels.refine_phases(a, v0, max_sweeps=max_sweeps, tol=tol)
            h = a @ v
            gain = float(np.real(np.vdot(h, h)))
            if not gain > 0:
                raise ChannelError(f"zero combined gain for user {k} on side {q}")
            threshold = np.expm1(np.log(2.0) * qos[k] / share)
            power = float(threshold * sigma2 / gain)
            rate = share * np.log2(1.0 + power * gain / sigma2)
            users.append(OmaUser(q, k, v, h / np.sqrt(gain), gain, power, float(rate),
                                 tuple(history)))
    return OmaResult(tuple(users), share)


def run_scheme(name: str, chan: ChannelRealization, cfg: SystemConfig,
               penalty_opts: PenaltyOptions | None = None,
               alt_opts: AltOpOptions | None = None, *,
               rng: np.random.Generator | None = None):
    """Dispatch on a scheme label; returns ``(result, trace)``.

    ``result`` is a :class:`Solution` for the alternating schemes and an
    :class:`OmaResult` for RIS-OMA (whose trace is empty).
    """
    if name == "P-AltOp":
        return p_altop(chan, cfg, penalty_opts, alt_opts, rng=rng)
    kind = BaselineKind(name)
    if kind is BaselineKind.EQ_PALTOP:
        return run_eq_paltop(chan, cfg, penalty_opts, alt_opts, rng=rng)
    if kind is BaselineKind.FIXED_PALTOP:
        return run_fixed_paltop(chan, cfg, penalty_opts, alt_opts, rng=rng)
    if kind is BaselineKind.RIS_OMA:
        return run_ris_oma(chan, cfg), []
    raise AssertionError(f"unhandled scheme {kind}")  # pragma: no cover


def total_power(result: Solution | OmaResult) -> float:
    return float(result.total_power)
