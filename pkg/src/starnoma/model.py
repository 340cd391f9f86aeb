"""System model: scenario constants, channel synthesis and SINR algebra.

Users on each side ("r" for the reflection space, "t" for the
transmission space) reach the BS only through the surface.  The cascaded
channel of user ``j`` on side ``q`` seen through receive beamformer
``w_k`` is ``|w_k^H F diag(v_q) g_j|^2 = Tr(A_j V_q A_j^H W_k)`` with
``A_j = F diag(g_j)``, ``V_q = v_q v_q^H`` and ``W_k = w_k w_k^H``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

SIDES = ("r", "t")


class ChannelError(ValueError):
    """A user has no usable effective channel (zero own gain)."""


def dbm_to_watts(level: float) -> float:
    if not np.isfinite(level):
        raise ValueError(f"non-finite power level {level}")
    return 10.0 ** ((level - 30.0) / 10.0)


def watts_to_dbm(power: float) -> float:
    return 10.0 * np.log10(power) + 30.0


@dataclass(frozen=True)
class SystemConfig:
    """Scenario constants.  Defaults are the evaluation setup of the study."""

    n_antennas: int = 4
    n_elements: int = 10
    k_r: int = 2
    k_t: int = 2
    bs_position: tuple[float, float, float] = (0.0, 0.0, 10.0)
    ris_position: tuple[float, float, float] = (0.0, 50.0, 10.0)
    user_drop_radius: float = 10.0
    user_height: float = 0.0
    pathloss_ref_db: float = -30.0
    pathloss_exponent: float = 2.2
    rician_factor: float = 1.0
    noise_power_dbm: float = -90.0
    # one entry per user, r side first then t side; a scalar is broadcast
    qos_bits: tuple[float, ...] = (0.2,)
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("n_antennas", "n_elements", "k_r", "k_t"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.user_drop_radius <= 0:
            raise ValueError("user_drop_radius must be positive")
        if self.rician_factor < 0:
            raise ValueError("rician_factor must be nonnegative")
        qos = tuple(float(q) for q in np.atleast_1d(self.qos_bits))
        if len(qos) not in (1, self.k_r + self.k_t):
            raise ValueError(
                f"qos_bits needs 1 or {self.k_r + self.k_t} entries, got {len(qos)}")
        if any(q <= 0 for q in qos):
            raise ValueError("all qos_bits must be positive")
        object.__setattr__(self, "qos_bits", qos)

    @property
    def noise_power(self) -> float:
        return dbm_to_watts(self.noise_power_dbm)

    def n_users(self, side: str) -> int:
        return self.k_r if side == "r" else self.k_t

    def qos(self, side: str) -> np.ndarray:
        """Per-user minimum rates (bit/s/Hz) of ``side``, original user order."""
        full = np.broadcast_to(np.asarray(self.qos_bits), (self.k_r + self.k_t,))
        return np.array(full[: self.k_r] if side == "r" else full[self.k_r:], dtype=float)

    def with_(self, **changes) -> SystemConfig:
        return replace(self, **changes)


def path_loss(d: float | np.ndarray, cfg: SystemConfig) -> float | np.ndarray:
    """Large-scale gain ``eps * d**-exponent`` with reference distance 1 m."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 1.0):
        raise ValueError("distance below the 1 m reference distance")
    out = 10.0 ** (cfg.pathloss_ref_db / 10.0) * d ** (-cfg.pathloss_exponent)
    return float(out) if out.ndim == 0 else out


def steering_vector(n: int, direction_cosine: float) -> np.ndarray:
    """Half-wavelength ULA response along the x axis."""
    return np.exp(1j * np.pi * np.arange(n) * direction_cosine)


def rician(rng: np.random.Generator, los: np.ndarray, k_factor: float, gain: float) -> np.ndarray:
    """``sqrt(gain) * (sqrt(K/(K+1)) LoS + sqrt(1/(K+1)) CN(0, 1))``."""
    nlos = (rng.standard_normal(los.shape) + 1j * rng.standard_normal(los.shape)) / np.sqrt(2.0)
    return np.sqrt(gain) * (np.sqrt(k_factor / (k_factor + 1.0)) * los
                            + np.sqrt(1.0 / (k_factor + 1.0)) * nlos)


@dataclass(frozen=True)
class ChannelRealization:
    f_matrix: np.ndarray  # (N_T, M), surface -> BS
    g_r: tuple[np.ndarray, ...]  # K_r vectors of length M
    g_t: tuple[np.ndarray, ...]
    user_positions: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        arrays = [self.f_matrix, *self.g_r, *self.g_t]
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise ValueError("non-finite channel entries")
        m = self.f_matrix.shape[1]
        if any(g.shape != (m,) for g in (*self.g_r, *self.g_t)):
            raise ValueError("user channel length does not match the surface size")

    def g(self, side: str) -> tuple[np.ndarray, ...]:
        return self.g_r if side == "r" else self.g_t

    def a_matrices(self, side: str) -> list[np.ndarray]:
        """``A_k = F diag(g_k)`` for every user of ``side``."""
        return [self.f_matrix * g[None, :] for g in self.g(side)]

    def combined(self, side: str, v: np.ndarray) -> np.ndarray:
        """Rows are the combined channels ``h_k = F diag(v) g_k``."""
        return np.array([self.f_matrix @ (v * g) for g in self.g(side)])

    def permuted(self, side: str, order) -> ChannelRealization:
        gs = tuple(self.g(side)[i] for i in order)
        return replace(self, **{f"g_{side}": gs})


def draw_user_positions(cfg: SystemConfig, rng: np.random.Generator, side: str) -> np.ndarray:
    """Uniform points in the half disc around the surface, on ``side``.

    The reflection half faces the BS (smaller y), the transmission half
    faces away from it.
    """
    k = cfg.n_users(side)
    radius = cfg.user_drop_radius * np.sqrt(rng.uniform(size=k))
    phi = rng.uniform(0.0, np.pi, size=k)
    sign = -1.0 if side == "r" else 1.0
    cx, cy, _ = cfg.ris_position
    return np.column_stack([
        cx + radius * np.cos(phi),
        cy + sign * radius * np.sin(phi),
        np.full(k, cfg.user_height),
    ])


def draw_channels(cfg: SystemConfig, rng: np.random.Generator) -> ChannelRealization:
    """One Rician realization of every link, deterministic given ``rng`` state."""
    bs = np.asarray(cfg.bs_position, dtype=float)
    ris = np.asarray(cfg.ris_position, dtype=float)
    positions = {side: draw_user_positions(cfg, rng, side) for side in SIDES}

    d_f = float(np.linalg.norm(ris - bs))
    los_f = np.outer(steering_vector(cfg.n_antennas, (ris[0] - bs[0]) / d_f),
                     steering_vector(cfg.n_elements, (bs[0] - ris[0]) / d_f).conj())
    f = rician(rng, los_f, cfg.rician_factor, path_loss(d_f, cfg))

    users = {}
    for side in SIDES:
        gs = []
        for pos in positions[side]:
            d = float(np.linalg.norm(pos - ris))
            los = steering_vector(cfg.n_elements, (pos[0] - ris[0]) / d)
            gs.append(rician(rng, los, cfg.rician_factor, path_loss(d, cfg)))
        users[side] = tuple(gs)
    return ChannelRealization(f, users["r"], users["t"], positions)


def effective_gain(v_mat: np.ndarray, w_mat: np.ndarray, a: np.ndarray) -> float:
    """``Tr(A V A^H W)`` for Hermitian PSD ``V`` and ``W``."""
    v_mat, w_mat, a = np.asarray(v_mat), np.asarray(w_mat), np.asarray(a)
    if a.ndim != 2 or v_mat.shape != (a.shape[1],) * 2 or w_mat.shape != (a.shape[0],) * 2:
        raise ValueError(
            f"shape mismatch: A {a.shape}, V {v_mat.shape}, W {w_mat.shape}")
    val = np.trace(a @ v_mat @ a.conj().T @ w_mat)
    scale = max(1.0, abs(val))
    if abs(val.imag) > 1e-9 * scale:
        raise ValueError(f"trace has imaginary part {val.imag:.3e}; inputs not Hermitian")
    val = float(val.real)
    if val < -1e-12 * scale:
        raise ValueError(f"negative effective gain {val:.3e}; inputs not PSD")
    return max(val, 0.0)


def gain_matrix(chan: ChannelRealization, side: str, v: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``H[j, k] = |w_k^H F diag(v) g_j|^2`` for rank-one beamformers.

    ``w`` holds one receive beamformer per row, in the same user order as
    ``chan.g(side)``.
    """
    h = chan.combined(side, v)  # (K, N_T)
    return np.abs(h @ w.conj().T) ** 2


def gain_matrix_lifted(chan: ChannelRealization, side: str, v_mat: np.ndarray,
                       w_mats) -> np.ndarray:
    """Same as :func:`gain_matrix` with lifted ``V`` and per-user ``W_k``."""
    a = chan.a_matrices(side)
    k = len(a)
    out = np.empty((k, k))
    for j in range(k):
        for kk in range(k):
            out[j, kk] = effective_gain(v_mat, w_mats[kk], a[j])
    return out


def sinr_and_rate(gains: np.ndarray, powers, sigma2: float, lambda_q: float,
                  order=None) -> tuple[np.ndarray, np.ndarray]:
    """SINRs and rates under successive interference cancellation.

    ``order[i]`` is the user decoded in position ``i``; a user only sees
    interference from users decoded after it.  Results are indexed by user.
    """
    if sigma2 <= 0:
        raise ValueError("noise power must be positive")
    gains = np.asarray(gains, dtype=float)
    powers = np.asarray(powers, dtype=float)
    k = len(powers)
    order = np.arange(k) if order is None else np.asarray(order)
    if sorted(order.tolist()) != list(range(k)):
        raise ValueError(f"order {order} is not a permutation of {k} users")
    sinr = np.empty(k)
    for pos, user in enumerate(order):
        later = order[pos + 1:]
        interference = float(np.sum(powers[later] * gains[later, user]))
        sinr[user] = powers[user] * gains[user, user] / (interference + sigma2)
    return sinr, lambda_q * np.log2(1.0 + sinr)


def initial_decoding_order(own_gains) -> np.ndarray:
    """Users sorted by own effective gain, strongest first; stable on ties."""
    own_gains = np.asarray(own_gains, dtype=float)
    return np.argsort(-own_gains, kind="stable")


def mrt_beamformers(h: np.ndarray) -> np.ndarray:
    """Unit-norm maximum-ratio combiners, one per row of ``h``."""
    norms = np.linalg.norm(h, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ChannelError("zero combined channel; MRT undefined")
    return h / norms


@dataclass(frozen=True)
class SideState:
    """Decision variables of one side, users indexed by decoding position."""

    v: np.ndarray
    big_v: np.ndarray
    w: np.ndarray  # (K, N_T), unit rows
    big_w: np.ndarray  # (K, N_T, N_T)
    powers: np.ndarray
    normalized_powers: np.ndarray
    p_sum: float
    order: np.ndarray  # decoding position -> original user index


@dataclass(frozen=True)
class Solution:
    r: SideState
    t: SideState
    lambda_r: float
    iterations: int = 0
    converged: bool = False

    @property
    def lambda_t(self) -> float:
        return 1.0 - self.lambda_r

    def side(self, q: str) -> SideState:
        return self.r if q == "r" else self.t

    def lam(self, q: str) -> float:
        return self.lambda_r if q == "r" else self.lambda_t

    @property
    def total_power(self) -> float:
        return float(np.sum(self.r.powers) + np.sum(self.t.powers))

    # flat aliases
    @property
    def v_r(self):
        return self.r.v

    @property
    def v_t(self):
        return self.t.v

    @property
    def big_v_r(self):
        return self.r.big_v

    @property
    def big_v_t(self):
        return self.t.big_v


def solution_rates(sol: Solution, chan: ChannelRealization, cfg: SystemConfig) -> dict:
    """Recompute every user's rate from the rank-one beamformers in ``sol``.

    Returns ``{side: (rates, qos)}`` with both arrays in decoding order.
    """
    out = {}
    for q in SIDES:
        st = sol.side(q)
        ordered = chan.permuted(q, st.order)
        gains = gain_matrix(ordered, q, st.v, st.w)
        _, rates = sinr_and_rate(gains, st.powers, cfg.noise_power, sol.lam(q))
        out[q] = (rates, cfg.qos(q)[st.order])
    return out
