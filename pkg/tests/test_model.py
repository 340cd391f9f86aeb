import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from starnoma.altop import optimal_powers, qos_coefficient
from starnoma.model import (
    ChannelRealization,
    SystemConfig,
    dbm_to_watts,
    draw_channels,
    draw_user_positions,
    effective_gain,
    gain_matrix,
    gain_matrix_lifted,
    initial_decoding_order,
    path_loss,
    rician,
    sinr_and_rate,
    steering_vector,
    watts_to_dbm,
)


@pytest.mark.parametrize("dbm,watts", [(-90, 1e-12), (30, 1.0), (0, 1e-3)])
def test_dbm_to_watts(dbm, watts):
    assert dbm_to_watts(dbm) == pytest.approx(watts, rel=1e-12)
    assert watts_to_dbm(watts) == pytest.approx(dbm, abs=1e-9)


def test_dbm_rejects_nonfinite():
    with pytest.raises(ValueError):
        dbm_to_watts(float("nan"))


def test_path_loss_examples(frozen):
    cfg = SystemConfig()
    assert path_loss(1.0, cfg) == pytest.approx(1e-3, rel=1e-12)
    assert path_loss(1.0, cfg.with_(pathloss_ref_db=0.0)) == pytest.approx(1.0, rel=1e-12)
    assert path_loss(50.0, cfg) == pytest.approx(frozen["path_loss_50m"], rel=1e-12)


def test_path_loss_below_reference_distance():
    with pytest.raises(ValueError):
        path_loss(0.5, SystemConfig())


@given(st.floats(1.0, 1e3), st.floats(1e-3, 100.0))
def test_path_loss_strictly_decreasing(d, delta):
    cfg = SystemConfig()
    assert path_loss(d + delta, cfg) < path_loss(d, cfg)


@pytest.mark.parametrize("changes", [
    {"k_r": 0}, {"k_t": 0}, {"n_antennas": 0}, {"n_elements": 0},
    {"qos_bits": (0.0,)}, {"qos_bits": (-1.0,)}, {"user_drop_radius": 0.0},
    {"qos_bits": (0.1, 0.2, 0.3)},
])
def test_config_invariants(changes):
    with pytest.raises(ValueError):
        SystemConfig(**changes)


def test_config_qos_broadcast_and_per_user():
    cfg = SystemConfig(qos_bits=(0.1, 0.2, 0.3, 0.4))
    np.testing.assert_array_equal(cfg.qos("r"), [0.1, 0.2])
    np.testing.assert_array_equal(cfg.qos("t"), [0.3, 0.4])
    np.testing.assert_array_equal(SystemConfig().qos("t"), [0.2, 0.2])


def test_user_positions_on_correct_half_disc(rng):
    cfg = SystemConfig(k_r=500, k_t=500)
    ris = np.array(cfg.ris_position)
    for side, sign in (("r", -1), ("t", 1)):
        pos = draw_user_positions(cfg, rng, side)
        assert np.all(sign * (pos[:, 1] - ris[1]) >= 0)
        assert np.all(np.hypot(pos[:, 0] - ris[0], pos[:, 1] - ris[1]) <= cfg.user_drop_radius)
        assert np.all(pos[:, 2] == cfg.user_height)


def test_channels_deterministic():
    cfg = SystemConfig()
    a = draw_channels(cfg, np.random.default_rng(7))
    b = draw_channels(cfg, np.random.default_rng(7))
    assert a.f_matrix.tobytes() == b.f_matrix.tobytes()
    for side in ("r", "t"):
        for ga, gb in zip(a.g(side), b.g(side)):
            assert ga.tobytes() == gb.tobytes()


def test_channels_pure_los_limit():
    cfg = SystemConfig(rician_factor=1e12)
    chan = draw_channels(cfg, np.random.default_rng(3))
    bs, ris = np.array(cfg.bs_position), np.array(cfg.ris_position)
    d = np.linalg.norm(ris - bs)
    # independent rebuild of the LoS terms from the geometry
    m, n = np.arange(cfg.n_elements), np.arange(cfg.n_antennas)
    cos_f = (ris[0] - bs[0]) / d
    los_f = np.exp(1j * np.pi * n[:, None] * cos_f) * np.exp(-1j * np.pi * m[None, :] * -cos_f)
    expected_f = np.sqrt(1e-3 * d ** -2.2) * los_f
    assert np.linalg.norm(chan.f_matrix - expected_f) <= 1e-5 * np.linalg.norm(expected_f)
    for side in ("r", "t"):
        for pos, g in zip(chan.user_positions[side], chan.g(side)):
            du = np.linalg.norm(pos - ris)
            expected = np.sqrt(1e-3 * du ** -2.2) * np.exp(1j * np.pi * m * (pos[0] - ris[0]) / du)
            assert np.linalg.norm(g - expected) <= 1e-5 * np.linalg.norm(expected)


def test_rayleigh_variance_matches_path_loss():
    # K = 0: every entry is CN(0, PL); 1e5 draws at a fixed gain
    rng = np.random.default_rng(0)
    gain = path_loss(7.5, SystemConfig())
    samples = rician(rng, np.ones((100_000, 3)), 0.0, gain)
    var = np.mean(np.abs(samples) ** 2, axis=0)
    np.testing.assert_allclose(var, gain, rtol=0.02)


def test_channel_variance_scales_with_path_loss():
    rng = np.random.default_rng(1)
    los = np.ones(200_000)
    v1 = np.mean(np.abs(rician(rng, los, 1.0, 1e-6)) ** 2)
    v2 = np.mean(np.abs(rician(rng, los, 1.0, 4e-6)) ** 2)
    assert v2 / v1 == pytest.approx(4.0, rel=0.02)


def test_a_matrices_definition():
    chan = draw_channels(SystemConfig(), np.random.default_rng(5))
    for side in ("r", "t"):
        for a, g in zip(chan.a_matrices(side), chan.g(side)):
            for j in range(a.shape[1]):
                np.testing.assert_array_equal(a[:, j], chan.f_matrix[:, j] * g[j])


def test_channel_rejects_nonfinite():
    f = np.ones((2, 3), complex)
    with pytest.raises(ValueError):
        ChannelRealization(f, (np.array([1, np.nan, 1], complex),), (np.ones(3, complex),))


def _rand_unit(rng, n):
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return x / np.linalg.norm(x)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 8))
def test_effective_gain_rank_one_identity(seed, n_t, m):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n_t, m)) + 1j * rng.standard_normal((n_t, m))
    v = np.exp(2j * np.pi * rng.uniform(size=m))
    w = _rand_unit(rng, n_t)
    direct = abs(np.vdot(w, a @ v)) ** 2
    lifted = effective_gain(np.outer(v, v.conj()), np.outer(w, w.conj()), a)
    assert lifted == pytest.approx(direct, rel=1e-10, abs=1e-300)


def test_effective_gain_identity_inputs(rng):
    a = rng.standard_normal((3, 5)) + 1j * rng.standard_normal((3, 5))
    assert effective_gain(np.eye(5), np.eye(3), a) == pytest.approx(np.linalg.norm(a) ** 2)


def test_effective_gain_matches_cascaded_product(rng):
    # M=3, N_T=2: |w^H F Theta g|^2 with Theta = diag(v)
    f = rng.standard_normal((2, 3)) + 1j * rng.standard_normal((2, 3))
    g = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    v = np.exp(1j * rng.uniform(0, 2 * np.pi, 3))
    w = _rand_unit(rng, 2)
    direct = abs(w.conj() @ f @ np.diag(v) @ g) ** 2
    a = f @ np.diag(g)
    assert effective_gain(np.outer(v, v.conj()), np.outer(w, w.conj()), a) == pytest.approx(
        direct, rel=1e-12)


@given(st.floats(0.0, 1e3))
def test_effective_gain_scales_linearly(alpha):
    rng = np.random.default_rng(2)
    a = rng.standard_normal((2, 4)) + 1j * rng.standard_normal((2, 4))
    v = np.exp(1j * rng.uniform(0, 6, 4))
    big_v, big_w = np.outer(v, v.conj()), np.eye(2) / 2
    assert effective_gain(alpha * big_v, big_w, a) == pytest.approx(
        alpha * effective_gain(big_v, big_w, a), rel=1e-12, abs=1e-300)


def test_effective_gain_errors(rng):
    a = np.ones((2, 3), complex)
    with pytest.raises(ValueError, match="shape"):
        effective_gain(np.eye(2), np.eye(2), a)
    with pytest.raises(ValueError):
        effective_gain(-np.eye(3), np.eye(2), a)


def test_gain_matrix_lifted_matches_rank_one():
    chan = draw_channels(SystemConfig(), np.random.default_rng(9))
    rng = np.random.default_rng(10)
    v = np.exp(1j * rng.uniform(0, 6, 10))
    w = np.array([_rand_unit(rng, 4) for _ in range(2)])
    lifted = gain_matrix_lifted(chan, "r", np.outer(v, v.conj()), [np.outer(x, x.conj()) for x in w])
    np.testing.assert_allclose(lifted, gain_matrix(chan, "r", v, w), rtol=1e-10)


def test_rate_single_user():
    _, rate = sinr_and_rate(np.array([[2.0]]), [3.0], 0.5, 0.4)
    assert rate[0] == pytest.approx(0.4 * np.log2(1 + 3.0 * 2.0 / 0.5))


def test_rate_last_user_sees_noise_only():
    gains = np.array([[1.0, 5.0], [7.0, 2.0]])
    sinr, _ = sinr_and_rate(gains, [1.0, 3.0], 0.25, 1.0)
    assert sinr[1] == pytest.approx(3.0 * 2.0 / 0.25)
    assert sinr[0] == pytest.approx(1.0 * 1.0 / (3.0 * 7.0 + 0.25))


def test_rate_respects_order_argument():
    gains = np.array([[1.0, 0.5], [0.3, 2.0]])
    sinr, _ = sinr_and_rate(gains, [1.0, 1.0], 1.0, 1.0, order=[1, 0])
    # user 1 decoded first, interfered by user 0 through gains[0, 1]
    assert sinr[1] == pytest.approx(2.0 / (0.5 + 1.0))
    assert sinr[0] == pytest.approx(1.0)


def test_rates_of_optimal_powers_hit_target():
    gains = np.array([[2.0, 0.3], [0.5, 1.0]])
    r_min, lam, sigma2 = 0.7, 0.6, 1e-2
    p = optimal_powers(gains, qos_coefficient(np.full(2, r_min), lam), sigma2)
    _, rates = sinr_and_rate(gains, p, sigma2, lam)
    np.testing.assert_allclose(rates, r_min, atol=1e-8)


def test_rate_errors():
    with pytest.raises(ValueError):
        sinr_and_rate(np.eye(2), [1, 1], 0.0, 1.0)
    with pytest.raises(ValueError):
        sinr_and_rate(np.eye(2), [1, 1], 1.0, 1.0, order=[0, 0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 4), st.floats(1e-3, 10.0))
def test_rate_monotone_in_powers(seed, k, bump):
    rng = np.random.default_rng(seed)
    gains = rng.uniform(0.1, 2.0, (k, k))
    p = rng.uniform(0.1, 1.0, k)
    _, base = sinr_and_rate(gains, p, 0.3, 1.0)
    for j in range(k):
        q = p.copy()
        q[j] += bump
        _, rates = sinr_and_rate(gains, q, 0.3, 1.0)
        assert rates[j] > base[j]
        assert np.all(rates[:j] <= base[:j] + 1e-15)


@pytest.mark.parametrize("gains,order", [([0.9, 0.4], [0, 1]), ([0.4, 0.9], [1, 0]),
                                         ([0.5, 0.5], [0, 1])])
def test_initial_decoding_order(gains, order):
    np.testing.assert_array_equal(initial_decoding_order(gains), order)


def test_steering_vector_unit_modulus():
    s = steering_vector(8, 0.3)
    np.testing.assert_allclose(np.abs(s), 1.0)
    assert s[0] == 1.0
