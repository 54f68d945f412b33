import math

import numpy as np
import pytest
from scipy.linalg import expm

from tube import exact
from tube.core import ORIGIN, Direction, apply_move, config_stats, dominates, enumerate_moves, make_config, partition_count, partitions
from tube.exact import (
    BridgeUnreachable,
    CacheError,
    DistVector,
    SeriesLengthError,
    StateSpaceTooLarge,
    backward_h,
    bridge_marginal,
    build_generator,
    duality_residual,
    enumerate_space,
    point_mass,
    return_probability,
    return_probability_with_defect,
    square_sum_residual,
    transient,
    truncated_stationary,
)
from tube.measures import alpha


def dense_oracle(N, p):
    """Generator on D <= N built directly from the move rules, with absorption on the diagonal."""
    states = [x for n in range(N + 1) for x in sorted(partitions(n))]
    idx = {x: i for i, x in enumerate(states)}
    Q = np.zeros((len(states), len(states)))
    for i, parts in enumerate(states):
        x = make_config(parts)
        for m in enumerate_moves(x):
            rate = p if m.direction is Direction.RIGHT else 1 - p
            Q[i, i] -= rate
            y = apply_move(x, m).parts
            if y in idx:
                Q[i, idx[y]] += rate
    return states, Q


def test_enumerate_space_sizes_and_order():
    assert enumerate_space(0).parts == [()]
    assert len(enumerate_space(3)) == 7
    assert len(enumerate_space(10)) == 139 == sum(partition_count(n) for n in range(11))
    sp = enumerate_space(12)
    assert sp.parts[0] == ()
    keys = [(sum(x), x) for x in sp.parts]
    assert keys == sorted(keys)
    for i, x in enumerate(sp.parts):
        assert sp.index_of(x) == i
    with pytest.raises(StateSpaceTooLarge):
        enumerate_space(30, max_states=1000)


def test_generator_two_state():
    sp = enumerate_space(1)
    for p in (0.2, 0.5, 0.9):
        Q = build_generator(sp, p).dense()
        assert Q == pytest.approx(np.array([[-p, p], [1 - p, -(1 - p) - 2 * p]]), abs=1e-15)


def test_generator_rows_match_rates():
    sp = enumerate_space(12)
    Q = build_generator(sp, 0.3)
    rng = np.random.default_rng(0)
    dense = Q.dense()
    for i in rng.integers(0, len(sp), 100):
        s = config_stats(sp.states[i])
        off = dense[i].sum() - dense[i, i]
        absorbed = -dense[i].sum()
        assert off + absorbed == pytest.approx(0.3 * (s.J + 1) + 0.7 * s.J, abs=1e-14)
        assert absorbed >= -1e-15
    assert Q.Lambda >= 0.3 * (math.isqrt(24) + 1) + 0.7 * math.isqrt(24) - 1e-15
    sym = build_generator(sp, 0.5).dense()
    np.testing.assert_allclose(sym, sym.T, atol=0)


def test_generator_matches_dense_oracle():
    for p in (0.3, 0.7):
        states, Qd = dense_oracle(7, p)
        sp = enumerate_space(7)
        assert sp.parts == states
        np.testing.assert_allclose(build_generator(sp, p).dense(), Qd, atol=1e-15)


def test_transient_two_state_closed_form():
    sp = enumerate_space(1)
    Q = build_generator(sp, 0.5)
    got = transient(sp, Q, point_mass(sp), 0.1, 1e-14).weights
    want = expm(0.1 * Q.dense())[0]
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_transient_matches_expm_oracle():
    states, Qd = dense_oracle(8, 0.3)
    sp = enumerate_space(8)
    Q = build_generator(sp, 0.3)
    for t in (0.3, 1.0, 3.0):
        got = transient(sp, Q, point_mass(sp), t, 1e-13)
        np.testing.assert_allclose(got.weights, expm(t * Qd)[0], atol=1e-12)


def test_transient_t0_and_mass_conservation():
    sp = enumerate_space(8)
    rng = np.random.default_rng(1)
    for _ in range(5):
        p, t = rng.uniform(0.05, 0.95), rng.uniform(0, 3)
        w = rng.random(len(sp))
        init = DistVector(w / w.sum(), 0.0)
        Q = build_generator(sp, p)
        assert np.array_equal(transient(sp, Q, init, 0.0).weights, init.weights)
        out = transient(sp, Q, init, t, 1e-12)
        assert out.weights.min() >= 0
        assert out.weights.sum() + out.defect == pytest.approx(1.0, abs=1e-10)


def test_series_cap():
    sp = enumerate_space(4)
    Q = build_generator(sp, 0.5)
    with pytest.raises(SeriesLengthError) as info:
        exact.transient(sp, Q, point_mass(sp), 1e6, 1e-12)
    assert info.value.required > info.value.cap


def test_return_probability_monotone_in_N():
    assert return_probability(0.5, 0.0, 6) == 1.0
    P20, d20 = return_probability_with_defect(0.5, 4.0, 20)
    P24, _ = return_probability_with_defect(0.5, 4.0, 24)
    assert P24 >= P20
    assert P24 - P20 <= d20


def test_defect_monotone_in_N():
    rng = np.random.default_rng(7)
    for _ in range(10):
        p, t = rng.uniform(0.1, 0.9), rng.uniform(0.5, 3)
        N = int(rng.integers(4, 10))
        d1 = return_probability_with_defect(p, t, N)[1]
        d2 = return_probability_with_defect(p, t, N + 4)[1]
        assert d2 <= d1 + 1e-15


def test_duality():
    assert duality_residual(0.5, 2.0, 8) == 0.0
    assert duality_residual(0.7, 2.0, 8, 1e-12) <= 1e-8
    assert duality_residual(0.9, 1.0, 6) <= 1e-8
    P7 = return_probability(0.7, 2.0, 8)
    P3 = return_probability(0.3, 2.0, 8)
    assert P7 == pytest.approx(math.exp(-0.4 * 2) * P3, rel=1e-8)
    for p in (0.6, 0.7, 0.8, 0.9):
        for t in (0.5, 1.0, 2.0):
            assert duality_residual(p, t, 8) <= 1e-8


def test_square_sum():
    assert square_sum_residual(0.0, 6) == 0.0
    assert square_sum_residual(2.0, 10) <= 1e-8
    assert square_sum_residual(4.0, 16) <= 1e-8
    for t in (1.0, 2.0, 4.0):
        assert square_sum_residual(t, int(math.ceil(8 * math.sqrt(t)))) <= 1e-8


def test_backward_h():
    sp = enumerate_space(8)
    h = backward_h(sp, 0.3, 2.0, [0.0, 1.0, 2.0])
    ind = np.zeros(len(sp))
    ind[0] = 1
    np.testing.assert_array_equal(h[2], ind)
    assert h[0][0] == pytest.approx(return_probability(0.3, 2.0, 8), rel=1e-12)
    # against the dense oracle: h_s = exp((t-s)Q) e_O
    _, Qd = dense_oracle(8, 0.3)
    np.testing.assert_allclose(h[1], expm(1.0 * Qd)[:, 0], atol=1e-12)
    with pytest.raises(ValueError):
        backward_h(sp, 0.3, 2.0, [3.0])


def test_h_monotone_on_small_space():
    sp = enumerate_space(6)
    for p in (0.3, 0.5, 0.7):
        h = backward_h(sp, p, 1.5, [0.0, 0.75])
        for row in h:
            for i, x in enumerate(sp.states):
                for j, y in enumerate(sp.states):
                    if dominates(x, y):
                        assert row[i] <= row[j] * (1 + 1e-12) + 1e-300
        bad, pairs = exact.h_monotonicity_violations(p, 1.5, 6)
        assert bad == 0 and pairs > 100


def test_bridge_marginal():
    sp = enumerate_space(8)
    for s in (0.0, 2.0):
        w = bridge_marginal(sp, 0.7, 2.0, s).weights
        assert w[0] == pytest.approx(1.0, abs=1e-14)
    a = bridge_marginal(sp, 0.7, 2.0, 0.5).weights
    b = bridge_marginal(sp, 0.7, 2.0, 1.5).weights
    np.testing.assert_allclose(a, b, atol=1e-10)
    for s in (0.3, 1.0, 1.7):
        np.testing.assert_allclose(
            bridge_marginal(sp, 0.7, 2.0, s).weights, bridge_marginal(sp, 0.3, 2.0, s).weights, atol=1e-10
        )
    with pytest.raises(ValueError):
        bridge_marginal(sp, 0.7, 2.0, 3.0)


def test_bridge_marginal_underflow():
    sp = enumerate_space(1)
    with pytest.raises(BridgeUnreachable):
        bridge_marginal(sp, 0.99, 2000.0, 1000.0, tol=1e-6)


def test_truncated_stationary():
    sp = enumerate_space(12)
    pi = truncated_stationary(sp, 0.3).weights
    assert pi.min() > 0
    assert pi.sum() == pytest.approx(1.0, abs=1e-12)
    assert abs(pi[0] - alpha(0.3)) <= 1e-3
    assert pi[sp.index_of(make_config([1]))] / pi[0] == pytest.approx(0.3 / 0.7, rel=1e-10)
    # flow balance along every kept edge of the reflecting chain
    Q = build_generator(sp, 0.3, reflecting=True)
    for i in range(len(sp)):
        for e in range(Q.indptr[i], Q.indptr[i + 1]):
            j = Q.indices[e]
            back = [f for f in range(Q.indptr[j], Q.indptr[j + 1]) if Q.indices[f] == i]
            assert len(back) == 1
            assert pi[i] * Q.rates[e] == pytest.approx(pi[j] * Q.rates[back[0]], rel=1e-10)
    with pytest.raises(ValueError):
        truncated_stationary(sp, 0.5)


def test_stationary_ratio_approaches_blocking_factor():
    for N in (6, 10, 14):
        sp = enumerate_space(N)
        pi = truncated_stationary(sp, 0.3).weights
        for parts in ([1], [2], [1, 1]):
            x = make_config(parts)
            assert pi[sp.index_of(x)] / pi[0] == pytest.approx((0.3 / 0.7) ** sum(parts), rel=1e-9)


def test_cache_round_trip(tmp_path):
    sp = enumerate_space(9)
    Q = build_generator(sp, 0.3)
    path = tmp_path / "space.bin"
    exact.save_cache(path, sp, Q)
    sp2, Q2 = exact.load_cache(path)
    assert sp2.parts == sp.parts and sp2.checksum() == sp.checksum()
    np.testing.assert_array_equal(Q2.rates, Q.rates)
    np.testing.assert_array_equal(Q2.indices, Q.indices)
    assert Q2.Lambda == Q.Lambda and Q2.p == Q.p
    raw = bytearray(path.read_bytes())
    raw[40] ^= 0xFF  # inside the stored digest
    bad = tmp_path / "bad.bin"
    bad.write_bytes(bytes(raw))
    with pytest.raises(CacheError):
        exact.load_cache(bad)
    bad.write_bytes(b"NOTACACHE" * 10)
    with pytest.raises(CacheError):
        exact.load_cache(bad)


def test_auto_truncation_meets_defect():
    N = exact.auto_truncation(0.5, 2.0, 1e-6)
    assert return_probability_with_defect(0.5, 2.0, N)[1] < 1e-6
    assert return_probability_with_defect(0.5, 2.0, N - 2)[1] >= 1e-6 or N - 2 < 4
