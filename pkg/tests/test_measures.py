import itertools
import math

import numpy as np
import pytest
from scipy import integrate, special

from tube import exact
from tube.core import ORIGIN, config_stats, make_config, partition_count
from tube.measures import (
    BlockingSpec,
    DivergentProduct,
    alpha,
    blocking_site_prob,
    blocking_spec,
    c_of_p,
    exp_moment_bound,
    log_mu_origin,
    reflecting_walk_pi,
    sample_blocking_conditioned,
    stationary_weight,
    surplus_distribution,
    tail_bound,
    theorem_constants,
)
from tube.simulate import RngStream, gillespie, origin_time_batches


def euler_alpha(p, terms=2000):
    # independent closed form: conditioned blocking mass of O is prod_k (1 - rho^k)
    rho = p / (1 - p)
    return math.exp(math.fsum(math.log1p(-rho ** k) for k in range(1, terms)))


def exact_tail(p, d):
    """mu^{U0}(D > d) = alpha * sum_{n > d} p(n) rho^n."""
    rho = p / (1 - p)
    return euler_alpha(p) * math.fsum(partition_count(n) * rho ** n for n in range(d + 1, d + 3000))


def test_blocking_site_prob():
    for p in (0.1, 0.3, 0.8):
        assert blocking_site_prob(p, 0) == 0.5
        for i in range(-6, 7):
            assert blocking_site_prob(p, i) == pytest.approx(1 - blocking_site_prob(p, -i), abs=1e-15)
    assert blocking_site_prob(0.3, 3) == pytest.approx(1 / (1 + (7 / 3) ** 3), rel=1e-15)
    assert blocking_site_prob(0.3, 5000) == 0.0
    assert blocking_site_prob(0.3, -5000) == 1.0
    with pytest.raises(ValueError):
        blocking_site_prob(0.5, 1)


def test_blocking_spec_window():
    spec = blocking_spec(0.3, 1e-10)
    assert tail_bound(spec) < 1e-10
    assert tail_bound(BlockingSpec(0.3, spec.L - 1, 1e-10)) >= 1e-10
    # the bound dominates the true out-of-window mass of non-step sites
    true_tail = 2 * sum(blocking_site_prob(0.3, i) for i in range(spec.L + 1, spec.L + 400))
    assert true_tail <= tail_bound(spec)
    with pytest.raises(ValueError):
        blocking_spec(0.6)


def test_surplus_distribution_brute_force():
    p, L = 0.3, 5
    spec = BlockingSpec(p, L, 1e-3)
    dist = surplus_distribution(spec)
    sites = range(-L, L + 1)
    r = {i: blocking_site_prob(p, i) for i in sites}
    brute = {}
    for occ in itertools.product((0, 1), repeat=len(sites)):
        w = 1.0
        surplus = 0
        for i, o in zip(sites, occ):
            w *= r[i] if o else 1 - r[i]
            if i >= 0 and o:
                surplus += 1
            if i < 0 and not o:
                surplus -= 1
        brute[surplus] = brute.get(surplus, 0.0) + w
    for k, v in brute.items():
        assert dist[k] == pytest.approx(v, abs=1e-15)


def test_surplus_distribution_properties():
    spec = blocking_spec(0.3, 1e-10)
    dist = surplus_distribution(spec)
    assert dist[0] > 0
    assert dist.probs.sum() == pytest.approx(1.0, abs=1e-12)
    assert dist.defect <= 1e-10
    # site 0 carries density 1/2, so the law is symmetric about 1/2
    for k in range(-10, 11):
        assert dist[k] == pytest.approx(dist[1 - k], abs=1e-15)
    # mu(U0) = mu(O) / alpha with the closed-form alpha
    assert dist[0] == pytest.approx(math.exp(log_mu_origin(0.3, spec.L)) / euler_alpha(0.3), rel=1e-9)
    a = surplus_distribution(BlockingSpec(0.3, 30, 1e-10))[0]
    b = surplus_distribution(BlockingSpec(0.3, 40, 1e-10))[0]
    assert abs(a - b) <= 1e-9


def test_alpha():
    assert alpha(0.3) == pytest.approx(euler_alpha(0.3), rel=1e-9)
    assert alpha(0.1) == pytest.approx(euler_alpha(0.1), rel=1e-9)
    assert alpha(0.2) > alpha(0.3)
    sp = exact.enumerate_space(12)
    assert abs(exact.truncated_stationary(sp, 0.3).weights[0] - alpha(0.3)) <= 1e-3
    with pytest.raises(ValueError):
        alpha(0.5)


def test_alpha_long_run_occupation():
    tr = gillespie(ORIGIN, 0.3, 1e4, RngStream(30))
    b = origin_time_batches(tr, 21)[1:]
    se = b.std(ddof=1) / math.sqrt(len(b))
    assert abs(b.mean() - alpha(0.3)) <= max(1e-3, 3 * se)


def test_sample_blocking_conditioned():
    p, n = 0.3, 100_000
    spec = blocking_spec(p, 1e-10)
    xs = sample_blocking_conditioned(p, spec, RngStream(31), size=n)
    D = np.array([config_stats(x).D for x in xs])
    for d in range(0, 8):
        emp = float((D > d).mean())
        want = exact_tail(p, d)
        assert abs(emp - want) <= 3 * math.sqrt(want * (1 - want) / n)
    # cross-check with the exact distribution over D <= 8 by enumeration
    sp = exact.enumerate_space(8)
    w = stationary_weight(p, sp.D) * euler_alpha(p)
    assert float((D <= 8).mean()) == pytest.approx(w.sum(), abs=3 * math.sqrt(w.sum() * (1 - w.sum()) / n))
    c = 1.5 * c_of_p(p)
    emp = float(np.exp(D / c).mean())
    assert math.isfinite(emp)
    assert emp < exp_moment_bound(p, c) ** 2
    one = sample_blocking_conditioned(p, spec, RngStream(32))
    assert config_stats(one).D >= 0


def test_sample_blocking_cap():
    with pytest.raises(RuntimeError, match="rate"):
        sample_blocking_conditioned(0.3, blocking_spec(0.3), RngStream(1), size=10, cap=3, batch=1)


def test_exp_moment_bound():
    p = 0.3
    rho = p / (1 - p)
    inf_limit = math.prod(1 + rho ** i for i in range(1, 500))
    assert exp_moment_bound(p, 1e12) == pytest.approx(inf_limit, rel=1e-10)
    c = 2 * c_of_p(p)
    q = rho * math.exp(1 / c)
    v200 = math.exp(math.fsum(math.log1p(q ** i) for i in range(1, 201)))
    v400 = math.exp(math.fsum(math.log1p(q ** i) for i in range(1, 401)))
    assert abs(v400 - v200) / v400 < 1e-12
    assert exp_moment_bound(p, c) == pytest.approx(v400, rel=1e-12)
    with pytest.raises(DivergentProduct):
        exp_moment_bound(p, 0.5 * c_of_p(p))
    with pytest.raises(DivergentProduct):
        exp_moment_bound(p, c_of_p(p))


def test_exp_moment_bound_dominates_exact_moment():
    # E exp(D/c) under the conditioned measure is alpha / prod(1 - q^n) with q = rho e^{1/c}
    p = 0.3
    for c in (1.5 * c_of_p(p), 3 * c_of_p(p)):
        q = p / (1 - p) * math.exp(1 / c)
        moment = euler_alpha(p) * math.exp(-math.fsum(math.log1p(-q ** n) for n in range(1, 4000)))
        assert moment < exp_moment_bound(p, c) ** 2


def test_reflecting_walk_pi():
    p = 0.3
    total = math.fsum(reflecting_walk_pi(p, i) for i in range(400))
    assert total == pytest.approx(1.0, abs=1e-12)
    assert reflecting_walk_pi(p, 0) == pytest.approx(0.4 / 0.7, rel=1e-15)
    for i in range(20):
        assert reflecting_walk_pi(p, i + 1) / reflecting_walk_pi(p, i) == pytest.approx(p / (1 - p), rel=1e-14)
    with pytest.raises(ValueError):
        reflecting_walk_pi(0.6, 0)


def test_c_of_p():
    assert c_of_p(0.7) == pytest.approx(1 / math.log(7 / 3), rel=1e-15)
    for p in (0.6, 0.8, 0.99):
        assert c_of_p(p) == pytest.approx(c_of_p(1 - p), rel=1e-12)
    with pytest.raises(ValueError):
        c_of_p(0.5)


@pytest.mark.xfail(strict=True, reason="c(0.501) is about 250 while 1e3 * c(0.9) is about 455")
def test_c_of_p_ratio_at_0501():
    assert c_of_p(0.501) > 1e3 * c_of_p(0.9)


def test_c_of_p_blows_up_near_half():
    # c(1/2 + e) ~ 1/(4e)
    for e in (1e-3, 1e-4, 1e-6):
        assert c_of_p(0.5 + e) * 4 * e == pytest.approx(1.0, rel=e)
    assert c_of_p(0.5001) > 1e3 * c_of_p(0.9)


def test_symmetric_case_constants():
    c, c_prime = theorem_constants(1e-10)
    assert c == math.pi / math.sqrt(6)
    assert round(c, 4) == 1.2825
    assert abs(c_prime - 0.4775) <= 5e-4
    # doubling the cutoff does not move the value beyond tol
    wide, _ = integrate.quad(lambda x: -special.log_ndtr(x), 0, 16, epsabs=1e-12, limit=400)
    assert abs(wide - c_prime) <= 1e-10
    with pytest.raises(ValueError):
        theorem_constants(0.0)


def test_detailed_balance_of_blocking_weight():
    p = 0.3
    sp = exact.enumerate_space(8)
    Q = exact.build_generator(sp, p)
    mu = stationary_weight(p, sp.D)
    for i in range(len(sp)):
        for e in range(Q.indptr[i], Q.indptr[i + 1]):
            j = Q.indices[e]
            back = Q.rates[Q.indptr[j]:Q.indptr[j + 1]][Q.indices[Q.indptr[j]:Q.indptr[j + 1]] == i]
            assert mu[i] * Q.rates[e] == pytest.approx(mu[j] * back[0], rel=1e-10)


@pytest.mark.xfail(strict=True, reason="t * tail is still about 1.5 at t <= 1e4; it falls below 1 only near t = 1e8")
def test_tail_times_t_small_at_desk_scale():
    p = 0.3
    c = 1.5 * c_of_p(p)
    vals = [exact_tail(p, int(math.floor(c * math.log(t)))) * t for t in (1e2, 1e3, 1e4)]
    assert vals[-1] < 1 and vals[0] > vals[1] > vals[2]


def test_tail_is_little_o_of_one_over_t():
    p = 0.3
    c = 1.5 * c_of_p(p)
    vals = [exact_tail(p, int(math.floor(c * math.log(10.0 ** e)))) * 10.0 ** e for e in (4, 8, 12, 16, 24)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert vals[1] < 1 and vals[-1] < 1e-3


def _h_ratio(t, N=24):
    p = 0.3
    sp = exact.enumerate_space(N)
    h = exact.backward_h(sp, 1 - p, t, [0.0])[0]
    return [h[sp.index_of(make_config(x))] / h[0] / (p / (1 - p)) ** sum(x) for x in ([1], [2], [1, 1])]


@pytest.mark.xfail(strict=True, reason="at t = 8 the ratios are 0.91 and 0.78 of their limit; 5% is reached near t = 24")
def test_h_ratio_within_five_percent_at_t8():
    assert all(abs(r - 1) <= 0.05 for r in _h_ratio(8.0))


def test_h_ratio_converges_to_blocking_factor():
    prev = None
    for t in (4.0, 8.0, 16.0, 24.0):
        dev = max(abs(r - 1) for r in _h_ratio(t))
        if prev is not None:
            assert dev < prev
        prev = dev
    assert prev <= 0.05
