"""Blocking measures and the constants governing return probabilities.

For p < 1/2 the product measure with site-i density
``r_i = 1 / (1 + ((1-p)/p)**i)`` is stationary.  Conditioning it on
``N+ = N-`` (particles at nonnegative sites = holes at negative sites)
gives the stationary law of the process started from O, under which a
configuration has weight proportional to ``(p/(1-p))**D(x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .core import Configuration, from_occupancy
from .simulate import StreamLike, as_generator


class DivergentProduct(ValueError):
    pass


def blocking_site_prob(p: float, i: int) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    if p == 0.5:
        raise ValueError("no blocking measure at p = 1/2")
    # 1 / (1 + e^x) with x = i log((1-p)/p), evaluated without overflow
    return float(special.expit(-i * math.log((1.0 - p) / p)))


def c_of_p(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    if p == 0.5:
        raise ValueError("c(p) is undefined at p = 1/2")
    return 1.0 / abs(math.log((1.0 - p) / p))


@dataclass(frozen=True)
class BlockingSpec:
    p: float
    L: int
    epsilon: float

    @property
    def ratio(self) -> float:
        return self.p / (1.0 - self.p)


def blocking_spec(p: float, epsilon: float = 1e-10) -> BlockingSpec:
    """Smallest window [-L, L] outside which the measure differs from O with mass < epsilon.

    Outside the window a site differs from the step profile with
    probability r_|i| <= rho^|i| on either side, so the bound
    2 rho^(L+1) / (1 - rho) certifies the tail.
    """
    if not 0.0 < p < 0.5:
        raise ValueError("blocking windows are built for p < 1/2")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    rho = p / (1.0 - p)
    L = 0
    while 2.0 * rho ** (L + 1) / (1.0 - rho) >= epsilon:
        L += 1
    return BlockingSpec(p=p, L=L, epsilon=epsilon)


def tail_bound(spec: BlockingSpec) -> float:
    rho = spec.ratio
    return 2.0 * rho ** (spec.L + 1) / (1.0 - rho)


@dataclass
class SurplusDistribution:
    """Law of N+ - N- over the window, indexed from ``lo``."""

    lo: int
    probs: np.ndarray
    defect: float

    def __getitem__(self, k: int) -> float:
        i = k - self.lo
        return float(self.probs[i]) if 0 <= i < len(self.probs) else 0.0

    @property
    def values(self) -> np.ndarray:
        return np.arange(self.lo, self.lo + len(self.probs))


def surplus_distribution(spec: BlockingSpec) -> SurplusDistribution:
    """Exact law of N+ - N- restricted to sites [-L, L] under the blocking measure."""
    p, L = spec.p, spec.L
    # index 0 of `dist` is surplus -L
    dist = np.zeros(2 * L + 2)
    dist[L] = 1.0
    for i in range(0, L + 1):
        r = blocking_site_prob(p, i)
        shifted = np.zeros_like(dist)
        shifted[1:] = dist[:-1]
        dist = (1.0 - r) * dist + r * shifted
    for j in range(1, L + 1):
        hole = 1.0 - blocking_site_prob(p, -j)
        shifted = np.zeros_like(dist)
        shifted[:-1] = dist[1:]
        dist = (1.0 - hole) * dist + hole * shifted
    return SurplusDistribution(lo=-L, probs=dist, defect=tail_bound(spec))


def log_mu_origin(p: float, L: int) -> float:
    """log mu_p(O) from the product over sites in [-L, L]."""
    total = 0.0
    for i in range(0, L + 1):
        total += math.log1p(-blocking_site_prob(p, i))
    for j in range(1, L + 1):
        total += math.log(blocking_site_prob(p, -j))
    return total


def alpha(p: float, epsilon: float = 1e-10) -> float:
    """Stationary mass of O under the blocking measure conditioned to N+ = N-."""
    if not 0.0 < p < 0.5:
        raise ValueError("alpha is defined for p < 1/2")
    spec = blocking_spec(p, epsilon / 4.0)
    mu_o = math.exp(log_mu_origin(p, spec.L))
    return mu_o / surplus_distribution(spec)[0]


def sample_blocking_conditioned(
    p: float,
    spec: BlockingSpec,
    stream: StreamLike,
    size: int | None = None,
    cap: int = 1_000_000,
    batch: int = 4096,
):
    """Draw from the blocking measure conditioned on N+ = N- by rejection.

    Sites in [-L, L] are sampled independently; outside the window the
    step profile is assumed (error at most the certified tail bound).
    Returns one configuration, or a list of ``size`` of them.
    """
    if not 0.0 < p < 0.5:
        raise ValueError("sampling is defined for p < 1/2")
    rng = as_generator(stream)
    L = spec.L
    sites = np.arange(-L, L + 1)
    dens = np.array([blocking_site_prob(p, int(i)) for i in sites])
    nonneg = sites >= 0
    want = 1 if size is None else size
    out: list[Configuration] = []
    tried = 0
    while len(out) < want:
        if tried >= cap:
            raise RuntimeError(
                f"acceptance cap reached: {len(out)} accepted in {tried} attempts "
                f"(rate {len(out) / max(tried, 1):.3g})"
            )
        n = min(batch, cap - tried)
        occ = rng.random((n, len(sites))) < dens
        surplus = occ[:, nonneg].sum(axis=1) - (~occ[:, ~nonneg]).sum(axis=1)
        tried += n
        for row in occ[surplus == 0]:
            out.append(from_occupancy(row.astype(int).tolist(), -L))
            if len(out) == want:
                break
    return out[0] if size is None else out


def exp_moment_bound(p: float, c: float, rtol: float = 1e-12) -> float:
    """The product prod_{i>0} (1 + (p e^{1/c} / (1-p))^i).

    Finite exactly when c > c(p); bounds E exp(S+/c) under the blocking measure.
    """
    if not 0.0 < p < 0.5:
        raise ValueError("the bound is stated for p < 1/2")
    if not c > 0:
        raise DivergentProduct("c must be positive")
    q = p * math.exp(1.0 / c) / (1.0 - p)
    if q >= 1.0:
        raise DivergentProduct(
            f"c={c:.6g} <= c(p)={c_of_p(p):.6g}: the product diverges"
        )
    total = 0.0
    i = 1
    term = q
    # remaining log-sum after index i is at most q^(i+1)/(1-q)
    while True:
        total += math.log1p(term)
        if term * q / (1.0 - q) <= rtol * 0.5:
            break
        i += 1
        term = q ** i
    return math.exp(total)


def reflecting_walk_pi(p: float, i: int) -> float:
    if not 0.0 < p < 0.5:
        raise ValueError("the reflecting walk is positive recurrent only for p < 1/2")
    if i < 0:
        raise ValueError("i must be nonnegative")
    rho = p / (1.0 - p)
    return (1.0 - 2.0 * p) / (1.0 - p) * rho ** i


def _neg_log_phi(x: float) -> float:
    return -float(special.log_ndtr(x))


def theorem_constants(tol: float = 1e-10) -> tuple[float, float]:
    """The constants pi/sqrt(6) and the integral of -log Phi over [0, inf).

    The integral is split at 8: adaptive quadrature below, and above it
    the bound -log Phi(x) <= Q(x)/Phi(8) integrates to at most
    (phi(8) - 8 Q(8)) / Phi(8), which is far below any useful tol.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    c = math.pi / math.sqrt(6.0)
    cut = 8.0
    head, err = integrate.quad(_neg_log_phi, 0.0, cut, epsabs=tol / 4, epsrel=0.0, limit=200)
    if not err <= tol / 2:
        raise ArithmeticError(f"quadrature error estimate {err:.3g} above tol")
    q_cut = float(special.ndtr(-cut))
    phi_cut = math.exp(-cut * cut / 2) / math.sqrt(2 * math.pi)
    tail = (phi_cut - cut * q_cut) / (1.0 - q_cut)
    if tail > tol / 2:  # pragma: no cover - tail is ~1e-17
        raise ArithmeticError("tail bound exceeds tol")
    return c, head + tail / 2


def stationary_weight(p: float, D: np.ndarray | int) -> np.ndarray:
    """Unnormalized conditioned blocking weight (p/(1-p))^D."""
    return (p / (1.0 - p)) ** np.asarray(D, dtype=float)
