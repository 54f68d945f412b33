"""Sampling bridges from O back to O on [0, t].

Three samplers are provided:

* rejection: run the process from O and keep the path iff X_t = O;
* duality: for p > 1/2, rejection-sample at 1 - p, where returns are
  frequent, and use the paths as they are (the two bridge laws coincide);
* h-transform: an exact sampler of the bridge on the truncated space
  D <= N, drawing the number of uniformization epochs given the
  endpoint and then each epoch's transition weighted by the probability
  of still reaching O in the remaining epochs.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from numba import njit

from .core import ORIGIN
from .exact import (
    UNDERFLOW,
    BridgeUnreachable,
    enumerate_space,
    generator_for,
    poisson_weights,
)
from .simulate import (
    RngStream,
    StreamLike,
    Trajectory,
    _rejection,
    as_generator,
    empty_trajectory,
    trajectory_stats,
    worker_count,
)

DEFAULT_ATTEMPT_CAP = 10_000_000
MAX_CACHE_ENTRIES = 60_000_000


class Method(str, Enum):
    REJECTION = "rejection"
    DUALITY = "duality"
    HTRANSFORM = "htransform"


class RejectionCapExceeded(RuntimeError):
    """No accepted path within the attempt cap."""

    def __init__(self, attempts: int, p: float, t: float):
        super().__init__(f"no return to O in {attempts} attempts (p={p}, t={t})")
        self.attempts = attempts


@dataclass
class BridgeRequest:
    p: float
    t: float
    method: Method = Method.REJECTION
    N: int | None = None
    samples: int = 1
    stream: RngStream = field(default_factory=lambda: RngStream(0))
    attempt_cap: int = DEFAULT_ATTEMPT_CAP

    def __post_init__(self):
        self.method = Method(self.method)
        if not 0.0 < self.p < 1.0:
            raise ValueError("p must lie in (0, 1)")
        if self.method is Method.DUALITY and not self.p > 0.5:
            raise ValueError("the duality method requires p > 1/2")
        if self.method is Method.HTRANSFORM and self.N is None:
            raise ValueError("the h-transform method needs a truncation N")


@dataclass
class BridgeStats:
    max_D: np.ndarray
    max_M: np.ndarray
    particle_max: np.ndarray
    acceptance_rate: float | None = None

    @property
    def displacement_max(self) -> np.ndarray:
        """Per-sample maximum displacement of particles 1..k (columns)."""
        k = np.arange(1, self.particle_max.shape[1] + 1)
        return self.particle_max + k

    def summary(self, qs: Sequence[float] = (0.1, 0.5, 0.9)) -> dict[str, float | int]:
        out: dict[str, float | int] = {"samples": len(self.max_D)}
        for name, arr in (("max_D", self.max_D), ("max_M", self.max_M)):
            arr = np.asarray(arr, dtype=float)
            out[f"{name}_mean"] = float(arr.mean()) if len(arr) else float("nan")
            out[f"{name}_se"] = float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else float("nan")
            for q in qs:
                out[f"{name}_q{int(round(100 * q)):02d}"] = float(np.quantile(arr, q)) if len(arr) else float("nan")
        if self.acceptance_rate is not None:
            out["acceptance_rate"] = self.acceptance_rate
        return out


# -- rejection ---------------------------------------------------------------


def _rejection_once(p: float, t: float, rng: np.random.Generator, attempt_cap: int) -> tuple[Trajectory, int]:
    if t == 0:
        return empty_trajectory(0.0), 1
    attempts, times, dirs, ks = _rejection(rng, float(p), float(t), int(attempt_cap))
    if attempts < 0:
        raise RejectionCapExceeded(-attempts, p, t)
    return Trajectory(ORIGIN, times, dirs, ks, float(t)), int(attempts)


def sample_bridge_rejection(p: float, t: float, stream: StreamLike,
                            attempt_cap: int = DEFAULT_ATTEMPT_CAP) -> Trajectory:
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    return _rejection_once(p, t, as_generator(stream), attempt_cap)[0]


# -- h-transform sampler -----------------------------------------------------


@njit(cache=True, nogil=True)
def _ffbs(rng, epoch_cdf, indptr, indices, off_prob, self_prob, move_dir, move_k, V, t):
    u = rng.random()
    k = np.searchsorted(epoch_cdf, u, side="right")
    if k >= len(epoch_cdf):
        k = len(epoch_cdf) - 1
    stamps = np.sort(rng.random(k) * t)
    times = np.empty(k, dtype=np.float64)
    dirs = np.empty(k, dtype=np.int8)
    ks = np.empty(k, dtype=np.int64)
    n = 0
    x = 0
    for j in range(k):
        row = V[k - j - 1]
        stay = self_prob[x] * row[x]
        total = stay
        for e in range(indptr[x], indptr[x + 1]):
            total += off_prob[e] * row[indices[e]]
        u = rng.random() * total
        if u < stay:
            continue
        acc = stay
        chosen = indptr[x + 1] - 1
        for e in range(indptr[x], indptr[x + 1]):
            acc += off_prob[e] * row[indices[e]]
            if u < acc:
                chosen = e
                break
        # guard against rounding landing on a zero-weight edge
        while off_prob[chosen] * row[indices[chosen]] <= 0.0 and chosen > indptr[x]:
            chosen -= 1
        times[n] = stamps[j]
        dirs[n] = move_dir[chosen]
        ks[n] = move_k[chosen]
        n += 1
        x = indices[chosen]
    return times[:n].copy(), dirs[:n].copy(), ks[:n].copy(), x


class HTransformSampler:
    """Exact sampler of the bridge of the process killed on leaving D <= N.

    The vectors ``V[r] = P^r 1_O`` of the uniformized kernel are built
    once and shared read-only by every draw.
    """

    def __init__(self, p: float, t: float, N: int, tol: float = 1e-12,
                 max_cache_entries: int = MAX_CACHE_ENTRIES):
        if not 0.0 < p < 1.0:
            raise ValueError("p must lie in (0, 1)")
        self.p, self.t, self.N = float(p), float(t), int(N)
        space = enumerate_space(N)
        Q = generator_for(space, p)
        self.space, self.Q = space, Q
        w = poisson_weights(Q.Lambda * t, tol)
        if len(w) * len(space) > max_cache_entries:
            raise MemoryError(
                f"epoch cache would hold {len(w)} x {len(space)} entries; reduce t or N"
            )
        V = np.empty((len(w), len(space)))
        h = np.zeros(len(space))
        h[0] = 1.0
        V[0] = h
        for r in range(1, len(w)):
            h = Q.backward_step(h)
            np.maximum(h, 0.0, out=h)
            V[r] = h
        self.V = V
        post = w * V[:, 0]
        z = post.sum()
        if not z > UNDERFLOW:
            raise BridgeUnreachable(
                f"P(X_t = O) = {z:.3g} underflows at p={p}, t={t}; use a smaller t or looser tol"
            )
        self.return_probability = float(z)
        self.epoch_cdf = np.cumsum(post / z)
        self.off_prob = Q.rates / Q.Lambda
        self.self_prob = 1.0 + Q.diag / Q.Lambda

    def sample(self, stream: StreamLike) -> Trajectory:
        if self.t == 0:
            return empty_trajectory(0.0)
        Q = self.Q
        times, dirs, ks, x = _ffbs(
            as_generator(stream), self.epoch_cdf, Q.indptr, Q.indices, self.off_prob,
            self.self_prob, Q.move_dir, Q.move_k, self.V, self.t,
        )
        if x != 0:  # pragma: no cover - impossible when V is consistent
            raise BridgeUnreachable("sampled path failed to return to O")
        return Trajectory(ORIGIN, times, dirs, ks, self.t)


@lru_cache(maxsize=4)
def htransform_sampler(p: float, t: float, N: int, tol: float = 1e-12) -> HTransformSampler:
    return HTransformSampler(p, t, N, tol)


def sample_bridge_htransform(p: float, t: float, N: int, stream: StreamLike, tol: float = 1e-12) -> Trajectory:
    return htransform_sampler(float(p), float(t), int(N), tol).sample(stream)


# -- dispatch ---------------------------------------------------------------


def _fan_out(draw: Callable[[int], object], n: int) -> list:
    workers = min(worker_count(), n)
    if workers <= 1:
        return [draw(j) for j in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(draw, range(n)))


def sample_bridges(req: BridgeRequest) -> tuple[list[Trajectory], float | None]:
    """Draw ``req.samples`` bridges; also returns the acceptance rate for rejection methods.

    Sample j always uses the substream ``req.stream.child(j)``, so results
    do not depend on how many threads run them.
    """
    p, t = req.p, req.t
    if req.method is Method.HTRANSFORM:
        sampler = htransform_sampler(float(p), float(t), int(req.N))
        trs = _fan_out(lambda j: sampler.sample(req.stream.child(j)), req.samples)
        return trs, None
    if req.method is Method.DUALITY:
        p_run = 1.0 - p
    else:
        p_run = p
        if p >= 0.5:
            warnings.warn(
                f"rejection sampling at p={p} >= 1/2: acceptance decays with t",
                RuntimeWarning,
                stacklevel=2,
            )
    out = _fan_out(
        lambda j: _rejection_once(p_run, t, req.stream.child(j).generator(), req.attempt_cap),
        req.samples,
    )
    trs = [tr for tr, _ in out]
    attempts = sum(a for _, a in out)
    return trs, (len(trs) / attempts if attempts else None)


def sample_bridge(req: BridgeRequest) -> list[Trajectory]:
    return sample_bridges(req)[0]


# -- analysis -----------------------------------------------------------------


def reverse(tr: Trajectory) -> Trajectory:
    """Time reversal: events at t_end - s in reverse order, directions flipped."""
    if tr.final() != tr.initial:
        raise ValueError("only paths that end at their initial state can be reversed")
    return Trajectory(
        tr.initial,
        (tr.t_end - tr.times[::-1]).copy(),
        (-tr.dirs[::-1]).astype(np.int8),
        tr.ks[::-1].copy(),
        tr.t_end,
    )


def ensemble_stats(trs: Sequence[Trajectory], n_particles: int = 5,
                   acceptance_rate: float | None = None) -> BridgeStats:
    max_D = np.empty(len(trs), dtype=np.int64)
    max_M = np.empty(len(trs), dtype=np.int64)
    pmax = np.empty((len(trs), n_particles), dtype=np.int64)
    for i, tr in enumerate(trs):
        if tr.initial.parts:
            raise ValueError(f"trajectory {i} does not start at O")
        st = trajectory_stats(tr, n_particles)
        if st.D_end != 0:
            raise ValueError(f"trajectory {i} does not end at O")
        max_D[i] = st.max_D
        max_M[i] = st.max_M
        pmax[i] = st.particle_max[:n_particles]
    return BridgeStats(max_D=max_D, max_M=max_M, particle_max=pmax, acceptance_rate=acceptance_rate)


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    intercept: float
    model: str


def scaling_fit(points: Sequence[tuple[float, float]], model: str = "logt") -> ScalingFit:
    """Ordinary least squares of the statistic on log t ("logt") or on t ("linear")."""
    model = model.lower()
    if model not in ("logt", "linear"):
        raise ValueError(f"unknown model {model!r}")
    if len(points) < 3:
        raise ValueError("need at least three points")
    ts = np.array([float(a) for a, _ in points])
    ys = np.array([float(b) for _, b in points])
    if len(np.unique(ts)) != len(ts):
        raise ValueError("abscissae must be distinct")
    if model == "logt":
        if np.any(ts <= 0):
            raise ValueError("log-t model needs positive times")
        xs = np.log(ts)
    else:
        xs = ts
    xc = xs - xs.mean()
    sxx = float(np.dot(xc, xc))
    if sxx == 0.0:
        raise ValueError("degenerate abscissae")
    slope = float(np.dot(xc, ys - ys.mean()) / sxx)
    return ScalingFit(slope=slope, intercept=float(ys.mean() - slope * xs.mean()), model=model)
