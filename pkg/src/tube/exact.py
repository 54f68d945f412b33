"""Exact transient and bridge computations on the truncated space D(x) <= N.

Transient and bridge quantities use an absorbing boundary: a right jump
out of a state at distance N kills the path.  The killed generator keeps
the full outflow ``p(J+1) + (1-p)J`` on its diagonal, so path weights of
surviving paths are exactly those of the infinite system and the
identities relating p and 1-p, or the square-sum identity at p = 1/2,
hold exactly on the truncated space.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.stats import poisson

from .core import Configuration, dominates, partition_count

DEFAULT_MAX_STATES = 5_000_000
MAX_SERIES_TERMS = 2_000_000
UNDERFLOW = 1e-300

RIGHT = 1
LEFT = -1


class StateSpaceTooLarge(MemoryError):
    pass


class SeriesLengthError(RuntimeError):
    def __init__(self, required: int, cap: int):
        super().__init__(f"uniformization needs {required} terms (cap {cap})")
        self.required = required
        self.cap = cap


class BridgeUnreachable(FloatingPointError):
    pass


class StationaryError(RuntimeError):
    pass


def _accel_asc(n: int):
    # Kelleher's ascending-composition generator
    a = [0] * (n + 1)
    k = 1
    y = n - 1
    while k != 0:
        x = a[k - 1] + 1
        k -= 1
        while 2 * x <= y:
            a[k] = x
            y -= x
            k += 1
        l = k + 1
        while x <= y:
            a[k] = x
            a[l] = y
            yield a[: k + 2]
            x += 1
            y -= 1
        a[k] = x + y
        y = x + y - 1
        yield a[: k + 1]


def _shell(n: int) -> list[tuple[int, ...]]:
    if n == 0:
        return [()]
    shell = [tuple(reversed(c)) for c in _accel_asc(n)]
    shell.sort()
    return shell


def space_size(N: int) -> int:
    return sum(partition_count(n) for n in range(N + 1))


@dataclass(eq=False)
class StateSpace:
    N: int
    parts: list[tuple[int, ...]]
    index: dict[tuple[int, ...], int]
    D: np.ndarray
    J: np.ndarray
    M: np.ndarray

    def __len__(self) -> int:
        return len(self.parts)

    @property
    def states(self) -> list[Configuration]:
        cached = self.__dict__.get("_states")
        if cached is None:
            cached = [Configuration(p) for p in self.parts]
            self.__dict__["_states"] = cached
        return cached

    def index_of(self, x: Configuration | Sequence[int]) -> int:
        key = x.parts if isinstance(x, Configuration) else tuple(x)
        return self.index[key]

    def checksum(self) -> str:
        h = hashlib.sha256()
        for p in self.parts:
            h.update(struct.pack(f"<I{len(p)}I", len(p), *p))
        return h.hexdigest()


def enumerate_space(N: int, max_states: int = DEFAULT_MAX_STATES) -> StateSpace:
    """All configurations with D <= N, ordered by D and then lexicographically."""
    if N < 0:
        raise ValueError("N must be nonnegative")
    size = space_size(N)
    if size > max_states:
        raise StateSpaceTooLarge(
            f"N={N} gives {size} states, above the budget of {max_states}"
        )
    return _enumerate_cached(N)


@lru_cache(maxsize=4)
def _enumerate_cached(N: int) -> StateSpace:
    parts: list[tuple[int, ...]] = []
    for n in range(N + 1):
        parts.extend(_shell(n))
    index = {p: i for i, p in enumerate(parts)}
    D = np.fromiter((sum(p) for p in parts), dtype=np.int64, count=len(parts))
    J = np.fromiter((len(set(p)) for p in parts), dtype=np.int64, count=len(parts))
    M = np.fromiter((p[0] - 1 if p else -1 for p in parts), dtype=np.int64, count=len(parts))
    return StateSpace(N=N, parts=parts, index=index, D=D, J=J, M=M)


@dataclass(frozen=True)
class _Structure:
    """Transition structure of a space, independent of p.

    Rows are laid out in CSR order with moves in the order of
    ``core.enumerate_moves``; right jumps that leave the space are counted
    in ``exits`` instead.
    """

    indptr: np.ndarray
    indices: np.ndarray
    move_dir: np.ndarray
    move_k: np.ndarray
    exits: np.ndarray


@lru_cache(maxsize=4)
def _structure(space: StateSpace) -> _Structure:
    index = space.index
    N = space.N
    indptr = [0]
    indices: list[int] = []
    dirs: list[int] = []
    ks: list[int] = []
    exits = np.zeros(len(space), dtype=np.int64)
    for i, b in enumerate(space.parts):
        m = len(b)
        at_edge = sum(b) == N
        for k in range(1, m + 2):
            bk = b[k - 1] if k <= m else 0
            if k == 1 or bk < b[k - 2]:
                if at_edge:
                    exits[i] += 1
                else:
                    if k <= m:
                        y = b[: k - 1] + (bk + 1,) + b[k:]
                    else:
                        y = b + (1,)
                    indices.append(index[y])
                    dirs.append(RIGHT)
                    ks.append(k)
            if k <= m and bk > (b[k] if k < m else 0):
                if bk == 1:
                    y = b[: k - 1]
                else:
                    y = b[: k - 1] + (bk - 1,) + b[k:]
                indices.append(index[y])
                dirs.append(LEFT)
                ks.append(k)
        indptr.append(len(indices))
    return _Structure(
        indptr=np.asarray(indptr, dtype=np.int64),
        indices=np.asarray(indices, dtype=np.int64),
        move_dir=np.asarray(dirs, dtype=np.int8),
        move_k=np.asarray(ks, dtype=np.int64),
        exits=exits,
    )


@dataclass(eq=False)
class RateMatrix:
    p: float
    N: int
    indptr: np.ndarray
    indices: np.ndarray
    rates: np.ndarray
    move_dir: np.ndarray
    move_k: np.ndarray
    diag: np.ndarray
    absorb: np.ndarray
    Lambda: float
    reflecting: bool = False
    offdiag: sp.csr_matrix = field(init=False, repr=False)
    offdiag_T: sp.csr_matrix = field(init=False, repr=False)

    def __post_init__(self):
        n = len(self.diag)
        self.offdiag = sp.csr_matrix((self.rates, self.indices, self.indptr), shape=(n, n))
        self.offdiag_T = self.offdiag.T.tocsr()

    def outflow(self) -> np.ndarray:
        return -self.diag

    def dense(self) -> np.ndarray:
        return self.offdiag.toarray() + np.diag(self.diag)

    def forward_step(self, v: np.ndarray) -> np.ndarray:
        """Row vector times the uniformized kernel I + Q/Lambda."""
        return v + (self.offdiag_T @ v + self.diag * v) / self.Lambda

    def backward_step(self, h: np.ndarray) -> np.ndarray:
        """Uniformized kernel times a column vector."""
        return h + (self.offdiag @ h + self.diag * h) / self.Lambda


def uniformization_rate(p: float, N: int) -> float:
    j_max = math.isqrt(2 * N)
    return p * (j_max + 1) + (1.0 - p) * j_max


def build_generator(space: StateSpace, p: float, reflecting: bool = False) -> RateMatrix:
    """Sparse generator of the exclusion process on the truncated space.

    With ``reflecting=False`` right jumps out of the space are absorbed
    (they stay on the diagonal); with ``reflecting=True`` they are
    suppressed.
    """
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    s = _structure(space)
    rates = np.where(s.move_dir == RIGHT, p, 1.0 - p).astype(np.float64)
    absorb = p * s.exits.astype(np.float64)
    out = np.add.reduceat(rates, s.indptr[:-1]) if len(rates) else np.zeros(len(space))
    # reduceat misreports empty rows; only the N=0 space has one
    out = np.where(np.diff(s.indptr) == 0, 0.0, out)
    if reflecting:
        absorb = np.zeros_like(absorb)
    diag = -(out + absorb)
    return RateMatrix(
        p=p,
        N=space.N,
        indptr=s.indptr,
        indices=s.indices,
        rates=rates,
        move_dir=s.move_dir,
        move_k=s.move_k,
        diag=diag,
        absorb=absorb,
        Lambda=max(uniformization_rate(p, space.N), float(-diag.min(initial=0.0)), 1e-12),
        reflecting=reflecting,
    )


@dataclass
class DistVector:
    weights: np.ndarray
    defect: float = 0.0

    @property
    def total(self) -> float:
        return float(self.weights.sum()) + self.defect


def point_mass(space: StateSpace, x: Configuration | None = None) -> DistVector:
    w = np.zeros(len(space))
    w[0 if x is None else space.index_of(x)] = 1.0
    return DistVector(w, 0.0)


def poisson_weights(mu: float, tol: float, cap: int = MAX_SERIES_TERMS) -> np.ndarray:
    """Poisson(mu) probabilities for 0..K with right-tail mass below tol."""
    if mu == 0.0:
        return np.ones(1)
    K = int(poisson.isf(tol, mu)) + 1
    while poisson.sf(K, mu) > tol:
        K += 1
    if K + 1 > cap:
        raise SeriesLengthError(K + 1, cap)
    return poisson.pmf(np.arange(K + 1), mu)


def transient(space: StateSpace, Q: RateMatrix, init: DistVector, t: float, tol: float = 1e-12) -> DistVector:
    """Law of X_t killed on leaving the space, by uniformization."""
    if t < 0 or tol <= 0:
        raise ValueError("need t >= 0 and tol > 0")
    if t == 0:
        return DistVector(init.weights.copy(), init.defect)
    w = poisson_weights(Q.Lambda * t, tol)
    v = init.weights.astype(np.float64, copy=True)
    mass0 = v.sum()
    out = w[0] * v
    lost = 0.0
    for k in range(1, len(w)):
        v = Q.forward_step(v)
        out += w[k] * v
        lost += w[k] * (mass0 - v.sum())
    np.maximum(out, 0.0, out=out)
    return DistVector(out, init.defect + lost)


@lru_cache(maxsize=8)
def generator_for(space: StateSpace, p: float) -> RateMatrix:
    """Absorbing generator for (space, p), memoized per space object."""
    return build_generator(space, p)


def _generator(N: int, p: float) -> RateMatrix:
    return generator_for(enumerate_space(N), p)


def return_probability_with_defect(p: float, t: float, N: int, tol: float = 1e-12) -> tuple[float, float]:
    space = enumerate_space(N)
    dist = transient(space, _generator(N, p), point_mass(space), t, tol)
    return float(dist.weights[0]), dist.defect


def return_probability(p: float, t: float, N: int, tol: float = 1e-12) -> float:
    """P(X_t = O and D stays <= N on [0, t]), a lower bound for P(X_t = O)."""
    return return_probability_with_defect(p, t, N, tol)[0]


def backward_h(space: StateSpace, p: float, t: float, grid: Sequence[float], tol: float = 1e-12) -> np.ndarray:
    """Rows h_s(x) = P(X_t = O, no exit | X_s = x) for each s in grid."""
    grid = np.asarray(grid, dtype=float)
    if np.any(grid < 0) or np.any(grid > t):
        raise ValueError("grid times must lie in [0, t]")
    Q = generator_for(space, p)
    taus = t - grid
    weights = [poisson_weights(Q.Lambda * tau, tol) for tau in taus]
    K = max(len(w) for w in weights)
    h = np.zeros(len(space))
    h[0] = 1.0
    out = np.zeros((len(grid), len(space)))
    for k in range(K):
        if k:
            h = Q.backward_step(h)
        for g, w in enumerate(weights):
            if k < len(w):
                out[g] += w[k] * h
    np.maximum(out, 0.0, out=out)
    return out


def bridge_marginal(space: StateSpace, p: float, t: float, s: float, tol: float = 1e-12) -> DistVector:
    """Law of X_s for the truncated bridge from O to O on [0, t]."""
    if not 0 <= s <= t:
        raise ValueError("need 0 <= s <= t")
    Q = generator_for(space, p)
    fwd = transient(space, Q, point_mass(space), s, tol).weights
    h = backward_h(space, p, t, [s], tol)[0]
    joint = fwd * h
    z = joint.sum()
    if not z > UNDERFLOW:
        raise BridgeUnreachable(f"bridge normalizer {z:.3g} underflows at p={p}, t={t}")
    return DistVector(joint / z, 0.0)


def h_monotonicity_violations(p: float, t: float, N: int, tol: float = 1e-12,
                              rtol: float = 1e-12) -> tuple[int, int]:
    """Count pairs y ≼ x in the D <= N space with h(x) > h(y), h(x) = P^x(X_t = O).

    Returns (violations, comparable pairs checked).  ``rtol`` absorbs
    rounding in the uniformization sum.
    """
    space = enumerate_space(N)
    h = backward_h(space, p, t, [0.0], tol)[0]
    states = space.states
    bad = checked = 0
    for i, x in enumerate(states):
        for j, y in enumerate(states):
            if i != j and space.D[j] <= space.D[i] and dominates(x, y):
                checked += 1
                if h[i] > h[j] + rtol * max(h[i], h[j]):
                    bad += 1
    return bad, checked


def duality_check(p: float, t: float, N: int, tol: float = 1e-12) -> tuple[float, float, float]:
    """(P_p, P_{1-p}, relative residual of P_p e^{(2p-1)t} = P_{1-p}) on the D <= N space."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    P_p = return_probability(p, t, N, tol)
    if p == 0.5:
        return P_p, P_p, 0.0
    P_q = return_probability(1.0 - p, t, N, tol)
    return P_p, P_q, abs(P_p * math.exp((2 * p - 1) * t) - P_q) / P_q


def duality_residual(p: float, t: float, N: int, tol: float = 1e-12) -> float:
    return duality_check(p, t, N, tol)[2]


def square_sum_check(t: float, N: int, tol: float = 1e-12) -> tuple[float, float, float]:
    """(P(X_t = O), sum_x P(X_{t/2} = x)^2, relative residual) for p = 1/2 on the D <= N space."""
    space = enumerate_space(N)
    Q = _generator(N, 0.5)
    half = transient(space, Q, point_mass(space), t / 2, tol).weights
    full = transient(space, Q, point_mass(space), t, tol).weights[0]
    sq = float(np.dot(half, half))
    return float(full), sq, abs(full - sq) / full


def square_sum_residual(t: float, N: int, tol: float = 1e-12) -> float:
    return square_sum_check(t, N, tol)[2]


def truncated_stationary(space: StateSpace, p: float, residual_tol: float = 1e-12) -> DistVector:
    """Stationary law of the reflecting truncated chain (boundary right jumps suppressed)."""
    if not 0.0 < p < 0.5:
        raise ValueError("stationary mass is only meaningful for p < 1/2")
    Q = build_generator(space, p, reflecting=True)
    n = len(space)
    A = (Q.offdiag_T + sp.diags(Q.diag)).tolil()
    A[n - 1, :] = np.ones(n)
    b = np.zeros(n)
    b[n - 1] = 1.0
    pi = spla.spsolve(A.tocsr(), b)
    residual = np.abs(Q.offdiag_T @ pi + Q.diag * pi).max()
    if not residual <= residual_tol or not np.all(pi > 0):
        raise StationaryError(f"stationary solve failed (residual {residual:.3g})")
    return DistVector(pi, 0.0)


def auto_truncation(p: float, t: float, max_defect: float = 1e-6, start: int | None = None,
                    max_states: int = DEFAULT_MAX_STATES, tol: float = 1e-12) -> int:
    """An even N whose absorbed defect at time t is below max_defect.

    The defect is nonincreasing in N, so the search steps up by 4 from a
    drift-based guess and then checks the even N just below.  The result
    is minimal among even N at or above the starting guess.
    """
    if start is None:
        start = 2 * max(2, int(max(p, 0.5) * t / 2))

    def ok(N: int) -> bool:
        if space_size(N) > max_states:
            raise StateSpaceTooLarge(f"defect {max_defect} not reached within the state budget")
        return return_probability_with_defect(p, t, N, tol)[1] < max_defect

    N = start
    while not ok(N):
        N += 4
    if N - 2 >= start and ok(N - 2):
        N -= 2
    return N


def bridge_truncation(p: float, t: float, rtol: float = 1e-6, start: int = 4,
                      max_states: int = 200_000, tol: float = 1e-12) -> int:
    """Smallest N (stepping by 2) at which the truncated return probability has settled.

    The bridge law on the truncated space differs from the full bridge by
    the relative mass of returning paths that exit, which this bounds by
    the relative change from N to N + 2.
    """
    N = start
    prev = return_probability(p, t, N, tol)
    while True:
        if space_size(N + 2) > max_states:
            return N
        cur = return_probability(p, t, N + 2, tol)
        if cur - prev <= rtol * cur:
            return N
        N += 2
        prev = cur


# -- on-disk cache ---------------------------------------------------------

_MAGIC = b"TUBESPC\x00"
_FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIIdQ32s")


class CacheError(ValueError):
    pass


def _write_array(fh, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr)
    code = arr.dtype.str.encode()
    fh.write(struct.pack("<B", len(code)))
    fh.write(code)
    fh.write(struct.pack("<Q", arr.size))
    fh.write(arr.tobytes())


def _read_array(fh) -> np.ndarray:
    (n_code,) = struct.unpack("<B", fh.read(1))
    dtype = np.dtype(fh.read(n_code).decode())
    (size,) = struct.unpack("<Q", fh.read(8))
    buf = fh.read(size * dtype.itemsize)
    if len(buf) != size * dtype.itemsize:
        raise CacheError("truncated cache file")
    return np.frombuffer(buf, dtype=dtype).copy()


def save_cache(path: str | Path, space: StateSpace, Q: RateMatrix) -> None:
    """Write a space and its generator to a versioned binary file."""
    lengths = np.fromiter((len(p) for p in space.parts), dtype=np.int64, count=len(space))
    flat = np.fromiter((b for p in space.parts for b in p), dtype=np.int64, count=int(lengths.sum()))
    digest = bytes.fromhex(space.checksum())
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _FORMAT_VERSION, space.N, Q.p, len(space), digest))
        fh.write(struct.pack("<?d", Q.reflecting, Q.Lambda))
        for arr in (lengths, flat, Q.indptr, Q.indices, Q.rates, Q.move_dir, Q.move_k, Q.diag, Q.absorb):
            _write_array(fh, arr)


def load_cache(path: str | Path) -> tuple[StateSpace, RateMatrix]:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) != _HEADER.size:
            raise CacheError("truncated header")
        magic, version, N, p, count, digest = _HEADER.unpack(raw)
        if magic != _MAGIC:
            raise CacheError("not a space cache file")
        if version != _FORMAT_VERSION:
            raise CacheError(f"unsupported cache format version {version}")
        reflecting, Lambda = struct.unpack("<?d", fh.read(9))
        lengths, flat, indptr, indices, rates, move_dir, move_k, diag, absorb = (
            _read_array(fh) for _ in range(9)
        )
    if len(lengths) != count:
        raise CacheError("state count does not match header")
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    parts = [tuple(int(b) for b in flat[offsets[i]:offsets[i + 1]]) for i in range(count)]
    index = {q: i for i, q in enumerate(parts)}
    space = StateSpace(
        N=N,
        parts=parts,
        index=index,
        D=np.fromiter((sum(q) for q in parts), dtype=np.int64, count=count),
        J=np.fromiter((len(set(q)) for q in parts), dtype=np.int64, count=count),
        M=np.fromiter((q[0] - 1 if q else -1 for q in parts), dtype=np.int64, count=count),
    )
    if space.checksum() != digest.hex():
        raise CacheError("state list checksum mismatch")
    Q = RateMatrix(p=p, N=N, indptr=indptr, indices=indices, rates=rates, move_dir=move_dir,
                   move_k=move_k, diag=diag, absorb=absorb, Lambda=Lambda, reflecting=reflecting)
    return space, Q
