"""Monte Carlo of the exclusion process from a configuration in partition form.

Single-process runs use a Gillespie scheme over the J+1 right moves and J
left moves available in the current state.  The basic coupling and the
stirring construction need per-site (per-edge) clocks; they run on a
finite window of sites that doubles whenever displaced material comes
within one site of its edge, which keeps them exact.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence, TextIO, Union

import numpy as np
from numba import njit

from .core import (
    ORIGIN,
    Configuration,
    ConfigurationError,
    Direction,
    Move,
    apply_move,
    dominates,
)

RIGHT = 1
LEFT = -1
_DIR_CODE = {Direction.RIGHT: RIGHT, Direction.LEFT: LEFT}
_CODE_DIR = {RIGHT: Direction.RIGHT, LEFT: Direction.LEFT}


# -- random streams --------------------------------------------------------


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream keyed by (seed, stream_id).

    Streams are Philox (counter-based) generators seeded from a
    ``SeedSequence`` whose spawn key is the stream id, so distinct ids are
    independent and equal ids replay bit-for-bit.
    """

    seed: int
    stream_id: Union[int, tuple[int, ...]] = 0

    @property
    def key(self) -> tuple[int, ...]:
        sid = self.stream_id
        return tuple(sid) if isinstance(sid, tuple) else (int(sid),)

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=self.key)
        return np.random.Generator(np.random.Philox(seq))

    def child(self, j: int) -> "RngStream":
        return RngStream(self.seed, self.key + (int(j),))


StreamLike = Union[RngStream, np.random.Generator, int]


def as_generator(stream: StreamLike) -> np.random.Generator:
    if isinstance(stream, np.random.Generator):
        return stream
    if isinstance(stream, RngStream):
        return stream.generator()
    return RngStream(int(stream)).generator()


def worker_count() -> int:
    env = os.environ.get("TUBE_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


# -- trajectories ----------------------------------------------------------


@dataclass
class Trajectory:
    initial: Configuration
    times: np.ndarray
    dirs: np.ndarray
    ks: np.ndarray
    t_end: float

    def __len__(self) -> int:
        return len(self.times)

    @classmethod
    def from_events(cls, initial: Configuration, events: Iterable[tuple[float, Move]], t_end: float) -> "Trajectory":
        events = list(events)
        return cls(
            initial=initial,
            times=np.array([t for t, _ in events], dtype=np.float64),
            dirs=np.array([_DIR_CODE[m.direction] for _, m in events], dtype=np.int8),
            ks=np.array([m.particle_index for _, m in events], dtype=np.int64),
            t_end=float(t_end),
        )

    @property
    def events(self) -> list[tuple[float, Move]]:
        return [
            (float(t), Move(_CODE_DIR[int(d)], int(k)))
            for t, d, k in zip(self.times, self.dirs, self.ks)
        ]

    def states(self) -> Iterator[tuple[float, Configuration]]:
        """Yield (time, state) at 0 and after every event."""
        x = self.initial
        yield 0.0, x
        for t, move in self.events:
            x = apply_move(x, move)
            yield t, x

    def final(self) -> Configuration:
        if len(self.times) == 0:
            return self.initial
        parts = _replay_final(np.asarray(self.initial.parts, dtype=np.int64), self.dirs, self.ks)
        return Configuration(tuple(int(b) for b in parts))

    def validate(self) -> None:
        if np.any(self.times < 0) or np.any(self.times > self.t_end):
            raise ConfigurationError("event times outside [0, t_end]")
        if np.any(np.diff(self.times) <= 0):
            raise ConfigurationError("event times must be strictly increasing")
        for _ in self.states():
            pass

    def same_path(self, other: "Trajectory") -> bool:
        return (
            self.initial == other.initial
            and self.t_end == other.t_end
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.dirs, other.dirs)
            and np.array_equal(self.ks, other.ks)
        )


def empty_trajectory(t_end: float, initial: Configuration = ORIGIN) -> Trajectory:
    return Trajectory(initial, np.empty(0), np.empty(0, np.int8), np.empty(0, np.int64), float(t_end))


@dataclass
class TrajectoryStats:
    D_end: int
    max_D: int
    max_M: int
    R: int
    L: int
    int_J: float
    int_J1: float
    particle_max: np.ndarray
    time_at_origin: float

    def displacement_max(self, k: int) -> int:
        """Largest displacement reached by particle k (1-based)."""
        if k <= len(self.particle_max):
            return int(self.particle_max[k - 1]) + k
        return 0


# -- compiled kernels ------------------------------------------------------


@njit(cache=True, nogil=True)
def _corners(b, m, out):
    J = 0
    for k in range(1, m + 1):
        if k == m or b[k - 1] > b[k]:
            out[J] = k
            J += 1
    return J


@njit(cache=True, nogil=True)
def _grow_i8(a, n):
    out = np.zeros(max(2 * len(a), n), dtype=a.dtype)
    out[: len(a)] = a
    return out


@njit(cache=True, nogil=True)
def _run(rng, b0, p, t_end, record):
    m = len(b0)
    b = np.zeros(max(16, 2 * m + 2), dtype=np.int64)
    b[:m] = b0
    cor = np.zeros(len(b), dtype=np.int64)
    cap = 64 if record else 1
    times = np.empty(cap, dtype=np.float64)
    dirs = np.empty(cap, dtype=np.int8)
    ks = np.empty(cap, dtype=np.int64)
    n = 0
    t = 0.0
    q = 1.0 - p
    while True:
        J = _corners(b, m, cor)
        right = p * (J + 1)
        total = right + q * J
        t += rng.exponential() / total
        if t > t_end:
            break
        u = rng.random() * total
        if u < right:
            i = int(u / p)
            if i > J:
                i = J
            k = 1 if i == 0 else cor[i - 1] + 1
            if k == m + 1:
                if m + 1 >= len(b):
                    b = _grow_i8(b, m + 2)
                    cor = np.zeros(len(b), dtype=np.int64)
                b[m] = 1
                m += 1
            else:
                b[k - 1] += 1
            d = 1
        else:
            i = int((u - right) / q)
            if i > J - 1:
                i = J - 1
            k = cor[i]
            b[k - 1] -= 1
            if b[k - 1] == 0:
                m -= 1
            d = -1
        if record:
            if n == len(times):
                new_t = np.empty(2 * n, dtype=np.float64)
                new_t[:n] = times
                times = new_t
                dirs = _grow_i8(dirs, 2 * n)
                ks = _grow_i8(ks, 2 * n)
            times[n] = t
            dirs[n] = d
            ks[n] = k
        n += 1
    if not record:
        n = 0
    return times[:n].copy(), dirs[:n].copy(), ks[:n].copy(), b[:m].copy()


@njit(cache=True, nogil=True)
def _rejection(rng, p, t_end, cap):
    b0 = np.zeros(0, dtype=np.int64)
    for attempt in range(1, cap + 1):
        times, dirs, ks, final = _run(rng, b0, p, t_end, True)
        if len(final) == 0:
            return attempt, times, dirs, ks
    return -cap, np.empty(0, dtype=np.float64), np.empty(0, dtype=np.int8), np.empty(0, dtype=np.int64)


@njit(cache=True, nogil=True)
def _count_returns(rng, p, t_end, attempts):
    b0 = np.zeros(0, dtype=np.int64)
    hits = 0
    for _ in range(attempts):
        _, _, _, final = _run(rng, b0, p, t_end, False)
        if len(final) == 0:
            hits += 1
    return hits


@njit(cache=True, nogil=True)
def _replay_final(b0, dirs, ks):
    m = len(b0)
    b = np.zeros(m + len(dirs) + 1, dtype=np.int64)
    b[:m] = b0
    for i in range(len(dirs)):
        k = ks[i]
        if dirs[i] > 0:
            b[k - 1] += 1
            if k == m + 1:
                m += 1
        else:
            b[k - 1] -= 1
            if b[k - 1] == 0:
                m -= 1
    return b[:m].copy()


@njit(cache=True, nogil=True)
def _replay_stats(b0, times, dirs, ks, t_end, n_track):
    m = len(b0)
    size = m + len(dirs) + 2
    b = np.zeros(size, dtype=np.int64)
    b[:m] = b0
    cor = np.zeros(size, dtype=np.int64)
    disp_max = b.copy()
    D = 0
    for i in range(m):
        D += b[i]
    max_D = D
    max_M = (b[0] if m > 0 else 0) - 1
    m_max = m
    R = 0
    L = 0
    # compensated summation of J dt
    acc = 0.0
    comp = 0.0
    at_origin = 0.0
    last = 0.0
    J = _corners(b, m, cor)
    for i in range(len(dirs)):
        t = times[i]
        y = J * (t - last) - comp
        s = acc + y
        comp = (s - acc) - y
        acc = s
        if m == 0:
            at_origin += t - last
        last = t
        k = ks[i]
        if dirs[i] > 0:
            b[k - 1] += 1
            if k == m + 1:
                m += 1
            R += 1
            D += 1
            if b[k - 1] > disp_max[k - 1]:
                disp_max[k - 1] = b[k - 1]
        else:
            b[k - 1] -= 1
            if b[k - 1] == 0:
                m -= 1
            L += 1
            D -= 1
        if D > max_D:
            max_D = D
        front = (b[0] if m > 0 else 0) - 1
        if front > max_M:
            max_M = front
        if m > m_max:
            m_max = m
        J = _corners(b, m, cor)
    y = J * (t_end - last) - comp
    s = acc + y
    acc = s
    if m == 0:
        at_origin += t_end - last
    width = max(m_max, n_track)
    pos = np.empty(width, dtype=np.int64)
    for k in range(1, width + 1):
        pos[k - 1] = (disp_max[k - 1] if k <= size else 0) - k
    return D, max_D, max_M, R, L, acc, at_origin, pos


# -- public operations -----------------------------------------------------


def _check_p(p: float) -> None:
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")


def gillespie(init: Configuration, p: float, t_end: float, stream: StreamLike) -> Trajectory:
    """Exact continuous-time simulation from ``init`` on [0, t_end]."""
    _check_p(p)
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    rng = as_generator(stream)
    times, dirs, ks, _ = _run(rng, np.asarray(init.parts, dtype=np.int64), float(p), float(t_end), True)
    return Trajectory(init, times, dirs, ks, float(t_end))


def final_state(init: Configuration, p: float, t_end: float, stream: StreamLike) -> Configuration:
    """X_t only, without recording the path."""
    _check_p(p)
    rng = as_generator(stream)
    _, _, _, parts = _run(rng, np.asarray(init.parts, dtype=np.int64), float(p), float(t_end), False)
    return Configuration(tuple(int(b) for b in parts))


def count_returns(p: float, t_end: float, attempts: int, stream: StreamLike) -> int:
    """Number of runs from O, out of ``attempts``, with X_t = O."""
    _check_p(p)
    return int(_count_returns(as_generator(stream), float(p), float(t_end), int(attempts)))


def trajectory_stats(tr: Trajectory, n_track: int = 5) -> TrajectoryStats:
    D, max_D, max_M, R, L, int_J, at_origin, pos = _replay_stats(
        np.asarray(tr.initial.parts, dtype=np.int64),
        tr.times,
        tr.dirs,
        tr.ks,
        float(tr.t_end),
        int(n_track),
    )
    return TrajectoryStats(
        D_end=int(D),
        max_D=int(max_D),
        max_M=int(max_M),
        R=int(R),
        L=int(L),
        int_J=float(int_J),
        int_J1=float(int_J) + tr.t_end,
        particle_max=pos,
        time_at_origin=float(at_origin),
    )


def log_path_weight(tr: Trajectory, p: float) -> float:
    """Log-likelihood of the path: R log p + L log(1-p) - p t - int J ds."""
    st = trajectory_stats(tr)
    return st.R * math.log(p) + st.L * math.log1p(-p) - p * tr.t_end - st.int_J


def origin_time_batches(tr: Trajectory, n_batches: int) -> np.ndarray:
    """Fraction of time spent at O within each of n_batches equal time blocks."""
    if tr.initial.parts:
        raise ValueError("trajectory must start at O")
    D = np.concatenate([[0], np.cumsum(tr.dirs.astype(np.int64))])
    starts = np.concatenate([[0.0], tr.times])
    ends = np.concatenate([tr.times, [tr.t_end]])
    edges = np.linspace(0.0, tr.t_end, n_batches + 1)
    at0 = D == 0
    out = np.empty(n_batches)
    for j in range(n_batches):
        lo, hi = edges[j], edges[j + 1]
        overlap = np.clip(np.minimum(ends, hi) - np.maximum(starts, lo), 0.0, None)
        out[j] = overlap[at0].sum() / (hi - lo)
    return out


# -- site-clock constructions ----------------------------------------------


class _Window:
    """Occupancy of sites [lo, lo + len(occ)) with constant fill outside.

    Sites left of the window hold ``left_fill``; sites right of it are
    empty.  Tags label individual particles (-1 for untagged).
    """

    def __init__(self, occ: list[int], lo: int, left_fill: int, tags: list[int] | None = None):
        self.occ = occ
        self.lo = lo
        self.left_fill = left_fill
        self.tags = tags if tags is not None else [-1] * len(occ)

    @property
    def hi(self) -> int:
        return self.lo + len(self.occ)

    def _trivial(self, i: int, fill: int) -> bool:
        return self.occ[i] == fill and self.tags[i] < 0

    def needs_growth(self) -> bool:
        return not (
            self._trivial(0, self.left_fill) and self._trivial(len(self.occ) - 1, 0)
        )

    def grow(self) -> None:
        w = len(self.occ)
        self.occ = [self.left_fill] * w + self.occ + [0] * w
        self.tags = [-1] * w + self.tags + [-1] * w
        self.lo -= w

    def rank(self, i: int) -> int:
        """Number of particles at window index >= i (all particles right of the window are absent)."""
        return sum(self.occ[i:])


def _step_window(parts: Sequence[int], extra_sites: Iterable[int] = (), slack: int = 2) -> tuple[list[int], int]:
    x = Configuration(tuple(parts))
    m = len(x.parts)
    sites = [-m - 1, (x.parts[0] if m else 0) - 1, 0, -1, *extra_sites]
    lo = min(sites) - slack
    hi = max(sites) + slack + 1
    occupied = {b - k for k, b in enumerate(x.parts, start=1)}
    occ = [1 if (s < -m or s in occupied) else 0 for s in range(lo, hi)]
    return occ, lo


def coupled_pair(
    x: Configuration,
    x_tilde: Configuration,
    p: float,
    t_end: float,
    stream: StreamLike,
    slack: int = 2,
) -> tuple[Trajectory, Trajectory]:
    """Run two processes with the basic coupling (shared per-site clocks).

    Each site carries a rate-p clock for right attempts and a rate-(1-p)
    clock for left attempts; an attempt succeeds in a process when the
    site holds a particle and the target is empty there.
    """
    _check_p(p)
    rng = as_generator(stream)
    extra = [-len(x.parts) - 1, -len(x_tilde.parts) - 1,
             (x.parts[0] if x.parts else 0) - 1, (x_tilde.parts[0] if x_tilde.parts else 0) - 1]
    occ_a, lo = _step_window(x.parts, extra, slack)
    occ_b, _ = _step_window(x_tilde.parts, extra, slack)
    wa = _Window(occ_a, lo, 1)
    wb = _Window(occ_b, lo, 1)
    ev_a: list[tuple[float, int, int]] = []
    ev_b: list[tuple[float, int, int]] = []
    t = 0.0
    while True:
        width = len(wa.occ)
        t += rng.exponential() / width
        if t > t_end:
            break
        i = int(rng.random() * width)
        if i >= width:
            i = width - 1
        step = 1 if rng.random() < p else -1
        for w, ev in ((wa, ev_a), (wb, ev_b)):
            j = i + step
            if 0 <= j < width and w.occ[i] == 1 and w.occ[j] == 0:
                ev.append((t, step, w.rank(i)))
                w.occ[i], w.occ[j] = 0, 1
        if wa.needs_growth() or wb.needs_growth():
            wa.grow()
            wb.grow()
    return _to_trajectory(x, ev_a, t_end), _to_trajectory(x_tilde, ev_b, t_end)


def order_violations(upper: Trajectory, lower: Trajectory) -> int:
    """Number of event times at which ``lower`` fails to be dominated by ``upper``."""
    if upper.t_end != lower.t_end:
        raise ValueError("trajectories must share a time horizon")
    times = np.union1d(upper.times, lower.times)
    a_states = upper.states()
    b_states = lower.states()
    _, a = next(a_states)
    _, b = next(b_states)
    a_next = next(a_states, None)
    b_next = next(b_states, None)
    bad = 0 if dominates(a, b) else 1
    for s in times:
        while a_next is not None and a_next[0] <= s:
            a = a_next[1]
            a_next = next(a_states, None)
        while b_next is not None and b_next[0] <= s:
            b = b_next[1]
            b_next = next(b_states, None)
        if not dominates(a, b):
            bad += 1
    return bad


def _to_trajectory(init: Configuration, events: list[tuple[float, int, int]], t_end: float) -> Trajectory:
    return Trajectory(
        init,
        np.array([e[0] for e in events], dtype=np.float64),
        np.array([e[1] for e in events], dtype=np.int8),
        np.array([e[2] for e in events], dtype=np.int64),
        float(t_end),
    )


def _stir(w: _Window, t_end: float, rng: np.random.Generator, record: bool) -> list[tuple[float, int, int]]:
    # each edge (i, i+1) swaps its two sites at rate 1/2
    events: list[tuple[float, int, int]] = []
    t = 0.0
    while True:
        n_edges = len(w.occ) - 1
        t += rng.exponential() / (0.5 * n_edges)
        if t > t_end:
            break
        i = int(rng.random() * n_edges)
        if i >= n_edges:
            i = n_edges - 1
        a, b = w.occ[i], w.occ[i + 1]
        if record and a != b:
            if a == 1:
                events.append((t, RIGHT, w.rank(i)))
            else:
                events.append((t, LEFT, w.rank(i + 1)))
        w.occ[i], w.occ[i + 1] = b, a
        w.tags[i], w.tags[i + 1] = w.tags[i + 1], w.tags[i]
        if w.needs_growth():
            w.grow()
    return events


def stirring(
    init: Configuration,
    t_end: float,
    window: tuple[int, int] | None,
    stream: StreamLike,
    p: float = 0.5,
) -> Trajectory:
    """Symmetric exclusion built from nearest-neighbour swaps at rate 1/2 per edge."""
    if p != 0.5:
        raise ValueError("the stirring construction exists only for p = 1/2")
    occ, lo = _step_window(init.parts, window or ())
    w = _Window(occ, lo, 1)
    if w.needs_growth():
        w.grow()
    events = _stir(w, float(t_end), as_generator(stream), True)
    return _to_trajectory(init, events, t_end)


def stirred_positions(
    starts: Sequence[int],
    t_end: float,
    stream: StreamLike,
    background: Configuration | None = ORIGIN,
    window: tuple[int, int] | None = None,
) -> np.ndarray:
    """Final positions of tagged particles under stirring.

    With a ``background`` configuration the tagged sites must be occupied
    in it; with ``background=None`` the tagged particles are the only ones
    on the line.
    """
    starts = [int(s) for s in starts]
    extra = list(starts) + list(window or ())
    if background is None:
        lo = min(extra) - 2
        hi = max(extra) + 3
        occ = [1 if s in starts else 0 for s in range(lo, hi)]
        left_fill = 0
    else:
        occ, lo = _step_window(background.parts, extra)
        left_fill = 1
        for s in starts:
            if not occ[s - lo]:
                raise ValueError(f"tagged site {s} is empty in the background")
    tags = [-1] * len(occ)
    for j, s in enumerate(starts):
        tags[s - lo] = j
    w = _Window(occ, lo, left_fill, tags)
    _stir(w, float(t_end), as_generator(stream), False)
    out = np.empty(len(starts), dtype=np.int64)
    for i, tag in enumerate(w.tags):
        if tag >= 0:
            out[tag] = w.lo + i
    return out


def independent_walks(starts: Sequence[int], t_end: float, stream: StreamLike, size: int | None = None) -> np.ndarray:
    """Independent continuous-time walks jumping +1 and -1 at rate 1/2 each.

    Returns final positions, with a leading axis of length ``size`` if given.
    """
    rng = as_generator(stream)
    starts = np.asarray(starts, dtype=np.int64)
    shape = starts.shape if size is None else (size,) + starts.shape
    up = rng.poisson(0.5 * t_end, shape)
    down = rng.poisson(0.5 * t_end, shape)
    return starts + up - down


# -- text export -----------------------------------------------------------


def write_trajectory(tr: Trajectory, fh: TextIO | str | Path, p: float | None = None,
                     seed: int | None = None, stream_id=None) -> None:
    """One event per line: ``time direction particle_index``."""
    if isinstance(fh, (str, Path)):
        with open(fh, "w") as f:
            write_trajectory(tr, f, p, seed, stream_id)
        return
    fh.write("# tube-trajectory 1\n")
    fh.write("# initial " + " ".join(str(b) for b in tr.initial.parts) + "\n")
    fh.write(f"# p {'' if p is None else format(p, '.17g')}\n")
    fh.write(f"# t_end {tr.t_end:.17g}\n")
    fh.write(f"# seed {'' if seed is None else seed}\n")
    if stream_id is not None:
        fh.write(f"# stream {stream_id}\n")
    for t, d, k in zip(tr.times, tr.dirs, tr.ks):
        fh.write(f"{t:.17g} {'R' if d > 0 else 'L'} {int(k)}\n")


def read_trajectory(fh: TextIO | str | Path) -> tuple[Trajectory, dict]:
    if isinstance(fh, (str, Path)):
        with open(fh) as f:
            return read_trajectory(f)
    meta: dict = {}
    times, dirs, ks = [], [], []
    for line in fh:
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition(" ")
            meta[key] = value.strip()
            continue
        t, d, k = line.split()
        times.append(float(t))
        dirs.append(RIGHT if d == "R" else LEFT)
        ks.append(int(k))
    initial = Configuration(tuple(int(b) for b in meta.get("initial", "").split()))
    if meta.get("p"):
        meta["p"] = float(meta["p"])
    if meta.get("seed"):
        meta["seed"] = int(meta["seed"])
    tr = Trajectory(initial, np.array(times, dtype=np.float64), np.array(dirs, dtype=np.int8),
                    np.array(ks, dtype=np.int64), float(meta["t_end"]))
    return tr, meta
