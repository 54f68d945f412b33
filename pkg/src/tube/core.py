"""Exclusion-process configurations in displacement (partition) form.

A configuration reachable from the step state is determined by the
displacements ``B(1) >= B(2) >= ... >= 1`` of its particles, where the
k-th rightmost particle started at site ``-k`` and now sits at
``B(k) - k``.  Trailing zero displacements are implicit, so the empty
tuple is the step configuration ``O``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Iterable, Sequence


class ConfigurationError(ValueError):
    """Raised for malformed configurations or illegal moves."""


class Direction(Enum):
    RIGHT = "R"
    LEFT = "L"

    def flip(self) -> "Direction":
        return Direction.LEFT if self is Direction.RIGHT else Direction.RIGHT


@dataclass(frozen=True, order=True)
class Configuration:
    parts: tuple[int, ...] = ()

    def __post_init__(self):
        parts = self.parts
        for i, b in enumerate(parts):
            if b < 1:
                raise ConfigurationError(f"part {i} is {b}; parts must be positive")
            if i and b > parts[i - 1]:
                raise ConfigurationError(
                    f"parts increase at index {i} ({parts[i - 1]} < {b})"
                )

    def __len__(self) -> int:
        return len(self.parts)

    def displacement(self, k: int) -> int:
        """Displacement of particle k (1-based); zero beyond the last part."""
        return self.parts[k - 1] if k <= len(self.parts) else 0

    def position(self, k: int) -> int:
        return self.displacement(k) - k

    @property
    def distance(self) -> int:
        return sum(self.parts)

    def __repr__(self) -> str:
        return f"Configuration({list(self.parts)})"


ORIGIN = Configuration(())


@dataclass(frozen=True)
class ConfigStats:
    D: int
    M: int
    J: int
    S_plus: int
    S_minus: int


@dataclass(frozen=True)
class Move:
    direction: Direction
    particle_index: int

    def inverse(self) -> "Move":
        return Move(self.direction.flip(), self.particle_index)

    def __repr__(self) -> str:
        return f"Move({self.direction.value}, k={self.particle_index})"


def make_config(parts: Iterable[int]) -> Configuration:
    return Configuration(tuple(int(b) for b in parts))


def corners(x: Configuration) -> list[int]:
    """Indices k (1-based) with B(k) > B(k+1): the particles that can step left."""
    parts = x.parts
    m = len(parts)
    return [k for k in range(1, m + 1) if k == m or parts[k - 1] > parts[k]]


def config_stats(x: Configuration) -> ConfigStats:
    parts = x.parts
    m = len(parts)
    positions = [b - k for k, b in enumerate(parts, start=1)]
    s_plus = sum(pos for pos in positions if pos > 0)
    # holes at negative sites lie in [-m, -1]: the sites vacated by displaced particles
    filled = {pos for pos in positions if pos < 0}
    s_minus = sum(-j for j in range(-m, 0) if j not in filled)
    M = (parts[0] if parts else 0) - 1
    return ConfigStats(D=sum(parts), M=M, J=len(corners(x)), S_plus=s_plus, S_minus=s_minus)


def occupied_sites(x: Configuration) -> list[int]:
    """Positions of the displaced particles, rightmost first."""
    return [b - k for k, b in enumerate(x.parts, start=1)]


def to_occupancy(x: Configuration, lo: int, hi: int) -> list[int]:
    if lo > hi:
        raise ValueError("lo must not exceed hi")
    m = len(x.parts)
    occ = set(occupied_sites(x))
    bits = []
    for site in range(lo, hi):
        if site < -m:
            bits.append(1)
        else:
            bits.append(1 if site in occ else 0)
    return bits


def from_occupancy(bits: Sequence[int], offset: int) -> Configuration:
    """Inverse of :func:`to_occupancy`.

    Sites left of the window count as occupied and sites right of it as
    empty.  The window must reach site -1 and must carry as many particles
    at nonnegative sites as holes at negative sites.
    """
    bits = [1 if b else 0 for b in bits]
    if offset > 0:
        bits = [1] * offset + bits
        offset = 0
    if offset + len(bits) < 0:
        raise ConfigurationError("window must extend to site -1")
    n_plus = sum(b for i, b in enumerate(bits) if offset + i >= 0)
    n_minus = sum(1 - b for i, b in enumerate(bits) if offset + i < 0)
    if n_plus != n_minus:
        raise ConfigurationError(
            f"N+ - N- = {n_plus - n_minus} != 0: state not reachable from O"
        )
    sites = [offset + i for i in range(len(bits) - 1, -1, -1) if bits[i]]
    parts = []
    for k, site in enumerate(sites, start=1):
        if site + k <= 0:
            break
        parts.append(site + k)
    return Configuration(tuple(parts))


def enumerate_moves(x: Configuration) -> list[Move]:
    parts = x.parts
    m = len(parts)
    moves = []
    for k in range(1, m + 2):
        bk = parts[k - 1] if k <= m else 0
        if k == 1 or bk < parts[k - 2]:
            moves.append(Move(Direction.RIGHT, k))
        if k <= m and bk > (parts[k] if k < m else 0):
            moves.append(Move(Direction.LEFT, k))
    return moves


def apply_move(x: Configuration, move: Move) -> Configuration:
    parts = list(x.parts)
    m = len(parts)
    k = move.particle_index
    if k < 1:
        raise ConfigurationError(f"particle index must be positive, got {k}")
    bk = parts[k - 1] if k <= m else 0
    if move.direction is Direction.RIGHT:
        if k > m + 1:
            raise ConfigurationError(f"particle {k} is blocked: particle {k - 1} is adjacent")
        if k > 1 and bk >= parts[k - 2]:
            raise ConfigurationError(
                f"right jump of particle {k} blocked by particle {k - 1}"
            )
        if k == m + 1:
            parts.append(1)
        else:
            parts[k - 1] += 1
    else:
        nxt = parts[k] if k < m else 0
        if k > m or bk <= nxt:
            raise ConfigurationError(
                f"left jump of particle {k} blocked by particle {k + 1}"
            )
        parts[k - 1] -= 1
        if parts[k - 1] == 0:
            parts.pop()
    return Configuration(tuple(parts))


def dominates(x: Configuration, y: Configuration) -> bool:
    """True iff every particle of x is at least as far right as in y (y ≼ x)."""
    if len(y.parts) > len(x.parts):
        return False
    return all(a >= b for a, b in zip(x.parts, y.parts))


@lru_cache(maxsize=None)
def _partition_table(n: int) -> tuple[int, ...]:
    table = [1] + [0] * n
    for m in range(1, n + 1):
        total = 0
        j = 1
        while True:
            g1 = j * (3 * j - 1) // 2
            if g1 > m:
                break
            sign = 1 if j % 2 else -1
            total += sign * table[m - g1]
            g2 = g1 + j
            if g2 <= m:
                total += sign * table[m - g2]
            j += 1
        table[m] = total
    return tuple(table)


def partition_count(n: int) -> int:
    """Number of integer partitions of n, by Euler's pentagonal recurrence."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    # round the table size up so repeated calls share one cache entry
    size = max(64, 1 << (n.bit_length()))
    return _partition_table(size)[n]


def hardy_ramanujan(n: int) -> float:
    if n < 1:
        raise ValueError("n must be positive")
    return math.exp(math.pi * math.sqrt(2.0 * n / 3.0)) / (4.0 * n * math.sqrt(3.0))


def partitions(n: int, largest: int | None = None):
    """Yield the partitions of n as nonincreasing tuples, in lexicographic order."""
    if largest is None:
        largest = n
    if n == 0:
        yield ()
        return
    for first in range(1, min(n, largest) + 1):
        for rest in partitions(n - first, first):
            yield (first,) + rest
