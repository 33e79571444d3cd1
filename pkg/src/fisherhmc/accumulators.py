"""Streaming moments and the foreground/background estimation window.

The window never tapers old draws: it wipes them. A background accumulator
collects draws alongside the foreground and, every ``L`` pushes, replaces
it and starts over empty. After ``n`` pushes the foreground therefore covers
exactly the draws ``window_start(n, L) .. n-1``.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "NonFiniteDrawError",
    "WelfordState",
    "welford_update",
    "window_start",
    "DrawBuffer",
    "MomentPair",
    "WindowPair",
    "window_push",
]


class NonFiniteDrawError(ValueError):
    """A draw or score with non-finite entries was offered to an accumulator."""


class WelfordState:
    """Running mean and sum of squared deviations of a vector stream.

    The recurrences run on ``x - shift`` where ``shift`` is the first value
    seen. That keeps the deltas O(spread) instead of O(magnitude), so a
    stream around 1e9 with unit variance loses no digits.
    """

    __slots__ = ("n", "shift", "_mean", "m2")

    def __init__(self, dim: int):
        self.n = 0
        self.shift = np.zeros(dim)
        self._mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    @property
    def dim(self) -> int:
        return self._mean.size

    def push(self, x: np.ndarray) -> None:
        if self.n == 0:
            self.shift = np.array(x, dtype=float)
        x = x - self.shift
        self.n += 1
        delta = x - self._mean
        self._mean += delta / self.n
        self.m2 += delta * (x - self._mean)

    @property
    def mean(self) -> np.ndarray:
        return self.shift + self._mean

    @property
    def variance(self) -> np.ndarray:
        """Unbiased variance; undefined (ValueError) below two observations."""
        if self.n < 2:
            raise ValueError("variance needs at least two observations")
        return self.m2 / (self.n - 1)

    def copy(self) -> "WelfordState":
        other = WelfordState(self.dim)
        other.n = self.n
        other.shift = self.shift.copy()
        other._mean = self._mean.copy()
        other.m2 = self.m2.copy()
        return other


def welford_update(state: WelfordState, x) -> WelfordState:
    """Push x into ``state`` (in place) and return it."""
    x = np.asarray(x, dtype=float)
    if x.shape != (state.dim,):
        raise ValueError(f"dimension mismatch: {x.shape} vs ({state.dim},)")
    if not np.all(np.isfinite(x)):
        raise NonFiniteDrawError("non-finite value offered to Welford accumulator")
    state.push(x)
    return state


def window_start(n: int, L: int) -> int:
    """First draw index of the estimation window used for draw ``n``."""
    if n < 0 or L < 1:
        raise ValueError("need n >= 0 and L >= 1")
    return max(0, L * (n // L - 1))


class MomentPair:
    """Welford moments of draws and of scores over the same draws."""

    kind = "moments"

    def __init__(self, dim: int):
        self.draws = WelfordState(dim)
        self.scores = WelfordState(dim)

    @property
    def count(self) -> int:
        return self.draws.n

    def push(self, draw: np.ndarray, score: np.ndarray) -> None:
        self.draws.push(draw)
        self.scores.push(score)


class DrawBuffer:
    """Raw draw and score rows, kept when an estimator needs the columns."""

    kind = "buffer"

    def __init__(self, dim: int):
        self.dim = dim
        self._draws: list[np.ndarray] = []
        self._scores: list[np.ndarray] = []

    @property
    def count(self) -> int:
        return len(self._draws)

    def push(self, draw: np.ndarray, score: np.ndarray) -> None:
        self._draws.append(draw.copy())
        self._scores.append(score.copy())

    @property
    def draws(self) -> np.ndarray:
        return np.array(self._draws).reshape(-1, self.dim)

    @property
    def scores(self) -> np.ndarray:
        return np.array(self._scores).reshape(-1, self.dim)


class WindowPair:
    """Foreground/background accumulators with a wipe every ``switch_interval`` pushes.

    Args:
        dim: Dimension of draws and scores.
        switch_interval: Wipe period L.
        mode: "moments" keeps Welford moments only (O(d) memory);
            "buffer" keeps the raw rows for estimators that need them.
    """

    def __init__(self, dim: int, switch_interval: int, mode: str = "moments"):
        if switch_interval < 1:
            raise ValueError("switch_interval must be >= 1")
        if mode not in ("moments", "buffer"):
            raise ValueError(f"unknown window mode {mode!r}")
        self.dim = dim
        self.mode = mode
        self.switch_interval = int(switch_interval)
        self.n_total = 0
        # Index of the first draw in each accumulator, counted in pushes.
        self.foreground_start = 0
        self.background_start = 0
        self.foreground = self._empty()
        self.background = self._empty()
        self.switched = False

    def _empty(self):
        return MomentPair(self.dim) if self.mode == "moments" else DrawBuffer(self.dim)

    def push(self, draw, score) -> bool:
        """Add one (draw, score) pair; returns True if this push triggered a switch.

        Non-finite input leaves the pair untouched and raises NonFiniteDrawError.
        """
        draw = np.asarray(draw, dtype=float)
        score = np.asarray(score, dtype=float)
        if draw.shape != (self.dim,) or score.shape != (self.dim,):
            raise ValueError("draw/score dimension mismatch")
        if not (np.all(np.isfinite(draw)) and np.all(np.isfinite(score))):
            raise NonFiniteDrawError("non-finite draw or score; window unchanged")
        self.foreground.push(draw, score)
        self.background.push(draw, score)
        self.n_total += 1
        self.switched = self.n_total % self.switch_interval == 0
        if self.switched:
            self.foreground = self.background
            self.foreground_start = self.background_start
            self.background = self._empty()
            self.background_start = self.n_total
        return self.switched

    @property
    def foreground_range(self) -> tuple[int, int]:
        """Half-open push-index range covered by the foreground."""
        return self.foreground_start, self.n_total

    @property
    def count(self) -> int:
        return self.foreground.count


def window_push(pair: WindowPair, draw, score) -> WindowPair:
    """Functional spelling of ``pair.push``; returns the (mutated) pair."""
    pair.push(draw, score)
    return pair
