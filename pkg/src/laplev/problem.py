"""Problem container: a batched log-likelihood on a bounds box.

The evaluator contract is the backbone of everything downstream: it takes an
(N, d) array of positions questioned in one batch, returns an (N,) array of
log-likelihood values, and counts exactly N evaluations. All parallelism in
the pipeline is expressed through batch size, never through concurrent
stateful calls, which is what makes runs bit-reproducible.
"""

from __future__ import annotations

import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError

WORKERS_ENV = "LAPLEV_WORKERS"


@dataclass(frozen=True)
class BoundsBox:
    """Axis-aligned hyperrectangle, lower[i] < upper[i] for every i."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64)
        hi = np.asarray(self.upper, dtype=np.float64)
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise InvalidParameterError("bounds must be two 1-d arrays of equal length")
        if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
            raise InvalidParameterError("bounds must be finite")
        if not np.all(lo < hi):
            raise InvalidParameterError("every lower bound must be below its upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def log_volume(self) -> float:
        return float(np.sum(np.log(self.widths)))

    def contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return np.all((pts >= self.lower) & (pts <= self.upper), axis=1)

    def clip(self, points) -> np.ndarray:
        return np.clip(points, self.lower, self.upper)

    @staticmethod
    def cube(dim, lower, upper) -> "BoundsBox":
        return BoundsBox(np.full(dim, float(lower)), np.full(dim, float(upper)))


def _pool_size() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)


class Problem:
    """A log-likelihood bound to a box, with exact evaluation accounting.

    ``fn`` maps an (N, d) float64 array to an (N,) float64 array and must be
    pure: no state, no dependence on call order. The counter increments by
    exactly N per batch. ``peak_logl`` tracks the running maximum over every
    value the problem has ever returned, which the mode search uses as its
    global reference height.
    """

    def __init__(self, fn, bounds: BoundsBox, name: str = ""):
        self._fn = fn
        self.bounds = bounds
        self.name = name
        self._count = 0
        self._lock = threading.Lock()
        self._peak = -np.inf

    @property
    def dim(self) -> int:
        return self.bounds.dim

    @property
    def eval_counter(self) -> int:
        return self._count

    @property
    def peak_logl(self) -> float:
        return self._peak

    def logl(self, points) -> np.ndarray:
        pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != self.dim:
            raise InvalidParameterError(
                f"expected (N, {self.dim}) positions, got shape {pts.shape}"
            )
        n = pts.shape[0]
        workers = _pool_size()
        if workers <= 1 or n < 2 * workers:
            vals = np.asarray(self._fn(pts), dtype=np.float64).reshape(n)
        else:
            # Chunked dispatch; reassembly is in index order so the pool size
            # can never change the result, only the wall time.
            chunks = np.array_split(np.arange(n), workers)
            out = [None] * len(chunks)
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futs = {pool.submit(self._fn, pts[idx]): k for k, idx in enumerate(chunks)}
                for fut, k in futs.items():
                    out[k] = np.asarray(fut.result(), dtype=np.float64)
            vals = np.concatenate([np.reshape(v, -1) for v in out])
            if vals.shape[0] != n:
                raise InvalidParameterError("evaluator returned a wrong-sized batch")
        with self._lock:
            self._count += n
            finite = vals[np.isfinite(vals)]
            if finite.size:
                m = float(finite.max())
                if m > self._peak:
                    self._peak = m
        return vals

    def logl_one(self, point) -> float:
        return float(self.logl(np.asarray(point, dtype=np.float64)[None, :])[0])


@dataclass
class SubProblem:
    """View of a problem restricted to a subset of coordinates.

    The remaining coordinates are pinned at fixed values. Evaluations flow
    through to the parent problem, so the parent's counter stays the single
    source of truth for accounting.
    """

    parent: Problem
    active: np.ndarray
    pinned_values: np.ndarray
    bounds: BoundsBox = field(init=False)

    def __post_init__(self):
        self.active = np.asarray(self.active, dtype=np.intp)
        self.pinned_values = np.asarray(self.pinned_values, dtype=np.float64)
        self.bounds = BoundsBox(
            self.parent.bounds.lower[self.active],
            self.parent.bounds.upper[self.active],
        )

    @property
    def dim(self) -> int:
        return self.active.shape[0]

    @property
    def eval_counter(self) -> int:
        return self.parent.eval_counter

    @property
    def peak_logl(self) -> float:
        return self.parent.peak_logl

    def embed(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        full = np.tile(self.pinned_values, (pts.shape[0], 1))
        full[:, self.active] = pts
        return full

    def logl(self, points) -> np.ndarray:
        return self.parent.logl(self.embed(points))

    def logl_one(self, point) -> float:
        return float(self.logl(np.asarray(point, dtype=np.float64)[None, :])[0])
