"""Peak polishing: re-seed around each coarse peak, converge hard, filter.

Every surviving peak leaves this stage with a machine-tight position, a
diagonal Hessian measured at the converged point, per-axis widths, and the
optimizer trajectories that led into it (the raw material for telling
axis-aligned curvature from rotated curvature later).

The filter cascade is ordered by cost: checks that reuse already-computed
values run first, the single Hessian batch runs only for deduplicated
survivors, and nothing is evaluated twice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoValidMaximaError
from .lbfgs import HISTORY, make_state, step_batch
from .linalg import dedup_linf

GRAD_FILTER_SCALE = 1e-6
HESS_STEP_WIDTH = 1e-4
HESS_STEP_ABS = 1e-6
WIDTH_FLOOR_SCALE = 1e-12
FAST_SEED_COUNT = 20
SEED_OFFSET = 0.9


def refine_iterations(dim: int) -> int:
    """Iteration budget: flat floor of 10, growing as 3*log2(d) above d=10."""
    return max(10, int(np.ceil(3.0 * np.log2(max(dim, 2)))))


def seed_peak(position, width, dim, rng, bounds, min_width, fast=False):
    """Seed cloud around one coarse peak, clipped into the box.

    Default: one pair of seeds per axis at 0.9 width. Fast: a fixed count
    of uniform draws in the 0.9-width sup-norm ball, which costs less than
    2d rows once the dimension passes ten.
    """
    w = SEED_OFFSET * max(float(width), float(min_width))
    pos = np.asarray(position, dtype=np.float64)
    if fast:
        u = rng.uniform(-w, w, size=(FAST_SEED_COUNT, dim))
        seeds = pos[None, :] + u
    else:
        eye = np.eye(dim)
        seeds = np.vstack([pos[None, :] + w * eye, pos[None, :] - w * eye])
    return bounds.clip(seeds)


def diag_hessian(problem, centers, center_logl, widths):
    """Per-axis second differences at given centers, one fused batch.

    ``widths`` is one scalar length hint per row; the probe step per
    coordinate is the larger of a fixed fraction of that hint and an
    absolute floor, keeping the difference signal above the subtraction
    noise that grows with |logl|. Center values are passed in, so the cost
    is exactly 2*N*d evaluations. Returns (hess_diag, bad) where ``bad``
    flags rows with any non-finite entry.
    """
    th = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    n, d = th.shape
    v0 = np.asarray(center_logl, dtype=np.float64).reshape(n)
    w = np.asarray(widths, dtype=np.float64).reshape(n, 1)
    eps = np.maximum(HESS_STEP_WIDTH * w, HESS_STEP_ABS * (1.0 + np.abs(th)))
    probes = np.repeat(th[:, None, :], 2 * d, axis=1)
    idx = np.arange(d)
    rows = np.arange(n)[:, None]
    probes[rows, idx, idx] += eps
    probes[rows, d + idx, idx] -= eps
    vals = problem.logl(probes.reshape(n * 2 * d, d)).reshape(n, 2 * d)
    hess = (vals[:, :d] - 2.0 * v0[:, None] + vals[:, d:]) / eps**2
    bad = ~np.isfinite(hess).all(axis=1)
    return hess, bad


def peak_widths(hess_diag, bound_widths):
    """Per-axis sigma from a strictly negative diagonal; floored, flagged."""
    w = 1.0 / np.sqrt(-np.asarray(hess_diag, dtype=np.float64))
    floor = WIDTH_FLOOR_SCALE * np.asarray(bound_widths, dtype=np.float64)
    floored = w < floor
    return np.maximum(w, floor), bool(floored.any())


@dataclass
class RefinedPeak:
    position: np.ndarray
    logl: float
    hess_diag: np.ndarray
    widths: np.ndarray
    grad_inf: float
    origin: int
    steps: list
    seed_ring: np.ndarray | None
    width_floored: bool


def refine_peaks(problem, coarse_peaks, lam_fine, rng, *, fast=False,
                 grad_tol=1e-10, dedup_radius=None, lbfgs_memory=None):
    """Polish coarse peaks into validated maxima.

    Returns (peaks, warnings). Raises the no-valid-maxima error, with a
    per-filter casualty count, when nothing survives the cascade.
    """
    bounds = problem.bounds
    d = bounds.dim
    if dedup_radius is None:
        dedup_radius = 1e-3 * float(np.mean(bounds.widths))
    if not coarse_peaks:
        raise NoValidMaximaError({"no_input_peaks": 0})

    seed_rows, origins, hints = [], [], []
    for k, pk in enumerate(coarse_peaks):
        s = seed_peak(pk.position, pk.width, d, rng, bounds, lam_fine, fast=fast)
        seed_rows.append(s)
        origins.extend([k] * s.shape[0])
        hints.extend([max(pk.width, lam_fine)] * s.shape[0])
    seeds = np.vstack(seed_rows)
    origins = np.asarray(origins)
    hints = np.asarray(hints, dtype=np.float64)
    per_peak = seeds.shape[0] // max(len(coarse_peaks), 1)

    state = make_state(problem, seeds, widths=hints[:, None], record=True,
                       memory=HISTORY if lbfgs_memory is None else lbfgs_memory)
    intake_logl = state.logl.copy()
    iters = refine_iterations(d)
    for _ in range(iters):
        state.freeze(state.grad_inf() < grad_tol)
        if state.frozen.all():
            break
        if not step_batch(state, problem).any():
            break

    reasons = {"nonfinite_start": 0, "gradient": 0, "hessian_nonfinite": 0,
               "saddle": 0}
    warnings = []

    alive = np.flatnonzero(np.isfinite(state.logl) & ~state.bad_grad)
    reasons["nonfinite_start"] = state.logl.size - alive.size

    # Gradient filter from cached optimizer gradients: free of evaluations.
    if alive.size:
        thresh = GRAD_FILTER_SCALE * np.maximum(1.0, np.abs(state.logl[alive]))
        ok = state.grad_inf()[alive] <= thresh
        reasons["gradient"] = int((~ok).sum())
        alive = alive[ok]

    chain = {int(r): int(r) for r in alive}
    if alive.size:
        kept_local, surv_local = dedup_linf(
            state.theta[alive], state.logl[alive], dedup_radius
        )
        for i, r in enumerate(alive):
            chain[int(r)] = int(alive[surv_local[i]])
        alive = alive[np.asarray(kept_local)]

    if alive.size:
        hess, bad = diag_hessian(
            problem, state.theta[alive], state.logl[alive], hints[alive]
        )
        reasons["hessian_nonfinite"] = int(bad.sum())
        saddle = (~bad) & (hess >= 0).any(axis=1)
        reasons["saddle"] = int(saddle.sum())
        keep = ~(bad | saddle)
        hess_by_row = {int(r): hess[i] for i, r in enumerate(alive) if keep[i]}
        alive = alive[keep]
    else:
        hess_by_row = {}

    widths_by_row = {}
    any_floored = {}
    for r in alive:
        w, floored = peak_widths(hess_by_row[int(r)], bounds.widths)
        widths_by_row[int(r)] = w
        any_floored[int(r)] = floored
        if floored:
            warnings.append("peak width hit the resolution floor")

    if alive.size:
        min_w = np.min(np.vstack([widths_by_row[int(r)] for r in alive]), axis=0)
        kept_local, surv_local = dedup_linf(
            state.theta[alive], state.logl[alive], 1.0, widths=min_w
        )
        for i, r in enumerate(alive):
            chain[int(r)] = int(alive[surv_local[i]])
        alive = alive[np.asarray(kept_local)]

    if alive.size == 0:
        raise NoValidMaximaError(reasons)

    def final_survivor(row):
        seen = set()
        while chain.get(row, row) != row and row not in seen:
            seen.add(row)
            row = chain[row]
        return row

    members = {int(r): [] for r in alive}
    for row in range(state.n):
        target = final_survivor(chain.get(row, -1)) if row in chain else -1
        if target in members:
            members[target].append(row)

    peaks = []
    for r in alive:
        r = int(r)
        ring = None
        if not fast:
            k = origins[r]
            base = k * per_peak
            delta = SEED_OFFSET * max(coarse_peaks[k].width, lam_fine)
            plus = intake_logl[base:base + d]
            minus = intake_logl[base + d:base + 2 * d]
            center = coarse_peaks[k].logl
            with np.errstate(invalid="ignore"):
                ring = (plus - 2.0 * center + minus) / delta**2
        steps = []
        for row in members[r]:
            steps.extend(state.steps[row])
        peaks.append(RefinedPeak(
            position=state.theta[r].copy(),
            logl=float(state.logl[r]),
            hess_diag=hess_by_row[r].copy(),
            widths=widths_by_row[r].copy(),
            grad_inf=float(state.grad_inf()[r]),
            origin=int(origins[r]),
            steps=steps,
            seed_ring=ring,
            width_floored=any_floored[r],
        ))
    peaks.sort(key=lambda p: -p.logl)
    return peaks, warnings
