"""Pre-screening of pathological coordinates before any search runs.

One batch of 2d+1 axis probes from the box center splits coordinates into
flat (no sensitivity at all), soft (orders of magnitude below the dominant
axes), and active. Flat and soft coordinates are integrated out analytically
and the expensive machinery only sees the active subspace.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CenterEvaluationError, DegenerateProblemError
from .problem import Problem, SubProblem

EPS_FLAT = 1e-6
EPS_SOFT = 1e-3


@dataclass(frozen=True)
class PrecheckReport:
    """Outcome of the 2d+1 probe screen."""

    sensitivities: np.ndarray
    flat: tuple
    soft: tuple
    active: tuple
    log_z_marginal: float
    center_logl: float
    eval_cost: int

    def to_dict(self):
        return {
            "sensitivities": [float(s) for s in self.sensitivities],
            "flat": list(self.flat),
            "soft": list(self.soft),
            "active": list(self.active),
            "log_z_marginal": float(self.log_z_marginal),
            "center_logl": float(self.center_logl),
            "eval_cost": int(self.eval_cost),
        }


def _lower_median(values) -> float:
    v = np.sort(np.asarray(values, dtype=np.float64))
    return float(v[(v.size - 1) // 2])


def precheck(problem: Problem, eps_flat: float = EPS_FLAT, eps_soft: float = EPS_SOFT,
             half_width_flat: bool = False) -> PrecheckReport:
    """Classify coordinates by axis sensitivity around the box center.

    Sensitivity of axis i is s_i = |l(c + D_i e_i) - l(c)| +
    |l(c - D_i e_i) - l(c)| with D_i the half width. Flat axes have exactly
    zero sensitivity or fall below eps_flat times the (lower) median; soft
    axes fall below eps_soft times the maximum without being flat.

    Flat axes contribute their prior width log(b_i - a_i) to the marginal
    (``half_width_flat`` switches to the half-width convention). Soft axes
    get a Gaussian marginal with the probe-implied scale D_i / sqrt(s_i).

    All 2d+1 evaluations go out as a single batch.
    """
    d = problem.dim
    center = problem.bounds.center
    half = 0.5 * problem.bounds.widths
    pts = np.tile(center, (2 * d + 1, 1))
    idx = np.arange(d)
    pts[1 + idx, idx] += half
    pts[1 + d + idx, idx] -= half
    vals = problem.logl(pts)
    l0 = vals[0]
    if not np.isfinite(l0):
        raise CenterEvaluationError(f"log-likelihood at the box center is {l0}")
    up = vals[1 : 1 + d]
    dn = vals[1 + d :]
    s = np.abs(up - l0) + np.abs(dn - l0)
    if np.all(s == 0.0):
        raise DegenerateProblemError("zero sensitivity on every axis")
    med = _lower_median(s)
    smax = float(np.max(s))
    flat_mask = (s == 0.0) | (s < eps_flat * med)
    soft_mask = (s < eps_soft * smax) & ~flat_mask
    flat = tuple(int(i) for i in np.where(flat_mask)[0])
    soft = tuple(int(i) for i in np.where(soft_mask)[0])
    active = tuple(int(i) for i in np.where(~flat_mask & ~soft_mask)[0])
    widths = problem.bounds.widths
    marginal = 0.0
    for i in flat:
        marginal += np.log(0.5 * widths[i] if half_width_flat else widths[i])
    for i in soft:
        # Gaussian scale implied by the probe drop: s ~ (D/sigma)^2.
        sigma = half[i] / np.sqrt(s[i])
        marginal += 0.5 * np.log(2.0 * np.pi) + np.log(sigma)
    return PrecheckReport(
        sensitivities=s,
        flat=flat,
        soft=soft,
        active=active,
        log_z_marginal=float(marginal),
        center_logl=float(l0),
        eval_cost=2 * d + 1,
    )


def active_subproblem(problem: Problem, report: PrecheckReport):
    """Restrict the problem to active axes, pinning the rest at the center."""
    if len(report.active) == problem.dim:
        return problem
    return SubProblem(problem, np.asarray(report.active, dtype=np.intp),
                      problem.bounds.center)
