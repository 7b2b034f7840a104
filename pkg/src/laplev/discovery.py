"""Mode discovery: ray survey, length-scale estimation, oscillating search.

The search never trusts a single optimizer run. It first scans the box with
a family of line probes to learn where mass lives and at what length scales
the log-likelihood bends, then runs a stick/release cycle: batches of seeds
ascend until they stick to a peak, duplicates collapse, freed slots reseed,
and the survivors are shaken loose sideways and downhill so the next ascent
can only end somewhere new. Everything is driven by one seeded generator and
batched evaluator calls, so a (seed, config) pair fixes the run bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError, NoModesFoundError
from .lbfgs import fd_gradient, run_batch
from .linalg import dedup_linf
from .problem import BoundsBox

RAY_V2V = 0  # vertex to vertex
RAY_V2E = 1  # vertex to edge midpoint
RAY_W2W = 2  # wall to opposing wall, perpendicular
RAY_SUN = 3  # center outward to the boundary

KIND_NAMES = {RAY_V2V: "v2v", RAY_V2E: "v2e", RAY_W2W: "w2w", RAY_SUN: "sunburst"}

N_COARSE = 64
ACTIVE_DROP = 20.0
SIDECAR_MAGIC = b"RAYBANK\0"
SIDECAR_VERSION = 1


def rays_per_kind(dim: int) -> int:
    return int(np.ceil(10.0 + np.log2(dim)))


@dataclass(frozen=True)
class Ray:
    kind: int
    start: np.ndarray
    end: np.ndarray

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.end - self.start))

    def at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        return self.start + t[:, None] * (self.end - self.start)


@dataclass
class RaySamples:
    ray: Ray
    t: np.ndarray
    logl: np.ndarray
    tags: np.ndarray  # 0 = coarse pass, 1 = refined pass
    dead: bool


def _random_vertex(rng, bounds: BoundsBox) -> np.ndarray:
    pick = rng.integers(0, 2, size=bounds.dim)
    return np.where(pick == 1, bounds.upper, bounds.lower).astype(np.float64)


def _sunburst_end(rng, bounds: BoundsBox) -> np.ndarray:
    c = bounds.center
    while True:
        z = rng.standard_normal(bounds.dim)
        nrm = float(np.linalg.norm(z))
        if nrm > 1e-12:
            break
    u = z / nrm
    with np.errstate(divide="ignore"):
        t_hi = np.where(u > 0, (bounds.upper - c) / u, np.inf)
        t_lo = np.where(u < 0, (bounds.lower - c) / u, np.inf)
    t_exit = float(np.min(np.minimum(t_hi, t_lo)))
    return c + t_exit * u


def generate_rays(bounds: BoundsBox, rng) -> list[Ray]:
    """Fixed-order ray family over the box; count scales as ceil(10+log2 d).

    Four kinds, equal quota each. One dimension has no edges distinct from
    its vertices, so there the edge-kind quota goes to extra sunburst rays
    and the total stays at four quotas.
    """
    d = bounds.dim
    n = rays_per_kind(d)
    rays = []
    for _ in range(n):
        a = _random_vertex(rng, bounds)
        while True:
            b = _random_vertex(rng, bounds)
            if not np.array_equal(a, b):
                break
        rays.append(Ray(RAY_V2V, a, b))
    if d > 1:
        for _ in range(n):
            a = _random_vertex(rng, bounds)
            w = _random_vertex(rng, bounds)
            k = int(rng.integers(d))
            mid = w.copy()
            mid[k] = bounds.center[k]
            rays.append(Ray(RAY_V2E, a, mid))
    for _ in range(n):
        k = int(rng.integers(d))
        p = rng.uniform(bounds.lower, bounds.upper)
        a = p.copy()
        a[k] = bounds.lower[k]
        b = p.copy()
        b[k] = bounds.upper[k]
        rays.append(Ray(RAY_W2W, a, b))
    n_sun = n if d > 1 else 2 * n
    c = bounds.center
    for _ in range(n_sun):
        rays.append(Ray(RAY_SUN, c.copy(), _sunburst_end(rng, bounds)))
    return rays


def two_pass_sample(problem, ray: Ray, rng, n_coarse: int = N_COARSE,
                    active_drop: float = ACTIVE_DROP) -> RaySamples:
    """Survey one ray: a uniform coarse pass, then a mass-weighted refill.

    The coarse pass is an inclusive uniform grid in t. Cells whose value
    sits within ``active_drop`` nats of the ray maximum form the active
    region; a second pass of equal size draws t values from the normalized
    piecewise-constant profile over those cells by inverse transform. A ray
    whose coarse pass is entirely non-finite is marked dead and gets no
    second pass.
    """
    t0 = np.linspace(0.0, 1.0, n_coarse)
    v0 = problem.logl(ray.at(t0))
    finite = np.isfinite(v0)
    if not finite.any():
        return RaySamples(ray, t0, v0, np.zeros(n_coarse, dtype=np.uint8), True)

    vmax = float(v0[finite].max())
    active = finite & (v0 > vmax - active_drop)
    edges = np.empty(n_coarse + 1)
    edges[0], edges[-1] = 0.0, 1.0
    edges[1:-1] = 0.5 * (t0[:-1] + t0[1:])
    cell_w = np.diff(edges)
    weights = np.where(active, np.exp(np.where(finite, v0, -np.inf) - vmax), 0.0) * cell_w
    cum = np.cumsum(weights)
    targets = rng.random(n_coarse) * cum[-1]
    cells = np.minimum(np.searchsorted(cum, targets, side="right"), n_coarse - 1)
    lo = cum[cells] - weights[cells]
    frac = np.where(weights[cells] > 0, (targets - lo) / weights[cells], 0.5)
    t1 = edges[cells] + frac * cell_w[cells]
    v1 = problem.logl(ray.at(t1))

    t_all = np.concatenate([t0, t1])
    v_all = np.concatenate([v0, v1])
    tags = np.concatenate(
        [np.zeros(n_coarse, dtype=np.uint8), np.ones(n_coarse, dtype=np.uint8)]
    )
    order = np.argsort(t_all, kind="stable")
    return RaySamples(ray, t_all[order], v_all[order], tags[order], False)


@dataclass
class RayBank:
    """All ray samples from one survey, plus binary persistence."""

    rays: list = field(default_factory=list)

    def add(self, samples: RaySamples) -> None:
        self.rays.append(samples)

    @property
    def n_live(self) -> int:
        return sum(not r.dead for r in self.rays)

    def positions_and_logl(self):
        """Concatenated sample positions and values over live rays."""
        pos, val = [], []
        for r in self.rays:
            if r.dead:
                continue
            pos.append(r.ray.at(r.t))
            val.append(r.logl)
        if not pos:
            d = self.rays[0].ray.start.shape[0] if self.rays else 0
            return np.zeros((0, d)), np.zeros(0)
        return np.vstack(pos), np.concatenate(val)

    def best_sample(self):
        pos, val = self.positions_and_logl()
        finite = np.isfinite(val)
        if not finite.any():
            return None, -np.inf
        i = int(np.argmax(np.where(finite, val, -np.inf)))
        return pos[i], float(val[i])

    def summary(self) -> str:
        counts = {name: 0 for name in KIND_NAMES.values()}
        for r in self.rays:
            counts[KIND_NAMES[r.ray.kind]] += 1
        dead = sum(r.dead for r in self.rays)
        parts = ", ".join(f"{k}={v}" for k, v in counts.items())
        return f"{len(self.rays)} rays ({parts}), {dead} dead"

    def save(self, path) -> None:
        """Little-endian binary sidecar; bit-exact round trip including NaN."""
        chunks = [SIDECAR_MAGIC,
                  np.array([SIDECAR_VERSION, len(self.rays)], dtype="<u4").tobytes()]
        for r in self.rays:
            d = r.ray.start.shape[0]
            n = r.t.shape[0]
            chunks.append(np.array([r.ray.kind, int(r.dead)], dtype="<u1").tobytes())
            chunks.append(np.array([d, n], dtype="<u4").tobytes())
            chunks.append(np.asarray(r.ray.start, dtype="<f8").tobytes())
            chunks.append(np.asarray(r.ray.end, dtype="<f8").tobytes())
            chunks.append(np.asarray(r.t, dtype="<f8").tobytes())
            chunks.append(np.asarray(r.logl, dtype="<f8").tobytes())
            chunks.append(np.asarray(r.tags, dtype="<u1").tobytes())
        with open(path, "wb") as fh:
            fh.write(b"".join(chunks))

    @staticmethod
    def load(path) -> "RayBank":
        with open(path, "rb") as fh:
            buf = fh.read()
        if buf[:8] != SIDECAR_MAGIC:
            raise InvalidParameterError("ray bank file: bad magic")
        version, n_rays = np.frombuffer(buf, dtype="<u4", count=2, offset=8)
        if version != SIDECAR_VERSION:
            raise InvalidParameterError(f"ray bank file: unsupported version {version}")
        off = 16
        bank = RayBank()
        for _ in range(int(n_rays)):
            kind, dead = np.frombuffer(buf, dtype="<u1", count=2, offset=off)
            off += 2
            d, n = (int(x) for x in np.frombuffer(buf, dtype="<u4", count=2, offset=off))
            off += 8
            start = np.frombuffer(buf, dtype="<f8", count=d, offset=off).copy()
            off += 8 * d
            end = np.frombuffer(buf, dtype="<f8", count=d, offset=off).copy()
            off += 8 * d
            t = np.frombuffer(buf, dtype="<f8", count=n, offset=off).copy()
            off += 8 * n
            logl = np.frombuffer(buf, dtype="<f8", count=n, offset=off).copy()
            off += 8 * n
            tags = np.frombuffer(buf, dtype="<u1", count=n, offset=off).copy()
            off += n
            bank.add(RaySamples(Ray(int(kind), start, end), t, logl, tags, bool(dead)))
        return bank


def survey(problem, rng, n_coarse: int = N_COARSE,
           active_drop: float = ACTIVE_DROP) -> RayBank:
    bank = RayBank()
    for ray in generate_rays(problem.bounds, rng):
        bank.add(two_pass_sample(problem, ray, rng, n_coarse, active_drop))
    return bank


@dataclass(frozen=True)
class ScaleEstimate:
    """Three characteristic lengths, finest first, in parameter units."""

    lam_fine: float
    lam_mid: float
    lam_coarse: float
    fallback: bool
    h: np.ndarray
    kappa: np.ndarray

    def as_tuple(self):
        return (self.lam_fine, self.lam_mid, self.lam_coarse)


def _nearest_index(s: np.ndarray, targets: np.ndarray) -> np.ndarray:
    pos = np.searchsorted(s, targets)
    lo = np.clip(pos - 1, 0, s.size - 1)
    hi = np.clip(pos, 0, s.size - 1)
    pick_hi = np.abs(s[hi] - targets) < np.abs(s[lo] - targets)
    return np.where(pick_hi, hi, lo)


def estimate_scales(bank: RayBank, bounds: BoundsBox, n_h: int = 24,
                    match_tol: float = 0.3,
                    slope_threshold: float = -0.5) -> ScaleEstimate:
    """Read bending length scales off the stored ray profiles.

    For a grid of skip lengths h the spikiest second difference across all
    stored samples gives kappa(h), an upper curvature envelope. Structure
    finer than h averages out of the second difference, so kappa falls off
    steeply once h crosses a characteristic length; the h values at the
    three steepest drops of log kappa against log h are the scale triple.
    No new evaluations are spent here.

    Degenerate cases: constant curvature has no drop at all, so the single
    quadratic length 1/sqrt(kappa) stands in for all three (it equals sigma
    for a pure Gaussian profile); one or two drops are padded by repetition;
    a bank with no usable rays falls back to fixed fractions of the mean
    box width and sets the fallback flag.
    """
    series = []
    for r in bank.rays:
        if r.dead:
            continue
        finite = np.isfinite(r.logl)
        if int(finite.sum()) < 8:
            continue
        s = r.t[finite] * r.ray.length
        v = r.logl[finite]
        keep = np.concatenate([[True], np.diff(s) > 0])
        series.append((s[keep], v[keep]))

    mean_width = float(np.mean(bounds.widths))
    if not series:
        return ScaleEstimate(1e-3 * mean_width, 1e-2 * mean_width, 1e-1 * mean_width,
                             True, np.zeros(0), np.zeros(0))

    spans = np.array([s[-1] - s[0] for s, _ in series])
    gaps = [np.min(np.diff(s)) for s, _ in series if s.size > 1]
    h_hi = float(spans.max()) / 2.0
    h_lo = max(float(min(gaps)), 1e-9 * h_hi)
    if h_lo >= h_hi:
        h_lo = h_hi / 1e3
    hs = np.geomspace(h_lo, h_hi, n_h)

    kappa = np.full(n_h, np.nan)
    drops = []  # (slope, h at the drop), pooled over rays
    for s, v in series:
        span = s[-1] - s[0]
        kappa_ray = np.full(n_h, np.nan)
        for k, h in enumerate(hs):
            if h > span / 2.0:
                continue
            ip = _nearest_index(s, s + h)
            im = _nearest_index(s, s - h)
            a = s[ip] - s  # actual forward offset
            b = s - s[im]  # actual backward offset
            ok = (
                (np.abs(a - h) <= match_tol * h)
                & (np.abs(b - h) <= match_tol * h)
                & (a > 0)
                & (b > 0)
            )
            if not ok.any():
                continue
            # Three-point second derivative with unequal arms; this form
            # cancels the first-derivative term that a plain
            # (v+ - 2v + v-)/h^2 leaks when the matched neighbors sit
            # asymmetrically, which would otherwise fake a curvature rise
            # at small h.
            aa, bb = a[ok], b[ok]
            second = 2.0 * np.abs(
                bb * v[ip][ok] - (aa + bb) * v[ok] + aa * v[im][ok]
            ) / (aa * bb * (aa + bb))
            kappa_ray[k] = float(second.max())
        live = np.flatnonzero(np.isfinite(kappa_ray) & (kappa_ray > 0))
        if live.size >= 2:
            # Slopes along one ray's own profile only: pooling first and
            # differentiating after would fake transitions wherever the set
            # of rays able to support a given h changes.
            lh = np.log(hs[live])
            lk = np.log(kappa_ray[live])
            slopes = np.diff(lk) / np.diff(lh)
            for j in np.flatnonzero(slopes < slope_threshold):
                h_mid = float(np.sqrt(hs[live[j]] * hs[live[j + 1]]))
                drops.append((float(slopes[j]), h_mid))
        upd = np.isfinite(kappa_ray) & (np.isnan(kappa) | (kappa_ray > kappa))
        kappa[upd] = kappa_ray[upd]

    found = []
    if drops:
        drops.sort(key=lambda p: p[0])
        found = sorted(h for _, h in drops[:3])

    if not found:
        if not np.isfinite(kappa).any() or np.nanmax(kappa) <= 0:
            return ScaleEstimate(1e-3 * mean_width, 1e-2 * mean_width,
                                 1e-1 * mean_width, True, hs, kappa)
        lam = 1.0 / float(np.sqrt(np.nanmax(kappa)))
        found = [lam]
    while len(found) < 3:
        found.append(found[-1])
    return ScaleEstimate(found[0], found[1], found[2], False, hs, kappa)


def select_seeds(bank: RayBank, lam_fine: float, dim: int):
    """Top ray samples by value, plus each ray's own champion.

    Global value ranking alone starves secondary basins in high dimension:
    a weak mode's best samples can all rank below the flank samples of a
    dominant mode. Every live ray therefore also contributes its single
    best sample, so any basin a ray grazes gets seeded no matter how it
    compares across basins. The union is thinned at the finest scale.
    """
    q = max(32, 4 * rays_per_kind(dim))
    pos, val = bank.positions_and_logl()
    finite = np.isfinite(val)
    pos, val = pos[finite], val[finite]
    if pos.shape[0] == 0:
        return np.zeros((0, dim))
    order = np.lexsort((np.arange(val.size), -val))
    pick = np.zeros(val.size, dtype=bool)
    pick[order[:q]] = True
    offset = 0
    for r in bank.rays:
        if r.dead:
            continue
        fin = np.flatnonzero(np.isfinite(np.asarray(r.logl)))
        if fin.size:
            pick[offset + int(np.argmax(np.asarray(r.logl)[fin]))] = True
        offset += fin.size
    idx = np.flatnonzero(pick)
    kept, _ = dedup_linf(pos[idx], val[idx], lam_fine)
    kept = idx[np.asarray(kept)]
    order = np.lexsort((kept, -val[kept]))
    return pos[kept[order]]


@dataclass(frozen=True)
class CoarsePeak:
    position: np.ndarray
    logl: float
    width: float
    grad_inf: float
    oscillation: int


def smoothed_gradient(problem, theta, sigma, k, rng, widths=None):
    """Average finite-difference gradient over a Gaussian position cloud.

    With sigma = 0 and k = 1 the cloud collapses onto the sample itself and
    this is exactly ``fd_gradient``.
    """
    th = np.atleast_2d(np.asarray(theta, dtype=np.float64))
    n, d = th.shape
    sig = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (d,))
    z = rng.standard_normal((n, int(k), d))
    pts = th[:, None, :] + sig[None, None, :] * z
    g, _ = fd_gradient(problem, pts.reshape(n * int(k), d), widths)
    return g.reshape(n, int(k), d).mean(axis=1)


def _smoothed_ascent(problem, theta, lam_fine, n_cloud, k_smooth, rng):
    """Climb the noise-averaged gradient to hop over fine-scale ripple."""
    th = np.array(theta, dtype=np.float64)
    if th.shape[0] == 0:
        return th
    sigma = th.std(axis=0)
    for _ in range(int(n_cloud)):
        g = smoothed_gradient(problem, th, sigma, k_smooth, rng, widths=lam_fine)
        nrm = np.linalg.norm(g, axis=1, keepdims=True)
        step = np.where(nrm > 0, g / np.where(nrm > 0, nrm, 1.0), 0.0)
        th = problem.bounds.clip(th + lam_fine * step)
    return th


def _momentum_descent(problem, theta, lam_fine, n_steps, rng, momentum=0.9):
    """Push samples downhill with momentum so they leave the current basin."""
    th = np.array(theta, dtype=np.float64)
    if th.shape[0] == 0:
        return th
    v = np.zeros_like(th)
    alpha = 0.5 * lam_fine
    for _ in range(int(n_steps)):
        g, _ = fd_gradient(problem, th, widths=lam_fine)
        v = momentum * v - alpha * g
        th = problem.bounds.clip(th + v)
    return th


def _reseed_from_unconverged(rng, n_lost, unconverged, lam_mid, lam_coarse, bounds):
    """Refill lost slots by shooting outward from wandering samples."""
    out = np.empty((n_lost, bounds.dim))
    for i in range(n_lost):
        base = unconverged[int(rng.integers(unconverged.shape[0]))]
        while True:
            z = rng.standard_normal(bounds.dim)
            nrm = float(np.linalg.norm(z))
            if nrm > 1e-12:
                break
        dist = rng.uniform(lam_mid, lam_coarse)
        out[i] = base + (dist / nrm) * z
    return bounds.clip(out)


def _reseed_orthonormal(rng, n_lost, peaks, lam_coarse, bounds):
    """Refill lost slots on signed orthonormal spokes around known peaks."""
    d = bounds.dim
    r = min(d, n_lost)
    q, _ = np.linalg.qr(rng.standard_normal((d, r)))
    n_peaks = peaks.shape[0]
    out = np.empty((n_lost, d))
    for i in range(n_lost):
        peak = peaks[i % n_peaks]
        spoke = (i // n_peaks) % (2 * r)
        sign = 1.0 if spoke % 2 == 0 else -1.0
        out[i] = peak + sign * lam_coarse * q[:, spoke // 2]
    return bounds.clip(out)


def discover_modes(problem, seeds, scales: ScaleEstimate, rng, *,
                   n_oscillations: int = 1, n_converge: int = 15,
                   n_anticonverge: int = 10, n_cloud: int = 5,
                   k_smooth: int = 8, stick_grad: float = 1e-6,
                   dedup_radius: float | None = None,
                   keep_ratio: float = 0.1) -> list[CoarsePeak]:
    """Stick/release search over a fixed population of samples.

    Each oscillation re-runs the ascent on every sample, sticks the ones
    that converged onto a peak within ``keep_ratio`` of the best value seen
    anywhere so far, collapses duplicate peaks, and (except on the last
    round) refills the freed slots and perturbs the rest: a smoothed-
    gradient climb first, then a momentum descent away from the basin.

    Raises the no-modes error, carrying the best sample seen, if nothing
    ever sticks.
    """
    bounds = problem.bounds
    lam_fine, lam_mid, lam_coarse = scales.as_tuple()
    if dedup_radius is None:
        dedup_radius = 1e-3 * float(np.mean(bounds.widths))
    positions = bounds.clip(np.atleast_2d(np.asarray(seeds, dtype=np.float64)))
    if positions.shape[0] == 0:
        raise NoModesFoundError(None, -np.inf, "no seeds to start from")

    n = positions.shape[0]
    stuck = np.zeros(n, dtype=bool)
    stuck_osc = np.zeros(n, dtype=np.int64)
    widths = np.full(n, lam_fine)
    logls = np.full(n, -np.inf)
    grad_inf = np.full(n, np.inf)
    best_pos, best_logl = None, -np.inf
    golden_enabled = True
    prev_used_golden = False
    prev_peak_count = 0

    for osc in range(1, int(n_oscillations) + 1):
        state = run_batch(problem, positions, n_converge, stick_grad, widths=lam_fine)
        positions = state.theta
        logls = state.logl
        grad_inf = state.grad_inf()
        gamma = state.width_estimate()
        widths = np.where(np.isfinite(gamma) & (gamma > 0), np.sqrt(gamma), lam_fine)

        finite = np.isfinite(logls)
        if finite.any():
            i = int(np.argmax(np.where(finite, logls, -np.inf)))
            if logls[i] > best_logl:
                best_pos, best_logl = positions[i].copy(), float(logls[i])

        floor = problem.peak_logl + np.log(keep_ratio)
        stuck = (grad_inf < stick_grad) & finite & (logls >= floor)
        stuck_osc[stuck & (stuck_osc == 0)] = osc

        lost = np.zeros(0, dtype=np.intp)
        if stuck.any():
            sidx = np.flatnonzero(stuck)
            kept_local, _ = dedup_linf(positions[sidx], logls[sidx], dedup_radius)
            kept = sidx[np.asarray(kept_local)]
            lost = np.setdiff1d(sidx, kept)
            stuck[lost] = False

        n_peaks = int(stuck.sum())
        if prev_used_golden and n_peaks <= prev_peak_count:
            golden_enabled = False
        prev_used_golden = False
        prev_peak_count = n_peaks

        if osc == int(n_oscillations):
            break

        unstuck_idx = np.flatnonzero(~stuck)
        if lost.size:
            wanderers = np.setdiff1d(unstuck_idx, lost)
            if wanderers.size >= 5:
                positions[lost] = _reseed_from_unconverged(
                    rng, lost.size, positions[wanderers], lam_mid, lam_coarse, bounds
                )
            elif stuck.any() and golden_enabled:
                positions[lost] = _reseed_orthonormal(
                    rng, lost.size, positions[np.flatnonzero(stuck)], lam_coarse, bounds
                )
                prev_used_golden = True

        if unstuck_idx.size:
            moved = _smoothed_ascent(
                problem, positions[unstuck_idx], lam_fine, n_cloud, k_smooth, rng
            )
            moved = _momentum_descent(problem, moved, lam_fine, n_anticonverge, rng)
            positions[unstuck_idx] = moved

    if not stuck.any():
        raise NoModesFoundError(
            best_pos, best_logl,
            f"no sample stuck after {n_oscillations} oscillation(s)",
        )
    peaks = []
    for i in np.flatnonzero(stuck):
        peaks.append(CoarsePeak(
            position=positions[i].copy(),
            logl=float(logls[i]),
            width=float(widths[i]),
            grad_inf=float(grad_inf[i]),
            oscillation=int(stuck_osc[i]),
        ))
    peaks.sort(key=lambda p: -p.logl)
    return peaks
