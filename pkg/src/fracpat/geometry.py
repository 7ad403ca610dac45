"""Geometry audit for the uniqueness/stability conditions.

Works in the sound-speed metric g = c^-2 (Euclidean): leaf normal fields and
their integral curves, strict-convexity proxies of foliation leaves, normal
distances and regions of influence, the injectivity time from the longest
integral curve, and the visibility time from geodesic shooting.  A fast
marching eikonal solver provides the metric distance oracle.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .medium_grid import Field, Grid2D

__all__ = [
    "SoundMetric",
    "FoliationSpec",
    "ConvexityReport",
    "InfluenceRegion",
    "RayResult",
    "VisibilityReport",
    "leaf_normal_field",
    "sample_leaf",
    "convexity_check",
    "dist_nu",
    "influence_region",
    "time_T0",
    "time_T1",
    "trace_geodesic",
    "trace_geodesic_lagrangian",
    "fast_marching_distance",
    "distance_comparison_fit",
    "gamma_crossings",
]

_FD = 1e-5  # step for finite-difference gradients of analytic callables


class SoundMetric:
    """Conformal metric c^-2 dx^2 described by a sound-speed callable.

    `c_fn` maps coordinate arrays (x, y) to speeds; `grad_fn`, when given,
    returns (dc/dx, dc/dy).  Grid-sampled speeds are wrapped with bilinear
    interpolation.
    """

    def __init__(
        self,
        c_fn: Callable,
        grad_fn: Callable | None = None,
        c0: float = 1e-6,
    ) -> None:
        self.c_fn = c_fn
        self._grad_fn = grad_fn
        self.c0 = c0

    @classmethod
    def constant(cls, value: float = 1.0) -> "SoundMetric":
        return cls(lambda x, y: np.full_like(np.asarray(x, dtype=float), value),
                   lambda x, y: (np.zeros_like(np.asarray(x, dtype=float)),) * 2)

    @classmethod
    def from_grid(cls, c: np.ndarray, grid: Grid2D) -> "SoundMetric":
        x0, y0 = grid.origin
        h = grid.h
        nx, ny = c.shape

        def interp(x, y):
            fi = np.clip((np.asarray(x, dtype=float) - x0) / h, 0, nx - 1 - 1e-12)
            fj = np.clip((np.asarray(y, dtype=float) - y0) / h, 0, ny - 1 - 1e-12)
            i = fi.astype(int)
            j = fj.astype(int)
            s = fi - i
            t = fj - j
            return (
                c[i, j] * (1 - s) * (1 - t)
                + c[i + 1, j] * s * (1 - t)
                + c[i, j + 1] * (1 - s) * t
                + c[i + 1, j + 1] * s * t
            )

        return cls(interp)

    def c(self, x, y):
        return self.c_fn(x, y)

    def grad_c(self, x, y):
        if self._grad_fn is not None:
            return self._grad_fn(x, y)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        dx = (self.c_fn(x + _FD, y) - self.c_fn(x - _FD, y)) / (2 * _FD)
        dy = (self.c_fn(x, y + _FD) - self.c_fn(x, y - _FD)) / (2 * _FD)
        return dx, dy

    def g_length(self, p: np.ndarray, q: np.ndarray) -> float:
        """Metric length of the short segment pq (midpoint rule)."""
        mid = 0.5 * (p + q)
        return float(np.linalg.norm(q - p) / self.c(mid[0], mid[1]))


@dataclass
class FoliationSpec:
    """Leaves as level sets of a scalar function; interior = increasing rho."""

    rho: Callable
    s_range: tuple[float, float]
    grad_rho: Callable | None = None
    anchor: tuple[float, float] = (0.0, 0.0)  # star-shape center for leaf sampling
    eps_grad: float = 1e-10

    def grad(self, x, y):
        if self.grad_rho is not None:
            return self.grad_rho(x, y)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        dx = (self.rho(x + _FD, y) - self.rho(x - _FD, y)) / (2 * _FD)
        dy = (self.rho(x, y + _FD) - self.rho(x, y - _FD)) / (2 * _FD)
        return dx, dy


def leaf_normal_field(fol: FoliationSpec, metric: SoundMetric, points: np.ndarray) -> np.ndarray:
    """Interior-pointing g-unit normal at the given points.

    nu = c * grad(rho)/|grad(rho)| points toward increasing rho (the leaf
    interiors) and has unit length in the sound-speed metric, since the
    metric length of a vector is its Euclidean length divided by c.
    """
    pts = np.atleast_2d(points)
    gx, gy = fol.grad(pts[:, 0], pts[:, 1])
    norm = np.hypot(gx, gy)
    if np.any(norm < fol.eps_grad):
        raise ValueError("degenerate level-function gradient on the audited band")
    c = metric.c(pts[:, 0], pts[:, 1])
    out = np.stack([c * gx / norm, c * gy / norm], axis=-1)
    return out if points.ndim > 1 else out[0]


def sample_leaf(fol: FoliationSpec, s: float, n_samples: int = 64, r_max: float = 10.0) -> np.ndarray:
    """Points on the leaf {rho = s}, found by bisection along rays from the
    anchor (leaves are assumed star-shaped around it)."""
    ax, ay = fol.anchor
    out = np.empty((n_samples, 2))
    angles = 2.0 * math.pi * np.arange(n_samples) / n_samples
    for k, th in enumerate(angles):
        dx, dy = math.cos(th), math.sin(th)

        def f(r):
            return float(fol.rho(ax + r * dx, ay + r * dy)) - s

        lo, hi = 0.0, None
        f_lo = f(lo)
        r = 1e-3
        while r <= r_max:
            if f_lo * f(r) <= 0.0:
                hi = r
                break
            r *= 1.6
        if hi is None:
            raise ValueError(f"leaf s={s} not found along ray at angle {th:.3f}")
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if f_lo * f(mid) <= 0.0:
                hi = mid
            else:
                lo = mid
                f_lo = f(lo)
        r = 0.5 * (lo + hi)
        out[k] = (ax + r * dx, ay + r * dy)
    return out


def _project_to_leaf(fol: FoliationSpec, p: np.ndarray, s: float, iters: int = 40) -> np.ndarray:
    """Newton projection of p onto {rho = s} along the rho gradient."""
    q = p.astype(float).copy()
    for _ in range(iters):
        r = float(fol.rho(q[0], q[1])) - s
        if abs(r) < 1e-14:
            break
        gx, gy = fol.grad(q[0], q[1])
        n2 = gx * gx + gy * gy
        q -= r * np.array([gx, gy]) / n2
    return q


# ---------------------------------------------------------------------------
# Geodesics of the conformal metric


def _hamiltonian_rhs(metric: SoundMetric, x, y, xi1, xi2):
    c = metric.c(x, y)
    dcx, dcy = metric.grad_c(x, y)
    c2 = c * c
    xi_sq = xi1 * xi1 + xi2 * xi2
    return (
        c2 * xi1,
        c2 * xi2,
        -c * dcx * xi_sq,
        -c * dcy * xi_sq,
    )


def trace_geodesic(
    metric: SoundMetric,
    x0: np.ndarray,
    direction: np.ndarray,
    step: float = 2e-3,
    max_length: float = 10.0,
    stop: Callable[[np.ndarray], bool] | None = None,
) -> "RayResult":
    """Unit-speed geodesic by RK4 on the Hamiltonian system
    dx/dt = c^2 xi,  dxi/dt = -grad(c^2) |xi|^2 / 2.

    The parameter equals metric arc length.  Stops when `stop(x)` first
    returns True (the crossing is refined by bisection) or at max_length.
    """
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    c = float(metric.c(x0[0], x0[1]))
    state = np.array([x0[0], x0[1], d[0] / c, d[1] / c])
    pts = [state[:2].copy()]
    n_max = int(math.ceil(max_length / step))
    t = 0.0
    hit = False
    for _ in range(n_max):
        prev = state.copy()
        state = _rk4(metric, state, step)
        t += step
        pts.append(state[:2].copy())
        if stop is not None and stop(state[:2]):
            lo_s, hi_s = prev, state
            lo_t, hi_t = t - step, t
            for _ in range(40):
                mid_t = 0.5 * (lo_t + hi_t)
                mid_s = _rk4(metric, lo_s, mid_t - lo_t)
                if stop(mid_s[:2]):
                    hi_s, hi_t = mid_s, mid_t
                else:
                    lo_s, lo_t = mid_s, mid_t
            state, t = hi_s, hi_t
            pts[-1] = state[:2].copy()
            hit = True
            break
    c_end = float(metric.c(state[0], state[1]))
    speed = c_end * math.hypot(state[2], state[3])
    return RayResult(
        points=np.array(pts),
        length=t,
        end=state[:2].copy(),
        end_velocity=np.array([state[2], state[3]]) * c_end**2,
        exited=hit,
        speed_drift=abs(speed - 1.0),
    )


def _rk4(metric: SoundMetric, state: np.ndarray, dt: float) -> np.ndarray:
    def f(s):
        return np.array(_hamiltonian_rhs(metric, s[0], s[1], s[2], s[3]))

    k1 = f(state)
    k2 = f(state + 0.5 * dt * k1)
    k3 = f(state + 0.5 * dt * k2)
    k4 = f(state + dt * k3)
    return state + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def trace_geodesic_lagrangian(
    metric: SoundMetric,
    x0: np.ndarray,
    direction: np.ndarray,
    step: float = 2e-3,
    max_length: float = 10.0,
    stop: Callable[[np.ndarray], bool] | None = None,
) -> "RayResult":
    """Cross-check integrator in position-velocity form.

    For g = c^-2 (Euclidean metric), with phi = log(1/c) the geodesics obey
    x'' = -2 (x'. grad phi) x' + |x'|^2 grad phi; unit metric speed means
    Euclidean speed c along the ray.
    """

    def rhs(s):
        x, y, vx, vy = s
        c = metric.c(x, y)
        dcx, dcy = metric.grad_c(x, y)
        px, py = -dcx / c, -dcy / c  # grad of log(1/c)
        vdotp = vx * px + vy * py
        v2 = vx * vx + vy * vy
        return np.array([vx, vy, -2 * vdotp * vx + v2 * px, -2 * vdotp * vy + v2 * py])

    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    c = float(metric.c(x0[0], x0[1]))
    state = np.array([x0[0], x0[1], c * d[0], c * d[1]])
    pts = [state[:2].copy()]
    t = 0.0
    hit = False
    for _ in range(int(math.ceil(max_length / step))):
        prev = state.copy()

        def stepper(s, dt):
            k1 = rhs(s)
            k2 = rhs(s + 0.5 * dt * k1)
            k3 = rhs(s + 0.5 * dt * k2)
            k4 = rhs(s + dt * k3)
            return s + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

        state = stepper(state, step)
        t += step
        pts.append(state[:2].copy())
        if stop is not None and stop(state[:2]):
            lo_s, lo_t, hi_t = prev, t - step, t
            for _ in range(40):
                mid_t = 0.5 * (lo_t + hi_t)
                mid_s = stepper(lo_s, mid_t - lo_t)
                if stop(mid_s[:2]):
                    hi_t = mid_t
                else:
                    lo_s, lo_t = mid_s, mid_t
            state, t = stepper(lo_s, hi_t - lo_t), hi_t
            pts[-1] = state[:2].copy()
            hit = True
            break
    c_end = float(metric.c(state[0], state[1]))
    return RayResult(
        points=np.array(pts),
        length=t,
        end=state[:2].copy(),
        end_velocity=state[2:].copy(),
        exited=hit,
        speed_drift=abs(math.hypot(state[2], state[3]) / c_end - 1.0),
    )


@dataclass
class RayResult:
    points: np.ndarray
    length: float
    end: np.ndarray
    end_velocity: np.ndarray
    exited: bool
    speed_drift: float


# ---------------------------------------------------------------------------
# Normal-curve distances


def dist_nu(
    x: np.ndarray,
    fol: FoliationSpec,
    metric: SoundMetric,
    target_s: float,
    rtol: float = 1e-9,
    max_length: float = 50.0,
) -> float:
    """Metric length of the integral-curve segment of the unit normal field
    from x to the leaf {rho = target_s}.

    The curve is integrated with adaptive RK45; because the field is g-unit,
    the parameter is the metric arc length, and the final crossing is located
    by the integrator's root finder (tolerance well below 1e-6).
    """
    x = np.asarray(x, dtype=float)
    s_here = float(fol.rho(x[0], x[1]))
    sign = 1.0 if target_s > s_here else -1.0
    if abs(target_s - s_here) < 1e-15:
        return 0.0

    def rhs(_, p):
        nu = leaf_normal_field(fol, metric, p[None, :])[0]
        return sign * nu

    def event(_, p):
        return float(fol.rho(p[0], p[1])) - target_s

    event.terminal = True
    sol = solve_ivp(
        rhs,
        (0.0, max_length),
        x,
        method="RK45",
        rtol=rtol,
        atol=1e-12,
        events=event,
        dense_output=False,
    )
    if sol.t_events[0].size == 0:
        raise ValueError("integral curve did not reach the target leaf")
    return float(sol.t_events[0][0])


def _batched_dist_nu(
    points: np.ndarray,
    fol: FoliationSpec,
    metric: SoundMetric,
    target_s: float,
    step: float = 2e-3,
    max_length: float = 20.0,
) -> np.ndarray:
    """Fixed-step vectorized RK4 for dist_nu over many points at once.

    Each point marches down the foliation parameter until its rho value
    crosses the target; the final partial step is linearly interpolated.
    Points whose curves never cross within max_length get NaN.
    """
    pts = points.astype(float).copy()
    n = len(pts)
    dist = np.full(n, np.nan)
    active = np.ones(n, dtype=bool)
    rho_prev = np.asarray(fol.rho(pts[:, 0], pts[:, 1]), dtype=float)
    sign = -1.0 if target_s < np.nanmax(rho_prev) else 1.0

    def nu_at(p):
        gx, gy = fol.grad(p[:, 0], p[:, 1])
        nrm = np.hypot(gx, gy)
        nrm = np.where(nrm < fol.eps_grad, np.nan, nrm)
        c = metric.c(p[:, 0], p[:, 1])
        return np.stack([sign * c * gx / nrm, sign * c * gy / nrm], axis=-1)

    t = 0.0
    while active.any() and t < max_length:
        p = pts[active]
        k1 = nu_at(p)
        k2 = nu_at(p + 0.5 * step * k1)
        k3 = nu_at(p + 0.5 * step * k2)
        k4 = nu_at(p + step * k3)
        newp = p + (step / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        rho_new = np.asarray(fol.rho(newp[:, 0], newp[:, 1]), dtype=float)
        old = rho_prev[active]
        crossed = (old - target_s) * (rho_new - target_s) <= 0.0
        frac = np.where(
            crossed, np.abs(old - target_s) / np.maximum(np.abs(rho_new - old), 1e-300), 1.0
        )
        idx = np.nonzero(active)[0]
        dist[idx[crossed]] = t + step * frac[crossed]
        pts[active] = newp
        rho_prev[idx] = rho_new
        bad = np.isnan(rho_new)
        active[idx[crossed | bad]] = False
        t += step
    return dist


@dataclass
class InfluenceRegion:
    """tau = T - dist_nu(x, first leaf) and the mask where it is positive."""

    tau: Field
    mask: np.ndarray
    s0: float
    s_t: float


def influence_region(
    fol: FoliationSpec,
    metric: SoundMetric,
    t_final: float,
    grid: Grid2D,
    step: float = 2e-3,
) -> InfluenceRegion:
    """Region of influence for the pair (foliation, T) on the grid.

    s0 is the first leaf parameter meeting the closed domain (the infimum of
    rho over the domain clipped to the foliation range); tau comes from the
    batched normal-curve integration, and the mask keeps domain nodes of the
    audited band with positive remaining time.
    """
    X, Y = grid.meshgrid()
    rho_vals = np.asarray(fol.rho(X, Y), dtype=float)
    s_lo, s_hi = fol.s_range
    inside = grid.interior_mask
    s0 = max(s_lo, float(np.nanmin(rho_vals[inside])))
    band = inside & (rho_vals >= s0) & (rho_vals <= s_hi)
    pts = np.stack([X[band], Y[band]], axis=-1)
    d = _batched_dist_nu(pts, fol, metric, s0, step=step)
    tau = np.full((grid.nx, grid.ny), np.nan)
    tau[band] = t_final - d
    mask = band & (tau > 0.0) & ~np.isnan(tau)
    # s_T: largest sampled leaf level whose in-domain nodes all satisfy T > dist
    s_t = s0
    for s in np.linspace(s0, s_hi, 64):
        on_band = band & (rho_vals <= s)
        vals = tau[on_band]
        if vals.size and np.all(vals[~np.isnan(vals)] > 0.0):
            s_t = s
    tau_field = Field(values=np.where(np.isnan(tau), 0.0, tau), grid=grid)
    return InfluenceRegion(tau=tau_field, mask=mask, s0=s0, s_t=s_t)


def time_T0(
    k_mask: np.ndarray,
    fol: FoliationSpec,
    metric: SoundMetric,
    grid: Grid2D,
    step: float = 2e-3,
) -> float:
    """Injectivity time: the largest normal-curve distance from the source
    region to the first leaf."""
    X, Y = grid.meshgrid()
    rho_vals = np.asarray(fol.rho(X, Y), dtype=float)
    s0 = max(fol.s_range[0], float(np.nanmin(rho_vals[grid.interior_mask])))
    pts = np.stack([X[k_mask], Y[k_mask]], axis=-1)
    d = _batched_dist_nu(pts, fol, metric, s0, step=step)
    if np.any(np.isnan(d)):
        bad = pts[np.isnan(d)]
        raise ValueError(
            f"{len(bad)} source nodes have no integral curve reaching the first "
            f"leaf (first at {bad[0]})"
        )
    return float(d.max())


# ---------------------------------------------------------------------------
# Visibility time by geodesic shooting


@dataclass
class VisibilityReport:
    t1: float
    n_rays: int
    tangential: list[tuple[int, float]]  # (ray index, grazing angle)
    not_exited: list[int]
    missed_gamma: list[int]
    max_speed_drift: float


def _trace_rays_batch(
    metric: SoundMetric,
    starts: np.ndarray,
    directions: np.ndarray,
    inside_fn: Callable,
    step: float,
    max_length: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Step a whole fan of Hamiltonian rays together; returns exit data.

    inside_fn takes coordinate arrays (x, y) and returns a boolean array.
    Each ray freezes at its first domain exit (refined by one bisection pass
    on the crossing step); rays still inside at max_length stay flagged.
    """
    n = len(starts)
    x = starts.astype(float).copy()
    c0 = np.asarray(metric.c(x[:, 0], x[:, 1]), dtype=float)
    xi = directions / np.linalg.norm(directions, axis=1, keepdims=True) / c0[:, None]
    state = np.concatenate([x, xi], axis=1)
    lengths = np.full(n, np.nan)
    active = np.ones(n, dtype=bool)
    end_state = state.copy()

    def rhs(s):
        c = np.asarray(metric.c(s[:, 0], s[:, 1]), dtype=float)
        dcx, dcy = metric.grad_c(s[:, 0], s[:, 1])
        xi_sq = s[:, 2] ** 2 + s[:, 3] ** 2
        out = np.empty_like(s)
        c2 = c * c
        out[:, 0] = c2 * s[:, 2]
        out[:, 1] = c2 * s[:, 3]
        out[:, 2] = -c * dcx * xi_sq
        out[:, 3] = -c * dcy * xi_sq
        return out

    def rk4(s, dt):
        k1 = rhs(s)
        k2 = rhs(s + 0.5 * dt * k1)
        k3 = rhs(s + 0.5 * dt * k2)
        k4 = rhs(s + dt * k3)
        return s + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

    t = 0.0
    n_steps = int(math.ceil(max_length / step))
    for _ in range(n_steps):
        if not active.any():
            break
        prev = state[active]
        new = rk4(prev, step)
        out_now = ~np.asarray(inside_fn(new[:, 0], new[:, 1]), dtype=bool)
        idx = np.nonzero(active)[0]
        if out_now.any():
            # batched bisection on the crossing step
            lo = prev[out_now]
            cur_lo = lo.copy()
            t_lo = np.zeros(len(lo))
            t_hi = np.full(len(lo), step)
            for _ in range(25):
                dt_try = 0.5 * (t_lo + t_hi) - t_lo
                mid = _rk4_batch_var(rhs, cur_lo, dt_try)
                is_out = ~np.asarray(inside_fn(mid[:, 0], mid[:, 1]), dtype=bool)
                t_mid = t_lo + dt_try
                t_hi = np.where(is_out, t_mid, t_hi)
                cur_lo = np.where(is_out[:, None], cur_lo, mid)
                t_lo = np.where(is_out, t_lo, t_mid)
            final = _rk4_batch_var(rhs, cur_lo, t_hi - t_lo)
            rows = idx[out_now]
            end_state[rows] = final
            lengths[rows] = t + t_hi
            active[rows] = False
            keep = ~out_now
            state[idx[keep]] = new[keep]
        else:
            state[idx] = new
        t += step
    end_state[active] = state[active]
    c_end = np.asarray(metric.c(end_state[:, 0], end_state[:, 1]), dtype=float)
    speed = c_end * np.hypot(end_state[:, 2], end_state[:, 3])
    vel = end_state[:, 2:] * (c_end**2)[:, None]
    return end_state[:, :2], vel, lengths, ~np.isnan(lengths), np.abs(speed - 1.0)


def _rk4_batch_var(rhs, s, dt):
    """Batched RK4 with a per-row step size (dt is a 1-d array)."""
    dt = dt[:, None]
    k1 = rhs(s)
    k2 = rhs(s + 0.5 * dt * k1)
    k3 = rhs(s + 0.5 * dt * k2)
    k4 = rhs(s + dt * k3)
    return s + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def time_T1(
    metric: SoundMetric,
    inside_fn: Callable,
    mode: str,
    sources: np.ndarray,
    n_directions: int = 64,
    gamma_fn: Callable | None = None,
    boundary_normal_fn: Callable | None = None,
    step: float = 1e-3,
    max_length: float = 12.0,
    tangency_deg: float = 5.0,
) -> VisibilityReport:
    """Visibility time from fans of unit-speed geodesics.

    mode="partial": sources are points of the source region; rays must exit
    the domain through the observation set non-tangentially, and T1 is the
    worst exit time.  mode="full": sources are boundary points shot inward,
    and T1 is half the longest boundary-to-boundary chord.  Rays exceeding
    max_length are reported as possible trapping.

    inside_fn and gamma_fn take coordinate arrays (x, y) and return boolean
    arrays; boundary_normal_fn maps a point to the outward unit normal.
    """
    if mode not in ("partial", "full"):
        raise ValueError("mode must be 'partial' or 'full'")
    starts: list[np.ndarray] = []
    dirs: list[np.ndarray] = []
    for src in np.atleast_2d(sources):
        if mode == "full":
            nrm = boundary_normal_fn(src)
            base = math.atan2(-nrm[1], -nrm[0])
            angles = base + np.linspace(-0.5 * math.pi, 0.5 * math.pi, n_directions + 2)[1:-1]
            start = src - 1e-9 * nrm  # nudge just inside
        else:
            angles = 2.0 * math.pi * np.arange(n_directions) / n_directions
            start = src
        for th in angles:
            starts.append(np.asarray(start, dtype=float))
            dirs.append(np.array([math.cos(th), math.sin(th)]))
    ends, vels, lengths, exited, drifts = _trace_rays_batch(
        metric, np.array(starts), np.array(dirs), inside_fn, step, max_length
    )
    exit_times: list[float] = []
    tangential: list[tuple[int, float]] = []
    not_exited = [int(i) for i in np.nonzero(~exited)[0]]
    missed: list[int] = []
    for i in range(len(ends)):
        if not exited[i]:
            continue
        if boundary_normal_fn is not None:
            nrm = boundary_normal_fn(ends[i])
            v = vels[i] / np.linalg.norm(vels[i])
            graze = math.degrees(abs(math.asin(float(np.clip(np.dot(v, nrm), -1, 1)))))
            if graze < tangency_deg:
                tangential.append((i, graze))
        if gamma_fn is not None and not bool(gamma_fn(ends[i][0], ends[i][1])):
            missed.append(i)
        else:
            exit_times.append(float(lengths[i]))
    if not exit_times:
        raise ValueError("no ray exited through the observation set")
    t1 = max(exit_times)
    if mode == "full":
        t1 = 0.5 * t1
    return VisibilityReport(
        t1=t1,
        n_rays=len(ends),
        tangential=tangential,
        not_exited=not_exited,
        missed_gamma=missed,
        max_speed_drift=float(drifts.max()),
    )


# ---------------------------------------------------------------------------
# Strict convexity


@dataclass
class ConvexityReport:
    s: float
    kappa_s: float
    kappa_min: float
    kappa_max: float
    per_sample: np.ndarray

    def __post_init__(self) -> None:
        if self.kappa_min > self.kappa_max:
            raise ValueError("inconsistent curvature bounds")

    @property
    def strictly_convex(self) -> bool:
        return self.kappa_s > 0.0


def convexity_check(
    fol: FoliationSpec,
    metric: SoundMetric,
    s: float,
    n_samples: int = 64,
    delta: float = 0.02,
    tangent_sep: float = 2e-3,
    samples: np.ndarray | None = None,
) -> ConvexityReport:
    """Minimum principal-curvature proxy of the leaf {rho = s} in the metric.

    At each sample the leaf is locally carried along short normal geodesics:
    two neighbouring leaf points are shot along the interior g-unit normal to
    arc lengths +-delta, and the induced metric coefficient along the leaf
    direction is the squared separation of the endpoints.  Its normal
    log-derivative (central difference) is the curvature of the quadratic
    form in normal coordinates, with the sign fixed so that Euclidean circles
    with the interior normal give +1/r.  In two dimensions the tangent space
    of the leaf is one-dimensional, so the minimization over unit covectors
    is the value along that single direction.
    """
    if samples is None:
        if n_samples < 64:
            raise ValueError("leaves are audited with at least 64 samples")
        base = sample_leaf(fol, s, n_samples)
    else:
        base = np.atleast_2d(samples)
        if len(base) < 64:
            raise ValueError("leaves are audited with at least 64 samples")
    n_samples = len(base)
    kappas = np.empty(n_samples)
    for k in range(n_samples):
        p = base[k]
        gx, gy = fol.grad(p[0], p[1])
        tang = np.array([-gy, gx])
        tang /= np.linalg.norm(tang)
        q = _project_to_leaf(fol, p + tangent_sep * tang, s)
        ends = {}
        for lab, pt in (("p", p), ("q", q)):
            nu = leaf_normal_field(fol, metric, pt[None, :])[0]
            plus = trace_geodesic(metric, pt, nu, step=delta / 8.0, max_length=delta)
            minus = trace_geodesic(metric, pt, -nu, step=delta / 8.0, max_length=delta)
            ends[lab] = (minus.end, pt, plus.end)
        w = [metric.g_length(ends["p"][i], ends["q"][i]) for i in range(3)]
        kappas[k] = -(w[2] - w[0]) / (2.0 * delta * w[1])
    return ConvexityReport(
        s=s,
        kappa_s=float(kappas.min()),
        kappa_min=float(kappas.min()),
        kappa_max=float(kappas.max()),
        per_sample=kappas,
    )


# ---------------------------------------------------------------------------
# Fast marching (eikonal) distance in the sound-speed metric


def fast_marching_distance(
    metric: SoundMetric,
    extent: tuple[float, float, float, float],
    n: int,
    source_fn: Callable,
    second_order: bool = True,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """First-arrival metric distance to the zero set of `source_fn`.

    Solves |grad T| = 1/c upwind on an n x n grid over the extent.  Nodes
    whose source_fn changes sign against a neighbour are initialized with
    the linearized distance |f|/|grad f| / c.  Returns (T, xs, ys).
    """
    x_lo, x_hi, y_lo, y_hi = extent
    xs = np.linspace(x_lo, x_hi, n)
    ys = np.linspace(y_lo, y_hi, n)
    hx = xs[1] - xs[0]
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    f = np.asarray(source_fn(X, Y), dtype=float)
    c = np.asarray(metric.c(X, Y), dtype=float)
    slowness = 1.0 / c
    T = np.full((n, n), np.inf)
    status = np.zeros((n, n), dtype=np.int8)  # 0 far, 1 trial, 2 accepted
    heap: list[tuple[float, int, int]] = []

    near = np.zeros((n, n), dtype=bool)
    near[:-1, :] |= f[:-1, :] * f[1:, :] <= 0.0
    near[1:, :] |= f[:-1, :] * f[1:, :] <= 0.0
    near[:, :-1] |= f[:, :-1] * f[:, 1:] <= 0.0
    near[:, 1:] |= f[:, :-1] * f[:, 1:] <= 0.0
    gfx, gfy = np.gradient(f, hx)
    gn = np.hypot(gfx, gfy)
    init = np.abs(f) / np.maximum(gn, 1e-300) * slowness
    for i, j in np.argwhere(near):
        T[i, j] = init[i, j]
        status[i, j] = 1
        heapq.heappush(heap, (T[i, j], i, j))

    def update(i: int, j: int) -> float:
        best = np.inf
        # one-sided values along each axis, optionally second order
        cands = []
        for axis, (di, dj) in (("x", (1, 0)), ("y", (0, 1))):
            vals = []
            for sgn in (-1, 1):
                i1, j1 = i + sgn * di, j + sgn * dj
                if 0 <= i1 < n and 0 <= j1 < n and status[i1, j1] == 2:
                    v1 = T[i1, j1]
                    i2, j2 = i + 2 * sgn * di, j + 2 * sgn * dj
                    if (
                        second_order
                        and 0 <= i2 < n
                        and 0 <= j2 < n
                        and status[i2, j2] == 2
                        and T[i2, j2] <= v1
                    ):
                        vals.append((v1, T[i2, j2]))
                    else:
                        vals.append((v1, None))
            if vals:
                vals.sort(key=lambda t: t[0])
                cands.append(vals[0])
            else:
                cands.append(None)
        sw = slowness[i, j] * hx
        a = cands[0]
        b = cands[1]

        def solve(pair_a, pair_b):
            # quadratic for T with optional second-order one-sided stencils
            coefs = []  # (alpha_k, beta_k): (alpha T - beta)^2 terms
            for pair in (pair_a, pair_b):
                if pair is None:
                    continue
                v1, v2 = pair
                if v2 is not None:
                    coefs.append((1.5, 2.0 * v1 - 0.5 * v2))
                else:
                    coefs.append((1.0, v1))
            if not coefs:
                return np.inf
            A = sum(al * al for al, _ in coefs)
            B = -2.0 * sum(al * be for al, be in coefs)
            C = sum(be * be for _, be in coefs) - sw * sw
            disc = B * B - 4 * A * C
            if disc < 0.0:
                # fall back to the smaller single-sided update
                vals = [be / al + sw / al for al, be in coefs]
                return min(vals)
            t = (-B + math.sqrt(disc)) / (2 * A)
            if len(coefs) == 2:
                hi = max(be / al for al, be in coefs)
                if t < hi:
                    vals = [be / al + sw / al for al, be in coefs]
                    return min(vals)
            return t

        best = solve(a, b)
        return best

    while heap:
        t, i, j = heapq.heappop(heap)
        if status[i, j] == 2 or t > T[i, j]:
            continue
        status[i, j] = 2
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            i1, j1 = i + di, j + dj
            if 0 <= i1 < n and 0 <= j1 < n and status[i1, j1] != 2:
                t_new = update(i1, j1)
                if t_new < T[i1, j1]:
                    T[i1, j1] = t_new
                    status[i1, j1] = 1
                    heapq.heappush(heap, (t_new, i1, j1))
    return T, xs, ys


def _bilinear(T: np.ndarray, xs: np.ndarray, ys: np.ndarray, p: np.ndarray) -> float:
    hx = xs[1] - xs[0]
    fi = (p[0] - xs[0]) / hx
    fj = (p[1] - ys[0]) / hx
    i = int(np.clip(fi, 0, len(xs) - 2))
    j = int(np.clip(fj, 0, len(ys) - 2))
    s, t = fi - i, fj - j
    return float(
        T[i, j] * (1 - s) * (1 - t)
        + T[i + 1, j] * s * (1 - t)
        + T[i, j + 1] * (1 - s) * t
        + T[i + 1, j + 1] * s * t
    )


@dataclass
class DistanceFit:
    c1: float
    c2: float
    c3: float
    offsets: np.ndarray
    d_nu: np.ndarray
    d_g: np.ndarray
    foot_gap: np.ndarray


def distance_comparison_fit(
    fol: FoliationSpec,
    metric: SoundMetric,
    s: float,
    offsets: np.ndarray,
    n_samples: int = 24,
    fmm_extent: tuple[float, float, float, float] = (-1.5, 1.5, -1.5, 1.5),
    fmm_n: int = 513,
) -> DistanceFit:
    """Fitted constants of the normal-vs-metric distance comparisons.

    Points are laid at prescribed normal-curve distances from the leaf, the
    metric distance to the leaf comes from the fast-marching oracle, and the
    metric foot is found by gradient descent on the distance field.  C1 is
    the largest ratio d_nu/d_g; C2 and C3 are least-squares constants of the
    quadratic bounds |d_nu - d_g| <= C2 d_nu^2 and foot_gap <= C3 d_nu^2
    (the x^4 weighting makes the fit insensitive to adding smaller offsets).
    """
    base = sample_leaf(fol, s, n_samples)
    T, xs, ys = fast_marching_distance(
        metric, fmm_extent, fmm_n, lambda X, Y: np.asarray(fol.rho(X, Y)) - s
    )
    hx = xs[1] - xs[0]
    rows = []
    for p in base:
        nu = leaf_normal_field(fol, metric, p[None, :])[0]
        for d in offsets:
            ray = trace_geodesic_along_field(fol, metric, p, d)
            x = ray
            d_g = _bilinear(T, xs, ys, x)
            foot = _descend_to_leaf(T, xs, ys, x, fol, s)
            gap = metric.g_length(foot, p)
            rows.append((d, d_g, gap))
    rows = np.array(rows)
    d_nu_v, d_g_v, gap_v = rows[:, 0], rows[:, 1], rows[:, 2]
    c1 = float(np.max(d_nu_v / np.maximum(d_g_v, 1e-300)))
    x2 = d_nu_v**2
    c2 = float(np.dot(np.abs(d_nu_v - d_g_v), x2) / np.dot(x2, x2))
    c3 = float(np.dot(gap_v, x2) / np.dot(x2, x2))
    return DistanceFit(c1=c1, c2=c2, c3=c3, offsets=rows[:, 0], d_nu=d_nu_v, d_g=d_g_v, foot_gap=gap_v)


def gamma_crossings(
    fol: FoliationSpec,
    metric: SoundMetric,
    start: np.ndarray,
    inside_fn: Callable,
    gamma_fn: Callable,
    step: float = 2e-3,
    max_length: float = 10.0,
) -> int:
    """Count observation-set crossings of the normal integral curve through
    `start`, traced in both directions (the admissibility condition asks for
    exactly one)."""
    count = 0
    for sgn in (+1.0, -1.0):
        x = start.astype(float).copy()
        was_inside = bool(inside_fn(x[0], x[1]))
        travelled = 0.0
        while travelled < max_length:
            gx, gy = fol.grad(x[0], x[1])
            nrm = math.hypot(float(gx), float(gy))
            if nrm < fol.eps_grad:
                break
            c = float(metric.c(x[0], x[1]))
            nu = sgn * c / nrm * np.array([float(gx), float(gy)])

            def rk4(q, dt):
                def f(p):
                    ggx, ggy = fol.grad(p[0], p[1])
                    nn = math.hypot(float(ggx), float(ggy))
                    if nn < fol.eps_grad:
                        return np.zeros(2)
                    cc = float(metric.c(p[0], p[1]))
                    return sgn * cc / nn * np.array([float(ggx), float(ggy)])

                k1 = f(q)
                k2 = f(q + 0.5 * dt * k1)
                k3 = f(q + 0.5 * dt * k2)
                k4 = f(q + dt * k3)
                return q + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

            x_new = rk4(x, step)
            now_inside = bool(inside_fn(x_new[0], x_new[1]))
            if now_inside != was_inside:
                lo, hi = x, x_new
                for _ in range(40):
                    mid = 0.5 * (lo + hi)
                    if bool(inside_fn(mid[0], mid[1])) == was_inside:
                        lo = mid
                    else:
                        hi = mid
                if bool(gamma_fn(hi[0], hi[1])):
                    count += 1
            was_inside = now_inside
            if np.allclose(x_new, x):
                break
            x = x_new
            travelled += step
    return count


def trace_geodesic_along_field(
    fol: FoliationSpec, metric: SoundMetric, p: np.ndarray, length: float, step: float = 1e-3
) -> np.ndarray:
    """March a point along the integral curve of nu for a given arc length."""
    x = p.astype(float).copy()
    n_full = int(length / step)

    def nu(q):
        return leaf_normal_field(fol, metric, q[None, :])[0]

    def rk4(q, dt):
        k1 = nu(q)
        k2 = nu(q + 0.5 * dt * k1)
        k3 = nu(q + 0.5 * dt * k2)
        k4 = nu(q + dt * k3)
        return q + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

    for _ in range(n_full):
        x = rk4(x, step)
    rem = length - n_full * step
    if rem > 0:
        x = rk4(x, rem)
    return x


def _descend_to_leaf(
    T: np.ndarray, xs: np.ndarray, ys: np.ndarray, start: np.ndarray, fol: FoliationSpec, s: float
) -> np.ndarray:
    """Follow -grad(T) from start until rho crosses s (the metric foot)."""
    hx = xs[1] - xs[0]
    p = start.astype(float).copy()
    rho_p = float(fol.rho(p[0], p[1]))
    sgn0 = math.copysign(1.0, rho_p - s)
    for _ in range(100000):
        gx = (_bilinear(T, xs, ys, p + [hx, 0]) - _bilinear(T, xs, ys, p - [hx, 0])) / (2 * hx)
        gy = (_bilinear(T, xs, ys, p + [0, hx]) - _bilinear(T, xs, ys, p - [0, hx])) / (2 * hx)
        g = math.hypot(gx, gy)
        if g < 1e-14:
            break
        q = p - 0.25 * hx * np.array([gx, gy]) / g
        rho_q = float(fol.rho(q[0], q[1]))
        if math.copysign(1.0, rho_q - s) != sgn0:
            # refine the crossing along the last segment
            lam = (rho_p - s) / (rho_p - rho_q)
            return p + lam * (q - p)
        p, rho_p = q, rho_q
    return _project_to_leaf(fol, p, s)
