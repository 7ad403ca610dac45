"""Time-reversal inversion: observation map, reversal operator, error operator,
Neumann-series reconstruction, adjoint identity check, and stability probes.

The reversal solves the final-value system with the reversed memory term by
substituting tau = T - t, which turns it into the same forward fractional
wave equation integrated by the shared stepper, with initial data (phi, 0),
the measured samples injected on the domain boundary, and phi the harmonic
extension of the final measurement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .forward_solver import BoundaryTrace, RecordOptions, max_stable_dt, run_wave
from .frac_calculus import QuadKind, QuadMatrixHandle, frac_integral_reversed_direct, gamma_fn, TimeSeries
from .medium_grid import Field, Grid2D, Medium, dirichlet_form, harmonic_extension

__all__ = [
    "ReconstructionConfig",
    "ReconstructionReport",
    "h1_0_norm",
    "l2_norm",
    "h1_norm",
    "trace_h1_norm",
    "poincare_constant",
    "apply_observation",
    "time_reversal_A",
    "error_operator_apply",
    "neumann_reconstruct",
    "flag_divergence",
    "adjoint_identity_check",
    "stability_probe",
    "collar_mask",
]


@dataclass
class ReconstructionConfig:
    """Discretization plan shared by every observation/reversal pair."""

    grid: Grid2D
    medium: Medium
    alpha: float
    t_final: float
    m_max: int = 30
    tol: float = 1e-4
    cfl: float = 0.45
    dt: float = field(init=False)
    n_steps: int = field(init=False)

    def __post_init__(self) -> None:
        if not 0 <= self.m_max <= 200:
            raise ValueError("m_max must lie in [0, 200]")
        if self.tol <= 0.0:
            raise ValueError("tol must be positive")
        dt = max_stable_dt(self.medium, self.grid.h, self.alpha, self.cfl)
        self.n_steps = int(math.ceil(self.t_final / dt))
        self.dt = self.t_final / self.n_steps


def h1_0_norm(u: np.ndarray) -> float:
    """Discrete H1_0 seminorm (square root of the Dirichlet form)."""
    return math.sqrt(dirichlet_form(u))


def l2_norm(u: np.ndarray, h: float, mask: np.ndarray | None = None) -> float:
    v = u if mask is None else u[mask]
    return h * float(np.linalg.norm(v))


def h1_norm(u: np.ndarray, h: float) -> float:
    return math.sqrt(dirichlet_form(u) + l2_norm(u, h) ** 2)


def trace_h1_norm(samples: np.ndarray, node_xy: np.ndarray, dt: float) -> float:
    """Discrete H1 norm on the boundary cylinder (0,T) x Gamma.

    Time derivative by forward differences, tangential derivative by
    differences between consecutive ordered boundary nodes scaled by their
    arc separation, plus the L2 term; all integrated with dt and arc weights.
    """
    seg = np.linalg.norm(np.diff(node_xy, axis=0), axis=1)
    arc_w = np.empty(samples.shape[1])
    arc_w[0] = seg[0]
    arc_w[-1] = seg[-1]
    arc_w[1:-1] = 0.5 * (seg[:-1] + seg[1:])
    du_t = np.diff(samples, axis=0) / dt
    du_s = np.diff(samples, axis=1) / seg
    total = (
        np.sum(samples**2 * arc_w) * dt
        + np.sum(du_t**2 * arc_w) * dt
        + np.sum(du_s**2 * seg) * dt
    )
    return math.sqrt(total)


_POINCARE_CACHE: dict[int, float] = {}


def poincare_constant(grid: Grid2D) -> float:
    """Discrete Poincare constant of the domain: 1/sqrt(lambda_1) of the
    five-point Dirichlet Laplacian on the strict interior."""
    key = id(grid)
    if key in _POINCARE_CACHE:
        return _POINCARE_CACHE[key]
    inner = grid.strict_interior_mask
    idx = -np.ones((grid.nx, grid.ny), dtype=np.int64)
    nodes = np.argwhere(inner)
    idx[inner] = np.arange(len(nodes))
    rows = list(range(len(nodes)))
    cols = list(range(len(nodes)))
    vals = [4.0] * len(nodes)
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        ni, nj = nodes[:, 0] + di, nodes[:, 1] + dj
        ok = inner[ni, nj]
        rows.extend(np.nonzero(ok)[0])
        cols.extend(idx[ni[ok], nj[ok]])
        vals.extend([-1.0] * int(ok.sum()))
    A = sp.csr_matrix((vals, (rows, cols)), shape=(len(nodes), len(nodes))) / grid.h**2
    lam = spla.eigsh(A, k=1, sigma=0.0, which="LM", return_eigenvectors=False)[0]
    out = 1.0 / math.sqrt(lam)
    _POINCARE_CACHE[key] = out
    return out


def apply_observation(u0: np.ndarray, cfg: ReconstructionConfig) -> BoundaryTrace:
    """Observation map: boundary trace of the attenuated wave started from
    (u0, -a u0 / Gamma(2-alpha)) on the enlarged box."""
    grid, m = cfg.grid, cfg.medium
    u1 = -m.a * u0 / gamma_fn(2.0 - cfg.alpha)
    out = run_wave(
        grid,
        m,
        cfg.alpha,
        u0,
        u1,
        cfg.n_steps,
        cfg.dt,
        domain="outer",
        record=RecordOptions(trace=True, energy=False),
    )
    return BoundaryTrace(
        dt=cfg.dt,
        node_ij=grid.gamma_ij.copy(),
        node_xy=grid.node_xy(grid.gamma_ij),
        samples=out["trace"],
    )


_CROP_CACHE: dict[tuple[int, int], tuple] = {}


def _cropped_domain(grid: Grid2D, m: Medium, pad: int = 3) -> tuple[Grid2D, Medium, tuple]:
    """Subgrid tightly enclosing the physical domain (the reversal never
    touches the truncation box outside it)."""
    key = (id(grid), id(m))
    if key in _CROP_CACHE:
        return _CROP_CACHE[key]
    ij = np.argwhere(grid.interior_mask)
    i0 = max(int(ij[:, 0].min()) - pad, 0)
    i1 = min(int(ij[:, 0].max()) + pad + 1, grid.nx)
    j0 = max(int(ij[:, 1].min()) - pad, 0)
    j1 = min(int(ij[:, 1].max()) + pad + 1, grid.ny)
    sl = (slice(i0, i1), slice(j0, j1))
    outer = np.ones((i1 - i0, j1 - j0), dtype=bool)
    outer[0, :] = outer[-1, :] = outer[:, 0] = outer[:, -1] = False
    ring = grid.boundary_nodes - np.array([i0, j0])
    sub = Grid2D(
        nx=i1 - i0,
        ny=j1 - j0,
        h=grid.h,
        origin=(grid.origin[0] + i0 * grid.h, grid.origin[1] + j0 * grid.h),
        interior_mask=grid.interior_mask[sl].copy(),
        outer_mask=outer,
        boundary_nodes=ring,
        gamma_nodes=grid.gamma_nodes.copy(),
    )
    sub_m = Medium(c=m.c[sl].copy(), a=m.a[sl].copy(), c0=m.c0)
    _CROP_CACHE[key] = (sub, sub_m, sl)
    return sub, sub_m, sl


def time_reversal_A(
    h_trace: BoundaryTrace, m: Medium, alpha: float, t_final: float, grid: Grid2D
) -> tuple[Field, Field]:
    """Reversal operator: harmonic-extended final data, measured Dirichlet
    values replayed backward, same stepper on the domain; returns the pair
    (v, dv/dt) at t = 0."""
    if len(grid.gamma_nodes) != len(grid.boundary_nodes):
        raise ValueError("time reversal requires data on the whole boundary")
    n_steps = h_trace.n_steps
    if n_steps < 2:
        raise ValueError("trace too short for the requested reversal")
    dt = h_trace.dt
    if abs(dt * n_steps - t_final) > 1e-9 * max(t_final, 1.0):
        raise ValueError("trace duration does not match the requested final time")
    sub, sub_m, sl = _cropped_domain(grid, m)
    phi = harmonic_extension(h_trace.samples[-1], sub)
    reversed_series = h_trace.samples[::-1]
    out = run_wave(
        sub,
        sub_m,
        alpha,
        phi.values,
        np.zeros_like(phi.values),
        n_steps,
        dt,
        domain="omega",
        boundary_series=reversed_series,
        record=RecordOptions(trace=False, energy=False),
    )
    state = out["state"]
    # one-sided second-order value of -d(v-hat)/d(tau) at tau = T
    v1_sub = -(3.0 * state.u_curr - 4.0 * state.u_prev + state.u_before) / (2.0 * dt)
    v0 = np.zeros((grid.nx, grid.ny))
    v1 = np.zeros((grid.nx, grid.ny))
    v0[sl] = state.u_curr
    v1[sl] = v1_sub
    return Field(values=v0, grid=grid), Field(values=v1, grid=grid)


def error_operator_apply(u0: np.ndarray, cfg: ReconstructionConfig) -> np.ndarray:
    """Error operator: u0 minus the first reversal component of its own trace."""
    trace = apply_observation(u0, cfg)
    v0, _ = time_reversal_A(trace, cfg.medium, cfg.alpha, cfg.t_final, cfg.grid)
    return u0 - v0.values


@dataclass
class ReconstructionReport:
    term_norms: list[float]
    ratios: list[float]
    errors: list[float]  # vs ground truth when known, else empty
    n_terms: int = 0
    diverged: bool = False
    stopped_by_tol: bool = False

    def __post_init__(self) -> None:
        if any(not math.isfinite(r) for r in self.ratios):
            raise ValueError("contraction ratios must be finite")


def flag_divergence(term_norms: list[float], window: int = 3) -> bool:
    """Non-contraction monitor: true when the series term norms grow for
    `window` consecutive orders."""
    grow = 0
    for prev, cur in zip(term_norms, term_norms[1:]):
        grow = grow + 1 if cur > prev else 0
        if grow >= window:
            return True
    return False


def collar_mask(grid: Grid2D, cells: int = 2) -> np.ndarray:
    """Domain mask with a boundary collar of the given width removed."""
    m = grid.strict_interior_mask.copy()
    for _ in range(cells):
        shrink = m.copy()
        shrink[1:, :] &= m[:-1, :]
        shrink[:-1, :] &= m[1:, :]
        shrink[:, 1:] &= m[:, :-1]
        shrink[:, :-1] &= m[:, 1:]
        m = shrink
    return m


def neumann_reconstruct(
    h_trace: BoundaryTrace,
    cfg: ReconstructionConfig,
    truth: np.ndarray | None = None,
) -> tuple[Field, ReconstructionReport]:
    """Accumulate the Neumann series sum_m K^m (Pi_1 A h) until the relative
    increment drops below tol or m_max terms are spent.

    Divergence (non-contraction) is flagged, not raised, when the term norms
    grow for three consecutive orders.
    """
    grid = cfg.grid
    v0, _ = time_reversal_A(h_trace, cfg.medium, cfg.alpha, cfg.t_final, grid)
    term = v0.values
    rec = term.copy()
    norms = [h1_0_norm(term)]
    ratios: list[float] = []
    errors: list[float] = []
    mask = collar_mask(grid)
    if truth is not None:
        ref = l2_norm(truth, grid.h, mask)
        errors.append(l2_norm(rec - truth, grid.h, mask) / ref)
    diverged = False
    stopped = False
    m_used = 0
    if norms[0] == 0.0:  # null data reconstructs to zero in a single term
        return Field(values=rec, grid=grid), ReconstructionReport(
            term_norms=norms, ratios=[], errors=errors, n_terms=1, stopped_by_tol=True
        )
    for m in range(1, cfg.m_max + 1):
        term = error_operator_apply(term, cfg)
        rec += term
        norms.append(h1_0_norm(term))
        ratios.append(norms[-1] / norms[-2] if norms[-2] > 0 else 0.0)
        if truth is not None:
            errors.append(l2_norm(rec - truth, grid.h, mask) / ref)
        m_used = m
        if flag_divergence(norms):
            diverged = True
            break
        denom = h1_0_norm(rec)
        if denom > 0 and norms[-1] / denom <= cfg.tol:
            stopped = True
            break
    report = ReconstructionReport(
        term_norms=norms,
        ratios=ratios,
        errors=errors,
        n_terms=m_used + 1,
        diverged=diverged,
        stopped_by_tol=stopped,
    )
    return Field(values=rec, grid=grid), report


def adjoint_identity_check(
    f: np.ndarray,
    g: np.ndarray,
    a_vals: np.ndarray,
    c_vals: np.ndarray,
    dt: float,
    h: float,
    alpha: float,
    use_direct_reversed: bool = False,
) -> float:
    """Relative mismatch of <a D^alpha f, c^-2 f_t g_t-pairing> against the
    transposed form <c^-2 f_t, a I_T g_t> on sampled interior nodes.

    f and g are space-time arrays of shape (n_t+1, n_points); the same
    discrete time derivative is used on both sides.  With the transpose-paired
    quadratures the mismatch is at roundoff; with the independent reversed
    quadrature it reflects the quadrature difference and shrinks with dt.
    """
    n_t = f.shape[0] - 1
    fwd = QuadMatrixHandle.build(QuadKind.FRAC_INTEGRAL_FORWARD, alpha, dt, n_t)
    rev = QuadMatrixHandle.build(QuadKind.FRAC_INTEGRAL_REVERSED, alpha, dt, n_t)

    def d_t(u: np.ndarray) -> np.ndarray:
        out = np.empty_like(u)
        out[1:-1] = (u[2:] - u[:-2]) / (2.0 * dt)
        out[0] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * dt)
        out[-1] = (3.0 * u[-1] - 4.0 * u[-2] + u[-3]) / (2.0 * dt)
        return out

    ft = d_t(f)
    gt = d_t(g)
    w = a_vals / c_vals**2
    caputo_f = fwd.apply(ft)
    lhs = dt * h * h * float(np.sum((caputo_f * gt) @ w))
    if use_direct_reversed:
        it_gt = frac_integral_reversed_direct(TimeSeries(dt=dt, values=gt), alpha).values
    else:
        it_gt = rev.apply(gt)
    rhs = dt * h * h * float(np.sum((ft * it_gt) @ w))
    return abs(lhs - rhs) / (abs(lhs) + abs(rhs) + 1e-300)


def stability_probe(
    cfg: ReconstructionConfig,
    n_probes: int,
    seed: int = 0,
    wavenumber: float = 24.0,
    envelope_radius: float = 0.35,
    envelope_center: tuple[float, float] = (0.0, 0.0),
    gamma_subsets: dict[str, np.ndarray] | None = None,
) -> dict[str, dict[str, object]]:
    """Empirical observability ratios ||trace||_H1 / ||u0||_H1 over random
    oscillatory probes supported in the source region.

    Each probe is a plane-wave-modulated smooth bump with a random direction
    and phase, which makes partial-data invisibility show up as a collapsing
    minimum ratio.  One simulation per probe serves every gamma subset.
    """
    from .scenarios import smooth_bump

    grid, m = cfg.grid, cfg.medium
    rng = np.random.default_rng(seed)
    X, Y = grid.meshgrid()
    env = smooth_bump(X, Y, envelope_center, envelope_radius)
    if gamma_subsets is None:
        gamma_subsets = {"full": np.arange(len(grid.gamma_ij))}
    results: dict[str, dict[str, object]] = {
        name: {"ratios": []} for name in gamma_subsets
    }
    for _ in range(n_probes):
        theta = rng.uniform(0.0, 2.0 * math.pi)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        kvec = wavenumber * np.array([math.cos(theta), math.sin(theta)])
        u0 = env * np.cos(kvec[0] * X + kvec[1] * Y + phase)
        denom = h1_norm(u0, grid.h)
        trace = apply_observation(u0, cfg)
        for name, cols in gamma_subsets.items():
            num = trace_h1_norm(
                trace.samples[:, cols], trace.node_xy[cols], trace.dt
            )
            results[name]["ratios"].append(num / denom)
    for name in results:
        r = np.asarray(results[name]["ratios"])
        results[name]["min"] = float(r.min())
        results[name]["max"] = float(r.max())
    return results
