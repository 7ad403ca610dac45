"""Prebuilt media, sources, and domain setups shared by the CLI and tests."""

from __future__ import annotations

import numpy as np

from .medium_grid import Field, Grid2D, Medium, SourceSpec, build_grid

__all__ = [
    "smooth_bump",
    "gaussian",
    "disk_scenario",
    "make_medium",
    "make_source",
]


def smooth_bump(
    X: np.ndarray,
    Y: np.ndarray,
    center: tuple[float, float] = (0.0, 0.0),
    radius: float = 0.5,
    amplitude: float = 1.0,
) -> np.ndarray:
    """Compactly supported C-infinity bump exp(1 - 1/(1 - r^2/R^2))."""
    r2 = ((X - center[0]) ** 2 + (Y - center[1]) ** 2) / radius**2
    out = np.zeros_like(X)
    inside = r2 < 1.0
    out[inside] = amplitude * np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
    return out


def gaussian(
    X: np.ndarray,
    Y: np.ndarray,
    center: tuple[float, float] = (0.0, 0.0),
    sigma: float = 0.1,
    amplitude: float = 1.0,
) -> np.ndarray:
    r2 = (X - center[0]) ** 2 + (Y - center[1]) ** 2
    return amplitude * np.exp(-r2 / (2.0 * sigma**2))


def make_medium(
    grid: Grid2D,
    c_bump_amp: float = 0.0,
    c_bump_center: tuple[float, float] = (-0.15, 0.1),
    c_bump_radius: float = 0.55,
    a_amp: float = 0.0,
    a_center: tuple[float, float] = (0.2, 0.0),
    a_radius: float = 0.35,
    c0: float = 0.5,
) -> Medium:
    """Disk-type medium: c = 1 + smooth bump inside the domain, a = smooth bump."""
    X, Y = grid.meshgrid()
    c = np.ones((grid.nx, grid.ny))
    if c_bump_amp != 0.0:
        c += smooth_bump(X, Y, c_bump_center, c_bump_radius, c_bump_amp)
        c[~grid.interior_mask] = 1.0
    a = np.zeros_like(c)
    if a_amp != 0.0:
        a = smooth_bump(X, Y, a_center, a_radius, a_amp)
        a[~grid.strict_interior_mask] = 0.0
    return Medium(c=c, a=a, c0=c0)


def make_source(
    grid: Grid2D,
    kind: str = "bump",
    center: tuple[float, float] = (0.0, 0.0),
    radius: float = 0.4,
    sigma: float = 0.1,
    amplitude: float = 1.0,
) -> SourceSpec:
    X, Y = grid.meshgrid()
    if kind == "bump":
        u0 = smooth_bump(X, Y, center, radius, amplitude)
        support = ((X - center[0]) ** 2 + (Y - center[1]) ** 2) < radius**2
    elif kind == "gaussian":
        # truncated where it falls below 1e-14 of the peak, so the support
        # mask is honest at the 1e-12 thresholds used in the tests
        u0 = gaussian(X, Y, center, sigma, amplitude)
        r_cut = sigma * np.sqrt(2.0 * 14.0 * np.log(10.0))
        support = ((X - center[0]) ** 2 + (Y - center[1]) ** 2) < r_cut**2
        u0[~support] = 0.0
    elif kind == "two_bumps":
        u0 = smooth_bump(X, Y, center, radius, amplitude) + smooth_bump(
            X, Y, (center[0] - 0.35, center[1] + 0.25), 0.6 * radius, -0.6 * amplitude
        )
        support = (((X - center[0]) ** 2 + (Y - center[1]) ** 2) < radius**2) | (
            ((X - center[0] + 0.35) ** 2 + (Y - center[1] - 0.25) ** 2) < (0.6 * radius) ** 2
        )
        u0[~support] = 0.0
    else:
        raise ValueError(f"unknown source kind {kind!r}")
    return SourceSpec(u0=Field(values=u0, grid=grid), support_mask=support)


def disk_scenario(
    h: float,
    t_final: float,
    c_bump_amp: float = 0.0,
    a_amp: float = 0.0,
    gamma_arc_deg: tuple[float, float] | None = None,
    source_kind: str = "bump",
    source_radius: float = 0.4,
    **kwargs,
) -> tuple[Grid2D, Medium, SourceSpec]:
    """Unit-disk scenario with truncation margin sized for t_final."""
    grid = build_grid(
        h=h,
        shape="disk",
        radius=1.0,
        gamma_arc_deg=gamma_arc_deg,
        c_max=1.0 + max(c_bump_amp, 0.0),
        t_final=t_final,
    )
    medium = make_medium(grid, c_bump_amp=c_bump_amp, a_amp=a_amp, **kwargs)
    source = make_source(grid, kind=source_kind, radius=source_radius)
    return grid, medium, source
