"""Spatial discretization: grids, masks, media, harmonic extension, field I/O.

The computational array spans the enlarged box (the truncation domain), whose
outermost node ring carries homogeneous Dirichlet conditions.  The physical
domain sits inside it as a staircase-approximated mask with an ordered
boundary-node ring, a subset of which is the observation set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "Grid2D",
    "Medium",
    "Field",
    "SourceSpec",
    "MediumViolation",
    "build_grid",
    "validate_medium",
    "harmonic_extension",
    "dirichlet_form",
    "write_field",
    "read_field",
    "write_pgm",
]


@dataclass
class Grid2D:
    """Uniform grid over the enlarged box with domain and observation masks.

    interior_mask marks the physical domain (staircase approximation), and
    outer_mask marks the updatable nodes of the enlarged box (everything but
    the outermost Dirichlet ring).  boundary_nodes is the ordered ring of
    domain nodes adjacent to the exterior; gamma_nodes indexes into it.
    """

    nx: int
    ny: int
    h: float
    origin: tuple[float, float]
    interior_mask: np.ndarray
    outer_mask: np.ndarray
    boundary_nodes: np.ndarray  # (n_b, 2) int, ordered by angle
    gamma_nodes: np.ndarray  # (n_g,) int indices into boundary_nodes
    margin_cells: int = 0

    def __post_init__(self) -> None:
        if self.h <= 0.0:
            raise ValueError("grid spacing must be positive")
        for m in (self.interior_mask, self.outer_mask):
            if m.shape != (self.nx, self.ny):
                raise ValueError("mask shape does not match grid dims")
        if self.gamma_nodes.size == 0:
            raise ValueError("observation set is empty")
        if self.gamma_nodes.min() < 0 or self.gamma_nodes.max() >= len(self.boundary_nodes):
            raise ValueError("gamma_nodes must index into boundary_nodes")

    @property
    def xs(self) -> np.ndarray:
        return self.origin[0] + self.h * np.arange(self.nx)

    @property
    def ys(self) -> np.ndarray:
        return self.origin[1] + self.h * np.arange(self.ny)

    def meshgrid(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.xs, self.ys, indexing="ij")

    def node_xy(self, nodes: np.ndarray) -> np.ndarray:
        """Coordinates of (i, j) node pairs, shape (n, 2)."""
        out = np.empty((len(nodes), 2))
        out[:, 0] = self.origin[0] + self.h * nodes[:, 0]
        out[:, 1] = self.origin[1] + self.h * nodes[:, 1]
        return out

    @property
    def strict_interior_mask(self) -> np.ndarray:
        """Domain nodes that are not on the staircase boundary ring."""
        m = self.interior_mask.copy()
        m[self.boundary_nodes[:, 0], self.boundary_nodes[:, 1]] = False
        return m

    @property
    def gamma_ij(self) -> np.ndarray:
        return self.boundary_nodes[self.gamma_nodes]


@dataclass
class Field:
    """Scalar field sampled on a Grid2D."""

    values: np.ndarray
    grid: Grid2D

    def __post_init__(self) -> None:
        if self.values.shape != (self.grid.nx, self.grid.ny):
            raise ValueError("field shape does not match grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    @classmethod
    def zeros(cls, grid: Grid2D) -> "Field":
        return cls(values=np.zeros((grid.nx, grid.ny)), grid=grid)


@dataclass
class Medium:
    """Sound speed c(x) and damping a(x) on a grid, with speed floor c0."""

    c: np.ndarray
    a: np.ndarray
    c0: float

    @property
    def c_max(self) -> float:
        return float(self.c.max())


@dataclass
class SourceSpec:
    """Initial pressure with an explicit compact support mask."""

    u0: Field
    support_mask: np.ndarray

    def __post_init__(self) -> None:
        if np.any(self.u0.values[~self.support_mask] != 0.0):
            raise ValueError("u0 must vanish outside its support mask")
        grid = self.u0.grid
        # the support must keep >= 2 cells of clearance to the domain boundary
        near = _dilate(_dilate(~grid.strict_interior_mask))
        if np.any(self.support_mask & near):
            raise ValueError("source support must keep >= 2 cells to the domain boundary")


def _dilate(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    out[1:, :] |= mask[:-1, :]
    out[:-1, :] |= mask[1:, :]
    out[:, 1:] |= mask[:, :-1]
    out[:, :-1] |= mask[:, 1:]
    return out


def _boundary_ring(interior: np.ndarray) -> np.ndarray:
    """Domain nodes with at least one 4-neighbor outside, ordered by angle."""
    outside = ~interior
    adj = np.zeros_like(interior)
    adj[1:, :] |= outside[:-1, :]
    adj[:-1, :] |= outside[1:, :]
    adj[:, 1:] |= outside[:, :-1]
    adj[:, :-1] |= outside[:, 1:]
    # nodes on the array edge are boundary too if the domain touches it
    adj[0, :] = adj[-1, :] = adj[:, 0] = adj[:, -1] = True
    ring = np.argwhere(interior & adj)
    ci, cj = np.argwhere(interior).mean(axis=0)
    ang = np.arctan2(ring[:, 1] - cj, ring[:, 0] - ci)
    return ring[np.argsort(ang)]


def build_grid(
    h: float,
    shape: str = "disk",
    center: tuple[float, float] = (0.0, 0.0),
    radius: float = 1.0,
    halfwidths: tuple[float, float] = (1.0, 1.0),
    levelset: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
    gamma_arc_deg: tuple[float, float] | None = None,
    c_max: float = 1.0,
    t_final: float = 0.0,
    pad_cells: int = 2,
    enforce_margin: bool = True,
) -> Grid2D:
    """Build the enlarged box, domain masks, and observation nodes.

    The box margin around the domain is c_max * t_final + 2h plus padding,
    which by finite propagation speed keeps reflections from the truncation
    boundary out of the run.  Set enforce_margin=False only for scenarios
    that intentionally use the box walls (e.g. standing-mode tests).
    """
    if h <= 0.0:
        raise ValueError("h must be positive")
    if shape == "disk":
        hx = hy = radius
    elif shape == "rect":
        hx, hy = halfwidths
    elif shape == "levelset":
        if levelset is None:
            raise ValueError("levelset shape needs a level function")
        hx, hy = halfwidths
    else:
        raise ValueError(f"unknown domain shape {shape!r}")

    margin = c_max * t_final + 2.0 * h if enforce_margin else 0.0
    margin_cells = int(math.ceil(margin / h)) + pad_cells
    nx = 2 * (int(math.ceil(hx / h)) + margin_cells) + 1
    ny = 2 * (int(math.ceil(hy / h)) + margin_cells) + 1
    x0 = center[0] - (nx - 1) // 2 * h
    y0 = center[1] - (ny - 1) // 2 * h
    xs = x0 + h * np.arange(nx)
    ys = y0 + h * np.arange(ny)
    X, Y = np.meshgrid(xs, ys, indexing="ij")

    if shape == "disk":
        interior = (X - center[0]) ** 2 + (Y - center[1]) ** 2 <= radius**2
    elif shape == "rect":
        interior = (np.abs(X - center[0]) <= hx) & (np.abs(Y - center[1]) <= hy)
    else:
        interior = levelset(X, Y) < 0.0

    if enforce_margin:
        req = c_max * t_final + 2.0 * h
        ii, jj = np.nonzero(interior)
        dist_to_wall = h * min(
            ii.min(), jj.min(), nx - 1 - ii.max(), ny - 1 - jj.max()
        )
        if dist_to_wall < req:
            raise ValueError(
                f"truncation margin {dist_to_wall:.4f} below required "
                f"c_max*T + 2h = {req:.4f}"
            )

    outer = np.ones((nx, ny), dtype=bool)
    outer[0, :] = outer[-1, :] = outer[:, 0] = outer[:, -1] = False

    ring = _boundary_ring(interior)
    if gamma_arc_deg is None:
        gamma = np.arange(len(ring))
    else:
        xy = np.empty((len(ring), 2))
        xy[:, 0] = x0 + h * ring[:, 0] - center[0]
        xy[:, 1] = y0 + h * ring[:, 1] - center[1]
        ang = np.degrees(np.arctan2(xy[:, 1], xy[:, 0]))  # (-180, 180]
        lo, hi = gamma_arc_deg
        span = (ang - lo) % 360.0
        gamma = np.nonzero(span <= (hi - lo) % 360.0 + 1e-9)[0]
        if gamma.size == 0:
            raise ValueError("observation arc selects no boundary nodes")

    return Grid2D(
        nx=nx,
        ny=ny,
        h=h,
        origin=(x0, y0),
        interior_mask=interior,
        outer_mask=outer,
        boundary_nodes=ring,
        gamma_nodes=gamma,
        margin_cells=margin_cells,
    )


@dataclass(frozen=True)
class MediumViolation:
    kind: str
    node: tuple[int, int]
    xy: tuple[float, float]
    message: str


def validate_medium(m: Medium, g: Grid2D) -> list[MediumViolation]:
    """Check the medium hypotheses; returns an empty list when all hold."""
    out: list[MediumViolation] = []

    def report(kind: str, where: np.ndarray, message: str, cap: int = 8) -> None:
        for i, j in np.argwhere(where)[:cap]:
            xy = (g.origin[0] + g.h * i, g.origin[1] + g.h * j)
            out.append(MediumViolation(kind, (int(i), int(j)), xy, message))

    if m.c.shape != (g.nx, g.ny) or m.a.shape != (g.nx, g.ny):
        raise ValueError("medium fields must be shaped to the grid")
    report("speed_floor", m.c < m.c0, f"c below the floor c0={m.c0}")
    report("negative_damping", m.a < 0.0, "damping must be nonnegative")
    report(
        "damping_support",
        (m.a != 0.0) & ~g.strict_interior_mask,
        "damping must be compactly supported inside the domain",
    )
    report(
        "outside_speed",
        (np.abs(m.c - 1.0) > 1e-12) & ~g.interior_mask,
        "sound speed must equal 1 outside the domain",
    )
    return out


# ---------------------------------------------------------------------------
# Harmonic extension


_LAPLACE_CACHE: dict[int, tuple] = {}


def _laplace_system(g: Grid2D):
    """Assemble the 5-point Dirichlet system on the strict interior of the domain."""
    key = id(g)
    if key in _LAPLACE_CACHE:
        return _LAPLACE_CACHE[key]
    inner = g.strict_interior_mask
    idx = -np.ones((g.nx, g.ny), dtype=np.int64)
    nodes = np.argwhere(inner)
    idx[inner] = np.arange(len(nodes))
    rows, cols, vals = [], [], []
    n = len(nodes)
    rows.extend(range(n))
    cols.extend(range(n))
    vals.extend([4.0] * n)
    neigh = []  # (unknown_row, boundary_i, boundary_j) pairs for the rhs
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        ni = nodes[:, 0] + di
        nj = nodes[:, 1] + dj
        is_inner = inner[ni, nj]
        rows.extend(np.nonzero(is_inner)[0])
        cols.extend(idx[ni[is_inner], nj[is_inner]])
        vals.extend([-1.0] * int(is_inner.sum()))
        ext = ~is_inner
        neigh.append((np.nonzero(ext)[0], ni[ext], nj[ext]))
    A = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    _LAPLACE_CACHE[key] = (A, nodes, neigh)
    return A, nodes, neigh


def harmonic_extension(
    boundary_values: np.ndarray,
    g: Grid2D,
    rtol: float = 1e-10,
    maxiter: int = 50000,
) -> Field:
    """Discrete harmonic extension of boundary data into the domain.

    Solves the 5-point Laplace equation with conjugate gradients; the
    iteration targets a residual well below rtol (so the extension behaves
    linearly to near roundoff) and raises if even rtol was not reached.
    """
    if len(boundary_values) != len(g.boundary_nodes):
        raise ValueError("boundary data must cover the whole domain boundary")
    bc = np.zeros((g.nx, g.ny))
    bc[g.boundary_nodes[:, 0], g.boundary_nodes[:, 1]] = boundary_values
    A, nodes, neigh = _laplace_system(g)
    rhs = np.zeros(A.shape[0])
    for rows_ext, ni, nj in neigh:
        np.add.at(rhs, rows_ext, bc[ni, nj])
    if A.shape[0] > 0:
        sol, _ = spla.cg(A, rhs, rtol=min(rtol, 1e-14), atol=0.0, maxiter=maxiter)
        res = np.linalg.norm(rhs - A @ sol)
        ref = np.linalg.norm(rhs)
        if ref > 0 and res > rtol * ref:
            raise RuntimeError(
                f"harmonic extension did not converge: residual {res / ref:.3e}"
            )
        out = bc
        out[nodes[:, 0], nodes[:, 1]] = sol
    else:
        out = bc
    out[~g.interior_mask] = 0.0
    return Field(values=out, grid=g)


def dirichlet_form(u: np.ndarray, v: np.ndarray | None = None) -> float:
    """Discrete Dirichlet energy sum over grid edges (H1_0 seminorm squared).

    In two dimensions the cell area h^2 cancels the 1/h^2 of the squared
    difference quotients, so the form is evaluated on raw differences.
    Fields are assumed zero outside their support, which realizes one-sided
    differences at masked boundaries.
    """
    if v is None:
        v = u
    dx_u = u[1:, :] - u[:-1, :]
    dy_u = u[:, 1:] - u[:, :-1]
    dx_v = v[1:, :] - v[:-1, :]
    dy_v = v[:, 1:] - v[:, :-1]
    return float(np.dot(dx_u.ravel(), dx_v.ravel()) + np.dot(dy_u.ravel(), dy_v.ravel()))


# ---------------------------------------------------------------------------
# Field I/O: 32-byte ASCII header + row-major little-endian float64


_HEADER_LEN = 32


def write_field(path, values: np.ndarray, h: float) -> None:
    nx, ny = values.shape
    header = f"FRACPAT F64 {nx} {ny} {h:.9g}".encode("ascii")
    if len(header) > _HEADER_LEN:
        raise ValueError("field header does not fit in 32 bytes")
    header = header.ljust(_HEADER_LEN)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(values, dtype="<f8").tobytes())


def read_field(path) -> tuple[np.ndarray, float]:
    with open(path, "rb") as f:
        header = f.read(_HEADER_LEN).decode("ascii").split()
        if header[:2] != ["FRACPAT", "F64"]:
            raise ValueError("not a fracpat field file")
        nx, ny, h = int(header[2]), int(header[3]), float(header[4])
        data = np.frombuffer(f.read(nx * ny * 8), dtype="<f8").reshape(nx, ny)
    return data.copy(), h


def write_pgm(path, values: np.ndarray) -> None:
    """16-bit P5 preview with the min-max scaling recorded in the comment."""
    lo = float(values.min())
    hi = float(values.max())
    span = hi - lo if hi > lo else 1.0
    img = np.round((values - lo) / span * 65535.0).astype(">u2")
    img = img.T[::-1]  # +y upward in the preview
    with open(path, "wb") as f:
        f.write(b"P5\n")
        f.write(f"# min={lo:.9g} max={hi:.9g}\n".encode("ascii"))
        f.write(f"{img.shape[1]} {img.shape[0]}\n65535\n".encode("ascii"))
        f.write(img.tobytes())
