"""Grid construction, medium validation, harmonic extension, field I/O."""

import numpy as np
import pytest

from fracpat.medium_grid import (
    Field,
    Medium,
    SourceSpec,
    build_grid,
    dirichlet_form,
    harmonic_extension,
    read_field,
    validate_medium,
    write_field,
    write_pgm,
)
from fracpat.scenarios import make_medium, make_source, smooth_bump


@pytest.fixture(scope="module")
def disk_grid():
    return build_grid(h=1 / 64, shape="disk", radius=1.0, c_max=1.0, t_final=0.5)


class TestBuildGrid:
    def test_full_gamma_covers_boundary(self, disk_grid):
        assert len(disk_grid.gamma_nodes) == len(disk_grid.boundary_nodes)

    def test_half_gamma_is_half_the_ring(self):
        g = build_grid(h=1 / 64, shape="disk", radius=1.0, gamma_arc_deg=(0.0, 180.0))
        assert abs(len(g.gamma_nodes) - len(g.boundary_nodes) / 2) <= 2

    def test_margin_accommodates_wave_travel(self):
        c_max, t_final, h = 1.2, 3.0, 1 / 64
        g = build_grid(h=h, shape="disk", radius=1.0, c_max=c_max, t_final=t_final)
        ii, jj = np.nonzero(g.interior_mask)
        wall = h * min(ii.min(), jj.min(), g.nx - 1 - ii.max(), g.ny - 1 - jj.max())
        assert wall >= c_max * t_final + 2 * h
        # box extent exceeds the domain extent by at least c_max * T per side
        assert (g.nx - 1) * h >= 2.0 + 2 * c_max * t_final

    def test_empty_gamma_rejected(self):
        with pytest.raises(ValueError):
            build_grid(h=1 / 32, shape="disk", radius=1.0, gamma_arc_deg=(10.0, 10.0))

    def test_boundary_nodes_adjoin_interior(self, disk_grid):
        inter = disk_grid.interior_mask
        for i, j in disk_grid.boundary_nodes:
            neigh = [
                inter[i + di, j + dj]
                for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1))
                if 0 <= i + di < disk_grid.nx and 0 <= j + dj < disk_grid.ny
            ]
            assert any(neigh)

    def test_boundary_ring_is_angle_ordered(self, disk_grid):
        xy = disk_grid.node_xy(disk_grid.boundary_nodes)
        ang = np.arctan2(xy[:, 1], xy[:, 0])
        assert np.all(np.diff(ang) > 0) or np.sum(np.diff(ang) < 0) <= 1

    def test_levelset_domain(self):
        g = build_grid(
            h=1 / 32,
            shape="levelset",
            levelset=lambda X, Y: X**2 / 0.64 + Y**2 / 0.36 - 1.0,
            halfwidths=(0.8, 0.6),
        )
        X, Y = g.meshgrid()
        inside = X**2 / 0.64 + Y**2 / 0.36 < 1.0
        assert np.array_equal(g.interior_mask, inside)


class TestValidateMedium:
    def test_uniform_medium_ok(self, disk_grid):
        m = Medium(
            c=np.ones((disk_grid.nx, disk_grid.ny)),
            a=np.zeros((disk_grid.nx, disk_grid.ny)),
            c0=0.5,
        )
        assert validate_medium(m, disk_grid) == []

    def test_negative_damping_reported_with_node(self, disk_grid):
        a = np.zeros((disk_grid.nx, disk_grid.ny))
        node = tuple(np.argwhere(disk_grid.strict_interior_mask)[50])
        a[node] = -0.1
        m = Medium(c=np.ones_like(a), a=a, c0=0.5)
        violations = validate_medium(m, disk_grid)
        assert any(v.kind == "negative_damping" and v.node == node for v in violations)

    def test_speed_below_floor_reported(self, disk_grid):
        c = np.ones((disk_grid.nx, disk_grid.ny))
        node = tuple(np.argwhere(disk_grid.strict_interior_mask)[10])
        c[node] = 0.9 * 0.5
        m = Medium(c=c, a=np.zeros_like(c), c0=0.5)
        assert any(v.kind == "speed_floor" for v in validate_medium(m, disk_grid))

    def test_damping_outside_domain_reported(self, disk_grid):
        a = np.zeros((disk_grid.nx, disk_grid.ny))
        a[1, 1] = 0.05
        m = Medium(c=np.ones_like(a), a=a, c0=0.5)
        assert any(v.kind == "damping_support" for v in validate_medium(m, disk_grid))

    def test_speed_not_one_outside_reported(self, disk_grid):
        c = np.ones((disk_grid.nx, disk_grid.ny))
        c[1, 1] = 1.1
        m = Medium(c=c, a=np.zeros_like(c), c0=0.5)
        assert any(v.kind == "outside_speed" for v in validate_medium(m, disk_grid))

    def test_scenario_medium_is_valid(self, disk_grid):
        m = make_medium(disk_grid, c_bump_amp=0.2, a_amp=0.05)
        assert validate_medium(m, disk_grid) == []


class TestSourceSpec:
    def test_rejects_value_outside_support(self, disk_grid):
        u0 = np.zeros((disk_grid.nx, disk_grid.ny))
        u0[2, 2] = 1.0
        with pytest.raises(ValueError):
            SourceSpec(u0=Field(values=u0, grid=disk_grid), support_mask=np.zeros_like(u0, dtype=bool))

    def test_rejects_support_near_boundary(self, disk_grid):
        X, Y = disk_grid.meshgrid()
        u0 = smooth_bump(X, Y, (0.0, 0.0), 0.999)
        mask = X**2 + Y**2 < 0.999**2
        u0[~mask] = 0.0
        with pytest.raises(ValueError):
            SourceSpec(u0=Field(values=u0, grid=disk_grid), support_mask=mask)

    def test_scenario_source_is_valid(self, disk_grid):
        src = make_source(disk_grid, kind="bump", radius=0.4)
        assert src.u0.values.max() > 0


class TestHarmonicExtension:
    def test_zero_boundary_gives_zero(self, disk_grid):
        phi = harmonic_extension(np.zeros(len(disk_grid.boundary_nodes)), disk_grid)
        assert np.abs(phi.values).max() == 0.0

    def test_constant_boundary_gives_constant(self, disk_grid):
        phi = harmonic_extension(np.full(len(disk_grid.boundary_nodes), 3.7), disk_grid)
        interior = disk_grid.strict_interior_mask
        assert np.abs(phi.values[interior] - 3.7).max() < 1e-8

    def test_linear_boundary_reproduces_coordinate(self, disk_grid):
        # linear functions are discrete-harmonic for the 5-point stencil
        xy = disk_grid.node_xy(disk_grid.boundary_nodes)
        phi = harmonic_extension(xy[:, 0], disk_grid)
        X, _ = disk_grid.meshgrid()
        interior = disk_grid.strict_interior_mask
        assert np.abs(phi.values[interior] - X[interior]).max() < 1e-8

    def test_maximum_principle(self, disk_grid):
        rng = np.random.default_rng(4)
        data = rng.uniform(-2.0, 5.0, len(disk_grid.boundary_nodes))
        phi = harmonic_extension(data, disk_grid)
        vals = phi.values[disk_grid.strict_interior_mask]
        assert vals.min() >= data.min() - 1e-9
        assert vals.max() <= data.max() + 1e-9

    def test_energy_decomposition(self, disk_grid):
        # for f vanishing on the boundary ring, f - phi is Dirichlet-orthogonal
        # to the discrete-harmonic phi: ||f-phi||^2 = ||f||^2 - ||phi||^2
        rng = np.random.default_rng(8)
        X, Y = disk_grid.meshgrid()
        f = smooth_bump(X, Y, (0.1, -0.2), 0.5) + 0.3 * smooth_bump(X, Y, (-0.3, 0.2), 0.35)
        f[~disk_grid.strict_interior_mask] = 0.0
        data = rng.standard_normal(len(disk_grid.boundary_nodes))
        phi = harmonic_extension(data, disk_grid)
        total = f + phi.values
        lhs = dirichlet_form(total - phi.values)
        rhs = dirichlet_form(total) - dirichlet_form(phi.values)
        assert abs(lhs - rhs) < 1e-7 * max(lhs, 1.0)

    def test_wrong_data_length_rejected(self, disk_grid):
        with pytest.raises(ValueError):
            harmonic_extension(np.zeros(3), disk_grid)


class TestFieldIO:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(1)
        vals = rng.standard_normal((37, 23))
        path = tmp_path / "field.f64"
        write_field(path, vals, 0.015625)
        back, h = read_field(path)
        assert h == 0.015625
        assert back.dtype == np.float64
        assert np.array_equal(back, vals)

    def test_header_is_32_bytes_ascii(self, tmp_path):
        path = tmp_path / "field.f64"
        write_field(path, np.zeros((4, 5)), 0.25)
        raw = path.read_bytes()
        assert raw[:32].decode("ascii").startswith("FRACPAT F64 4 5 0.25")
        assert len(raw) == 32 + 4 * 5 * 8

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.f64"
        path.write_bytes(b"NOTAFIELD".ljust(32) + b"\0" * 64)
        with pytest.raises(ValueError):
            read_field(path)

    def test_pgm_preview(self, tmp_path):
        vals = np.linspace(-1.0, 2.0, 12).reshape(3, 4)
        path = tmp_path / "prev.pgm"
        write_pgm(path, vals)
        raw = path.read_bytes()
        assert raw.startswith(b"P5\n# min=-1 max=2\n")
        assert b"65535" in raw
