"""Command-line entry points: forward runs, reconstruction, geometry audit,
convergence studies, and the acceptance suite."""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, RunManifest, ScenarioConfig, parse_config, serialize_config
from .forward_solver import RecordOptions, max_stable_dt, simulate_forward
from .frac_calculus import TimeSeries, caputo_apply, gamma_fn, make_l1_weights
from .geometry import FoliationSpec, SoundMetric, convexity_check, influence_region, time_T0, time_T1
from .medium_grid import Medium, build_grid, read_field, validate_medium, write_field, write_pgm
from .reconstruction import (
    ReconstructionConfig,
    apply_observation,
    neumann_reconstruct,
)
from .scenarios import make_medium, make_source

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DIVERGENCE = 3


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("FRACPAT_THREADS", "1")))
    except ValueError:
        return 1


def build_scenario(cfg: ScenarioConfig, need_margin: bool = True):
    """Grid, medium, and source from a validated flat config."""
    g = cfg.values
    gamma = None
    if g["grid.gamma_deg_lo"] is not None and g["grid.gamma_deg_hi"] is not None:
        gamma = (g["grid.gamma_deg_lo"], g["grid.gamma_deg_hi"])
    c_amp = g["medium.c_bump_amp"] if g["medium.c_profile"] == "bump" else 0.0
    c_max = 1.0 + max(c_amp, 0.0)
    if g["medium.c_profile"] == "radial_quadratic":
        c_max = 1.0 + abs(g["medium.c_radial_coeff"]) * (2.0 * g["grid.radius"]) ** 2
    grid = build_grid(
        h=g["grid.h"],
        shape=g["grid.shape"],
        center=(g["grid.center_x"], g["grid.center_y"]),
        radius=g["grid.radius"],
        halfwidths=(g["grid.halfwidth_x"], g["grid.halfwidth_y"]),
        gamma_arc_deg=gamma,
        c_max=c_max,
        t_final=g["T"],
        enforce_margin=need_margin and not g["grid.allow_reflections"],
    )
    medium = make_medium(
        grid,
        c_bump_amp=c_amp,
        c_bump_center=(g["medium.c_bump_center_x"], g["medium.c_bump_center_y"]),
        c_bump_radius=g["medium.c_bump_radius"],
        a_amp=g["medium.a_amp"],
        a_center=(g["medium.a_center_x"], g["medium.a_center_y"]),
        a_radius=g["medium.a_radius"],
        c0=g["medium.c0"],
    )
    if g["medium.c_profile"] == "radial_quadratic":
        X, Y = grid.meshgrid()
        medium = Medium(
            c=1.0 + g["medium.c_radial_coeff"] * (X**2 + Y**2), a=medium.a, c0=medium.c0
        )
    source = make_source(
        grid,
        kind=g["source.kind"],
        center=(g["source.center_x"], g["source.center_y"]),
        radius=g["source.radius"],
        sigma=g["source.sigma"],
        amplitude=g["source.amplitude"],
    )
    problems = validate_medium(medium, grid)
    if problems:
        lines = "; ".join(f"{v.kind} at {v.node}" for v in problems[:4])
        raise ConfigError(f"medium violates the model hypotheses: {lines}")
    return grid, medium, source


def sound_metric_from_config(cfg: ScenarioConfig) -> SoundMetric:
    """Analytic metric matching the config's named speed profile."""
    g = cfg.values
    profile = g["medium.c_profile"]
    if profile == "constant":
        return SoundMetric.constant(1.0)
    if profile == "radial_quadratic":
        beta = g["medium.c_radial_coeff"]

        def c_fn(x, y):
            return 1.0 + beta * (np.asarray(x) ** 2 + np.asarray(y) ** 2)

        return SoundMetric(c_fn, lambda x, y: (2 * beta * np.asarray(x), 2 * beta * np.asarray(y)))
    if profile == "bump":
        amp = g["medium.c_bump_amp"]
        cx, cy = g["medium.c_bump_center_x"], g["medium.c_bump_center_y"]
        rad = g["medium.c_bump_radius"]

        def c_fn(x, y):
            r2 = ((np.asarray(x) - cx) ** 2 + (np.asarray(y) - cy) ** 2) / rad**2
            out = np.ones_like(np.asarray(x, dtype=float))
            inside = r2 < 1.0
            vals = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
            out[inside] += amp * vals
            return out

        return SoundMetric(c_fn)
    raise ConfigError(f"unknown speed profile {profile!r}")


def _write_trace_csv(path: Path, trace) -> None:
    header = ",".join(f"x={x:.6g};y={y:.6g}" for x, y in trace.node_xy)
    np.savetxt(path, trace.samples, delimiter=",", header=header, comments="")


def cmd_forward(args) -> int:
    cfg = parse_config(args.config)
    cfg.require("forward")
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest.start(cfg)
    grid, medium, source = build_scenario(cfg)
    rec = RecordOptions(
        trace=cfg["record.trace"],
        energy=cfg["record.energy"],
        snapshot_times=tuple(cfg["record.snapshots"]),
    )
    trace, snaps, etrace = simulate_forward(
        source, medium, cfg["alpha"], cfg["T"], grid, cfl=cfg["cfl"], record=rec
    )
    (outdir / "config.echo").write_text(serialize_config(cfg), encoding="utf-8")
    manifest.outputs.append("config.echo")
    if cfg["record.trace"]:
        _write_trace_csv(outdir / "trace.csv", trace)
        manifest.outputs.append("trace.csv")
    if cfg["record.energy"]:
        rows = np.column_stack([etrace.times, etrace.values, etrace.pairing_increments])
        np.savetxt(outdir / "energy.csv", rows, delimiter=",", header="t,E,pairing", comments="")
        manifest.outputs.append("energy.csv")
    for t, snap in sorted(snaps.items()):
        stem = f"snapshot_t{t:.4f}".replace(".", "p")
        write_field(outdir / f"{stem}.f64", snap, grid.h)
        write_pgm(outdir / f"{stem}.pgm", snap)
        manifest.outputs.extend([f"{stem}.f64", f"{stem}.pgm"])
    manifest.finish(outdir)
    print(f"forward run complete; outputs in {outdir}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    cfg = parse_config(args.config)
    cfg.require("reconstruct")
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest.start(cfg)
    grid, medium, source = build_scenario(cfg)
    rcfg = ReconstructionConfig(
        grid=grid,
        medium=medium,
        alpha=cfg["alpha"],
        t_final=cfg["T"],
        m_max=cfg["reconstruction.m_max"],
        tol=cfg["reconstruction.tol"],
        cfl=cfg["cfl"],
    )
    trace = apply_observation(source.u0.values, rcfg)
    truth = source.u0.values
    if args.truth:
        truth, h_file = read_field(args.truth)
        if truth.shape != (grid.nx, grid.ny) or abs(h_file - grid.h) > 1e-12:
            raise ConfigError("truth field does not match the scenario grid")
    field, report = neumann_reconstruct(trace, rcfg, truth=truth)
    write_field(outdir / "reconstruction.f64", field.values, grid.h)
    write_pgm(outdir / "reconstruction.pgm", field.values)
    rows = []
    for m, norm in enumerate(report.term_norms):
        ratio = report.ratios[m - 1] if 0 < m <= len(report.ratios) else math.nan
        err = report.errors[m] if m < len(report.errors) else math.nan
        rows.append((m, norm, ratio, err))
    np.savetxt(
        outdir / "report.csv",
        np.array(rows),
        delimiter=",",
        header="m,term_norm,ratio,cumulative_error",
        comments="",
    )
    manifest.outputs.extend(["reconstruction.f64", "reconstruction.pgm", "report.csv"])
    manifest.notes["diverged"] = report.diverged
    manifest.notes["n_terms"] = report.n_terms
    manifest.finish(outdir)
    if report.diverged:
        print("reconstruction flagged as non-contracting (divergence)")
        return EXIT_DIVERGENCE
    print(f"reconstruction complete; {report.n_terms} terms; outputs in {outdir}")
    return EXIT_OK


def cmd_geometry(args) -> int:
    cfg = parse_config(args.config)
    cfg.require("geometry")
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest.start(cfg)
    grid, medium, _ = build_scenario(cfg, need_margin=False)
    metric = sound_metric_from_config(cfg)
    center = (cfg["grid.center_x"], cfg["grid.center_y"])
    radius = cfg["grid.radius"]

    def rho(x, y):
        return radius - np.hypot(np.asarray(x) - center[0], np.asarray(y) - center[1])

    fol = FoliationSpec(
        rho=rho,
        s_range=(cfg["geometry.foliation_s_lo"], cfg["geometry.foliation_s_hi"]),
        anchor=center,
    )
    leaf_rows = []
    for s in cfg["geometry.leaf_levels"]:
        rep = convexity_check(
            fol, metric, s, n_samples=cfg["geometry.leaf_samples"], delta=cfg["geometry.kappa_delta"]
        )
        leaf_rows.append((s, rep.kappa_s, 1.0 if rep.strictly_convex else 0.0))
    np.savetxt(
        outdir / "leaves.csv",
        np.array(leaf_rows),
        delimiter=",",
        header="s,kappa_s,strictly_convex",
        comments="",
    )
    region = influence_region(fol, metric, cfg["T"], grid)
    write_field(outdir / "tau.f64", region.tau.values, grid.h)
    X, Y = grid.meshgrid()
    rr = np.hypot(X - center[0], Y - center[1])
    h = grid.h
    band = grid.interior_mask & (rr >= radius - cfg["geometry.foliation_s_hi"] + 2 * h) & (
        rr <= radius - 2 * h
    )
    t0_val = time_T0(band, fol, metric, grid)

    def inside(x, y):
        return (np.asarray(x) - center[0]) ** 2 + (np.asarray(y) - center[1]) ** 2 < radius**2

    th = 2 * np.pi * np.arange(24) / 24
    sources = np.stack(
        [center[0] + radius * np.cos(th), center[1] + radius * np.sin(th)], axis=-1
    )
    vis = time_T1(
        metric,
        inside,
        cfg["geometry.t1_mode"],
        sources,
        n_directions=cfg["geometry.n_directions"],
        boundary_normal_fn=lambda p: (p - np.asarray(center)) / np.linalg.norm(p - np.asarray(center)),
        step=cfg["geometry.ray_step"],
        max_length=cfg["geometry.ray_cap"],
    )
    lines = [
        f"T0 = {t0_val:.6f}",
        f"T1 = {vis.t1:.6f} (mode={cfg['geometry.t1_mode']}, rays={vis.n_rays})",
        f"tangential rays: {len(vis.tangential)}",
        f"rays exceeding cap (possible trapping): {len(vis.not_exited)}",
        f"rays missing the observation set: {len(vis.missed_gamma)}",
        f"s0 = {region.s0:.6f}, s_T = {region.s_t:.6f}",
        f"max geodesic speed drift = {vis.max_speed_drift:.2e}",
    ]
    for idx, graze in vis.tangential[:16]:
        lines.append(f"  tangential ray {idx}: grazing angle {graze:.3f} deg")
    (outdir / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    manifest.outputs.extend(["leaves.csv", "tau.f64", "report.txt"])
    manifest.finish(outdir)
    print("\n".join(lines))
    return EXIT_OK


def convergence_study(cfg: ScenarioConfig, levels: int, outdir: Path) -> Path:
    """Error-vs-resolution table: Caputo quadrature, standing-mode frequency,
    and end-to-end reconstruction error, refined jointly in h and dt."""
    if levels < 3:
        raise ConfigError("a convergence study needs at least 3 levels")
    alpha = cfg["alpha"]
    rows: list[tuple] = []
    # Caputo order on f = t^2 against the closed form
    errs = []
    for k in range(levels):
        n = 100 * 2**k
        dt = 1.0 / n
        w = make_l1_weights(alpha, dt, n)
        t = dt * np.arange(n + 1)
        out = caputo_apply(TimeSeries(dt=dt, values=t**2), w).values
        exact = 2 * t ** (2 - alpha) / gamma_fn(3 - alpha)
        errs.append(float(np.abs(out - exact).max()))
        order = math.log2(errs[-2] / errs[-1]) if k else math.nan
        rows.append(("caputo_t2", 1.0 / n, errs[-1], order))

    # standing-mode frequency error in the unit box
    def mode_error(h: float) -> float:
        grid = build_grid(h=h, shape="rect", halfwidths=(0.5, 0.5), enforce_margin=False, pad_cells=0)
        X, Y = grid.meshgrid()
        u0 = np.sin(2 * np.pi * (X + 0.5)) * np.sin(np.pi * (Y + 0.5))
        u0[~grid.outer_mask] = 0.0
        med = Medium(c=np.ones_like(u0), a=np.zeros_like(u0), c0=0.5)
        dt = max_stable_dt(med, h, alpha, cfg["cfl"])
        n = int(math.ceil(3.0 / dt))
        from .forward_solver import _Stepper

        st = _Stepper(grid, med, alpha, 3.0 / n, n)
        s = st.start(u0, np.zeros_like(u0))
        ci, cj = grid.nx // 2 + 3, grid.ny // 2 + 5
        vals = [s.u_prev[ci, cj], s.u_curr[ci, cj]]
        for _ in range(1, n):
            s = st.advance(s)
            vals.append(s.u_curr[ci, cj])
        v = np.array(vals)
        tgrid = (3.0 / n) * np.arange(len(v))
        sign = np.sign(v)
        idx = np.nonzero(sign[1:] * sign[:-1] < 0)[0]
        tc = tgrid[idx] - v[idx] * (3.0 / n) / (v[idx + 1] - v[idx])
        w_meas = math.pi / float(np.mean(np.diff(tc)))
        w_exact = math.pi * math.sqrt(5.0)
        return abs(w_meas - w_exact) / w_exact

    hs = [cfg["grid.h"] * 2 ** (levels - 1 - k) for k in range(levels)]
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        mode_errs = list(pool.map(mode_error, hs))
    prev = None
    for h, e in zip(hs, mode_errs):
        order = math.log2(prev / e) if prev else math.nan
        rows.append(("standing_mode", h, e, order))
        prev = e

    # reconstruction error across levels (small damped disk)
    rec_errs = []
    for h in hs:
        grid, med, src = _study_disk(h, cfg)
        rcfg = ReconstructionConfig(
            grid=grid, medium=med, alpha=alpha, t_final=2.2, m_max=2, tol=1e-300, cfl=cfg["cfl"]
        )
        trace = apply_observation(src.u0.values, rcfg)
        _, rep = neumann_reconstruct(trace, rcfg, truth=src.u0.values)
        rec_errs.append(rep.errors[-1])
        order = math.log2(rec_errs[-2] / rec_errs[-1]) if len(rec_errs) > 1 else math.nan
        rows.append(("reconstruction", h, rec_errs[-1], order))
    table = np.array(
        [(kind, f"{h:.6g}", f"{e:.6e}", f"{o:.3f}") for kind, h, e, o in rows], dtype=object
    )
    path = outdir / "study.csv"
    with open(path, "w", encoding="utf-8") as f:
        f.write("quantity,resolution,error,observed_order\n")
        for kind, h, e, o in table:
            f.write(f"{kind},{h},{e},{o}\n")
    return path


def _study_disk(h: float, cfg: ScenarioConfig):
    from .scenarios import disk_scenario

    return disk_scenario(
        h=h,
        t_final=2.2,
        c_bump_amp=0.0,
        a_amp=cfg["medium.a_amp"] or 0.05,
        source_kind="bump",
        source_radius=0.4,
    )


def cmd_study(args) -> int:
    cfg = parse_config(args.config)
    cfg.require("study")
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest.start(cfg)
    path = convergence_study(cfg, cfg["study.levels"], outdir)
    manifest.outputs.append(path.name)
    manifest.finish(outdir)
    print(f"study written to {path}")
    return EXIT_OK


def cmd_check(args) -> int:
    from .acceptance import run_all

    results = run_all(quick=args.quick)
    n_fail = sum(1 for r in results if not r.passed)
    print(f"{len(results) - n_fail}/{len(results)} criteria passed")
    return EXIT_OK if n_fail == 0 else 1


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="fracpat", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("forward", cmd_forward),
        ("reconstruct", cmd_reconstruct),
        ("geometry", cmd_geometry),
        ("study", cmd_study),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--outdir", default=f"fracpat_{name}_out")
        if name == "reconstruct":
            p.add_argument("--truth", default=None)
        p.set_defaults(fn=fn)
    p_check = sub.add_parser("check")
    p_check.add_argument("--quick", action="store_true", help="fast criteria only")
    p_check.set_defaults(fn=cmd_check)
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
