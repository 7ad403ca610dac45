"""Flat key-value scenario configuration and run manifests.

The config format is one `key = value` pair per line, `#` comments, no
nesting.  Keys are namespaced with dots.  Unknown keys are rejected with
their line number, types are validated, and defaults are filled in so a
parsed config always echoes the complete effective setting.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__

__all__ = ["ConfigError", "ScenarioConfig", "parse_config", "parse_config_text", "serialize_config", "RunManifest"]


class ConfigError(ValueError):
    """Invalid configuration; message carries the offending line number."""


def _as_bool(s: str) -> bool:
    if s.lower() in ("true", "yes", "on", "1"):
        return True
    if s.lower() in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _as_floats(s: str) -> tuple[float, ...]:
    return tuple(float(p) for p in s.split(",") if p.strip())


# key -> (parser, default); REQUIRED marks keys a subcommand must supply
REQUIRED = object()

_SCHEMA: dict[str, tuple] = {
    "grid.h": (float, REQUIRED),
    "grid.shape": (str, "disk"),
    "grid.radius": (float, 1.0),
    "grid.halfwidth_x": (float, 1.0),
    "grid.halfwidth_y": (float, 1.0),
    "grid.center_x": (float, 0.0),
    "grid.center_y": (float, 0.0),
    "grid.gamma_deg_lo": (float, None),
    "grid.gamma_deg_hi": (float, None),
    "grid.allow_reflections": (_as_bool, False),
    "medium.c_profile": (str, "constant"),  # constant | bump | radial_quadratic
    "medium.c_bump_amp": (float, 0.0),
    "medium.c_bump_center_x": (float, -0.15),
    "medium.c_bump_center_y": (float, 0.1),
    "medium.c_bump_radius": (float, 0.55),
    "medium.c_radial_coeff": (float, 0.0),
    "medium.c0": (float, 0.5),
    "medium.a_amp": (float, 0.0),
    "medium.a_center_x": (float, 0.2),
    "medium.a_center_y": (float, 0.0),
    "medium.a_radius": (float, 0.35),
    "source.kind": (str, "bump"),
    "source.center_x": (float, 0.0),
    "source.center_y": (float, 0.0),
    "source.radius": (float, 0.4),
    "source.sigma": (float, 0.1),
    "source.amplitude": (float, 1.0),
    "alpha": (float, REQUIRED),
    "T": (float, REQUIRED),
    "cfl": (float, 0.45),
    "record.trace": (_as_bool, True),
    "record.energy": (_as_bool, True),
    "record.snapshots": (_as_floats, ()),
    "reconstruction.m_max": (int, 30),
    "reconstruction.tol": (float, 1e-4),
    "geometry.foliation_s_lo": (float, 0.0),
    "geometry.foliation_s_hi": (float, 0.5),
    "geometry.leaf_levels": (_as_floats, (0.0, 0.2, 0.4)),
    "geometry.leaf_samples": (int, 64),
    "geometry.kappa_delta": (float, 0.02),
    "geometry.t1_mode": (str, "full"),
    "geometry.n_directions": (int, 64),
    "geometry.ray_step": (float, 2e-3),
    "geometry.ray_cap": (float, 12.0),
    "study.levels": (int, 3),
}

_REQUIRED_BY_COMMAND = {
    "forward": ("grid.h", "alpha", "T"),
    "reconstruct": ("grid.h", "alpha", "T"),
    "geometry": ("grid.h", "alpha", "T"),
    "study": ("grid.h", "alpha", "T"),
}


@dataclass
class ScenarioConfig:
    """Validated flat configuration with every key present."""

    values: dict = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.values[key]

    def require(self, command: str) -> None:
        missing = [
            k
            for k in _REQUIRED_BY_COMMAND.get(command, ())
            if self.values.get(k) is None
        ]
        if missing:
            raise ConfigError(f"missing required keys for {command}: {', '.join(missing)}")


def parse_config_text(text: str) -> ScenarioConfig:
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        parser, _ = _SCHEMA[key]
        try:
            values[key] = parser(val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
        if key == "alpha" and not (0.0 < values[key] < 1.0):
            raise ConfigError(f"line {lineno}: alpha must lie strictly in (0,1)")
        if key == "grid.h" and values[key] <= 0.0:
            raise ConfigError(f"line {lineno}: grid.h must be positive")
        if key == "T" and values[key] <= 0.0:
            raise ConfigError(f"line {lineno}: T must be positive")
    for key, (_, default) in _SCHEMA.items():
        if key not in values:
            values[key] = None if default is REQUIRED else default
    return ScenarioConfig(values=values)


def parse_config(path) -> ScenarioConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def serialize_config(cfg: ScenarioConfig) -> str:
    lines = []
    for key in sorted(_SCHEMA):
        v = cfg.values.get(key)
        if v is None:
            continue
        if isinstance(v, bool):
            s = "true" if v else "false"
        elif isinstance(v, tuple):
            s = ",".join(repr(x) for x in v)
        elif isinstance(v, float):
            s = repr(v)
        else:
            s = str(v)
        lines.append(f"{key} = {s}")
    return "\n".join(lines) + "\n"


@dataclass
class RunManifest:
    """Provenance record written next to every CLI run's outputs."""

    config_hash: str
    code_version: str
    started: str
    finished: str = ""
    outputs: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    @classmethod
    def start(cls, cfg: ScenarioConfig) -> "RunManifest":
        digest = hashlib.sha256(serialize_config(cfg).encode()).hexdigest()
        return cls(
            config_hash=digest,
            code_version=__version__,
            started=time.strftime("%Y-%m-%dT%H:%M:%S"),
        )

    def finish(self, outdir: Path) -> Path:
        self.finished = time.strftime("%Y-%m-%dT%H:%M:%S")
        for name in self.outputs:
            p = outdir / name
            if not p.exists() or p.stat().st_size == 0:
                raise RuntimeError(f"advertised output missing or empty: {name}")
        path = outdir / "manifest.json"
        path.write_text(json.dumps(self.__dict__, indent=2) + "\n", encoding="utf-8")
        return path
