"""Strict INI run configuration.

Sections and keys are fixed by :data:`SCHEMA`; unknown sections or keys are
rejected with the offending line number.  Lengths are in domain units, times
in the same time unit as the PDE, masses in density x volume.
"""
from __future__ import annotations

import configparser
import io
import math
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import diffusion as dmod
from . import kernel as kmod
from .grid import GridField, GridHandle


class ConfigError(ValueError):
    def __init__(self, msg, line: int | None = None):
        super().__init__(f"line {line}: {msg}" if line else msg)
        self.line = line


def _floats(s):
    return tuple(float(x) for x in s.replace(",", " ").split())


def _ints(s):
    return tuple(int(x) for x in s.replace(",", " ").split())


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_float(s):
    return None if s.strip().lower() in ("", "none", "auto") else float(s)


_TYPES = {"float": float, "int": int, "str": str.strip, "floats": _floats, "ints": _ints, "bool": _bool,
          "optfloat": _opt_float}

# section -> key -> (type, default); default None means "not set"
SCHEMA: dict = {
    "kernel": {
        "family": ("str", None), "dimension": ("int", None), "strength": ("float", None),
        "exponent": ("float", None), "width": ("float", None), "value": ("float", None),
        "screening": ("float", 1.0), "r_max": ("optfloat", None), "table": ("str", None),
    },
    "diffusion": {
        "family": ("str", None), "m": ("float", None), "coefficient": ("float", 1.0),
        "slope": ("float", 1.0), "eps": ("float", 0.0),
        "table": ("str", None), "derivative_table": ("str", None),
    },
    "grid": {"mode": ("str", None), "n": ("int", None), "length": ("float", None), "dimension": ("int", 2)},
    "time": {
        "t_end": ("float", None), "dt_min": ("float", 1e-12), "dt_max": ("float", 1e-2),
        "safety": ("float", 0.4), "positivity_safety": ("float", 0.9), "record_every": ("int", 1),
        "max_steps": ("int", 10_000_000),
    },
    "blowup": {
        "umax_factor": ("float", 100.0), "tail_k": ("floats", (2.0, 4.0, 8.0)), "tail_window": ("int", 5),
        "tail_q": ("optfloat", None), "stop": ("bool", True),
    },
    "output": {
        "lp": ("floats", (2.0,)), "energy_C": ("float", 1e3), "snapshot": ("str", "csv"),
    },
    "experiment": {
        "initial": ("str", "bump"), "mass": ("float", None), "lambda": ("float", None),
        "min_cells": ("float", 8.0), "support": ("optfloat", None), "width": ("float", 0.5),
        "mass_lo": ("float", None), "mass_hi": ("float", None), "mass_tol": ("float", None),
        "budget": ("int", 12), "workers": ("int", 1), "per_round": ("int", 1),
        "virial_tol": ("float", 0.02), "m": ("float", 2.0), "resolutions": ("ints", (64, 128, 256)),
        "t0": ("float", 0.05), "t1": ("float", 0.25), "barenblatt_c": ("float", 0.1),
    },
}


@dataclass
class RunConfigFile:
    """Parsed configuration: only keys present in the file are stored."""

    sections: dict
    source: str = "<string>"
    base_dir: str | None = None

    def path(self, section: str, key: str) -> Path:
        """A file path from the config, relative paths taken from the config's directory."""
        p = Path(self.get(section, key))
        if not p.is_absolute() and self.base_dir is not None:
            p = Path(self.base_dir) / p
        return p

    def get(self, section: str, key: str, default=...):
        typ, dflt = SCHEMA[section][key]
        val = self.sections.get(section, {}).get(key, dflt)
        if val is None and default is ...:
            raise ConfigError(f"[{section}] {key} is required")
        return default if val is None and default is not ... else val

    def has(self, section: str, key: str | None = None) -> bool:
        if key is None:
            return section in self.sections
        return key in self.sections.get(section, {})

    def to_text(self) -> str:
        return dumps(self)

    def __eq__(self, other):
        return isinstance(other, RunConfigFile) and self.sections == other.sections


_SEC = re.compile(r"^\s*\[([^\]]+)\]")
_KEY = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")


def _line_index(text: str) -> dict:
    idx, sec = {}, None
    for no, line in enumerate(text.splitlines(), 1):
        if line.strip().startswith(("#", ";")):
            continue
        m = _SEC.match(line)
        if m:
            sec = m.group(1).strip()
            idx.setdefault((sec, None), no)
            continue
        m = _KEY.match(line)
        if m and sec is not None and not line[:1].isspace():
            idx.setdefault((sec, m.group(1).strip().lower()), no)
    return idx


def loads(text: str, source: str = "<string>", base_dir=None) -> RunConfigFile:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError(f"{source}: malformed line", line) from exc
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(f"{source}: {exc.message if hasattr(exc, 'message') else exc}", line) from exc
    lines = _line_index(text)
    out: dict = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]", lines.get((sec, None)))
        out[sec] = {}
        for key, raw in cp.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]", lines.get((sec, key)))
            typ = SCHEMA[sec][key][0]
            try:
                out[sec][key] = _TYPES[typ](raw)
            except ValueError as exc:
                raise ConfigError(f"[{sec}] {key}: {exc}", lines.get((sec, key))) from exc
    return RunConfigFile(out, source, None if base_dir is None else str(base_dir))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return "none"
    return str(v)


def dumps(cfg: RunConfigFile) -> str:
    buf = io.StringIO()
    for sec in SCHEMA:
        if sec not in cfg.sections:
            continue
        buf.write(f"[{sec}]\n")
        for key in SCHEMA[sec]:
            if key in cfg.sections[sec]:
                buf.write(f"{key} = {_fmt(cfg.sections[sec][key])}\n")
        buf.write("\n")
    return buf.getvalue()


def fixture_names() -> list:
    root = resources.files("aggdiff").joinpath("data")
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


def fixture_text(name: str) -> str:
    f = resources.files("aggdiff").joinpath("data").joinpath(f"{name}.ini")
    if not f.is_file():
        raise ConfigError(f"no packaged fixture {name!r} (have: {', '.join(fixture_names())})")
    return f.read_text()


def load(path) -> RunConfigFile:
    """Read a config file; ``fixture:NAME`` selects a packaged fixture."""
    p = str(path)
    if p.startswith("fixture:"):
        name = p.split(":", 1)[1]
        return loads(fixture_text(name), source=p, base_dir=resources.files("aggdiff").joinpath("data"))
    try:
        text = Path(p).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {p}: {exc}") from exc
    return loads(text, source=p, base_dir=Path(p).resolve().parent)


# -- builders ----------------------------------------------------------------------
def build_grid(cfg: RunConfigFile) -> GridHandle:
    mode = cfg.get("grid", "mode")
    n, length = cfg.get("grid", "n"), cfg.get("grid", "length")
    if mode == "cartesian2d":
        return GridHandle.cartesian(n, length)
    if mode == "radial":
        return GridHandle.radial(n, length, cfg.get("grid", "dimension"))
    raise ConfigError(f"unknown grid mode {mode!r}")


def build_kernel(cfg: RunConfigFile, grid: GridHandle | None = None):
    """Kernel from ``[kernel]``; ``family = zero`` gives ``None`` (K = 0)."""
    fam = cfg.get("kernel", "family").lower()
    if fam == "zero":
        return None
    d = cfg.get("kernel", "dimension", None)
    if d is None:
        d = grid.dimension if grid is not None else 2
    r_max = cfg.get("kernel", "r_max", None)
    if r_max is None:
        r_max = grid.diameter if grid is not None else 4.0
    g = lambda k, dflt=None: cfg.get("kernel", k, dflt)  # noqa: E731
    if fam == "newtonian":
        return kmod.Newtonian(d, r_max=r_max)
    if fam == "logarithmic":
        return kmod.Logarithmic(d, g("strength", 1.0 / (2 * math.pi)), r_max=r_max)
    if fam == "power_law":
        return kmod.PowerLaw(d, g("strength", 1.0), cfg.get("kernel", "exponent"), r_max=r_max)
    if fam == "gaussian":
        return kmod.Gaussian(d, g("width", 1.0), g("strength", 1.0), r_max=r_max)
    if fam == "constant":
        return kmod.Constant(d, g("value", 1.0), r_max=r_max)
    if fam == "bessel":
        return kmod.bessel_potential_table(d, g("screening", 1.0), r_max=max(r_max, 1.0))
    if fam == "tabulated":
        try:
            return kmod.TabulatedRadial.from_csv(cfg.path("kernel", "table"), d, r_max=cfg.get("kernel", "r_max", None))
        except kmod.KernelError as exc:
            raise ConfigError(f"[kernel] table: {exc}") from exc
    raise ConfigError(f"unknown kernel family {fam!r}")


def build_diffusion(cfg: RunConfigFile):
    fam = cfg.get("diffusion", "family").lower()
    if fam == "power_law":
        return dmod.PowerLaw(cfg.get("diffusion", "m"), cfg.get("diffusion", "coefficient"))
    if fam == "saturated_linear":
        return dmod.SaturatedLinear()
    if fam == "power_plus_linear":
        return dmod.PowerPlusLinear(cfg.get("diffusion", "m"), cfg.get("diffusion", "slope"))
    if fam == "custom":
        dpath = cfg.path("diffusion", "derivative_table") if cfg.has("diffusion", "derivative_table") else None
        try:
            return dmod.Custom.from_csv(cfg.path("diffusion", "table"), dpath)
        except dmod.DiffusionError as exc:
            raise ConfigError(f"[diffusion] table: {exc}") from exc
    raise ConfigError(f"unknown diffusion family {fam!r}")


def build_sim_config(cfg: RunConfigFile, backend=None):
    from .solver import SimConfig

    grid = build_grid(cfg)
    return SimConfig(
        diffusion=build_diffusion(cfg), grid=grid, t_end=cfg.get("time", "t_end"),
        kernel=build_kernel(cfg, grid), eps=cfg.get("diffusion", "eps"),
        dt_min=cfg.get("time", "dt_min"), dt_max=cfg.get("time", "dt_max"), safety=cfg.get("time", "safety"),
        positivity_safety=cfg.get("time", "positivity_safety"), umax_factor=cfg.get("blowup", "umax_factor"),
        tail_k=cfg.get("blowup", "tail_k"), tail_window=cfg.get("blowup", "tail_window"),
        tail_q=cfg.get("blowup", "tail_q", None), lp=cfg.get("output", "lp"),
        record_every=cfg.get("time", "record_every"), max_steps=cfg.get("time", "max_steps"),
        energy_C=cfg.get("output", "energy_C"), stop_on_blowup=cfg.get("blowup", "stop"), backend=backend)


def build_initial(cfg: RunConfigFile, sim) -> GridField:
    """Initial density from ``[experiment] initial``: bump, gaussian or barenblatt."""
    from . import experiments as ex

    grid = sim.grid
    kind = cfg.get("experiment", "initial").lower()
    if kind == "bump":
        M = cfg.get("experiment", "mass")
        lam = cfg.get("experiment", "lambda", None)
        if lam is None:
            u, _ = ex.probe_data(M, sim, cfg.get("experiment", "min_cells"), cfg.get("experiment", "support", None))
            return u
        return ex.make_blowup_candidate(ex.BlowupCandidateSpec(M, lam, grid.dimension), grid)
    if kind == "gaussian":
        M = cfg.get("experiment", "mass")
        s = cfg.get("experiment", "width")
        vals = ex._cell_average(lambda r: np.exp(-0.5 * (r / s) ** 2), grid)
        vals *= M / float(np.sum(vals * grid.volumes))
        return GridField(vals, grid, {"M": M, "width": s})
    if kind == "barenblatt":
        m = cfg.get("diffusion", "m")
        vals = ex._cell_average(lambda r: ex.barenblatt(r, cfg.get("experiment", "t0"), m, grid.dimension,
                                                      cfg.get("experiment", "barenblatt_c")), grid, 6)
        return GridField(vals, grid)
    raise ConfigError(f"unknown initial data {kind!r}")
