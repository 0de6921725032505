"""Scenario configuration: INI files with fixed sections and typed keys.

A config with ``kind = tc1`` or ``kind = tc2`` starts from the built-in
scenario and only needs the keys it changes; ``kind = custom`` must spell out
the model, mesh, layers and time block itself.  Unknown sections or keys are
errors, and every error message names the offending ``section.key``.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..aquifer import STORAGE_FORMS

KINDS = ("tc1", "tc2", "custom")
MODELS = ("fd", "fe")
METHODS = ("nk", "jfnk")
EDGES = ("left", "right", "bottom", "top")


class ConfigError(ValueError):
    pass


BUILTINS = {
    "tc1": """
[scenario]
kind = tc1
model = fd
description = single unconfined layer between fixed heads of 50 ft and 400 ft

[mesh]
nx = 81
ny = 81
dx = 1500
dy = 1500

[layer1]
K = 100
S_y = 0.25
S_o = 0
z = 0
Z = 500
h0 = 400

[boundary]
left = head 50
right = head 400
bottom = flux 0
top = flux 0

[time]
dt = 1
n_steps = 1461
""",
    "tc2": """
[scenario]
kind = tc2
model = fe
description = two layers joined by an aquitard, one well per layer at cell 210

[mesh]
nx = 20
ny = 20
dx = 6000
dy = 6000

[layer1]
K = 100
S_y = 0.25
S_o = 1e-6
z = 200
Z = 500
h0 = 250

[layer2]
K = 100
S_y = 0.25
S_o = 1e-6
z = 0
Z = 170
h0 = 250

[aquitard]
K_v = 1e-3
D = 30

[pumps]
well_top = 210 1 -13068000
well_bottom = 210 2 -13068000

[time]
dt = 1
n_steps = 1461
""",
}


# section -> key -> (converter, default); default None means required
def _positive(kind):
    def conv(text):
        v = kind(text)
        if not v > 0:
            raise ValueError("must be positive")
        return v
    return conv


def _nonneg(kind):
    def conv(text):
        v = kind(text)
        if v < 0:
            raise ValueError("must be >= 0")
        return v
    return conv


def _choice(options):
    def conv(text):
        v = text.strip().lower()
        if v not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return v
    return conv


def _bool(text):
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError("must be true or false")


def _tristate(text):
    v = text.strip().lower()
    return "auto" if v == "auto" else _bool(v)


def _fraction(text):
    v = float(text)
    if not 0 < v < 1:
        raise ValueError("must lie in (0, 1)")
    return v


_LAYER = {"K": (_positive(float), None), "S_y": (_fraction, None), "S_o": (_nonneg(float), 0.0),
          "z": (float, None), "Z": (float, None), "h0": (float, None)}

SCHEMA = {
    "scenario": {"kind": (_choice(KINDS), None), "model": (_choice(MODELS), None),
                 "description": (str, "")},
    "mesh": {"nx": (_positive(int), None), "ny": (_positive(int), None),
             "dx": (_positive(float), None), "dy": (_positive(float), None)},
    "layer1": _LAYER,
    "layer2": _LAYER,
    "aquitard": {"K_v": (_positive(float), None), "D": (_positive(float), None)},
    "boundary": {e: (str, "flux 0") for e in EDGES},
    "pumps": {},   # free-form names, values "cell layer rate"
    "time": {"dt": (_positive(float), None), "n_steps": (_nonneg(int), None),
             "snapshot_every": (_nonneg(int), 0)},
    "solver": {"method": (_choice(METHODS), "jfnk"), "tau_h": (_positive(float), 1e-4),
               "max_newton": (_positive(int), 100), "gamma_ini": (_fraction, 0.99),
               "r_threshold": (_positive(float), 0.625), "gmres_restart": (_positive(int), 20),
               "gmres_tol": (_fraction, 1e-6), "gmres_max_restarts": (_positive(int), 500),
               "line_search": (_tristate, "auto"), "max_ls": (_nonneg(int), 3),
               "ls_alpha": (_fraction, 1e-4), "ls_rho": (_fraction, 0.5),
               "preconditioner": (_tristate, "auto"), "fd_b": (_positive(float), 1e-6),
               "step_norm": (_choice(("l2", "max")), "l2"),
               "on_nonconvergence": (_choice(("continue", "abort")), "continue")},
    "smoothing": {"eps_s": (_positive(float), 1e-4), "beta": (_positive(float), 10.0),
                  "storage_form": (_choice(STORAGE_FORMS), "integrated"),
                  "per_area_rows": (_bool, True)},
}


@dataclass(frozen=True)
class LayerConfig:
    K: float
    S_y: float
    S_o: float
    z: float
    Z: float
    h0: float


@dataclass(frozen=True)
class BoundaryConfig:
    """Per edge either ``("head", value)`` or ``("flux", value)``."""

    left: tuple = ("flux", 0.0)
    right: tuple = ("flux", 0.0)
    bottom: tuple = ("flux", 0.0)
    top: tuple = ("flux", 0.0)


@dataclass(frozen=True)
class PumpConfig:
    name: str
    cell: int
    layer: int
    rate: float


@dataclass(frozen=True)
class SolverConfig:
    method: str = "jfnk"
    tau_h: float = 1e-4
    max_newton: int = 100
    gamma_ini: float = 0.99
    r_threshold: float = 0.625
    gmres_restart: int = 20
    gmres_tol: float = 1e-6
    gmres_max_restarts: int = 500
    line_search: object = "auto"     # True, False or "auto" (on for jfnk only)
    max_ls: int = 3
    ls_alpha: float = 1e-4
    ls_rho: float = 0.5
    preconditioner: object = "auto"  # True, False or "auto" (ILU(0) for nk only)
    fd_b: float = 1e-6
    step_norm: str = "l2"
    on_nonconvergence: str = "continue"

    @property
    def uses_line_search(self) -> bool:
        return self.method == "jfnk" if self.line_search == "auto" else bool(self.line_search)

    @property
    def uses_preconditioner(self) -> bool:
        return self.method == "nk" if self.preconditioner == "auto" else bool(self.preconditioner)


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str
    model: str
    nx: int
    ny: int
    dx: float
    dy: float
    layers: tuple
    dt: float
    n_steps: int
    aquitard: tuple | None = None           # (K_v, D)
    boundary: BoundaryConfig = BoundaryConfig()
    pumps: tuple = ()
    snapshot_every: int = 0                 # 0: yearly snapshots
    solver: SolverConfig = SolverConfig()
    eps_s: float = 1e-4
    beta: float = 10.0
    storage_form: str = "integrated"
    per_area_rows: bool = True
    description: str = ""
    sections: dict = field(default_factory=dict, compare=False, repr=False)

    def with_overrides(self, **solver_fields) -> "ScenarioConfig":
        """Copy with some solver fields replaced (e.g. ``method``)."""
        return replace(self, solver=replace(self.solver, **solver_fields),
                       sections=_merge(self.sections, {"solver": {k: _ini_value(v)
                                                                  for k, v in solver_fields.items()}}))

    def with_steps(self, n_steps: int) -> "ScenarioConfig":
        if n_steps < 0:
            raise ConfigError("time.n_steps: must be >= 0")
        return replace(self, n_steps=n_steps,
                       sections=_merge(self.sections, {"time": {"n_steps": str(n_steps)}}))

    def to_ini(self) -> str:
        """Fully resolved config as INI text; parsing it gives an equal config."""
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for name, keys in self.sections.items():
            cp[name] = keys
        lines = []
        for name in cp.sections():
            lines.append(f"[{name}]")
            lines += [f"{k} = {v}" for k, v in cp[name].items()]
            lines.append("")
        return "\n".join(lines)


def _ini_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _merge(base: dict, extra: dict) -> dict:
    out = {s: dict(k) for s, k in base.items()}
    for s, keys in extra.items():
        out.setdefault(s, {}).update(keys)
    return out


def _read_ini(text: str, source: str) -> dict:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return {s: dict(cp[s]) for s in cp.sections()}


def _convert(sections: dict) -> dict:
    out = {}
    for sec, keys in sections.items():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]; expected one of {', '.join(SCHEMA)}")
        if sec == "pumps":
            out[sec] = {name: _parse_pump(name, text) for name, text in keys.items()}
            continue
        allowed = SCHEMA[sec]
        vals = {}
        for key, text in keys.items():
            if key not in allowed:
                raise ConfigError(f"unknown key {sec}.{key}; expected one of {', '.join(allowed)}")
            conv = allowed[key][0]
            try:
                vals[key] = conv(text)
            except ValueError as exc:
                raise ConfigError(f"{sec}.{key} = {text!r}: {exc}") from None
        out[sec] = vals
    return out


def _parse_pump(name, text) -> PumpConfig:
    parts = text.split()
    try:
        if len(parts) != 3:
            raise ValueError
        cell, layer, rate = int(parts[0]), int(parts[1]), float(parts[2])
    except ValueError:
        raise ConfigError(f"pumps.{name} = {text!r}: expected 'cell layer rate', "
                          "e.g. '210 1 -13068000'") from None
    if cell < 1 or layer not in (1, 2):
        raise ConfigError(f"pumps.{name}: cell must be >= 1 and layer 1 or 2")
    return PumpConfig(name, cell, layer, rate)


def _parse_edge(edge, text):
    parts = text.split()
    if len(parts) == 2 and parts[0].lower() in ("head", "flux"):
        try:
            return parts[0].lower(), float(parts[1])
        except ValueError:
            pass
    raise ConfigError(f"boundary.{edge} = {text!r}: expected 'head <value>' or 'flux <value>'")


def _required(vals, sec, key):
    if sec not in vals or key not in vals[sec]:
        default = SCHEMA[sec][key][1]
        if default is None:
            raise ConfigError(f"missing required key {sec}.{key}")
        return default
    return vals[sec][key]


def _layer(vals, sec) -> LayerConfig:
    kw = {k: _required(vals, sec, k) for k in _LAYER}
    if not kw["Z"] > kw["z"]:
        raise ConfigError(f"{sec}.Z must lie above {sec}.z")
    return LayerConfig(**kw)


def _build(sections: dict) -> ScenarioConfig:
    vals = _convert(sections)
    kind = _required(vals, "scenario", "kind")
    model = _required(vals, "scenario", "model")
    n_layers = 1 if model == "fd" else 2
    layers = tuple(_layer(vals, f"layer{i}") for i in range(1, n_layers + 1))
    if model == "fd":
        for sec in ("layer2", "aquitard", "pumps"):
            if vals.get(sec):
                raise ConfigError(f"section [{sec}] is only valid with scenario.model = fe")
    else:
        if vals.get("boundary"):
            raise ConfigError("section [boundary] is only valid with scenario.model = fd "
                              "(the two-layer model has no-flow lateral edges)")
        if not layers[0].z >= layers[1].Z:
            raise ConfigError("layer1.z must lie at or above layer2.Z (aquitard between them)")

    aquitard = None
    if model == "fe":
        aquitard = (_required(vals, "aquitard", "K_v"), _required(vals, "aquitard", "D"))

    nx, ny = _required(vals, "mesh", "nx"), _required(vals, "mesh", "ny")
    if model == "fd" and (nx < 2 or ny < 2):
        raise ConfigError("mesh.nx and mesh.ny count nodes for model fd and must be >= 2")
    boundary = BoundaryConfig(**{e: _parse_edge(e, sections.get("boundary", {}).get(e, "flux 0"))
                                 for e in EDGES})
    pumps = tuple(vals.get("pumps", {}).values())
    for p in pumps:
        if p.cell > nx * ny:
            raise ConfigError(f"pumps.{p.name}: cell {p.cell} outside the {nx}x{ny} cell mesh")

    solver = SolverConfig(**vals.get("solver", {}))
    if solver.method == "jfnk" and solver.preconditioner is True:
        raise ConfigError("solver.preconditioner: the jfnk method runs unpreconditioned")
    sm = {k: _required(vals, "smoothing", k) for k in SCHEMA["smoothing"]}
    return ScenarioConfig(
        kind=kind, model=model, nx=nx, ny=ny, dx=_required(vals, "mesh", "dx"),
        dy=_required(vals, "mesh", "dy"), layers=layers, dt=_required(vals, "time", "dt"),
        n_steps=_required(vals, "time", "n_steps"), aquitard=aquitard, boundary=boundary,
        pumps=pumps, snapshot_every=_required(vals, "time", "snapshot_every"), solver=solver,
        description=vals.get("scenario", {}).get("description", ""), sections=sections, **sm)


def builtin_names() -> list[str]:
    return sorted(BUILTINS)


def parse_config_text(text: str, source: str = "<string>") -> ScenarioConfig:
    sections = _read_ini(text, source)
    if not sections:
        raise ConfigError(f"{source}: empty config (expected at least a [scenario] section)")
    kind = sections.get("scenario", {}).get("kind")
    if kind is None:
        raise ConfigError(f"{source}: missing required key scenario.kind "
                          f"(one of {', '.join(KINDS)})")
    kind = kind.strip().lower()
    if kind not in KINDS:
        raise ConfigError(f"{source}: scenario.kind = {kind!r} is not one of {', '.join(KINDS)}")
    if kind in BUILTINS:
        base = _read_ini(BUILTINS[kind], kind)
        model = sections["scenario"].get("model", base["scenario"]["model"]).strip().lower()
        if model != base["scenario"]["model"]:
            raise ConfigError(f"{source}: scenario.model = {model!r} conflicts with kind {kind} "
                              "(use kind = custom)")
        sections = _merge(_read_ini(BUILTINS[kind], kind), sections)
    try:
        return _build(sections)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def parse_config(path_or_name) -> ScenarioConfig:
    """Load a built-in scenario by name or an INI file by path."""
    name = str(path_or_name)
    if name in BUILTINS and not Path(name).exists():
        return parse_config_text(BUILTINS[name], name)
    path = Path(name)
    if not path.is_file():
        raise ConfigError(f"no config file {name!r} and no built-in scenario of that name "
                          f"(built-ins: {', '.join(builtin_names())})")
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read {name}: {exc}") from None
    return parse_config_text(text, name)
