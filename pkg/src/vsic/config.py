"""Run configuration: YAML with explicit units on every physical quantity.

Quantities are strings such as ``"30 mT"``, ``"1.5 us"`` or ``"0.2 MHz"``;
bare numbers are accepted only for dimensionless fields.  Unknown keys are
errors, reported with the file line and column.
"""

from __future__ import annotations

import difflib
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .hamiltonian import DEFAULT_PROFILE, PROFILES

# canonical units: mT, µs, MHz, µm, 1/µs, rad, MHz/mT
UNITS: dict[str, dict[str, float]] = {
    "field": {"T": 1e3, "mT": 1.0, "uT": 1e-3, "µT": 1e-3, "G": 0.1},
    "time": {"s": 1e6, "ms": 1e3, "us": 1.0, "µs": 1.0, "ns": 1e-3},
    "frequency": {"Hz": 1e-6, "kHz": 1e-3, "MHz": 1.0, "GHz": 1e3},
    "length": {"m": 1e6, "mm": 1e3, "um": 1.0, "µm": 1.0, "nm": 1e-3},
    "rate": {"1/s": 1e-6, "1/ms": 1e-3, "1/us": 1.0, "1/µs": 1.0, "1/ns": 1e3},
    "angle": {"rad": 1.0, "deg": math.pi / 180},
    "gyro": {"MHz/mT": 1.0, "MHz/T": 1e-3, "GHz/T": 1.0},
}
CANONICAL = {"field": "mT", "time": "us", "frequency": "MHz", "length": "um",
             "rate": "1/us", "angle": "rad", "gyro": "MHz/mT"}

_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(1/\S+|[^\s\d.+-]\S*)\s*$")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None,
                 source: str = "<config>"):
        self.line, self.column, self.source = line, column, source
        where = source if line is None else f"{source}:{line}:{column}"
        super().__init__(f"{where}: {message}")


def parse_quantity(text, dimension: str) -> float:
    """Value of a unit-suffixed string in the canonical unit of ``dimension``."""
    if isinstance(text, bool) or not isinstance(text, str):
        raise ValueError(f"expected a {dimension} with units (e.g. '1 {CANONICAL[dimension]}'), "
                         f"got {text!r}")
    m = _QUANTITY.match(text.replace("−", "-"))
    if not m:
        raise ValueError(f"cannot read {text!r} as a {dimension}")
    value, unit = float(m.group(1)), m.group(2)
    table = UNITS[dimension]
    if unit not in table:
        raise ValueError(f"unit {unit!r} is not a {dimension} unit; use one of {sorted(table)}")
    out = value * table[unit]
    if not math.isfinite(out):
        raise ValueError(f"{text!r} is not finite")
    return out


def format_quantity(value: float, dimension: str) -> str:
    return f"{float(value)!r} {CANONICAL[dimension]}"


# ------------------------------------------------------------------ schema

# kinds: ("q", dim) quantity; ("range", dim) linspace; ("qlist", dim); "int", "float",
# "str", "bool", "labels" (list of str), "axis" (3 floats); a trailing "?" in the
# default column marks optional values that may be null.

_AUTO = "auto"
SCHEMA: dict[str, dict[str, tuple[Any, Any]]] = {
    "": {"profile": ("str", DEFAULT_PROFILE), "n_si": ("int?", None), "seed": ("int", 0),
         "threads": ("int", 1), "output": ("str", "out"), "composition": ("composition", "1278.86 nm"),
         "b0": (("q?", "field"), None)},
    "parameters": {"g_par": ("float?", None), "g_perp": ("float?", None), "g_V": ("float?", None),
                   "A_V_par": (("q?", "frequency"), None), "A_V_perp": (("q?", "frequency"), None),
                   "Q_zz": (("q?", "frequency"), None), "mu_B_over_h": (("q?", "gyro"), None),
                   "mu_N_over_h": (("q?", "gyro"), None), "A_Si_par": (("q?", "frequency"), None),
                   "A_Si_perp": (("q?", "frequency"), None), "g_Si": ("float?", None)},
    "levels": {"sweep": (("range", "field"), ("0 mT", "50 mT", 501))},
    "clock": {"pair": ("labels", ["|↑,-5/2⟩", "|↓,-7/2⟩"]),
              "range": (("qlist", "field"), ["20 mT", "40 mT"])},
    "odmr": {"linewidth": (("q", "frequency"), "0.5 MHz"), "span": (("q", "frequency"), "6 MHz"),
             "center": (("q?", "frequency"), None), "points": ("int", 1201),
             "axis": ("axis", [0.0, 0.0, 1.0])},
    "sequence": {"b1": (("q", "field"), "0.1 mT"), "detuning": (("q", "frequency"), "0 MHz"),
                 "frequency": (("q?", "frequency"), None), "pi_half": (("q?", "time"), None),
                 "axis": ("axis", [0.0, 0.0, 1.0]),
                 "durations": (("range", "time"), ("0 us", "1 us", 201)),
                 "tau": (("range", "time"), ("0 us", "5 us", 251)),
                 "tau_fix": (("q", "time"), "2 us"),
                 "tau_var": (("range", "time"), ("0 us", "4 us", 201)),
                 "polarization": ("float", 1.0), "pair_weight": ("float?", None),
                 "polarized_pair": ("labels", ["|↓,-7/2⟩", "|↑,-5/2⟩"]),
                 "readout": ("labels", ["|↑,-5/2⟩"])},
    "noise": {"sigma_b": (("q", "field"), "0 mT"), "samples": ("int", 1),
              "dephasing_rate": (("q?", "rate"), None),
              "dephasing_by_subensemble": ("rates3?", None)},
    "antenna": {"enabled": ("bool", False), "radius": (("q", "length"), "50 um"),
                "thickness": (("q", "length"), "500 um"), "slabs": ("int", 25)},
    "fit": {"input": ("str?", None), "model": ("str", "ramsey"), "components": ("int", 1),
            "sharing": ("str", _AUTO)},
}
SUBENSEMBLES = ("DT0", "DT_I", "DT_II")
FIT_MODELS = ("ramsey", "rabi", "gaussian")
SHARING = (_AUTO, "shared-T2", "per-component-T2")


@dataclass
class _Marks:
    marks: dict[tuple, tuple[int, int]] = field(default_factory=dict)
    keys: dict[tuple, tuple[int, int]] = field(default_factory=dict)

    def key_at(self, path: tuple) -> tuple[int | None, int | None]:
        return self.keys[path] if path in self.keys else self.at(path)

    def at(self, path: tuple) -> tuple[int | None, int | None]:
        while path:
            if path in self.marks:
                return self.marks[path]
            path = path[:-1]
        return self.marks.get((), (None, None))


def _to_python(node, path, marks: _Marks):
    marks.marks[path] = (node.start_mark.line + 1, node.start_mark.column + 1)
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = yaml.safe_load(yaml.serialize(k)) if not isinstance(k, yaml.ScalarNode) else k.value
            if key in out:
                raise ConfigError(f"duplicate key {key!r}", k.start_mark.line + 1, k.start_mark.column + 1)
            marks.keys[path + (key,)] = (k.start_mark.line + 1, k.start_mark.column + 1)
            out[key] = _to_python(v, path + (key,), marks)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_to_python(v, path + (i,), marks) for i, v in enumerate(node.value)]
    return yaml.safe_load(yaml.serialize(node))


def _read_yaml(text: str, source: str):
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        raise ConfigError(f"YAML syntax error: {exc.problem}",
                          mark.line + 1 if mark else None, mark.column + 1 if mark else None,
                          source) from None
    marks = _Marks()
    if node is None:
        return {}, marks
    data = _to_python(node, (), marks)
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", 1, 1, source)
    return data, marks


def _coerce(kind, value):
    """Validate one value; quantities stay as canonical floats."""
    optional = False
    if isinstance(kind, tuple):
        tag, dim = kind
        optional = tag.endswith("?")
        tag = tag.rstrip("?")
    else:
        optional = kind.endswith("?")
        tag, dim = kind.rstrip("?"), None
    if value is None:
        if optional:
            return None
        raise ValueError("a value is required")
    if tag == "q":
        return parse_quantity(value, dim)
    if tag == "qlist":
        if not isinstance(value, list) or len(value) != 2:
            raise ValueError("expected a two-element list of quantities")
        return tuple(parse_quantity(v, dim) for v in value)
    if tag == "range":
        if isinstance(value, (list, tuple)) and len(value) == 3 and not isinstance(value, dict):
            start, stop, points = value
        elif isinstance(value, dict):
            extra = set(value) - {"start", "stop", "points"}
            if extra:
                raise ValueError(f"unknown range keys {sorted(extra)}; use start, stop, points")
            try:
                start, stop, points = value["start"], value["stop"], value["points"]
            except KeyError as exc:
                raise ValueError(f"range needs {exc.args[0]!r}") from None
        else:
            raise ValueError("expected a range {start, stop, points}")
        if isinstance(points, bool) or not isinstance(points, int) or points < 1:
            raise ValueError("range points must be a positive integer")
        return (parse_quantity(start, dim), parse_quantity(stop, dim), points)
    if tag == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError(f"expected an integer, got {value!r}")
        return value
    if tag == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"expected a number, got {value!r}")
        return float(value)
    if tag == "bool":
        if not isinstance(value, bool):
            raise ValueError(f"expected true or false, got {value!r}")
        return value
    if tag == "str":
        if not isinstance(value, str):
            raise ValueError(f"expected a string, got {value!r}")
        return value
    if tag == "labels":
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value) or not value:
            raise ValueError("expected a non-empty list of level labels")
        return list(value)
    if tag == "axis":
        if not isinstance(value, list) or len(value) != 3:
            raise ValueError("expected a three-component axis")
        arr = [float(v) for v in value]
        if abs(np.linalg.norm(arr) - 1) > 1e-9:
            raise ValueError("axis must be a unit vector")
        return arr
    if tag == "composition":
        from .spectra import COMPOSITIONS
        if isinstance(value, str):
            if value not in COMPOSITIONS:
                raise ValueError(f"unknown composition {value!r}; known: {sorted(COMPOSITIONS)}")
            return value
        if isinstance(value, dict):
            extra = set(value) - set(SUBENSEMBLES)
            if extra:
                raise ValueError(f"unknown subensembles {sorted(extra)}; use {list(SUBENSEMBLES)}")
            w = {k: float(value.get(k, 0.0)) for k in SUBENSEMBLES}
            if any(v < 0 for v in w.values()) or sum(w.values()) <= 0:
                raise ValueError("composition weights must be non-negative with a positive sum")
            return w
        raise ValueError("composition is a profile name or a mapping of subensemble weights")
    if tag == "rates3":
        if not isinstance(value, dict):
            raise ValueError("expected a mapping of subensemble to dephasing rate")
        extra = set(value) - set(SUBENSEMBLES)
        if extra:
            raise ValueError(f"unknown subensembles {sorted(extra)}; use {list(SUBENSEMBLES)}")
        return {k: parse_quantity(v, "rate") for k, v in value.items()}
    raise AssertionError(tag)  # pragma: no cover


def _serialize(kind, value):
    tag, dim = (kind if isinstance(kind, tuple) else (kind, None))
    tag = tag.rstrip("?")
    if value is None:
        return None
    if tag == "q":
        return format_quantity(value, dim)
    if tag == "qlist":
        return [format_quantity(v, dim) for v in value]
    if tag == "range":
        return {"start": format_quantity(value[0], dim), "stop": format_quantity(value[1], dim),
                "points": int(value[2])}
    if tag == "rates3":
        return {k: format_quantity(v, "rate") for k, v in value.items()}
    if tag == "composition":
        return value if isinstance(value, str) else dict(value)
    if tag in ("labels", "axis"):
        return list(value)
    return value


def _closest(key, options):
    hint = difflib.get_close_matches(str(key), list(options), n=1)
    return f" (did you mean {hint[0]!r}?)" if hint else ""


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration; ``values[section][key]`` in canonical units."""

    values: dict

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    @property
    def root(self) -> dict:
        return self.values[""]

    def to_dict(self) -> dict:
        out: dict = {}
        for section, keys in SCHEMA.items():
            ser = {k: _serialize(kind, self.values[section][k]) for k, (kind, _) in keys.items()}
            if section == "":
                out.update(ser)
            else:
                out[section] = ser
        return out

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, allow_unicode=True)

    def with_overrides(self, **root) -> "RunConfig":
        vals = {s: dict(v) for s, v in self.values.items()}
        for k, v in root.items():
            if k not in SCHEMA[""]:
                raise KeyError(k)
            vals[""][k] = v
        return RunConfig(vals)

    def parameter_overrides(self) -> dict[str, float]:
        return {k: v for k, v in self.values["parameters"].items() if v is not None}


def parse_config(data: dict, marks: _Marks | None = None, source: str = "<config>") -> RunConfig:
    marks = marks or _Marks()
    if "config" in data and isinstance(data.get("config"), dict) and "version" in data:
        # a run manifest: re-run its resolved configuration
        data = data["config"]
        marks = _Marks()
    values: dict = {s: {} for s in SCHEMA}
    sections = {k for k in SCHEMA if k}
    for key, value in data.items():
        if key in SCHEMA[""] or key in sections:
            continue
        line, col = marks.key_at((key,))
        raise ConfigError(f"unknown key {key!r}{_closest(key, list(SCHEMA['']) + sorted(sections))}",
                          line, col, source)
    for section, keys in SCHEMA.items():
        raw = data if section == "" else data.get(section, {})
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            line, col = marks.at((section,))
            raise ConfigError(f"section {section!r} must be a mapping", line, col, source)
        if section:
            for key in raw:
                if key not in keys:
                    line, col = marks.key_at((section, key))
                    raise ConfigError(f"unknown key {key!r} in section {section!r}"
                                      f"{_closest(key, keys)}", line, col, source)
        for key, (kind, default) in keys.items():
            path = (key,) if section == "" else (section, key)
            present = key in raw
            value = raw[key] if present else default
            try:
                values[section][key] = _coerce(kind, value)
            except ValueError as exc:
                line, col = marks.at(path) if present else marks.at((section,) if section else ())
                raise ConfigError(f"{'.'.join(map(str, path))}: {exc}", line, col, source) from None
    cfg = RunConfig(values)
    _check_semantics(cfg, marks, source)
    return cfg


def _check_semantics(cfg: RunConfig, marks: _Marks, source: str):
    def fail(path, msg):
        line, col = marks.at(path)
        raise ConfigError(msg, line, col, source)

    r = cfg.root
    if r["profile"] not in PROFILES:
        fail(("profile",), f"unknown profile {r['profile']!r}; known: {sorted(PROFILES)}")
    if r["n_si"] is not None and r["n_si"] not in (0, 1, 2):
        fail(("n_si",), "n_si must be 0, 1 or 2")
    if r["threads"] < 1:
        fail(("threads",), "threads must be at least 1")
    if cfg["fit"]["model"] not in FIT_MODELS:
        fail(("fit", "model"), f"fit.model must be one of {list(FIT_MODELS)}")
    if cfg["fit"]["sharing"] not in SHARING:
        fail(("fit", "sharing"), f"fit.sharing must be one of {list(SHARING)}")
    if cfg["fit"]["components"] < 1:
        fail(("fit", "components"), "fit.components must be at least 1")
    if cfg["odmr"]["linewidth"] <= 0:
        fail(("odmr", "linewidth"), "odmr.linewidth must be positive")
    if cfg["noise"]["samples"] < 1:
        fail(("noise", "samples"), "noise.samples must be at least 1")
    if cfg["noise"]["sigma_b"] < 0:
        fail(("noise", "sigma_b"), "noise.sigma_b must be non-negative")
    if not 0 <= cfg["sequence"]["polarization"] <= 1:
        fail(("sequence", "polarization"), "sequence.polarization must lie in [0, 1]")
    for key in ("durations", "tau", "tau_var"):
        if min(cfg["sequence"][key][:2]) < 0:
            fail(("sequence", key), f"sequence.{key} must be non-negative")
    if len(cfg["clock"]["pair"]) != 2:
        fail(("clock", "pair"), "clock.pair needs exactly two labels")


def load_config(path=None, text: str | None = None) -> RunConfig:
    """Parse a config file (or text); ``None`` gives all defaults."""
    if path is None and text is None:
        return parse_config({})
    source = str(path) if path is not None else "<config>"
    if text is None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc.strerror}", source=source) from None
    data, marks = _read_yaml(text, source)
    return parse_config(data, marks, source)


def composition_of(cfg: RunConfig):
    from .spectra import COMPOSITIONS, EnsembleComposition
    c = cfg.root["composition"]
    if isinstance(c, str):
        return COMPOSITIONS[c]
    return EnsembleComposition.from_ratio(*(c[k] for k in SUBENSEMBLES), wavelength="custom")
