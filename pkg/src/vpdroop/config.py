"""Scenario files: a sectioned ``key = value`` format with units.

Example::

    [network]
    nominal_voltage = 120 V rms
    nominal_frequency = 60 Hz
    inverters = 2

    [inverter]              # defaults for every inverter
    droop_coefficient = 0.01 V/W
    power_reference = 250 W

    [inverter.2]            # overrides for inverter 2
    branch_resistance = 0.1 ohm

    [load]
    kind = power
    apparent_power = 580 VA
    power_factor = 0.9

    [simulation]
    duration = 1 s

    [event.1]
    time = 0.4 s
    kind = load_step
    resistance = 10 ohm

A bare number is read in the key's default unit (listed in ``SCHEMA``).
Voltages are amplitudes unless followed by ``rms``.  Omitted electrical
values fall back to the prototype defaults (0.063 mH, 1 uF, 0.2 ohm, ...).
"""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field, replace

from .clock import ClockModel
from .controller import default_controllers, printed_controllers, simulation_controllers
from .droop import DroopParams, FullDroopParams
from .net_model import InverterElectrical, LoadModel, MicrogridConfig
from .smallsignal import SWEEP_AXES
from .timedomain import EVENT_KINDS, METHODS, Event, Scenario

log = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)
TWO_PI = 2.0 * math.pi


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


UNITS = {
    "voltage": {"v": 1.0, "kv": 1e3, "mv": 1e-3},
    "resistance": {"ohm": 1.0, "Ω": 1.0, "mohm": 1e-3, "kohm": 1e3},
    "inductance": {"h": 1.0, "mh": 1e-3, "uh": 1e-6, "µh": 1e-6},
    "capacitance": {"f": 1.0, "mf": 1e-3, "uf": 1e-6, "µf": 1e-6, "nf": 1e-9},
    "power": {"w": 1.0, "kw": 1e3, "va": 1.0, "kva": 1e3, "var": 1.0, "kvar": 1e3},
    "time": {"s": 1.0, "ms": 1e-3, "us": 1e-6, "µs": 1e-6},
    "angular": {"rad/s": 1.0, "hz": TWO_PI, "khz": TWO_PI * 1e3},
    "angle": {"rad": 1.0, "deg": math.pi / 180.0},
    "droop": {"v/w": 1.0},
    "qdroop": {"rad/s/var": 1.0, "hz/var": TWO_PI},
    "ratio": {"": 1.0, "%": 1e-2, "ppm": 1e-6},
}

# key -> (kind, default unit); kinds are unit dimensions or str/int/bool/ints/floats
NETWORK = {
    "nominal_voltage": ("voltage", "v"),
    "nominal_frequency": ("angular", "hz"),
    "inverters": ("int", None),
}
INVERTER = {
    "filter_inductance": ("inductance", "mh"),
    "filter_esr": ("resistance", "ohm"),
    "filter_capacitance": ("capacitance", "uf"),
    "virtual_resistance": ("resistance", "ohm"),
    "branch_resistance": ("resistance", "ohm"),
    "branch_inductance": ("inductance", "mh"),
    "rated_power": ("power", "va"),
    "dc_link_voltage": ("voltage", "v"),
    "droop": ("str", None),                 # vpd | full
    "droop_coefficient": ("droop", "v/w"),
    "droop_product": ("voltage", "v"),      # n P*, alternative to droop_coefficient
    "power_reference": ("power", "w"),
    "power_filter_bandwidth": ("angular", "hz"),
    "q_droop_coefficient": ("qdroop", "rad/s/var"),
    "q_droop_shift": ("angular", "hz"),     # frequency shift at rated Q, alternative
    "reactive_power_reference": ("power", "var"),
    "clock_offset": ("angle", "deg"),
    "clock_drift": ("ratio", ""),
}
LOAD = {
    "kind": ("str", None),                  # resistive | series-rl | complex-at-w0 | power
    "resistance": ("resistance", "ohm"),
    "inductance": ("inductance", "h"),
    "reactance": ("resistance", "ohm"),
    "apparent_power": ("power", "va"),
    "power_factor": ("ratio", ""),
}
CONTROLLER = {"design": ("str", None)}     # simulation | printed | retuned
SIMULATION = {
    "duration": ("time", "s"),
    "time_step": ("time", "s"),
    "decimate": ("int", None),
    "initial": ("str", None),
    "method": ("str", None),
    "connected": ("ints", None),
    "enabled": ("ints", None),
}
METRICS = {
    "window": ("time", "s"),
    "end_time": ("time", "s"),
    "event_time": ("time", "s"),
    "band": ("ratio", ""),
}
SWEEP = {"axis": ("str", None), "grid": ("floats", None), "inverter": ("int", None)}
EVENT = {
    "time": ("time", "s"),
    "kind": ("str", None),
    "inverter": ("int", None),
    "value": ("power", "w"),
    "clock": ("str", None),
    "offset": ("angle", "deg"),
    **{f"load_{k}": v for k, v in LOAD.items()},
}
SCHEMA = {"network": NETWORK, "inverter": INVERTER, "load": LOAD, "controller": CONTROLLER,
          "simulation": SIMULATION, "metrics": METRICS, "sweep": SWEEP, "event": EVENT}

CONTROLLER_DESIGNS = {
    "simulation": simulation_controllers,
    "printed": printed_controllers,
    "retuned": default_controllers,
}

_NUM = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?|[-+]?inf|nan)\s*(.*?)\s*$")


# ---------------------------------------------------------------- raw document

@dataclass
class RawEntry:
    value: str
    line: int | None


@dataclass
class RawDocument:
    sections: dict = field(default_factory=dict)   # name -> {key: RawEntry}
    section_lines: dict = field(default_factory=dict)

    def get(self, section: str) -> dict:
        return self.sections.get(section, {})


def _schema_for(section: str, line: int | None) -> dict:
    base = section.split(".")[0]
    if base not in SCHEMA:
        raise ConfigError(f"unknown section [{section}]", line)
    if "." in section:
        if base not in ("inverter", "event"):
            raise ConfigError(f"section [{base}] cannot be indexed", line)
        idx = section.split(".", 1)[1]
        if not idx.isdigit() or int(idx) < 1:
            raise ConfigError(f"bad section index in [{section}]", line)
    elif base == "event":
        raise ConfigError("event sections need an index, e.g. [event.1]", line)
    return SCHEMA[base]


def read_document(text: str) -> RawDocument:
    doc = RawDocument()
    current = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = re.split(r"\s[#;]|^[#;]", raw, maxsplit=1)[0].strip()
        if not line:
            continue
        m = re.fullmatch(r"\[\s*([A-Za-z_][\w.]*)\s*\]", line)
        if m:
            current = m.group(1).lower()
            _schema_for(current, no)
            if current in doc.sections:
                raise ConfigError(f"duplicate section [{current}]", no)
            doc.sections[current] = {}
            doc.section_lines[current] = no
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", no)
        if current is None:
            raise ConfigError("key outside of any section", no)
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lower()
        if key not in _schema_for(current, no):
            raise ConfigError(f"unknown key {key!r} in [{current}]", no)
        if key in doc.sections[current]:
            raise ConfigError(f"duplicate key {key!r} in [{current}]", no)
        doc.sections[current][key] = RawEntry(value, no)
    return doc


def apply_overrides(doc: RawDocument, overrides) -> RawDocument:
    """``section.key=value`` or ``inverter.2.key=value`` assignments."""
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        path, value = (s.strip() for s in item.split("=", 1))
        parts = path.lower().split(".")
        if len(parts) < 2:
            raise ConfigError(f"override {item!r} needs section.key")
        section, key = ".".join(parts[:-1]), parts[-1]
        schema = _schema_for(section, None)
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} in [{section}] (override {item!r})")
        doc.sections.setdefault(section, {})[key] = RawEntry(value, None)
    return doc


# ---------------------------------------------------------------- typed values

def convert(entry: RawEntry, kind: str, unit: str | None, key: str):
    text, line = entry.value, entry.line
    try:
        if kind == "str":
            return text.strip().lower()
        if kind == "int":
            return int(text)
        if kind == "bool":
            low = text.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(text)
            return low in ("true", "yes", "1")
        if kind == "ints":
            return tuple(int(t) for t in re.split(r"[,\s]+", text.strip()) if t)
        if kind == "floats":
            return _float_list(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind}", line) from exc
    m = _NUM.match(text)
    if not m:
        raise ConfigError(f"{key}: expected a number with optional unit, got {text!r}", line)
    number = float(m.group(1))
    rest = m.group(2).split()
    rms = False
    if rest and rest[-1].lower() in ("rms", "peak", "amplitude"):
        if kind != "voltage":
            raise ConfigError(f"{key}: rms/peak only applies to voltages", line)
        rms = rest.pop().lower() == "rms"
    u = " ".join(rest).lower() if rest else unit
    table = UNITS[kind]
    if u not in table:
        raise ConfigError(f"{key}: unit {u!r} is not a {kind} unit "
                          f"(expected one of {sorted(k for k in table if k)})", line)
    value = number * table[u]
    if rms:
        value *= SQRT2
    return value


def _float_list(text: str) -> tuple:
    """``a, b, c`` or ``start:stop:count`` (inclusive linspace)."""
    text = text.strip()
    if ":" in text:
        a, b, c = text.split(":")
        a, b, c = float(a), float(b), int(c)
        if c < 1:
            raise ValueError(text)
        return tuple(a + (b - a) * i / (c - 1) if c > 1 else a for i in range(c))
    return tuple(float(t) for t in re.split(r"[,\s]+", text) if t)


def _typed(doc: RawDocument, section: str) -> dict:
    schema = _schema_for(section, None)
    out = {}
    for key, entry in doc.get(section).items():
        kind, unit = schema[key]
        out[key] = convert(entry, kind, unit, f"{section}.{key}")
    return out


def _line(doc: RawDocument, section: str, key: str | None = None):
    if key and key in doc.get(section):
        return doc.get(section)[key].line
    return doc.section_lines.get(section)


# ---------------------------------------------------------------- build

@dataclass(frozen=True)
class MetricsSettings:
    window: float = 0.2
    end_time: float | None = None
    event_time: float | None = None
    band: float = 0.1


@dataclass(frozen=True)
class SweepSettings:
    axis: str
    grid: tuple
    inverter: int | None = None   # 0-based


@dataclass(frozen=True)
class ScenarioFile:
    """Everything a scenario file describes."""

    config: MicrogridConfig
    scenario: Scenario | None
    metrics: MetricsSettings
    sweep: SweepSettings | None
    controller_design: str = "simulation"

    def with_simulation(self, duration: float | None = None, time_step: float | None = None,
                        decimate: int | None = None) -> Scenario:
        base = self.scenario or Scenario(self.config, duration or 1.0)
        changes = {k: v for k, v in (("duration", duration), ("time_step", time_step),
                                     ("decimate", decimate)) if v is not None}
        if duration is not None:
            kept = tuple(e for e in base.events if e.time <= duration)
            if len(kept) < len(base.events):
                log.warning("duration %gs drops %d later event(s)", duration, len(base.events) - len(kept))
            changes["events"] = kept
        return replace(base, **changes)


TABLE_DEFAULTS = dict(
    nominal_voltage=120.0 * SQRT2,
    nominal_frequency=TWO_PI * 60.0,
    power_filter_bandwidth=TWO_PI * 1.0,
)


def _load_from(values: dict, estar: float, w0: float, line) -> LoadModel:
    kind = values.get("kind", "resistive")
    try:
        if kind == "power":
            extra = set(values) - {"kind", "apparent_power", "power_factor"}
            if extra:
                raise ConfigError(f"load kind 'power' does not take {sorted(extra)}", line)
            if "apparent_power" not in values:
                raise ConfigError("load kind 'power' needs apparent_power", line)
            return LoadModel.from_power(values["apparent_power"], values.get("power_factor", 1.0),
                                        estar / SQRT2, w0)
        if "apparent_power" in values or "power_factor" in values:
            raise ConfigError("apparent_power/power_factor need load kind 'power'", line)
        if "resistance" not in values:
            raise ConfigError("missing required field load.resistance", line)
        return LoadModel(kind, values["resistance"], values.get("inductance", 0.0),
                         values.get("reactance", 0.0), w0)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"invalid load: {exc}", line) from exc


def build(doc: RawDocument) -> ScenarioFile:
    net = _typed(doc, "network")
    estar = net.get("nominal_voltage", TABLE_DEFAULTS["nominal_voltage"])
    w0 = net.get("nominal_frequency", TABLE_DEFAULTS["nominal_frequency"])
    n = net.get("inverters")
    indexed = sorted(int(s.split(".")[1]) for s in doc.sections if s.startswith("inverter."))
    if n is None:
        n = max(indexed, default=1)
    if n < 1:
        raise ConfigError("network.inverters must be at least 1", _line(doc, "network", "inverters"))
    if indexed and indexed[-1] > n:
        raise ConfigError(f"[inverter.{indexed[-1]}] exceeds network.inverters = {n}",
                          _line(doc, f"inverter.{indexed[-1]}"))
    common = _typed(doc, "inverter")
    inverters, droops, clocks = [], [], []
    for k in range(1, n + 1):
        sec = f"inverter.{k}"
        vals = {**common, **_typed(doc, sec)}
        line = _line(doc, sec) or _line(doc, "inverter")
        try:
            inv = InverterElectrical(
                filter_inductance=vals.get("filter_inductance", 0.063e-3),
                filter_esr=vals.get("filter_esr", 0.014),
                filter_capacitance=vals.get("filter_capacitance", 1e-6),
                virtual_resistance=vals.get("virtual_resistance", 0.2),
                branch_resistance=vals.get("branch_resistance", 0.2),
                rated_apparent_power=vals.get("rated_power", 600.0),
                dc_link_voltage=vals.get("dc_link_voltage", 250.0),
                branch_inductance=vals.get("branch_inductance", 0.0))
            pref = vals.get("power_reference", 0.0)
            if "droop_coefficient" in vals and "droop_product" in vals:
                raise ConfigError("give droop_coefficient or droop_product, not both", line)
            if "droop_product" in vals:
                if pref <= 0:
                    raise ConfigError("droop_product needs a positive power_reference", line)
                ncoef = vals["droop_product"] / pref
            else:
                ncoef = vals.get("droop_coefficient", 0.0)
            wp = vals.get("power_filter_bandwidth", TABLE_DEFAULTS["power_filter_bandwidth"])
            mode = vals.get("droop", "vpd")
            if mode == "vpd":
                for key in ("q_droop_coefficient", "q_droop_shift", "reactive_power_reference"):
                    if key in vals:
                        raise ConfigError(f"{key} only applies with droop = full", line)
                droops.append(DroopParams(ncoef, pref, estar, wp))
            elif mode == "full":
                if "q_droop_coefficient" in vals and "q_droop_shift" in vals:
                    raise ConfigError("give q_droop_coefficient or q_droop_shift, not both", line)
                shift = vals.get("q_droop_shift", TWO_PI * 0.5)
                m = vals.get("q_droop_coefficient", shift / inv.rated_apparent_power)
                droops.append(FullDroopParams(ncoef, pref, estar, wp, m,
                                              vals.get("reactive_power_reference", 0.0), w0))
            else:
                raise ConfigError(f"droop must be 'vpd' or 'full', got {mode!r}", line)
            clocks.append(ClockModel(vals.get("clock_offset", 0.0), vals.get("clock_drift", 0.0)))
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"inverter {k}: {exc}", _blame(doc, sec, str(exc)) or line) from exc
        inverters.append(inv)
    modes = {isinstance(d, FullDroopParams) for d in droops}
    if len(modes) > 1:
        raise ConfigError("all inverters must use the same droop law", _line(doc, "inverter"))
    if "load" not in doc.sections:
        raise ConfigError("missing required section [load]")
    load = _load_from(_typed(doc, "load"), estar, w0, _line(doc, "load"))

    design = _typed(doc, "controller").get("design", "simulation")
    if design not in CONTROLLER_DESIGNS:
        raise ConfigError(f"controller.design must be one of {sorted(CONTROLLER_DESIGNS)}",
                          _line(doc, "controller", "design"))
    controllers = None if design == "simulation" else CONTROLLER_DESIGNS[design]()
    try:
        config = MicrogridConfig(tuple(inverters), load, estar, w0, tuple(droops), tuple(clocks),
                                 controllers)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    scenario = None
    if "simulation" in doc.sections:
        scenario = _build_scenario(doc, config, estar, w0, n)
    met = _typed(doc, "metrics")
    metrics = MetricsSettings(met.get("window", 0.2), met.get("end_time"), met.get("event_time"),
                              met.get("band", 0.1))
    sweep = None
    if "sweep" in doc.sections:
        sw = _typed(doc, "sweep")
        line = _line(doc, "sweep")
        if sw.get("axis") not in SWEEP_AXES:
            raise ConfigError(f"sweep.axis must be one of {SWEEP_AXES}", line)
        if not sw.get("grid"):
            raise ConfigError("missing required field sweep.grid", line)
        idx = sw.get("inverter")
        if idx is not None and not 1 <= idx <= n:
            raise ConfigError("sweep.inverter out of range", line)
        sweep = SweepSettings(sw["axis"], tuple(sw["grid"]), None if idx is None else idx - 1)
    return ScenarioFile(config, scenario, metrics, sweep, design)


_FIELD_KEYS = {"rated_apparent_power": "rated_power", "droop_coefficient": "droop_coefficient",
               "power_filter_bandwidth": "power_filter_bandwidth", "phase_offset": "clock_offset",
               "drift_rate": "clock_drift", "q_droop_coefficient": "q_droop_coefficient"}


def _blame(doc: RawDocument, section: str, message: str):
    """Line of the key a validation message names, looking in `section` then [inverter]."""
    for word in re.findall(r"[a-z_]+", message):
        key = _FIELD_KEYS.get(word, word)
        if key not in INVERTER:
            continue
        for sec in (section, "inverter"):
            if key in doc.get(sec):
                return _line(doc, sec, key)
        return None
    return None


def _flags(values, n, default, key, line):
    if values is None:
        return default
    if any(not 1 <= v <= n for v in values):
        raise ConfigError(f"simulation.{key} lists an inverter outside 1..{n}", line)
    return tuple(k + 1 in values for k in range(n))


def _build_scenario(doc, config, estar, w0, n) -> Scenario:
    sim = _typed(doc, "simulation")
    line = _line(doc, "simulation")
    events = []
    for sec in sorted((s for s in doc.sections if s.startswith("event.")),
                      key=lambda s: int(s.split(".")[1])):
        ev = _typed(doc, sec)
        eline = _line(doc, sec)
        kind = ev.get("kind")
        if kind not in EVENT_KINDS:
            raise ConfigError(f"event kind must be one of {EVENT_KINDS}", eline)
        if "time" not in ev:
            raise ConfigError(f"missing required field {sec}.time", eline)
        idx = ev.get("inverter")
        if idx is not None and not 1 <= idx <= n:
            raise ConfigError(f"{sec}.inverter out of range", eline)
        index = None if idx is None else idx - 1
        payload = None
        if kind == "load_step":
            payload = _load_from({k[5:]: v for k, v in ev.items() if k.startswith("load_")},
                                 estar, w0, eline)
        elif kind == "set_power_reference":
            if "value" not in ev:
                raise ConfigError(f"missing required field {sec}.value", eline)
            payload = ev["value"]
        elif kind == "clock_event":
            ck = ev.get("clock")
            if ck is None:
                raise ConfigError(f"missing required field {sec}.clock", eline)
            payload = (ck, ev.get("offset", 0.0))
        try:
            events.append(Event(ev["time"], kind, index, payload))
        except ValueError as exc:
            raise ConfigError(str(exc), eline) from exc
    events.sort(key=lambda e: e.time)
    try:
        return Scenario(
            config, sim.get("duration", 1.0), sim.get("time_step", 1e-5), tuple(events),
            _flags(sim.get("connected"), n, None, "connected", line),
            _flags(sim.get("enabled"), n, None, "enabled", line),
            sim.get("initial", "equilibrium"), sim.get("decimate", 1), sim.get("method", "exact"))
    except ValueError as exc:
        raise ConfigError(str(exc), line) from exc


def parse_config(text: str, overrides=()) -> ScenarioFile:
    return build(apply_overrides(read_document(text), overrides))


def load_config(path, overrides=()) -> ScenarioFile:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), overrides)


# ---------------------------------------------------------------- canonical emit

def _g(x: float) -> str:
    return repr(float(x))


def _load_lines(load: LoadModel, prefix: str = "") -> list[str]:
    out = [f"{prefix}kind = {load.kind}", f"{prefix}resistance = {_g(load.resistance)} ohm"]
    if load.kind == "series-rl":
        out.append(f"{prefix}inductance = {_g(load.inductance)} H")
    if load.kind == "complex-at-w0":
        out.append(f"{prefix}reactance = {_g(load.reactance)} ohm")
    return out


def emit_config(sf: ScenarioFile) -> str:
    """Canonical text in SI units; parsing it reproduces `sf`."""
    cfg = sf.config
    if any(c != ClockModel(c.phase_offset, c.drift_rate) for c in cfg.clocks):
        raise ValueError("clock state beyond offset and drift cannot be written to a file")
    if cfg.load.reference_frequency != cfg.nominal_frequency:
        raise ValueError("load reference frequency must equal the nominal frequency")
    lines = ["[network]", f"nominal_voltage = {_g(cfg.nominal_voltage_magnitude)} V",
             f"nominal_frequency = {_g(cfg.nominal_frequency)} rad/s", f"inverters = {cfg.n}", ""]
    for k, (inv, d, c) in enumerate(zip(cfg.inverters, cfg.droop, cfg.clocks), start=1):
        lines += [f"[inverter.{k}]",
                  f"filter_inductance = {_g(inv.filter_inductance)} H",
                  f"filter_esr = {_g(inv.filter_esr)} ohm",
                  f"filter_capacitance = {_g(inv.filter_capacitance)} F",
                  f"virtual_resistance = {_g(inv.virtual_resistance)} ohm",
                  f"branch_resistance = {_g(inv.branch_resistance)} ohm",
                  f"branch_inductance = {_g(inv.branch_inductance)} H",
                  f"rated_power = {_g(inv.rated_apparent_power)} VA",
                  f"dc_link_voltage = {_g(inv.dc_link_voltage)} V",
                  f"droop = {'full' if isinstance(d, FullDroopParams) else 'vpd'}",
                  f"droop_coefficient = {_g(d.droop_coefficient)} V/W",
                  f"power_reference = {_g(d.active_power_reference)} W",
                  f"power_filter_bandwidth = {_g(d.power_filter_bandwidth)} rad/s",
                  f"clock_offset = {_g(c.phase_offset)} rad",
                  f"clock_drift = {_g(c.drift_rate)}"]
        if isinstance(d, FullDroopParams):
            if d.nominal_frequency != cfg.nominal_frequency:
                raise ValueError("full-droop nominal frequency must equal the network frequency")
            lines += [f"q_droop_coefficient = {_g(d.q_droop_coefficient)} rad/s/var",
                      f"reactive_power_reference = {_g(d.reactive_power_reference)} var"]
        lines.append("")
    lines += ["[load]", *_load_lines(cfg.load), "", "[controller]", f"design = {sf.controller_design}", ""]
    sc = sf.scenario
    if sc is not None:
        lines += ["[simulation]", f"duration = {_g(sc.duration)} s", f"time_step = {_g(sc.time_step)} s",
                  f"decimate = {sc.decimate}", f"initial = {sc.initial}", f"method = {sc.method}",
                  "connected = " + ", ".join(str(k + 1) for k, f in enumerate(sc.initially_connected) if f),
                  "enabled = " + ", ".join(str(k + 1) for k, f in enumerate(sc.initially_enabled) if f), ""]
        for j, ev in enumerate(sc.events, start=1):
            lines += [f"[event.{j}]", f"time = {_g(ev.time)} s", f"kind = {ev.kind}"]
            if ev.index is not None:
                lines.append(f"inverter = {ev.index + 1}")
            if ev.kind == "load_step":
                lines += _load_lines(ev.payload, "load_")
            elif ev.kind == "set_power_reference":
                lines.append(f"value = {_g(ev.payload)} W")
            elif ev.kind == "clock_event":
                lines += [f"clock = {ev.payload[0]}", f"offset = {_g(ev.payload[1] or 0.0)} rad"]
            lines.append("")
    m = sf.metrics
    lines += ["[metrics]", f"window = {_g(m.window)} s", f"band = {_g(m.band)}"]
    if m.end_time is not None:
        lines.append(f"end_time = {_g(m.end_time)} s")
    if m.event_time is not None:
        lines.append(f"event_time = {_g(m.event_time)} s")
    lines.append("")
    if sf.sweep is not None:
        lines += ["[sweep]", f"axis = {sf.sweep.axis}",
                  "grid = " + ", ".join(_g(v) for v in sf.sweep.grid)]
        if sf.sweep.inverter is not None:
            lines.append(f"inverter = {sf.sweep.inverter + 1}")
        lines.append("")
    return "\n".join(lines)
