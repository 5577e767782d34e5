"""
Scenario Parser - reads and writes ``key = value`` scenario files.

Single Responsibility: Only deals with scenario file I/O and parsing.
"""

from dataclasses import fields
from pathlib import Path
from typing import Any, Callable
from uuid import uuid4

from ..config import (
    SPEED_RANGES,
    FrameSizes,
    MobilityModel,
    Protocol,
    Scenario,
    ScenarioError,
    SpeedClass,
    UnknownKeyError,
)


def _int(raw: str) -> int:
    return int(raw)


def _float(raw: str) -> float:
    value = float(raw)
    if value != value or value in (float("inf"), float("-inf")):
        raise ValueError("not a finite number")
    return value


def _int_list(raw: str) -> tuple[int, ...]:
    return tuple(int(part) for part in raw.split(",") if part.strip())


def _positions(raw: str) -> tuple[tuple[float, float], ...]:
    out = []
    for part in raw.split(";"):
        if not part.strip():
            continue
        x, y = part.split(":")
        out.append((_float(x), _float(y)))
    return tuple(out)


def _speed_class(raw: str) -> SpeedClass:
    speed = SpeedClass(raw)
    if speed not in SPEED_RANGES:
        raise ValueError("speed_class must be slow or fast")
    return speed


# file key -> (Scenario field, converter)
SCENARIO_KEYS: dict[str, tuple[str, Callable[[str], Any]]] = {
    "protocol": ("protocol", Protocol),
    "nodes": ("nodes", _int),
    "area_x": ("area_x", _float),
    "area_y": ("area_y", _float),
    "range_m": ("range_m", _float),
    "bandwidth_bps": ("bandwidth_bps", _float),
    "duration_s": ("duration_s", _float),
    "seed": ("seed", _int),
    "mobility": ("mobility", MobilityModel),
    "speed_class": ("speed_class", _speed_class),
    "speed_min": ("speed_min", _float),
    "speed_max": ("speed_max", _float),
    "pause_s": ("pause_s", _float),
    "positions": ("positions", _positions),
    "flows": ("flows", _int),
    "flow_src": ("flow_src", _int_list),
    "flow_dst": ("flow_dst", _int_list),
    "flow_start_s": ("flow_start_s", _float),
    "flow_stop_s": ("flow_stop_s", _float),
    "cbr_payload_bytes": ("cbr_payload_bytes", _int),
    "cbr_interval_s": ("cbr_interval_s", _float),
    "pdsr_q_s": ("pdsr_q_s", _float),
    "pdsr_T": ("pdsr_threshold", _float),
    "ack_timeout_factor": ("ack_timeout_factor", _float),
    "buffer_packets": ("buffer_packets", _int),
    "monitor_sample_s": ("monitor_sample_s", _float),
    "monitor_idle_s": ("monitor_idle_s", _float),
    "rreq_backoff_s": ("rreq_backoff_s", _float),
    "rreq_backoff_cap_s": ("rreq_backoff_cap_s", _float),
    "rreq_max_tries": ("rreq_max_tries", _int),
}
FRAME_KEYS = {f"frame_{f.name}": f.name for f in fields(FrameSizes)}


def parse_scenario(text: str) -> Scenario:
    """Parse scenario text; defaults fill omitted keys, unknown keys are rejected."""
    values: dict[str, Any] = {}
    frame_sizes: dict[str, int] = {}
    lines: dict[str, int] = {}

    for lineno, line in enumerate(text.splitlines(), start=1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        key, sep, raw = content.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or not key:
            raise ScenarioError(key or content, "expected 'key = value'", lineno)
        if key not in SCENARIO_KEYS and key not in FRAME_KEYS:
            raise UnknownKeyError(key, lineno)
        if key in lines:
            raise ScenarioError(key, f"duplicate key, first set at line {lines[key]}", lineno)
        lines[key] = lineno
        try:
            if key in FRAME_KEYS:
                frame_sizes[FRAME_KEYS[key]] = _int(raw)
            else:
                name, convert = SCENARIO_KEYS[key]
                values[name] = convert(raw)
        except (ValueError, TypeError) as e:
            raise ScenarioError(key, f"invalid value for '{key}': {raw!r} ({e})", lineno) from e

    speed = values.pop("speed_class", None)
    if speed is not None:
        if "speed_min" in values or "speed_max" in values:
            raise ScenarioError("speed_class", "speed_class conflicts with speed_min/speed_max", lines["speed_class"])
        values["speed_min"], values["speed_max"] = SPEED_RANGES[speed]
        lines.setdefault("speed_min", lines["speed_class"])
        lines.setdefault("speed_max", lines["speed_class"])

    try:
        if frame_sizes:
            values["frames"] = FrameSizes(**frame_sizes)
        return Scenario(**values)
    except ScenarioError as e:
        line = lines.get(e.key)
        raise (e.at_line(line) if line is not None else e) from None


def _emit_value(value: Any) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    if hasattr(value, "value"):
        return str(value.value)
    return str(value)


def emit_scenario(scenario: Scenario) -> str:
    """Canonical text for a scenario; parsing it yields an equal Scenario."""
    out = []
    for key, (name, _) in SCENARIO_KEYS.items():
        if name == "speed_class":
            continue
        value = getattr(scenario, name)
        if value is None:
            continue
        if name == "positions":
            text = ";".join(f"{x!r}:{y!r}" for x, y in value)
        elif name in ("flow_src", "flow_dst"):
            text = ",".join(str(v) for v in value)
        else:
            text = _emit_value(value)
        out.append(f"{key} = {text}")
    for key, name in FRAME_KEYS.items():
        out.append(f"{key} = {getattr(scenario.frames, name)}")
    return "\n".join(out) + "\n"


class ScenarioParser:
    """Loads scenario files from disk and writes them back atomically."""

    def __init__(self, path: Path):
        self.path = Path(path)

    def parse(self) -> Scenario:
        if not self.path.exists():
            raise FileNotFoundError(f"Scenario file not found: {self.path}")
        return parse_scenario(self.path.read_text(encoding="utf-8"))

    def write(self, scenario: Scenario, path: Path | None = None) -> Path:
        target = Path(path) if path is not None else self.path
        write_atomically(target, emit_scenario(scenario))
        return target


def write_atomically(path: Path, contents: str) -> None:
    """Write file atomically using temp file + rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    temp_file = path.parent / f"{uuid4()}.tmp"
    try:
        temp_file.write_text(contents, encoding="utf-8")
        temp_file.replace(path)
    except Exception:
        if temp_file.exists():
            temp_file.unlink()
        raise
