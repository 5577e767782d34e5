"""
Per-event trace stream.

One event per line: ``t=<s.us> node=<id> ev=<kind> key=value ...``. Floats
that feed metrics are written with ``repr`` under ``at=`` so a replay
rebuilds the ledger with identical values.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, TextIO


class TraceFormatError(ValueError):
    """Raised for a trace line that does not follow the line format."""


def _fmt(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ",".join(_fmt(v) for v in value) if value else "-"
    if hasattr(value, "value") and isinstance(getattr(value, "value"), str):
        return value.value
    return str(value)


def format_line(t: float, node: int | str, ev: str, fields: dict[str, Any]) -> str:
    parts = [f"t={t:.6f}", f"node={node}", f"ev={ev}"]
    parts.extend(f"{key}={_fmt(value)}" for key, value in fields.items())
    return " ".join(parts)


class TraceWriter:
    """Writes trace lines to a stream and optionally keeps them in memory."""

    def __init__(self, sink: TextIO | None = None, keep: bool = False):
        self.sink = sink
        self.lines: list[str] | None = [] if keep else None
        self.count = 0

    @classmethod
    def to_file(cls, path: Path | str) -> "TraceWriter":
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        return cls(open(path, "w", encoding="utf-8"))

    def emit(self, t: float, node: int | str, ev: str, **fields: Any) -> None:
        line = format_line(t, node, ev, fields)
        self.count += 1
        if self.lines is not None:
            self.lines.append(line)
        if self.sink is not None:
            self.sink.write(line + "\n")

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines or [])

    def close(self) -> None:
        if self.sink is not None:
            self.sink.close()
            self.sink = None


@dataclass(frozen=True)
class TraceRecord:
    t: str
    node: str
    ev: str
    fields: dict[str, str]

    def int(self, key: str) -> int:
        return int(self.fields[key])

    def float(self, key: str) -> float:
        return float(self.fields[key])

    @property
    def node_id(self) -> int:
        return int(self.node)


def parse_line(line: str, lineno: int = 0) -> TraceRecord:
    """Split one trace line into its fixed prefix and key=value fields."""
    tokens = line.split()
    if len(tokens) < 3:
        raise TraceFormatError(f"line {lineno}: expected 't= node= ev=' prefix, got {line!r}")
    pairs = []
    for token in tokens:
        key, sep, value = token.partition("=")
        if not sep:
            raise TraceFormatError(f"line {lineno}: token {token!r} is not key=value")
        pairs.append((key, value))
    if [k for k, _ in pairs[:3]] != ["t", "node", "ev"]:
        raise TraceFormatError(f"line {lineno}: line must start with t=, node=, ev=")
    return TraceRecord(pairs[0][1], pairs[1][1], pairs[2][1], dict(pairs[3:]))


def read_trace(lines: Iterable[str]) -> list[TraceRecord]:
    records = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if line:
            records.append(parse_line(line, lineno))
    return records
