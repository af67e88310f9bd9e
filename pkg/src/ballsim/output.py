"""Manifest-stamped CSV/JSON tables and NDJSON round traces."""
from __future__ import annotations

import csv
import io
import json
import platform
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Any, Iterable, Optional, Sequence

from . import __version__
from .processes import ProcessConfig, RoundOutcome
from .rng import RNG_ID

META_COLUMN = "meta"
FORMATS = ("csv", "json")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    process: Optional[str] = None
    n: Optional[int] = None
    m: Optional[int] = None
    reps: Optional[int] = None
    alpha: Optional[float] = None
    beta: Optional[str] = None
    d: Optional[int] = None
    quantile: Optional[str] = None
    bias: Optional[str] = None
    bias_a: Optional[str] = None
    bias_b: Optional[str] = None
    seed: Optional[int] = None
    stride: Optional[int] = None
    extra: dict = field(default_factory=dict)
    version: str = __version__
    rng: str = RNG_ID
    python: str = platform.python_version()
    started: str = field(default_factory=_now)
    finished: Optional[str] = None

    @classmethod
    def for_config(cls, command: str, config: Optional[ProcessConfig], **kw) -> "RunManifest":
        if config is None:
            return cls(command, **kw)
        return cls(
            command,
            process=config.label,
            beta=str(config.beta),
            d=config.d,
            quantile=str(config.quantile),
            bias=config.bias,
            bias_a=str(config.bias_a),
            bias_b=str(config.bias_b),
            seed=config.seed,
            **kw,
        )

    def finish(self) -> "RunManifest":
        self.finished = _now()
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def _cell(v: Any) -> Any:
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v


def render(rows: Sequence[dict], columns: Sequence[str], meta: dict, fmt: str) -> str:
    """Serialize a table; ``meta`` (manifest + summary) is embedded in every output."""
    if fmt == "json":
        body = {**meta, "columns": list(columns), "data": [{c: r.get(c) for c in columns} for r in rows]}
        return json.dumps(body, indent=1, sort_keys=False) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(list(columns) + [META_COLUMN])
    blob = json.dumps(meta, sort_keys=False)
    if not rows:
        w.writerow([""] * len(columns) + [blob])
    for k, r in enumerate(rows):
        w.writerow([_cell(r.get(c)) for c in columns] + [blob if k == 0 else ""])
    return buf.getvalue()


def write(text: str, out: Optional[str]) -> None:
    if out in (None, "-"):
        import sys

        sys.stdout.write(text)
    else:
        Path(out).write_text(text, newline="")


def _parse_scalar(s: str) -> Any:
    if s == "":
        return None
    for conv in (int, float):
        try:
            return conv(s)
        except ValueError:
            pass
    return s


def read_table(text: str) -> dict:
    """Inverse of :func:`render`: ``{..meta keys.., "columns": [...], "data": [...]}``."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        return json.loads(text)
    reader = csv.reader(io.StringIO(text, newline=""))
    header = next(reader)
    columns = header[:-1]
    if header[-1] != META_COLUMN:
        raise ValueError("not a ballsim CSV table (missing meta column)")
    meta: dict = {}
    data = []
    for k, row in enumerate(reader):
        if k == 0:
            meta = json.loads(row[-1])
        if all(c == "" for c in row[:-1]):
            continue
        data.append({c: _parse_scalar(v) for c, v in zip(columns, row[:-1])})
    return {**meta, "columns": columns, "data": data}


# --- NDJSON traces ---------------------------------------------------------

def write_trace(fh: IO[str], manifest: dict, records: Iterable[dict]) -> None:
    fh.write(json.dumps({"manifest": manifest}, sort_keys=True) + "\n")
    for rec in records:
        fh.write(json.dumps(rec, sort_keys=True) + "\n")


def outcome_record(round_index: int, outcome: RoundOutcome) -> dict:
    return {"round": round_index, **outcome.to_record()}


def read_trace(fh: IO[str]) -> tuple[dict, list[RoundOutcome]]:
    """Manifest and outcomes of an NDJSON trace; rounds must be consecutive from 1."""
    lines = [ln for ln in fh if ln.strip()]
    if not lines:
        raise ValueError("empty trace file")
    head = json.loads(lines[0])
    if "manifest" not in head:
        raise ValueError("trace is missing its manifest header line")
    outcomes = []
    for k, ln in enumerate(lines[1:], start=1):
        rec = json.loads(ln)
        if rec.get("round") != k:
            raise ValueError(f"trace line {k + 1}: expected round {k}, got {rec.get('round')}")
        outcomes.append(RoundOutcome.from_record(rec))
    return head["manifest"], outcomes
