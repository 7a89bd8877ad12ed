"""Report records and their JSON/CSV serialization.

JSON output is deterministic: keys are sorted and floats are written with
17 significant digits, so a report re-reads to an identical record and
repeated runs produce identical bytes.
"""
import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np


def plain(obj):
    """Convert numpy scalars/arrays and tuples to plain JSON-ready Python."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [plain(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def format_float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    text = format(x, ".17g")
    if not any(ch in text for ch in ".en"):
        text += ".0"
    return text


def dumps(obj, indent=2) -> str:
    """JSON text with sorted keys and 17-significant-digit floats."""
    pad = " " * indent

    def enc(o, depth):
        if o is None:
            return "null"
        if isinstance(o, bool):
            return "true" if o else "false"
        if isinstance(o, int):
            return str(o)
        if isinstance(o, float):
            return format_float(o)
        if isinstance(o, str):
            return json.dumps(o)
        inner = pad * (depth + 1)
        if isinstance(o, list):
            if not o:
                return "[]"
            if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in o):
                return "[" + ", ".join(enc(v, depth) for v in o) + "]"
            return "[\n" + ",\n".join(inner + enc(v, depth + 1) for v in o) + "\n" + pad * depth + "]"
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [inner + json.dumps(k) + ": " + enc(o[k], depth + 1) for k in sorted(o)]
            return "{\n" + ",\n".join(items) + "\n" + pad * depth + "}"
        raise TypeError(f"cannot serialize {type(o).__name__}")

    return enc(plain(obj), 0) + "\n"


class _Record:
    kind = ""

    def __post_init__(self):
        for f in fields(self):
            object.__setattr__(self, f.name, plain(getattr(self, f.name)))

    def to_dict(self):
        return {"type": self.kind, **asdict(self)}


@dataclass
class CheckReport(_Record):
    """Signed margin (>= 0 means the inequality holds) with its verdict."""
    name: str
    margin: float
    tolerance: float
    verdict: str
    witness: dict = field(default_factory=dict)
    theorem: bool = True
    details: dict = field(default_factory=dict)
    kind = "check"

    @property
    def holds(self):
        return self.verdict == "holds"


@dataclass
class ProfileReport(_Record):
    """A sampled profile with second differences and a concavity verdict."""
    name: str
    t: list
    values: list
    d2: list
    d2_half: list
    tolerance: list
    min_d2: Optional[float]
    argmin_t: Optional[float]
    max_d2: Optional[float]
    verdict: str
    support: Optional[list] = None
    details: dict = field(default_factory=dict)
    kind = "profile"


@dataclass
class SearchReport(_Record):
    """Outcome of a seeded margin sweep."""
    target: str
    seed: int
    count: int
    dimension: int
    theorem: bool
    min_margin: float
    argmin_index: int
    argmin_instance: dict
    histogram_counts: list
    histogram_edges: list
    margins: list
    tolerance: float
    verdict: str
    params: dict = field(default_factory=dict)
    kind = "search"


_KINDS = {"check": CheckReport, "profile": ProfileReport, "search": SearchReport}


def report_from_dict(d: dict):
    d = dict(d)
    cls = _KINDS[d.pop("type")]
    return cls(**d)


def report_to_json(report) -> str:
    return dumps(report.to_dict())


def report_from_json(text: str):
    return report_from_dict(json.loads(text))


def report_to_csv(report) -> str:
    """Profiles: t, value, d2, d2_half, tolerance.  Searches: instance, margin."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")

    def cell(v):
        return "" if v is None else format_float(v) if isinstance(v, float) else v

    if isinstance(report, ProfileReport):
        w.writerow(["t", "value", "d2", "d2_half", "tolerance"])
        for row in zip(report.t, report.values, report.d2, report.d2_half, report.tolerance):
            w.writerow([cell(v) for v in row])
    elif isinstance(report, SearchReport):
        w.writerow(["instance", "margin"])
        for i, m in enumerate(report.margins):
            w.writerow([i, cell(m)])
    else:
        w.writerow(["name", "margin", "tolerance", "verdict"])
        w.writerow([report.name, cell(report.margin), cell(report.tolerance), report.verdict])
    return buf.getvalue()
