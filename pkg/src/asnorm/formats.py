"""Text formats: the intrinsics document and CSV/JSON result serialisation.

Intrinsics are a flat JSON object with required numeric keys ``fx``, ``fy``,
``cx``, ``cy``; unknown keys are ignored.

All serialisers emit UTF-8 text with ``\\n`` line endings, fixed column
orders, and shortest round-trip float formatting, so equal inputs always
produce byte-identical output.
"""

from __future__ import annotations

import json

import numpy as np

from .camera import Intrinsics
from .context import SampleSet
from .errors import IntrinsicsError
from .metrics import MetricsReport
from .scenes import SweepResult

SWEEP_COLUMNS = ("parameter", "value", "method", "mean_deg", "median_deg",
                 "pct_11_25", "pct_22_5", "pct_30", "pixels")


def fmt(value) -> str:
    """Shortest round-trip decimal form of a float; plain digits for ints."""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def read_intrinsics(text: str) -> Intrinsics:
    """Parse the intrinsics document; unknown keys are ignored."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise IntrinsicsError(f"intrinsics document is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise IntrinsicsError("intrinsics document must be a JSON object")
    values = {}
    for key in ("fx", "fy", "cx", "cy"):
        if key not in doc:
            raise IntrinsicsError(f"missing key {key}")
        val = doc[key]
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise IntrinsicsError(f"{key} must be a number")
        values[key] = float(val)
    for key in ("fx", "fy"):
        if not values[key] > 0:
            raise IntrinsicsError(f"{key} must be positive")
    return Intrinsics(**values)


def write_intrinsics(k: Intrinsics) -> str:
    return json.dumps({"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy},
                      indent=2) + "\n"


def report_to_json(report: MetricsReport) -> str:
    return json.dumps(report.to_dict(), indent=2) + "\n"


def report_to_csv(report: MetricsReport) -> str:
    lines = ["section,metric,value"]
    for section, data in report.to_dict().items():
        if data is None:
            continue
        for metric, value in data.items():
            lines.append(f"{section},{metric},{fmt(value)}")
    return "\n".join(lines) + "\n"


def sweep_to_csv(result: SweepResult) -> str:
    """Sweep rows as CSV.  Wall-clock timings are deliberately excluded so
    outputs are byte-identical across re-runs with the same seed."""
    lines = [",".join(SWEEP_COLUMNS)]
    for row in result.rows:
        lines.append(",".join([
            row.parameter, fmt(row.value), row.method, fmt(row.mean_deg),
            fmt(row.median_deg), fmt(row.pct_11_25), fmt(row.pct_22_5),
            fmt(row.pct_30), fmt(row.pixels)]))
    return "\n".join(lines) + "\n"


def samples_to_csv(samples: SampleSet) -> str:
    lines = ["u,v"]
    for u, v in samples.pixels:
        lines.append(f"{int(u)},{int(v)}")
    return "\n".join(lines) + "\n"


def trace_to_csv(trace) -> str:
    lines = ["step,loss"]
    for i, loss in enumerate(np.asarray(trace, dtype=np.float64)):
        lines.append(f"{i},{fmt(loss)}")
    return "\n".join(lines) + "\n"
