"""Writers and readers for tradeoff points.

One row per simulated point and one per analytical bound set, in a fixed
column order; values carry 12 significant digits and NaN is written empty.
"""

import json
import logging
import math
from pathlib import Path

import numpy as np
import pandas as pd

from exceptions import ContractError, DbpSimError

logger = logging.getLogger(__name__)

COLUMNS = [
    "source",
    "policy",
    "sweep_param",
    "sigma_e2",
    "p_cct",
    "avg_delay_s",
    "avg_power",
    "per_measured",
    "delay_bound_s",
    "power_bound",
    "slots",
    "seed",
]
PLOT_COLUMNS = ["policy", "sigma_e2", "p_cct", "avg_delay_s", "avg_power_db"]
FLOAT_FORMAT = "%.12g"


class ExportError(DbpSimError, OSError):
    """An export file could not be written or read."""


def _round(value):
    if value is None:
        return np.nan
    if isinstance(value, float) and math.isfinite(value):
        return float(FLOAT_FORMAT % value)
    return value


def _rows(point):
    base = {
        "policy": point.policy,
        "sweep_param": point.sweep_param,
        "sigma_e2": point.sigma_e2,
        "p_cct": point.p_cct,
    }
    rows = []
    if point.stats is not None:
        stats = point.stats
        rows.append({
            **base,
            "source": "simulated",
            "avg_delay_s": stats.avg_delay,
            "avg_power": stats.avg_power,
            "per_measured": stats.conditional_per,
            "slots": stats.slots_simulated,
            "seed": stats.seed,
        })
    if point.bounds is not None:
        rows.append({
            **base,
            "source": "analytical",
            "delay_bound_s": point.bounds.delay_upper,
            "power_bound": point.bounds.power_lower,
        })
    return rows


def to_frame(points):
    """DataFrame in export order: stable sort by (policy, sweep_param, source)."""
    rows = []
    for point in points:
        if point.failed and point.bounds is None:
            logger.warning(f"Skipping failed point {point.policy} @ {point.sweep_param:g}: {point.error}")
        rows.extend(_rows(point))
    frame = pd.DataFrame(rows, columns=COLUMNS)
    frame = frame.sort_values(["policy", "sweep_param", "source"], kind="mergesort")
    frame["slots"] = frame["slots"].astype("Int64")
    frame["seed"] = frame["seed"].astype("UInt64")
    return frame.reset_index(drop=True)


def export(points, fmt, path):
    """Write points as csv or json; returns the path written."""
    if not points:
        raise ContractError("nothing to export")
    if fmt not in ("csv", "json"):
        raise ContractError(f"unknown export format {fmt!r}")
    path = Path(path)
    frame = to_frame(points)
    try:
        if fmt == "csv":
            frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n", na_rep="")
        else:
            records = [
                {key: (None if pd.isna(value) else _round(value)) for key, value in row.items()}
                for row in frame.astype(object).to_dict(orient="records")
            ]
            path.write_text(json.dumps(records, indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise ExportError(f"{path}: {exc.strerror or exc}") from exc
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


def read_points(path):
    """Re-import an exported csv or json file as a DataFrame in export column order."""
    path = Path(path)
    try:
        if path.suffix == ".json":
            frame = pd.DataFrame(json.loads(path.read_text(encoding="utf-8")), columns=COLUMNS)
        else:
            frame = pd.read_csv(path, dtype={"source": str, "policy": str})
    except (OSError, ValueError) as exc:
        raise ExportError(f"{path}: cannot read export ({exc})") from exc
    frame["slots"] = frame["slots"].astype("Int64")
    frame["seed"] = frame["seed"].astype("UInt64")
    return frame[COLUMNS]


def plot_frame(points):
    """Simulated power-versus-delay rows, sorted by policy then delay."""
    frame = to_frame(points)
    frame = frame[frame["source"] == "simulated"].copy()
    with np.errstate(divide="ignore"):
        frame["avg_power_db"] = 10.0 * np.log10(frame["avg_power"].astype(float))
    frame = frame.sort_values(["policy", "avg_delay_s"], kind="mergesort")
    return frame[PLOT_COLUMNS].reset_index(drop=True)


def write_plot_data(points, out_path):
    """Companion <stem>.plot.csv next to an export."""
    out_path = Path(out_path)
    plot_path = out_path.with_name(f"{out_path.stem}.plot.csv")
    try:
        plot_frame(points).to_csv(
            plot_path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n", na_rep=""
        )
    except OSError as exc:
        raise ExportError(f"{plot_path}: {exc.strerror or exc}") from exc
    return plot_path


def write_table(frame: pd.DataFrame, path):
    """Write a curve table (curves subcommand, csit error sweep) as csv."""
    path = Path(path)
    try:
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n", na_rep="")
    except OSError as exc:
        raise ExportError(f"{path}: {exc.strerror or exc}") from exc
    return path
