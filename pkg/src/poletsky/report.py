"""Serialisation helpers for JSON reports and CSV fields."""

from __future__ import annotations

import json
import math

import numpy as np


def format_number(v) -> str:
    """Decimal notation below 1e6 in magnitude, scientific from 1e6 up."""
    v = float(v) + 0.0  # folds -0.0 into 0.0
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if abs(v) >= 1e6:
        return f"{v:.12e}"
    text = np.format_float_positional(v, unique=True, trim="-")
    if "." not in text:
        text += ".0"
    return text


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    return obj


def dumps(report: dict) -> str:
    return json.dumps(to_jsonable(report), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def strip_timings(report: dict) -> dict:
    """Copy of a report without wall-clock fields (for determinism checks)."""
    if isinstance(report, dict):
        return {k: strip_timings(v) for k, v in report.items() if k != "timings"}
    if isinstance(report, list):
        return [strip_timings(v) for v in report]
    return report
