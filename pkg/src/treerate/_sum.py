"""Compensated summation helpers."""
from __future__ import annotations

import math

import numpy as np


def fsum(values) -> float:
    """Correctly rounded sum (Shewchuk), accepts any iterable or array."""
    return math.fsum(np.asarray(values, dtype=float).ravel().tolist())


def compensated_cumsum(values) -> np.ndarray:
    """Running Neumaier sum; error stays O(eps) instead of O(n eps)."""
    vals = np.asarray(values, dtype=float).ravel().tolist()
    out = np.empty(len(vals))
    s = 0.0
    c = 0.0
    for i, v in enumerate(vals):
        t = s + v
        if abs(s) >= abs(v):
            c += (s - t) + v
        else:
            c += (v - t) + s
        s = t
        out[i] = s + c
    return out
