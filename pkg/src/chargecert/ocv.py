"""Open-circuit-potential curves as monotone tabulated functions.

Curves are plain-text tables of (stoichiometry, potential) pairs with a
strictly increasing first column, interpolated with a monotone cubic
(PCHIP).  Interpolation coefficients are exported as flat arrays so the
integration kernels can evaluate potentials without calling back into
SciPy objects.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator


class OcvError(ValueError):
    """Malformed or non-monotone OCV table."""


@dataclass(frozen=True)
class OcvCurve:
    """Monotone cubic interpolant of a tabulated potential curve.

    ``coeffs`` holds the piecewise-cubic coefficients in descending power
    order, shape (4, len(x) - 1), matching ``scipy`` PPoly layout.
    """

    x: np.ndarray
    y: np.ndarray
    coeffs: np.ndarray = field(repr=False)

    def __call__(self, theta):
        return eval_pchip(self.x, self.coeffs, np.asarray(theta, dtype=float))

    @property
    def x_min(self) -> float:
        return float(self.x[0])

    @property
    def x_max(self) -> float:
        return float(self.x[-1])


def eval_pchip(x: np.ndarray, coeffs: np.ndarray, theta):
    """Evaluate the piecewise cubic at ``theta`` (clamped to the table range)."""
    t = np.clip(theta, x[0], x[-1])
    idx = np.clip(np.searchsorted(x, t, side="right") - 1, 0, len(x) - 2)
    dt = t - x[idx]
    c = coeffs
    return ((c[0, idx] * dt + c[1, idx]) * dt + c[2, idx]) * dt + c[3, idx]


def curve_from_table(x, y) -> OcvCurve:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or x.shape != y.shape or x.size < 4:
        raise OcvError("OCV table needs two equal-length columns with >= 4 rows")
    if not np.all(np.diff(x) > 0):
        raise OcvError("OCV stoichiometry column must be strictly increasing")
    interp = PchipInterpolator(x, y, extrapolate=False)
    return OcvCurve(x=x, y=y, coeffs=np.ascontiguousarray(interp.c))


def load_ocv_file(path) -> OcvCurve:
    """Read a two-column text file of (stoichiometry, volts)."""
    data = np.loadtxt(path, comments="#")
    if data.ndim != 2 or data.shape[1] != 2:
        raise OcvError(f"expected two numeric columns in {path!s}")
    return curve_from_table(data[:, 0], data[:, 1])


def default_curve(electrode: str) -> OcvCurve:
    """Bundled synthetic curve; voltage window of the pair covers [2.5, 4.3] V."""
    if electrode not in ("neg", "pos"):
        raise OcvError(f"unknown electrode {electrode!r}")
    ref = importlib.resources.files("chargecert.data") / f"ocv_{electrode}.txt"
    with importlib.resources.as_file(ref) as path:
        return load_ocv_file(path)
