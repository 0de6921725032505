"""Hydraulic parameters and the smoothed switch functions of the layer model.

Every ``max`` switch goes through the Chen-Harker-Kanzow-Smale smoother
:func:`chks_max`; the confined/unconfined storage switch uses the logistic
step :func:`sigmoid_step`.  Functions accept scalars or numpy arrays, and
each has a ``*_dh`` (or ``*_dm``) companion returning its analytic
derivative for exact Jacobian assembly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit


@dataclass(frozen=True)
class LayerParams:
    """One aquifer layer.

    K is horizontal conductivity (L/T), S_y specific yield, S_o specific
    storage (1/L), z and Z the bottom and top elevations (L).
    """

    K: float
    S_y: float
    S_o: float
    z: float
    Z: float

    def __post_init__(self):
        if not self.K > 0:
            raise ValueError("K must be positive")
        if not 0 < self.S_y < 1:
            raise ValueError("S_y must lie in (0, 1)")
        if self.S_o < 0:
            raise ValueError("S_o must be nonnegative")
        if not self.Z > self.z:
            raise ValueError("layer top Z must lie above bottom z")

    @property
    def B(self) -> float:
        return self.Z - self.z


@dataclass(frozen=True)
class AquitardParams:
    K_v: float
    D: float

    def __post_init__(self):
        if not (self.K_v > 0 and self.D > 0):
            raise ValueError("aquitard K_v and D must be positive")

    @property
    def leakance(self) -> float:
        return self.K_v / self.D


STORAGE_FORMS = ("integrated", "product")


@dataclass(frozen=True)
class SmoothingParams:
    """Smoothing widths and the storage-function variant.

    ``storage_form`` picks the stored-water function used by the
    time-differenced storage term, see :func:`storage_content`.
    """

    eps_s: float = 1e-4
    beta: float = 10.0
    storage_form: str = "integrated"

    def __post_init__(self):
        if not (self.eps_s > 0 and self.beta > 0):
            raise ValueError("eps_s and beta must be positive")
        if self.storage_form not in STORAGE_FORMS:
            raise ValueError(f"storage_form must be one of {STORAGE_FORMS}, got {self.storage_form!r}")


# ------------------------------------------------------------------ smoothers

def chks_max(x, eps_s):
    """Smooth ``max(x, 0)``: ``(x + sqrt(x^2 + eps_s)) / 2``."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (x + np.sqrt(x * x + eps_s))


def chks_max_dx(x, eps_s):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (1.0 + x / np.sqrt(x * x + eps_s))


def sigmoid_step(x, beta):
    """Smooth Heaviside ``1 / (1 + exp(-beta x))``, overflow safe."""
    return expit(beta * np.asarray(x, dtype=np.float64))


def sigmoid_step_dx(x, beta):
    s = sigmoid_step(x, beta)
    return beta * s * (1.0 - s)


# ------------------------------------------------------------- layer switches

def transmissivity(h, p: LayerParams, sm: SmoothingParams):
    """K times the smoothed saturated thickness ``min(h, Z) - z``.

    Floored at ``K sqrt(eps_s)`` so the conductance never vanishes or turns
    negative when the layer runs dry.
    """
    raw = p.K * (p.Z - chks_max(p.Z - np.asarray(h, dtype=np.float64), sm.eps_s) - p.z)
    return np.maximum(raw, p.K * np.sqrt(sm.eps_s))


def transmissivity_dh(h, p: LayerParams, sm: SmoothingParams):
    h = np.asarray(h, dtype=np.float64)
    raw = p.K * (p.Z - chks_max(p.Z - h, sm.eps_s) - p.z)
    d = p.K * chks_max_dx(p.Z - h, sm.eps_s)
    return np.where(raw > p.K * np.sqrt(sm.eps_s), d, 0.0)


def storativity(h, p: LayerParams, sm: SmoothingParams):
    """``S_y`` below the layer top, ``S_o B`` above it, blended by a sigmoid."""
    return p.S_y + (p.S_o * p.B - p.S_y) * sigmoid_step(np.asarray(h) - p.Z, sm.beta)


def storativity_dh(h, p: LayerParams, sm: SmoothingParams):
    return (p.S_o * p.B - p.S_y) * sigmoid_step_dx(np.asarray(h) - p.Z, sm.beta)


def storage_content(h, p: LayerParams, sm: SmoothingParams):
    """Stored water relative to the layer top, per unit area (L).

    ``"product"`` is ``S_s(h) (h - Z)``.  It is not monotone in the
    transition band a few tenths of a foot above ``Z``, where its slope
    goes negative.  ``"integrated"`` is the antiderivative of
    :func:`storativity`,

        S_y (h - Z) - (S_y - S_o B) softplus(beta (h - Z)) / beta,

    which has the same asymptotes and slope ``S_s(h) > 0`` everywhere.
    """
    u = np.asarray(h, dtype=np.float64) - p.Z
    if sm.storage_form == "product":
        return storativity(h, p, sm) * u
    return p.S_y * u - (p.S_y - p.S_o * p.B) * np.logaddexp(0.0, sm.beta * u) / sm.beta


def storage_content_dh(h, p: LayerParams, sm: SmoothingParams):
    if sm.storage_form == "product":
        return storativity_dh(h, p, sm) * (np.asarray(h) - p.Z) + storativity(h, p, sm)
    return storativity(h, p, sm)


def vertical_leakage(h_u, h_b, z_u: float, Z_b: float, a: AquitardParams, sm: SmoothingParams):
    """Downward flow through the aquitard (L/T); the lower layer receives its negative.

    Each layer's effective head is ``max(h, elevation)`` written as
    ``elevation + max(h - elevation, 0)`` and smoothed.
    """
    top = z_u + chks_max(np.asarray(h_u) - z_u, sm.eps_s)
    bottom = Z_b + chks_max(np.asarray(h_b) - Z_b, sm.eps_s)
    return a.leakance * (top - bottom)


def vertical_leakage_dh(h_u, h_b, z_u: float, Z_b: float, a: AquitardParams, sm: SmoothingParams):
    """Partial derivatives ``(dV/dh_u, dV/dh_b)``."""
    du = a.leakance * chks_max_dx(np.asarray(h_u) - z_u, sm.eps_s)
    db = -a.leakance * chks_max_dx(np.asarray(h_b) - Z_b, sm.eps_s)
    return du, db


def available_storage(h, p: LayerParams):
    """Water stored above the layer bottom, per unit area (L). Not smoothed."""
    h = np.asarray(h, dtype=np.float64)
    m = np.where(h <= p.Z, p.S_y * (h - p.z), p.S_y * p.B + p.S_o * p.B * (h - p.Z))
    return np.where(h < p.z, 0.0, m)


def available_storage_dh(h, p: LayerParams):
    h = np.asarray(h, dtype=np.float64)
    d = np.where(h <= p.Z, p.S_y, p.S_o * p.B)
    return np.where(h < p.z, 0.0, d)


def limited_sink(Q_o, M, dt: float, sm: SmoothingParams):
    """Source/sink rate (L/T) with pumping capped by ``M / dt``.

    Recharge (``Q_o >= 0``) passes through; extraction magnitude becomes the
    smoothed ``min(|Q_o|, M/dt) = |Q_o| - max(|Q_o| - M/dt, 0)``.
    """
    Q_o = np.asarray(Q_o, dtype=np.float64)
    mag = np.abs(Q_o)
    capped = -(mag - chks_max(mag - np.asarray(M) / dt, sm.eps_s))
    return np.where(Q_o < 0, capped, Q_o)


def limited_sink_dm(Q_o, M, dt: float, sm: SmoothingParams):
    """Derivative of :func:`limited_sink` with respect to ``M``."""
    Q_o = np.asarray(Q_o, dtype=np.float64)
    mag = np.abs(Q_o)
    d = -chks_max_dx(mag - np.asarray(M) / dt, sm.eps_s) / dt
    return np.where(Q_o < 0, d, 0.0)
