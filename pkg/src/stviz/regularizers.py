"""Bounded local energy and squared spatiotemporal total variation.

Axis conventions on an (H, W, T, C) volume: vertical gradient along rows
(axis 0), horizontal along columns (axis 1), temporal along frames (axis 2).
Forward differences, zero at the last index of each axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DomainError
from .tensor import SpatiotemporalTensor, as_tensor

DEFAULT_B = 160.0
DEFAULT_ALPHA = 3.0
V_DIVISOR = 6.5
MOTION_TV_FACTOR = 10.0


@dataclass(frozen=True)
class RegularizerConfig:
    B: float = DEFAULT_B
    alpha: float = DEFAULT_ALPHA
    kappa: float = 1.0
    chi: float = 1.0
    lambda_b: float = 0.0
    lambda_tv: float = 0.0
    V: float = DEFAULT_B / V_DIVISOR

    def __post_init__(self):
        if not self.B > 0:
            raise ValueError("B must be > 0")
        if not self.alpha >= 1:
            raise ValueError("alpha must be >= 1")
        if self.kappa < 0 or self.chi < 0 or self.lambda_b < 0 or self.lambda_tv < 0:
            raise ValueError("kappa, chi and the lambda weights must be >= 0")
        if not self.V > 0:
            raise ValueError("V must be > 0")

    @classmethod
    def appearance(cls, H, W, B=DEFAULT_B, alpha=DEFAULT_ALPHA, kappa=1.0, chi=1.0):
        V = B / V_DIVISOR
        return cls(B=B, alpha=alpha, kappa=kappa, chi=chi,
                   lambda_b=1.0 / (H * W * B ** alpha), lambda_tv=1.0 / (H * W * V ** 2), V=V)

    @classmethod
    def motion(cls, H, W, B=DEFAULT_B, alpha=DEFAULT_ALPHA, kappa=1.0, chi=1.0):
        app = cls.appearance(H, W, B, alpha, kappa, chi)
        return replace(app, lambda_tv=MOTION_TV_FACTOR * app.lambda_tv)

    def replace(self, **changes) -> "RegularizerConfig":
        return replace(self, **changes)


def _sq_norms(a):
    return np.einsum("ijkd,ijkd->ijk", a, a)


def _n_b(a, alpha):
    return float((_sq_norms(a) ** (alpha / 2)).sum())


def _n_b_grad(a, alpha):
    s = _sq_norms(a)
    p = alpha / 2 - 1
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(s > 0, alpha * s ** p, 0.0)
    return coef[..., None] * a


def r_b_value(x, cfg: RegularizerConfig) -> float:
    """N_B(x), or +inf when any position's channel norm exceeds B."""
    a = as_tensor(x).data
    if np.sqrt(_sq_norms(a).max()) > cfg.B:
        return float("inf")
    return _n_b(a, cfg.alpha)


def r_b_gradient(x, cfg: RegularizerConfig) -> SpatiotemporalTensor:
    a = as_tensor(x).data
    if np.sqrt(_sq_norms(a).max()) > cfg.B:
        raise DomainError(f"input leaves the B-ball (B={cfg.B}); project before differentiating")
    return SpatiotemporalTensor(_n_b_grad(a, cfg.alpha))


def _tv(a, kappa, chi):
    total = 0.0
    for axis, w in ((0, kappa), (1, kappa), (2, chi)):
        if w and a.shape[axis] > 1:
            d = np.diff(a, axis=axis).ravel()
            # correctly rounded, so reordering frames cannot change the value
            total += w * math.fsum(d * d)
    return total


def _tv_grad(a, kappa, chi):
    g = np.zeros_like(a)
    for axis, w in ((0, kappa), (1, kappa), (2, chi)):
        if w and a.shape[axis] > 1:
            d = 2.0 * w * np.diff(a, axis=axis)
            lo = [slice(None)] * 4
            hi = [slice(None)] * 4
            lo[axis] = slice(None, -1)
            hi[axis] = slice(1, None)
            g[tuple(lo)] -= d
            g[tuple(hi)] += d
    return g


def r_tv_value(x, kappa: float, chi: float) -> float:
    return _tv(as_tensor(x).data, kappa, chi)


def r_tv_gradient(x, kappa: float, chi: float) -> SpatiotemporalTensor:
    return SpatiotemporalTensor(_tv_grad(as_tensor(x).data, kappa, chi))


def penalty(a, cfg: RegularizerConfig) -> float:
    """lambda_B * R_B + lambda_TV * R_TV on a raw array (used by the maximizer)."""
    energy = cfg.lambda_b * r_b_value(a, cfg) if cfg.lambda_b else 0.0
    return energy + cfg.lambda_tv * _tv(np.asarray(a), cfg.kappa, cfg.chi)


def penalty_gradient(a, cfg: RegularizerConfig) -> np.ndarray:
    return cfg.lambda_b * _n_b_grad(a, cfg.alpha) + cfg.lambda_tv * _tv_grad(a, cfg.kappa, cfg.chi)
