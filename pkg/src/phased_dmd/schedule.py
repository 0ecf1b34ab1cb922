"""Continuous-time Gaussian diffusion algebra.

A schedule fixes x_t = alpha_t * x_0 + sigma_t * eps for t in [0, 1], with
t = 0 clean data and t = 1 pure noise. Transitions between two noise levels
s <= t are Gaussian with bridge coefficients

    alpha_{t|s} = alpha_t / alpha_s,
    sigma_{t|s}^2 = sigma_t^2 - alpha_{t|s}^2 sigma_s^2.

Everything here accepts scalar times or one time per sample and works in
float64.
"""

from dataclasses import dataclass

import numpy as np

KINDS = ("rectified_flow", "variance_preserving_cosine")

# radicands below this are a schedule bug rather than rounding noise
RADICAND_TOL = 1e-12


def _check_times(t, name="t"):
    t = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(t)) or np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError(f"{name} must lie in [0, 1], got {t!r}")
    return t


def _per_sample(c, x):
    """Broadcast a scalar or per-sample coefficient against a (n, d) batch."""
    c = np.asarray(c, dtype=np.float64)
    if c.ndim == 0:
        return c
    return c.reshape(c.shape + (1,) * (x.ndim - c.ndim))


@dataclass(frozen=True)
class BridgeCoeffs:
    alpha_ts: np.ndarray
    sigma_ts: np.ndarray
    s: np.ndarray
    t: np.ndarray


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str = "rectified_flow"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}; choose from {KINDS}")

    def coeffs(self, t):
        """Return (alpha_t, sigma_t)."""
        t = _check_times(t)
        if self.kind == "rectified_flow":
            alpha, sigma = 1.0 - t, t.copy()
        else:
            alpha, sigma = np.cos(0.5 * np.pi * t), np.sin(0.5 * np.pi * t)
        if t.ndim == 0:
            return float(alpha), float(sigma)
        return alpha, sigma

    def snr(self, t):
        alpha, sigma = self.coeffs(t)
        with np.errstate(divide="ignore"):
            return alpha * alpha / (sigma * sigma)

    def bridge_coeffs(self, s, t):
        s = _check_times(s, "s")
        t = _check_times(t, "t")
        if np.any(s > t):
            raise ValueError("bridge requires s <= t")
        alpha_s, sigma_s = self.coeffs(s)
        alpha_t, sigma_t = self.coeffs(t)
        if np.any(alpha_s <= 0.0):
            raise ValueError("bridge requires alpha_s > 0")
        if self.kind == "rectified_flow":
            alpha_ts = (1.0 - t) / (1.0 - s)
        else:
            alpha_ts = alpha_t / alpha_s
        radicand = sigma_t * sigma_t - alpha_ts * alpha_ts * sigma_s * sigma_s
        if np.any(radicand < -RADICAND_TOL):
            raise ValueError(f"negative bridge variance {np.min(radicand):.3e}")
        sigma_ts = np.sqrt(np.maximum(radicand, 0.0))
        # an exact identity bridge must not pick up rounding noise
        alpha_ts = np.where(s == t, 1.0, alpha_ts)
        sigma_ts = np.where(s == t, 0.0, sigma_ts)
        if alpha_ts.ndim == 0:
            alpha_ts, sigma_ts = float(alpha_ts), float(sigma_ts)
        return BridgeCoeffs(alpha_ts, sigma_ts, s, t)

    def diffuse(self, x0, eps, t):
        """alpha_t * x0 + sigma_t * eps."""
        x0 = np.asarray(x0, dtype=np.float64)
        eps = np.asarray(eps, dtype=np.float64)
        if x0.shape != eps.shape:
            raise ValueError(f"shape mismatch: x0 {x0.shape} vs eps {eps.shape}")
        alpha, sigma = self.coeffs(t)
        return _per_sample(alpha, x0) * x0 + _per_sample(sigma, x0) * eps

    def diffuse_from(self, xs, eps, s, t):
        """Sample x_t ~ p(x_t | x_s) as alpha_{t|s} x_s + sigma_{t|s} eps."""
        xs = np.asarray(xs, dtype=np.float64)
        eps = np.asarray(eps, dtype=np.float64)
        if xs.shape != eps.shape:
            raise ValueError(f"shape mismatch: xs {xs.shape} vs eps {eps.shape}")
        br = self.bridge_coeffs(s, t)
        return _per_sample(br.alpha_ts, xs) * xs + _per_sample(br.sigma_ts, xs) * eps


def get_schedule(kind="rectified_flow"):
    return NoiseSchedule(kind)
