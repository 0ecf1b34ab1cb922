"""Regression targets, loss weights and the closed-form toy teacher.

Velocity targets follow the flow-matching convention psi ~ eps - x0. For a
finite mixture prior the minimiser of every objective is available in closed
form through the posterior over atoms, which is what ``analytic_velocity``
and ``analytic_score`` compute.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels

DEFAULT_CLAMP_CAP = 1e4
DEFAULT_TIME_MARGIN = 1e-3


@dataclass(frozen=True)
class ToyPrior:
    """Finite mixture of point (or isotropic Gaussian) atoms in R^d."""

    atoms: np.ndarray
    probs: np.ndarray
    widths: np.ndarray

    def __init__(self, atoms, probs=None, widths=None):
        atoms = np.asarray(atoms, dtype=np.float64)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        k = atoms.shape[0]
        probs = np.full(k, 1.0 / k) if probs is None else np.asarray(probs, dtype=np.float64)
        widths = np.zeros(k) if widths is None else np.asarray(widths, dtype=np.float64)
        if probs.shape != (k,) or widths.shape != (k,):
            raise ValueError("probs and widths need one entry per atom")
        if np.any(probs <= 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("atom probabilities must be positive and sum to 1")
        if np.any(widths < 0):
            raise ValueError("atom widths must be non-negative")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "widths", widths)

    @classmethod
    def four_atoms(cls):
        return cls([-1.0, 0.0, 1.0, 2.0])

    @classmethod
    def parse(cls, atoms, probs="", widths=""):
        """Build from config strings.

        ``atoms`` is whitespace- or comma-separated; 2D atoms join their
        coordinates with ':' (``"-1:0 1:0 0:1"``).
        """
        tokens = atoms.replace(",", " ").split()
        pts = [[float(c) for c in tok.split(":")] for tok in tokens]
        if len({len(p) for p in pts}) != 1:
            raise ValueError(f"atoms {atoms!r} mix dimensions")

        def floats(s):
            s = s.replace(",", " ").split()
            return [float(v) for v in s] if s else None

        p = floats(probs)
        if p is not None:
            p = np.asarray(p) / np.sum(p)
        return cls(pts, p, floats(widths))

    @property
    def dim(self):
        return self.atoms.shape[1]

    @property
    def min_gap(self):
        a = self.atoms
        dist = np.sqrt(((a[:, None, :] - a[None, :, :]) ** 2).sum(-1))
        dist[np.diag_indices_from(dist)] = np.inf
        return float(dist.min())

    def sample(self, n, rng):
        idx = rng.choice(len(self.probs), size=n, p=self.probs)
        x = self.atoms[idx].copy()
        if np.any(self.widths > 0):
            x += self.widths[idx, None] * rng.standard_normal(x.shape)
        return x

    def posterior(self, schedule, x_t, t):
        """(E[x0 | x_t], grad log p_t(x_t)) under ``schedule``."""
        alpha, sigma = schedule.coeffs(t)
        if np.any(np.asarray(sigma) <= 0):
            raise ValueError("posterior needs t > 0")
        return kernels.mixture_posterior(
            np.asarray(x_t, dtype=np.float64), self.atoms, np.log(self.probs),
            self.widths ** 2, alpha, sigma,
        )


def _col(c, x):
    c = np.asarray(c, dtype=np.float64)
    return c if c.ndim == 0 else c.reshape(-1, 1)


@dataclass
class RegressionTarget:
    """A weighted squared-error target in residual-scaled form.

    The per-sample loss is ``weight * |residual_scale * psi - scaled_target|^2``.
    Unclamped, this equals ``|psi - target|^2`` with
    ``target = scaled_target / residual_scale``.
    """

    scaled_target: np.ndarray
    weight: np.ndarray | float = 1.0
    residual_scale: np.ndarray | float = 1.0

    @property
    def target(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.scaled_target / _col(self.residual_scale, self.scaled_target)

    def per_sample_loss(self, psi):
        r = _col(self.residual_scale, psi) * psi - self.scaled_target
        return np.asarray(self.weight) * np.sum(r * r, axis=1)

    def loss_and_grad(self, psi):
        """Batch-mean loss and its gradient with respect to psi."""
        scale = _col(self.residual_scale, psi)
        r = scale * psi - self.scaled_target
        w = _col(self.weight, psi)
        n = psi.shape[0]
        loss = float(np.mean(np.broadcast_to(w, r.shape) * r * r) * psi.shape[1])
        return loss, 2.0 * w * scale * r / n


@dataclass(frozen=True)
class LossWeights:
    lambda_t: np.ndarray | float
    w: np.ndarray | float
    clamp_weight: np.ndarray | float


def flow_target(x0, eps):
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError("x0 and eps must have equal shapes")
    return RegressionTarget(eps - x0)


def x_pred_target(x0):
    return RegressionTarget(np.asarray(x0, dtype=np.float64).copy())


def _check_interval(s, t):
    s = np.asarray(s, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if np.any(s >= t):
        raise ValueError("subinterval targets need s < t")
    return s, t


def _clamped_weight(sigma_ts, cap):
    with np.errstate(divide="ignore"):
        return np.minimum(1.0 / np.square(sigma_ts), cap)


def subinterval_flow_target(schedule, xs, eps, s, t, clamp_cap=DEFAULT_CLAMP_CAP):
    """Velocity target when only x_s (not x0) is observed, for t in (s, 1].

    With x_t = alpha_{t|s} x_s + sigma_{t|s} eps, the unbiased target is
    A * eps - x_s / alpha_s where
    A = (alpha_s^2 sigma_t + alpha_t sigma_s^2) / (alpha_s^2 sigma_{t|s}).
    Returned in residual-scaled form (scale sigma_{t|s}, weight
    min(1/sigma_{t|s}^2, clamp_cap)) so that t -> s stays finite.
    """
    s, t = _check_interval(s, t)
    xs = np.asarray(xs, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    alpha_s, sigma_s = schedule.coeffs(s)
    alpha_t, sigma_t = schedule.coeffs(t)
    sigma_ts = schedule.bridge_coeffs(s, t).sigma_ts
    eps_coef = (alpha_s ** 2 * sigma_t + alpha_t * sigma_s ** 2) / alpha_s ** 2
    scaled = _col(eps_coef, eps) * eps - _col(sigma_ts / alpha_s, xs) * xs
    return RegressionTarget(scaled, _clamped_weight(sigma_ts, clamp_cap), sigma_ts)


def subinterval_x_pred_target(schedule, xs, eps, s, t, clamp_cap=DEFAULT_CLAMP_CAP):
    """Sample-prediction target x_s / alpha_s - alpha_t sigma_s^2 / (alpha_s^2 sigma_{t|s}) eps."""
    s, t = _check_interval(s, t)
    xs = np.asarray(xs, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    alpha_s, sigma_s = schedule.coeffs(s)
    alpha_t, _ = schedule.coeffs(t)
    sigma_ts = schedule.bridge_coeffs(s, t).sigma_ts
    scaled = _col(sigma_ts / alpha_s, xs) * xs - _col(alpha_t * sigma_s ** 2 / alpha_s ** 2, eps) * eps
    return RegressionTarget(scaled, _clamped_weight(sigma_ts, clamp_cap), sigma_ts)


def naive_subinterval_flow_target(xs, eps):
    """eps - x_s: plain flow matching with x_s standing in for x0 (biased)."""
    return flow_target(xs, eps)


def analytic_velocity(prior, schedule, x_t, t):
    """Closed-form minimiser of the flow-matching loss, E[eps - x0 | x_t]."""
    x_t = np.asarray(x_t, dtype=np.float64)
    alpha, sigma = schedule.coeffs(t)
    x0_hat, _ = prior.posterior(schedule, x_t, t)
    return (x_t - _col(alpha, x_t) * x0_hat) / _col(sigma, x_t) - x0_hat


def analytic_x0(prior, schedule, x_t, t):
    return prior.posterior(schedule, x_t, t)[0]


def analytic_score(prior, schedule, x_t, t):
    return prior.posterior(schedule, x_t, t)[1]


def esm_residual(schedule, psi_value, x_t, score_value, t):
    """psi + x_t / alpha_t + (sigma_t + sigma_t^2 / alpha_t) * score.

    Zero exactly when psi is the explicit-score-matching optimum.
    """
    alpha, sigma = schedule.coeffs(t)
    if np.any(np.asarray(alpha) <= 0):
        raise ValueError("ESM residual needs alpha_t > 0")
    x_t = np.asarray(x_t, dtype=np.float64)
    a = _col(alpha, x_t)
    sg = _col(sigma, x_t)
    return psi_value + x_t / a + (sg + sg * sg / a) * score_value


def dmd_weight(schedule, s, t, clamp_cap=DEFAULT_CLAMP_CAP):
    """lambda_t = 1 / (sigma_t + sigma_t^2 / alpha_t) and w = lambda_t * alpha_{t|s}."""
    s = np.asarray(s, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    alpha_t, sigma_t = schedule.coeffs(t)
    if np.any(np.asarray(alpha_t) <= 0):
        raise ValueError("DMD weight undefined where alpha_t = 0")
    br = schedule.bridge_coeffs(s, t)
    lam = 1.0 / (sigma_t + sigma_t * sigma_t / alpha_t)
    return LossWeights(lam, lam * br.alpha_ts, _clamped_weight(br.sigma_ts, clamp_cap))


def sample_times(rng, n, lo, hi, margin=DEFAULT_TIME_MARGIN, dist="uniform"):
    """Draw n noise levels inside (lo + margin, min(hi, 1 - margin)).

    ``dist`` is "uniform" or "logit_normal" (a standard logit-normal squeezed
    into the same interval).
    """
    a = lo + margin
    b = min(hi, 1.0 - margin)
    if not a < b:
        raise ValueError(f"empty time interval ({lo}, {hi}) with margin {margin}")
    if dist == "uniform":
        u = rng.uniform(size=n)
    elif dist == "logit_normal":
        u = 1.0 / (1.0 + np.exp(-rng.standard_normal(n)))
    else:
        raise ValueError(f"unknown time distribution {dist!r}")
    return a + (b - a) * u
