"""Independent reference computations shared by the unit and acceptance tests."""

import math

import numpy as np


def enumerate_posterior_velocity(atoms, probs, x, t):
    """Flow velocity of a 1D point-atom prior under rectified flow, by direct enumeration."""
    alpha, sigma = 1.0 - t, t
    logs = [math.log(p) - (x - alpha * a) ** 2 / (2 * sigma * sigma) for a, p in zip(atoms, probs)]
    top = max(logs)
    w = [math.exp(v - top) for v in logs]
    x0 = sum(wi * a for wi, a in zip(w, atoms)) / sum(w)
    return (x - alpha * x0) / sigma - x0


def conditional_bridge_draws(prior, schedule, x_t, t, s, n, rng):
    """Draw (x0, x_s, eps) from p(. | x_t) for a 1D point-atom prior, with x_t = a_{t|s} x_s + s_{t|s} eps."""
    alpha_t, sigma_t = schedule.coeffs(t)
    alpha_s, sigma_s = schedule.coeffs(s)
    br = schedule.bridge_coeffs(s, t)
    atoms = prior.atoms[:, 0]
    logw = np.log(prior.probs) - (x_t - alpha_t * atoms) ** 2 / (2 * sigma_t ** 2)
    w = np.exp(logw - logw.max())
    x0 = rng.choice(atoms, size=n, p=w / w.sum())
    # Gaussian posterior of x_s given x0 and x_t
    gain = sigma_s ** 2 * br.alpha_ts / sigma_t ** 2
    mean = alpha_s * x0 + gain * (x_t - alpha_t * x0)
    sd = sigma_s * br.sigma_ts / sigma_t
    xs = mean + sd * rng.standard_normal(n)
    eps = (x_t - br.alpha_ts * xs) / br.sigma_ts
    return x0, xs, eps
