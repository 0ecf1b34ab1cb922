"""Numpy reference implementations of the fused kernels."""

import numpy as np
from scipy.special import expit, logsumexp


def silu_forward(z):
    s = expit(z)
    return z * s, s


def silu_backward(z, s, upstream):
    return upstream * (s + z * s * (1.0 - s))


def adamw_update(p, g, m, v, lr, beta1, beta2, eps, weight_decay,
                 bias_correction1, bias_correction2):
    bad = int(np.count_nonzero(~np.isfinite(g)))
    if bad:
        return bad
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    denom = np.sqrt(v) / np.sqrt(bias_correction2) + eps
    p *= 1.0 - lr * weight_decay
    p -= lr * (m / bias_correction1) / denom
    return 0


def mixture_posterior(x, atoms, log_probs, widths_sq, alphas, sigmas):
    d = x.shape[1]
    a = alphas[:, None]
    var = a * a * widths_sq[None, :] + (sigmas * sigmas)[:, None]  # (n, k)
    diff = x[:, None, :] - a[:, :, None] * atoms[None, :, :]  # (n, k, d)
    sq = np.sum(diff * diff, axis=-1)
    logits = log_probs[None, :] - 0.5 * sq / var - 0.5 * d * np.log(var)
    r = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
    gain = a * widths_sq[None, :] / var
    cond_mean = atoms[None, :, :] + gain[:, :, None] * diff
    mean = np.einsum("nk,nkd->nd", r, cond_mean)
    score = -np.einsum("nk,nkd->nd", r, diff / var[:, :, None])
    return mean, score
