"""Hot elementwise kernels with a compiled core and a numpy fallback.

The compiled extension is used when it was built and ``PDMD_PURE_PYTHON`` is
unset. ``BACKEND`` names the active implementation; ``use_backend`` switches
at runtime (tests and the benchmark rely on it).
"""

import os

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_IMPLS = {"python": _pykernels}
if _ckernels is not None:
    _IMPLS["compiled"] = _ckernels

BACKEND = "python"
_impl = _pykernels


def available_backends():
    return sorted(_IMPLS)


def use_backend(name):
    global BACKEND, _impl
    if name not in _IMPLS:
        raise ValueError(f"kernel backend {name!r} unavailable; have {available_backends()}")
    BACKEND = name
    _impl = _IMPLS[name]


if _ckernels is not None and not os.environ.get("PDMD_PURE_PYTHON"):
    use_backend("compiled")


def _c(a, dtype=np.float64):
    return np.ascontiguousarray(a, dtype=dtype)


def _real(a):
    a = np.asarray(a)
    return a.dtype if a.dtype == np.float32 else np.float64


def silu_forward(z):
    """Return (z * sigmoid(z), sigmoid(z)) in z's precision (float32 or float64)."""
    return _impl.silu_forward(_c(z, _real(z)))


def silu_backward(z, s, upstream):
    dt = _real(z)
    return _impl.silu_backward(_c(z, dt), _c(s, dt), _c(upstream, dt))


def adamw_update(p, g, m, v, lr, beta1, beta2, eps, weight_decay, step):
    """One fused AdamW update, in place on contiguous arrays of p's dtype.

    Returns the number of non-finite gradient entries; when nonzero nothing
    is modified.
    """
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    return _impl.adamw_update(
        p.reshape(-1), _c(g, p.dtype).reshape(-1), m.reshape(-1), v.reshape(-1),
        float(lr), float(beta1), float(beta2), float(eps), float(weight_decay), bc1, bc2,
    )


def mixture_posterior(x, atoms, log_probs, widths_sq, alphas, sigmas):
    """(E[x0 | x_t], grad log p(x_t)) for a mixture of isotropic Gaussian atoms.

    ``alphas`` and ``sigmas`` hold one schedule coefficient per row of ``x``.
    """
    n = x.shape[0]
    alphas = np.broadcast_to(np.asarray(alphas, dtype=np.float64), (n,))
    sigmas = np.broadcast_to(np.asarray(sigmas, dtype=np.float64), (n,))
    return _impl.mixture_posterior(
        _c(x), _c(atoms), _c(log_probs), _c(widths_sq), _c(alphas), _c(sigmas)
    )
