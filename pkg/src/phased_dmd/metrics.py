"""Distribution diagnostics for toy generators.

All 1D distances are exact; 2D uses sliced W1 over seeded random
projections.
"""

from dataclasses import asdict, dataclass

import numpy as np

SLICED_PROJECTIONS = 64


def _as_1d(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        if x.shape[1] != 1:
            raise ValueError(f"expected 1D samples, got shape {x.shape}")
        x = x[:, 0]
    return x


def wasserstein1(a, b, a_weights=None, b_weights=None):
    """Exact W1 between two (optionally weighted) empirical 1D distributions.

    Equal-size unweighted inputs use the mean absolute difference of sorted
    samples; anything else integrates |F_a - F_b| over the merged support.
    """
    a = _as_1d(a)
    b = _as_1d(b)
    if a.size == 0 or b.size == 0:
        raise ValueError("wasserstein1 needs non-empty inputs")
    if a_weights is None and b_weights is None and a.size == b.size:
        return float(np.mean(np.abs(np.sort(a) - np.sort(b))))

    def cdf_at(x, w, points):
        order = np.argsort(x, kind="stable")
        xs = x[order]
        w = np.full(x.size, 1.0 / x.size) if w is None else np.asarray(w, dtype=np.float64)[order] / np.sum(w)
        cum = np.concatenate([[0.0], np.cumsum(w)])
        return cum[np.searchsorted(xs, points, side="right")]

    support = np.sort(np.concatenate([a, b]))
    widths = np.diff(support)
    fa = cdf_at(a, a_weights, support[:-1])
    fb = cdf_at(b, b_weights, support[:-1])
    return float(np.sum(np.abs(fa - fb) * widths))


def sliced_wasserstein1(a, b, n_projections=SLICED_PROJECTIONS, seed=0):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[1]:
        raise ValueError("sample dimensions differ")
    dirs = np.random.default_rng(seed).standard_normal((n_projections, a.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return float(np.mean([wasserstein1(a @ u, b @ u) for u in dirs]))


def w1_to_prior(samples, prior, seed=0, n_reference=100_000):
    """W1 from samples to the prior itself (exact for 1D point atoms)."""
    samples = np.asarray(samples, dtype=np.float64)
    if prior.dim == 1 and not np.any(prior.widths > 0):
        return wasserstein1(samples, prior.atoms[:, 0], b_weights=prior.probs)
    ref = prior.sample(n_reference, np.random.default_rng(seed))
    if prior.dim == 1:
        return wasserstein1(samples, ref)
    return sliced_wasserstein1(samples, ref, seed=seed)


def distance(a, b, seed=0):
    """W1 in 1D, sliced W1 otherwise."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1 or a.shape[1] == 1:
        return wasserstein1(a, b)
    return sliced_wasserstein1(a, b, seed=seed)


def default_radius(prior):
    return 0.25 * prior.min_gap


def mode_coverage(samples, prior, radius=None):
    """Fraction of samples within ``radius`` of each atom, plus the unassigned rest."""
    radius = default_radius(prior) if radius is None else radius
    if len(prior.probs) > 1 and not radius < 0.5 * prior.min_gap:
        raise ValueError(f"radius {radius} lets assignment regions overlap (min gap {prior.min_gap})")
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    dist = np.sqrt(((x[:, None, :] - prior.atoms[None, :, :]) ** 2).sum(-1))
    nearest = np.argmin(dist, axis=1)
    hit = dist[np.arange(len(x)), nearest] <= radius
    counts = np.bincount(nearest[hit], minlength=len(prior.probs))
    masses = counts / len(x)
    return masses, float(1.0 - hit.mean())


def diversity(samples, max_points=5000, seed=0):
    """Mean pairwise Euclidean distance (exact in 1D via sorting)."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    if n < 2:
        return 0.0
    if x.shape[1] == 1:
        xs = np.sort(x[:, 0])
        k = np.arange(1, n + 1)
        return float(2.0 * np.sum(xs * (2 * k - n - 1)) / (n * (n - 1)))
    if n > max_points:
        x = x[np.random.default_rng(seed).choice(n, max_points, replace=False)]
        n = max_points
    total = 0.0
    for i in range(0, n, 512):
        total += np.sqrt(((x[i:i + 512, None, :] - x[None, :, :]) ** 2).sum(-1)).sum()
    return float(total / (n * (n - 1)))


@dataclass
class DistributionReport:
    w1: float
    mode_masses: list
    unassigned: float
    diversity: float
    n_samples: int

    @property
    def min_mode_mass(self):
        return min(self.mode_masses)

    def to_dict(self):
        return asdict(self)


def distribution_report(samples, prior, radius=None):
    masses, unassigned = mode_coverage(samples, prior, radius)
    return DistributionReport(
        w1=w1_to_prior(samples, prior),
        mode_masses=[float(m) for m in masses],
        unassigned=unassigned,
        diversity=diversity(samples),
        n_samples=int(len(samples)),
    )


def trajectory_deviation(traj_a, traj_b, t_window=(0.0, 1.0)):
    """Largest (over window times) mean |x_a - x_b| between matched samples."""
    a = traj_a.window(*t_window)
    b = traj_b.window(*t_window)
    if a.times.shape != b.times.shape or not np.allclose(a.times, b.times, rtol=0, atol=1e-12):
        raise ValueError("trajectories disagree on the time grid inside the window")
    if a.states.shape != b.states.shape:
        raise ValueError(f"trajectory shapes differ: {a.states.shape} vs {b.states.shape}")
    if a.times.size == 0:
        raise ValueError(f"no recorded times inside window {t_window}")
    gaps = np.abs(a.states - b.states).mean(axis=(1, 2))
    return float(gaps.max())
