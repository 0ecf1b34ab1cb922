"""Few-step sampling over a decreasing timestep grid.

A ``PhasePlan`` splits the N sampling steps of a grid 1 = t_0 > ... > t_N = 0
into contiguous phases, each served by one expert network and each with its
own noise-injection interval for distillation.
"""

import csv
from dataclasses import dataclass

import numpy as np

INTERVAL_MODES = ("reverse_nested", "disjoint")


@dataclass(frozen=True)
class Phase:
    index: int  # 1-based
    steps: tuple
    expert_id: int
    noise_interval: tuple


@dataclass(frozen=True)
class PhasePlan:
    grid: tuple
    phases: tuple
    interval_mode: str = "reverse_nested"

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=np.float64)
        if g.ndim != 1 or g.size < 2 or g[0] != 1.0 or g[-1] != 0.0:
            raise ValueError(f"grid must run from exactly 1 to exactly 0, got {self.grid}")
        if np.any(np.diff(g) >= 0):
            raise ValueError("grid must be strictly decreasing")
        if self.interval_mode not in INTERVAL_MODES:
            raise ValueError(f"interval_mode must be one of {INTERVAL_MODES}")
        covered = [i for ph in self.phases for i in ph.steps]
        if covered != list(range(self.n_steps)):
            raise ValueError("phase step ranges must partition the sampling steps in order")

    @classmethod
    def build(cls, n_steps=4, n_phases=2, interval_mode="reverse_nested", grid=None):
        """Uniform grid (unless given) with steps split evenly across phases."""
        if grid is None:
            grid = np.linspace(1.0, 0.0, n_steps + 1)
        grid = tuple(float(t) for t in grid)
        n_steps = len(grid) - 1
        if not 1 <= n_phases <= n_steps:
            raise ValueError(f"need 1 <= n_phases <= n_steps, got {n_phases} phases for {n_steps} steps")
        chunks = np.array_split(np.arange(n_steps), n_phases)
        phases = []
        for k, steps in enumerate(chunks, start=1):
            lo = grid[steps[-1] + 1]
            hi = 1.0 if interval_mode == "reverse_nested" else grid[steps[0]]
            phases.append(Phase(k, tuple(int(i) for i in steps), k - 1, (lo, hi)))
        return cls(grid, tuple(phases), interval_mode)

    @property
    def n_steps(self):
        return len(self.grid) - 1

    @property
    def n_phases(self):
        return len(self.phases)

    def phase(self, k):
        return self.phases[k - 1]

    def boundary_time(self, k):
        """Time reached at the end of phase k."""
        return self.grid[self.phase(k).steps[-1] + 1]

    def phase_of_step(self, i):
        for ph in self.phases:
            if i in ph.steps:
                return ph
        raise IndexError(f"step {i} outside plan with {self.n_steps} steps")


@dataclass
class Trajectory:
    """States of a batch along a sampling run: ``states[i]`` is x at ``times[i]``."""

    times: np.ndarray  # (T,)
    states: np.ndarray  # (T, n, d)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.states = np.asarray(self.states, dtype=np.float64)
        if np.any(np.diff(self.times) >= 0):
            raise ValueError("trajectory times must be strictly decreasing")

    @property
    def n_samples(self):
        return self.states.shape[1]

    def window(self, lo, hi):
        keep = (self.times >= lo - 1e-12) & (self.times <= hi + 1e-12)
        return Trajectory(self.times[keep], self.states[keep])

    def to_csv(self, path):
        d = self.states.shape[2]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample_id", "t"] + [f"x{j}" for j in range(d)])
            for i in range(self.n_samples):
                for k, t in enumerate(self.times):
                    w.writerow([i, repr(float(t))] + [repr(float(v)) for v in self.states[k, i]])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if header[:2] != ["sample_id", "t"]:
            raise ValueError(f"{path}: not a trajectory CSV")
        d = len(header) - 2
        ids = np.array([int(r[0]) for r in body])
        n = ids.max() + 1
        n_t = len(body) // n
        vals = np.array([[float(v) for v in r[1:]] for r in body]).reshape(n, n_t, 1 + d)
        return cls(vals[0, :, 0], vals[:, :, 1:].transpose(1, 0, 2))


class TrajectoryRecorder:
    """Single-writer sink collecting states as a pipeline runs."""

    def __init__(self):
        self.times = []
        self.states = []

    def record(self, t, x):
        self.times.append(float(t))
        self.states.append(np.array(x, dtype=np.float64))

    def trajectory(self):
        return Trajectory(self.times, np.stack(self.states))


def step_coeffs(schedule, t, t_next, prediction_kind="velocity"):
    """(a, b) such that one sampler step is x_next = a * x_t + b * prediction.

    Velocity predictions are read as eps - x0 and re-noised deterministically
    (plain Euler under rectified flow); sample predictions are re-noised with
    the implied eps.
    """
    if not t > t_next:
        raise ValueError(f"sampler steps must decrease time, got {t} -> {t_next}")
    if prediction_kind == "velocity" and schedule.kind == "rectified_flow":
        return 1.0, t_next - t
    alpha, sigma = schedule.coeffs(t)
    alpha_n, sigma_n = schedule.coeffs(t_next)
    if prediction_kind == "velocity":
        denom = alpha + sigma
        return (alpha_n + sigma_n) / denom, (sigma_n * alpha - alpha_n * sigma) / denom
    if prediction_kind == "sample":
        return sigma_n / sigma, alpha_n - sigma_n * alpha / sigma
    raise ValueError(f"unknown prediction kind {prediction_kind!r}")


def scheduler_step(schedule, x_t, prediction, t, t_next, prediction_kind="velocity"):
    a, b = step_coeffs(schedule, t, t_next, prediction_kind)
    return a * x_t + b * prediction


def pipeline(schedule, experts, plan, eps, stop_at_step=None, retarget=None, recorder=None):
    """Run sampling steps 0 .. stop_at_step - 1 (all steps by default).

    Each step is served by its phase's expert. ``retarget`` replaces the
    target time of the last executed step (SGTS sets it to 0). Returns the
    final state.
    """
    stop = plan.n_steps if stop_at_step is None else stop_at_step
    if not 0 <= stop <= plan.n_steps:
        raise ValueError(f"stop_at_step {stop} outside 0..{plan.n_steps}")
    x = np.asarray(eps, dtype=np.float64)
    if recorder is not None:
        recorder.record(plan.grid[0], x)
    for i in range(stop):
        net = _expert_for(experts, plan, i)
        t = plan.grid[i]
        t_next = retarget if (retarget is not None and i == stop - 1) else plan.grid[i + 1]
        x = scheduler_step(schedule, x, net(x, np.full(x.shape[0], t)), t, t_next, net.prediction_kind)
        if recorder is not None:
            recorder.record(t_next, x)
    return x


def _expert_for(experts, plan, i):
    ph = plan.phase_of_step(i)
    net = experts[ph.expert_id] if ph.expert_id < len(experts) else None
    if net is None:
        raise ValueError(f"no expert for phase {ph.index} (step {i})")
    return net


def sgts_truncate(plan, rng):
    """Draw the truncation index j uniformly from {1, ..., N}."""
    if plan.n_steps < 1:
        raise ValueError("plan has no steps")
    return int(rng.integers(1, plan.n_steps + 1))


def sample_ode(schedule, net, eps, t_start=1.0, t_end=0.0, n_steps=100):
    """Fine-grid sampling with a single network; returns the Trajectory."""
    grid = np.linspace(t_start, t_end, n_steps + 1)
    rec = TrajectoryRecorder()
    x = np.asarray(eps, dtype=np.float64)
    rec.record(grid[0], x)
    for t, t_next in zip(grid[:-1], grid[1:]):
        x = scheduler_step(schedule, x, net(x, np.full(x.shape[0], t)), t, t_next, net.prediction_kind)
        rec.record(t_next, x)
    return rec.trajectory()
