"""Distribution matching distillation trainers.

A generator (one expert network per phase) is trained by injecting the
reverse-KL pseudo-gradient ``w_{t|s} * (T(x_t) - F(x_t))`` as the cotangent of
its output at the phase boundary, where T is the teacher velocity and F the
fake velocity model tracking the generator's own distribution. Neither score
network is differentiated.

Methods:

* ``dmd``: one expert for every step, gradients through all steps.
* ``dmd_sgts``: one expert, the pipeline truncated at a random step j whose
  final step is retargeted to t=0; only that step records gradients.
* ``phased``: phase k trains expert k on the steps ending at boundary t_k,
  earlier experts frozen, noise injected on the phase's interval.
* ``phased_sgts``: as ``phased`` but with a random number of executed steps
  inside the phase.
"""

import os
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr

from .metrics import distance, distribution_report
from .objectives import (
    DEFAULT_CLAMP_CAP,
    DEFAULT_TIME_MARGIN,
    analytic_velocity,
    dmd_weight,
    flow_target,
    sample_times,
    subinterval_flow_target,
)
from .sampler import PhasePlan, pipeline, sgts_truncate, step_coeffs
from .toynet import AdamState, TimeConditionedNet, adam_step, load_checkpoint, save_checkpoint

METHODS = ("dmd", "dmd_sgts", "phased", "phased_sgts")
TEACHER_KINDS = ("analytic", "learned")
GRAD_NORMALIZATIONS = ("none", "per_sample_mean_abs")
NORMALIZATION_EPS = 1e-8


class TrainingDiverged(FloatingPointError):
    """A loss or pseudo-gradient went non-finite; ``dump`` holds the trainer state summary."""

    def __init__(self, message, dump):
        super().__init__(f"{message}; state: {dump}")
        self.dump = dump


@dataclass
class TrainerConfig:
    method: str = "phased"
    n_steps: int = 4
    n_phases: int = 2
    interval_mode: str = "reverse_nested"
    grid: tuple | None = None
    fake_updates_per_generator_update: int = 5
    batch_size: int = 256
    lr_fake: float = 1e-3
    lr_generator: float = 1e-4
    betas: tuple = (0.0, 0.999)
    weight_decay: float = 0.0
    updates_per_phase: int | tuple = 400
    teacher_kind: str = "learned"
    grad_normalization: str = "none"
    generator_kind: str = "velocity"
    fixed_t: float | None = None
    time_dist: str = "uniform"
    time_margin: float = DEFAULT_TIME_MARGIN
    clamp_cap: float = DEFAULT_CLAMP_CAP
    surrogate_mse: bool = False
    snapshot_every: int = 100
    snapshot_samples: int = 2000
    dtype: str = "float64"
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.teacher_kind not in TEACHER_KINDS:
            raise ValueError(f"teacher_kind must be one of {TEACHER_KINDS}")
        if self.grad_normalization not in GRAD_NORMALIZATIONS:
            raise ValueError(f"grad_normalization must be one of {GRAD_NORMALIZATIONS}")
        if self.fake_updates_per_generator_update < 1:
            raise ValueError("fake_updates_per_generator_update must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def phased(self):
        return self.method in ("phased", "phased_sgts")

    @property
    def sgts(self):
        return self.method in ("dmd_sgts", "phased_sgts")

    @property
    def plan(self):
        n_phases = self.n_phases if self.phased else 1
        return PhasePlan.build(self.n_steps, n_phases, self.interval_mode, self.grid)

    def updates_for_phase(self, k):
        u = self.updates_per_phase
        return int(u[k - 1]) if isinstance(u, (tuple, list)) else int(u)

    def to_dict(self):
        return asdict(self)


class AnalyticTeacher:
    """Closed-form mixture velocity presented with the network call signature."""

    prediction_kind = "velocity"

    def __init__(self, prior, schedule):
        self.prior = prior
        self.schedule = schedule

    def __call__(self, x, t):
        return analytic_velocity(self.prior, self.schedule, x, t)


def phase_rngs(seed, k):
    """Independent generator streams for phase k: noise, times, bridge noise, SGTS draws."""
    noise, times, bridge, sgts = np.random.SeedSequence([int(seed), int(k)]).spawn(4)
    return {
        "noise": np.random.default_rng(noise),
        "times": np.random.default_rng(times),
        "bridge": np.random.default_rng(bridge),
        "sgts": np.random.default_rng(sgts),
    }


@dataclass
class PhaseState:
    k: int
    plan: PhasePlan
    experts: list
    fake: TimeConditionedNet
    teacher: object
    schedule: object
    fake_opt: AdamState
    gen_opt: AdamState
    rngs: dict
    data_dim: int
    fake_steps: int = 0
    generator_steps: int = 0
    fake_losses: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    truncations: dict = field(default_factory=dict)
    noise_time_range: list = field(default_factory=lambda: [np.inf, -np.inf])

    @property
    def expert(self):
        return self.experts[self.k - 1]

    def summary(self):
        return {
            "phase": self.k,
            "fake_steps": self.fake_steps,
            "generator_steps": self.generator_steps,
            "last_fake_loss": self.fake_losses[-1] if self.fake_losses else None,
            "last_grad_norm": self.grad_norms[-1] if self.grad_norms else None,
        }


def _route(state, cfg):
    """(index of the last executed step, time that step lands on)."""
    plan = state.plan
    if cfg.phased:
        steps = plan.phase(state.k).steps
        boundary = plan.boundary_time(state.k)
        if cfg.sgts:
            m = int(state.rngs["sgts"].integers(1, len(steps) + 1))
            state.truncations[m] = state.truncations.get(m, 0) + 1
            return steps[0] + m - 1, boundary
        return steps[-1], boundary
    if cfg.sgts:
        j = sgts_truncate(plan, state.rngs["sgts"])
        state.truncations[j] = state.truncations.get(j, 0) + 1
        return j - 1, 0.0
    return plan.n_steps - 1, 0.0


def _rollout(state, cfg, eps, record):
    """Run the generator pipeline to the boundary.

    Returns (x_s, s, tape); the tape holds (net, x_in, t, a, b, cache) for each
    step that records gradients, in execution order.
    """
    last, s = _route(state, cfg)
    grid = state.plan.grid
    if record:
        first_recorded = 0 if cfg.method == "dmd" else last
    else:
        first_recorded = last + 1
    x = eps
    tape = []
    for i in range(last + 1):
        net = state.experts[state.plan.phase_of_step(i).expert_id]
        t = grid[i]
        t_next = s if i == last else grid[i + 1]
        a, b = step_coeffs(state.schedule, t, t_next, net.prediction_kind)
        tt = np.full(x.shape[0], t)
        if i >= first_recorded:
            pred, cache = net.forward_cached(x, tt)
            tape.append((net, x, tt, a, b, cache))
        else:
            pred = net(x, tt)
        x = a * x + b * np.asarray(pred, dtype=np.float64)
    return x, s, tape


def _noise_times(state, cfg, s, n):
    if cfg.fixed_t is not None:
        if not s < cfg.fixed_t < 1.0:
            raise ValueError(f"fixed_t={cfg.fixed_t} must lie in ({s}, 1)")
        t = np.full(n, float(cfg.fixed_t))
    else:
        lo = s
        hi = 1.0
        if cfg.phased and state.plan.interval_mode == "disjoint":
            hi = state.plan.phase(state.k).noise_interval[1]
        t = sample_times(state.rngs["times"], n, lo, hi, cfg.time_margin, cfg.time_dist)
    r = state.noise_time_range
    r[0] = min(r[0], float(t.min()))
    r[1] = max(r[1], float(t.max()))
    return t


def _diverged(state, what):
    raise TrainingDiverged(f"non-finite {what} in phase {state.k}", state.summary())


def fake_update(state, cfg):
    """One regression step of the fake model on freshly generated boundary samples."""
    n, d = cfg.batch_size, state.data_dim
    eps = state.rngs["noise"].standard_normal((n, d))
    xs, s, _ = _rollout(state, cfg, eps, record=False)
    t = _noise_times(state, cfg, s, n)
    noise = state.rngs["bridge"].standard_normal((n, d))
    x_t = state.schedule.diffuse_from(xs, noise, s, t)
    if s == 0.0:
        target = flow_target(xs, noise)
    else:
        target = subinterval_flow_target(state.schedule, xs, noise, s, t, cfg.clamp_cap)
    psi, cache = state.fake.forward_cached(x_t, t)
    loss, dpsi = target.loss_and_grad(np.asarray(psi, dtype=np.float64))
    if not np.isfinite(loss):
        _diverged(state, "fake loss")
    grads, _ = state.fake.backward(x_t, t, dpsi, cache)
    adam_step(state.fake_opt, state.fake.params, grads)
    state.fake_steps += 1
    state.fake_losses.append(loss)
    return loss


def pseudo_gradient(state, cfg, x_t, s, t):
    """w_{t|s} * (T(x_t) - F(x_t)): the gradient of the reverse KL with respect to x_s."""
    teacher = np.asarray(state.teacher(x_t, t), dtype=np.float64)
    fake = np.asarray(state.fake(x_t, t), dtype=np.float64)
    w = np.asarray(dmd_weight(state.schedule, s, t, cfg.clamp_cap).w).reshape(-1, 1)
    g = w * (teacher - fake)
    if cfg.grad_normalization == "per_sample_mean_abs":
        g = g / (np.mean(np.abs(g), axis=1, keepdims=True) + NORMALIZATION_EPS)
    return g


def generator_update(state, cfg):
    """One pseudo-gradient step on the trainable expert; returns the parameter gradient norm."""
    n, d = cfg.batch_size, state.data_dim
    eps = state.rngs["noise"].standard_normal((n, d))
    xs, s, tape = _rollout(state, cfg, eps, record=True)
    t = _noise_times(state, cfg, s, n)
    noise = state.rngs["bridge"].standard_normal((n, d))
    x_t = state.schedule.diffuse_from(xs, noise, s, t)
    g = pseudo_gradient(state, cfg, x_t, s, t)
    if not np.all(np.isfinite(g)):
        _diverged(state, "pseudo-gradient")
    if cfg.surrogate_mse:
        # 0.5 * |x_s - stopgrad(x_s - g)|^2 has gradient g with respect to x_s
        cot = (xs - (xs - g)) / n
    else:
        cot = g / n

    trainable = state.expert
    total = [np.zeros_like(p) for p in trainable.params]
    for net, x_in, tt, a, b, cache in reversed(tape):
        grads, dx = net.backward(x_in, tt, b * cot, cache)
        if net is trainable:
            for acc, gr in zip(total, grads):
                acc += gr
        cot = a * cot + dx
    adam_step(state.gen_opt, trainable.params, total)
    state.generator_steps += 1
    norm = float(np.sqrt(sum(np.sum(np.square(gr, dtype=np.float64)) for gr in total)))
    state.grad_norms.append(norm)
    return norm


def generate(experts, plan, schedule, eps, upto_phase=None):
    """Sample with the distilled experts, stopping at the end of ``upto_phase`` if given."""
    stop = None if upto_phase is None else plan.phase(upto_phase).steps[-1] + 1
    return pipeline(schedule, experts, plan, np.asarray(eps, dtype=np.float64), stop_at_step=stop)


def true_marginal(prior, schedule, t, n, rng):
    x0 = prior.sample(n, rng)
    if t == 0.0:
        return x0
    return schedule.diffuse(x0, rng.standard_normal(x0.shape), t)


@dataclass
class PhaseReport:
    phase: int
    boundary_time: float
    fake_updates: int
    generator_updates: int
    fake_losses: list
    grad_norms: list
    snapshots: list
    truncation_histogram: dict
    noise_time_range: list

    def to_dict(self):
        out = asdict(self)
        out["truncation_histogram"] = {str(k): v for k, v in sorted(self.truncation_histogram.items())}
        return out


def _snapshot(state, cfg, prior, iteration):
    rng = np.random.default_rng([int(cfg.seed), state.k, 7919, iteration])
    n = cfg.snapshot_samples
    eps = rng.standard_normal((n, state.data_dim))
    boundary = state.plan.boundary_time(state.k)
    x = generate(state.experts, state.plan, state.schedule, eps, upto_phase=state.k)
    ref = true_marginal(prior, state.schedule, boundary, n, rng)
    return {"iteration": iteration, "boundary_w1": distance(x, ref)}


def run_phase(state, cfg, n_updates, prior=None):
    """Alternate fake updates with generator updates for ``n_updates`` rounds."""
    snapshots = []
    for it in range(1, n_updates + 1):
        for _ in range(cfg.fake_updates_per_generator_update):
            fake_update(state, cfg)
        generator_update(state, cfg)
        if prior is not None and cfg.snapshot_every and it % cfg.snapshot_every == 0:
            snapshots.append(_snapshot(state, cfg, prior, it))
    return PhaseReport(
        phase=state.k,
        boundary_time=float(state.plan.boundary_time(state.k)),
        fake_updates=state.fake_steps,
        generator_updates=state.generator_steps,
        fake_losses=list(state.fake_losses),
        grad_norms=list(state.grad_norms),
        snapshots=snapshots,
        truncation_histogram=dict(state.truncations),
        noise_time_range=[float(v) for v in state.noise_time_range] if state.generator_steps else [],
    )


def _dtype(cfg):
    return np.dtype(cfg.dtype)


def init_expert(teacher_net, cfg, k):
    """Velocity experts start from the teacher; sample-prediction experts start random."""
    if cfg.generator_kind == "velocity":
        return teacher_net.astype(_dtype(cfg))
    if cfg.generator_kind != "sample":
        raise ValueError(f"unknown generator_kind {cfg.generator_kind!r}")
    hidden = teacher_net.dims[1]
    return TimeConditionedNet.create(
        data_dim=teacher_net.data_dim, hidden=hidden, depth=len(teacher_net.dims) - 2,
        n_time_features=teacher_net.n_time_features, prediction_kind="sample",
        rng=np.random.SeedSequence([int(cfg.seed), k, 31]), dtype=_dtype(cfg),
    )


def expert_path(ckpt_dir, k):
    return os.path.join(ckpt_dir, f"expert_{k}.pdmd")


def fake_path(ckpt_dir, k):
    return os.path.join(ckpt_dir, f"fake_{k}.pdmd")


@dataclass
class RunResult:
    cfg: TrainerConfig
    plan: PhasePlan
    experts: list
    fakes: list
    reports: list


def new_phase_state(k, cfg, plan, experts, teacher_net, prior, schedule):
    dt = _dtype(cfg)
    fake = teacher_net.astype(dt)
    teacher = teacher_net.astype(dt) if cfg.teacher_kind == "learned" else AnalyticTeacher(prior, schedule)
    opt = dict(betas=tuple(cfg.betas), weight_decay=cfg.weight_decay)
    return PhaseState(
        k=k, plan=plan, experts=experts, fake=fake, teacher=teacher, schedule=schedule,
        fake_opt=AdamState.for_params(fake.params, lr=cfg.lr_fake, **opt),
        gen_opt=AdamState.for_params(experts[k - 1].params, lr=cfg.lr_generator, **opt),
        rngs=phase_rngs(cfg.seed, k), data_dim=teacher_net.data_dim,
    )


def run_phased_dmd(cfg, teacher_net, prior, schedule, ckpt_dir=None, start_phase=1, end_phase=None):
    """Train phases ``start_phase..end_phase`` in order.

    Phases before ``start_phase`` are loaded from ``ckpt_dir`` and frozen. The
    fake model is reset to the teacher at the start of every phase.
    """
    plan = cfg.plan
    end_phase = plan.n_phases if end_phase is None else end_phase
    if not 1 <= start_phase <= end_phase <= plan.n_phases:
        raise ValueError(f"phase range {start_phase}..{end_phase} outside 1..{plan.n_phases}")
    experts = []
    for k in range(1, start_phase):
        path = None if ckpt_dir is None else expert_path(ckpt_dir, k)
        if path is None or not os.path.exists(path):
            raise FileNotFoundError(f"cannot resume at phase {start_phase}: missing checkpoint for phase {k} ({path})")
        experts.append(load_checkpoint(path).astype(_dtype(cfg)))
    fakes, reports = [], []
    for k in range(start_phase, end_phase + 1):
        experts.append(init_expert(teacher_net, cfg, k))
        state = new_phase_state(k, cfg, plan, experts, teacher_net, prior, schedule)
        reports.append(run_phase(state, cfg, cfg.updates_for_phase(k), prior))
        fakes.append(state.fake)
        if ckpt_dir is not None:
            os.makedirs(ckpt_dir, exist_ok=True)
            save_checkpoint(state.expert, expert_path(ckpt_dir, k))
            save_checkpoint(state.fake, fake_path(ckpt_dir, k))
    return RunResult(cfg, plan, experts, fakes, reports)


def baseline_config(cfg, method):
    """Single-expert variant of ``cfg`` with the same total generator-update budget."""
    if method not in ("dmd", "dmd_sgts"):
        raise ValueError(f"baseline method must be dmd or dmd_sgts, got {method!r}")
    plan = cfg.plan
    budget = sum(cfg.updates_for_phase(k) for k in range(1, plan.n_phases + 1))
    fields_ = cfg.to_dict()
    fields_.update(method=method, n_phases=1, updates_per_phase=budget)
    return TrainerConfig(**fields_)


def run_baselines(cfg, teacher_net, prior, schedule, methods=("dmd", "dmd_sgts"), ckpt_root=None):
    """Vanilla DMD and DMD+SGTS with the budget of ``cfg``."""
    out = {}
    for m in methods:
        sub = None if ckpt_root is None else os.path.join(ckpt_root, m)
        out[m] = run_phased_dmd(baseline_config(cfg, m), teacher_net, prior, schedule, sub)
    return out


def evaluate(result, prior, schedule, n=10_000, seed=0):
    """Distribution reports at every phase boundary from one shared noise batch."""
    rng = np.random.default_rng([int(seed), 104729])
    eps = rng.standard_normal((n, prior.dim))
    plan = result.plan
    out = {}
    for k in range(1, len(result.experts) + 1):
        x = generate(result.experts, plan, schedule, eps, upto_phase=k)
        t_k = plan.boundary_time(k)
        if t_k == 0.0:
            rep = distribution_report(x, prior).to_dict()
        else:
            ref = true_marginal(prior, schedule, t_k, n, np.random.default_rng([int(seed), k, 15485863]))
            rep = {"w1_to_marginal": distance(x, ref), "n_samples": n}
        out[f"t={t_k:g}"] = rep
    return out


# -- teacher pretraining ----------------------------------------------------


@dataclass
class TeacherConfig:
    hidden: int = 256
    depth: int = 3
    n_time_features: int = 16
    steps: int = 20_000
    batch_size: int = 256
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    cosine_decay: bool = True
    time_margin: float = DEFAULT_TIME_MARGIN
    dtype: str = "float32"
    gate_tol: float = 1e-3
    gate_t_range: tuple = (0.05, 0.95)
    gate_n_t: int = 19
    gate_n_x: int = 64
    seed: int = 0

    def to_dict(self):
        return asdict(self)


def marginal_quantiles(prior, schedule, t, levels):
    """Quantiles of the 1D marginal p_t at the given levels (bisection on the mixture CDF)."""
    if prior.dim != 1:
        raise ValueError("marginal quantiles need a 1D prior")
    alpha, sigma = schedule.coeffs(t)
    means = alpha * prior.atoms[:, 0]
    sds = np.sqrt(sigma ** 2 + (alpha * prior.widths) ** 2)
    if np.any(sds == 0):
        raise ValueError("marginal is discrete at this time")

    def cdf(x):
        return float(np.sum(prior.probs * ndtr((x - means) / sds)))

    lo = means.min() - 12 * sds.max()
    hi = means.max() + 12 * sds.max()
    return np.array([brentq(lambda x: cdf(x) - q, lo, hi, xtol=1e-12) for q in levels])


def evaluation_grid(prior, schedule, t_range=(0.05, 0.95), n_t=19, n_x=64, seed=0):
    """(x, t) pairs: n_t times, each with n_x points spread over the marginal's mass."""
    ts = np.linspace(t_range[0], t_range[1], n_t)
    if prior.dim == 1:
        levels = (np.arange(n_x) + 0.5) / n_x
        xs = [marginal_quantiles(prior, schedule, t, levels)[:, None] for t in ts]
    else:
        rng = np.random.default_rng(seed)
        xs = [true_marginal(prior, schedule, t, n_x, rng) for t in ts]
    x = np.concatenate(xs)
    t = np.repeat(ts, n_x)
    return x, t


@dataclass
class GateReport:
    mse: float
    tol: float
    passed: bool
    x: np.ndarray
    t: np.ndarray
    deviation: np.ndarray

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("t," + ",".join(f"x{j}" for j in range(self.x.shape[1])) + ",sq_dev\n")
            for ti, xi, di in zip(self.t, self.x, self.deviation):
                fh.write(",".join([repr(float(ti))] + [repr(float(v)) for v in xi] + [repr(float(di))]) + "\n")


def teacher_gate(net, prior, schedule, tcfg):
    x, t = evaluation_grid(prior, schedule, tcfg.gate_t_range, tcfg.gate_n_t, tcfg.gate_n_x, tcfg.seed)
    dev = np.sum((np.asarray(net(x, t), dtype=np.float64) - analytic_velocity(prior, schedule, x, t)) ** 2, axis=1)
    mse = float(dev.mean())
    return GateReport(mse, tcfg.gate_tol, bool(mse <= tcfg.gate_tol), x, t, dev)


def _new_flow_net(prior, tcfg, salt):
    init_ss = np.random.SeedSequence([int(tcfg.seed), salt, 0])
    return TimeConditionedNet.create(
        data_dim=prior.dim, hidden=tcfg.hidden, depth=tcfg.depth,
        n_time_features=tcfg.n_time_features, rng=np.random.default_rng(init_ss),
        dtype=np.dtype(tcfg.dtype),
    )


def _train_flow(net, tcfg, rng, make_batch, log_every=0, log=print):
    """Generic regression loop: ``make_batch(rng)`` returns (x_t, t, RegressionTarget)."""
    opt = AdamState.for_params(net.params, lr=tcfg.lr, betas=tuple(tcfg.betas))
    for step in range(tcfg.steps):
        if tcfg.cosine_decay:
            opt.lr = tcfg.lr * 0.5 * (1.0 + np.cos(np.pi * step / tcfg.steps))
        x_t, t, target = make_batch(rng)
        psi, cache = net.forward_cached(x_t, t)
        loss, dpsi = target.loss_and_grad(np.asarray(psi, dtype=np.float64))
        if not np.isfinite(loss):
            raise TrainingDiverged("non-finite flow-matching loss", {"step": step})
        grads, _ = net.backward(x_t, t, dpsi, cache)
        adam_step(opt, net.params, grads)
        if log_every and (step + 1) % log_every == 0:
            log(f"step {step + 1}/{tcfg.steps} loss {loss:.5f}")
    return net.astype(np.float64)


def pretrain_teacher(prior, schedule, tcfg, log_every=0, log=print):
    """Flow-matching training on prior draws; returns (float64 net, GateReport)."""
    net = _new_flow_net(prior, tcfg, 2718)

    def batch(rng):
        x0 = prior.sample(tcfg.batch_size, rng)
        eps = rng.standard_normal(x0.shape)
        t = sample_times(rng, tcfg.batch_size, 0.0, 1.0, tcfg.time_margin)
        return schedule.diffuse(x0, eps, t), t, flow_target(x0, eps)

    rng = np.random.default_rng([int(tcfg.seed), 2718, 1])
    net = _train_flow(net, tcfg, rng, batch, log_every, log)
    return net, teacher_gate(net, prior, schedule, tcfg)


SUBINTERVAL_TARGETS = ("correct", "biased")


def train_subinterval_flow(prior, schedule, tcfg, s=0.5, target="correct", clamp_cap=DEFAULT_CLAMP_CAP,
                           log_every=0, log=print):
    """Flow model for t in (s, 1) that only ever sees x_s = diffuse(x0, eps, s).

    ``target="correct"`` regresses onto the unbiased subinterval target;
    ``"biased"`` uses eps - x_s as if x_s were clean data.
    """
    if target not in SUBINTERVAL_TARGETS:
        raise ValueError(f"target must be one of {SUBINTERVAL_TARGETS}")
    net = _new_flow_net(prior, tcfg, 3141 if target == "correct" else 1618)

    def batch(rng):
        x0 = prior.sample(tcfg.batch_size, rng)
        xs = schedule.diffuse(x0, rng.standard_normal(x0.shape), s)
        eps = rng.standard_normal(x0.shape)
        t = sample_times(rng, tcfg.batch_size, s, 1.0, tcfg.time_margin)
        x_t = schedule.diffuse_from(xs, eps, s, t)
        if target == "correct":
            return x_t, t, subinterval_flow_target(schedule, xs, eps, s, t, clamp_cap)
        return x_t, t, flow_target(xs, eps)

    rng = np.random.default_rng([int(tcfg.seed), 577, SUBINTERVAL_TARGETS.index(target)])
    return _train_flow(net, tcfg, rng, batch, log_every, log)
