"""Command-line experiment runner.

Configuration is a flat ``key = value`` text file (``#`` starts a comment)
with ``--set KEY=VALUE`` overrides applied afterwards; later settings win.
Every command writes a JSON report with sorted keys into ``--out``; wall-clock
information is confined to the report's ``timestamp`` field.
"""

import argparse
import glob
import json
import os
import sys
import time

import numpy as np

from . import distill
from .metrics import distribution_report, trajectory_deviation
from .objectives import ToyPrior
from .sampler import Trajectory, sample_ode
from .schedule import get_schedule
from .svgplot import trajectories_svg
from .toynet import load_checkpoint, save_checkpoint

COMMANDS = ("train-teacher", "toy-fig3", "distill", "ablate", "report")

DEFAULTS = {
    "schedule": "rectified_flow",
    "seed": 0,
    "plot": False,
    "n_eval": 10_000,
    "prior.atoms": "-1 0 1 2",
    "prior.probs": "",
    "prior.widths": "",
    "teacher_ckpt": "",
    "teacher.hidden": 256,
    "teacher.depth": 3,
    "teacher.n_time_features": 16,
    "teacher.steps": 20_000,
    "teacher.batch_size": 256,
    "teacher.lr": 1e-3,
    "teacher.beta1": 0.9,
    "teacher.beta2": 0.999,
    "teacher.cosine_decay": True,
    "teacher.dtype": "float32",
    "teacher.gate_tol": 1e-3,
    "method": "phased",
    "n_steps": 4,
    "n_phases": 2,
    "interval_mode": "reverse_nested",
    "grid": "",
    "fake_updates_per_generator_update": 5,
    "batch_size": 256,
    "lr_fake": 1e-3,
    "lr_generator": 1e-4,
    "beta1": 0.0,
    "beta2": 0.999,
    "weight_decay": 0.0,
    "updates_per_phase": "400",
    "teacher_kind": "learned",
    "grad_normalization": "none",
    "generator_kind": "velocity",
    "fixed_t": "",
    "time_dist": "uniform",
    "time_margin": 1e-3,
    "clamp_cap": 1e4,
    "surrogate_mse": False,
    "snapshot_every": 100,
    "dtype": "float64",
    "resume_phase": 1,
    "fig3.s": 0.5,
    "fig3.n_trajectories": 200,
    "fig3.ode_steps": 100,
    "fig3.max_deviation": 0.05,
    "fig3.min_ratio": 3.0,
    "ablate.fixed_t": "0.357 0.882",
}


class ConfigError(ValueError):
    pass


def _coerce(key, raw):
    default = DEFAULTS[key]
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def _parse_assignment(text, where):
    if "=" not in text:
        raise ConfigError(f"{where}: expected KEY=VALUE, got {text!r}")
    key, value = text.split("=", 1)
    key = key.strip()
    if key not in DEFAULTS:
        raise ConfigError(f"{where}: unknown config key {key!r}")
    return key, _coerce(key, value)


def load_config(path=None, overrides=(), seed=None, out=None):
    """Defaults, then the config file, then ``--set`` overrides, then ``--seed``."""
    cfg = dict(DEFAULTS)
    if path:
        with open(path, encoding="utf-8") as fh:
            for n, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if line:
                    k, v = _parse_assignment(line, f"{path}:{n}")
                    cfg[k] = v
    for item in overrides:
        k, v = _parse_assignment(item, "--set")
        cfg[k] = v
    if seed is not None:
        cfg["seed"] = seed
    if out is not None:
        cfg["out"] = out
    return cfg


def _floats(text):
    return [float(v) for v in text.replace(",", " ").split()]


def prior_from(cfg):
    return ToyPrior.parse(cfg["prior.atoms"], cfg["prior.probs"], cfg["prior.widths"])


def teacher_config(cfg):
    return distill.TeacherConfig(
        hidden=cfg["teacher.hidden"],
        depth=cfg["teacher.depth"],
        n_time_features=cfg["teacher.n_time_features"],
        steps=cfg["teacher.steps"],
        batch_size=cfg["teacher.batch_size"],
        lr=cfg["teacher.lr"],
        betas=(cfg["teacher.beta1"], cfg["teacher.beta2"]),
        cosine_decay=cfg["teacher.cosine_decay"],
        dtype=cfg["teacher.dtype"],
        gate_tol=cfg["teacher.gate_tol"],
        seed=cfg["seed"],
    )


def trainer_config(cfg, **changes):
    updates = [int(v) for v in cfg["updates_per_phase"].replace(",", " ").split()]
    tc = dict(
        method=cfg["method"],
        n_steps=cfg["n_steps"],
        n_phases=cfg["n_phases"],
        interval_mode=cfg["interval_mode"],
        grid=tuple(_floats(cfg["grid"])) or None,
        fake_updates_per_generator_update=cfg["fake_updates_per_generator_update"],
        batch_size=cfg["batch_size"],
        lr_fake=cfg["lr_fake"],
        lr_generator=cfg["lr_generator"],
        betas=(cfg["beta1"], cfg["beta2"]),
        weight_decay=cfg["weight_decay"],
        updates_per_phase=updates[0] if len(updates) == 1 else tuple(updates),
        teacher_kind=cfg["teacher_kind"],
        grad_normalization=cfg["grad_normalization"],
        generator_kind=cfg["generator_kind"],
        fixed_t=float(cfg["fixed_t"]) if cfg["fixed_t"] else None,
        time_dist=cfg["time_dist"],
        time_margin=cfg["time_margin"],
        clamp_cap=cfg["clamp_cap"],
        surrogate_mse=cfg["surrogate_mse"],
        snapshot_every=cfg["snapshot_every"],
        dtype=cfg["dtype"],
        seed=cfg["seed"],
    )
    tc.update(changes)
    return distill.TrainerConfig(**tc)


def _teacher_path(cfg):
    return cfg["teacher_ckpt"] or os.path.join(cfg["out"], "teacher.pdmd")


def _load_teacher(cfg):
    path = _teacher_path(cfg)
    if not os.path.exists(path):
        raise FileNotFoundError(f"teacher checkpoint {path} not found; run train-teacher first")
    return load_checkpoint(path)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def write_report(path, command, cfg, body, started):
    report = {
        "command": command,
        "config": cfg,
        "timestamp": {
            "finished_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "elapsed_s": round(time.time() - started, 3),
        },
        **body,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(report), fh, sort_keys=True, indent=2, ensure_ascii=False)
        fh.write("\n")
    return report


def cmd_train_teacher(cfg, started):
    prior, schedule = prior_from(cfg), get_schedule(cfg["schedule"])
    net, gate = distill.pretrain_teacher(prior, schedule, teacher_config(cfg))
    save_checkpoint(net, _teacher_path(cfg))
    gate.write_csv(os.path.join(cfg["out"], "teacher_gate.csv"))
    write_report(os.path.join(cfg["out"], "teacher_report.json"), "train-teacher", cfg,
                 {"gate": {"mse": gate.mse, "tol": gate.tol, "passed": gate.passed}}, started)
    print(f"teacher gate: mse {gate.mse:.3e} (tol {gate.tol:g}) {'pass' if gate.passed else 'FAIL'}")
    return 0 if gate.passed else 1


def fig3_experiment(prior, schedule, teacher, tcfg, s=0.5, n_traj=200, ode_steps=100, seed=0):
    """Trajectories of the full-interval teacher and of two subinterval models on a shared noise batch."""
    if not 0.0 < s < 1.0:
        raise ValueError("subinterval start must lie in (0, 1)")
    eps = np.random.default_rng([int(seed), 3]).standard_normal((n_traj, prior.dim))
    sub_steps = int(round(ode_steps * (1.0 - s)))
    trajs = {"a_full": sample_ode(schedule, teacher, eps, 1.0, 0.0, ode_steps)}
    for label, kind in (("b_subinterval", "correct"), ("c_biased", "biased")):
        net = distill.train_subinterval_flow(prior, schedule, tcfg, s, kind)
        trajs[label] = sample_ode(schedule, net, eps, 1.0, s, sub_steps)
    window = (s, 1.0)
    dev = {
        "b_vs_a": trajectory_deviation(trajs["b_subinterval"], trajs["a_full"], window),
        "c_vs_a": trajectory_deviation(trajs["c_biased"], trajs["a_full"], window),
    }
    return trajs, dev


def cmd_toy_fig3(cfg, started):
    prior, schedule = prior_from(cfg), get_schedule(cfg["schedule"])
    teacher = _load_teacher(cfg)
    trajs, dev = fig3_experiment(prior, schedule, teacher, teacher_config(cfg), cfg["fig3.s"],
                                 cfg["fig3.n_trajectories"], cfg["fig3.ode_steps"], cfg["seed"])
    for label, tr in trajs.items():
        tr.to_csv(os.path.join(cfg["out"], f"fig3_{label}.csv"))
        if cfg["plot"]:
            trajectories_svg(tr, os.path.join(cfg["out"], f"fig3_{label}.svg"), title=label)
    ok_b = dev["b_vs_a"] <= cfg["fig3.max_deviation"]
    ok_ratio = dev["c_vs_a"] >= cfg["fig3.min_ratio"] * dev["b_vs_a"]
    body = {"deviation": dev, "window": [cfg["fig3.s"], 1.0],
            "gates": {"b_within_max_deviation": ok_b, "c_exceeds_ratio": ok_ratio}}
    write_report(os.path.join(cfg["out"], "fig3_report.json"), "toy-fig3", cfg, body, started)
    print(f"deviation b vs a {dev['b_vs_a']:.4f}, c vs a {dev['c_vs_a']:.4f}")
    return 0 if ok_b and ok_ratio else 1


def _run(tcfg, teacher, prior, schedule, ckpt_dir, start_phase=1):
    if tcfg.phased:
        return distill.run_phased_dmd(tcfg, teacher, prior, schedule, ckpt_dir, start_phase)
    if start_phase != 1:
        raise ValueError("resume_phase applies only to phased methods")
    base = distill.baseline_config(tcfg, tcfg.method)
    return distill.run_phased_dmd(base, teacher, prior, schedule, ckpt_dir)


def _run_body(result, prior, schedule, cfg):
    return {
        "method": result.cfg.method,
        "trainer": result.cfg.to_dict(),
        "phases": [r.to_dict() for r in result.reports],
        "metrics": distill.evaluate(result, prior, schedule, cfg["n_eval"], cfg["seed"]),
    }


def cmd_distill(cfg, started):
    prior, schedule = prior_from(cfg), get_schedule(cfg["schedule"])
    teacher = _load_teacher(cfg)
    tcfg = trainer_config(cfg)
    result = _run(tcfg, teacher, prior, schedule, os.path.join(cfg["out"], "ckpt"), cfg["resume_phase"])
    body = _run_body(result, prior, schedule, cfg)
    write_report(os.path.join(cfg["out"], "distill_report.json"), "distill", cfg, body, started)
    final = body["metrics"]["t=0"]
    print(f"{tcfg.method}: W1 {final['w1']:.4f}, mode masses {np.round(final['mode_masses'], 3).tolist()}")
    return 0


def ablation_variants(cfg):
    fixed = _floats(cfg["ablate.fixed_t"])
    variants = {
        "interval_reverse_nested": trainer_config(cfg, method="phased", interval_mode="reverse_nested"),
        "interval_disjoint": trainer_config(cfg, method="phased", interval_mode="disjoint"),
    }
    for t in fixed:
        variants[f"fixed_t={t:g}"] = distill.baseline_config(trainer_config(cfg, fixed_t=t), "dmd")
    return variants


def run_ablation(cfg, teacher, prior, schedule):
    rows = {}
    for name, tcfg in ablation_variants(cfg).items():
        result = distill.run_phased_dmd(tcfg, teacher, prior, schedule)
        x = distill.generate(result.experts, result.plan, schedule,
                             np.random.default_rng([int(cfg["seed"]), 104729]).standard_normal((cfg["n_eval"], prior.dim)))
        rows[name] = distribution_report(x, prior).to_dict()
    return rows


def ablation_checks(rows, cfg):
    fixed = _floats(cfg["ablate.fixed_t"])
    checks = {}
    if len(fixed) == 2:
        lo, hi = sorted(fixed)
        checks["high_fixed_t_beats_low"] = rows[f"fixed_t={hi:g}"]["w1"] < rows[f"fixed_t={lo:g}"]["w1"]
    checks["reverse_nested_unassigned_le_disjoint"] = (
        rows["interval_reverse_nested"]["unassigned"] <= rows["interval_disjoint"]["unassigned"]
    )
    return checks


def cmd_ablate(cfg, started):
    prior, schedule = prior_from(cfg), get_schedule(cfg["schedule"])
    teacher = _load_teacher(cfg)
    rows = run_ablation(cfg, teacher, prior, schedule)
    checks = ablation_checks(rows, cfg)
    write_report(os.path.join(cfg["out"], "ablate_report.json"), "ablate", cfg,
                 {"variants": rows, "checks": checks}, started)
    print(f"{'variant':28s} {'W1':>8s} {'unassigned':>10s}  mode masses")
    for name, r in rows.items():
        print(f"{name:28s} {r['w1']:8.4f} {r['unassigned']:10.4f}  {np.round(r['mode_masses'], 3).tolist()}")
    for name, ok in checks.items():
        print(f"{name}: {'yes' if ok else 'no'}")
    return 0 if all(checks.values()) else 1


def summarize(out_dir):
    rows = []
    for path in sorted(glob.glob(os.path.join(out_dir, "*_report.json"))):
        with open(path, encoding="utf-8") as fh:
            rep = json.load(fh)
        entry = {"file": os.path.basename(path), "command": rep.get("command")}
        if "gate" in rep:
            entry.update(gate_mse=rep["gate"]["mse"], passed=rep["gate"]["passed"])
        if "deviation" in rep:
            entry.update(rep["deviation"])
        if "metrics" in rep and "t=0" in rep["metrics"]:
            final = rep["metrics"]["t=0"]
            entry.update(w1=final["w1"], min_mode_mass=min(final["mode_masses"]), unassigned=final["unassigned"])
        if "variants" in rep:
            entry["variants"] = {k: {"w1": v["w1"], "unassigned": v["unassigned"]} for k, v in rep["variants"].items()}
        rows.append(entry)
    return rows


def cmd_report(cfg, started):
    rows = summarize(cfg["out"])
    if not rows:
        print(f"no reports found in {cfg['out']}", file=sys.stderr)
        return 1
    write_report(os.path.join(cfg["out"], "summary.json"), "report", cfg, {"reports": rows}, started)
    for row in rows:
        rest = ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
                         for k, v in row.items() if k not in ("file", "command", "variants"))
        print(f"{row['file']}: {rest}")
        for name, v in row.get("variants", {}).items():
            print(f"  {name}: W1 {v['w1']:.4f}, unassigned {v['unassigned']:.4f}")
    return 0


HANDLERS = {
    "train-teacher": cmd_train_teacher,
    "toy-fig3": cmd_toy_fig3,
    "distill": cmd_distill,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def _u64(text):
    value = int(text, 0)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def build_parser():
    parser = argparse.ArgumentParser(prog="pdmd", description="Phased distribution matching distillation toy lab.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", metavar="PATH", help="flat key=value config file")
    parser.add_argument("--seed", type=_u64, metavar="U64")
    parser.add_argument("--out", metavar="DIR", default="pdmd_out")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable, later wins)")
    return parser


def _thread_limit():
    raw = os.environ.get("PDMD_THREADS", "").strip()
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise ConfigError(f"PDMD_THREADS must be a positive integer, got {raw!r}")
    return n


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides, args.seed, args.out)
        threads = _thread_limit()
    except (ConfigError, OSError) as exc:
        print(f"pdmd: {exc}", file=sys.stderr)
        return 2
    os.makedirs(cfg["out"], exist_ok=True)
    started = time.time()
    try:
        if threads is None:
            return HANDLERS[args.command](cfg, started)
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=threads):
            return HANDLERS[args.command](cfg, started)
    except (FileNotFoundError, ValueError, FloatingPointError) as exc:
        print(f"pdmd {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
