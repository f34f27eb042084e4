import json
import os
import time
from concurrent.futures import ProcessPoolExecutor

from .. import __version__
from ..adult import AdultConfig, adult_task, load_and_encode
from ..evaluation import Evaluator, minimal_risks, read_rstar, write_rstar, write_trace
from ..geometry import PrimalGeometry
from ..problems import (
    LogisticLoss,
    SyntheticTaskSpec,
    build_synthetic_task,
    derive_constants,
    finite_support_task,
    read_finite_support,
    scale_loss_to_unit,
)
from ..solvers import (
    every,
    run_anytime_mero,
    run_gdro_smd,
    run_multistage_mero,
    run_reference_mero,
    run_two_stage_weighted_mero,
    run_weighted_gdro,
    weights_from_budgets,
)
from ..solvers.schedules import StepSchedule


def _loss(cfg, dists, radius):
    scale = cfg.constants.get("scale", 1.0)
    if scale == "unit":
        if cfg.task != "finite":
            raise ValueError("scale = unit needs a finite task")
        return scale_loss_to_unit(dists, PrimalGeometry(dists[0].atoms.shape[1], radius))
    return LogisticLoss(scale=scale)


def build_task(cfg, seed):
    """The configured task with sample streams seeded by ``seed``."""
    radius = cfg.constants.get("radius", 5.0)
    args = cfg.task_args
    if cfg.task == "synthetic":
        spec = SyntheticTaskSpec(**args)
        task = build_synthetic_task(spec, LogisticLoss(cfg.constants.get("scale", 1.0)), seed)
    elif cfg.task == "finite":
        dists = [read_finite_support(p) for p in args["paths"]]
        task = finite_support_task(dists, _loss(cfg, dists, radius), seed)
    else:
        ds = load_and_encode(AdultConfig(**args))
        task = adult_task(ds, args["once_each"], seed, LogisticLoss(cfg.constants.get("scale", 1.0)))
    return task, PrimalGeometry(task.dimension, radius)


def resolve_budgets(cfg, task):
    if cfg.budgets == "groups":
        return list(task.budgets)
    return cfg.budgets


def estimate_rstar(cfg, task, geom):
    r = cfg.rstar
    method = r["method"]
    if method == "file":
        est = read_rstar(r["path"])
        if len(est.values) != task.m:
            raise ValueError(f"{r['path']}: {len(est.values)} entries for {task.m} distributions")
        return est
    if method == "erm":
        return minimal_risks(task, geom, "erm_protocol", r["train_n"], r["eval_n"])
    return minimal_risks(task, geom, method)


def _constants(cfg, task, geom, budgets, p):
    kw = {k: cfg.constants[k] for k in ("big_g", "smoothness", "kappa", "c") if k in cfg.constants}
    return derive_constants(geom, task.loss, task, budgets=budgets, weights=p, **kw)


def _checkpoints(cfg, last):
    return every(cfg.checkpoint_every, last) if cfg.checkpoint_every else [last]


def run_algorithm(cfg, algo, task, geom, budgets):
    """Run one algorithm; returns ``(RunResult, ProblemConstants, p)``."""
    if algo in ("mero-weighted", "gdro-weighted"):
        p = weights_from_budgets(budgets)
        const = _constants(cfg, task, geom, budgets, p)
        n_m = min(budgets)
        rounds = n_m // 4 if algo == "mero-weighted" else n_m // 2
        runner = run_two_stage_weighted_mero if algo == "mero-weighted" else run_weighted_gdro
        return runner(task, geom, const, budgets, p, _checkpoints(cfg, rounds)), const, p
    const = _constants(cfg, task, geom, None, None)
    p = None
    T = cfg.iters
    if algo == "mero-anytime":
        res = run_anytime_mero(task, geom, const, T, _checkpoints(cfg, T))
    elif algo == "gdro":
        res = run_gdro_smd(task, geom, const, T, _checkpoints(cfg, T))
    elif algo == "mero-reference":
        res = run_reference_mero(task, geom, const, T, pretrain=cfg.pretrain,
                                 checkpoints=_checkpoints(cfg, T))
    else:
        ms = cfg.multistage
        last = T
        if ms["continue_past_T"]:
            last = ms.get("stage3_iters", 3 * T)
        res = run_multistage_mero(task, geom, const, T, ms["include_stage2"], ms["continue_past_T"],
                                  ms.get("stage3_iters"), _checkpoints(cfg, last))
    return res, const, p


def _step_summary(const, algo, budgets, iters):
    if budgets is not None and algo in ("mero-weighted", "gdro-weighted"):
        s = StepSchedule("fixed", const, budgets=tuple(budgets))
        eta_w, eta_q = s.saddle_steps()
        return {"eta_w": eta_w, "eta_q": eta_q, "eta_risk": [s.risk_step(i=i) for i in range(len(budgets))]}
    s = StepSchedule("anytime", const)
    eta_w, eta_q = s.saddle_steps(1)
    return {"eta_w_at_1": eta_w, "eta_q_at_1": eta_q, "eta_risk_at_1": s.risk_step(1)}


def run_one(cfg, algo, seed, rstar, out_dir, timing=True):
    """Run ``algo`` with ``seed`` and write its trace. Returns a manifest entry."""
    t0 = time.perf_counter()
    task, geom = build_task(cfg, seed)
    budgets = resolve_budgets(cfg, task)
    res, const, p = run_algorithm(cfg, algo, task, geom, budgets)
    p_eval = weights_from_budgets(budgets) if budgets is not None else None
    ev = Evaluator(task, rstar, p_eval, cfg.eval_n)
    run_id = f"{cfg.config_hash[:8]}-{algo}-{seed}"
    recs = [ev.record(run_id, algo, seed, s, None if timing else 0.0) for s in res.snapshots]
    path = os.path.join(out_dir, f"{algo}_seed{seed}.csv")
    write_trace(path, recs)
    entry = {
        "algorithm": algo, "seed": seed, "trace": os.path.basename(path),
        "constants": const.as_dict(), "steps": _step_summary(const, algo, budgets, cfg.iters),
        "samples": [int(s) for s in res.samples],
        "final_mer": recs[-1].mer, "final_mwer": recs[-1].mwer,
        "wall_ms": (time.perf_counter() - t0) * 1e3 if timing else 0.0,
    }
    if p is not None:
        entry["p"] = [float(v) for v in p]
    return entry


def _job(args):
    return run_one(*args)


def cmd_run(cfg, out_dir=None, jobs=1, timing=True):
    out_dir = out_dir or cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.perf_counter()
    task, geom = build_task(cfg, cfg.seeds[0])
    rstar = estimate_rstar(cfg, task, geom)
    work = [(cfg, a, s, rstar, out_dir, timing) for a in cfg.algorithms for s in cfg.seeds]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            entries = list(pool.map(_job, work))
    else:
        entries = [_job(w) for w in work]
    budgets = resolve_budgets(cfg, task)
    manifest = {
        "version": __version__,
        "config_hash": cfg.config_hash,
        "task": cfg.task,
        "seeds": cfg.seeds,
        "algorithms": cfg.algorithms,
        "iters": cfg.iters,
        "budgets": budgets,
        "p": None if budgets is None else [float(v) for v in weights_from_budgets(budgets)],
        "rstar": {"values": [float(v) for v in rstar.values], "se": [float(v) for v in rstar.se],
                  "method": rstar.method, "train_n": rstar.train_n, "eval_n": rstar.eval_n},
        "runs": entries,
        "wall_ms_total": (time.perf_counter() - t0) * 1e3 if timing else 0.0,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest


def cmd_estimate_rstar(cfg, out_dir=None):
    if cfg.rstar["method"] == "file":
        raise ValueError("rstar.method = file cannot be estimated")
    out_dir = out_dir or cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    task, geom = build_task(cfg, cfg.seeds[0])
    est = estimate_rstar(cfg, task, geom)
    path = os.path.join(out_dir, "rstar.csv")
    write_rstar(path, est)
    return path, est
