"""Run configuration: an INI file read into flat dotted keys and validated.

Grammar (``#`` and ``;`` start comments)::

    [run]
    algorithms = mero-anytime, gdro        # one trace per algorithm and seed
    seeds = 0, 1, 2
    iters = 10000                          # anytime algorithms
    budgets = 8000, 2000, 500              # weighted algorithms
    checkpoint_every = 100
    eval_n = 10000
    output_dir = out

    [task]
    kind = synthetic | finite | adult

    [synthetic]   m, dimension, sphere_radius_d, flip_base, flip_probs, instance_seed
    [finite]      paths = a.txt, b.txt     # one finite-support file per distribution
    [adult]       path, holdout_per_group, once_each, split_seed, strict, cache_dir
    [constants]   G, L, c, kappa, radius, scale (a number or "unit")
    [rstar]       method = exact | quadrature | erm | file; train_n, eval_n, path
    [multistage]  include_stage2, continue_past_T, stage3_iters
    [reference]   pretrain
"""

import configparser
import hashlib
import os
from dataclasses import dataclass, field

from ..errors import ConfigError

ANYTIME = ("mero-anytime", "mero-multistage", "gdro", "mero-reference")
WEIGHTED = ("mero-weighted", "gdro-weighted")
ALGORITHMS = ANYTIME + WEIGHTED
TASKS = ("synthetic", "finite", "adult")
RSTAR_METHODS = ("exact", "quadrature", "erm", "file")

KNOWN = {
    "run": {"algorithms", "algorithm", "seeds", "iters", "budgets", "checkpoint_every", "eval_n",
            "output_dir"},
    "task": {"kind"},
    "synthetic": {"m", "dimension", "sphere_radius_d", "flip_base", "flip_probs", "instance_seed"},
    "finite": {"paths"},
    "adult": {"path", "holdout_per_group", "once_each", "split_seed", "strict", "cache_dir"},
    "constants": {"g", "l", "c", "kappa", "radius", "scale"},
    "rstar": {"method", "train_n", "eval_n", "path"},
    "multistage": {"include_stage2", "continue_past_t", "stage3_iters"},
    "reference": {"pretrain"},
}


def read_flat(path):
    """Read ``path`` into ``{"section.key": "value"}`` with lower-cased keys."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        parser.read_string(text, source=path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    flat = {}
    for sec in parser.sections():
        if sec not in KNOWN:
            raise ConfigError("unknown section", sec)
        for key, val in parser.items(sec):
            if key not in KNOWN[sec]:
                raise ConfigError("unknown key", f"{sec}.{key}")
            flat[f"{sec}.{key}"] = val.strip()
    return flat, text


def _int(flat, key, default=None, minimum=None):
    if key not in flat:
        if default is None:
            raise ConfigError("required", key)
        return default
    try:
        v = int(flat[key])
    except ValueError:
        raise ConfigError(f"expected an integer, got {flat[key]!r}", key) from None
    if minimum is not None and v < minimum:
        raise ConfigError(f"must be >= {minimum}", key)
    return v


def _float(flat, key, default=None, positive=False):
    if key not in flat:
        return default
    try:
        v = float(flat[key])
    except ValueError:
        raise ConfigError(f"expected a number, got {flat[key]!r}", key) from None
    if positive and not v > 0:
        raise ConfigError("must be positive", key)
    return v


def _bool(flat, key, default=False):
    if key not in flat:
        return default
    v = flat[key].lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {flat[key]!r}", key)


def _list(flat, key, conv, what):
    if key not in flat:
        return None
    try:
        return [conv(s) for s in flat[key].replace(";", ",").split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"expected a list of {what}", key) from None


@dataclass
class RunConfig:
    algorithms: list
    task: str
    seeds: list
    iters: int = None
    budgets: list = None
    checkpoint_every: int = 0
    eval_n: int = 10_000
    output_dir: str = "out"
    task_args: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)
    rstar: dict = field(default_factory=dict)
    multistage: dict = field(default_factory=dict)
    pretrain: int = None
    config_hash: str = ""
    source: str = ""


def _task_args(flat, kind, base_dir):
    if kind == "synthetic":
        m = _int(flat, "synthetic.m", minimum=1)
        flips = _list(flat, "synthetic.flip_probs", float, "numbers")
        args = {
            "m": m,
            "dimension": _int(flat, "synthetic.dimension", minimum=2),
            "sphere_radius_d": _float(flat, "synthetic.sphere_radius_d", 0.2),
            "flip_base": _float(flat, "synthetic.flip_base", 0.05),
            "flip_probs": tuple(flips) if flips else None,
            "seed": _int(flat, "synthetic.instance_seed", 0, minimum=0),
        }
        from ..problems import SyntheticTaskSpec

        try:
            SyntheticTaskSpec(**args)
        except ValueError as exc:
            raise ConfigError(str(exc), "synthetic") from None
        return args
    if kind == "finite":
        paths = _list(flat, "finite.paths", str, "paths")
        if not paths:
            raise ConfigError("required", "finite.paths")
        return {"paths": [os.path.join(base_dir, p.strip()) for p in paths]}
    path = flat.get("adult.path") or os.environ.get("MERO_ADULT_DIR")
    if not path:
        raise ConfigError("required (or set MERO_ADULT_DIR)", "adult.path")
    cache = flat.get("adult.cache_dir")
    return {
        "path": os.path.join(base_dir, path),
        "holdout_per_group": _int(flat, "adult.holdout_per_group", 364, minimum=0),
        "once_each": _bool(flat, "adult.once_each"),
        "seed": _int(flat, "adult.split_seed", 0, minimum=0),
        "strict": _bool(flat, "adult.strict"),
        "cache_dir": os.path.join(base_dir, cache) if cache else None,
    }


def _constants(flat):
    out = {}
    for key, name in (("g", "big_g"), ("l", "smoothness"), ("c", "c"), ("kappa", "kappa"),
                      ("radius", "radius")):
        v = _float(flat, f"constants.{key}", positive=True)
        if v is not None:
            out[name] = v
    if out.get("kappa", 1.0) < 1:
        raise ConfigError("must be >= 1", "constants.kappa")
    scale = flat.get("constants.scale")
    if scale is not None and scale.lower() != "unit":
        out["scale"] = _float(flat, "constants.scale", positive=True)
    elif scale is not None:
        out["scale"] = "unit"
    return out


def _rstar(flat, kind, base_dir):
    default = {"synthetic": "quadrature", "finite": "exact", "adult": "erm"}[kind]
    method = flat.get("rstar.method", default).lower()
    if method not in RSTAR_METHODS:
        raise ConfigError(f"must be one of {', '.join(RSTAR_METHODS)}", "rstar.method")
    if method == "exact" and kind != "finite":
        raise ConfigError("exact minimal risks need a finite task", "rstar.method")
    if method == "quadrature" and kind != "synthetic":
        raise ConfigError("quadrature minimal risks need a synthetic task", "rstar.method")
    out = {"method": method,
           "train_n": _int(flat, "rstar.train_n", 100_000, minimum=1),
           "eval_n": _int(flat, "rstar.eval_n", 100_000, minimum=1)}
    if method == "file":
        if "rstar.path" not in flat:
            raise ConfigError("required when method = file", "rstar.path")
        out["path"] = os.path.join(base_dir, flat["rstar.path"])
    return out


def load_config(path):
    """Parse and validate a run configuration file."""
    flat, text = read_flat(path)
    base_dir = os.path.dirname(os.path.abspath(path))
    algos = _list(flat, "run.algorithms", str, "names") or _list(flat, "run.algorithm", str, "names")
    if not algos:
        raise ConfigError("required", "run.algorithms")
    algos = [a.strip().lower() for a in algos]
    for a in algos:
        if a not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {a!r}", "run.algorithms")
    kind = flat.get("task.kind", "").lower()
    if kind not in TASKS:
        raise ConfigError(f"must be one of {', '.join(TASKS)}", "task.kind")

    seeds = _list(flat, "run.seeds", int, "integers") or [0]
    if any(s < 0 for s in seeds):
        raise ConfigError("seeds must be non-negative", "run.seeds")
    offset = os.environ.get("MERO_SEED_OFFSET")
    if offset:
        try:
            seeds = [s + int(offset) for s in seeds]
        except ValueError:
            raise ConfigError(f"expected an integer, got {offset!r}", "MERO_SEED_OFFSET") from None

    task_args = _task_args(flat, kind, base_dir)
    need_iters = any(a in ANYTIME for a in algos)
    need_budgets = any(a in WEIGHTED for a in algos)
    iters = _int(flat, "run.iters", minimum=1) if "run.iters" in flat else None
    budgets = _list(flat, "run.budgets", int, "integers")
    if kind == "adult" and task_args["once_each"] and budgets is None and need_budgets:
        budgets = "groups"
    if need_iters and iters is None:
        raise ConfigError("required by the anytime algorithms", "run.iters")
    if iters is not None and not need_iters:
        raise ConfigError("given but only budget-driven algorithms are configured", "run.iters")
    if need_budgets and budgets is None:
        raise ConfigError("required by the weighted algorithms", "run.budgets")
    if budgets is not None and budgets != "groups" and not need_budgets:
        raise ConfigError("given but only iteration-driven algorithms are configured", "run.budgets")
    if isinstance(budgets, list):
        if any(b < 8 for b in budgets):
            raise ConfigError("every budget must be at least 8", "run.budgets")
        if budgets != sorted(budgets, reverse=True):
            raise ConfigError("budgets must be non-increasing", "run.budgets")

    pretrain = None
    if "mero-reference" in algos:
        pretrain = _int(flat, "reference.pretrain", iters or 1, minimum=1)
    ms = {"include_stage2": _bool(flat, "multistage.include_stage2", True),
          "continue_past_T": _bool(flat, "multistage.continue_past_t", False)}
    if "multistage.stage3_iters" in flat:
        ms["stage3_iters"] = _int(flat, "multistage.stage3_iters", minimum=1)

    norm = "\n".join(f"{k}={flat[k]}" for k in sorted(flat))
    return RunConfig(
        algorithms=algos, task=kind, seeds=seeds, iters=iters, budgets=budgets,
        checkpoint_every=_int(flat, "run.checkpoint_every", 0, minimum=0),
        eval_n=_int(flat, "run.eval_n", 10_000, minimum=1),
        output_dir=os.path.join(base_dir, flat.get("run.output_dir", "out")),
        task_args=task_args, constants=_constants(flat), rstar=_rstar(flat, kind, base_dir),
        multistage=ms, pretrain=pretrain,
        config_hash=hashlib.sha256(norm.encode("utf-8")).hexdigest(), source=text,
    )
