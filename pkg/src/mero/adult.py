"""Adult census data: parsing, one-hot encoding and race x sex groups.

The encoding map lives in ``data/adult_encoding.json``. Eight categorical
attributes are one-hot encoded (98 columns), four numeric attributes are
min-max scaled (4 columns) and a constant intercept is appended, giving
103 features. ``fnlwgt`` and ``education-num`` are not used.
"""

import csv
import hashlib
import json
import logging
import os
import struct
import warnings
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import SchemaError
from .problems import EmpiricalDistribution, LogisticLoss, Task, stream_rng

log = logging.getLogger(__name__)

RAW_FILES = ("adult.data", "adult.test")
CACHE_NAME = "adult.groups"
CACHE_MAGIC = b"MEROADLT"
CACHE_VERSION = 1


def load_encoding():
    text = resources.files("mero").joinpath("data/adult_encoding.json").read_text("utf-8")
    return json.loads(text)


@dataclass(frozen=True)
class AdultConfig:
    """Where the raw data lives and how it is split.

    ``path`` is either a directory holding ``adult.data`` / ``adult.test``
    or a single comma-separated file in the standard column order.
    """

    path: str
    holdout_per_group: int = 364
    once_each: bool = False
    seed: int = 0
    strict: bool = False
    cache_dir: str = None

    def __post_init__(self):
        if self.holdout_per_group < 0:
            raise ValueError("holdout_per_group must be >= 0")


@dataclass
class GroupedDataset:
    """Encoded training and holdout rows for the six demographic groups."""

    groups: list
    holdout: list
    feature_dim: int
    group_names: list
    rows_parsed: int = 0
    rows_missing: int = 0
    rows_malformed: int = 0
    source_sha256: str = ""
    seed: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def group_sizes(self):
        return [len(y) for _, y in self.groups]

    @property
    def holdout_sizes(self):
        return [len(y) for _, y in self.holdout]


def _raw_paths(path):
    if os.path.isdir(path):
        found = [os.path.join(path, f) for f in RAW_FILES if os.path.exists(os.path.join(path, f))]
        if not found:
            raise OSError(f"no {' or '.join(RAW_FILES)} under {path}")
        return found
    if not os.path.exists(path):
        raise OSError(f"{path}: no such file")
    return [path]


def _sha256(paths):
    h = hashlib.sha256()
    for p in paths:
        with open(p, "rb") as fh:
            h.update(fh.read())
    return h.hexdigest()


def _iter_rows(paths):
    for p in paths:
        with open(p, newline="", encoding="utf-8") as fh:
            for row in csv.reader(fh):
                if not row or (len(row) == 1 and (not row[0].strip() or row[0].startswith("|"))):
                    continue
                yield [c.strip() for c in row]


class _Encoder:
    def __init__(self, enc):
        self.enc = enc
        self.cols = {c: k for k, c in enumerate(enc["columns"])}
        self.offsets = {}
        k = 0
        for name, cats in enc["categorical"].items():
            self.offsets[name] = (k, {c: j for j, c in enumerate(cats)})
            k += len(cats)
        self.numeric_at = k
        k += len(enc["numeric"])
        self.dim = k + (1 if enc["intercept"] else 0)
        self.pos = set(enc["positive_labels"])
        self.neg = set(enc["negative_labels"])

    def encode(self, row, unknown):
        """Feature vector and label, or None if the row cannot be encoded."""
        x = np.zeros(self.dim, dtype=np.float32)
        for name, (off, index) in self.offsets.items():
            v = row[self.cols[name]]
            j = index.get(v)
            if j is None:
                unknown.setdefault(name, set()).add(v)
                return None
            x[off + j] = 1.0
        for k, (name, (lo, hi)) in enumerate(self.enc["numeric"].items()):
            try:
                v = float(row[self.cols[name]])
            except ValueError:
                return None
            x[self.numeric_at + k] = min(max((v - lo) / (hi - lo), 0.0), 1.0)
        if self.enc["intercept"]:
            x[-1] = 1.0
        lab = row[self.cols["income"]]
        if lab in self.pos:
            return x, 1
        if lab in self.neg:
            return x, -1
        return None


def _group_of(row, cols):
    race = row[cols["race"]]
    race = race if race in ("White", "Black") else "Others"
    return race, row[cols["sex"]]


def _inventory_diff(enc, seen):
    lines = []
    for name, cats in enc["categorical"].items():
        have = seen.get(name, set())
        extra = sorted(have - set(cats))
        missing = sorted(set(cats) - have)
        if extra:
            lines.append(f"+ {name}: {', '.join(extra)}")
        if missing:
            lines.append(f"- {name}: {', '.join(missing)}")
    return "\n".join(lines)


def _parse(paths, enc):
    coder = _Encoder(enc)
    if coder.dim != enc["feature_dim"]:
        raise SchemaError(f"encoding map yields {coder.dim} features, expected {enc['feature_dim']}",
                          diff=f"map dimension {coder.dim} != {enc['feature_dim']}")
    names = [tuple(g) for g in enc["groups"]]
    buckets = {g: ([], []) for g in names}
    parsed = missing = malformed = 0
    unknown, seen = {}, {}
    n_cols = len(enc["columns"])
    for row in _iter_rows(paths):
        parsed += 1
        if len(row) != n_cols:
            malformed += 1
            continue
        if "?" in row:
            missing += 1
            continue
        for name in enc["categorical"]:
            seen.setdefault(name, set()).add(row[coder.cols[name]])
        out = coder.encode(row, unknown)
        if out is None:
            malformed += 1
            continue
        xs, ys = buckets[_group_of(row, coder.cols)]
        xs.append(out[0])
        ys.append(out[1])
    return coder.dim, names, buckets, parsed, missing, malformed, unknown, seen


def _split(buckets, names, dim, holdout_per_group, seed):
    groups, holdout = [], []
    for k, g in enumerate(names):
        xs, ys = buckets[g]
        x = np.array(xs, dtype=np.float32).reshape(-1, dim)
        y = np.array(ys, dtype=np.int8)
        perm = np.random.default_rng([seed, 7, k]).permutation(len(y))
        h = min(holdout_per_group, len(y))
        holdout.append((x[perm[:h]], y[perm[:h]]))
        groups.append((x[perm[h:]], y[perm[h:]]))
    return groups, holdout


def load_and_encode(config, encoding=None):
    """Parse, encode, group and split the raw Adult data.

    Rows containing ``?`` are dropped and counted. Rows with the wrong
    number of fields or an uncoded category are counted as malformed; with
    ``config.strict`` an uncoded category or a category missing from the
    data raises :class:`SchemaError` carrying the inventory diff.
    """
    enc = encoding or load_encoding()
    paths = _raw_paths(config.path)
    digest = _sha256(paths)
    cache = os.path.join(config.cache_dir, CACHE_NAME) if config.cache_dir else None
    if cache and os.path.exists(cache):
        ds = read_cache(cache)
        if (ds is not None and ds.source_sha256 == digest and ds.seed == config.seed
                and ds.extra.get("holdout_per_group") == config.holdout_per_group):
            return ds
        log.info("cache %s is stale; rebuilding", cache)

    dim, names, buckets, parsed, missing, malformed, unknown, seen = _parse(paths, enc)
    if config.strict:
        diff = _inventory_diff(enc, seen)
        if diff:
            raise SchemaError("category inventory differs from the encoding map", diff=diff)
    if unknown:
        log.warning("skipped rows with uncoded categories: %s",
                    {k: sorted(v) for k, v in unknown.items()})
    if missing:
        log.info("dropped %d rows with missing fields", missing)
    if parsed == 0:
        warnings.warn(f"no rows found in {', '.join(paths)}")
    groups, holdout = _split(buckets, names, dim, config.holdout_per_group, config.seed)
    ds = GroupedDataset(groups, holdout, dim, ["-".join(g) for g in names], parsed, missing,
                        malformed, digest, config.seed,
                        {"holdout_per_group": config.holdout_per_group})
    if cache:
        os.makedirs(config.cache_dir, exist_ok=True)
        write_cache(cache, ds)
    return ds


# -- binary cache ------------------------------------------------------------

_HEAD = struct.Struct("<8sI32sIIQIIII")


def write_cache(path, ds):
    """Little-endian header, then per group float32 rows and int8 labels (train, holdout)."""
    m = len(ds.groups)
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(CACHE_MAGIC, CACHE_VERSION, bytes.fromhex(ds.source_sha256),
                            ds.feature_dim, m, ds.seed, ds.extra.get("holdout_per_group", 0),
                            ds.rows_parsed, ds.rows_missing, ds.rows_malformed))
        fh.write(struct.pack(f"<{2 * m}I", *ds.group_sizes, *ds.holdout_sizes))
        for part in (ds.groups, ds.holdout):
            for x, y in part:
                fh.write(np.ascontiguousarray(x, dtype="<f4").tobytes())
                fh.write(np.ascontiguousarray(y, dtype="i1").tobytes())


def read_cache(path):
    """Load a cache file; returns None when the magic or version does not match."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEAD.size:
        return None
    magic, ver, sha, dim, m, seed, hold, parsed, missing, malformed = _HEAD.unpack_from(raw)
    if magic != CACHE_MAGIC or ver != CACHE_VERSION:
        return None
    pos = _HEAD.size
    sizes = struct.unpack_from(f"<{2 * m}I", raw, pos)
    pos += 8 * m
    parts = []
    for n in sizes:
        x = np.frombuffer(raw, dtype="<f4", count=n * dim, offset=pos).reshape(n, dim)
        pos += 4 * n * dim
        y = np.frombuffer(raw, dtype="i1", count=n, offset=pos)
        pos += n
        parts.append((x.copy(), y.copy()))
    names = ["-".join(g) for g in load_encoding()["groups"]][:m]
    return GroupedDataset(parts[:m], parts[m:], dim, names, parsed, missing, malformed,
                          sha.hex(), seed, {"holdout_per_group": hold})


# -- oracles and tasks -------------------------------------------------------


def _as_float(x, y):
    return np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)


def group_oracle(dataset, index, mode="with_replacement", seed=0, purpose="main"):
    """Sampling oracle over the training rows of one group."""
    x, y = dataset.groups[index]
    if len(y) == 0:
        raise ValueError(f"group {index} is empty")
    dist = EmpiricalDistribution(*_as_float(x, y), mode=mode)
    return dist.oracle(stream_rng(seed, index, purpose), index=index)


def adult_task(dataset, once_each=False, seed=0, loss=None):
    """Task over the six groups; the holdouts become the evaluation sets."""
    mode = "once_each" if once_each else "with_replacement"
    dists = [EmpiricalDistribution(*_as_float(x, y), mode=mode) for x, y in dataset.groups]
    budgets = dataset.group_sizes if once_each else None
    evals = [_as_float(x, y) for x, y in dataset.holdout]
    if any(len(y) == 0 for _, y in evals):
        evals = None
    return Task(dists, loss or LogisticLoss(), seed, "adult", budgets=budgets, eval_sets=evals)
