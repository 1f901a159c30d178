"""File formats: dataset / ratio / classification CSVs, YAML run config, manifests.

Dataset CSV columns::

    hospital_id,y1,delta1,y2,delta2,x_<name>...

``x_<name>`` columns are shared by all three transitions. Transition-specific
designs use ``x1_<name>``, ``x2_<name>``, ``x3_<name>`` instead. Floats are
written with ``repr`` so a write/read round trip is exact.

Run configs are YAML with a ``schema_version`` field; unknown keys are
rejected. Manifests are JSON without timestamps so that identical runs give
identical bytes.
"""

import csv
import dataclasses
import hashlib
import json
import os
import platform
import re
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import yaml

from .exceptions import ConfigError, DataError
from .mcmc import McmcConfig, Priors
from .model import Dataset, record_problem
from .simulate import CovariateSpec, SimConfig

SCHEMA_VERSION = 1
BASE_COLUMNS = ("hospital_id", "y1", "delta1", "y2", "delta2")


# ---------------------------------------------------------------------------
# dataset CSV


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def _shared_design(dataset: Dataset):
    X, names = dataset.X, dataset.covariate_names
    return all(np.array_equal(X[0], x) for x in X[1:]) and all(names[0] == n for n in names[1:])


def write_dataset_csv(dataset: Dataset, path):
    shared = _shared_design(dataset)
    if shared:
        cov_cols = [f"x_{n}" for n in dataset.covariate_names[0]]
        blocks = [dataset.X[0]]
    else:
        cov_cols = [f"x{g + 1}_{n}" for g in range(3) for n in dataset.covariate_names[g]]
        blocks = list(dataset.X)
    labels = dataset.hospital_labels[dataset.hospital]
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(list(BASE_COLUMNS) + cov_cols)
        for i in range(dataset.n_patients):
            row = [_fmt(labels[i]), _fmt(dataset.y1[i]), int(dataset.delta1[i]),
                   _fmt(dataset.y2[i]), int(dataset.delta2[i])]
            for b in blocks:
                row.extend(_fmt(v) for v in b[i])
            w.writerow(row)


def _parse_labels(raw):
    try:
        return np.array([int(v) for v in raw], dtype=np.int64)
    except ValueError:
        return np.array(raw, dtype=object).astype(str)


def ingest_dataset(path) -> Dataset:
    """Read and validate a dataset CSV; errors name the file line numbers."""
    if not os.path.exists(path):
        raise DataError(f"dataset file not found: {path}")
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    missing = [c for c in BASE_COLUMNS if c not in header]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    shared, per = [], {1: [], 2: [], 3: []}
    for k, h in enumerate(header):
        if h in BASE_COLUMNS:
            continue
        m = re.fullmatch(r"x([123])_(.+)", h)
        if m:
            per[int(m.group(1))].append((k, m.group(2)))
        elif h.startswith("x_"):
            shared.append((k, h[2:]))
        else:
            raise DataError(f"{path}: unrecognized column {h!r}")
    if shared and any(per.values()):
        raise DataError(f"{path}: mix of shared x_ and per-transition x1_/x2_/x3_ columns")
    cols = [(per[g] if not shared else shared) for g in (1, 2, 3)]
    idx = {c: header.index(c) for c in BASE_COLUMNS}
    data = rows[1:]
    errors = []
    y1 = np.zeros(len(data))
    y2 = np.zeros(len(data))
    d1 = np.zeros(len(data), dtype=np.int64)
    d2 = np.zeros(len(data), dtype=np.int64)
    X = [np.zeros((len(data), len(c))) for c in cols]
    hosp = []
    for i, row in enumerate(data):
        line = i + 2
        if len(row) != len(header):
            errors.append(f"line {line}: expected {len(header)} fields, found {len(row)}")
            hosp.append("")
            continue
        try:
            hosp.append(row[idx["hospital_id"]].strip())
            y1[i] = float(row[idx["y1"]])
            y2[i] = float(row[idx["y2"]])
            d1[i] = int(row[idx["delta1"]])
            d2[i] = int(row[idx["delta2"]])
            for g in range(3):
                for k, (col, _) in enumerate(cols[g]):
                    X[g][i, k] = float(row[col])
        except ValueError as exc:
            errors.append(f"line {line}: {exc}")
            continue
        msg = record_problem(y1[i], d1[i], y2[i], d2[i])
        if msg:
            errors.append(f"line {line}: {msg}")
        if not all(np.all(np.isfinite(x[i])) for x in X):
            errors.append(f"line {line}: non-finite covariate")
    if errors:
        head = "; ".join(errors[:10])
        more = f" (+{len(errors) - 10} more)" if len(errors) > 10 else ""
        raise DataError(f"{path}: {head}{more}")
    labels = _parse_labels(hosp)
    names = [[n for _, n in c] for c in cols]
    return Dataset(labels, y1, d1, y2, d2, X, names)


# ---------------------------------------------------------------------------
# ratio and classification CSVs


def write_ratio_csv(path, hospital_labels, times, summary, statistics=None):
    """Rows ``hospital_id,t,statistic,median,lo95,hi95``.

    ``summary`` maps statistic name -> (median, lo, hi) arrays of shape (J, T).
    """
    statistics = list(summary) if statistics is None else statistics
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["hospital_id", "t", "statistic", "median", "lo95", "hi95"])
        for j, lab in enumerate(hospital_labels):
            for k, t in enumerate(times):
                for name in statistics:
                    med, lo, hi = summary[name]
                    w.writerow([_fmt(lab), _fmt(float(t)), name, _fmt(float(med[j, k])),
                                _fmt(float(lo[j, k])), _fmt(float(hi[j, k]))])


def read_ratio_csv(path):
    """Inverse of :func:`write_ratio_csv`: (labels, times, summary)."""
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    labels = list(dict.fromkeys(r["hospital_id"] for r in rows))
    times = sorted({float(r["t"]) for r in rows})
    stats = list(dict.fromkeys(r["statistic"] for r in rows))
    J, T = len(labels), len(times)
    out = {s: tuple(np.zeros((J, T)) for _ in range(3)) for s in stats}
    jpos = {lab: j for j, lab in enumerate(labels)}
    tpos = {t: k for k, t in enumerate(times)}
    for r in rows:
        j, k = jpos[r["hospital_id"]], tpos[float(r["t"])]
        for a, key in zip(out[r["statistic"]], ("median", "lo95", "hi95")):
            a[j, k] = float(r[key])
    return _parse_labels(labels), np.array(times), out


def write_classification_csv(path, hospital_labels, scheme, plugin, final, marginals, risk,
                             category_labels):
    """Rows ``hospital_id,scheme,plugin_label,loss_label,p_<category>...,bayes_risk``."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["hospital_id", "scheme", "plugin_label", "loss_label"]
                   + [f"p_{c}" for c in category_labels] + ["bayes_risk"])
        for j, lab in enumerate(hospital_labels):
            w.writerow([_fmt(lab), scheme, int(plugin[j]), int(final[j])]
                       + [_fmt(float(p)) for p in marginals[j]] + [_fmt(float(risk))])


def read_classification_csv(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    pcols = [k for k in rows[0] if k.startswith("p_")] if rows else []
    return {
        "hospital_id": _parse_labels([r["hospital_id"] for r in rows]),
        "scheme": [r["scheme"] for r in rows],
        "plugin_label": np.array([int(r["plugin_label"]) for r in rows]),
        "loss_label": np.array([int(r["loss_label"]) for r in rows]),
        "marginals": np.array([[float(r[c]) for c in pcols] for r in rows]),
        "bayes_risk": float(rows[0]["bayes_risk"]) if rows else float("nan"),
    }


def write_table_csv(path, row_names, col_names, counts, corner=""):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow([corner] + list(col_names) + ["total"])
        for name, row in zip(row_names, counts):
            w.writerow([name] + [int(v) for v in row] + [int(np.sum(row))])
        w.writerow(["total"] + [int(v) for v in np.sum(counts, axis=0)] + [int(np.sum(counts))])


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class MetricsConfig:
    times: List[float] = field(default_factory=lambda: [90.0])
    K: int = 5
    gamma_one: bool = False
    ladder: List[int] = field(default_factory=lambda: [3, 5, 10, 15])
    sensitivity_samples: int = 20


@dataclass
class ProfilingConfig:
    gamma_frac: float = 0.1
    epsilon: float = 0.01
    horizon: float = 90.0
    quadrant_weights: Optional[List[List[float]]] = None
    penalty: float = 1.0
    n_starts: int = 5
    schemes: List[str] = field(default_factory=lambda: ["topk", "quadrant"])


@dataclass
class GlmmRunConfig:
    window: float = 90.0
    n_iter: int = 5000
    burnin: int = 1000
    thin: int = 5
    K: int = 5


@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    dataset: Optional[str] = None
    simulate: SimConfig = field(default_factory=SimConfig)
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    profiling: ProfilingConfig = field(default_factory=ProfilingConfig)
    glmm: GlmmRunConfig = field(default_factory=GlmmRunConfig)
    threads: int = 1


def _tuplify(v):
    return tuple(_tuplify(a) for a in v) if isinstance(v, list) else v


def _build(cls, data, where):
    """Construct dataclass ``cls`` from a mapping, rejecting unknown keys."""
    if data is None:
        return cls()
    if isinstance(data, cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for k, v in data.items():
        if cls is SimConfig and k == "covariates":
            if not isinstance(v, list):
                raise ConfigError(f"{where}.covariates: expected a list")
            v = [_build(CovariateSpec, c, f"{where}.covariates") for c in v]
        elif cls is McmcConfig and k == "priors":
            v = _build(Priors, v, f"{where}.priors")
            v.psi0 = _tuplify(list(v.psi0)) if isinstance(v.psi0, (list, tuple)) else v.psi0
        elif isinstance(v, list) and (isinstance(names[k].default, tuple) or k == "n_per_hospital"):
            # YAML has no tuples; restore them so configs compare equal after a round trip
            v = _tuplify(v)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(data) -> RunConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    data = dict(data)
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version} (expected {SCHEMA_VERSION})")
    sub = {"simulate": SimConfig, "mcmc": McmcConfig, "metrics": MetricsConfig,
           "profiling": ProfilingConfig, "glmm": GlmmRunConfig}
    for k, cls in sub.items():
        if k in data:
            data[k] = _build(cls, data[k], k)
    cfg = _build(RunConfig, data, "config")
    validate_run_config(cfg)
    return cfg


def validate_run_config(cfg: RunConfig):
    cfg.simulate.validate()
    cfg.mcmc.validate()
    m = cfg.metrics
    t = np.asarray(m.times, dtype=float)
    if t.size == 0 or np.any(~(t > 0)) or np.any(np.diff(t) <= 0):
        raise ConfigError("metrics.times must be positive and strictly increasing")
    if int(m.K) != m.K or m.K < 1 or any(int(k) != k or k < 1 for k in m.ladder):
        raise ConfigError("node counts must be positive integers")
    if m.sensitivity_samples < 1:
        raise ConfigError("metrics.sensitivity_samples must be >= 1")
    p = cfg.profiling
    if not 0 < p.gamma_frac < 1:
        raise ConfigError("profiling.gamma_frac must lie in (0, 1)")
    if not 0 < p.epsilon < 0.5:
        raise ConfigError("profiling.epsilon must lie in (0, 0.5)")
    from .profiling import SCHEMES
    if not p.schemes or any(sc not in SCHEMES for sc in p.schemes):
        raise ConfigError(f"profiling.schemes must be drawn from {SCHEMES}")
    if p.n_starts < 1:
        raise ConfigError("profiling.n_starts must be >= 1")
    if p.horizon not in [float(x) for x in m.times]:
        raise ConfigError("profiling.horizon must be one of metrics.times")
    if p.quadrant_weights is not None:
        from .profiling import LossSpec
        LossSpec("quadrant", np.asarray(p.quadrant_weights, dtype=float))
    g = cfg.glmm
    if not g.window > 0 or not g.n_iter > g.burnin >= 0 or g.thin < 1:
        raise ConfigError("invalid glmm settings")
    if g.window not in [float(x) for x in m.times]:
        raise ConfigError("glmm.window must be one of metrics.times")
    if cfg.threads < 1:
        raise ConfigError("threads must be >= 1")
    return cfg


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def config_to_dict(cfg: RunConfig):
    return _plain(cfg)


def load_config(path) -> RunConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data)


def dump_config(cfg: RunConfig, path=None):
    text = yaml.safe_dump(config_to_dict(cfg), sort_keys=True, default_flow_style=None)
    if path is not None:
        with open(path, "w") as f:
            f.write(text)
    return text


def config_hash(cfg: RunConfig):
    blob = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------------------
# manifest


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def versions():
    import scipy
    from . import __version__
    return {"semicomp": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def write_manifest(path, cfg: RunConfig, artifacts, stages, status="complete", error=None):
    """JSON manifest: config hash, seed, versions, artifact checksums and stage status."""
    out_dir = os.path.dirname(os.path.abspath(path))
    entry = {
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "versions": versions(),
        "stages": list(stages),
        "status": status,
        "artifacts": {os.path.relpath(a, out_dir): file_sha256(a) for a in sorted(artifacts)
                      if os.path.exists(a)},
    }
    if error is not None:
        entry["error"] = error
    with open(path, "w") as f:
        json.dump(entry, f, indent=2, sort_keys=True)
        f.write("\n")
    return entry
