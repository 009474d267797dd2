"""Monte-Carlo experiment runner and figure-data export.

``run`` draws realizations of a process model, applies the selected
estimators at every compression point and accumulates NMSE, squared bias
and variance against the true Rihaczek spectrum. ``export`` turns a saved
run into plot-ready CSV files.

Runs are configured by a TOML file (optionally layered on a named preset)
and are deterministic given the master seed: every trial draws from its
own seed stream and aggregation always happens in trial order, whatever
the number of worker processes.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .analysis import SecondMomentProfile, bound_report, second_moment_profile
from .compress import compressive_estimates
from .core import LagSupport, TfMatrix, make_lag_support
from .processes import (
    ChirpParams,
    OfdmParams,
    chirp_correlation,
    chirp_realization,
    gaussian_realization,
    ofdm_closed_eaf,
    ofdm_closed_rs,
    ofdm_correlation,
    ofdm_realization,
    trial_seed,
)
from .solver import BpConfig, SolverError
from .spectra import CorrelationMatrix, eaf_from_corr, mvu_estimate, rs_from_corr

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

__all__ = [
    "ConfigError",
    "FigureDataError",
    "ExperimentConfig",
    "ExperimentReport",
    "EstimatorStats",
    "PRESETS",
    "load_config",
    "run_experiment",
    "write_report",
    "load_report",
    "emit_figure_data",
    "main",
]

log = logging.getLogger(__name__)

ESTIMATORS = ("mvu", "cs", "cs_sym")
MODELS = ("ofdm", "chirp", "custom")
FIGURES = ("fig1", "fig2", "fig3", "fig4", "fig5", "fig6")
MAX_WORKERS_ENV = "RIHACZEK_CS_MAX_WORKERS"
FAILURE_BUDGET = 0.01

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER_BUDGET = 2


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


class FigureDataError(RuntimeError):
    """A report lacks the aggregate a figure needs."""


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment settings.

    ``p_values`` lists the number of AF measurements per compression point;
    a TOML file may give ``factors`` (``S'/P``) instead, which are resolved
    to ``round(S'/factor)`` at load time.
    """

    model: str = "ofdm"
    n_size: int = 128
    m_half: int = 3
    l_half: int = 7
    trials: int = 200
    p_values: tuple = (128, 64, 25)
    k_nominal: int = 40
    d_const: float = 1.0
    master_seed: int = 1
    estimators: tuple = ESTIMATORS
    outputs: str = "runs/experiment"
    solver: BpConfig = field(default_factory=BpConfig)
    ofdm: dict = field(default_factory=lambda: {"q": 16})
    chirp: dict = field(default_factory=dict)
    corr_path: str | None = None
    h_profile: bool = True
    keep_single: int = 0

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if not self.estimators or any(e not in ESTIMATORS for e in self.estimators):
            raise ConfigError(f"estimators must be a non-empty subset of {ESTIMATORS}")
        if self.model == "custom" and not self.corr_path:
            raise ConfigError("model 'custom' needs [custom] path")
        if not 0 <= self.keep_single < self.trials:
            raise ConfigError("keep_single must index one of the trials")
        try:
            sup = self.support()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        for p in self.p_values:
            if not 1 <= int(p) <= sup.s_prime:
                raise ConfigError(f"P = {p} outside 1..S' = {sup.s_prime}")
        if self.k_nominal < 1 or self.k_nominal > sup.s_prime:
            raise ConfigError(f"k_nominal must lie in 1..{sup.s_prime}")
        if not self.d_const > 0:
            raise ConfigError("d must be positive")

    def support(self) -> LagSupport:
        return make_lag_support(self.n_size, self.m_half, self.l_half)

    def needs_cs(self) -> bool:
        return any(e in self.estimators for e in ("cs", "cs_sym"))

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "n_size": self.n_size,
            "m_half": self.m_half,
            "l_half": self.l_half,
            "trials": self.trials,
            "p_values": [int(p) for p in self.p_values],
            "k_nominal": self.k_nominal,
            "d_const": self.d_const,
            "master_seed": self.master_seed,
            "estimators": list(self.estimators),
            "outputs": self.outputs,
            "solver": self.solver.to_dict(),
            "ofdm": dict(self.ofdm),
            "chirp": dict(self.chirp),
            "corr_path": self.corr_path,
            "h_profile": self.h_profile,
            "keep_single": self.keep_single,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        d["p_values"] = tuple(int(p) for p in d["p_values"])
        d["estimators"] = tuple(d["estimators"])
        d["solver"] = BpConfig(**d["solver"])
        return cls(**d)


# presets as nested TOML-shaped dicts so files and presets merge uniformly
PRESETS = {
    "ofdm-desk": {
        "experiment": {"model": "ofdm", "n": 128, "trials": 200, "k_nominal": 40, "outputs": "runs/ofdm-desk"},
        "support": {"m": 3, "l": 7},
        "compression": {"p": [128, 64, 25]},
        "ofdm": {"q": 16},
    },
    "ofdm-full": {
        "experiment": {"model": "ofdm", "n": 512, "trials": 1000, "k_nominal": 40, "outputs": "runs/ofdm-full"},
        "support": {"m": 3, "l": 7},
        "compression": {"p": [128, 64, 25]},
        "ofdm": {"q": 64},
    },
    "chirp-desk": {
        "experiment": {"model": "chirp", "n": 128, "trials": 200, "k_nominal": 64, "outputs": "runs/chirp-desk"},
        "support": {"m": 7, "l": 7},
        "compression": {"p": [256, 51, 26]},
        "chirp": {"t1": 32.0, "t2": 96.0, "t0": 15.0, "beta": 1.0 / 150.0},
    },
    "chirp-full": {
        "experiment": {"model": "chirp", "n": 512, "trials": 1000, "k_nominal": 256, "outputs": "runs/chirp-full"},
        "support": {"m": 15, "l": 15},
        "compression": {"p": [1024, 204, 102]},
        "chirp": {"t1": 128.0, "t2": 384.0, "t0": 60.0, "beta": 1.0 / 600.0},
    },
}

_SECTIONS = {
    "experiment": {"model", "n", "trials", "k_nominal", "d", "master_seed", "estimators", "outputs",
                   "h_profile", "keep_single"},
    "support": {"m", "l"},
    "compression": {"p", "factors"},
    "solver": {"feas_tol", "rel_obj_tol", "max_iters", "rho", "adaptive_rho"},
    "ofdm": {"q", "n_cp", "n0"},
    "chirp": {"t1", "t2", "t0", "beta"},
    "custom": {"path"},
}


def _merge(base: dict, over: dict) -> dict:
    out = {k: dict(v) if isinstance(v, dict) else v for k, v in base.items()}
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            base_sec = out[key]
            if key == "compression" and ("p" in val or "factors" in val):
                # a file that sets the sweep replaces the preset's sweep
                base_sec = {k: v for k, v in base_sec.items() if k not in ("p", "factors")}
            out[key] = {**base_sec, **val}
        else:
            out[key] = val
    return out


def config_from_mapping(doc: dict, base_dir: Path | None = None) -> ExperimentConfig:
    """Build a config from a TOML-shaped mapping (sections as in :data:`PRESETS`)."""
    for section, body in doc.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table")
        unknown = set(body) - _SECTIONS[section]
        if unknown:
            raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    exp = doc.get("experiment", {})
    supp = doc.get("support", {})
    comp = doc.get("compression", {})
    model = exp.get("model", "ofdm")
    n = int(exp.get("n", 128))
    m_half, l_half = int(supp.get("m", 3)), int(supp.get("l", 7))
    try:
        s_prime = make_lag_support(n, m_half, l_half).s_prime
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if "p" in comp and "factors" in comp:
        raise ConfigError("[compression] takes either p or factors, not both")
    if "factors" in comp:
        factors = [float(f) for f in comp["factors"]]
        if any(f < 1 for f in factors):
            raise ConfigError("compression factors must be >= 1")
        p_values = tuple(max(1, int(round(s_prime / f))) for f in factors)
    else:
        p_values = tuple(int(p) for p in comp.get("p", [s_prime]))
    if not p_values:
        raise ConfigError("at least one compression point is required")
    try:
        solver = BpConfig(**doc.get("solver", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[solver]: {exc}") from exc
    corr_path = doc.get("custom", {}).get("path")
    if corr_path is not None and base_dir is not None and not Path(corr_path).is_absolute():
        corr_path = str(base_dir / corr_path)
    return ExperimentConfig(
        model=model,
        n_size=n,
        m_half=m_half,
        l_half=l_half,
        trials=int(exp.get("trials", 200)),
        p_values=p_values,
        k_nominal=int(exp.get("k_nominal", 40)),
        d_const=float(exp.get("d", 1.0)),
        master_seed=int(exp.get("master_seed", 1)),
        estimators=tuple(exp.get("estimators", ESTIMATORS)),
        outputs=str(exp.get("outputs", "runs/experiment")),
        solver=solver,
        ofdm=dict(doc.get("ofdm", {"q": 16})) if model == "ofdm" else {},
        chirp=dict(doc.get("chirp", {})) if model == "chirp" else {},
        corr_path=corr_path,
        h_profile=bool(exp.get("h_profile", True)),
        keep_single=int(exp.get("keep_single", 0)),
    )


def load_config(path=None, preset: str | None = None) -> ExperimentConfig:
    """Read a TOML config, layered over ``preset`` when one is named."""
    doc: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
        doc = PRESETS[preset]
    base_dir = None
    if path is not None:
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                file_doc = tomllib.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        doc = _merge(doc, file_doc)
        base_dir = path.parent
    if not doc:
        raise ConfigError("need a config file or a preset")
    return config_from_mapping(doc, base_dir)


# --------------------------------------------------------------------------
# process models


def _model_objects(cfg: ExperimentConfig):
    """``(params, correlation)`` for the configured model."""
    if cfg.model == "ofdm":
        params = OfdmParams(n_size=cfg.n_size, **cfg.ofdm)
        return params, ofdm_correlation(params)
    if cfg.model == "chirp":
        params = ChirpParams(n_size=cfg.n_size, **cfg.chirp)
        return params, chirp_correlation(params)
    gamma = CorrelationMatrix(np.asarray(TfMatrix.load(cfg.corr_path)))
    if gamma.n_size != cfg.n_size:
        raise ConfigError(f"correlation file is {gamma.n_size}x{gamma.n_size}, config says N = {cfg.n_size}")
    return gamma, gamma


def _realization(cfg: ExperimentConfig, params, trial: int) -> np.ndarray:
    seed = trial_seed(cfg.master_seed, trial)
    if cfg.model == "ofdm":
        return ofdm_realization(params, seed)
    if cfg.model == "chirp":
        return chirp_realization(params, seed)
    return gaussian_realization(params, seed)


# --------------------------------------------------------------------------
# running


class _RunningMoments:
    """Welford mean and summed squared deviation of matrices, fed in a fixed order."""

    def __init__(self, shape):
        self.count = 0
        self.mean = np.zeros(shape, dtype=np.complex128)
        self.sq_dev = 0.0

    def add(self, x: np.ndarray):
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.sq_dev += float(np.real(np.vdot(delta, x - self.mean)))


@dataclass
class EstimatorStats:
    """Error statistics of one estimator at one compression point.

    ``nmse``, ``bias2`` and ``variance`` are normalized by ``||R||^2`` and
    satisfy ``nmse = bias2 + variance`` up to rounding.
    """

    estimator: str
    p_count: int | None
    compression_factor: float
    trials: int
    nmse: float
    bias2: float
    variance: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ExperimentReport:
    """Aggregated results of :func:`run_experiment`.

    Matrices (true RS, averages, single realizations) live in
    ``matrices`` keyed by name, e.g. ``avg_cs_P64``; ``per_trial`` maps
    ``(estimator, P)`` keys to arrays of per-trial l2 errors.
    """

    config: ExperimentConfig
    support: dict
    stats: list
    per_trial: dict
    matrices: dict
    failures: list
    sym_violations: int
    sym_checked: int
    bounds: dict | None
    h_profile: list | None
    wall_clock: float
    rs_norm: float

    @property
    def solves(self) -> int:
        return self.config.trials * len(self.config.p_values) if self.config.needs_cs() else 0

    @property
    def failure_rate(self) -> float:
        return len(self.failures) / self.solves if self.solves else 0.0

    def within_budget(self) -> bool:
        return self.failure_rate <= FAILURE_BUDGET

    def stat(self, estimator: str, p_count: int | None = None) -> EstimatorStats:
        for s in self.stats:
            if s.estimator == estimator and (estimator == "mvu" or s.p_count == p_count):
                return s
        raise KeyError(f"no statistics for {estimator} at P = {p_count}")

    def summary(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "support": self.support,
            "rs_norm_sq": self.rs_norm ** 2,
            "stats": [s.to_dict() for s in self.stats],
            "failures": self.failures,
            "failure_rate": self.failure_rate,
            "symmetrization": {"checked": self.sym_checked, "violations": self.sym_violations},
            "bounds": self.bounds,
            "wall_clock_s": self.wall_clock,
        }


def _trial_worker(args):
    cfg, params, trial = args
    sup = cfg.support()
    x = _realization(cfg, params, trial)
    out = {"trial": trial, "estimates": {}, "failures": []}
    if "mvu" in cfg.estimators:
        out["estimates"][("mvu", None)] = np.asarray(mvu_estimate(x, sup))
    if cfg.needs_cs():
        for p in cfg.p_values:
            try:
                res = compressive_estimates(x, sup, int(p), trial_seed(cfg.master_seed, trial, int(p)), cfg.solver)
            except SolverError as exc:
                out["failures"].append({"trial": trial, "p_count": int(p), "error": str(exc)})
                continue
            if "cs" in cfg.estimators or "cs_sym" in cfg.estimators:
                out["estimates"][("cs", int(p))] = np.asarray(res.plain)
                out["estimates"][("cs_sym", int(p))] = np.asarray(res.symmetrized)
    return out


def _worker_count(threads: int | None) -> int:
    n = max(1, int(threads or 1))
    cap = os.environ.get(MAX_WORKERS_ENV)
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            log.warning("ignoring non-integer %s=%r", MAX_WORKERS_ENV, cap)
    return n


def _key_name(est: str, p: int | None) -> str:
    return est if p is None else f"{est}_P{p}"


def run_experiment(cfg: ExperimentConfig, threads: int | None = 1) -> ExperimentReport:
    """Monte-Carlo evaluation of the configured estimators.

    Parameters
    ----------
    cfg : ExperimentConfig
    threads : int, optional
        Worker processes for the trials (capped by the
        ``RIHACZEK_CS_MAX_WORKERS`` environment variable). Results do not
        depend on this value.

    Returns
    -------
    ExperimentReport
        Solver failures are recorded, not raised; check
        :meth:`ExperimentReport.within_budget`.
    """
    start = time.perf_counter()
    sup = cfg.support()
    params, gamma = _model_objects(cfg)
    rs_true = np.asarray(rs_from_corr(gamma))
    rs_norm = float(np.linalg.norm(rs_true))
    if rs_norm == 0.0:
        raise ConfigError("model has an all-zero Rihaczek spectrum")

    keys = []
    if "mvu" in cfg.estimators:
        keys.append(("mvu", None))
    for p in cfg.p_values:
        for est in ("cs", "cs_sym"):
            if est in cfg.estimators:
                keys.append((est, int(p)))
    moments = {k: _RunningMoments(rs_true.shape) for k in keys}
    per_trial = {k: np.full(cfg.trials, np.nan) for k in keys}
    singles = {}
    failures = []
    sym_checked = sym_violations = 0

    jobs = [(cfg, params, t) for t in range(cfg.trials)]
    workers = _worker_count(threads)
    if workers == 1:
        results = map(_trial_worker, jobs)
        pool = None
    else:
        pool = ProcessPoolExecutor(max_workers=workers)
        results = pool.map(_trial_worker, jobs, chunksize=max(1, cfg.trials // (4 * workers)))
    try:
        # map preserves trial order, so the accumulation order is fixed
        for out in results:
            t = out["trial"]
            failures.extend(out["failures"])
            est = out["estimates"]
            for key, mat in est.items():
                if key not in moments:
                    continue
                moments[key].add(mat)
                per_trial[key][t] = float(np.linalg.norm(mat - rs_true))
                if t == cfg.keep_single:
                    singles[key] = mat
            for p in cfg.p_values:
                pair = (("cs", int(p)) in est, ("cs_sym", int(p)) in est)
                if all(pair):
                    sym_checked += 1
                    e_plain = np.linalg.norm(est[("cs", int(p))] - rs_true)
                    e_sym = np.linalg.norm(est[("cs_sym", int(p))] - rs_true)
                    if e_sym > e_plain + 1e-9 * rs_norm:
                        sym_violations += 1
    finally:
        if pool is not None:
            pool.shutdown()

    norm_sq = rs_norm ** 2
    stats = []
    for key in keys:
        mom = moments[key]
        est_name, p = key
        if mom.count == 0:
            continue
        bias2 = float(np.linalg.norm(mom.mean - rs_true) ** 2) / norm_sq
        var = mom.sq_dev / mom.count / norm_sq
        errs = per_trial[key][~np.isnan(per_trial[key])]
        nmse = float(np.mean(errs ** 2)) / norm_sq
        stats.append(EstimatorStats(
            estimator=est_name,
            p_count=p,
            compression_factor=1.0 if p is None else sup.s_prime / p,
            trials=mom.count,
            nmse=nmse,
            bias2=bias2,
            variance=var,
        ))

    matrices = {"rs_true": rs_true, "eaf_true": np.asarray(eaf_from_corr(gamma))}
    for key in keys:
        if moments[key].count:
            matrices["avg_" + _key_name(*key)] = moments[key].mean
        if key in singles:
            matrices["single_" + _key_name(*key)] = singles[key]

    profile = second_moment_profile(gamma, sup, with_approx=cfg.h_profile)
    bounds = bound_report(gamma, sup, [cfg.k_nominal], d_default=cfg.d_const, profile=profile).to_dict()
    h_rows = _h_profile_rows(profile) if cfg.h_profile else None

    return ExperimentReport(
        config=cfg,
        support=asdict(sup),
        stats=stats,
        per_trial={_key_name(*k): v for k, v in per_trial.items()},
        matrices=matrices,
        failures=failures,
        sym_violations=sym_violations,
        sym_checked=sym_checked,
        bounds=bounds,
        h_profile=h_rows,
        wall_clock=time.perf_counter() - start,
        rs_norm=rs_norm,
    )


def _h_profile_rows(profile: SecondMomentProfile) -> list:
    """Rank-ordered ``h`` and its approximation, as plain rows."""
    dl = profile.sup.dl
    smoothed = np.abs(profile.smoothed).reshape(-1, order="F")
    h = profile.h_exact.reshape(-1, order="F")
    h_tilde = profile.h_approx.reshape(-1, order="F")
    rows = []
    for r, flat in enumerate(profile.order, start=1):
        q, p = divmod(int(flat), dl)
        rows.append({"rank": r, "p": p, "q": q, "smoothed_abs": float(smoothed[flat]),
                     "h": float(h[flat]), "h_approx": float(h_tilde[flat])})
    return rows


# --------------------------------------------------------------------------
# persistence


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _fmt(x) -> str:
    return repr(float(x)) if x is not None else ""


def write_report(report: ExperimentReport, out_dir=None) -> Path:
    """Write ``report.json``, curve and per-trial CSVs and matrix files.

    Returns the path of ``report.json``.
    """
    out = Path(out_dir or report.config.outputs)
    out.mkdir(parents=True, exist_ok=True)
    mat_dir = out / "matrices"
    mat_dir.mkdir(exist_ok=True)
    mat_files = {}
    for name, mat in report.matrices.items():
        TfMatrix(mat).save(mat_dir / f"{name}.bin")
        mat_files[name] = f"matrices/{name}.bin"

    curve_rows = [[s.estimator, "" if s.p_count is None else s.p_count, _fmt(s.compression_factor),
                   s.trials, _fmt(s.nmse), _fmt(s.bias2), _fmt(s.variance)] for s in report.stats]
    (out / "curves.csv").write_text(
        _csv_text(["estimator", "p_count", "compression_factor", "trials", "nmse", "bias2", "variance"], curve_rows),
        encoding="utf-8")

    names = list(report.per_trial)
    trial_rows = [[t] + [_fmt(report.per_trial[k][t]) if not np.isnan(report.per_trial[k][t]) else ""
                         for k in names] for t in range(report.config.trials)]
    (out / "per_trial_errors.csv").write_text(_csv_text(["trial"] + names, trial_rows), encoding="utf-8")

    if report.h_profile is not None:
        cols = ["rank", "p", "q", "smoothed_abs", "h", "h_approx"]
        rows = [[r[c] if c in ("rank", "p", "q") else _fmt(r[c]) for c in cols] for r in report.h_profile]
        (out / "h_profile.csv").write_text(_csv_text(cols, rows), encoding="utf-8")

    doc = report.summary()
    doc["files"] = {
        "matrices": mat_files,
        "curves": "curves.csv",
        "per_trial_errors": "per_trial_errors.csv",
        "h_profile": "h_profile.csv" if report.h_profile is not None else None,
    }
    path = out / "report.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_report(path) -> ExperimentReport:
    """Inverse of :func:`write_report` (wall-clock and bounds kept as stored)."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"report not found: {path}") from exc
    base = path.parent
    cfg = ExperimentConfig.from_dict(doc["config"])
    matrices = {name: np.asarray(TfMatrix.load(base / rel)) for name, rel in doc["files"]["matrices"].items()}
    stats = [EstimatorStats(**s) for s in doc["stats"]]
    per_trial = {}
    with open(base / doc["files"]["per_trial_errors"], encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    for j, name in enumerate(header[1:], start=1):
        per_trial[name] = np.array([float(r[j]) if r[j] else np.nan for r in rows])
    h_rows = None
    if doc["files"].get("h_profile"):
        with open(base / doc["files"]["h_profile"], encoding="utf-8", newline="") as fh:
            h_rows = []
            for r in csv.DictReader(fh):
                h_rows.append({k: (int(v) if k in ("rank", "p", "q") else float(v)) for k, v in r.items()})
    return ExperimentReport(
        config=cfg,
        support=doc["support"],
        stats=stats,
        per_trial=per_trial,
        matrices=matrices,
        failures=doc["failures"],
        sym_violations=doc["symmetrization"]["violations"],
        sym_checked=doc["symmetrization"]["checked"],
        bounds=doc["bounds"],
        h_profile=h_rows,
        wall_clock=doc["wall_clock_s"],
        rs_norm=float(np.sqrt(doc["rs_norm_sq"])),
    )


# --------------------------------------------------------------------------
# figure data


def _need(cond: bool, figure: str, what: str):
    if not cond:
        raise FigureDataError(f"{figure} needs {what}, which the report does not contain")


def _grid_csv(mats: dict) -> str:
    """Long-format CSV ``n, k, <name>...`` of real parts."""
    names = list(mats)
    n = next(iter(mats.values())).shape[0]
    nn, kk = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    cols = [nn.ravel(), kk.ravel()] + [np.real(mats[name]).ravel() for name in names]
    rows = zip(*[c.tolist() for c in cols])
    return _csv_text(["n", "k"] + names, ([int(a), int(b)] + [repr(v) for v in rest] for a, b, *rest in rows))


def _model_truth(report: ExperimentReport, figure: str, model: str) -> dict:
    _need(report.config.model == model, figure, f"a run of the {model} model (got {report.config.model!r})")
    cfg = report.config
    if model == "ofdm":
        params = OfdmParams(n_size=cfg.n_size, **cfg.ofdm)
        return {"rs": np.asarray(ofdm_closed_rs(params)), "eaf": np.asarray(ofdm_closed_eaf(params))}
    _need("rs_true" in report.matrices and "eaf_true" in report.matrices, figure, "the true RS and EAF matrices")
    return {"rs": report.matrices["rs_true"], "eaf": report.matrices["eaf_true"]}


def _estimate_maps(report: ExperimentReport, figure: str, model: str) -> dict:
    _need(report.config.model == model, figure, f"a run of the {model} model (got {report.config.model!r})")
    _need("rs_true" in report.matrices, figure, "the true RS matrix")
    mats = {"rs_true": report.matrices["rs_true"]}
    found = False
    for name, mat in report.matrices.items():
        if name.startswith(("avg_", "single_")):
            mats[name] = mat
            found = True
    _need(found, figure, "average or single-realization estimate matrices")
    return mats


def emit_figure_data(report: ExperimentReport, which: str, out_dir) -> list:
    """Write the CSV data behind one figure and return the written paths.

    ``fig1``/``fig5``: true RS and EAF (OFDM closed form / chirp model);
    ``fig2``: ``h`` and its approximation over rank, normalized by the
    top-ranked ``h``; ``fig3``/``fig6``: real parts of the true RS and of
    average and single-realization estimates (OFDM / chirp);
    ``fig4``: NMSE, squared bias and variance against ``S'/P``.
    """
    if which not in FIGURES:
        raise FigureDataError(f"unknown figure {which!r}; choose from {', '.join(FIGURES)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    if which in ("fig1", "fig5"):
        truth = _model_truth(report, which, "ofdm" if which == "fig1" else "chirp")
        path = out / f"{which}_rs_eaf.csv"
        path.write_text(_grid_csv({"rs_re": truth["rs"], "eaf_abs": np.abs(truth["eaf"])}), encoding="utf-8")
        written.append(path)
    elif which == "fig2":
        _need(bool(report.h_profile), which, "the h profile (h_exact and h_approx per rank)")
        h1 = report.h_profile[0]["h"]
        rows = [[r["rank"], r["p"], r["q"], _fmt(r["smoothed_abs"]), _fmt(r["h"] / h1), _fmt(r["h_approx"] / h1)]
                for r in report.h_profile]
        path = out / "fig2_h_profile.csv"
        path.write_text(_csv_text(["rank", "p", "q", "smoothed_abs", "h_norm", "h_approx_norm"], rows),
                        encoding="utf-8")
        written.append(path)
    elif which in ("fig3", "fig6"):
        mats = _estimate_maps(report, which, "ofdm" if which == "fig3" else "chirp")
        path = out / f"{which}_estimates.csv"
        path.write_text(_grid_csv(mats), encoding="utf-8")
        written.append(path)
    else:
        est_present = [e for e in ESTIMATORS if any(s.estimator == e for s in report.stats)]
        _need(bool(est_present), which, "NMSE / squared-bias / variance statistics")
        p_values = sorted({int(p) for p in report.config.p_values}, reverse=True)
        header = ["p_count", "compression_factor"]
        for e in est_present:
            header += [f"{e}_nmse", f"{e}_bias2", f"{e}_variance"]
        s_prime = report.support["s_prime"]
        rows = []
        for p in p_values:
            row = [p, _fmt(s_prime / p)]
            for e in est_present:
                try:
                    s = report.stat(e, p)
                except KeyError:
                    raise FigureDataError(f"fig4 needs {e} statistics at P = {p}, which the report does not contain")
                row += [_fmt(s.nmse), _fmt(s.bias2), _fmt(s.variance)]
            rows.append(row)
        path = out / "fig4_sweep.csv"
        path.write_text(_csv_text(header, rows), encoding="utf-8")
        written.append(path)
    return written


# --------------------------------------------------------------------------
# command line


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rihaczek-cs", description="Compressive Rihaczek-spectrum experiments")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a Monte-Carlo experiment")
    run.add_argument("--config", help="TOML config file (layered over --preset)")
    run.add_argument("--preset", choices=sorted(PRESETS), help="named base configuration")
    run.add_argument("--seed", type=int, help="override the master seed")
    run.add_argument("--trials", type=int, help="override the number of trials")
    run.add_argument("--out", help="output directory")
    run.add_argument("--threads", type=int, default=1, help=f"worker processes (capped by ${MAX_WORKERS_ENV})")
    exp = sub.add_parser("export", help="write figure data from a saved report")
    exp.add_argument("--report", required=True, help="path to report.json")
    exp.add_argument("--figure", required=True, choices=FIGURES + ("all",))
    exp.add_argument("--out", help="output directory (default: next to the report)")
    return ap


def _cmd_run(args) -> int:
    try:
        cfg = load_config(args.config, args.preset)
        overrides = {}
        if args.seed is not None:
            if args.seed < 0 or args.seed >= 2 ** 64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            overrides["master_seed"] = args.seed
        if args.trials is not None:
            overrides["trials"] = args.trials
        if args.out is not None:
            overrides["outputs"] = args.out
        if overrides:
            cfg = replace(cfg, **overrides)
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        report = run_experiment(cfg, threads=args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    path = write_report(report)
    for s in report.stats:
        p = "-" if s.p_count is None else s.p_count
        print(f"{s.estimator:7s} P={p!s:>5} S'/P={s.compression_factor:6.2f}  "
              f"NMSE={s.nmse:.4e}  B2={s.bias2:.4e}  V={s.variance:.4e}")
    print(f"report: {path}  ({report.wall_clock:.1f} s)")
    if not report.within_budget():
        print(f"solver failures: {len(report.failures)} of {report.solves} solves "
              f"({100 * report.failure_rate:.2f}% > {100 * FAILURE_BUDGET:.0f}%)", file=sys.stderr)
        return EXIT_SOLVER_BUDGET
    return EXIT_OK


def _cmd_export(args) -> int:
    try:
        report = load_report(args.report)
    except (ConfigError, KeyError, json.JSONDecodeError) as exc:
        print(f"cannot read report: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out) if args.out else Path(args.report).parent / "figures"
    figures = FIGURES if args.figure == "all" else (args.figure,)
    status = EXIT_OK
    for fig in figures:
        try:
            for path in emit_figure_data(report, fig, out):
                print(path)
        except FigureDataError as exc:
            if args.figure == "all":
                print(f"{fig}: skipped ({exc})", file=sys.stderr)
            else:
                print(f"{fig}: {exc}", file=sys.stderr)
                status = EXIT_CONFIG
    return status


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return _cmd_run(args)
    return _cmd_export(args)


if __name__ == "__main__":
    sys.exit(main())
