# simulate.py
"""
Monte Carlo runner for null rejection rates, power curves and quantile
discrepancy data of LR, LR*_a and LR**_a.

Run:
    python simulate.py configs/null_normal.cfg
    python simulate.py configs/power_normal_n20.cfg --power
"""
import argparse
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
from dotenv import dotenv_values, load_dotenv
from scipy.stats import chi2
from tqdm import tqdm

load_dotenv()

from chol_diff import NotPositiveDefiniteError, chol
from elliptical import DomainError, EllipticalFamily, family_from_settings
from likelihood import FitError
from model import Dataset, HypothesisSpec, ParameterVector, mu_of, omega_all
from resultstore import ReplicationStore
from skovgaard import lr_test
from utils import QUIET, log, parse_float_list, sha256_of_text

SIM_REPS = int(os.environ.get("EIV_SIM_REPS", 2000))
FULL_REPS = int(os.environ.get("EIV_FULL_REPS", 10000))
WORKERS = int(os.environ.get("EIV_WORKERS", 1))
SIM_DB = os.environ.get("EIV_SIM_DB", "")
BATCH_SIZE = int(os.environ.get("EIV_SIM_BATCH", 50))
UNRELIABLE_FAILURE_RATE = 0.02

ALL_STATISTICS = ("lr", "lr_star", "lr_dstar")
ADJUSTED_STATISTICS = ("lr_star", "lr_dstar")


class ConfigError(ValueError):
    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


# -------------------------
# Configuration
# -------------------------
@dataclass(frozen=True)
class SimConfig:
    """
    One study. `n` and `p` name a single cell; `n_grid` and `p_grid`, when
    set, make the config a grid that `cells()` splits into one config per
    (p, n) pair.
    """
    kind: str = "normal"
    shape: Optional[float] = None
    m: int = 1
    p: int = 2
    q: int = 2
    n: int = 20
    replications: int = SIM_REPS
    seed: int = 0
    nominal_levels: Tuple[float, ...] = (0.10, 0.05, 0.01)
    power_grid: Tuple[float, ...] = ()
    workers: int = WORKERS
    n_grid: Tuple[int, ...] = ()
    p_grid: Tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nominal_levels", tuple(float(v) for v in self.nominal_levels))
        object.__setattr__(self, "power_grid", tuple(float(v) for v in self.power_grid))
        for name in ("n", "p"):
            grid = tuple(int(v) for v in getattr(self, name + "_grid"))
            if grid:
                object.__setattr__(self, name, grid[0])
            object.__setattr__(self, name + "_grid", grid if len(grid) > 1 else ())
        if self.replications < 1:
            raise ConfigError(f"reps must be >= 1, got {self.replications}", "reps")
        if min(self.m, *self.p_values, *self.n_values) < 1:
            raise ConfigError(f"m, p and n must be positive (m={self.m}, p={list(self.p_values)}, "
                              f"n={list(self.n_values)})", "n")
        smallest = self.m * min(self.p_values)
        if not 1 <= self.q <= smallest:
            raise ConfigError(f"q must lie in [1, m*p={smallest}], got {self.q}", "q")
        if not self.nominal_levels or any(not 0 < a < 1 for a in self.nominal_levels):
            raise ConfigError(f"levels must lie in (0, 1), got {self.nominal_levels}", "levels")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}", "seed")
        try:
            self.family
        except DomainError as e:
            raise ConfigError(str(e), "family")

    @property
    def n_values(self) -> Tuple[int, ...]:
        return self.n_grid or (self.n,)

    @property
    def p_values(self) -> Tuple[int, ...]:
        return self.p_grid or (self.p,)

    @property
    def is_grid(self) -> bool:
        return bool(self.n_grid or self.p_grid)

    def cell(self, p: Optional[int] = None, n: Optional[int] = None) -> "SimConfig":
        return replace(self, p=self.p if p is None else p, n=self.n if n is None else n,
                       p_grid=(), n_grid=())

    def cells(self) -> List["SimConfig"]:
        """Single-cell configs, p outer and n inner."""
        return [self.cell(p, n) for p in self.p_values for n in self.n_values]

    @property
    def family(self) -> EllipticalFamily:
        return EllipticalFamily(self.kind, self.shape, self.m + self.p)

    @property
    def hypothesis(self) -> HypothesisSpec:
        return HypothesisSpec(tuple(range(self.q)), (0.0,) * self.q)

    def true_theta(self, eta: float = 0.0) -> ParameterVector:
        return default_true_theta(self.m, self.p, self.q, eta)

    def to_dict(self) -> dict:
        out = {"family": self.kind, "shape": self.shape, "m": self.m, "p": self.p, "q": self.q,
               "n": self.n, "reps": self.replications, "seed": int(self.seed),
               "levels": list(self.nominal_levels), "power_grid": list(self.power_grid)}
        if self.is_grid:
            out.update(n_grid=list(self.n_values), p_grid=list(self.p_values))
        return out


def default_true_theta(m: int, p: int, q: int, eta: float = 0.0) -> ParameterVector:
    """alpha = 0.2, mu_x = -2, Sigma_q = 10 I, Sigma_x = 4 I; the first q entries of vec(beta) are eta."""
    vec_beta = np.zeros(m * p)
    vec_beta[:q] = eta
    beta = vec_beta.reshape((m, p), order="F")
    return ParameterVector.pack(beta, np.full(m, 0.2), np.full(p, -2.0), 10.0 * np.eye(m), 4.0 * np.eye(p))


def _get(values: dict, key: str, required: bool = True):
    v = values.get(key)
    if v is None or str(v).strip() == "":
        if required:
            raise ConfigError(f"missing required key {key!r}", key)
        return None
    return str(v).strip()


def _typed(values: dict, key: str, cast, required: bool = True, default=None):
    raw = _get(values, key, required)
    if raw is None:
        return default
    try:
        return cast(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {raw!r}", key)


def _int_list(text: str) -> Tuple[int, ...]:
    values = tuple(int(v.strip()) for v in str(text).split(",") if v.strip())
    if not values:
        raise ValueError(text)
    return values


def load_sim_config(path: str, replications: Optional[int] = None) -> SimConfig:
    """
    Read a flat key=value simulation config. `n` and `p` take a single
    value or a comma-separated list; a list makes the config a grid.
    """
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    values = dotenv_values(path)
    kind = _get(values, "family").lower()
    nu = _typed(values, "nu", float, required=(kind == "student_t"))
    lam = _typed(values, "lambda", float, required=(kind == "power_exponential"))
    try:
        fam = family_from_settings(kind, nu, lam)
    except DomainError as e:
        raise ConfigError(str(e), "family")
    reps = replications or _typed(values, "reps", int, required=False, default=SIM_REPS)
    return SimConfig(
        kind=fam.kind, shape=fam.shape,
        m=_typed(values, "m", int), p_grid=_typed(values, "p", _int_list), q=_typed(values, "q", int),
        n_grid=_typed(values, "n", _int_list), seed=_typed(values, "seed", int),
        replications=reps,
        nominal_levels=_typed(values, "levels", parse_float_list, required=False,
                              default=(0.10, 0.05, 0.01)),
        power_grid=_typed(values, "power_grid", parse_float_list, required=False, default=()),
        workers=_typed(values, "workers", int, required=False, default=WORKERS),
    )


def study_key(config: SimConfig) -> str:
    """
    Identity of a study for the replication store. Replication count,
    levels and worker count are left out: replication i has the same
    outcome whatever N is, so a stored study can be extended.
    """
    text = (f"family={config.kind};shape={config.shape!r};m={config.m};p={config.p};"
            f"q={config.q};n={config.n};seed={int(config.seed)}")
    return sha256_of_text(text)


# -------------------------
# Design and replications
# -------------------------
@dataclass
class Design:
    """Known error scales, fixed across replications."""
    sigma_e: np.ndarray   # (n, m, m)
    sigma_ue: np.ndarray  # (n, p, m)
    sigma_u: np.ndarray   # (n, p, p)

    def dataset(self, z: Optional[np.ndarray] = None, check: bool = False) -> Dataset:
        n, m, _ = self.sigma_e.shape
        p = self.sigma_u.shape[1]
        if z is None:
            z = np.zeros((n, m + p))
        return Dataset(z, self.sigma_e, self.sigma_ue, self.sigma_u, m, p, check)


def _diag_stack(sqrt_entries: np.ndarray) -> np.ndarray:
    n, k = sqrt_entries.shape
    out = np.zeros((n, k, k))
    idx = np.arange(k)
    out[:, idx, idx] = sqrt_entries ** 2
    return out


def gen_design(config: SimConfig) -> Design:
    rng = np.random.default_rng(np.random.SeedSequence(int(config.seed), spawn_key=(0,)))
    n, m, p = config.n, config.m, config.p
    sigma_e = _diag_stack(rng.uniform(0.0, 1.0, size=(n, m)))
    sigma_u = _diag_stack(rng.uniform(0.0, 1.0, size=(n, p)))
    return Design(sigma_e, np.zeros((n, p, m)), sigma_u)


def _eta_key(eta: float) -> int:
    return int(sha256_of_text(repr(float(eta)))[:12], 16)


def replication_seed(config: SimConfig, eta: float, rep: int) -> np.random.SeedSequence:
    """One independent stream per (eta, replication)."""
    return np.random.SeedSequence(int(config.seed), spawn_key=(1, _eta_key(eta), int(rep)))


def simulate_dataset(config: SimConfig, design: Design, theta: ParameterVector,
                     rng: np.random.Generator) -> Dataset:
    fam = config.family
    stub = design.dataset()
    P = chol(omega_all(theta, stub, fam))
    z = fam.sample(mu_of(theta), P, rng)
    return design.dataset(z)


def run_replication(config: SimConfig, design: Design, eta: float, rep: int) -> dict:
    rng = np.random.default_rng(replication_seed(config, eta, rep))
    theta = config.true_theta(eta)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            data = simulate_dataset(config, design, theta, rng)
            report = lr_test(data, config.family, config.hypothesis)
    except (FitError, DomainError, NotPositiveDefiniteError, np.linalg.LinAlgError,
            FloatingPointError) as e:
        return {"failed": True, "error": f"{type(e).__name__}: {e}"}
    return {"lr": report.lr, "log_rho": report.log_rho, "lr_star": report.lr_star,
            "lr_dstar": report.lr_dstar, "flags": sorted(report.flags)}


def _replication_task(args):
    """Top-level picklable worker for ProcessPoolExecutor."""
    config, design, eta, rep = args
    return rep, run_replication(config, design, eta, rep)


# -------------------------
# Reports
# -------------------------
@dataclass
class RateRow:
    statistic: str
    level: float
    rate: float
    se: float
    eta: float
    n: int
    p: int


@dataclass
class SimReport:
    config: SimConfig
    eta: float
    statistics: Tuple[str, ...]
    values: Dict[str, np.ndarray]
    rates: Dict[str, Dict[float, float]]
    std_errors: Dict[str, Dict[float, float]]
    replications: int
    failures: int
    flag_counts: Dict[str, int] = field(default_factory=dict)
    study: str = ""

    @property
    def successes(self) -> int:
        return self.replications - self.failures

    @property
    def failure_rate(self) -> float:
        return self.failures / self.replications if self.replications else 0.0

    @property
    def unreliable(self) -> bool:
        return self.failure_rate >= UNRELIABLE_FAILURE_RATE

    def rows(self) -> List[RateRow]:
        cfg = self.config
        return [RateRow(s, a, self.rates[s][a], self.std_errors[s][a], self.eta, cfg.n, cfg.p)
                for s in self.statistics for a in self.config.nominal_levels]

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "study": self.study,
            "eta": self.eta,
            "n": self.config.n,
            "p": self.config.p,
            "q": self.config.q,
            "replications": self.replications,
            "failures": self.failures,
            "unreliable": self.unreliable,
            "flag_counts": dict(self.flag_counts),
            "rates": [vars(r) for r in self.rows()],
            "values": {s: self.values[s].tolist() for s in self.statistics},
        }


def aggregate(config: SimConfig, eta: float, outcomes: Dict[int, dict],
              statistics: Iterable[str] = ALL_STATISTICS, study: str = "") -> SimReport:
    """Rejection rates over the successful replications, in replication order."""
    statistics = tuple(statistics)
    ok = [outcomes[r] for r in sorted(outcomes) if not outcomes[r].get("failed")]
    failures = len(outcomes) - len(ok)
    flag_counts: Dict[str, int] = {}
    for o in ok:
        for f in o.get("flags", []):
            flag_counts[f] = flag_counts.get(f, 0) + 1

    values, rates, ses = {}, {}, {}
    N = len(ok)
    for s in statistics:
        arr = np.array([o[s] for o in ok], dtype=float)
        values[s] = np.sort(arr)
        rates[s], ses[s] = {}, {}
        for a in config.nominal_levels:
            crit = chi2.ppf(1.0 - a, config.q)
            r = float(np.mean(arr > crit)) if N else float("nan")
            rates[s][a] = r
            ses[s][a] = float(np.sqrt(r * (1.0 - r) / N)) if N else float("nan")
    return SimReport(config, float(eta), statistics, values, rates, ses, len(outcomes),
                     failures, flag_counts, study)


# -------------------------
# Runner
# -------------------------
class StudyRunner:
    def __init__(self, config: SimConfig, store: Optional[ReplicationStore] = None,
                 progress: Optional[bool] = None):
        if config.is_grid:
            raise ConfigError("a runner takes a single (p, n) cell; split grids with cells()", "n")
        self.config = config
        self.store = store
        self.progress = (not QUIET) if progress is None else progress
        self.design = gen_design(config)
        self.key = study_key(config)

    def pending(self, eta: float) -> List[int]:
        done = self.store.completed_indices(self.key, eta) if self.store else set()
        return [r for r in range(self.config.replications) if r not in done]

    def run_once(self, eta: float, reps: List[int], executor=None) -> Dict[int, dict]:
        tasks = [(self.config, self.design, eta, r) for r in reps]
        if executor is None:
            results = map(_replication_task, tasks)
        else:
            results = executor.map(_replication_task, tasks)
        out = dict(results)
        if self.store is not None and out:
            self.store.upsert_many(self.key, eta, out)
        return out

    def run(self, eta: float, batch_size: int = BATCH_SIZE) -> Dict[int, dict]:
        cfg = self.config
        outcomes: Dict[int, dict] = {}
        if self.store is not None:
            stored = self.store.fetch(self.key, eta)
            outcomes.update({r: o for r, o in stored.items() if r < cfg.replications})
        todo = self.pending(eta)
        if outcomes:
            log("simulate", f"resuming eta={eta:g}: {len(outcomes)} stored, {len(todo)} to go")

        bar = tqdm(total=len(todo), desc=f"eta={eta:g}", file=sys.stderr, disable=not self.progress)
        executor = ProcessPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
        try:
            for start in range(0, len(todo), batch_size):
                batch = todo[start:start + batch_size]
                outcomes.update(self.run_once(eta, batch, executor))
                bar.update(len(batch))
        except KeyboardInterrupt:
            log("simulate", "stopped by user; finished batches are kept")
            raise
        finally:
            bar.close()
            if executor is not None:
                executor.shutdown()
        return outcomes


def _open_store(store):
    if store is None and SIM_DB:
        return ReplicationStore(SIM_DB)
    return store


def run_null_study(config: SimConfig, store: Optional[ReplicationStore] = None,
                   progress: Optional[bool] = None) -> SimReport:
    runner = StudyRunner(config, _open_store(store), progress)
    outcomes = runner.run(0.0)
    report = aggregate(config, 0.0, outcomes, ALL_STATISTICS, runner.key)
    _log_report(report)
    return report


def run_null_grid(config: SimConfig, store: Optional[ReplicationStore] = None,
                  progress: Optional[bool] = None) -> List[SimReport]:
    """Null study for every (p, n) cell of the config, p outer and n inner."""
    store = _open_store(store)
    return [run_null_study(cell, store, progress) for cell in config.cells()]


def run_power_study(config: SimConfig, store: Optional[ReplicationStore] = None,
                    progress: Optional[bool] = None) -> List[SimReport]:
    """Rates of LR*_a and LR**_a for psi = (eta, ..., eta) over the power grid, per (p, n) cell."""
    if not config.power_grid:
        raise ConfigError("power study needs a power_grid", "power_grid")
    store = _open_store(store)
    reports = []
    for cell in config.cells():
        if cell.p != cell.q:
            log("simulate", f"power design normally uses p = q (got p={cell.p}, q={cell.q})")
        runner = StudyRunner(cell, store, progress)
        for eta in cell.power_grid:
            outcomes = runner.run(eta)
            report = aggregate(cell, eta, outcomes, ADJUSTED_STATISTICS, runner.key)
            _log_report(report)
            reports.append(report)
    return reports


def _log_report(report: SimReport):
    cfg = report.config
    log("simulate", f"p={cfg.p} n={cfg.n} eta={report.eta:g}: {report.successes}/{report.replications} "
                    f"replications, {report.failures} failed")
    if report.unreliable:
        log("simulate", f"warning: failure rate {report.failure_rate:.1%} marks this study unreliable")


def discrepancy_curve(statistic_values, q: int) -> List[Tuple[float, float]]:
    """(chi2_q quantile at k/(N+1), relative discrepancy of the k-th order statistic)."""
    vals = np.sort(np.asarray(statistic_values, dtype=float).ravel())
    N = vals.size
    if N == 0:
        raise ValueError("discrepancy curve needs at least one statistic value")
    probs = np.arange(1, N + 1) / (N + 1.0)
    Q = chi2.ppf(probs, q)
    rel = (vals - Q) / Q
    return list(zip(Q.tolist(), rel.tolist()))


if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument("config")
    parser.add_argument("--power", action="store_true")
    parser.add_argument("--full", action="store_true")
    args = parser.parse_args()

    cfg = load_sim_config(args.config, FULL_REPS if args.full else None)
    reports = run_power_study(cfg) if args.power else run_null_grid(cfg)
    for rep in reports:
        for row in rep.rows():
            print(f"[simulate] p={row.p} n={row.n} eta={row.eta:g} {row.statistic} @ {row.level:g}: "
                  f"{row.rate:.3f} ({row.se:.3f})")
