"""Synthetic two-phase survival experiments.

Covariates U ~ N(0, I_p); an expensive covariate V that depends on U1;
exponential (shape-1 Weibull) event times by inversion; exponential
censoring calibrated to a target censoring fraction; MCAR, MAR and
MAR-with-violation missingness of V; an optional non-proportional-hazards
variant where the U effect is attenuated after a change point.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
import yaml
from scipy import stats

from .cox import FitConfig
from .methods import (METHODS, DomainKnowledge, FitError, FittedMethod, MethodConfig,
                      TwoPhaseDataset, fit_method, select_variables)
from .metrics import MetricReport, c_index, calibration_slope, integrated_brier_score, mcc
from .survival import Dataset, breslow_baseline

MECHANISMS = ("MCAR", "MAR", "MAR_VIOL")
COEFFICIENT_SCENARIOS = ("I", "II", "III", "null")
V_KINDS = ("binary", "continuous", "pair")
METRICS = ("c_index", "calibration_slope", "ibs", "mcc")


class ClampWarning(RuntimeWarning):
    pass


def scenario_coefficients(scenario: str, p: int) -> np.ndarray:
    """beta_U for the weak-dense (I), strong (II) and concentrated (III) designs."""
    if scenario == "I":
        if p % 2:
            raise ValueError("scenario I needs an even p")
        return np.r_[np.full(p // 2, 0.5), np.zeros(p // 2)]
    if scenario == "II":
        if p < 3:
            raise ValueError("scenario II needs p >= 3")
        return np.r_[1.25, 1.0, 0.75, np.zeros(p - 3)]
    if scenario == "III":
        k = 0.2 * p
        if abs(k - round(k)) > 1e-9 or p < 10:
            raise ValueError("scenario III needs 0.2 p integral and p >= 10")
        k = int(round(k))
        return np.r_[0.75, 0.0, np.full(k, 0.75), np.zeros(p - k - 2)]
    if scenario == "null":
        return np.zeros(p)
    raise ValueError(f"unknown coefficient scenario {scenario!r}")


@dataclass(frozen=True)
class ScenarioSpec:
    name: str = ""
    n: int = 150
    p: int = 10
    r: float = 0.3
    coefficient_scenario: str = "II"
    v_kind: str = "binary"
    mechanism: str = "MCAR"
    censor_rate: float = 0.8
    ph_violation: bool = False
    attenuation: float = 0.5
    beta_v: float = 1.25
    v_independent: bool = False
    replications: int = 100
    seed: int = 2024
    methods: tuple[str, ...] = METHODS
    retained_u: tuple[int, ...] = (0, 1)
    dk_to_comparisons: bool = False
    test_size: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "retained_u", tuple(int(i) for i in self.retained_u))
        self.validate()

    def validate(self):
        if self.n < 2 or self.p < 1:
            raise ValueError("n must be >= 2 and p >= 1")
        if not 0 < self.r < 1:
            raise ValueError("r must lie in (0, 1)")
        if not 0 < self.censor_rate < 1:
            raise ValueError("censor_rate must lie in (0, 1)")
        if self.mechanism not in MECHANISMS:
            raise ValueError(f"mechanism must be one of {MECHANISMS}")
        if self.v_kind not in V_KINDS:
            raise ValueError(f"v_kind must be one of {V_KINDS}")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        scenario_coefficients(self.coefficient_scenario, self.p)
        if any(not 0 <= i < self.p for i in self.retained_u):
            raise ValueError("retained_u out of range")

    @property
    def label(self) -> str:
        return self.name or f"{self.mechanism}-{self.coefficient_scenario}"

    @property
    def d(self) -> int:
        return 2 if self.v_kind == "pair" else 1

    @property
    def beta_u(self) -> np.ndarray:
        return scenario_coefficients(self.coefficient_scenario, self.p)

    @property
    def beta_vec_v(self) -> np.ndarray:
        return np.full(self.d, self.beta_v)

    @property
    def v_kinds(self) -> tuple[str, ...]:
        return ("binary", "continuous") if self.v_kind == "pair" else (self.v_kind,)

    @property
    def truth_mask(self) -> np.ndarray:
        return np.concatenate([self.beta_u != 0, self.beta_vec_v != 0])

    def domain_knowledge(self) -> DomainKnowledge:
        return DomainKnowledge(retained_u=self.retained_u, apply_to_comparisons=self.dk_to_comparisons)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["methods"] = list(self.methods)
        d["retained_u"] = list(self.retained_u)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise KeyError(sorted(unknown)[0])
        return cls(**d)


@dataclass(eq=False)
class GeneratedData:
    two_phase: TwoPhaseDataset
    test: TwoPhaseDataset
    v_full: np.ndarray
    truth_beta: np.ndarray
    truth_mask: np.ndarray
    realized_missing_rate: float


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

def gen_covariates(n: int, p: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((n, p))


def gen_binary_v(u1, rng: np.random.Generator) -> np.ndarray:
    u1 = np.asarray(u1, dtype=float)
    prob = np.where(u1 < -0.5, 0.3, np.where(u1 < 1.0, 0.5, 0.2))
    return (rng.random(u1.size) < prob).astype(float)


def gen_continuous_v(u1, rng: np.random.Generator) -> np.ndarray:
    u1 = np.asarray(u1, dtype=float)
    return rng.normal(0.4 * np.abs(u1) - 0.1, 0.2)


def gen_v(kind: str, u1, rng: np.random.Generator) -> np.ndarray:
    if kind == "binary":
        return gen_binary_v(u1, rng)[:, None]
    if kind == "continuous":
        return gen_continuous_v(u1, rng)[:, None]
    if kind == "pair":
        return np.column_stack([gen_binary_v(u1, rng), gen_continuous_v(u1, rng)])
    raise ValueError(f"unknown v kind {kind!r}")


def gen_survival_times(lp, rng: np.random.Generator) -> np.ndarray:
    """Exponential times with rate exp(lp), i.e. -log(Uniform) / exp(lp)."""
    lp = np.asarray(lp, dtype=float)
    return rng.standard_exponential(lp.size) / np.exp(lp)


def gen_nonph_times(lp_u, lp_v, change_point: float, rng: np.random.Generator,
                    attenuation: float = 0.5) -> np.ndarray:
    """Piecewise-exponential times: the U effect is scaled by ``attenuation`` after the change point."""
    lp_u = np.asarray(lp_u, dtype=float)
    lp_v = np.asarray(lp_v, dtype=float)
    h1 = np.exp(lp_u + lp_v)
    h2 = np.exp(attenuation * lp_u + lp_v)
    e = rng.standard_exponential(lp_u.size)
    early = e < h1 * change_point
    return np.where(early, e / h1, change_point + (e - h1 * change_point) / h2)


def _censor_probability(c0, h1, h2=None, t0=None) -> float:
    """P(C < T) for C ~ Exp(c0), averaged over subjects with the given hazards."""
    if h2 is None:
        return float(np.mean(c0 / (c0 + h1)))
    a = c0 + h1
    early = c0 / a * (1.0 - np.exp(-a * t0))
    late = c0 * np.exp(-a * t0) / (c0 + h2)
    return float(np.mean(early + late))


def _draw_v(spec: ScenarioSpec, u, rng):
    # with v_independent the same conditional law is driven by a fresh N(0, 1) instead of U1
    driver = rng.standard_normal(u.shape[0]) if spec.v_independent else u[:, 0]
    return gen_v(spec.v_kind, driver, rng)


def _population(spec: ScenarioSpec, rng, draws):
    u = gen_covariates(draws, spec.p, rng)
    v = _draw_v(spec, u, rng)
    return u @ spec.beta_u, v @ spec.beta_vec_v


def _median_observed_event_time(h1, c0: float) -> float:
    """Median of the observed (uncensored) event times under Exp(c0) censoring."""
    a = h1 + c0
    total = np.mean(h1 / a)

    def mass(t):
        return np.mean(h1 / a * -np.expm1(-a * t))

    lo, hi = 0.0, 1.0
    while mass(hi) < 0.5 * total:
        hi *= 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if mass(mid) < 0.5 * total else (lo, mid)
    return 0.5 * (lo + hi)


def calibrate_c0(h1, target: float, h2=None, t0=None, tol: float = 1e-10) -> float:
    """Censoring rate c0 with mean P(C < T) equal to ``target`` (bisection in log c0)."""
    if not 0 < target < 1:
        raise ValueError("target must lie in (0, 1)")
    lo, hi = -10.0, 10.0
    for _ in range(5):
        if _censor_probability(math.exp(lo), h1, h2, t0) < target < _censor_probability(math.exp(hi), h1, h2, t0):
            break
        lo, hi = lo - 10.0, hi + 10.0
    else:
        raise RuntimeError("could not bracket the censoring rate")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _censor_probability(math.exp(mid), h1, h2, t0) < target:
            lo = mid
        else:
            hi = mid
    return math.exp(0.5 * (lo + hi))


def calibrate_censoring_rate(spec: ScenarioSpec, target: float | None = None,
                             rng: np.random.Generator | None = None, draws: int = 50_000) -> float:
    """Exponential censoring rate giving the target censoring fraction for the scenario.

    The censoring probability is averaged over ``draws`` simulated subjects
    (using the exact conditional probability given each subject's hazard).
    For the non-proportional variant the change point comes from the
    proportional version of the same scenario.
    """
    target = spec.censor_rate if target is None else target
    rng = np.random.default_rng(987_654) if rng is None else rng
    lp_u, lp_v = _population(spec, rng, draws)
    h1 = np.exp(lp_u + lp_v)
    c0 = calibrate_c0(h1, target)
    if not spec.ph_violation:
        return c0
    t0 = _median_observed_event_time(h1, c0)
    return calibrate_c0(h1, target, np.exp(spec.attenuation * lp_u + lp_v), t0)


def _population_key(spec: ScenarioSpec):
    return (spec.p, spec.coefficient_scenario, spec.v_kind, spec.beta_v, spec.censor_rate,
            spec.ph_violation, spec.attenuation, spec.v_independent)


@lru_cache(maxsize=None)
def _scenario_constants(key) -> tuple[float, float]:
    p, cs, vk, bv, cr, ph, att, vi = key
    spec = ScenarioSpec(p=p, coefficient_scenario=cs, v_kind=vk, beta_v=bv, censor_rate=cr,
                        ph_violation=ph, attenuation=att, v_independent=vi)
    lp_u, lp_v = _population(spec, np.random.default_rng(987_654), 50_000)
    h1 = np.exp(lp_u + lp_v)
    c0_ph = calibrate_c0(h1, cr)
    c0 = calibrate_censoring_rate(spec) if ph else c0_ph
    return c0, _median_observed_event_time(h1, c0_ph)


def scenario_constants(spec: ScenarioSpec) -> tuple[float, float]:
    """Cached (censoring rate c0, change point).

    The change point is the median observed event time of the proportional
    version of the scenario under its calibrated censoring.
    """
    return _scenario_constants(_population_key(spec))


def apply_missingness(v, u1, r: float, mechanism: str, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask, True where V is missing (one draw per subject)."""
    v = np.asarray(v, dtype=float)
    v1 = v[:, 0] if v.ndim == 2 else v
    u1 = np.asarray(u1, dtype=float)
    if mechanism == "MCAR":
        prob = np.full(u1.size, 1.0 - r)
    else:
        q = stats.norm.ppf(r / 3.0)
        scale = stats.norm.cdf(-q)
        if mechanism == "MAR":
            prob = np.where(u1 > q, (1.0 - r) / scale, 0.0)
        elif mechanism == "MAR_VIOL":
            inside = (1.0 - r - 0.1 * (v1 <= 0)) / scale + 0.1 * (v1 > 0)
            prob = np.where(u1 > q, inside, 0.1)
        else:
            raise ValueError(f"unknown mechanism {mechanism!r}")
    if np.any((prob < 0) | (prob > 1)):
        warnings.warn(f"missingness probabilities clamped to [0, 1] ({mechanism}, r={r})",
                      ClampWarning, stacklevel=2)
        prob = np.clip(prob, 0.0, 1.0)
    return rng.random(u1.size) < prob


def _draw_cohort(spec: ScenarioSpec, n: int, rng, c0, t0):
    u = gen_covariates(n, spec.p, rng)
    v = _draw_v(spec, u, rng)
    lp_u, lp_v = u @ spec.beta_u, v @ spec.beta_vec_v
    if spec.ph_violation:
        t = gen_nonph_times(lp_u, lp_v, t0, rng, spec.attenuation)
    else:
        t = gen_survival_times(lp_u + lp_v, rng)
    c = rng.exponential(1.0 / c0, n)
    return u, v, np.minimum(t, c), t <= c


def generate(spec: ScenarioSpec, rep_index: int) -> GeneratedData:
    """Training two-phase data and a fully observed test cohort for one replication."""
    c0, t0 = scenario_constants(spec)
    rng = np.random.default_rng(spec.seed + rep_index)
    u, v, time, event = _draw_cohort(spec, spec.n, rng, c0, t0)
    missing = apply_missingness(v, u[:, 0], spec.r, spec.mechanism, rng)
    v_obs = v.copy()
    v_obs[missing] = np.nan
    if missing.all():
        v_obs[0] = v[0]
        missing[0] = False
    train = TwoPhaseDataset(time, event, u, v_obs, spec.v_kinds)
    n_test = spec.test_size or max(train.n_prime, 2)
    tu, tv, tt, te = _draw_cohort(spec, n_test, rng, c0, t0)
    test = TwoPhaseDataset(tt, te, tu, tv, spec.v_kinds)
    return GeneratedData(train, test, v, np.concatenate([spec.beta_u, spec.beta_vec_v]),
                         spec.truth_mask, float(missing.mean()))


# ---------------------------------------------------------------------------
# Replications
# ---------------------------------------------------------------------------

@dataclass
class MethodOutcome:
    report: MetricReport
    error: str | None = None
    theta0: float = math.nan

    @property
    def failed(self) -> bool:
        return self.error is not None


def oracle_fit(gen: GeneratedData) -> FittedMethod:
    """True coefficients with a Breslow baseline from the fully observed training data."""
    tp = gen.two_phase
    p = tp.p
    ds = Dataset(tp.time, tp.event, np.column_stack([tp.u, gen.v_full]))
    base = breslow_baseline(ds, ds.x @ gen.truth_beta)
    return FittedMethod("ORACLE", gen.truth_beta[:p].copy(), gen.truth_beta[p:].copy(), base)


def evaluate(fit: FittedMethod, test: TwoPhaseDataset, truth_mask=None,
             config: FitConfig = FitConfig()) -> MetricReport:
    ds = Dataset(test.time, test.event, np.empty((test.n, 0)))
    lp = fit.linear_predictor(test.u, test.v)
    report = MetricReport()
    report.c_index = c_index(ds, lp)
    try:
        report.calibration_slope = calibration_slope(ds, lp, config)
    except ValueError:
        pass
    report.ibs = integrated_brier_score(ds, fit.survival_fn(test.u, test.v))
    if truth_mask is not None:
        report.mcc = mcc(select_variables(fit), truth_mask)
    return report


def run_replication(spec: ScenarioSpec, rep_index: int,
                    config: MethodConfig = MethodConfig()) -> dict[str, MethodOutcome]:
    gen = generate(spec, rep_index)
    dk = spec.domain_knowledge()
    seed = spec.seed + rep_index
    out = {}
    for method in spec.methods:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                fit = oracle_fit(gen) if method.upper() == "ORACLE" else fit_method(method, gen.two_phase, dk, config, seed)
                report = evaluate(fit, gen.test, gen.truth_mask, config.fit)
            out[method] = MethodOutcome(report, theta0=fit.theta0)
        except (FitError, ValueError, np.linalg.LinAlgError, FloatingPointError) as exc:
            out[method] = MethodOutcome(MetricReport(), error=f"{type(exc).__name__}: {exc}")
    return out


@dataclass
class MetricSummary:
    mean: float
    sd: float
    count: int


@dataclass(eq=False)
class ScenarioResult:
    spec: ScenarioSpec
    outcomes: list[dict[str, MethodOutcome]] = field(default_factory=list)

    @property
    def replications(self) -> int:
        return len(self.outcomes)

    def failures(self, method: str) -> int:
        return sum(o[method].failed for o in self.outcomes)

    def values(self, method: str, metric: str) -> np.ndarray:
        vals = [getattr(o[method].report, metric) for o in self.outcomes if not o[method].failed]
        return np.asarray(vals, dtype=float)

    def theta0(self, method: str = "EG") -> np.ndarray:
        return np.array([o[method].theta0 for o in self.outcomes if not o[method].failed])

    def summary(self, method: str, metric: str) -> MetricSummary:
        v = self.values(method, metric)
        v = v[np.isfinite(v)]
        if v.size == 0:
            return MetricSummary(math.nan, math.nan, 0)
        sd = float(v.std(ddof=1)) if v.size > 1 else 0.0
        return MetricSummary(float(v.mean()), sd, int(v.size))

    def table_rows(self) -> list[dict]:
        rows = []
        for method in self.spec.methods:
            row = {"scenario": self.spec.label, "mechanism": self.spec.mechanism,
                   "coefficients": self.spec.coefficient_scenario, "method": method,
                   "replications": self.replications, "failures": self.failures(method)}
            for metric in METRICS:
                s = self.summary(method, metric)
                row[f"{metric}_mean"] = s.mean
                row[f"{metric}_sd"] = s.sd
                row[f"{metric}_n"] = s.count
            rows.append(row)
        return rows

    def raw_rows(self) -> list[dict]:
        rows = []
        for rep, outcome in enumerate(self.outcomes, start=1):
            for method in self.spec.methods:
                o = outcome[method]
                rows.append({"scenario": self.spec.label, "rep": rep, "method": method,
                             **o.report.as_dict(), "theta0": o.theta0, "error": o.error or ""})
        return rows


def _replicate(args):
    spec, rep, config = args
    return run_replication(spec, rep, config)


def run_scenario(spec: ScenarioSpec, config: MethodConfig = MethodConfig(), jobs: int = 1,
                 progress=None) -> ScenarioResult:
    """Replications seed+1..seed+R, aggregated in replication order."""
    tasks = [(spec, rep, config) for rep in range(1, spec.replications + 1)]
    result = ScenarioResult(spec)
    if jobs > 1:
        scenario_constants(spec)
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for outcome in pool.map(_replicate, tasks, chunksize=max(1, len(tasks) // (4 * jobs))):
                result.outcomes.append(outcome)
                if progress:
                    progress(len(result.outcomes), len(tasks))
    else:
        for task in tasks:
            result.outcomes.append(_replicate(task))
            if progress:
                progress(len(result.outcomes), len(tasks))
    return result


# ---------------------------------------------------------------------------
# Config and CSV I/O
# ---------------------------------------------------------------------------

def load_config(path) -> tuple[list[ScenarioSpec], dict]:
    """Read a YAML experiment file: ``defaults`` merged into each entry of ``scenarios``.

    Top-level ``seed`` and ``replications`` act as defaults too. Returns the
    specs and the ``method_config`` mapping (MethodConfig overrides).
    """
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ValueError("config must be a mapping")
    allowed = {"seed", "replications", "defaults", "scenarios", "method_config", "description"}
    for key in raw:
        if key not in allowed:
            raise KeyError(key)
    base = dict(raw.get("defaults") or {})
    for key in ("seed", "replications"):
        if key in raw:
            base.setdefault(key, raw[key])
    entries = raw.get("scenarios") or [{}]
    specs = []
    for entry in entries:
        merged = {**base, **(entry or {})}
        specs.append(ScenarioSpec.from_dict(merged))
    method_config = dict(raw.get("method_config") or {})
    valid = {f.name for f in dataclasses.fields(MethodConfig)} - {"fit"}
    for key in method_config:
        if key not in valid:
            raise KeyError(f"method_config.{key}")
    return specs, method_config


def dump_config(specs: Sequence[ScenarioSpec], path, method_config: dict | None = None) -> None:
    doc = {"scenarios": [s.to_dict() for s in specs]}
    if method_config:
        doc["method_config"] = method_config
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def method_config_from(overrides: dict) -> MethodConfig:
    o = dict(overrides)
    if "delta_grid" in o:
        o["delta_grid"] = tuple(float(x) for x in o["delta_grid"])
    return MethodConfig(**o)


def _fmt(value) -> str:
    if isinstance(value, float):
        return "NA" if math.isnan(value) else repr(value)
    return str(value)


def write_rows(rows: Sequence[dict], path) -> None:
    if not rows:
        raise ValueError("nothing to write")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(rows[0]))
        for row in rows:
            w.writerow([_fmt(v) for v in row.values()])


def default_jobs() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)
