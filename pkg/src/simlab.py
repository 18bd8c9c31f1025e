"""
Monte-Carlo replication engine for the errors-in-variables designs.

Each replication r draws its sample from RngStream(seed, r), fits every
requested estimator, and keeps the slope estimates. Metrics are computed
from the full collected vector, so worker count never changes the output.
"""

import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from src import config, randgen
from src.classical import hc3_stderr
from src.errors import EivError, NumericalFailure, ParameterError, ReplicationFailureError
from src.estimators import FitOptions, fit_estimator
from src.numerics import quantile, solve_spd
from src.robust_scatter import classify_points, detmcd
from src.scenarios import ScenarioConfig, builtin_scenarios  # noqa: F401  (re-exported)

logger = logging.getLogger(__name__)

CI_METHOD = "empirical 2.5%/97.5% quantiles (linear interpolation) of the replicate estimates"
TABLE_COLUMNS = [
    "estimator", "coefficient", "bias", "rmse", "ci_low", "ci_high", "mean", "sd",
    "replications", "seed", "n", "failures", "mc_se", "mean_se", "mean_se_hc3",
]


def _missing(value) -> bool:
    return value is None or (isinstance(value, float) and math.isnan(value))


@dataclass(eq=False)
class MetricsRow:
    estimator: str
    coefficient: str
    bias: float
    rmse: float
    ci_low: float
    ci_high: float
    mean_estimate: float
    sd_estimate: float
    replications: int
    seed: int
    n: int = 0
    failures: int = 0
    mc_se: float = float("nan")
    # average reported standard error over replications (OLS only)
    mean_se: Optional[float] = None
    mean_se_hc3: Optional[float] = None

    def to_record(self) -> Dict[str, Any]:
        record = asdict(self)
        record["mean"] = record.pop("mean_estimate")
        record["sd"] = record.pop("sd_estimate")
        return {col: record[col] for col in TABLE_COLUMNS}

    def __eq__(self, other):
        # NaN and None both mean "not available"; JSON carries either as null
        if not isinstance(other, MetricsRow):
            return NotImplemented
        for f in fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if _missing(a) and _missing(b):
                continue
            if a != b:
                return False
        return True

    @classmethod
    def from_record(cls, record: Dict[str, Any]) -> "MetricsRow":
        data = dict(record)
        data["mean_estimate"] = data.pop("mean")
        data["sd_estimate"] = data.pop("sd")
        for f in fields(cls):
            if f.type in (float, "float") and data.get(f.name) is None:
                data[f.name] = float("nan")
        return cls(**data)


@dataclass
class Sample:
    x: np.ndarray  # observed regressors, n x p
    y: np.ndarray
    x_true: np.ndarray
    masks: List[np.ndarray] = field(default_factory=list)  # one per contamination entry
    hetero_mask: Optional[np.ndarray] = None


@dataclass
class ReplicateOutcome:
    rep: int
    estimates: Dict[str, Optional[np.ndarray]]
    errors: Dict[str, str]
    stderr: Optional[np.ndarray] = None
    stderr_hc3: Optional[np.ndarray] = None
    ols_r_squared: Optional[float] = None


@dataclass
class ScenarioResult:
    scenario: str
    rows: List[MetricsRow]
    metadata: Dict[str, Any]
    outcomes: Dict[int, List[ReplicateOutcome]] = field(default_factory=dict, repr=False)


def coefficient_names(p: int) -> List[str]:
    if p == 1:
        return ["x"]
    if p == 2:
        return ["x", "z"]
    return [f"x{j + 1}" for j in range(p)]


def _draw_regressors(cfg: ScenarioConfig, rng: randgen.RngStream, n: int) -> np.ndarray:
    laws = cfg.regressor_law
    if cfg.regressor_correlation != 0.0:
        sds = np.array([law.sd for law in laws])
        means = np.array([law.mean for law in laws])
        if cfg.p == 2 and sds[0] == sds[1]:
            a, b = randgen.bivariate_correlated(rng, float(sds[0]), cfg.regressor_correlation, n)
            return np.column_stack([a, b]) + means
        corr = np.full((cfg.p, cfg.p), cfg.regressor_correlation)
        np.fill_diagonal(corr, 1.0)
        cov = corr * np.outer(sds, sds)
        return rng.generator.multivariate_normal(means, cov, size=n, method="cholesky")
    cols = []
    for law in laws:
        if law.kind == "chisq":
            cols.append(randgen.chisq(rng, law.df, n))
        else:
            cols.append(randgen.normal(rng, law.mean, law.sd, n))
    return np.column_stack(cols)


def _draw_errors(law, rng: randgen.RngStream, size: int) -> np.ndarray:
    if law.kind == "exp_median_zero":
        return law.sd * randgen.exp_median_zero(rng, size)
    return randgen.normal(rng, law.mean, law.sd, size)


def generate_sample_with_masks(
    cfg: ScenarioConfig,
    rep: int,
    n: Optional[int] = None,
    rng: Optional[randgen.RngStream] = None,
) -> Sample:
    """
    Draws one replication: regressors, y = alpha + X beta + u_y, then the
    contamination errors added to their target regressors. Masks of one
    disjoint_group are drawn sequentially without overlap.
    """
    n = n or cfg.n
    rng = rng or randgen.RngStream(cfg.seed, rep)
    x_true = _draw_regressors(cfg, rng, n)

    if cfg.noise_law == "exp_median_zero":
        noise = cfg.noise_sd * randgen.exp_median_zero(rng, n)
    else:
        noise = randgen.normal(rng, 0.0, cfg.noise_sd, n)

    hetero_mask = None
    if cfg.hetero_rule is not None:
        hetero_mask = randgen.contamination_mask(rng, n, cfg.hetero_rule.fraction)
        noise[hetero_mask] *= np.exp(-x_true[hetero_mask, 0])

    y = cfg.alpha + x_true @ np.asarray(cfg.beta, dtype=np.float64) + noise

    x = x_true.copy()
    masks = []
    taken: Dict[str, np.ndarray] = {}
    for spec in cfg.contamination:
        exclude = taken.get(spec.disjoint_group) if spec.disjoint_group else None
        mask = randgen.contamination_mask(rng, n, spec.fraction, exclude=exclude)
        x[mask, spec.target] += _draw_errors(spec.law, rng, mask.size)
        if spec.disjoint_group:
            taken[spec.disjoint_group] = np.union1d(taken.get(spec.disjoint_group, mask[:0]), mask)
        masks.append(mask)
    return Sample(x=x, y=y, x_true=x_true, masks=masks, hetero_mask=hetero_mask)


def generate_sample(cfg: ScenarioConfig, rep: int, n: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
    sample = generate_sample_with_masks(cfg, rep, n)
    return sample.x, sample.y


def check_disjoint(cfg: ScenarioConfig, sample: Sample) -> None:
    groups: Dict[str, List[np.ndarray]] = {}
    for spec, mask in zip(cfg.contamination, sample.masks):
        if spec.disjoint_group:
            groups.setdefault(spec.disjoint_group, []).append(mask)
    for name, masks in groups.items():
        joined = np.concatenate(masks) if masks else np.empty(0)
        if np.unique(joined).size != joined.size:
            raise ReplicationFailureError(f"Contamination masks of group '{name}' overlap")


def sample_frame(cfg: ScenarioConfig, rep: int = 0, n: Optional[int] = None) -> pd.DataFrame:
    """
    One replication as a table: true and observed regressors, the response,
    which rows were contaminated, and the DetMCD point label of every row.
    """
    if rep < 0:
        raise ParameterError(f"rep must be >= 0, got {rep}")
    n = n or cfg.sizes[0]
    sample = generate_sample_with_masks(cfg, rep, n)
    check_disjoint(cfg, sample)

    names = coefficient_names(cfg.p)
    frame = pd.DataFrame({"row": np.arange(n)})
    for j, name in enumerate(names):
        frame[f"{name}_true"] = sample.x_true[:, j]
        frame[name] = sample.x[:, j]
    frame["y"] = sample.y

    contaminated = np.zeros(n, dtype=bool)
    for mask in sample.masks:
        contaminated[mask] = True
    frame["contaminated"] = contaminated
    if sample.hetero_mask is not None:
        frame["hetero"] = np.isin(np.arange(n), sample.hetero_mask)

    joined = np.column_stack([sample.x, sample.y])
    taxonomy = classify_points(detmcd(joined), joined)
    frame["distance"] = taxonomy.distances
    frame["std_residual"] = taxonomy.std_residuals
    frame["label"] = taxonomy.labels
    logger.info(f"{cfg.name} rep {rep}: {taxonomy.counts()}")
    return frame


def emit_sample(frame: pd.DataFrame, fmt: str = "csv", metadata: Optional[Dict[str, Any]] = None) -> str:
    fmt = fmt.lower()
    if fmt == "csv":
        buffer = io.StringIO()
        frame.to_csv(buffer, index=False, float_format="%.10g", lineterminator="\n")
        return buffer.getvalue()
    if fmt == "json":
        doc = {"metadata": metadata or {}, "rows": frame.to_dict(orient="records")}
        return json.dumps(doc, indent=2, default=_json_safe) + "\n"
    raise ParameterError(f"Unknown format '{fmt}'. Use csv or json")


def _replicate(cfg: ScenarioConfig, n: int, rep: int, n_subsets: int) -> ReplicateOutcome:
    rng = randgen.RngStream(cfg.seed, rep)
    sample = generate_sample_with_masks(cfg, rep, n, rng=rng)
    check_disjoint(cfg, sample)
    options = FitOptions(n_subsets=n_subsets, mm_efficiency=cfg.mm_efficiency, rng=rng)
    outcome = ReplicateOutcome(rep=rep, estimates={}, errors={})
    for tag in cfg.estimators:
        try:
            fit = fit_estimator(tag, sample.x, sample.y, options)
        except EivError as e:
            logger.debug(f"rep {rep}: {tag} failed: {e}")
            outcome.estimates[tag] = None
            outcome.errors[tag] = f"{type(e).__name__}: {e}"
            continue
        outcome.estimates[tag] = np.asarray(fit.slopes, dtype=np.float64)
        if tag == "OLS":
            outcome.stderr = fit.stderr_slopes
            outcome.ols_r_squared = fit.r_squared
            try:
                outcome.stderr_hc3 = hc3_stderr(sample.x, sample.y, fit)[1:]
            except NumericalFailure as e:
                logger.debug(f"rep {rep}: HC3 unavailable: {e}")
    return outcome


def _replicate_batch(cfg: ScenarioConfig, n: int, reps: List[int], n_subsets: int) -> List[ReplicateOutcome]:
    return [_replicate(cfg, n, rep, n_subsets) for rep in reps]


def summarize_estimates(
    estimates,
    true_value: float,
    estimator: str,
    coefficient: str,
    seed: int,
    n: int = 0,
    failures: int = 0,
    stderr=None,
    stderr_hc3=None,
) -> MetricsRow:
    """Bias, RMSE, empirical 95% interval and spread of a vector of replicate estimates."""
    e = np.sort(np.asarray(estimates, dtype=np.float64))
    if e.size == 0:
        raise ReplicationFailureError(f"No successful replications for {estimator}/{coefficient}")
    mean = float(e.mean())
    sd = float(e.std(ddof=1)) if e.size > 1 else 0.0

    def _avg(values):
        if values is None or len(values) == 0:
            return None
        return float(np.mean(values))

    return MetricsRow(
        estimator=estimator,
        coefficient=coefficient,
        bias=mean - true_value,
        rmse=float(np.sqrt(np.mean((e - true_value) ** 2))),
        ci_low=quantile(e, 0.025),
        ci_high=quantile(e, 0.975),
        mean_estimate=mean,
        sd_estimate=sd,
        replications=int(e.size),
        seed=seed,
        n=n,
        failures=failures,
        mc_se=sd / math.sqrt(e.size),
        mean_se=_avg(stderr),
        mean_se_hc3=_avg(stderr_hc3),
    )


def population_diagnostics(cfg: ScenarioConfig) -> Dict[str, Any]:
    """
    Second-moment quantities implied by the design: the R^2 of the error-free
    model (heteroscedastic rule ignored) and the probability limit of the OLS
    slopes on the contaminated regressors. Contamination entries on one
    regressor are treated as non-overlapping.
    """
    p = cfg.p
    beta = np.asarray(cfg.beta, dtype=np.float64)
    sds = np.sqrt([law.variance for law in cfg.regressor_law])
    corr = np.full((p, p), cfg.regressor_correlation)
    np.fill_diagonal(corr, 1.0)
    sigma_x = corr * np.outer(sds, sds)

    noise_var = cfg.noise_sd**2
    signal = float(beta @ sigma_x @ beta)
    clean_r2 = signal / (signal + noise_var) if signal + noise_var > 0 else float("nan")

    first = np.zeros(p)
    second = np.zeros(p)
    for spec in cfg.contamination:
        m, m2 = spec.law.moments
        first[spec.target] += spec.fraction * m
        second[spec.target] += spec.fraction * m2
    sigma_u = np.diag(second - first**2)
    for a, sa in enumerate(cfg.contamination):
        for b, sb in enumerate(cfg.contamination):
            same_group = sa.disjoint_group and sa.disjoint_group == sb.disjoint_group
            if a != b and same_group and sa.target != sb.target:
                sigma_u[sa.target, sb.target] -= sa.fraction * sa.law.moments[0] * sb.fraction * sb.law.moments[0]

    cross = sigma_x @ beta
    if cfg.hetero_rule is not None:
        law0 = cfg.regressor_law[0]
        noise_mean = cfg.noise_sd * (1.0 - math.log(2.0)) if cfg.noise_law == "exp_median_zero" else 0.0
        if law0.kind == "normal":
            # Stein: cov(x_j, exp(-x_0)) = -cov(x_j, x_0) E[exp(-x_0)]
            cov_h = -sigma_x[:, 0] * math.exp(-law0.mean + 0.5 * law0.sd**2)
        elif p == 1:
            k = law0.df
            cov_h = np.array([-(2.0 * k / 3.0) * 3.0 ** (-k / 2.0)])
        else:
            cov_h = None
        cross = None if cov_h is None else cross + cfg.hetero_rule.fraction * noise_mean * cov_h

    ols_limit = None
    if cross is not None:
        ols_limit = solve_spd(sigma_x + sigma_u, cross).tolist()
    return {
        "clean_r_squared": clean_r2,
        "ols_limit": ols_limit,
        "ols_limit_bias": None if ols_limit is None else (np.asarray(ols_limit) - beta).tolist(),
    }


def _failure_check(cfg: ScenarioConfig, n: int, outcomes: List[ReplicateOutcome]) -> Dict[str, int]:
    reps = len(outcomes)
    failures = {tag: 0 for tag in cfg.estimators}
    messages: Dict[str, list] = {tag: [] for tag in cfg.estimators}
    for o in outcomes:
        for tag, msg in o.errors.items():
            failures[tag] += 1
            messages[tag].append(f"rep {o.rep}: {msg}")
    cap = config.MAX_REPLICATION_FAILURE_SHARE * reps
    over = {tag: count for tag, count in failures.items() if count > cap}
    if over:
        detail = ", ".join(f"{tag} {count}/{reps}" for tag, count in over.items())
        raise ReplicationFailureError(
            f"{cfg.name} (n={n}): failed replications exceed "
            f"{config.MAX_REPLICATION_FAILURE_SHARE:.0%}: {detail}",
            diagnostics={tag: messages[tag] for tag in over},
        )
    for tag, count in failures.items():
        if count:
            logger.warning(f"{cfg.name} (n={n}): {tag} failed on {count}/{reps} replications")
    return failures


def rows_from_outcomes(cfg: ScenarioConfig, n: int, outcomes: List[ReplicateOutcome]) -> List[MetricsRow]:
    failures = _failure_check(cfg, n, outcomes)
    names = coefficient_names(cfg.p)
    rows = []
    for tag in cfg.estimators:
        good = [o for o in outcomes if o.estimates.get(tag) is not None]
        matrix = np.vstack([o.estimates[tag] for o in good])
        for j, name in enumerate(names):
            stderr = stderr_hc3 = None
            if tag == "OLS":
                stderr = [o.stderr[j] for o in good if o.stderr is not None]
                stderr_hc3 = [o.stderr_hc3[j] for o in good if o.stderr_hc3 is not None]
            rows.append(
                summarize_estimates(
                    matrix[:, j], cfg.beta[j], tag, name, cfg.seed,
                    n=n, failures=failures[tag], stderr=stderr, stderr_hc3=stderr_hc3,
                )
            )
    return rows


def run_scenario_result(
    cfg: ScenarioConfig,
    threads: int = 1,
    n_subsets: int = config.DEFAULT_SUBSETS,
    store=None,
) -> ScenarioResult:
    """Runs every sample size of the scenario; rows are grouped by n, then estimator order."""
    cfg.validate()
    all_rows: List[MetricsRow] = []
    by_n: Dict[int, List[ReplicateOutcome]] = {}
    measured_r2: Dict[str, float] = {}
    reps = list(range(cfg.replications))
    n_batches = max(1, min(len(reps), 4 * max(1, threads)))
    batches = [list(map(int, b)) for b in np.array_split(reps, n_batches) if len(b)]

    for n in cfg.sizes:
        logger.info(f"{cfg.name}: n={n}, {cfg.replications} replications, estimators {','.join(cfg.estimators)}")
        results = Parallel(n_jobs=threads)(
            delayed(_replicate_batch)(cfg, n, batch, n_subsets) for batch in batches
        )
        outcomes = sorted((o for batch in results for o in batch), key=lambda o: o.rep)
        by_n[n] = outcomes
        all_rows.extend(rows_from_outcomes(cfg, n, outcomes))
        r2 = [o.ols_r_squared for o in outcomes if o.ols_r_squared is not None]
        if r2:
            measured_r2[str(n)] = float(np.mean(r2))
        if store is not None:
            store.insert_outcomes(cfg.name, n, cfg.seed, outcomes)

    metadata = {
        "scenario": cfg.name,
        "description": cfg.description,
        "seed": cfg.seed,
        "replications": cfg.replications,
        "sizes": cfg.sizes,
        "estimators": cfg.estimators,
        "ci_method": CI_METHOD,
        "population": population_diagnostics(cfg),
        "mean_ols_r_squared": measured_r2,
    }
    return ScenarioResult(scenario=cfg.name, rows=all_rows, metadata=metadata, outcomes=by_n)


def run_scenario(cfg: ScenarioConfig, threads: int = 1, n_subsets: int = config.DEFAULT_SUBSETS, store=None) -> List[MetricsRow]:
    return run_scenario_result(cfg, threads=threads, n_subsets=n_subsets, store=store).rows


def _json_safe(value):
    if isinstance(value, float) and math.isnan(value):
        return None
    if isinstance(value, (np.floating, np.integer)):
        return _json_safe(value.item())
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def emit_table(rows: List[MetricsRow], fmt: str = "csv", metadata: Optional[Dict[str, Any]] = None) -> str:
    """Renders rows as CSV (6 significant digits) or as a JSON document with metadata."""
    if not rows:
        raise ParameterError("emit_table needs at least one row")
    fmt = fmt.lower()
    records = [row.to_record() for row in rows]
    if fmt == "csv":
        buffer = io.StringIO()
        pd.DataFrame(records, columns=TABLE_COLUMNS).to_csv(buffer, index=False, float_format="%.6g", lineterminator="\n")
        return buffer.getvalue()
    if fmt == "json":
        doc = {
            "metadata": metadata or {"ci_method": CI_METHOD},
            "rows": [{k: _json_safe(v) for k, v in r.items()} for r in records],
        }
        return json.dumps(doc, indent=2, default=_json_safe) + "\n"
    raise ParameterError(f"Unknown format '{fmt}'. Use csv or json")


def rows_from_json(text: str) -> List[MetricsRow]:
    doc = json.loads(text)
    return [MetricsRow.from_record(r) for r in doc["rows"]]
