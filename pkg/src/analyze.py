"""
Real-data pipeline: CSV ingestion with listwise deletion and log transforms,
OLS against the DetMCD-based regression, and a paired pairs-bootstrap for
the robust slope and the robust-minus-OLS gap.
"""

import io
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from src import config
from src.errors import (
    BootstrapInstabilityError,
    DegenerateDataError,
    EivError,
    EmptyDataError,
    InsufficientDataError,
    ParameterError,
    SchemaError,
)
from src.estimators import FitOptions, fit_estimator, resolve_tag
from src.randgen import RngStream, contamination_mask, normal

logger = logging.getLogger(__name__)

NA_VALUES = ["", "NA"]
# Stream id of the full-sample robust fit; resample b uses stream b
FULL_SAMPLE_STREAM = 2**32


@dataclass
class ColumnSpec:
    response: str
    regressors: List[str]
    log_transform: Dict[str, bool] = field(default_factory=dict)
    drop_nonpositive: bool = True

    def __post_init__(self):
        if not self.regressors:
            raise ParameterError("At least one regressor column is required")
        if self.response in self.regressors:
            raise ParameterError(f"Response '{self.response}' is also listed as a regressor")
        unknown = set(self.log_transform) - set(self.columns)
        if unknown:
            raise ParameterError(f"log_transform names unselected column(s): {sorted(unknown)}")

    @property
    def columns(self) -> List[str]:
        return [self.response, *self.regressors]

    @classmethod
    def with_log(cls, response: str, regressors: Sequence[str], log: Union[str, Sequence[str]] = "all", **kw) -> "ColumnSpec":
        """log is 'all', 'none', or a list of column names to log."""
        cols = [response, *regressors]
        if isinstance(log, str) and log.lower() == "all":
            flags = {c: True for c in cols}
        elif isinstance(log, str) and log.lower() == "none":
            flags = {}
        else:
            names = [s.strip() for s in log.split(",")] if isinstance(log, str) else list(log)
            flags = {c: True for c in names if c}
        return cls(response=response, regressors=list(regressors), log_transform=flags, **kw)


@dataclass
class IngestResult:
    x: np.ndarray
    y: np.ndarray
    rows_read: int
    dropped: int
    columns: List[str]

    def __iter__(self):
        return iter((self.x, self.y))


@dataclass
class Comparison:
    other_estimator: str
    other_estimate: float
    difference: float
    se_difference: float


@dataclass
class BootstrapReport:
    estimator: str
    estimate: float
    se_classical: Optional[float]
    se_bootstrap: float
    n_boot: int
    failures: int = 0
    seed: int = config.DEFAULT_SEED
    comparison: Optional[Comparison] = None


@dataclass
class AnalyzeOptions:
    n_boot: int = config.DEFAULT_BOOT
    seed: int = config.DEFAULT_SEED
    threads: int = 1
    robust: str = "DetMCD"
    compare_with: str = "OLS"
    n_subsets: int = config.DEFAULT_SUBSETS


@dataclass
class FitSummary:
    estimator: str
    intercept: float
    slopes: List[float]
    stderr_slopes: Optional[List[float]]
    r_squared: float


@dataclass
class AnalysisReport:
    dataset: str
    response: str
    regressors: List[str]
    n: int
    dropped: int
    seed: int
    fits: List[FitSummary]
    bootstrap: List[BootstrapReport]


def ingest_frame(frame: pd.DataFrame, spec: ColumnSpec) -> IngestResult:
    missing = [c for c in spec.columns if c not in frame.columns]
    if missing:
        raise SchemaError(f"Column(s) not found: {missing}. Available: {list(frame.columns)}")
    rows_read = len(frame)
    data = frame[spec.columns].apply(pd.to_numeric, errors="coerce")
    keep = data.notna().all(axis=1)

    for col, flag in spec.log_transform.items():
        if not flag:
            continue
        nonpositive = keep & (data[col] <= 0)
        if nonpositive.any():
            if not spec.drop_nonpositive:
                raise DegenerateDataError(
                    f"Column '{col}' has {int(nonpositive.sum())} non-positive value(s) and cannot be logged"
                )
            keep &= ~nonpositive

    data = data[keep]
    dropped = rows_read - len(data)
    if data.empty:
        raise EmptyDataError(f"No usable rows left ({rows_read} read, all dropped)")
    if dropped:
        logger.info(f"Dropped {dropped} of {rows_read} rows (missing, non-numeric or non-positive under log)")

    for col, flag in spec.log_transform.items():
        if flag:
            data[col] = np.log(data[col])
    return IngestResult(
        x=data[spec.regressors].to_numpy(dtype=np.float64),
        y=data[spec.response].to_numpy(dtype=np.float64),
        rows_read=rows_read,
        dropped=dropped,
        columns=spec.columns,
    )


def ingest_csv(path: str, spec: ColumnSpec) -> IngestResult:
    """Reads a UTF-8 CSV with a header row; empty fields and "NA" are missing."""
    if not os.path.exists(path):
        raise ParameterError(f"Data file not found: {path}")
    try:
        frame = pd.read_csv(path, na_values=NA_VALUES, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError as e:
        raise EmptyDataError(f"{path} is empty") from e
    except pd.errors.ParserError as e:
        raise SchemaError(f"{path}: {e}") from e
    return ingest_frame(frame, spec)


@dataclass
class BootstrapDraws:
    tags: List[str]
    full: list  # full-sample RegressionFit per tag
    # successful resamples x tags x slopes
    slopes: np.ndarray
    n_boot: int
    failures: int
    seed: int


def _resample_fit(x, y, tags: Sequence[str], seed: int, b: int, n_subsets: int):
    rng = RngStream(seed, b)
    idx = rng.integers(len(y), len(y))
    xb, yb = x[idx], y[idx]
    slopes = []
    for tag in tags:
        try:
            fit = fit_estimator(tag, xb, yb, FitOptions(n_subsets=n_subsets, rng=rng))
        except EivError as e:
            logger.debug(f"resample {b}: {tag} failed: {e}")
            return None
        slopes.append(np.asarray(fit.slopes, dtype=np.float64))
    return slopes


def _resample_batch(x, y, tags, seed, ids, n_subsets):
    return [_resample_fit(x, y, tags, seed, b, n_subsets) for b in ids]


def bootstrap_slopes(
    x,
    y,
    tags: Sequence[str],
    n_boot: int = config.DEFAULT_BOOT,
    seed: int = config.DEFAULT_SEED,
    threads: int = 1,
    n_subsets: int = config.DEFAULT_SUBSETS,
) -> BootstrapDraws:
    """
    One pass of case resampling: every estimator in `tags` is refitted on the
    same resamples and every slope is kept. Resample b draws from RngStream(seed, b).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    if n < 20:
        raise InsufficientDataError(f"pairs_bootstrap needs n >= 20 (n={n})")
    if n_boot < 100:
        raise ParameterError(f"n_boot must be >= 100, got {n_boot}")
    tags = [resolve_tag(t) for t in tags]

    full_rng = RngStream(seed, FULL_SAMPLE_STREAM)
    full = [fit_estimator(t, x, y, FitOptions(n_subsets=n_subsets, rng=full_rng)) for t in tags]

    ids = list(range(n_boot))
    n_batches = max(1, min(n_boot, 4 * max(1, threads)))
    batches = [list(map(int, b)) for b in np.array_split(ids, n_batches) if len(b)]
    results = Parallel(n_jobs=threads)(
        delayed(_resample_batch)(x, y, tags, seed, batch, n_subsets) for batch in batches
    )
    draws = [r for batch in results for r in batch]
    good = [np.stack(r) for r in draws if r is not None]
    slopes = np.stack(good) if good else np.empty((0, len(tags), x.shape[1]))
    failures = n_boot - slopes.shape[0]
    if failures > config.MAX_BOOTSTRAP_FAILURE_SHARE * n_boot:
        raise BootstrapInstabilityError(
            f"{tags[0]} bootstrap failed on {failures}/{n_boot} resamples "
            f"(cap {config.MAX_BOOTSTRAP_FAILURE_SHARE:.0%})"
        )
    if failures:
        logger.warning(f"Bootstrap: {failures}/{n_boot} resamples failed and were skipped")
    logger.info(f"Bootstrap of {','.join(tags)} finished: {slopes.shape[0]} resamples")
    return BootstrapDraws(tags, full, slopes, n_boot, failures, seed)


def _coefficient_report(draws: BootstrapDraws, coefficient: int) -> BootstrapReport:
    main_fit = draws.full[0]
    column = draws.slopes[:, :, coefficient]
    se_classical = None
    if main_fit.stderr_slopes is not None:
        se_classical = float(main_fit.stderr_slopes[coefficient])

    comparison = None
    if len(draws.tags) > 1:
        other = float(draws.full[1].slopes[coefficient])
        comparison = Comparison(
            other_estimator=draws.tags[1],
            other_estimate=other,
            difference=float(main_fit.slopes[coefficient]) - other,
            se_difference=float(np.std(column[:, 0] - column[:, 1], ddof=1)),
        )
    return BootstrapReport(
        estimator=draws.tags[0],
        estimate=float(main_fit.slopes[coefficient]),
        se_classical=se_classical,
        se_bootstrap=float(np.std(column[:, 0], ddof=1)),
        n_boot=draws.n_boot,
        failures=draws.failures,
        seed=draws.seed,
        comparison=comparison,
    )


def pairs_bootstrap_all(
    x,
    y,
    estimator: str = "DetMCD",
    n_boot: int = config.DEFAULT_BOOT,
    seed: int = config.DEFAULT_SEED,
    compare_with: Optional[str] = "OLS",
    threads: int = 1,
    n_subsets: int = config.DEFAULT_SUBSETS,
) -> List[BootstrapReport]:
    """
    Case-resampling bootstrap of every slope, one report per coefficient.
    With compare_with set, both estimators are refitted on the same resamples
    so the SE of their difference accounts for their dependence.
    """
    tags = [estimator] if compare_with is None else [estimator, compare_with]
    draws = bootstrap_slopes(x, y, tags, n_boot=n_boot, seed=seed, threads=threads, n_subsets=n_subsets)
    return [_coefficient_report(draws, j) for j in range(draws.slopes.shape[2])]


def pairs_bootstrap(
    x,
    y,
    estimator: str = "DetMCD",
    n_boot: int = config.DEFAULT_BOOT,
    seed: int = config.DEFAULT_SEED,
    compare_with: Optional[str] = "OLS",
    threads: int = 1,
    coefficient: int = 0,
    n_subsets: int = config.DEFAULT_SUBSETS,
) -> BootstrapReport:
    """Bootstrap report for a single slope; see pairs_bootstrap_all."""
    p = 1 if np.ndim(x) == 1 else np.shape(x)[1]
    if not 0 <= coefficient < p:
        raise ParameterError(f"coefficient {coefficient} outside 0..{p - 1}")
    reports = pairs_bootstrap_all(
        x, y,
        estimator=estimator,
        n_boot=n_boot,
        seed=seed,
        compare_with=compare_with,
        threads=threads,
        n_subsets=n_subsets,
    )
    return reports[coefficient]


def _summary(fit, tag: str) -> FitSummary:
    return FitSummary(
        estimator=tag,
        intercept=float(fit.intercept),
        slopes=[float(s) for s in fit.slopes],
        stderr_slopes=None if fit.stderr_slopes is None else [float(s) for s in fit.stderr_slopes],
        r_squared=float(fit.r_squared),
    )


def analyze_frame(data: IngestResult, spec: ColumnSpec, options: AnalyzeOptions, dataset: str = "") -> AnalysisReport:
    x, y = data
    rng = RngStream(options.seed, FULL_SAMPLE_STREAM)
    fit_options = FitOptions(n_subsets=options.n_subsets, rng=rng)
    classical = fit_estimator(options.compare_with, x, y, fit_options)
    robust = fit_estimator(options.robust, x, y, fit_options)

    reports = pairs_bootstrap_all(
        x, y,
        estimator=options.robust,
        n_boot=options.n_boot,
        seed=options.seed,
        compare_with=options.compare_with,
        threads=options.threads,
        n_subsets=options.n_subsets,
    )
    return AnalysisReport(
        dataset=dataset,
        response=spec.response,
        regressors=spec.regressors,
        n=int(y.size),
        dropped=data.dropped,
        seed=options.seed,
        fits=[_summary(classical, resolve_tag(options.compare_with)), _summary(robust, resolve_tag(options.robust))],
        bootstrap=reports,
    )


def analyze_dataset(path: str, spec: ColumnSpec, options: Optional[AnalyzeOptions] = None) -> AnalysisReport:
    options = options or AnalyzeOptions()
    data = ingest_csv(path, spec)
    logger.info(f"Analyzing {os.path.basename(path)}: n={data.y.size}, dropped={data.dropped}")
    return analyze_frame(data, spec, options, dataset=path)


def report_rows(report: AnalysisReport) -> List[Dict[str, object]]:
    """Table rows: one per fitted slope plus the robust-minus-classical gap."""
    rows = []
    for fit in report.fits:
        for j, name in enumerate(report.regressors):
            b = report.bootstrap[j] if j < len(report.bootstrap) else None
            se_classical = None if fit.stderr_slopes is None else fit.stderr_slopes[j]
            rows.append({
                "estimator": fit.estimator,
                "coefficient": name,
                "estimate": fit.slopes[j],
                "se_classical": se_classical,
                "se_bootstrap": b.se_bootstrap if (b and b.estimator == fit.estimator) else None,
                "r_squared": fit.r_squared,
                "n": report.n,
                "dropped": report.dropped,
                "seed": report.seed,
            })
    for j, b in enumerate(report.bootstrap):
        if b.comparison is None:
            continue
        rows.append({
            "estimator": f"{b.estimator}-{b.comparison.other_estimator}",
            "coefficient": report.regressors[j],
            "estimate": b.comparison.difference,
            "se_classical": None,
            "se_bootstrap": b.comparison.se_difference,
            "r_squared": None,
            "n": report.n,
            "dropped": report.dropped,
            "seed": report.seed,
        })
    return rows


def render_report(report: AnalysisReport, fmt: str = "csv") -> str:
    fmt = fmt.lower()
    if fmt == "csv":
        buffer = io.StringIO()
        pd.DataFrame(report_rows(report)).to_csv(buffer, index=False, float_format="%.6g", lineterminator="\n")
        return buffer.getvalue()
    if fmt == "json":
        doc = asdict(report)
        doc["bootstrap_method"] = "pairs (case resampling); the difference SE uses paired resamples"
        return json.dumps(doc, indent=2) + "\n"
    raise ParameterError(f"Unknown format '{fmt}'. Use csv or json")


def make_synthetic_dataset(
    n: int = 193,
    seed: int = config.DEFAULT_SEED,
    slope: float = -0.5,
    contamination: float = 0.2,
    shift: float = 2.0,
) -> pd.DataFrame:
    """
    A frame in the UN layout (country, infant.mortality, gdp): log-linear
    mortality in gdp, with ln(gdp) shifted upward by `shift` on a
    `contamination` share of the rows to mimic mismeasured income.
    """
    rng = RngStream(seed, 0)
    log_gdp = normal(rng, 7.5, 1.6, n)
    log_im = 6.5 + slope * log_gdp + normal(rng, 0.0, 0.45, n)
    observed = log_gdp.copy()
    mask = contamination_mask(rng, n, contamination)
    observed[mask] += shift
    return pd.DataFrame({
        "country": [f"Country{i + 1:03d}" for i in range(n)],
        "infant.mortality": np.round(np.exp(log_im), 1),
        "gdp": np.round(np.exp(observed)).astype(int),
    })
