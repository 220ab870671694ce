"""Monte-Carlo generators and the two validation study harnesses.

Study 1 draws stratified tables from the negative-dependence model at a
reference configuration (N_A=50,000, N_B=20,000, alpha=0.05, p1=0.15,
p2A=0.05, p2B=0.15) and summarizes bias, CV, and interval coverage of the
naive and model-based estimators. Study 2 sweeps a grid that violates the
shared-p1 identification assumption and tracks bias/RMSE of the size
estimates. Replicates use counter-based random streams keyed by replicate
index, so summaries are independent of worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import mle, model
from ._parallel import run_indexed
from .exceptions import FitError, InfeasibleConstraintsError, ValidationError
from .inference import confidence_interval, se_from_hessian
from .mle import DEFAULT_SEED, FitOptions
from .tables import CellCounts, SurveyData, naive_estimate

__all__ = [
    "GeneratorConfig",
    "SimulationSummary",
    "Study1Result",
    "CoverageRow",
    "CoverageResult",
    "Study2Row",
    "Study2Result",
    "study1_config",
    "scenario_grid",
    "cell_probabilities_for",
    "draw_counts",
    "run_study1",
    "run_coverage",
    "run_study2",
]

DEPENDENCE_KINDS = ("negative", "positive", "independent")

_MAX_REDRAWS = 10_000


@dataclass(frozen=True)
class GeneratorConfig:
    """Per-stratum generator settings for one simulated population.

    ``p1_a`` and ``p1_b`` may differ (that is the point of Study 2); the
    fitted model always assumes they are equal.
    """

    n_a: int
    n_b: int
    alpha: float
    p1_a: float
    p1_b: float
    p2_a: float
    p2_b: float
    dependence: str = "negative"
    replicates: int = 500
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.n_a < 1 or self.n_b < 1:
            raise ValidationError("stratum sizes must be >= 1")
        if self.replicates < 1:
            raise ValidationError("replicates must be >= 1")
        if self.dependence not in DEPENDENCE_KINDS:
            raise ValidationError(
                f"dependence must be one of {DEPENDENCE_KINDS}, got {self.dependence!r}"
            )
        for name in ("alpha", "p1_a", "p1_b", "p2_a", "p2_b"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValidationError(f"{name} must be in [0, 1], got {value}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must fit in 64 unsigned bits")


def study1_config(replicates: int = 500, seed: int = DEFAULT_SEED) -> GeneratorConfig:
    """The reference Study-1 configuration."""
    return GeneratorConfig(
        n_a=50_000, n_b=20_000, alpha=0.05,
        p1_a=0.15, p1_b=0.15, p2_a=0.05, p2_b=0.15,
        dependence="negative", replicates=replicates, seed=seed,
    )


def scenario_grid(start: float = 0.01, stop: float = 0.35, step: float = 0.01) -> tuple[float, ...]:
    """Inclusive capture-probability grid, default 0.01, 0.02, ..., 0.35."""
    n = int(round((stop - start) / step)) + 1
    values = tuple(round(start + k * step, 12) for k in range(n))
    if any(not 0.0 < v < 1.0 for v in values):
        raise ValidationError("grid values must lie strictly inside (0, 1)")
    return values


@dataclass(frozen=True)
class SimulationSummary:
    """Monte-Carlo summary of one estimated quantity.

    ``relative_bias_pct`` is (mean - truth) / mean in percent (the share of
    the estimate's expected value that is bias); ``cv_pct`` is SD/mean in
    percent; RMSE is against the truth, so rmse^2 = bias^2 + variance.
    """

    quantity: str
    truth: float
    n_used: int
    mean: float
    relative_bias_pct: float
    cv_pct: float
    rmse: float
    coverage: float | None = None


def _summarize(quantity: str, values: np.ndarray, truth: float) -> SimulationSummary:
    mean = float(np.mean(values))
    sd = float(np.std(values))
    return SimulationSummary(
        quantity=quantity,
        truth=truth,
        n_used=int(values.size),
        mean=mean,
        relative_bias_pct=(mean - truth) / mean * 100.0 if mean != 0.0 else float("nan"),
        cv_pct=sd / mean * 100.0 if mean != 0.0 else float("nan"),
        rmse=float(math.sqrt(np.mean((values - truth) ** 2))),
    )


@dataclass(frozen=True, eq=False)
class Study1Result:
    config: GeneratorConfig
    naive: tuple[SimulationSummary, ...]
    proposed: tuple[SimulationSummary, ...]
    redraws: int
    fit_failures: int
    reduced_fallbacks: int

    def all_summaries(self) -> list[tuple[str, SimulationSummary]]:
        return [("naive", s) for s in self.naive] + [("proposed", s) for s in self.proposed]


@dataclass(frozen=True)
class CoverageRow:
    quantity: str
    method: str
    mean_lower: float
    mean_upper: float
    coverage: float
    n_used: int


@dataclass(frozen=True, eq=False)
class CoverageResult:
    config: GeneratorConfig
    level: float
    rows: tuple[CoverageRow, ...]
    redraws: int
    failures: int
    reduced_fallbacks: int


@dataclass(frozen=True)
class Study2Row:
    grid_value: float
    estimator: str
    quantity: str
    truth: float
    mean: float
    bias: float
    relative_bias_pct: float
    rmse: float
    n_used: int


@dataclass(frozen=True, eq=False)
class Study2Result:
    scenario: int
    grid: tuple[float, ...]
    replicates: int
    rows: tuple[Study2Row, ...]
    fit_failures: int
    reduced_fallbacks: int

    def row(self, grid_value: float, estimator: str, quantity: str) -> Study2Row:
        for row in self.rows:
            if (
                row.grid_value == grid_value
                and row.estimator == estimator
                and row.quantity == quantity
            ):
                return row
        raise KeyError((grid_value, estimator, quantity))


# --- generation ---------------------------------------------------------------

def cell_probabilities_for(
    dependence: str, alpha: float, p1: float, p2: float
) -> tuple[float, float, float, float]:
    """Four-cell probabilities (p11, p10, p01, p00) for a dependence kind.

    Under positive dependence the dependent share copies its list-1 status
    into list 2, inflating joint capture and joint absence instead of
    suppressing them. ``independent`` ignores alpha.
    """
    if dependence == "negative":
        return model.cell_probabilities(alpha, p1, p2).as_tuple()
    if dependence == "independent":
        return model.cell_probabilities(0.0, p1, p2).as_tuple()
    if dependence == "positive":
        for name, value in (("alpha", alpha), ("p1", p1), ("p2", p2)):
            if not 0.0 <= value <= 1.0:
                raise ValidationError(f"{name} must be in [0, 1], got {value}")
        one = 1.0 - alpha
        return (
            one * p1 * p2 + alpha * p1,
            one * p1 * (1.0 - p2),
            one * (1.0 - p1) * p2,
            one * (1.0 - p1) * (1.0 - p2) + alpha * (1.0 - p1),
        )
    raise ValidationError(f"unknown dependence kind {dependence!r}")


def _draw_cells(n: int, probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return rng.multinomial(n, probs)


def _cell_array(dependence, alpha, p1, p2) -> np.ndarray:
    probs = np.clip(np.array(cell_probabilities_for(dependence, alpha, p1, p2)), 0.0, 1.0)
    return probs / probs.sum()


def draw_counts(
    n: int,
    alpha: float,
    p1: float,
    p2: float,
    dependence: str,
    rng: np.random.Generator,
) -> tuple[CellCounts, int]:
    """One multinomial table of size n; returns the observed cells and the
    latent x00. Raises ValidationError on the (tiny-n) event that every
    unit lands in the unobserved cell."""
    table = _draw_cells(int(n), _cell_array(dependence, alpha, p1, p2), rng)
    return CellCounts(int(table[0]), int(table[1]), int(table[2])), int(table[3])


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[int(seed) % 2**64, int(stream) % 2**64]))


def _draw_survey(config: GeneratorConfig, rng: np.random.Generator) -> tuple[SurveyData, int]:
    """Draw both strata, redrawing while either stratum has x11 = 0 (neither
    estimator is defined there)."""
    probs_a = _cell_array(config.dependence, config.alpha, config.p1_a, config.p2_a)
    probs_b = _cell_array(config.dependence, config.alpha, config.p1_b, config.p2_b)
    redraws = 0
    for _ in range(_MAX_REDRAWS):
        table_a = _draw_cells(config.n_a, probs_a, rng)
        table_b = _draw_cells(config.n_b, probs_b, rng)
        if table_a[0] >= 1 and table_b[0] >= 1:
            return (
                SurveyData(
                    CellCounts(int(table_a[0]), int(table_a[1]), int(table_a[2])),
                    CellCounts(int(table_b[0]), int(table_b[1]), int(table_b[2])),
                ),
                redraws,
            )
        redraws += 1
    raise ValidationError(
        f"could not draw a table with x11 >= 1 in both strata after {_MAX_REDRAWS} tries"
    )


def _fit_generated(survey: SurveyData, options: FitOptions):
    """Fit a simulated draw; fall back to the full parameterization when the
    draw makes the reduced constraint box empty (possible only when the
    generating process violates the shared-p1 assumption)."""
    try:
        return mle.fit(survey, options), False
    except InfeasibleConstraintsError:
        if options.mode == "full":
            raise
        full_options = FitOptions(
            mode="full",
            max_iterations=options.max_iterations,
            gradient_tolerance=options.gradient_tolerance,
            n_starts=options.n_starts,
            seed=options.seed,
        )
        return mle.fit(survey, full_options), True


# --- study 1 -------------------------------------------------------------------

def _study1_worker(task):
    index, config, options = task
    rng = _rng(config.seed, index)
    survey, redraws = _draw_survey(config, rng)
    naive_a = naive_estimate(survey.stratum_a)
    naive_b = naive_estimate(survey.stratum_b)
    try:
        result, fallback = _fit_generated(survey, options)
    except (FitError, ValidationError) as exc:
        return index, naive_a, naive_b, None, redraws, False, str(exc)
    if not result.converged:
        return index, naive_a, naive_b, None, redraws, fallback, "fit did not converge"
    p = result.params
    return index, naive_a, naive_b, (p.n_a, p.n_b, p.alpha, p.p1, p.p2a, p.p2b), redraws, fallback, ""


def run_study1(
    config: GeneratorConfig | None = None,
    options: FitOptions | None = None,
    threads: int = 1,
) -> Study1Result:
    """Bias/CV summaries of the naive and model-based estimators under the
    generating model. Replicates whose fit fails are excluded from the
    model-based summaries and counted in ``fit_failures``."""
    config = config or study1_config()
    options = options or FitOptions()
    tasks = [(index, config, options) for index in range(config.replicates)]
    outcomes = run_indexed(_study1_worker, tasks, threads)

    naive_a, naive_b, fitted = [], [], []
    redraws = failures = fallbacks = 0
    for _, na, nb, theta, drew, fallback, _err in outcomes:
        naive_a.append(na)
        naive_b.append(nb)
        redraws += drew
        fallbacks += int(fallback)
        if theta is None:
            failures += 1
        else:
            fitted.append(theta)
    if not fitted:
        raise FitError(
            f"every one of the {config.replicates} replicate fits failed; "
            "the configuration is outside the estimator's working range"
        )
    fitted_m = np.array(fitted, dtype=float)
    proposed_truths = (
        ("N_A", float(config.n_a)),
        ("N_B", float(config.n_b)),
        ("alpha", config.alpha),
        ("p1", config.p1_a),
        ("p2A", config.p2_a),
        ("p2B", config.p2_b),
    )
    return Study1Result(
        config=config,
        naive=(
            _summarize("N_A", np.array(naive_a), float(config.n_a)),
            _summarize("N_B", np.array(naive_b), float(config.n_b)),
        ),
        proposed=tuple(
            _summarize(name, fitted_m[:, col], truth)
            for col, (name, truth) in enumerate(proposed_truths)
        ),
        redraws=redraws,
        fit_failures=failures,
        reduced_fallbacks=fallbacks,
    )


# --- coverage ------------------------------------------------------------------

def _coverage_worker(task):
    index, config, options, level = task
    rng = _rng(config.seed, index)
    survey, redraws = _draw_survey(config, rng)
    try:
        result, fallback = _fit_generated(survey, options)
        hess_se = se_from_hessian(result, survey)
    except Exception as exc:  # count the replicate as failed, whatever broke
        return index, None, redraws, False, str(exc)
    if level == 0.95:
        z = 1.96
    else:
        from statistics import NormalDist

        z = NormalDist().inv_cdf(0.5 + level / 2.0)
    payload = {}
    for name, n_hat, x0 in (
        ("N_A", result.params.n_a, survey.stratum_a.total),
        ("N_B", result.params.n_b, survey.stratum_b.total),
    ):
        sigma = hess_se.se[name]
        if not math.isfinite(sigma) or n_hat <= x0:
            return index, None, redraws, fallback, f"interval undefined for {name}"
        standard = (n_hat - z * sigma, n_hat + z * sigma)
        lognormal = confidence_interval(n_hat, x0, sigma**2, level)
        payload[name] = (standard, lognormal)
    return index, payload, redraws, fallback, ""


def run_coverage(
    config: GeneratorConfig | None = None,
    options: FitOptions | None = None,
    level: float = 0.95,
    threads: int = 1,
) -> CoverageResult:
    """Empirical coverage of the symmetric (Wald) and multiplicative
    intervals for the stratum sizes, with per-replicate variances from the
    observed information."""
    config = config or study1_config()
    options = options or FitOptions()
    tasks = [(index, config, options, level) for index in range(config.replicates)]
    outcomes = run_indexed(_coverage_worker, tasks, threads)

    truth = {"N_A": float(config.n_a), "N_B": float(config.n_b)}
    tallies = {
        (name, method): {"lo": 0.0, "hi": 0.0, "hit": 0, "n": 0}
        for name in ("N_A", "N_B")
        for method in ("standard", "lognormal")
    }
    redraws = failures = fallbacks = 0
    for _, payload, drew, fallback, _err in outcomes:
        redraws += drew
        fallbacks += int(fallback)
        if payload is None:
            failures += 1
            continue
        for name, (standard, lognormal) in payload.items():
            for method, (lo, hi) in (("standard", standard), ("lognormal", lognormal)):
                cell = tallies[(name, method)]
                cell["lo"] += lo
                cell["hi"] += hi
                cell["hit"] += int(lo <= truth[name] <= hi)
                cell["n"] += 1
    rows = []
    for (name, method), cell in tallies.items():
        n = cell["n"]
        rows.append(
            CoverageRow(
                quantity=name,
                method=method,
                mean_lower=cell["lo"] / n if n else float("nan"),
                mean_upper=cell["hi"] / n if n else float("nan"),
                coverage=cell["hit"] / n if n else float("nan"),
                n_used=n,
            )
        )
    return CoverageResult(
        config=config,
        level=level,
        rows=tuple(rows),
        redraws=redraws,
        failures=failures,
        reduced_fallbacks=fallbacks,
    )


# --- study 2 -------------------------------------------------------------------

def _scenario_config(scenario: int, value: float, replicates: int, seed: int) -> GeneratorConfig:
    if scenario == 1:
        p1_a, p1_b, p2_a, p2_b = 0.15, value, 0.05, 0.15
    elif scenario == 2:
        p1_a, p1_b, p2_a, p2_b = value, 0.15, 0.05, 0.15
    elif scenario == 3:
        p1_a, p1_b, p2_a, p2_b = 0.15, value, 0.15, 0.15
    else:
        raise ValidationError(f"scenario must be 1, 2, or 3, got {scenario}")
    return GeneratorConfig(
        n_a=50_000, n_b=20_000, alpha=0.05,
        p1_a=p1_a, p1_b=p1_b, p2_a=p2_a, p2_b=p2_b,
        dependence="negative", replicates=replicates, seed=seed,
    )


def _study2_worker(task):
    grid_index, rep, config, options = task
    rng = _rng(config.seed, (grid_index << 32) | rep)
    survey, redraws = _draw_survey(config, rng)
    naive_a = naive_estimate(survey.stratum_a)
    naive_b = naive_estimate(survey.stratum_b)
    try:
        result, fallback = _fit_generated(survey, options)
    except (FitError, ValidationError) as exc:
        return grid_index, naive_a, naive_b, None, redraws, False, str(exc)
    if not result.converged:
        return grid_index, naive_a, naive_b, None, redraws, fallback, "fit did not converge"
    return grid_index, naive_a, naive_b, (result.params.n_a, result.params.n_b), redraws, fallback, ""


def run_study2(
    scenario: int,
    grid: tuple[float, ...] | None = None,
    replicates: int = 500,
    seed: int = DEFAULT_SEED,
    options: FitOptions | None = None,
    threads: int = 1,
) -> Study2Result:
    """Bias/RMSE sweep of the size estimates while the shared-p1 assumption
    is violated along the grid.

    Scenario 1 varies the stratum-B list-1 probability, scenario 2 the
    stratum-A one, and scenario 3 varies stratum B with equal list-2
    probabilities. Draws for which the reduced constraint box is empty are
    refit in full mode and counted in ``reduced_fallbacks``.
    """
    grid = tuple(grid) if grid is not None else scenario_grid()
    if not grid:
        raise ValidationError("grid must contain at least one value")
    options = options or FitOptions()
    configs = [_scenario_config(scenario, value, replicates, seed) for value in grid]
    tasks = [
        (gi, rep, config, options)
        for gi, config in enumerate(configs)
        for rep in range(replicates)
    ]
    outcomes = run_indexed(_study2_worker, tasks, threads)

    per_point = {gi: {"naive": [], "prop": []} for gi in range(len(grid))}
    failures = fallbacks = 0
    for gi, naive_a, naive_b, sizes, _drew, fallback, _err in outcomes:
        per_point[gi]["naive"].append((naive_a, naive_b))
        fallbacks += int(fallback)
        if sizes is None:
            failures += 1
        else:
            per_point[gi]["prop"].append(sizes)

    truths = {"N_A": 50_000.0, "N_B": 20_000.0, "N_total": 70_000.0}
    nan = float("nan")
    rows = []
    for gi, value in enumerate(grid):
        for estimator, pairs in (("proposed", per_point[gi]["prop"]), ("naive", per_point[gi]["naive"])):
            matrix = np.array(pairs, dtype=float).reshape(-1, 2)
            series = {
                "N_A": matrix[:, 0],
                "N_B": matrix[:, 1],
                "N_total": matrix[:, 0] + matrix[:, 1],
            }
            for quantity, values in series.items():
                truth = truths[quantity]
                mean = float(np.mean(values)) if values.size else nan
                rows.append(
                    Study2Row(
                        grid_value=value,
                        estimator=estimator,
                        quantity=quantity,
                        truth=truth,
                        mean=mean,
                        bias=mean - truth,
                        relative_bias_pct=(mean - truth) / truth * 100.0,
                        rmse=float(math.sqrt(np.mean((values - truth) ** 2))) if values.size else nan,
                        n_used=int(values.size),
                    )
                )
    return Study2Result(
        scenario=scenario,
        grid=grid,
        replicates=replicates,
        rows=tuple(rows),
        fit_failures=failures,
        reduced_fallbacks=fallbacks,
    )
