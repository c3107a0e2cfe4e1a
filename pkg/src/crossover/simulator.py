"""Assumption-consistent outcome generation and randomization Monte Carlo.

The study design is design-based: one potential-outcome table is fixed per
study, and only the treatment assignment is redrawn across replications.
Reports collect per-estimand bias samples, empirical and mean estimated
variances, and confidence-interval coverage.  An exact audit enumerates
every assignment of a small design instead of sampling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .constraints import RestrictionMatrix, assemble
from .errors import NotIdentifiableError
from .estimands import (
    EstimandSpec,
    PotentialOutcomeTable,
    instantaneous_effect,
    carryover_effect,
    stack,
    true_value,
)
from .identification import is_identifiable
from .rwls import (
    ObservedDataset,
    WeightModel,
    estimate,
    feasible_rwls,
    implied_estimator_weights,
    oracle_variance,
    solve_restricted_wls,
)
from .sequences import (
    Assignment,
    CrossoverDesign,
    TreatmentSequence,
    as_sequence,
    enumerate_assignments,
    full_sequence_set,
    sample_assignment,
    subsequence,
    trailing_window,
)

TWO_PERIOD_SEQUENCES = ("AA", "AB", "BA", "BB")


@dataclass(frozen=True)
class ScenarioGenerator:
    """Configuration of the two-period outcome generators.

    ``gaussian_model`` draws correlated normal pairs per sequence around
    per-sequence location parameters, then overwrites entries so the table
    satisfies the scenario's assumptions exactly.  ``constant_effect``
    builds the table from two base normal draws plus fixed shifts, making
    every individual effect constant.
    """

    kind: str = "gaussian_model"
    scenario: str = "b"
    carryover_order: int = 1
    seed: int = 0
    beta1: tuple[float, float, float, float] = (0.0, 0.0, 1.0, 1.0)
    beta2: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)
    rho: float = 0.3
    tau1: float = 1.0
    tau2: float = 1.0
    carry_a: float = 0.0
    carry_b: float = 0.0

    def __post_init__(self):
        if self.kind not in ("gaussian_model", "constant_effect"):
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if self.scenario not in ("a", "b", "c"):
            raise ValueError(f"scenario must be a, b, or c, got {self.scenario!r}")
        if not -1.0 < self.rho < 1.0:
            raise ValueError(f"correlation must lie in (-1, 1), got {self.rho}")


def generate_table(
    generator: ScenarioGenerator, n_units: int, design: CrossoverDesign | None = None
) -> PotentialOutcomeTable:
    """Draw a two-period potential-outcome table consistent with the
    generator's scenario."""
    if n_units < 2:
        raise ValueError(f"need at least 2 units, got {n_units}")
    if design is not None and design.horizon != 2:
        raise ValueError("the built-in generators are two-period")
    rng = np.random.default_rng(generator.seed)
    seqs = [as_sequence(z) for z in TWO_PERIOD_SEQUENCES]
    if generator.kind == "gaussian_model":
        chol = np.array(
            [[1.0, 0.0], [generator.rho, np.sqrt(1.0 - generator.rho**2)]]
        )
        tables = {}
        for z, b1, b2 in zip(seqs, generator.beta1, generator.beta2):
            noise = rng.standard_normal((n_units, 2)) @ chol.T
            tables[z] = noise + np.array([b1, b2])
        y1 = {str(z): tables[z][:, 0].copy() for z in seqs}
        y2 = {str(z): tables[z][:, 1].copy() for z in seqs}
        # no anticipation: period-1 outcomes ignore the period-2 treatment
        y1["AB"] = y1["AA"].copy()
        y1["BB"] = y1["BA"].copy()
        if generator.scenario in ("b", "c"):
            # no carryover: period-2 outcomes ignore the period-1 treatment
            y2["BA"] = y2["AA"].copy()
            y2["BB"] = y2["AB"].copy()
        if generator.scenario == "c":
            # time invariance: the period-2 contrast matches the period-1 one
            shift = y1["AA"] - y1["BA"]
            y2["AA"] = shift + y2["AB"]
            y2["BA"] = shift + y2["BB"]
        outcomes = {z: np.column_stack([y1[str(z)], y2[str(z)]]) for z in seqs}
        return PotentialOutcomeTable(2, outcomes)
    base1 = rng.standard_normal(n_units)
    base2 = rng.standard_normal(n_units)
    y1 = {
        "AA": base1 + generator.tau1,
        "AB": base1 + generator.tau1,
        "BA": base1,
        "BB": base1,
    }
    y2 = {
        "BB": base2,
        "AB": base2 + generator.carry_b,
        "BA": base2 + generator.tau2,
    }
    y2["AA"] = y2["BA"] + generator.carry_a
    outcomes = {
        z: np.column_stack([y1[str(z)], y2[str(z)]]) for z in seqs
    }
    return PotentialOutcomeTable(2, outcomes)


def random_consistent_table(
    horizon: int,
    scenario: str,
    carryover_order: int,
    n_units: int,
    scope: Iterable[TreatmentSequence | str] | None = None,
    seed: int = 0,
    spread: float = 1.0,
) -> PotentialOutcomeTable:
    """A heterogeneous table of any horizon satisfying a scenario exactly.

    Outcomes are built from shared per-class draws, so the equalities the
    scenario asserts hold bitwise: scenario a shares values within prefix
    classes, scenario b within trailing-window classes, and scenario c uses
    a per-period level plus a time-constant window effect.
    """
    if scenario not in ("a", "b", "c"):
        raise ValueError(f"scenario must be a, b, or c, got {scenario!r}")
    rng = np.random.default_rng(seed)
    scope_t = tuple(sorted(as_sequence(z) for z in scope)) if scope else full_sequence_set(horizon)
    values: dict[tuple, np.ndarray] = {}

    def draw(key: tuple) -> np.ndarray:
        if key not in values:
            center = rng.normal(0.0, 2.0)
            values[key] = center + spread * rng.standard_normal(n_units)
        return values[key]

    outcomes = {}
    levels: dict[int, np.ndarray] = {}
    effects: dict[str, np.ndarray] = {}
    for z in scope_t:
        table = np.empty((n_units, horizon))
        for t in range(1, horizon + 1):
            if scenario == "a":
                table[:, t - 1] = draw(("prefix", t, subsequence(z, 1, t).letters))
            elif scenario == "b" or t < carryover_order:
                table[:, t - 1] = draw(("window", t, trailing_window(z, t, carryover_order).letters))
            else:
                if t not in levels:
                    levels[t] = rng.normal(0.0, 2.0) + spread * rng.standard_normal(n_units)
                w = trailing_window(z, t, carryover_order).letters
                if w not in effects:
                    effects[w] = rng.normal(0.0, 2.0) + spread * rng.standard_normal(n_units)
                table[:, t - 1] = levels[t] + effects[w]
        outcomes[z] = table
    return PotentialOutcomeTable(horizon, outcomes)


def realize_dataset(table: PotentialOutcomeTable, assignment: Assignment) -> ObservedDataset:
    """Observed outcomes implied by a table and one assignment."""
    n = len(assignment)
    if table.n_units != n:
        raise ValueError(f"table has {table.n_units} units, assignment has {n}")
    outcomes = np.empty((n, table.horizon))
    for i, z in enumerate(assignment.sequences):
        outcomes[i] = table.outcomes[z][i]
    return ObservedDataset(assignment.design, assignment.sequences, outcomes)


def standard_two_period_specs(scope) -> list[EstimandSpec]:
    """The five canonical two-period contrasts."""
    return [
        instantaneous_effect(1, "", scope),
        instantaneous_effect(2, "A", scope),
        instantaneous_effect(2, "B", scope),
        carryover_effect(2, 1, "", "A", scope),
        carryover_effect(2, 1, "", "B", scope),
    ]


def check_table_consistency(
    table: PotentialOutcomeTable, restriction: RestrictionMatrix, tolerance: float = 1e-8
) -> float:
    """Largest violation of the restriction rows by the table's stacked
    means.  Raises when the table is inconsistent with the restriction."""
    layout = restriction.layout
    stacked = np.zeros(layout.size)
    for z in layout.scope:
        stacked[layout.block(z)] = table.mean_vector(z)
    if restriction.n_rows == 0:
        return 0.0
    residual = float(np.abs(restriction.matrix @ stacked).max())
    if residual > tolerance * (1.0 + float(np.abs(stacked).max())):
        raise ValueError(
            f"table violates the scenario restrictions (residual {residual:.3e})"
        )
    return residual


@dataclass(frozen=True)
class McReport:
    """Monte Carlo results over complete randomizations of one table."""

    scenario: str
    carryover_order: int | None
    labels: tuple[str, ...]
    truth: np.ndarray
    bias: np.ndarray
    covered: np.ndarray
    estimated_variances: np.ndarray
    level: float
    seed: int
    generator_seed: int | None
    weight_choice: str

    @property
    def replications(self) -> int:
        return self.bias.shape[0]

    @property
    def coverage(self) -> np.ndarray:
        return self.covered.mean(axis=0)

    @property
    def empirical_variance(self) -> np.ndarray:
        return self.bias.var(axis=0, ddof=1)

    @property
    def mean_estimated_variance(self) -> np.ndarray:
        return self.estimated_variances.mean(axis=0)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "carryover_order": self.carryover_order,
            "replications": self.replications,
            "level": self.level,
            "seed": self.seed,
            "generator_seed": self.generator_seed,
            "weight_choice": self.weight_choice,
            "estimands": [
                {
                    "label": label,
                    "truth": float(self.truth[i]),
                    "mean_bias": float(self.bias[:, i].mean()),
                    "empirical_variance": float(self.empirical_variance[i]),
                    "mean_estimated_variance": float(self.mean_estimated_variance[i]),
                    "coverage": float(self.coverage[i]),
                }
                for i, label in enumerate(self.labels)
            ],
        }


def run_monte_carlo(
    generator: ScenarioGenerator | PotentialOutcomeTable,
    design: CrossoverDesign,
    specs: Sequence[EstimandSpec],
    replications: int = 10_000,
    weight_choice: str | WeightModel = "sample",
    level: float = 0.95,
    seed: int = 0,
    scenario: str | None = None,
    carryover_order: int | None = None,
) -> McReport:
    """Fix one table, then redraw the assignment ``replications`` times.

    Each replication samples a complete randomization from an independent
    seed stream, runs the feasible restricted fit, and records the bias,
    the estimated variances, and whether each confidence interval covers
    the truth.  Refuses scenario/design pairs that fail the rank condition
    and tables inconsistent with the scenario.
    """
    if isinstance(generator, PotentialOutcomeTable):
        table = generator
        generator_seed = None
        if scenario is None:
            raise ValueError("scenario is required when passing a table directly")
    else:
        table = generate_table(generator, design.n_units, design)
        generator_seed = generator.seed
        scenario = scenario or generator.scenario
        carryover_order = carryover_order or generator.carryover_order
    restriction = assemble(scenario, design.horizon, design.scope, carryover_order)
    check = is_identifiable(design, restriction)
    if not check.identifiable:
        raise NotIdentifiableError(
            check.rank,
            check.dimension,
            f"scenario {scenario!r} on this design fails the rank condition "
            f"(rank {check.rank} of {check.dimension}); not all effects are identifiable",
        )
    check_table_consistency(table, restriction)
    stacked = stack(list(specs))
    truth = true_value(stacked, table)
    n_est = stacked.dimension
    bias = np.empty((replications, n_est))
    covered = np.empty((replications, n_est), dtype=bool)
    est_vars = np.empty((replications, n_est))
    for r in range(replications):
        assignment = sample_assignment(design, [seed, r])
        dataset = realize_dataset(table, assignment)
        fit = feasible_rwls(dataset, scenario, carryover_order, weight_choice, restriction)
        result = estimate(fit, stacked, level)
        bias[r] = result.point - truth
        covered[r] = (result.ci_lower <= truth) & (truth <= result.ci_upper)
        est_vars[r] = np.diag(result.covariance)
    return McReport(
        scenario=scenario,
        carryover_order=carryover_order,
        labels=stacked.labels,
        truth=truth,
        bias=bias,
        covered=covered,
        estimated_variances=est_vars,
        level=level,
        seed=seed,
        generator_seed=generator_seed,
        weight_choice=weight_choice if isinstance(weight_choice, str) else "user",
    )


def emit_bias_distribution(report: McReport) -> str:
    """CSV rows (scenario, estimand, replication, bias) for plotting."""
    lines = ["scenario,estimand,replication,bias"]
    for i, label in enumerate(report.labels):
        for r in range(report.replications):
            lines.append(f"{report.scenario},{label},{r},{float(report.bias[r, i])!r}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class AuditResult:
    """Exact randomization distribution of the fixed-weight estimator."""

    labels: tuple[str, ...]
    exact_mean: np.ndarray
    exact_covariance: np.ndarray
    formula_mean: np.ndarray
    formula_covariance: np.ndarray
    n_assignments: int


def exact_randomization_audit(
    table: PotentialOutcomeTable,
    design: CrossoverDesign,
    specs: Sequence[EstimandSpec],
    weights: WeightModel | str = "oracle",
    scenario: str = "b",
    carryover_order: int | None = None,
) -> AuditResult:
    """Enumerate every assignment and average the fixed-weight estimator.

    ``weights`` defaults to the table's true per-sequence covariances
    ("oracle"); exact unbiasedness and the closed-form variance identity
    hold only for fixed weights.
    """
    restriction = assemble(scenario, design.horizon, design.scope, carryover_order)
    if isinstance(weights, str):
        if weights != "oracle":
            raise ValueError(f"weights must be a WeightModel or 'oracle', got {weights!r}")
        weights = WeightModel(
            {z: table.covariance(z) for z in design.observed}, "user"
        )
    stacked = stack(list(specs))
    zero_means = {z: np.zeros(design.horizon) for z in design.observed}
    base = solve_restricted_wls(design, zero_means, weights, restriction)
    implied = implied_estimator_weights(base, stacked)
    points = []
    for assignment in enumerate_assignments(design):
        point = np.zeros(stacked.dimension)
        for z in design.observed:
            members = [i for i, zi in enumerate(assignment.sequences) if zi == z]
            point += implied[z] @ table.outcomes[z][members].mean(axis=0)
        points.append(point)
    points = np.array(points)
    exact_mean = points.mean(axis=0)
    centered = points - exact_mean
    exact_cov = centered.T @ centered / points.shape[0]
    return AuditResult(
        labels=stacked.labels,
        exact_mean=exact_mean,
        exact_covariance=exact_cov,
        formula_mean=true_value(stacked, table),
        formula_covariance=oracle_variance(base, stacked, table),
        n_assignments=points.shape[0],
    )
