"""Restricted weighted least squares estimation and EHW inference.

The engine consumes per-sequence outcome means, per-sequence weight
matrices, and a restriction matrix, solves the stationarity system

    [ X' W^-1 X   C' ] [ gamma  ]   [ X' W^-1 Y ]
    [ C           0  ] [ lambda ] = [ 0         ]

using the block identities X'W^-1X = diag(N_z Omega_z^-1) and
X'W^-1Y = stack(N_z Omega_z^-1 Ybar_z), and keeps the top-left block U11
of the inverse.  The sandwich covariance plugs per-unit residual outer
products into U11 X'W^-1 Sigma W^-1 X U11.  Estimand-level results are
linear images of the solved coefficient vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
import scipy.linalg
from scipy import stats

from .constraints import CoefficientLayout, RestrictionMatrix, assemble
from .errors import (
    ConditioningError,
    DegenerateCovarianceError,
    MissingSequenceError,
    NotIdentifiableError,
)
from .estimands import EstimandSpec, PotentialOutcomeTable, individual_effect_covariance
from .identification import is_identifiable
from .sequences import CrossoverDesign, TreatmentSequence, as_sequence, subsequence, trailing_window

CONDITION_WARNING_THRESHOLD = 1e12
RESTRICTION_TOLERANCE = 1e-9
# rows of B @ U11 below this relative size are exact zeroes of the
# restricted model (the functional lies in the restriction span)
ZERO_FUNCTIONAL_TOLERANCE = 1e-12


@dataclass(frozen=True)
class ObservedDataset:
    """Observed outcomes with one assigned sequence per unit."""

    design: CrossoverDesign
    assignments: tuple[TreatmentSequence, ...]
    outcomes: np.ndarray

    def __post_init__(self):
        assignments = tuple(as_sequence(z) for z in self.assignments)
        outcomes = np.asarray(self.outcomes, dtype=float)
        if outcomes.ndim != 2 or outcomes.shape != (len(assignments), self.design.horizon):
            raise ValueError(
                f"outcomes must be ({len(assignments)}, {self.design.horizon}), got {outcomes.shape}"
            )
        if not np.all(np.isfinite(outcomes)):
            raise ValueError("outcomes contain non-finite values")
        tally: dict[TreatmentSequence, int] = {}
        for z in assignments:
            tally[z] = tally.get(z, 0) + 1
        if tally != self.design.counts:
            raise ValueError(
                f"per-sequence counts {tally} do not match design counts {self.design.counts}"
            )
        object.__setattr__(self, "assignments", assignments)
        object.__setattr__(self, "outcomes", outcomes)

    @property
    def n_units(self) -> int:
        return self.outcomes.shape[0]

    def group_indices(self) -> dict[TreatmentSequence, np.ndarray]:
        codes = {z: i for i, z in enumerate(self.design.observed)}
        labels = np.array([codes[z] for z in self.assignments])
        return {
            z: np.flatnonzero(labels == i) for z, i in codes.items()
        }


@dataclass(frozen=True)
class WeightModel:
    """Per-sequence T x T weight matrices, positive definite after repair."""

    matrices: Mapping[TreatmentSequence, np.ndarray]
    provenance: str = "user"
    repaired: tuple[TreatmentSequence, ...] = ()

    def __post_init__(self):
        matrices = {}
        for z, m in self.matrices.items():
            z = as_sequence(z)
            m = np.asarray(m, dtype=float)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValueError(f"weight for {z} must be square, got {m.shape}")
            matrices[z] = m
        object.__setattr__(self, "matrices", dict(sorted(matrices.items())))

    def matrix(self, z: TreatmentSequence | str) -> np.ndarray:
        return self.matrices[as_sequence(z)]


def repair_positive_definite(matrix: np.ndarray) -> tuple[np.ndarray, bool]:
    """Symmetrize and lift the spectrum so the matrix is safely invertible.

    The floor is 1e-8 times the mean diagonal (or an absolute 1e-8 for a
    zero matrix); eigenvalues below it are raised by adding a multiple of
    the identity.
    """
    m = np.asarray(matrix, dtype=float)
    m = (m + m.T) / 2.0
    t = m.shape[0]
    base = np.trace(m) / t
    if base <= 0.0:
        base = 1.0
    floor = 1e-8 * base
    smallest = np.linalg.eigvalsh(m).min()
    if smallest < floor:
        return m + (floor - smallest) * np.eye(t), True
    return m, False


def sequence_means(dataset: ObservedDataset) -> dict[TreatmentSequence, np.ndarray]:
    """Arithmetic mean outcome vector of each implemented sequence."""
    means = {}
    for z, idx in dataset.group_indices().items():
        if idx.size == 0:
            raise MissingSequenceError(f"no units assigned to {z}")
        means[z] = dataset.outcomes[idx].mean(axis=0)
    return means


def sample_covariances(dataset: ObservedDataset) -> WeightModel:
    """Per-sequence sample covariance (divisor N_z - 1), repaired to PD."""
    matrices = {}
    repaired = []
    for z, idx in dataset.group_indices().items():
        if idx.size < 2:
            raise DegenerateCovarianceError(
                f"sequence {z} has {idx.size} unit(s); need at least 2 for a sample "
                "covariance (use pooled or user weights)"
            )
        y = dataset.outcomes[idx]
        centered = y - y.mean(axis=0)
        cov = centered.T @ centered / (idx.size - 1)
        cov, fixed = repair_positive_definite(cov)
        if fixed:
            repaired.append(z)
        matrices[z] = cov
    return WeightModel(matrices, "sample", tuple(repaired))


def _pooling_key(z: TreatmentSequence, t1: int, t2: int, scenario: str, order: int | None):
    """Sequences with equal keys have theoretically equal (t1, t2) entries."""
    if scenario == "a":
        return subsequence(z, 1, max(t1, t2)).letters
    return (
        trailing_window(z, t1, order).letters,
        trailing_window(z, t2, order).letters,
    )


def pooled_covariance_entries(
    dataset: ObservedDataset, scenario: str, carryover_order: int | None = None
) -> WeightModel:
    """Entry-wise pooled covariance estimates.

    Each (t, t') entry is pooled across the class of sequences whose entry
    is equal under the scenario's assumptions, using pooled degrees of
    freedom sum(N_z) - #sequences in the class.  Scenario c pools with the
    scenario-b classes, since time invariance adds no entry equalities.
    """
    if scenario not in ("a", "b", "c"):
        raise ValueError(f"scenario must be a, b, or c, got {scenario!r}")
    if scenario in ("b", "c") and carryover_order is None:
        raise ValueError(f"scenario {scenario!r} requires a carryover order")
    horizon = dataset.design.horizon
    groups = dataset.group_indices()
    observed = dataset.design.observed
    centered = {}
    for z, idx in groups.items():
        if idx.size < 1:
            raise MissingSequenceError(f"no units assigned to {z}")
        y = dataset.outcomes[idx]
        centered[z] = y - y.mean(axis=0)
    pooled = {z: np.zeros((horizon, horizon)) for z in observed}
    for t1 in range(1, horizon + 1):
        for t2 in range(t1, horizon + 1):
            classes: dict[object, list[TreatmentSequence]] = {}
            for z in observed:
                key = _pooling_key(z, t1, t2, scenario, carryover_order)
                classes.setdefault(key, []).append(z)
            for members in classes.values():
                dof = sum(groups[z].size for z in members) - len(members)
                if dof < 1:
                    raise DegenerateCovarianceError(
                        f"entry ({t1},{t2}) pooled over {members} has no degrees of freedom"
                    )
                total = sum(
                    float(centered[z][:, t1 - 1] @ centered[z][:, t2 - 1]) for z in members
                )
                value = total / dof
                for z in members:
                    pooled[z][t1 - 1, t2 - 1] = value
                    pooled[z][t2 - 1, t1 - 1] = value
    matrices = {}
    repaired = []
    for z, m in pooled.items():
        m, fixed = repair_positive_definite(m)
        if fixed:
            repaired.append(z)
        matrices[z] = m
    return WeightModel(matrices, "pooled", tuple(repaired))


@dataclass
class RwlsFit:
    """A solved restricted weighted least squares fit.

    ``gamma`` is the coefficient vector over the layout; ``u11`` maps the
    weighted mean stack to coefficients; ``meat`` (set once residuals are
    available) is X'W^-1 Sigma-hat W^-1 X, so the EHW covariance is
    u11 @ meat @ u11.
    """

    design: CrossoverDesign
    restriction: RestrictionMatrix
    weight_model: WeightModel
    means: dict[TreatmentSequence, np.ndarray]
    gamma: np.ndarray
    u11: np.ndarray
    xty: np.ndarray
    condition_number: float
    warnings: tuple[str, ...] = ()
    meat: np.ndarray | None = None
    residuals: np.ndarray | None = None

    @property
    def layout(self) -> CoefficientLayout:
        return self.restriction.layout

    @property
    def scenario(self) -> str | None:
        return self.restriction.scenario

    @property
    def carryover_order(self) -> int | None:
        return self.restriction.carryover_order

    @property
    def restriction_residual(self) -> float:
        if self.restriction.n_rows == 0:
            return 0.0
        return float(np.abs(self.restriction.matrix @ self.gamma).max())

    @property
    def ehw(self) -> np.ndarray | None:
        if self.meat is None:
            return None
        return self.u11 @ self.meat @ self.u11

    def coefficient(self, period: int, z: TreatmentSequence | str) -> float:
        return float(self.gamma[self.layout.column(period, z)])


def _weight_inverses(
    design: CrossoverDesign, weights: WeightModel
) -> dict[TreatmentSequence, np.ndarray]:
    inverses = {}
    for z in design.observed:
        try:
            omega = weights.matrix(z)
        except KeyError as exc:
            raise MissingSequenceError(f"weight model lacks a matrix for {z}") from exc
        if omega.shape != (design.horizon, design.horizon):
            raise ValueError(f"weight for {z} has shape {omega.shape}")
        inverses[z] = np.linalg.inv(omega)
    return inverses


def solve_restricted_wls(
    design: CrossoverDesign,
    means: Mapping[TreatmentSequence, np.ndarray],
    weights: WeightModel,
    restriction: RestrictionMatrix,
) -> RwlsFit:
    """Solve the stationarity system for the coefficient vector and U11.

    Raises NotIdentifiableError when X'X + C'C is rank deficient.  A
    condition number above 1e12 attaches a warning to the fit; on
    factorization failure the pseudo-normal form (K'K)^-1 K' is used.
    """
    layout = restriction.layout
    if layout.horizon != design.horizon or layout.scope != design.scope:
        raise ValueError("restriction layout does not match the design")
    check = is_identifiable(design, restriction)
    if not check.identifiable:
        raise NotIdentifiableError(check.rank, check.dimension)
    p = layout.size
    n_rows = restriction.n_rows
    inverses = _weight_inverses(design, weights)
    kkt = np.zeros((p + n_rows, p + n_rows))
    xty = np.zeros(p)
    for z, n in design.counts.items():
        sl = layout.block(z)
        kkt[sl, sl] = n * inverses[z]
        mean = np.asarray(means[as_sequence(z)], dtype=float)
        if mean.shape != (design.horizon,):
            raise ValueError(f"mean for {z} must have shape ({design.horizon},)")
        xty[sl] = n * inverses[z] @ mean
    if n_rows:
        kkt[:p, p:] = restriction.matrix.T
        kkt[p:, :p] = restriction.matrix
    # symmetric equilibration keeps repaired near-singular weight blocks
    # from poisoning the factorization
    row_scale = np.abs(kkt).max(axis=1)
    row_scale[row_scale == 0.0] = 1.0
    d = 1.0 / np.sqrt(row_scale)
    scaled = kkt * d[:, None] * d[None, :]
    condition = float(np.linalg.cond(scaled))
    warnings: list[str] = []
    if condition > CONDITION_WARNING_THRESHOLD:
        warnings.append(
            f"stationarity system condition number {condition:.3e} exceeds "
            f"{CONDITION_WARNING_THRESHOLD:.0e}"
        )
    try:
        inverse = scipy.linalg.solve(scaled, np.eye(p + n_rows), assume_a="sym")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError):
        try:
            inverse = np.linalg.solve(scaled.T @ scaled, scaled.T)
            warnings.append("direct factorization failed; used pseudo-normal form")
        except np.linalg.LinAlgError as exc:
            raise ConditioningError("stationarity system is numerically singular") from exc
    # one Newton-Schulz refinement step squares the inversion residual
    inverse = inverse + inverse @ (np.eye(p + n_rows) - scaled @ inverse)
    # solve for the coefficients through the scaled system with one round
    # of residual correction; this stays accurate even when a repaired
    # weight block makes the unscaled system badly conditioned
    rhs = np.concatenate([xty, np.zeros(n_rows)])
    rhs_scaled = d * rhs
    solution = inverse @ rhs_scaled
    solution += inverse @ (rhs_scaled - scaled @ solution)
    gamma = (d * solution)[:p]
    inverse = inverse * d[:, None] * d[None, :]
    u11 = inverse[:p, :p]
    u11 = (u11 + u11.T) / 2.0
    fit = RwlsFit(
        design=design,
        restriction=restriction,
        weight_model=weights,
        means={as_sequence(z): np.asarray(means[as_sequence(z)], dtype=float) for z in design.observed},
        gamma=gamma,
        u11=u11,
        xty=xty,
        condition_number=condition,
        warnings=tuple(warnings),
    )
    residual = fit.restriction_residual
    if residual > RESTRICTION_TOLERANCE * (1.0 + np.abs(gamma).max()):
        fit.warnings = fit.warnings + (
            f"restriction residual {residual:.3e} exceeds tolerance",
        )
    return fit


def ehw_covariance(
    fit: RwlsFit, dataset: ObservedDataset, small_sample_scale: bool = False
) -> np.ndarray:
    """Sandwich covariance of the coefficient vector from unit residuals.

    Assembles the block-diagonal meat Omega_z^-1 (sum_i r_i r_i')
    Omega_z^-1 over observed sequences and wraps it with U11.  The meat
    and residuals are stored on the fit for estimand-level reuse.

    ``small_sample_scale`` multiplies the meat by N / (N - d), d being the
    number of free coefficients; the default (off) uses the plain per-unit
    residual outer products.
    """
    layout = fit.layout
    inverses = _weight_inverses(dataset.design, fit.weight_model)
    residuals = np.empty_like(dataset.outcomes)
    meat = np.zeros((layout.size, layout.size))
    for z, idx in dataset.group_indices().items():
        sl = layout.block(z)
        fitted = fit.gamma[sl]
        r = dataset.outcomes[idx] - fitted
        residuals[idx] = r
        meat[sl, sl] = inverses[z] @ (r.T @ r) @ inverses[z]
    if small_sample_scale:
        n = dataset.n_units
        free = layout.size - fit.restriction.n_rows
        if n <= free:
            raise ValueError(f"small-sample scale needs N > {free}, got N = {n}")
        meat = meat * (n / (n - free))
    fit.meat = meat
    fit.residuals = residuals
    return fit.u11 @ meat @ fit.u11


def feasible_rwls(
    dataset: ObservedDataset,
    scenario: str,
    carryover_order: int | None = None,
    weights: str | WeightModel = "sample",
    restriction: RestrictionMatrix | None = None,
    small_sample_scale: bool = False,
) -> RwlsFit:
    """Two-step pipeline: estimate the weights, then solve the restricted
    weighted least squares and attach the sandwich pieces.

    ``weights`` is "sample" for per-sequence sample covariances, "pooled"
    for scenario-pooled entries, or an explicit WeightModel.
    """
    design = dataset.design
    if restriction is None:
        restriction = assemble(scenario, design.horizon, design.scope, carryover_order)
    if isinstance(weights, WeightModel):
        model = weights
    elif weights == "sample":
        model = sample_covariances(dataset)
    elif weights == "pooled":
        model = pooled_covariance_entries(dataset, scenario, carryover_order)
    else:
        raise ValueError(f"weights must be 'sample', 'pooled', or a WeightModel, got {weights!r}")
    fit = solve_restricted_wls(design, sequence_means(dataset), model, restriction)
    ehw_covariance(fit, dataset, small_sample_scale)
    return fit


def _estimand_matrix(fit: RwlsFit, spec: EstimandSpec) -> np.ndarray:
    """K x p matrix assembling the spec's W blocks over the layout."""
    layout = fit.layout
    if spec.horizon != layout.horizon:
        raise ValueError(f"spec horizon {spec.horizon} != layout horizon {layout.horizon}")
    scope_set = set(layout.scope)
    b = np.zeros((spec.dimension, layout.size))
    for z, w in spec.weights.items():
        if z not in scope_set:
            raise ValueError(f"spec references {z} outside the fitted scope")
        b[:, layout.block(z)] = w
    return b


def _restricted_rows(fit: RwlsFit, b: np.ndarray) -> np.ndarray:
    """Rows of B lying in the restriction row space.

    Those functionals are exact zeroes of the restricted model, so their
    estimates and variances are snapped to exact zero.
    """
    c = fit.restriction.matrix
    if c.shape[0] == 0:
        return np.zeros(b.shape[0], dtype=bool)
    projected = c.T @ np.linalg.solve(c @ c.T, c @ b.T)
    leftover = b - projected.T
    scale = np.maximum(np.abs(b).max(axis=1), 1.0)
    return np.abs(leftover).max(axis=1) <= ZERO_FUNCTIONAL_TOLERANCE * scale


def _snapped_bu(fit: RwlsFit, spec: EstimandSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """B, B @ U11, and the restricted-row mask, with snapped rows zeroed."""
    b = _estimand_matrix(fit, spec)
    bu = b @ fit.u11
    restricted = _restricted_rows(fit, b)
    bu[restricted] = 0.0
    return b, bu, restricted


def point_estimate(fit: RwlsFit, spec: EstimandSpec) -> np.ndarray:
    """theta-hat = B gamma-hat, with restricted-to-zero rows exactly zero."""
    b, _, restricted = _snapped_bu(fit, spec)
    point = b @ fit.gamma
    point[restricted] = 0.0
    return point


@dataclass(frozen=True)
class EstimandEstimate:
    labels: tuple[str, ...]
    point: np.ndarray
    covariance: np.ndarray
    std_errors: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    level: float
    wald_statistic: float
    wald_df: int
    wald_pvalue: float

    @property
    def dimension(self) -> int:
        return len(self.labels)


def estimate(fit: RwlsFit, spec: EstimandSpec, level: float = 0.95) -> EstimandEstimate:
    """Point estimate, sandwich covariance, per-coordinate confidence
    intervals, and the Wald statistic against zero for one estimand."""
    if not 0.0 < level < 1.0:
        raise ValueError(f"confidence level must be in (0, 1), got {level}")
    if fit.meat is None:
        raise ValueError("fit has no sandwich pieces; run feasible_rwls or ehw_covariance first")
    b, bu, restricted = _snapped_bu(fit, spec)
    point = b @ fit.gamma
    point[restricted] = 0.0
    covariance = bu @ fit.meat @ bu.T
    covariance = (covariance + covariance.T) / 2.0
    variances = np.clip(np.diag(covariance), 0.0, None)
    std_errors = np.sqrt(variances)
    z_crit = float(stats.norm.ppf(0.5 + level / 2.0))
    ci_lower = point - z_crit * std_errors
    ci_upper = point + z_crit * std_errors
    wald = float(point @ np.linalg.pinv(covariance) @ point)
    pvalue = float(stats.chi2.sf(wald, spec.dimension))
    return EstimandEstimate(
        labels=spec.labels,
        point=point,
        covariance=covariance,
        std_errors=std_errors,
        ci_lower=ci_lower,
        ci_upper=ci_upper,
        level=level,
        wald_statistic=wald,
        wald_df=spec.dimension,
        wald_pvalue=pvalue,
    )


def implied_estimator_weights(
    fit: RwlsFit, spec: EstimandSpec
) -> dict[TreatmentSequence, np.ndarray]:
    """K x T weights on each observed group mean implied by the fit.

    The estimator equals sum_z M(z) Ybar_z with
    M(z) = B U11 N_z X_z' Omega_z^-1.
    """
    _, bu, _ = _snapped_bu(fit, spec)
    inverses = _weight_inverses(fit.design, fit.weight_model)
    layout = fit.layout
    return {
        z: n * bu[:, layout.block(z)] @ inverses[z]
        for z, n in fit.design.counts.items()
    }


def oracle_variance(
    fit: RwlsFit, spec: EstimandSpec, table: PotentialOutcomeTable
) -> np.ndarray:
    """Exact randomization covariance of the fixed-weight estimator.

    Requires the full potential-outcome table:
    sum_z M(z) S2(z) M(z)' / N_z minus the (inestimable from data alone)
    individual-effect covariance divided by N.
    """
    implied = implied_estimator_weights(fit, spec)
    total = np.zeros((spec.dimension, spec.dimension))
    for z, n in fit.design.counts.items():
        m = implied[z]
        total += m @ table.covariance(z) @ m.T / n
    total -= individual_effect_covariance(spec, table) / table.n_units
    return total
