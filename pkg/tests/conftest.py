import numpy as np
import pytest
import scipy.linalg

from crossover import (
    CrossoverDesign,
    ObservedDataset,
    RestrictionMatrix,
    WeightModel,
)


def template_labels(design: CrossoverDesign):
    """Units listed sequence-by-sequence in design order."""
    labels = []
    for z, n in design.counts.items():
        labels.extend([z] * n)
    return tuple(labels)


def make_dataset(design: CrossoverDesign, rng: np.random.Generator) -> ObservedDataset:
    """Random outcomes with units grouped in design order."""
    labels = template_labels(design)
    outcomes = rng.normal(size=(design.n_units, design.horizon))
    return ObservedDataset(design, labels, outcomes)


def dense_regressors(design: CrossoverDesign, dataset: ObservedDataset):
    """Unit-level stacked regressor matrix, outcome vector, and weight
    blocks, built without the per-sequence shortcuts."""
    scope = design.scope
    horizon = design.horizon
    p = horizon * len(scope)
    index = {z: i for i, z in enumerate(scope)}
    n = dataset.n_units
    x = np.zeros((n * horizon, p))
    y = np.zeros(n * horizon)
    for i, z in enumerate(dataset.assignments):
        rows = slice(i * horizon, (i + 1) * horizon)
        cols = slice(index[z] * horizon, (index[z] + 1) * horizon)
        x[rows, cols] = np.eye(horizon)
        y[rows] = dataset.outcomes[i]
    return x, y


def dense_omega_inverse(design: CrossoverDesign, dataset: ObservedDataset, weights: WeightModel):
    horizon = design.horizon
    n = dataset.n_units
    omega_inv = np.zeros((n * horizon, n * horizon))
    for i, z in enumerate(dataset.assignments):
        rows = slice(i * horizon, (i + 1) * horizon)
        omega_inv[rows, rows] = np.linalg.inv(weights.matrix(z))
    return omega_inv


def nullspace_restricted_wls(
    dataset: ObservedDataset, weights: WeightModel, restriction: RestrictionMatrix
) -> np.ndarray:
    """Independent equality-constrained WLS solve via the null-space method
    on fully dense matrices."""
    design = dataset.design
    x, y = dense_regressors(design, dataset)
    omega_inv = dense_omega_inverse(design, dataset, weights)
    c = restriction.matrix
    if c.shape[0]:
        basis = scipy.linalg.null_space(c)
    else:
        basis = np.eye(x.shape[1])
    xz = x @ basis
    lhs = xz.T @ omega_inv @ xz
    rhs = xz.T @ omega_inv @ y
    return basis @ np.linalg.solve(lhs, rhs)


def dense_sandwich(dataset: ObservedDataset, fit) -> np.ndarray:
    """EHW covariance assembled from fully dense matrices."""
    design = dataset.design
    x, _ = dense_regressors(design, dataset)
    omega_inv = dense_omega_inverse(design, dataset, fit.weight_model)
    horizon = design.horizon
    n = dataset.n_units
    sigma = np.zeros((n * horizon, n * horizon))
    layout = fit.layout
    for i, z in enumerate(dataset.assignments):
        rows = slice(i * horizon, (i + 1) * horizon)
        r = dataset.outcomes[i] - fit.gamma[layout.block(z)]
        sigma[rows, rows] = np.outer(r, r)
    return fit.u11 @ x.T @ omega_inv @ sigma @ omega_inv @ x @ fit.u11


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
