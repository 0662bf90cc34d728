"""
Gaussian hierarchical dependence between component deterioration.

Each component's initial crack depth is mapped to a standard normal variable
``Y_i = sqrt(1 - sum_k lambda_ik^2) X_i + sum_k lambda_ik alpha_k`` with
independent ``X_i`` and shared standard-normal hyperparameters ``alpha_k``.
Components are conditionally independent given the hyperparameters, which are
discretized on equal-probability quantile bins.
"""

import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import integrate, optimize, stats

from src.models.discretization import StateGrids

logger = logging.getLogger(__name__)

LOADING_NORM_CAP = 1.0 - 1e-8
RESIDUAL_WARNING = 0.05
FIT_STARTS = 16
CELL_AVERAGE_NODES_2D = 4

Quadrature = Literal["midpoint", "cell_average"]


@dataclass(frozen=True)
class CorrelationSpec:
    mode: Literal["none", "equal", "general"]
    n_components: int
    rho_eq: float = 0.0
    matrix: np.ndarray | None = None
    n_hyper: int = 0
    n_hyper_states: int = 80
    quadrature: Quadrature = "midpoint"
    fit_seed: int = 0

    def __post_init__(self) -> None:
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        if self.n_hyper_states < 1:
            raise ValueError("n_hyper_states must be >= 1")
        if self.mode == "equal" and not 0.0 <= self.rho_eq < 1.0:
            raise ValueError(f"rho_eq must lie in [0, 1), got {self.rho_eq}")
        if self.mode == "general":
            if self.matrix is None:
                raise ValueError("general mode needs a correlation matrix")
            r = np.asarray(self.matrix, dtype=float)
            if np.isnan(r).any():
                raise ValueError("correlation matrix contains NaN")
            if r.shape != (self.n_components, self.n_components):
                n = self.n_components
                raise ValueError(f"correlation matrix must be {n}x{n}")
            if not np.allclose(r, r.T, atol=0.0) or not np.all(np.diag(r) == 1.0):
                raise ValueError(
                    "correlation matrix must be symmetric with unit diagonal"
                )
            if np.any(np.abs(r) > 1.0):
                raise ValueError("correlations must lie in [-1, 1]")
            if self.n_hyper < 1:
                raise ValueError("general mode needs n_hyper >= 1")
            object.__setattr__(self, "matrix", r)

    @property
    def effective_n_hyper(self) -> int:
        return {"none": 0, "equal": 1}.get(self.mode, self.n_hyper)


@dataclass(frozen=True)
class HyperGrid:
    """Equal-probability quantile bins of a standard normal, with median points."""

    edges: np.ndarray
    points: np.ndarray

    @property
    def n_states(self) -> int:
        return self.points.size


def build_hyper_grid(n_states: int) -> HyperGrid:
    k = np.arange(n_states)
    edges = stats.norm.ppf(np.linspace(0.0, 1.0, n_states + 1))
    points = stats.norm.ppf((k + 0.5) / n_states)
    return HyperGrid(edges=edges, points=points)


@dataclass(frozen=True)
class CorrelationStructure:
    loadings: np.ndarray  # [N][n_hyper]
    grid: HyperGrid | None
    fit_residual: float = 0.0
    quadrature: Quadrature = "midpoint"
    target: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        loadings = np.atleast_2d(np.asarray(self.loadings, dtype=float))
        if loadings.ndim != 2:
            raise ValueError("loadings must be a matrix [N][n_hyper]")
        if np.any((loadings**2).sum(axis=1) > 1.0 + 1e-12):
            raise ValueError("every component needs sum of squared loadings <= 1")
        if loadings.shape[1] > 0 and self.grid is None:
            raise ValueError("hyperparameters need a grid")
        loadings.setflags(write=False)
        object.__setattr__(self, "loadings", loadings)

    @property
    def n_components(self) -> int:
        return self.loadings.shape[0]

    @property
    def n_hyper(self) -> int:
        return self.loadings.shape[1]

    @property
    def n_cells(self) -> int:
        """Size of the (joint, row-major) hyperparameter grid."""
        if self.n_hyper == 0 or self.grid is None:
            return 1
        return self.grid.n_states**self.n_hyper

    @property
    def is_independent(self) -> bool:
        return self.n_hyper == 0 or bool(np.all(self.loadings == 0.0))

    def cell_points(self) -> np.ndarray:
        """Hyperparameter values of every joint cell, ``[n_cells][n_hyper]``."""
        if self.n_hyper == 0 or self.grid is None:
            return np.zeros((1, 0))
        axes = np.meshgrid(*([self.grid.points] * self.n_hyper), indexing="ij")
        return np.stack([a.ravel() for a in axes], axis=1)

    def cell_index(self, alpha: np.ndarray) -> int:
        """Row-major joint cell holding the hyperparameter vector ``alpha``."""
        if self.n_hyper == 0 or self.grid is None:
            return 0
        inner = self.grid.edges[1:-1]
        idx = 0
        for value in np.atleast_1d(alpha):
            cell = int(np.searchsorted(inner, value, side="right"))
            idx = idx * self.grid.n_states + cell
        return idx

    def residual_sd(self) -> np.ndarray:
        return np.sqrt(np.clip(1.0 - (self.loadings**2).sum(axis=1), 0.0, None))

    def reconstructed_correlation(self) -> np.ndarray:
        """``lambda lambda^T`` with a unit diagonal."""
        r = self.loadings @ self.loadings.T
        np.fill_diagonal(r, 1.0)
        return r


@dataclass(frozen=True)
class ConditionalPrior:
    cond: np.ndarray  # [N][n_cells][n_crack]
    hyper_prior: np.ndarray  # [n_cells]

    def marginal(self) -> np.ndarray:
        return np.einsum("ncs,c->ns", self.cond, self.hyper_prior)


def block_correlation_matrix(
    groups: list[list[int]], within: list[float], between: dict[tuple[int, int], float]
) -> np.ndarray:
    """Correlation matrix that is constant within and between component groups."""
    n = sum(len(g) for g in groups)
    r = np.zeros((n, n))
    for gi, members in enumerate(groups):
        for gj, others in enumerate(groups):
            if gi == gj:
                value = within[gi]
            else:
                value = between.get((gi, gj), between.get((gj, gi), 0.0))
            r[np.ix_(members, others)] = value
    np.fill_diagonal(r, 1.0)
    return r


def _pairwise_errors(loadings: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Off-diagonal ``lambda lambda^T - R``."""
    errors = loadings @ loadings.T - target
    np.fill_diagonal(errors, 0.0)
    return errors


def _fit_general(
    target: np.ndarray, n_hyper: int, seed: int
) -> tuple[np.ndarray, float]:
    """Constrained least squares over loadings with seeded multi-start."""
    n = target.shape[0]
    shape = (n, n_hyper)

    def objective(x: np.ndarray) -> tuple[float, np.ndarray]:
        loadings = x.reshape(shape)
        errors = _pairwise_errors(loadings, target)
        # sum over i<j of squared errors, and its gradient 2 E L
        return 0.5 * float(np.sum(errors**2)), (2.0 * errors @ loadings).ravel()

    def norm_margin(x: np.ndarray) -> np.ndarray:
        return 1.0 - (x.reshape(shape) ** 2).sum(axis=1)

    def norm_margin_jac(x: np.ndarray) -> np.ndarray:
        loadings = x.reshape(shape)
        jac = np.zeros((n, n * n_hyper))
        for i in range(n):
            jac[i, i * n_hyper : (i + 1) * n_hyper] = -2.0 * loadings[i]
        return jac

    constraint = {"type": "ineq", "fun": norm_margin, "jac": norm_margin_jac}
    rng = np.random.default_rng(seed)

    # eigen start plus random starts inside the unit ball
    values, vectors = np.linalg.eigh(target)
    order = np.argsort(values)[::-1][:n_hyper]
    eig_start = vectors[:, order] * np.sqrt(np.clip(values[order], 0.0, None))
    row_norms = np.linalg.norm(eig_start, axis=1, keepdims=True)
    eig_start = eig_start / np.maximum(row_norms, 1.0)
    starts = [eig_start]
    for _ in range(FIT_STARTS - 1):
        start = rng.uniform(-1.0, 1.0, shape) / np.sqrt(n_hyper)
        starts.append(start)

    best, best_residual = eig_start, np.inf
    for start in starts:
        result = optimize.minimize(
            objective,
            start.ravel(),
            jac=True,
            method="SLSQP",
            constraints=[constraint],
            options={"maxiter": 1000, "ftol": 1e-16},
        )
        candidate = result.x.reshape(shape)
        # SLSQP may overshoot the constraint by rounding
        norms = np.sqrt((candidate**2).sum(axis=1, keepdims=True))
        candidate = candidate / np.maximum(norms, 1.0)
        errors = _pairwise_errors(candidate, target)
        residual = float(np.max(np.abs(errors), initial=0.0))
        if residual < best_residual:
            best, best_residual = candidate, residual
    return best, best_residual


def fit_loadings(spec: CorrelationSpec) -> CorrelationStructure:
    """
    Loading coefficients for the requested dependence:

    - ``none``: no hyperparameter.
    - ``equal``: one hyperparameter, ``lambda_i = sqrt(rho_eq)``.
    - ``general``: least squares over pairwise correlations subject to
      ``sum_k lambda_ik^2 <= 1``. An unattainable target is not an error;
      the best fit is returned with its residual.
    """
    n = spec.n_components
    if spec.mode == "none":
        return CorrelationStructure(loadings=np.zeros((n, 0)), grid=None)

    grid = build_hyper_grid(spec.n_hyper_states)
    if spec.mode == "equal":
        loadings = np.full((n, 1), np.sqrt(spec.rho_eq))
        target = np.full((n, n), spec.rho_eq)
        np.fill_diagonal(target, 1.0)
        errors = _pairwise_errors(loadings, target)
        residual = float(np.max(np.abs(errors), initial=0.0))
    else:
        target = spec.matrix
        loadings, residual = _fit_general(target, spec.n_hyper, spec.fit_seed)
        if residual > RESIDUAL_WARNING:
            logger.warning(f"Correlation fit residual {residual:.4f} is large")

    logger.info(
        f"Fitted {spec.mode} correlation: {n} components, {loadings.shape[1]} "
        f"hyperparameter(s), residual {residual:.3e}"
    )
    return CorrelationStructure(
        loadings=loadings,
        grid=grid,
        fit_residual=residual,
        quadrature=spec.quadrature,
        target=target,
    )


def gaussian_space(d: np.ndarray, d0_mean: float) -> np.ndarray:
    """Nataf map of exponential crack depths onto the standard normal."""
    return stats.norm.isf(np.exp(-np.asarray(d, dtype=float) / d0_mean))


def _conditional_masses(
    y_edges: np.ndarray, shift: np.ndarray, scale: np.ndarray
) -> np.ndarray:
    """Bin masses of ``N(shift, scale^2)`` on Gaussian-space edges; shift is [N][C]."""
    z = (y_edges[None, None, :] - shift[:, :, None]) / scale[:, None, None]
    masses = stats.norm.sf(z[..., :-1]) - stats.norm.sf(z[..., 1:])
    return np.clip(masses, 0.0, None)


def conditional_initial_belief(
    structure: CorrelationStructure, grids: StateGrids, d0_mean: float
) -> ConditionalPrior:
    """
    Initial crack belief of every component conditional on every hyperparameter
    cell. ``midpoint`` evaluates the conditional at the cell's median point;
    ``cell_average`` averages it over the cell so that marginalizing recovers
    the unconditional prior up to quadrature tolerance.
    """
    n = structure.n_components
    y_edges = gaussian_space(grids.crack_edges, d0_mean)
    n_cells = structure.n_cells
    hyper_prior = np.full(n_cells, 1.0 / n_cells)

    loadings = structure.loadings
    norm_sq = np.minimum((loadings**2).sum(axis=1), LOADING_NORM_CAP)
    scale = np.sqrt(1.0 - norm_sq)

    if structure.n_hyper == 0:
        cond = _conditional_masses(y_edges, np.zeros((n, 1)), scale)
    elif structure.quadrature == "midpoint":
        shift = loadings @ structure.cell_points().T
        cond = _conditional_masses(y_edges, shift, scale)
    elif structure.n_hyper == 1:
        cond = _cell_average_1d(structure, y_edges, scale)
    else:
        cond = _cell_average_gauss(structure, y_edges, scale)

    cond = cond / cond.sum(axis=2, keepdims=True)
    return ConditionalPrior(cond=cond, hyper_prior=hyper_prior)


def _cell_average_1d(
    structure: CorrelationStructure, y_edges: np.ndarray, scale: np.ndarray
) -> np.ndarray:
    """Adaptive quadrature in probability space over each equal-probability cell."""
    k_states = structure.n_cells
    lam = structure.loadings[:, 0]
    n = structure.n_components
    cond = np.empty((n, k_states, y_edges.size - 1))

    def integrand(u: float) -> np.ndarray:
        alpha = stats.norm.ppf(u)
        return _conditional_masses(y_edges, (lam * alpha)[:, None], scale)[:, 0, :]

    for c in range(k_states):
        lo, hi = c / k_states, (c + 1) / k_states
        value, _ = integrate.quad_vec(integrand, lo, hi, epsabs=1e-13, epsrel=1e-11)
        cond[:, c, :] = value * k_states
    return cond


def _cell_average_gauss(
    structure: CorrelationStructure, y_edges: np.ndarray, scale: np.ndarray
) -> np.ndarray:
    """Tensor Gauss-Legendre average over each joint cell (two hyperparameters)."""
    k_states = structure.grid.n_states
    nodes, weights = np.polynomial.legendre.leggauss(CELL_AVERAGE_NODES_2D)
    weights = weights / weights.sum()
    # node positions in probability space for every 1D cell: [K][nodes]
    u = (np.arange(k_states)[:, None] + 0.5 * (nodes[None, :] + 1.0)) / k_states
    alpha = stats.norm.ppf(u)
    n = structure.n_components
    cond = np.zeros((n, k_states, k_states, y_edges.size - 1))
    for p, wp in enumerate(weights):
        for q, wq in enumerate(weights):
            a = alpha[:, p]
            b = alpha[:, q]
            shift = (
                structure.loadings[:, 0, None, None] * a[None, :, None]
                + structure.loadings[:, 1, None, None] * b[None, None, :]
            ).reshape(n, -1)
            masses = _conditional_masses(y_edges, shift, scale)
            cond += wp * wq * masses.reshape(n, k_states, k_states, -1)
    return cond.reshape(n, k_states * k_states, -1)


def draw_correlated_d0(
    structure: CorrelationStructure, d0_mean: float, size: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draws hyperparameters ``[size][n_hyper]`` and initial cracks ``[size][N]``."""
    alpha = rng.standard_normal((size, structure.n_hyper))
    x = rng.standard_normal((size, structure.n_components))
    y = structure.residual_sd()[None, :] * x + alpha @ structure.loadings.T
    d0 = -d0_mean * np.log(stats.norm.sf(y))
    return alpha, d0


def sample_correlated_d0(
    structure: CorrelationStructure, d0_mean: float, n_samples: int, seed: int
) -> np.ndarray:
    """Initial crack depths ``[n_samples][N]`` under the fitted dependence."""
    rng = np.random.default_rng(seed)
    _, d0 = draw_correlated_d0(structure, d0_mean, n_samples, rng)
    return d0
