"""
Discretized deterioration-rate model of one component class.

Crack depth ``d`` lives on a log-spaced grid ending in an absorbing failure
bin ``[d_crit, inf)``. The deterioration rate ``tau`` is the component age in
years: it advances by one each year, saturates at ``n_rate - 1`` and is reset
to zero by a perfect repair. Transitions are estimated by Monte Carlo from the
Paris-law growth function, holding a component's fatigue parameters fixed over
its life; inspections follow an exponential PoD curve.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from src.models.actions import Observation
from src.utils.artifacts import derive_rng
from src.utils.errors import NumericalError

logger = logging.getLogger(__name__)

SMALLEST_CRACK_EDGE = 1e-4  # mm
MIN_MC_SAMPLES = 10_000
ROW_SUM_TOLERANCE = 1e-9


@dataclass(frozen=True)
class FatigueParams:
    """Paris-law random variables and deterministic parameters (9-out-of-10 study)."""

    ln_c_mean: float = -35.2
    ln_c_sd: float = 0.5
    s_mean: float = 70.0  # N/mm^2
    s_sd: float = 10.0
    m: float = 3.5
    n_cycles: float = 1e6  # per year
    d0_mean: float = 1.0  # mm
    d_crit: float = 20.0  # mm
    horizon_years: int = 30

    def __post_init__(self) -> None:
        if self.m <= 2:
            raise ValueError(f"Paris exponent m must exceed 2, got {self.m}")
        if self.d_crit <= 0:
            raise ValueError(f"d_crit must be positive, got {self.d_crit}")
        if self.n_cycles <= 0:
            raise ValueError(f"n_cycles must be positive, got {self.n_cycles}")
        if self.horizon_years < 1:
            raise ValueError(f"horizon_years must be >= 1, got {self.horizon_years}")
        if self.d0_mean <= 0 or self.ln_c_sd < 0 or self.s_sd < 0:
            raise ValueError("d0_mean must be positive and standard deviations >= 0")


@dataclass(frozen=True)
class StateGrids:
    crack_edges: np.ndarray
    n_rate: int

    def __post_init__(self) -> None:
        edges = np.asarray(self.crack_edges, dtype=float)
        if edges.ndim != 1 or edges.size < 3:
            raise ValueError("crack_edges needs at least 3 entries")
        if edges[0] != 0.0 or not np.isinf(edges[-1]):
            raise ValueError("crack_edges must start at 0 and end at +inf")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("crack_edges must be strictly increasing")
        if self.n_rate < 1:
            raise ValueError(f"n_rate must be >= 1, got {self.n_rate}")
        edges.setflags(write=False)
        object.__setattr__(self, "crack_edges", edges)

    @property
    def n_crack(self) -> int:
        return self.crack_edges.size - 1

    @property
    def rate_states(self) -> np.ndarray:
        return np.arange(self.n_rate)

    @property
    def failure_bin(self) -> int:
        return self.n_crack - 1

    @property
    def d_crit(self) -> float:
        return float(self.crack_edges[-2])


@dataclass(frozen=True)
class TransitionTables:
    """``crack_step[tau, i, j] = p(d' in bin j | d in bin i, tau)`` under do-nothing."""

    crack_step: np.ndarray

    def __post_init__(self) -> None:
        table = np.asarray(self.crack_step, dtype=float)
        if table.ndim != 3 or table.shape[1] != table.shape[2]:
            raise ValueError(f"crack_step must be [n_rate][n][n], got {table.shape}")
        if np.any(table < 0):
            raise ValueError("crack_step has negative entries")
        if np.any(np.abs(table.sum(axis=2) - 1.0) > ROW_SUM_TOLERANCE):
            raise ValueError("crack_step rows must sum to 1")
        table.setflags(write=False)
        object.__setattr__(self, "crack_step", table)

    @property
    def n_rate(self) -> int:
        return self.crack_step.shape[0]

    def next_rate(self, rate: np.ndarray, repaired: np.ndarray) -> np.ndarray:
        """Deterministic rate step: age + 1 (capped) for do-nothing, 0 after repair."""
        advanced = np.minimum(np.asarray(rate) + 1, self.n_rate - 1)
        return np.where(np.asarray(repaired, dtype=bool), 0, advanced)

    def is_stochastically_monotone(self) -> bool:
        """First-moment ordering: larger source bins never expect a smaller next bin."""
        n = self.crack_step.shape[1]
        expected = self.crack_step @ np.arange(n)
        return bool(np.all(np.diff(expected, axis=1) >= -1e-12))


@dataclass(frozen=True)
class ObservationModel:
    pod_mean: float
    detect_prob: np.ndarray

    def __post_init__(self) -> None:
        probs = np.asarray(self.detect_prob, dtype=float)
        if np.any(probs < 0) or np.any(probs > 1):
            raise ValueError("detection probabilities must lie in [0, 1]")
        if np.any(np.diff(probs) < -1e-12):
            raise ValueError("detection probabilities must be non-decreasing")
        probs.setflags(write=False)
        object.__setattr__(self, "detect_prob", probs)

    def likelihood(self, observation: int) -> np.ndarray:
        """p(o | crack bin) as a vector over bins."""
        if observation == Observation.DETECTION:
            return self.detect_prob
        if observation == Observation.NO_DETECTION:
            return 1.0 - self.detect_prob
        return np.ones_like(self.detect_prob)

    def likelihood_matrix(self, observations: np.ndarray) -> np.ndarray:
        """Stacks ``likelihood`` for a vector of observations: ``[N][n_crack]``."""
        table = np.stack(
            [np.ones_like(self.detect_prob), self.detect_prob, 1.0 - self.detect_prob]
        )
        return table[np.asarray(observations, dtype=int)]


@dataclass(frozen=True)
class DeteriorationModel:
    """Grids, tables, observation model and d0 prior for one component class."""

    grids: StateGrids
    tables: TransitionTables
    observation: ObservationModel
    prior: np.ndarray
    params: FatigueParams | None = None
    seed: int | None = None
    mc_samples: int | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        prior = np.asarray(self.prior, dtype=float)
        n = self.grids.n_crack
        if prior.shape != (n,):
            raise ValueError(f"prior must have {n} entries, got {prior.shape}")
        if abs(prior.sum() - 1.0) > ROW_SUM_TOLERANCE:
            raise ValueError("prior must sum to 1")
        if self.tables.crack_step.shape[1:] != (n, n):
            raise ValueError("transition tables do not match the crack grid")
        if self.tables.n_rate != self.grids.n_rate:
            raise ValueError("transition tables do not match the rate grid")
        if self.observation.detect_prob.shape != (n,):
            raise ValueError("observation model does not match the crack grid")
        prior.setflags(write=False)
        object.__setattr__(self, "prior", prior)

    @property
    def n_crack(self) -> int:
        return self.grids.n_crack

    @property
    def n_rate(self) -> int:
        return self.grids.n_rate

    @property
    def failure_bin(self) -> int:
        return self.grids.failure_bin


GrowthLaw = Callable[[np.ndarray, FatigueParams, np.ndarray, np.ndarray], np.ndarray]


def build_grids(params: FatigueParams, n_crack: int, n_rate: int) -> StateGrids:
    """
    Crack edges ``{0, exp(linspace(ln 1e-4, ln d_crit, n_crack - 1)), inf}``.
    With 30 bins this is the log step ``(ln d_c - ln 1e-4) / 28``.
    """
    if n_crack < 3:
        raise ValueError(
            f"n_crack must be >= 3 to hold 0, an interior bin and the failure bin; "
            f"got {n_crack}"
        )
    if params.d_crit <= SMALLEST_CRACK_EDGE:
        raise ValueError(f"d_crit must exceed {SMALLEST_CRACK_EDGE} mm")
    if n_rate < params.horizon_years + 1:
        logger.warning(
            f"n_rate={n_rate} is below horizon+1={params.horizon_years + 1}; "
            "the deterioration rate saturates at its last state"
        )
    interior = np.exp(
        np.linspace(math.log(SMALLEST_CRACK_EDGE), math.log(params.d_crit), n_crack - 1)
    )
    # linspace endpoints can drift by an ulp through exp/log
    interior[0] = SMALLEST_CRACK_EDGE
    interior[-1] = params.d_crit
    edges = np.concatenate(([0.0], interior, [np.inf]))
    return StateGrids(crack_edges=edges, n_rate=n_rate)


def bin_index(grids: StateGrids, d: np.ndarray | float) -> np.ndarray:
    """Bin of each crack depth; lower edges are inclusive, so ``d_crit`` is failed."""
    idx = np.searchsorted(grids.crack_edges, d, side="right") - 1
    return np.clip(idx, 0, grids.n_crack - 1)


def deterministic_growth(
    d: np.ndarray | float,
    params: FatigueParams,
    c: np.ndarray | float,
    s: np.ndarray | float,
) -> np.ndarray:
    """
    One year of Paris-law growth:
    ``[(1 - m/2) C S^m pi^(m/2) n + d^(1 - m/2)]^(2/(2 - m))``.
    Returns ``inf`` where the bracket is not positive (finite-time blow-up).
    """
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("crack depth must be positive")
    m = params.m
    exponent = 1.0 - m / 2.0
    increment = (
        exponent
        * np.asarray(c, dtype=float)
        * np.asarray(s, dtype=float) ** m
        * math.pi ** (m / 2.0)
        * params.n_cycles
    )
    base = increment + d**exponent
    positive = base > 0
    safe = np.where(positive, base, 1.0)
    return np.where(positive, safe ** (1.0 / exponent), np.inf)


def initial_depth(
    d: np.ndarray | float,
    params: FatigueParams,
    c: np.ndarray | float,
    s: np.ndarray | float,
    years: int,
) -> np.ndarray:
    """
    Inverse of ``years`` applications of ``deterministic_growth`` under fixed
    (C, S): the initial depth that reaches ``d`` after ``years`` years.
    ``d = 0`` maps to 0 and ``d = inf`` to the smallest depth that blows up.
    """
    exponent = 1.0 - params.m / 2.0
    increment = (
        exponent
        * np.asarray(c, dtype=float)
        * np.asarray(s, dtype=float) ** params.m
        * math.pi ** (params.m / 2.0)
        * params.n_cycles
    )
    with np.errstate(divide="ignore", over="ignore"):
        base = np.power(np.asarray(d, dtype=float), exponent) - years * increment
        return np.power(np.maximum(base, 0.0), 1.0 / exponent)


def bin_probability_at_age(
    grids: StateGrids,
    params: FatigueParams,
    i: int,
    age: int,
    c: np.ndarray,
    s: np.ndarray,
) -> np.ndarray:
    """``P(d_age in bin i | C, S)`` for an exponential initial depth."""
    lo, hi = grids.crack_edges[i], grids.crack_edges[i + 1]
    lo0 = initial_depth(lo, params, c, s, age)
    hi0 = initial_depth(hi, params, c, s, age)
    return np.exp(-lo0 / params.d0_mean) * -np.expm1(-(hi0 - lo0) / params.d0_mean)


def sample_parameters(
    params: FatigueParams, size: int | tuple, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draws (C, S); S is truncated at zero."""
    c = np.exp(rng.normal(params.ln_c_mean, params.ln_c_sd, size))
    s = np.maximum(rng.normal(params.s_mean, params.s_sd, size), 0.0)
    return c, s


def sample_within_bin(
    grids: StateGrids, i: int, size: int, rng: np.random.Generator
) -> np.ndarray:
    """
    Crack depths inside bin ``i``: the first bin is a point mass at half its
    upper edge, interior bins are log-uniform.
    """
    lo, hi = grids.crack_edges[i], grids.crack_edges[i + 1]
    if i == 0:
        return np.full(size, hi / 2.0)
    if np.isinf(hi):
        raise ValueError("the failure bin is absorbing and is never sampled")
    return np.exp(rng.uniform(math.log(lo), math.log(hi), size))


def rate_age(tau: int) -> int:
    """
    Years of growth behind the crack that a step into rate ``tau`` starts
    from. Rate 1 follows a new component's first year and rate 0 follows a
    repair, so both start from a fresh crack.
    """
    return max(tau - 1, 0)


def _estimate_row(
    grids: StateGrids,
    params: FatigueParams,
    tau: int,
    i: int,
    mc_samples: int,
    seed: int,
    growth: GrowthLaw,
) -> np.ndarray:
    """One transition row from its own derived random stream."""
    n = grids.n_crack
    if i == grids.failure_bin:
        row = np.zeros(n)
        row[i] = 1.0
        return row
    rng = derive_rng(seed, tau, i)
    d = sample_within_bin(grids, i, mc_samples, rng)
    c, s = sample_parameters(params, mc_samples, rng)
    # (C, S) weighted by how likely they put the crack in bin i at this age
    weights = bin_probability_at_age(grids, params, i, rate_age(tau), c, s)
    total = float(weights.sum())
    if not np.isfinite(total) or total <= 0.0:
        logger.warning(
            f"Bin {i} is out of reach at age {rate_age(tau)}; "
            f"row tau={tau} uses unconditioned (C, S)"
        )
        weights = np.ones(mc_samples)
    else:
        ess = total**2 / float(np.sum(weights**2))
        logger.debug(f"Row (tau={tau}, bin={i}): effective sample size {ess:.0f}")
    idx = bin_index(grids, growth(d, params, c, s))
    counts = np.bincount(idx, weights=weights, minlength=n)
    total = counts.sum()
    if total == 0:
        raise NumericalError(f"Transition row (tau={tau}, bin={i}) received no samples")
    return counts / total


def estimate_crack_step(
    grids: StateGrids,
    params: FatigueParams,
    mc_samples: int,
    seed: int,
    growth: GrowthLaw = deterministic_growth,
    threads: int = 1,
) -> TransitionTables:
    """
    Monte Carlo transition tables. Every (tau, bin) cell draws from its own
    seed-derived stream, so the result does not depend on ``threads``.
    Each row holds (C, S) fixed over the component's life: draws are weighted
    by the probability of reaching the source bin at age ``rate_age(tau)``, so
    older components in a small bin grow slower than young ones. The weights
    use the Paris-law inverse, whatever ``growth`` is passed.
    """
    if mc_samples < MIN_MC_SAMPLES:
        raise ValueError(f"mc_samples must be >= {MIN_MC_SAMPLES}, got {mc_samples}")
    cells = [(tau, i) for tau in range(grids.n_rate) for i in range(grids.n_crack)]
    logger.info(
        f"Estimating {len(cells)} transition rows with {mc_samples} samples each "
        f"on {threads} thread(s)"
    )

    def work(cell: tuple[int, int]) -> np.ndarray:
        return _estimate_row(grids, params, cell[0], cell[1], mc_samples, seed, growth)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(work, cells))
    else:
        rows = [work(cell) for cell in cells]

    table = np.array(rows).reshape(grids.n_rate, grids.n_crack, grids.n_crack)
    tables = TransitionTables(crack_step=table)
    if not tables.is_stochastically_monotone():
        logger.warning("Estimated transition tables are not stochastically monotone")
    return tables


def pod(d: np.ndarray | float, pod_mean: float) -> np.ndarray:
    """Exponential probability of detection ``1 - exp(-d / pod_mean)``."""
    return -np.expm1(-np.asarray(d, dtype=float) / pod_mean)


def _mean_detection_in_bin(lo: float, hi: float, pod_mean: float) -> float:
    """Average PoD under a log-uniform density on ``[lo, hi]``."""
    if hi <= lo:
        return float(pod(lo, pod_mean))
    log_lo, log_hi = math.log(lo), math.log(hi)
    value, _ = integrate.quad(
        lambda u: float(pod(math.exp(u), pod_mean)), log_lo, log_hi, epsabs=1e-13
    )
    return value / (log_hi - log_lo)


def build_observation_model(grids: StateGrids, pod_mean: float) -> ObservationModel:
    """Per-bin detection probability under the within-bin sampling rule."""
    if pod_mean <= 0:
        raise ValueError(f"pod_mean must be positive, got {pod_mean}")
    edges = grids.crack_edges
    probs = np.empty(grids.n_crack)
    probs[0] = float(pod(edges[1] / 2.0, pod_mean))
    for i in range(1, grids.failure_bin):
        probs[i] = _mean_detection_in_bin(edges[i], edges[i + 1], pod_mean)
    probs[grids.failure_bin] = 1.0
    # quadrature noise must not break the ordering
    probs = np.clip(np.maximum.accumulate(probs), 0.0, 1.0)
    return ObservationModel(pod_mean=pod_mean, detect_prob=probs)


def initial_prior(grids: StateGrids, d0_mean: float) -> np.ndarray:
    """Bin masses of the exponential initial crack depth."""
    survival = np.exp(-grids.crack_edges / d0_mean)
    masses = survival[:-1] - survival[1:]
    return masses / masses.sum()


def build_deterioration_model(
    params: FatigueParams,
    n_crack: int = 30,
    n_rate: int = 31,
    mc_samples: int = 100_000,
    seed: int = 0,
    pod_mean: float = 8.0,
    threads: int = 1,
    growth: GrowthLaw = deterministic_growth,
) -> DeteriorationModel:
    grids = build_grids(params, n_crack, n_rate)
    tables = estimate_crack_step(grids, params, mc_samples, seed, growth, threads)
    observation = build_observation_model(grids, pod_mean)
    model = DeteriorationModel(
        grids=grids,
        tables=tables,
        observation=observation,
        prior=initial_prior(grids, params.d0_mean),
        params=params,
        seed=seed,
        mc_samples=mc_samples,
    )
    logger.info(
        f"Built deterioration model: {n_crack} crack bins x {n_rate} rate states, "
        f"PoD mean {pod_mean} mm"
    )
    return model


def unmaintained_failure_curve(model: DeteriorationModel, years: int) -> np.ndarray:
    """Failure-bin mass of an uninspected, unrepaired component, years 0..``years``."""
    belief = model.prior.copy()
    curve = [belief[model.failure_bin]]
    tau = 0
    for _ in range(years):
        tau = min(tau + 1, model.n_rate - 1)
        belief = belief @ model.tables.crack_step[tau]
        curve.append(belief[model.failure_bin])
    return np.array(curve)


def simulate_failure_curve(
    params: FatigueParams, n_paths: int, years: int, seed: int
) -> np.ndarray:
    """
    Continuous Monte Carlo counterpart of ``unmaintained_failure_curve``.
    Each path keeps its (C, S) for all ``years``.
    """
    rng = np.random.default_rng(seed)
    d = rng.exponential(params.d0_mean, n_paths)
    d = np.maximum(d, np.finfo(float).tiny)
    c, s = sample_parameters(params, n_paths, rng)
    curve = [np.mean(d >= params.d_crit)]
    for _ in range(years):
        alive = np.isfinite(d)
        grown = np.full_like(d, np.inf)
        grown[alive] = deterministic_growth(d[alive], params, c[alive], s[alive])
        d = grown
        curve.append(np.mean(d >= params.d_crit))
    return np.array(curve)
