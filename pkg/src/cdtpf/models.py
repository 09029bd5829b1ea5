"""Benchmark diffusion models, observation models, and training distributions.

Three generative families:

  * Ornstein-Uhlenbeck in d dimensions with Gaussian observations
    (closed forms available, see ou_oracle);
  * a logistic growth diffusion in Lamperti coordinates x = log(p) / theta3,
    observed through negative-binomial counts;
  * a two-gene repressilator-style cell model with mutual Hill-function
    activation, Gaussian observations, and empirical training distributions
    harvested from a long simulation.

Training distributions are samplers (n, rng) -> array used to draw initial
states and observations for control learning.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import gammaln

from cdtpf.sde_core import DiffusionModel, NumericalDivergenceError, TimeGrid, euler_update, sample_brownian_paths

Array = np.ndarray


@dataclass(frozen=True)
class ObservationModel:
    """Conditional observation law g(x, y) with log-density and sampler.

    log_g maps (..., d), (..., obs_dim) -> (...); sample_y maps states to one
    observation per state. grad_x_log_g is the state-gradient of log_g where
    implemented (used by oracle checks).
    """

    obs_dim: int
    log_g: Callable[[Array, Array], Array]
    sample_y: Callable[[Array, np.random.Generator], Array]
    grad_x_log_g: Optional[Callable[[Array, Array], Array]] = None


@dataclass(frozen=True)
class TrainingDistributions:
    """Samplers for initial states eta_x and observations eta_y."""

    eta_x: Callable[[int, np.random.Generator], Array]
    eta_y: Callable[[int, np.random.Generator], Array]


# ---- Ornstein-Uhlenbeck ---------------------------------------------------


def ou_model(dim: int) -> DiffusionModel:
    """dX = -X dt + dB in R^dim."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    eye = np.eye(dim)
    return DiffusionModel(
        dim=dim,
        drift=lambda x: -x,
        volatility=lambda x: np.broadcast_to(eye, x.shape[:-1] + (dim, dim)),
        volatility_diag=np.ones(dim),
    )


def ou_stationary_dist(dim: int) -> Callable[[int, np.random.Generator], Array]:
    """Stationary law N(0, I/2) of the OU model."""
    sd = np.sqrt(0.5)
    return lambda n, rng: sd * rng.standard_normal((n, dim))


def gaussian_obs(dim: int, sigma_y: float) -> ObservationModel:
    """g(x, y) = N(y; x, sigma_y^2 I)."""
    if not sigma_y > 0.0:
        raise ValueError("sigma_y must be positive")
    sy2 = sigma_y**2
    log_norm = -0.5 * dim * np.log(2.0 * np.pi * sy2)

    def log_g(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return log_norm - np.sum((y - x) ** 2, axis=-1) / (2.0 * sy2)

    def sample_y(x, rng):
        x = np.asarray(x, dtype=float)
        return x + sigma_y * rng.standard_normal(x.shape)

    def grad_x_log_g(x, y):
        return (np.asarray(y, dtype=float) - np.asarray(x, dtype=float)) / sy2

    return ObservationModel(obs_dim=dim, log_g=log_g, sample_y=sample_y, grad_x_log_g=grad_x_log_g)


def ou_obs(dim: int, sigma_y: float) -> tuple[ObservationModel, TrainingDistributions]:
    """Gaussian observations plus the OU training distributions.

    eta_x is the stationary N(0, I/2); eta_y is the implied observation
    marginal N(0, (1/2 + sigma_y^2) I).
    """
    obs = gaussian_obs(dim, sigma_y)
    obs_sd = np.sqrt(0.5 + sigma_y**2)
    dists = TrainingDistributions(
        eta_x=ou_stationary_dist(dim),
        eta_y=lambda n, rng: obs_sd * rng.standard_normal((n, dim)),
    )
    return obs, dists


# ---- logistic diffusion in Lamperti coordinates ---------------------------


def logistic_model(theta1: float, theta2: float, theta3: float) -> DiffusionModel:
    """Logistic growth diffusion in Lamperti coordinates x = log(p) / theta3,
    where the population SDE dP = (theta1 + theta3^2/2 - theta2 P) P dt
    + theta3 P dB becomes unit-volatility:

        mu(x) = theta1 / theta3 - (theta2 / theta3) e^{theta3 x}.

    All three rates must be positive; there are no defaults.
    """
    for name, val in (("theta1", theta1), ("theta2", theta2), ("theta3", theta3)):
        if not val > 0.0:
            raise ValueError(f"{name} must be positive")
    a = theta1 / theta3
    b = theta2 / theta3

    def drift(x):
        x = np.asarray(x, dtype=float)
        return a - b * np.exp(theta3 * x)

    return DiffusionModel(
        dim=1,
        drift=drift,
        volatility=lambda x: np.broadcast_to(np.eye(1), np.shape(x)[:-1] + (1, 1)),
        volatility_diag=np.ones(1),
    )


def logistic_stationary_dist(
    theta1: float, theta2: float, theta3: float
) -> Callable[[int, np.random.Generator], Array]:
    """Stationary law of the population: P ~ Gamma(shape, rate) with
    shape = 2 (theta3^2/2 + theta1) / theta3^2 - 1 = 2 theta1 / theta3^2 and
    rate = 2 theta2 / theta3^2, pushed through x = log(p) / theta3."""
    shape = 2.0 * (theta3**2 / 2.0 + theta1) / theta3**2 - 1.0
    rate = 2.0 * theta2 / theta3**2
    if not shape > 0.0:
        raise ValueError("theta1 must be positive for a stationary law")

    def eta_x(n, rng):
        p = rng.gamma(shape, 1.0 / rate, size=n)
        return (np.log(p) / theta3)[:, None]

    return eta_x


def nb_obs(theta3: float, theta4: float) -> ObservationModel:
    """Negative-binomial counts with mean exp(theta3 x) and dispersion
    theta4 = r, variance m + m^2 / r."""
    if not theta3 > 0.0 or not theta4 > 0.0:
        raise ValueError("theta3 and theta4 must be positive")
    r = theta4

    def _validate(y):
        y = np.asarray(y, dtype=float)
        if np.any(y < 0) or np.any(y != np.floor(y)):
            raise ValueError("negative-binomial observations must be nonnegative integers")
        return y

    def log_g(x, y):
        x = np.asarray(x, dtype=float)
        y = _validate(y)[..., 0]
        m = np.exp(theta3 * x[..., 0])
        return (
            gammaln(y + r)
            - gammaln(r)
            - gammaln(y + 1.0)
            + r * np.log(r / (r + m))
            + y * np.log(m / (r + m))
        )

    def sample_y(x, rng):
        x = np.asarray(x, dtype=float)
        m = np.exp(theta3 * x[..., 0])
        p = r / (r + m)
        return rng.negative_binomial(r, p).astype(float)[..., None]

    def grad_x_log_g(x, y):
        x = np.asarray(x, dtype=float)
        y = _validate(y)[..., 0]
        m = np.exp(theta3 * x[..., 0])
        return (theta3 * r * (y - m) / (r + m))[..., None]

    return ObservationModel(obs_dim=1, log_g=log_g, sample_y=sample_y, grad_x_log_g=grad_x_log_g)


def logistic_training_dists(
    theta1: float, theta2: float, theta3: float, theta4: float
) -> TrainingDistributions:
    """eta_x stationary, eta_y its composition with the count model."""
    eta_x = logistic_stationary_dist(theta1, theta2, theta3)
    obs = nb_obs(theta3, theta4)

    def eta_y(n, rng):
        return obs.sample_y(eta_x(n, rng), rng)

    return TrainingDistributions(eta_x=eta_x, eta_y=eta_y)


# ---- two-gene cell model --------------------------------------------------

_CELL_THRESHOLD = 2.0**-4
CELL_X0 = np.array([1.0, 1.0])


def cell_model() -> DiffusionModel:
    """Mutually activating two-gene expression model on R^2:

        mu_i(x) = x_i^4 / (2^-4 + x_i^4) + 2^-4 / (2^-4 + x_j^4) - x_i

    with volatility sqrt(0.1) I_2 and deterministic start at (1, 1)."""
    sd = np.sqrt(0.1)

    def drift(x):
        x = np.asarray(x, dtype=float)
        x4 = x**4
        own = x4 / (_CELL_THRESHOLD + x4)
        other = _CELL_THRESHOLD / (_CELL_THRESHOLD + x4[..., ::-1])
        return own + other - x

    return DiffusionModel(
        dim=2,
        drift=drift,
        volatility=lambda x: np.broadcast_to(sd * np.eye(2), np.shape(x)[:-1] + (2, 2)),
        volatility_diag=np.full(2, sd),
    )


# ---- empirical training distributions -------------------------------------


def empirical_training_dists(
    model: DiffusionModel,
    obs_model: ObservationModel,
    x0: Array,
    duration: float,
    grid: TimeGrid,
    rng: np.random.Generator,
) -> TrainingDistributions:
    """Harvest eta_x / eta_y from one long uncontrolled simulation.

    The trajectory runs for `duration` time units on the grid's step; the
    state is recorded at the end of every observation interval (multiples of
    grid.horizon) and one observation is sampled at each recorded state.
    Samplers then draw uniformly with replacement from the reservoir.
    A divergent trajectory aborts with the failing step index.
    """
    n_intervals = round(duration / grid.horizon)
    if n_intervals < 1 or abs(n_intervals * grid.horizon - duration) > 1e-9 * max(1.0, duration):
        raise ValueError("duration must be a positive multiple of the grid horizon")
    x = np.asarray(x0, dtype=float)[None, :]
    if x.shape != (1, model.dim):
        raise ValueError("x0 must have shape (dim,)")
    states = np.empty((n_intervals, model.dim))
    for k in range(n_intervals):
        incr = sample_brownian_paths(grid, model.dim, 1, rng)
        for m in range(grid.n_steps):
            x = euler_update(
                model, x, None, grid.step, incr[m], step_index=k * grid.n_steps + m
            )
        states[k] = x[0]
    if not np.all(np.isfinite(states)):
        raise NumericalDivergenceError("reservoir", what="recorded state")
    obs = obs_model.sample_y(states, rng)

    def eta_x(n, sample_rng):
        idx = sample_rng.integers(0, n_intervals, size=n)
        return states[idx].copy()

    def eta_y(n, sample_rng):
        idx = sample_rng.integers(0, n_intervals, size=n)
        return obs[idx].copy()

    return TrainingDistributions(eta_x=eta_x, eta_y=eta_y)
