"""Euler-Maruyama simulation of controlled diffusions and their value processes.

A diffusion dX_t = mu(X_t) dt + sigma(X_t) dB_t is integrated on a uniform
grid together with the scalar value process

    V' = V + (0.5 ||z||^2 + <c, z>) dt + <z, dB>,

driven by the same Brownian increments.  Increments are pre-generated per
path (never streamed) so that training and filtering can replay identical
noise; batched draws use a fixed step-major layout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

Array = np.ndarray

# Control and z-source fields map (state, observation, time) -> R^d.
ControlFunction = Callable[[Array, Array, float], Array]


class NumericalDivergenceError(RuntimeError):
    """A simulated state or value left the finite range."""

    def __init__(self, step_index, what: str = "state"):
        self.step_index = step_index
        super().__init__(
            f"non-finite {what} encountered at integration step {step_index}"
        )


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, horizon] with n_steps * step == horizon exactly."""

    horizon: float = 1.0
    step: float = 0.02

    def __post_init__(self):
        if not (self.horizon > 0.0) or not (self.step > 0.0):
            raise ValueError("horizon and step must be positive")
        n = round(self.horizon / self.step)
        if n < 1 or abs(n * self.step - self.horizon) > 1e-12 * max(1.0, self.horizon):
            raise ValueError(
                f"step {self.step} does not divide horizon {self.horizon}"
            )

    @property
    def n_steps(self) -> int:
        return round(self.horizon / self.step)

    def times(self) -> Array:
        """Left endpoints t_m = m * step for m = 0 .. n_steps - 1."""
        return np.arange(self.n_steps) * self.step


@dataclass(frozen=True)
class DiffusionModel:
    """Time-homogeneous diffusion with drift (..., d) -> (..., d) and
    volatility (..., d) -> (..., d, d), both broadcasting over leading axes.

    volatility_diag, when given, must be the constant diagonal of the full
    volatility; it enables an elementwise fast path that is checked against
    the general matrix product in tests.
    """

    dim: int
    drift: Callable[[Array], Array]
    volatility: Callable[[Array], Array]
    volatility_diag: Optional[Array] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.volatility_diag is not None:
            diag = np.atleast_1d(np.asarray(self.volatility_diag, dtype=float))
            if diag.shape == (1,) and self.dim > 1:
                diag = np.repeat(diag, self.dim)
            if diag.shape != (self.dim,):
                raise ValueError("volatility_diag must have shape (dim,)")
            object.__setattr__(self, "volatility_diag", diag)
        probe = np.zeros(self.dim)
        if np.shape(self.drift(probe)) != (self.dim,):
            raise ValueError("drift output must have shape (dim,)")
        sig = self.volatility(probe)
        if np.shape(sig) != (self.dim, self.dim):
            raise ValueError("volatility output must have shape (dim, dim)")
        if self.volatility_diag is not None and not np.allclose(
            sig, np.diag(self.volatility_diag)
        ):
            raise ValueError("volatility_diag disagrees with volatility at x = 0")


@dataclass(frozen=True)
class BrownianPath:
    """Pre-generated increments for one path, shape (n_steps, dim)."""

    step: float
    increments: Array


def sample_brownian_paths(grid: TimeGrid, dim: int, n_paths: int, rng) -> Array:
    """Draw increments for a batch of paths in one call.

    Returns shape (n_steps, n_paths, dim); the step-major layout fixes the
    order in which the underlying stream is consumed, so two simulations
    drawing the same shape from the same generator state see identical noise.
    """
    out = rng.standard_normal((grid.n_steps, n_paths, dim))
    out *= np.sqrt(grid.step)
    return out


def sample_brownian_path(grid: TimeGrid, dim: int, rng) -> BrownianPath:
    incr = sample_brownian_paths(grid, dim, 1, rng)[:, 0, :]
    return BrownianPath(step=grid.step, increments=incr)


def apply_volatility(model: DiffusionModel, x: Array, vec: Array) -> Array:
    """sigma(x) @ vec, batched over leading axes of x and vec."""
    if model.volatility_diag is not None:
        return model.volatility_diag * vec
    sig = model.volatility(x)
    return np.einsum("...ij,...j->...i", sig, vec)


def euler_update(
    model: DiffusionModel,
    x: Array,
    control_values: Optional[Array],
    dt: float,
    db: Array,
    step_index=None,
) -> Array:
    """One Euler-Maruyama step with pre-evaluated control values (or None)."""
    mu = model.drift(x)
    if control_values is not None:
        mu = mu + apply_volatility(model, x, control_values)
    x_new = x + mu * dt + apply_volatility(model, x, db)
    if not np.all(np.isfinite(x_new)):
        raise NumericalDivergenceError(step_index if step_index is not None else "?")
    return x_new


def euler_step(
    x: Array,
    model: DiffusionModel,
    control: Optional[ControlFunction],
    y: Array,
    t: float,
    dt: float,
    db: Array,
    step_index=None,
) -> Array:
    """One Euler-Maruyama step of the controlled diffusion."""
    c = control(x, y, t) if control is not None else None
    return euler_update(model, x, c, dt, db, step_index=step_index)


def value_step(v: Array, z: Array, c_val: Optional[Array], dt: float, db: Array) -> Array:
    """V' = V + (0.5 ||z||^2 + <c, z>) dt + <z, dB>, batched on leading axes."""
    quad = 0.5 * np.sum(z * z, axis=-1)
    if c_val is not None:
        quad = quad + np.sum(c_val * z, axis=-1)
    return v + quad * dt + np.sum(z * db, axis=-1)


def simulate_controlled_pair(
    x0: Array,
    v0: float,
    y: Array,
    model: DiffusionModel,
    control: Optional[ControlFunction],
    z_source: Optional[ControlFunction],
    grid: TimeGrid,
    path: BrownianPath,
    return_trajectory: bool = False,
):
    """Integrate (X, V) along one pre-generated Brownian path.

    At each step the control and z fields are evaluated at the current state;
    the value update and the state update then consume the same increment.
    control=None means an uncontrolled state path; z_source=None freezes V.
    Returns (x_T, v_T), plus the (n_steps + 1)-long trajectories if requested.
    """
    if path.increments.shape != (grid.n_steps, model.dim):
        raise ValueError("path increments do not match grid and model dimensions")
    x = np.asarray(x0, dtype=float)
    v = float(v0)
    xs = [x]
    vs = [v]
    dt = grid.step
    for m in range(grid.n_steps):
        t = m * dt
        db = path.increments[m]
        z = z_source(x, y, t) if z_source is not None else None
        c = control(x, y, t) if control is not None else None
        if z is not None:
            v = value_step(v, z, c, dt, db)
            if not np.all(np.isfinite(v)):
                raise NumericalDivergenceError(m, what="value")
        x = euler_update(model, x, c, dt, db, step_index=m)
        if return_trajectory:
            xs.append(x)
            vs.append(v)
    if return_trajectory:
        return x, v, (np.array(xs), np.array(vs))
    return x, v
