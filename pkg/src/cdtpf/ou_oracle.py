"""Closed forms for the Ornstein-Uhlenbeck ground truth.

For dX = -X dt + dB observed through g(x, y) = N(y; x, sigma_y^2 I) at the
end of an interval of length T, the conditional expectation

    h(x, y, t) = E[g(X_T, y) | X_t = x]

is Gaussian and available exactly, along with the optimal control
sigma^T grad log h, the conditioned terminal law, and the marginal evidence
of a whole observation sequence (Kalman recursion).  These are the oracles
the learned quantities and the particle filters are benchmarked against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Array = np.ndarray

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class OuClosedForm:
    """Closed-form quantities for the OU model with Gaussian observations."""

    sigma_y: float
    horizon: float = 1.0

    def __post_init__(self):
        if not (self.sigma_y > 0.0) or not (self.horizon > 0.0):
            raise ValueError("sigma_y and horizon must be positive")

    # dX = -X dt + dB started at x has law N(x e^{-t}, transition_var(t)).
    def mean_decay(self, t: float) -> float:
        return float(np.exp(-t))

    def transition_var(self, t: float) -> float:
        return float((1.0 - np.exp(-2.0 * t)) / 2.0)

    def h_var(self, t: float) -> float:
        """Posterior variance (1/transition_var(t) + 1/sigma_y^2)^-1."""
        sx2 = self.transition_var(t)
        sy2 = self.sigma_y**2
        return sx2 * sy2 / (sx2 + sy2)

    def _check_time(self, t: float) -> float:
        tau = self.horizon - t
        if tau < 0.0:
            raise ValueError(f"t = {t} lies beyond the horizon {self.horizon}")
        return tau

    def log_g(self, x: Array, y: Array) -> Array:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        sy2 = self.sigma_y**2
        sq = np.sum((y - x) ** 2, axis=-1)
        d = x.shape[-1]
        return -0.5 * d * (_LOG_2PI + np.log(sy2)) - sq / (2.0 * sy2)

    def log_h(self, x: Array, y: Array, t: float) -> Array:
        """log h(x, y, t); at t = horizon this is log g(x, y) exactly.

        Marginalising X_T ~ N(x e^{-tau}, transition_var(tau)) under the
        Gaussian likelihood collapses to a single Gaussian in y with the
        observation variance inflated by the transition variance.
        """
        tau = self._check_time(t)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        decay = np.exp(-tau)
        total_var = self.transition_var(tau) + self.sigma_y**2
        sq = np.sum((y - decay * x) ** 2, axis=-1)
        d = x.shape[-1]
        return -0.5 * d * (_LOG_2PI + np.log(total_var)) - sq / (2.0 * total_var)

    def h(self, x: Array, y: Array, t: float) -> Array:
        return np.exp(self.log_h(x, y, t))

    def value(self, x: Array, y: Array, t: float) -> Array:
        """v = -log h, the value function of the control problem."""
        return -self.log_h(x, y, t)

    def optimal_control(self, x: Array, y: Array, t: float) -> Array:
        """sigma^T grad_x log h = e^{-tau} (y - e^{-tau} x) / total_var.

        Singular at t = horizon (the transition variance vanishes), so that
        endpoint is rejected; as t -> horizon the control tends to
        (y - x) / sigma_y^2.
        """
        tau = self._check_time(t)
        if tau == 0.0:
            raise ValueError("optimal control is undefined at t = horizon")
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        decay = np.exp(-tau)
        total_var = self.transition_var(tau) + self.sigma_y**2
        return decay * (y - decay * x) / total_var

    def conditioned_mean(self, x0: Array, y: Array) -> Array:
        """Mean of X_T given X_0 = x0 and the observation y at T."""
        x0 = np.asarray(x0, dtype=float)
        y = np.asarray(y, dtype=float)
        tau = self.horizon
        sx2 = self.transition_var(tau)
        sh2 = self.h_var(tau)
        return sh2 * (x0 * self.mean_decay(tau) / sx2 + y / self.sigma_y**2)

    def conditioned_sampler(self, x0: Array, y: Array, rng) -> Array:
        """Exact draw of X_T | X_0 = x0, Y_T = y (fully adapted proposal)."""
        mean = self.conditioned_mean(x0, y)
        std = np.sqrt(self.h_var(self.horizon))
        return mean + std * rng.standard_normal(mean.shape)


def kalman_evidence(
    observations: Array,
    sigma_y: float,
    mode: str = "continuous",
    step: float | None = None,
    horizon: float = 1.0,
    prior_var: float = 0.5,
) -> float:
    """Exact log-evidence of an OU observation sequence.

    Coordinates are independent, so the evidence is a sum of scalar Kalman
    recursions sharing one interval map x' = a x + N(0, q):

      * mode="continuous":  a = e^{-T}, q = (1 - e^{-2T}) / 2, the exact
        transition; this is what the fully adapted filter targets.
      * mode="discretized": a = (1 - dt)^M, q = dt * sum_i (1 - dt)^{2i},
        the exact one-interval law of the Euler chain with M = T / dt steps;
        this is what Euler-propagating filters target.

    The prior is N(0, prior_var I) per coordinate.
    """
    obs = np.atleast_2d(np.asarray(observations, dtype=float))
    if mode == "continuous":
        a = float(np.exp(-horizon))
        q = float((1.0 - np.exp(-2.0 * horizon)) / 2.0)
    elif mode == "discretized":
        if step is None:
            raise ValueError("discretized mode requires the Euler step")
        from cdtpf.sde_core import TimeGrid

        n = TimeGrid(horizon=horizon, step=step).n_steps
        a = float((1.0 - step) ** n)
        q = float(step * np.sum((1.0 - step) ** (2.0 * np.arange(n))))
    else:
        raise ValueError(f"unknown mode {mode!r}")

    d = obs.shape[1]
    mean = np.zeros(d)
    var = prior_var
    sy2 = sigma_y**2
    log_evidence = 0.0
    for y in obs:
        mean = a * mean
        var = a * a * var + q
        innov_var = var + sy2
        log_evidence += float(
            np.sum(-0.5 * (_LOG_2PI + np.log(innov_var)) - (y - mean) ** 2 / (2.0 * innov_var))
        )
        gain = var / innov_var
        mean = mean + gain * (y - mean)
        var = (1.0 - gain) * var
    return log_evidence
