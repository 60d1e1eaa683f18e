"""Nonlinear least-squares fusion of repeated flower observations.

Each tracked flower contributes one 3-vector position variable.  A prior
factor anchors the first sighting, measurement factors add later sightings,
and dynamics factors can tie consecutive epochs together — for a static
scene no dynamics factors are added, which is a stronger statement than
identity dynamics and gives the same optimum.

The stacked residuals are whitened per factor (left-multiplied by the
inverse Cholesky factor of the noise covariance) so the scalar cost is the
sum of squared Mahalanobis residuals, then minimized with the standard
Levenberg-Marquardt damping loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class SingularGraphError(RuntimeError):
    """Raised when the normal equations cannot determine every variable."""


def _check_spd(m, name: str) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {m.shape}")
    if not np.allclose(m, m.T, atol=1e-9):
        raise ValueError(f"{name} must be symmetric")
    if float(np.linalg.eigvalsh(m).min()) <= 0.0:
        raise ValueError(f"{name} must be positive definite")
    return m


def _whitener(cov: np.ndarray) -> np.ndarray:
    """W with W.T @ W = inv(cov), so ||W r||^2 is the Mahalanobis square."""
    return np.linalg.inv(np.linalg.cholesky(cov))


@dataclass
class PriorFactor:
    var: int
    mean: np.ndarray
    whiten: np.ndarray


@dataclass
class MeasurementFactor:
    var: int
    z: np.ndarray
    whiten: np.ndarray
    # h(x) -> (prediction, jacobian); None means the identity model z = x + noise
    h: Optional[Callable] = None


@dataclass
class DynamicsFactor:
    var_from: int
    var_to: int
    whiten: np.ndarray


class FactorGraph:
    """Small dense factor graph over fixed-size position variables."""

    def __init__(self, var_dim: int = 3):
        if var_dim < 1:
            raise ValueError("variable dimension must be positive")
        self.var_dim = int(var_dim)
        self._num_vars = 0
        self._factors: list = []

    # -- construction -------------------------------------------------------

    def add_variable(self) -> int:
        self._num_vars += 1
        return self._num_vars - 1

    def _check_var(self, var: int) -> int:
        if not (0 <= var < self._num_vars):
            raise ValueError(f"factor references unknown variable {var}")
        return int(var)

    def add_prior(self, var: int, mean, cov) -> None:
        cov = _check_spd(cov, "prior covariance")
        mean = np.asarray(mean, dtype=float)
        if mean.shape != (self.var_dim,):
            raise ValueError("prior mean has wrong dimension")
        self._factors.append(PriorFactor(self._check_var(var), mean, _whitener(cov)))

    def add_measurement(self, var: int, z, cov, h: Optional[Callable] = None) -> None:
        cov = _check_spd(cov, "measurement covariance")
        z = np.asarray(z, dtype=float)
        self._factors.append(
            MeasurementFactor(self._check_var(var), z, _whitener(cov), h))

    def add_dynamics(self, var_from: int, var_to: int, cov) -> None:
        cov = _check_spd(cov, "dynamics covariance")
        self._factors.append(DynamicsFactor(
            self._check_var(var_from), self._check_var(var_to), _whitener(cov)))

    @property
    def num_variables(self) -> int:
        return self._num_vars

    @property
    def num_factors(self) -> int:
        return len(self._factors)

    # -- linearization ------------------------------------------------------

    def _offsets(self) -> np.ndarray:
        return np.arange(self._num_vars) * self.var_dim

    def _linearize(self, x: np.ndarray):
        """Whitened residual vector and dense Jacobian at state x."""
        d = self.var_dim
        n = self._num_vars * d
        rows = sum(f.whiten.shape[0] for f in self._factors)
        r = np.zeros(rows)
        J = np.zeros((rows, n))
        row = 0
        for f in self._factors:
            if isinstance(f, PriorFactor):
                o = f.var * d
                res = x[o:o + d] - f.mean
                r[row:row + d] = f.whiten @ res
                J[row:row + d, o:o + d] = f.whiten
                row += d
            elif isinstance(f, MeasurementFactor):
                o = f.var * d
                if f.h is None:
                    res = x[o:o + d] - f.z
                    r[row:row + d] = f.whiten @ res
                    J[row:row + d, o:o + d] = f.whiten
                    row += d
                else:
                    pred, jac = f.h(x[o:o + d])
                    m = f.whiten.shape[0]
                    r[row:row + m] = f.whiten @ (np.asarray(pred) - f.z)
                    J[row:row + m, o:o + d] = f.whiten @ np.asarray(jac)
                    row += m
            else:  # DynamicsFactor, static model: successor should equal source
                oa = f.var_from * d
                ob = f.var_to * d
                res = x[ob:ob + d] - x[oa:oa + d]
                r[row:row + d] = f.whiten @ res
                J[row:row + d, ob:ob + d] = f.whiten
                J[row:row + d, oa:oa + d] = -f.whiten
                row += d
        return r, J

    def information_matrix(self, values) -> np.ndarray:
        """Gauss-Newton information (J^T J on whitened residuals) at the
        given state; for identity measurement models this is the sum of
        inverse factor covariances per variable block."""
        _, J = self._linearize(self._pack(values))
        return J.T @ J

    def _pack(self, values) -> np.ndarray:
        vals = [np.asarray(v, dtype=float) for v in values]
        if len(vals) != self._num_vars:
            raise ValueError(f"expected {self._num_vars} variable values, got {len(vals)}")
        for v in vals:
            if v.shape != (self.var_dim,):
                raise ValueError("variable value has wrong dimension")
        return np.concatenate(vals) if vals else np.zeros(0)

    def _unpack(self, x: np.ndarray):
        d = self.var_dim
        return [x[i * d:(i + 1) * d].copy() for i in range(self._num_vars)]

    # -- solving ------------------------------------------------------------

    def optimize(self, initial, max_iterations: int = 100,
                 min_cost_decrease: float = 1e-9):
        """Levenberg-Marquardt minimization of the summed squared
        Mahalanobis residuals.

        Returns (values, cost) where values is a list of per-variable
        vectors.  Accepted steps never increase the cost; iteration stops
        when an accepted step improves the cost by less than
        min_cost_decrease or after max_iterations.

        Raises SingularGraphError when some variable has no factor attached
        (the normal equations cannot determine it).
        """
        constrained = np.zeros(self._num_vars, dtype=bool)
        for f in self._factors:
            if isinstance(f, DynamicsFactor):
                constrained[f.var_from] = True
                constrained[f.var_to] = True
            else:
                constrained[f.var] = True
        if self._num_vars == 0:
            raise SingularGraphError("graph has no variables")
        if not np.all(constrained):
            loose = np.nonzero(~constrained)[0].tolist()
            raise SingularGraphError(f"variables {loose} have no factors")

        x = self._pack(initial)
        r, J = self._linearize(x)
        cost = float(r @ r)
        n = x.shape[0]
        lam = 1e-4
        for _ in range(max_iterations):
            A = J.T @ J
            g = J.T @ r
            accepted = False
            for _ in range(25):
                try:
                    step = np.linalg.solve(A + lam * np.eye(n), -g)
                except np.linalg.LinAlgError as err:
                    raise SingularGraphError("normal equations are singular") from err
                x_try = x + step
                r_try, J_try = self._linearize(x_try)
                cost_try = float(r_try @ r_try)
                if cost_try <= cost:
                    accepted = True
                    break
                lam *= 10.0
            if not accepted:
                break
            decrease = cost - cost_try
            x, r, J, cost = x_try, r_try, J_try, cost_try
            lam = max(lam * 0.1, 1e-12)
            if decrease < min_cost_decrease:
                break
        return self._unpack(x), cost
