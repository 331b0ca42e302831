"""Probabilistic data association by iterative message passing.

The problem for one agent pair is given by two tables:

  xi    O x (M+1)  object-oriented messages, column 0 = "no measurement"
  sigma M x (O+1)  measurement-oriented messages, column 0 = "no legacy object"

``bp_associate`` runs the loopy sum-product iteration; ``exact_associate``
enumerates every valid joint association event and is only meant as an
oracle for small instances.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from math import comb, perm

import numpy as np

from errors import AssociationError, OracleSizeError

logger = logging.getLogger("jointloc.association")

ORACLE_MAX_EVENTS = 10_000_000


@dataclass
class AssociationProblem:
    xi: np.ndarray
    sigma: np.ndarray

    def __post_init__(self) -> None:
        self.xi = np.atleast_2d(np.asarray(self.xi, dtype=float))
        sigma = np.asarray(self.sigma, dtype=float)
        n_obj = self.xi.shape[0] if self.xi.size else 0
        self.sigma = sigma.reshape(-1, n_obj + 1) if sigma.size else np.zeros((0, n_obj + 1))

    @property
    def num_objects(self) -> int:
        return int(self.xi.shape[0])

    @property
    def num_measurements(self) -> int:
        return int(self.xi.shape[1] - 1)

    def validate(self) -> None:
        n_obj, n_meas = self.num_objects, self.num_measurements
        if self.sigma.shape != (n_meas, n_obj + 1):
            raise ValueError(f"sigma must have shape {(n_meas, n_obj + 1)}, got {self.sigma.shape}")
        for name, table in (("xi", self.xi), ("sigma", self.sigma)):
            if not table.size:
                continue
            if not np.isfinite(table).all() or (table < 0).any():
                raise ValueError(f"{name} entries must be finite and non-negative")
            sums = table.sum(axis=1)
            if not (sums > 0).all():
                row = int(np.flatnonzero(sums <= 0)[0])
                raise ValueError(f"{name} row {row} has no positive entry")


@dataclass
class AssociationMarginals:
    eta_alpha: np.ndarray
    eta_beta: np.ndarray
    # messages phi[i, m] (object -> measurement) and nu[m, i] (measurement -> object)
    phi: np.ndarray
    nu: np.ndarray


def _normalize_rows(table: np.ndarray, what: str) -> np.ndarray:
    sums = table.sum(axis=1)
    if not (sums > 0).all():
        row = int(np.flatnonzero(~(sums > 0))[0])
        raise AssociationError(f"vanishing association mass in {what}", row=row)
    return table / sums[:, None]


def _checked_ratio(num: np.ndarray, den: np.ndarray, what: str) -> np.ndarray:
    if not (den > 0).all():
        row = int(np.argwhere(~(den > 0))[0][0])
        raise AssociationError(f"vanishing association mass in {what}", row=row)
    return num / den


def bp_associate(problem: AssociationProblem, iters: int = 50, tol: float = 1e-12) -> AssociationMarginals:
    """Runs up to ``iters`` message sweeps, stopping once no measurement message moves by more than ``tol`` (relative)."""
    if iters < 1:
        raise ValueError(f"iters must be a positive integer, got {iters}")
    problem.validate()
    xi0, xim = problem.xi[:, 0], problem.xi[:, 1:]
    s0, sm = problem.sigma[:, 0], problem.sigma[:, 1:]
    n_obj, n_meas = xim.shape

    nu = np.ones((n_meas, n_obj))
    phi = np.ones((n_obj, n_meas))
    for _ in range(iters):
        prod = xim * nu.T
        den = xi0[:, None] + prod.sum(axis=1, keepdims=True) - prod
        phi = _checked_ratio(xim, den, "object rows")
        prod = sm * phi.T
        den = s0[:, None] + prod.sum(axis=1, keepdims=True) - prod
        nu_next = _checked_ratio(sm, den, "measurement rows")
        settled = (np.abs(nu_next - nu) <= tol * nu_next).all()
        nu = nu_next
        if settled:
            break

    eta_alpha = _normalize_rows(np.hstack([xi0[:, None], xim * nu.T]), "object rows")
    eta_beta = _normalize_rows(np.hstack([s0[:, None], sm * phi.T]), "measurement rows")
    return AssociationMarginals(eta_alpha=eta_alpha, eta_beta=eta_beta, phi=phi, nu=nu)


def count_events(num_objects: int, num_measurements: int) -> int:
    return sum(
        comb(num_objects, k) * perm(num_measurements, k) for k in range(min(num_objects, num_measurements) + 1)
    )


def exact_associate(problem: AssociationProblem, max_events: int = ORACLE_MAX_EVENTS) -> AssociationMarginals:
    """Exact marginals by enumerating all one-to-one association events."""
    problem.validate()
    n_obj, n_meas = problem.num_objects, problem.num_measurements
    n_events = count_events(n_obj, n_meas)
    if n_events > max_events:
        raise OracleSizeError(f"oracle size guard: {n_events} events exceed {max_events}")

    xi, sigma = problem.xi, problem.sigma
    alpha_mass = np.zeros((n_obj, n_meas + 1))
    beta_mass = np.zeros((n_meas, n_obj + 1))
    total = 0.0
    base_alpha = np.zeros(n_obj, dtype=int)
    for k in range(min(n_obj, n_meas) + 1):
        for objs in itertools.combinations(range(n_obj), k):
            for meas in itertools.permutations(range(n_meas), k):
                alpha = base_alpha.copy()
                beta = np.zeros(n_meas, dtype=int)
                for i, m in zip(objs, meas):
                    alpha[i] = m + 1
                    beta[m] = i + 1
                weight = float(np.prod(xi[np.arange(n_obj), alpha]) * np.prod(sigma[np.arange(n_meas), beta]))
                if weight == 0.0:
                    continue
                total += weight
                alpha_mass[np.arange(n_obj), alpha] += weight
                beta_mass[np.arange(n_meas), beta] += weight
    if not total > 0:
        raise AssociationError("vanishing association mass: no valid event has positive weight")
    eta_alpha = alpha_mass / total
    eta_beta = beta_mass / total
    logger.debug("exact association over %d events (O=%d, M=%d)", n_events, n_obj, n_meas)
    return AssociationMarginals(
        eta_alpha=eta_alpha, eta_beta=eta_beta, phi=np.full((n_obj, n_meas), np.nan), nu=np.full((n_meas, n_obj), np.nan)
    )
