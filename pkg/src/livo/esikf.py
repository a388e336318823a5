"""Iterated error-state Kalman update shared by the LiDAR and visual stages.

The measurement model is the linearization 0 = r + H @ dx + noise around
the current iterate, combined with the propagated prior through the
tangent-space projection of the prior residual.  A single iteration is
algebraically one Gauss-Newton step on the MAP cost.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, List

import numpy as np

from .manifold import (
    STATE_DIM,
    FullState,
    StateWithCov,
    boxminus,
    boxplus,
    tangent_projection,
)

log = logging.getLogger(__name__)


@dataclass
class MeasurementTerm:
    """One residual block: r (m,), jac (m,29), cov (m,m) or a 1-D diagonal."""

    r: np.ndarray
    jac: np.ndarray
    cov: np.ndarray

    def whiten(self):
        """Returns (cov^-1 r, cov^-1 jac, r^T cov^-1 r)."""
        if self.cov.ndim == 1:
            ci_r = self.r / self.cov
            ci_H = self.jac / self.cov[:, None]
        else:
            ci_r = np.linalg.solve(self.cov, self.r)
            ci_H = np.linalg.solve(self.cov, self.jac)
        return ci_r, ci_H, float(self.r @ ci_r)


@dataclass
class UpdateInfo:
    iterations: int = 0
    converged: bool = False
    degenerate: bool = False
    residual_norms: List[float] = field(default_factory=list)
    cost: float = np.nan
    n_terms: int = 0


def kalman_gain_information(H, R, P):
    """K = (H^T R^-1 H + P^-1)^-1 H^T R^-1."""
    Ri = np.linalg.inv(R)
    return np.linalg.solve(H.T @ Ri @ H + np.linalg.inv(P), H.T @ Ri)


def kalman_gain_covariance(H, R, P):
    """Classic covariance form K = P H^T (H P H^T + R)^-1."""
    return P @ H.T @ np.linalg.inv(H @ P @ H.T + R)


def _solve_spd(A, b):
    try:
        L = np.linalg.cholesky(A)
        y = np.linalg.solve(L, b)
        return np.linalg.solve(L.T, y)
    except np.linalg.LinAlgError:
        log.warning("normal matrix not positive definite; regularizing")
        return np.linalg.solve(A + 1e-9 * np.eye(A.shape[0]), b)


def _accumulate(terms):
    S = np.zeros((STATE_DIM, STATE_DIM))
    w = np.zeros(STATE_DIM)
    meas_cost = 0.0
    for t in terms:
        ci_r, ci_H, c = t.whiten()
        S += t.jac.T @ ci_H
        w += t.jac.T @ ci_r
        meas_cost += c
    return S, w, meas_cost


def map_cost(x_check: FullState, prior: StateWithCov, terms):
    """MAP objective at the iterate (prior Mahalanobis plus residual terms)."""
    b = boxminus(x_check, prior.x)
    cost = float(b @ np.linalg.solve(prior.cov, b))
    for t in terms:
        cost += t.whiten()[2]
    return cost


def iterated_update(prior: StateWithCov,
                    build_terms: Callable[[FullState], List[MeasurementTerm]],
                    x_init: FullState = None,
                    eps: float = 1e-6,
                    max_iterations: int = 5,
                    max_halvings: int = 4):
    """Run the iterated update; returns (posterior StateWithCov, UpdateInfo).

    build_terms is re-evaluated at every iterate (and at damped trial
    states).  With no valid terms the prior is returned unchanged apart
    from pulling the linearization point back toward the prior mean.
    """
    x_hat = prior.x
    x_check = (x_init or x_hat).copy()
    info = UpdateInfo()

    terms = build_terms(x_check)
    S = w = None
    IKH = P = np.eye(STATE_DIM)
    for it in range(max_iterations):
        info.iterations = it + 1
        b = boxminus(x_check, x_hat)
        Hproj = tangent_projection(x_check, x_hat)
        Hproj_inv = np.linalg.inv(Hproj)
        P = Hproj_inv @ prior.cov @ Hproj_inv.T
        P = 0.5 * (P + P.T)
        P_inv = np.linalg.inv(P)

        S, w, meas_cost = _accumulate(terms)
        info.n_terms = int(sum(len(t.r) for t in terms))
        if len(terms) == 0:
            info.degenerate = True
        A = S + P_inv
        # delta = -K z - (I - K H) Hproj^-1 (x_check [-] x_hat)
        IKH = np.eye(STATE_DIM) - _solve_spd(A, S)
        delta = -_solve_spd(A, w) - IKH @ (Hproj_inv @ b)

        cost_old = float(b @ (np.linalg.solve(prior.cov, b))) + meas_cost
        step = delta
        x_next = boxplus(x_check, step)
        terms_next = build_terms(x_next)
        for _ in range(max_halvings):
            if map_cost(x_next, prior, terms_next) <= cost_old + 1e-12:
                break
            step = 0.5 * step
            x_next = boxplus(x_check, step)
            terms_next = build_terms(x_next)
        x_check = x_next
        terms = terms_next
        info.residual_norms.append(float(np.linalg.norm(step)))
        if np.linalg.norm(step) < eps:
            info.converged = True
            break

    info.cost = map_cost(x_check, prior, terms)
    cov = IKH @ P
    cov = 0.5 * (cov + cov.T)
    return StateWithCov(x_check, cov), info
