"""LASSO by cyclic coordinate descent, support refits and lambda sweeps.

The functional minimised is ``||X a - y||^2 + lam * ||a||_1``.  With
``standardize=True`` (the default) the columns are scaled to unit norm first,
so ``lam`` penalises the standardised coefficients and a feature's weight is
equivariant under rescaling of that feature.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

log = logging.getLogger(__name__)

ZERO_THRESHOLD = 1e-6
REFIT_JITTER = 1e-12
DEFAULT_LAMBDA_GRID = tuple(float(v) for v in np.logspace(-6, 2, 10))


@dataclass(frozen=True)
class RegressionProblem:
    features: np.ndarray
    target: np.ndarray
    lam: float = 0.0

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.target, dtype=float).ravel()
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] != y.size:
            raise ValueError(f"features {X.shape} do not match target length {y.size}")
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError("need at least one sample and one feature")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("regression inputs must be finite")
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ValueError(f"lambda must be a finite non-negative number, got {self.lam}")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "target", y)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


@dataclass
class SparseSolution:
    weights: np.ndarray
    support: tuple[int, ...]
    objective: float
    n_iter: int = 0
    converged: bool = True
    objective_history: list[float] = field(default_factory=list, repr=False)


def _column_scales(X: np.ndarray, standardize: bool) -> np.ndarray:
    norms = np.sqrt(np.einsum("ij,ij->j", X, X))
    return norms if standardize else np.where(norms > 0, 1.0, 0.0)


def soft_threshold(z: float, t: float) -> float:
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


def extract_support(weights: np.ndarray, scales: np.ndarray | None = None,
                    threshold: float = ZERO_THRESHOLD) -> tuple[int, ...]:
    """Indices whose (scale-adjusted) magnitude exceeds ``threshold * max``."""
    mag = np.abs(weights) * (1.0 if scales is None else scales)
    top = float(mag.max()) if mag.size else 0.0
    if top == 0.0:
        return ()
    return tuple(int(i) for i in np.flatnonzero(mag > threshold * top))


def _polish(gram, corr, beta, q, half_lam, max_swaps: int = 8) -> bool:
    """Solve the optimality conditions exactly, starting from the current active set.

    A coordinate whose sign flips is dropped and the worst-violating inactive
    coordinate is added, for at most ``max_swaps`` rounds.  The result is
    written into ``beta``/``q`` only if it satisfies every optimality condition.
    """
    G = np.array(gram)
    c = np.array(corr)
    p = len(beta)
    act = [j for j, b in enumerate(beta) if b != 0.0]
    signs = {j: 1.0 if beta[j] > 0 else -1.0 for j in act}
    for _ in range(max_swaps):
        if not act:
            return False
        s = np.array([signs[j] for j in act])
        try:
            sol = np.linalg.solve(G[np.ix_(act, act)], c[act] - half_lam * s)
        except np.linalg.LinAlgError:
            return False
        flipped = [j for j, v, sj in zip(act, sol, s) if v * sj <= 0]
        if flipped:
            act = [j for j in act if j not in flipped]
            continue
        b = np.zeros(p)
        b[act] = sol
        resid = c - G @ b
        viol = np.abs(resid) - half_lam * (1 + 1e-12) - 1e-15
        viol[act] = -np.inf
        worst = int(np.argmax(viol))
        if viol[worst] > 0:
            act.append(worst)
            signs[worst] = 1.0 if resid[worst] > 0 else -1.0
            continue
        beta[:] = b.tolist()
        q[:] = resid.tolist()
        return True
    return False


def lasso_fit(problem: RegressionProblem, tol: float = 1e-8, max_iter: int = 10_000,
              standardize: bool = True, track_objective: bool = False,
              polish_every: int = 5) -> SparseSolution:
    """Cyclic coordinate descent on the Gram matrix.

    Stops once the largest coordinate update of a sweep (in standardised
    units) falls below ``tol``.  Every ``polish_every`` sweeps the active set
    found so far is solved exactly; if that point satisfies the optimality
    conditions the descent ends there (``polish_every=0`` disables this).
    Hitting ``max_iter`` is logged and flagged in ``converged``, not raised.
    """
    if not tol > 0 or max_iter < 1:
        raise ValueError("tol must be positive and max_iter >= 1")
    X, y, lam = problem.features, problem.target, float(problem.lam)
    p = X.shape[1]
    scales = _column_scales(X, standardize)
    active = np.flatnonzero(scales > 0)
    weights = np.zeros(p)
    if active.size == 0:
        obj = float(y @ y)
        return SparseSolution(weights, (), obj, 0, True, [obj] if track_objective else [])

    Xs = X[:, active] / scales[active]
    gram = (Xs.T @ Xs).tolist()
    corr = (Xs.T @ y).tolist()
    yy = float(y @ y)
    q = list(corr)  # corr - gram @ beta
    beta = [0.0] * active.size
    half_lam = 0.5 * lam
    m = active.size
    history = []

    def objective() -> float:
        # ||y||^2 - 2 c.b + b.G.b + lam |b|_1, evaluated from the Gram form
        quad = sum(beta[j] * (corr[j] - q[j]) for j in range(m))
        lin = sum(beta[j] * corr[j] for j in range(m))
        return yy - 2.0 * lin + quad + lam * sum(abs(b) for b in beta)

    if track_objective:
        history.append(objective())
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        max_delta = 0.0
        for j in range(m):
            gjj = gram[j][j]
            bj = beta[j]
            new = soft_threshold(q[j] + gjj * bj, half_lam) / gjj
            delta = new - bj
            if delta != 0.0:
                beta[j] = new
                row = gram[j]
                for k in range(m):
                    q[k] -= delta * row[k]
                if abs(delta) > max_delta:
                    max_delta = abs(delta)
        if track_objective:
            history.append(objective())
        if max_delta < tol:
            converged = True
            break
        if polish_every and n_iter % polish_every == 0 and _polish(gram, corr, beta, q, half_lam):
            if track_objective:
                history.append(objective())
            converged = True
            break
    if not converged:
        log.debug("lasso_fit: no convergence after %d sweeps (lambda=%g)", max_iter, lam)

    b = np.array(beta)
    weights[active] = b / scales[active]
    resid = X @ weights - y
    obj = float(resid @ resid) + lam * float(np.abs(b).sum())
    support = tuple(int(active[i]) for i in extract_support(b))
    weights[[i for i in range(p) if i not in support]] = 0.0
    return SparseSolution(weights, support, obj, n_iter, converged, history)


def kkt_residual(problem: RegressionProblem, weights: np.ndarray,
                 standardize: bool = True) -> float:
    """Largest violation of the subgradient optimality conditions."""
    X, y, lam = problem.features, problem.target, problem.lam
    scales = _column_scales(X, standardize)
    active = scales > 0
    Xs = X[:, active] / scales[active]
    b = np.asarray(weights, dtype=float)[active] * scales[active]
    grad = 2.0 * Xs.T @ (Xs @ b - y)
    viol = np.where(b != 0, np.abs(grad + lam * np.sign(b)), np.maximum(np.abs(grad) - lam, 0.0))
    return float(viol.max()) if viol.size else 0.0


def refit_support(problem: RegressionProblem, support: Iterable[int]) -> np.ndarray:
    """Unregularised least squares restricted to ``support``; zeros elsewhere."""
    support = sorted(set(int(i) for i in support))
    if not support:
        raise ValueError("cannot refit an empty support")
    X, y = problem.features, problem.target
    sub = X[:, support]
    scales = np.sqrt(np.einsum("ij,ij->j", sub, sub))
    scales[scales == 0] = 1.0
    sub = sub / scales
    gram = sub.T @ sub + REFIT_JITTER * np.eye(len(support))
    coef = np.linalg.solve(gram, sub.T @ y) / scales
    weights = np.zeros(problem.n_features)
    weights[support] = coef
    return weights


def relative_lambda_scale(features: np.ndarray, target: np.ndarray) -> float:
    """``max |Xs^T y|`` for unit-norm columns; lambda >= 2x this zeroes every weight."""
    X = np.asarray(features, dtype=float)
    norms = np.sqrt(np.einsum("ij,ij->j", X, X))
    ok = norms > 0
    if not ok.any():
        return 0.0
    return float(np.max(np.abs((X[:, ok] / norms[ok]).T @ np.asarray(target, dtype=float))))


R = TypeVar("R")


def lambda_sweep(build: Callable[[float], R], lambdas: Sequence[float],
                 score: Callable[[R], float]) -> tuple[float, R, list[R]]:
    """Run ``build`` for every lambda and keep the highest-scoring result.

    Ties go to the earliest lambda in the list.
    """
    if len(lambdas) == 0:
        raise ValueError("lambda grid is empty")
    results = [build(float(lam)) for lam in lambdas]
    best = 0
    best_score = score(results[0])
    for i in range(1, len(results)):
        s = score(results[i])
        if s > best_score:
            best, best_score = i, s
    return float(lambdas[best]), results[best], results
