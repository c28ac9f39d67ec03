"""Evolutionary search over sets of terms, scored by sparse regression.

Each individual is an equation candidate: ``n_terms`` distinct terms, one of
which is the target (right-hand side).  The remaining terms are weighted by
LASSO; fitness is the inverse residual norm of that fit.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Sequence

import numpy as np

from .regression import (
    ZERO_THRESHOLD, RegressionProblem, lasso_fit, refit_support,
    relative_lambda_scale,
)
from .tokens import (
    Family, Term, Workspace, all_terms, sample_random_term, sample_random_token,
    search_space_size, term_label,
)

log = logging.getLogger(__name__)

# stream tags keep the seeded sub-generators of different operators apart
_INIT, _OPS, _MUTATE = 11, 23, 37


class EvolutionError(RuntimeError):
    pass


@dataclass(frozen=True)
class EvolutionConfig:
    n_terms: int = 8            # M: terms per individual, target included
    k: int = 3                  # max tokens per term for derivative families
    n_pop: int = 10
    n_epochs: int = 200
    r_mutation: float = 0.4
    r_crossover: float = 0.4
    a_proc: float = 0.2
    a_elite: float = 0.4
    lam: float = 1e-4           # relative to max|Xs^T y| of each candidate
    seed: int = 0
    fitness_epsilon: float = 1e-9
    tournament_size: int = 2
    gene_swap_prob: float = 0.5
    lasso_tol: float = 1e-8
    lasso_max_iter: int = 1000
    prune_threshold: float = 1e-3  # final terms must carry this share of ||target||
    workers: int = 1

    def __post_init__(self):
        for name in ("r_mutation", "r_crossover", "a_proc", "a_elite", "gene_swap_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.n_terms < 2:
            raise ValueError("an individual needs at least two terms")
        if self.n_pop < 1 or self.n_epochs < 0 or self.k < 1:
            raise ValueError("n_pop and k must be positive, n_epochs non-negative")
        if self.tournament_size < 1:
            raise ValueError("tournament_size must be >= 1")
        if not 0.0 <= self.prune_threshold < 1.0:
            raise ValueError("prune_threshold must lie in [0, 1)")
        if not (self.fitness_epsilon > 0 and self.lam >= 0):
            raise ValueError("fitness_epsilon must be positive and lam non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> "EvolutionConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown evolution settings: {unknown}")
        return cls(**data)

    @property
    def n_elite(self) -> int:
        return min(self.n_pop, _ceil(self.a_elite * self.n_pop))

    @property
    def n_parents(self) -> int:
        return _ceil(self.a_proc * self.n_pop)


def _ceil(x: float) -> int:
    # 0.2 * 10 must give 2, not 3
    return int(math.ceil(x - 1e-9))


@dataclass
class Individual:
    terms: tuple[Term, ...]
    target: int
    weights: np.ndarray | None = None
    fitness: float | None = None
    trivial: bool = False

    def __post_init__(self):
        self.terms = tuple(self.terms)
        if not 0 <= self.target < len(self.terms):
            raise ValueError(f"target index {self.target} out of range")

    @property
    def target_term(self) -> Term:
        return self.terms[self.target]

    @property
    def left_terms(self) -> tuple[Term, ...]:
        return tuple(t for i, t in enumerate(self.terms) if i != self.target)

    @property
    def key(self) -> tuple:
        return (self.target_term, self.left_terms)

    def rank_key(self) -> tuple:
        return (self.fitness, not self.trivial)

    def clone(self) -> "Individual":
        w = None if self.weights is None else self.weights.copy()
        return Individual(self.terms, self.target, w, self.fitness, self.trivial)

    def support(self) -> tuple[Term, ...]:
        """Target plus left terms with nonzero weight."""
        if self.weights is None:
            return (self.target_term,)
        left = self.left_terms
        return (self.target_term,) + tuple(left[i] for i in np.flatnonzero(self.weights))


# --- fitness ----------------------------------------------------------------------

def _design(ind: Individual, ws: Workspace) -> tuple[np.ndarray, np.ndarray]:
    X = np.column_stack([ws.column(t) for t in ind.left_terms])
    y = ws.column(ind.target_term)
    return X, y


def compute_fitness(ind: Individual, ws: Workspace, lam: float,
                    cfg: EvolutionConfig) -> float:
    """Fit the left terms to the target with LASSO and store 1/(residual + eps).

    ``lam`` is relative: the absolute penalty is ``lam * max|Xs^T y|`` for the
    candidate's own unit-norm design.  An all-zero fit keeps the finite
    fitness ``1/(||y|| + eps)`` and is flagged trivial.
    """
    X, y = _design(ind, ws)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise EvolutionError("non-finite term values")
    lam_abs = lam * relative_lambda_scale(X, y)
    sol = lasso_fit(RegressionProblem(X, y, lam_abs), tol=cfg.lasso_tol,
                    max_iter=cfg.lasso_max_iter)
    resid = float(np.linalg.norm(X @ sol.weights - y))
    ind.weights = sol.weights
    ind.trivial = not sol.support
    ind.fitness = 1.0 / (resid + cfg.fitness_epsilon)
    return ind.fitness


class FitnessCache:
    """Memo of fitness results keyed by (target, left terms in gene order)."""

    def __init__(self, ws: Workspace, lam: float, cfg: EvolutionConfig):
        self.ws, self.lam, self.cfg = ws, lam, cfg
        self._memo: dict = {}

    def evaluate(self, ind: Individual) -> None:
        hit = self._memo.get(ind.key)
        if hit is None:
            compute_fitness(ind, self.ws, self.lam, self.cfg)
            self._memo[ind.key] = (ind.weights, ind.fitness, ind.trivial)
        else:
            w, ind.fitness, ind.trivial = hit
            ind.weights = w.copy()

    def evaluate_all(self, population: Sequence[Individual]) -> None:
        todo = [ind for ind in population if ind.fitness is None]
        if self.cfg.workers > 1 and len(todo) > 1:
            # each evaluation is pure, so completion order cannot change results
            with ThreadPoolExecutor(self.cfg.workers) as pool:
                list(pool.map(self.evaluate, todo))
        else:
            for ind in todo:
                self.evaluate(ind)


# --- genetic operators ------------------------------------------------------------

def _distinct_term(family: Family, rng: np.random.Generator, taken: set,
                   attempts: int = 200) -> Term | None:
    for _ in range(attempts):
        term = sample_random_term(family, rng)
        if term not in taken:
            return term
    return None


def init_population(cfg: EvolutionConfig, family: Family, stream: int = 0) -> list[Individual]:
    n_available = len(all_terms(family))
    if n_available < cfg.n_terms:
        raise EvolutionError(
            f"token family admits only {n_available} distinct terms, "
            f"{cfg.n_terms} needed per individual"
        )
    pool = None
    population = []
    for index in range(cfg.n_pop):
        rng = np.random.default_rng([cfg.seed, stream, _INIT, index])
        terms: list[Term] = []
        while len(terms) < cfg.n_terms:
            term = _distinct_term(family, rng, set(terms))
            if term is None:
                # sampler keeps hitting taken terms: fall back to an explicit draw
                pool = pool or all_terms(family)
                rest = [t for t in pool if t not in terms]
                term = rest[int(rng.integers(len(rest)))]
            terms.append(term)
        population.append(Individual(tuple(terms), int(rng.integers(cfg.n_terms))))
    return population


def tournament_select(population: Sequence[Individual], a_proc: float,
                      rng: np.random.Generator, size: int = 2) -> list[int]:
    """Indices of ``ceil(a_proc * n_pop)`` tournament winners."""
    n = len(population)
    if n == 0:
        raise EvolutionError("empty population")
    if any(ind.fitness is None for ind in population):
        raise EvolutionError("tournament needs evaluated individuals")
    winners = []
    for _ in range(_ceil(a_proc * n)):
        contenders = rng.choice(n, size=min(size, n), replace=False)
        keys = [population[i].rank_key() for i in contenders]
        top = max(keys)
        best = [int(i) for i, k in zip(contenders, keys) if k == top]
        winners.append(best[0] if len(best) == 1 else best[int(rng.integers(len(best)))])
    return winners


def crossover(p1: Individual, p2: Individual, r_crossover: float,
              rng: np.random.Generator) -> tuple[Individual, Individual]:
    """Position-wise gene exchange; each position swaps with probability ``r_crossover``.

    A swap that would put the same term twice into one offspring is skipped.
    Both offspring get a freshly drawn target position.
    """
    m = len(p1.terms)
    if len(p2.terms) != m:
        raise EvolutionError("parents differ in number of terms")
    a, b = list(p1.terms), list(p2.terms)
    mask = rng.random(m) < r_crossover
    for i in np.flatnonzero(mask):
        ta, tb = a[i], b[i]
        if ta == tb:
            continue
        if tb in a or ta in b:
            continue
        a[i], b[i] = tb, ta
    t1, t2 = int(rng.integers(m)), int(rng.integers(m))
    return Individual(tuple(a), t1), Individual(tuple(b), t2)


def mutate(ind: Individual, r_mutation: float, family: Family,
           rng: np.random.Generator, gene_swap_prob: float = 0.5) -> Individual:
    """Each gene mutates with probability ``r_mutation``.

    A mutating gene is either replaced by a fresh random term (probability
    ``gene_swap_prob``) or has one of its tokens replaced.  The new gene must
    differ from the old one and from the individual's other genes; if no such
    gene turns up within the sampling budget the gene is left as it was.
    """
    terms = list(ind.terms)
    changed = False
    for i in range(len(terms)):
        if rng.random() >= r_mutation:
            continue
        taken = set(terms)
        if rng.random() < gene_swap_prob:
            new = _distinct_term(family, rng, taken)
        else:
            new = None
            old = terms[i].tokens
            for _ in range(50):
                pos = int(rng.integers(len(old)))
                cand = Term(old[:pos] + (sample_random_token(family, rng),) + old[pos + 1:])
                if cand not in taken:
                    new = cand
                    break
        if new is not None:
            terms[i] = new
            changed = True
    if not changed:
        return ind.clone()
    return Individual(tuple(terms), ind.target)


# --- main loop ----------------------------------------------------------------------

@dataclass
class DiscoveredModel:
    target: Term
    terms: list[Term]
    coefficients: list[float]
    raw_coefficients: list[float]
    genes: list[Term]
    lam: float
    fitness: float
    refit_fitness: float
    residual_norm: float
    target_norm: float
    seed: int
    epochs: int
    history: list[float] = field(default_factory=list)
    structure_history: list[tuple[str, ...]] = field(default_factory=list)
    degenerate: bool = False

    @property
    def target_label(self) -> str:
        return term_label(self.target)

    @property
    def labels(self) -> list[str]:
        return [term_label(t) for t in self.terms]

    def support_labels(self) -> frozenset[str]:
        return frozenset([self.target_label, *self.labels])

    def equation(self, digits: int = 4) -> str:
        if self.degenerate:
            return f"{self.target_label} = 0 (degenerate)"
        parts = []
        for coef, label in zip(self.coefficients, self.labels):
            sign = "-" if coef < 0 else "+"
            parts.append(f"{sign} {abs(coef):.{digits}f} * {label}")
        text = " ".join(parts)
        text = text[2:] if text.startswith("+ ") else "-" + text[2:]
        return f"{self.target_label} = {text}"

    def first_epoch_with(self, labels: set[str] | frozenset[str]) -> int | None:
        want = tuple(sorted(labels))
        for epoch, support in enumerate(self.structure_history):
            if support == want:
                return epoch
        return None


def _ranked(population: Sequence[Individual]) -> list[int]:
    """Indices sorted best first; ties keep population order."""
    return sorted(range(len(population)), key=lambda i: population[i].rank_key(), reverse=True)


def pruned_support(ind: Individual, ws: Workspace,
                   cfg: EvolutionConfig) -> tuple[list[int], np.ndarray | None]:
    """LASSO support after refitting without shrinkage and pruning.

    Terms whose refit contribution ``|c| * ||column||`` is negligible (below
    the zero threshold relative to the largest, or below ``prune_threshold *
    ||target||``) are dropped one at a time, smallest first, with a refit after
    each removal.  Returns indices into ``left_terms`` and the refit weights.
    """
    if ind.weights is None:
        return [], None
    X, y = _design(ind, ws)
    support = [int(i) for i in np.flatnonzero(ind.weights)]
    problem = RegressionProblem(X, y)
    scales = np.linalg.norm(X, axis=0)
    floor = cfg.prune_threshold * float(np.linalg.norm(y))
    refit = None
    while support:
        refit = refit_support(problem, support)
        contrib = np.abs(refit[support]) * scales[support]
        weak = contrib <= max(ZERO_THRESHOLD * contrib.max(), floor)
        if not weak.any():
            break
        support.pop(int(np.argmin(contrib)))
    return support, refit


def finalize(ind: Individual, ws: Workspace, lam: float, cfg: EvolutionConfig,
             history: list[float], structure: list[tuple[str, ...]]) -> DiscoveredModel:
    """Refit and prune the best individual's LASSO support (see ``pruned_support``)."""
    X, y = _design(ind, ws)
    left = ind.left_terms
    eps = cfg.fitness_epsilon
    support, refit = pruned_support(ind, ws, cfg)
    if support:
        resid = float(np.linalg.norm(X @ refit - y))
        terms = [left[i] for i in support]
        coefs = [float(refit[i]) for i in support]
        raw = [float(ind.weights[i]) for i in support]
    else:
        resid = float(np.linalg.norm(y))
        terms, coefs, raw = [], [], []
    return DiscoveredModel(
        target=ind.target_term, terms=terms, coefficients=coefs, raw_coefficients=raw,
        genes=list(ind.terms), lam=lam, fitness=float(ind.fitness),
        refit_fitness=1.0 / (resid + eps), residual_norm=resid,
        target_norm=float(np.linalg.norm(y)), seed=cfg.seed,
        epochs=cfg.n_epochs, history=list(history), structure_history=list(structure),
        degenerate=not support,
    )


def _structure(ind: Individual, ws: Workspace, cfg: EvolutionConfig) -> tuple[str, ...]:
    support, _ = pruned_support(ind, ws, cfg)
    left = ind.left_terms
    return tuple(sorted([term_label(ind.target_term)] + [term_label(left[i]) for i in support]))


def evolve(cfg: EvolutionConfig, ws: Workspace, family: Family,
           lam: float | None = None, stream: int = 0,
           on_epoch: Callable[[int, Individual], None] | None = None) -> DiscoveredModel:
    """Run the genetic search and return the refitted best individual.

    ``history[e]`` is the best fitness after ``e`` epochs (entry 0 is the
    random initial population), so it has ``n_epochs + 1`` entries.
    """
    lam = cfg.lam if lam is None else lam
    n_tokens = len(family.tokens())
    log.debug("search space: %d candidate sets",
              search_space_size(n_tokens, family.max_tokens, cfg.n_terms))
    ws.precompute(family)
    cache = FitnessCache(ws, lam, cfg)
    population = init_population(cfg, family, stream)
    history: list[float] = []
    structure: list[tuple[str, ...]] = []
    structure_memo: dict = {}
    n_elite = cfg.n_elite

    for epoch in range(cfg.n_epochs + 1):
        cache.evaluate_all(population)
        order = _ranked(population)
        best = population[order[0]]
        history.append(float(best.fitness))
        if best.key not in structure_memo:
            structure_memo[best.key] = _structure(best, ws, cfg)
        structure.append(structure_memo[best.key])
        if on_epoch is not None:
            on_epoch(epoch, best)
        if epoch == cfg.n_epochs:
            break

        rng = np.random.default_rng([cfg.seed, stream, _OPS, epoch])
        parents = tournament_select(population, cfg.a_proc, rng, cfg.tournament_size)
        offspring: list[Individual] = []
        for j in range(0, len(parents), 2):
            mate = parents[j + 1] if j + 1 < len(parents) else parents[0]
            offspring.extend(crossover(population[parents[j]], population[mate],
                                       cfg.r_crossover, rng))
        elite = set(order[:n_elite])
        replaceable = [i for i in reversed(order) if i not in elite]
        for slot, child in zip(replaceable, offspring):
            population[slot] = child

        for i in range(len(population)):
            if i in elite:
                continue
            irng = np.random.default_rng([cfg.seed, stream, _MUTATE, epoch, i])
            population[i] = mutate(population[i], cfg.r_mutation, family, irng,
                                   cfg.gene_swap_prob)

    order = _ranked(population)
    return finalize(population[order[0]], ws, lam, cfg, history, structure)


# --- lambda selection ---------------------------------------------------------------

def fitness_score(model: DiscoveredModel) -> float:
    return model.refit_fitness


def model_complexity(model: DiscoveredModel) -> int:
    """Total token count of the equation, target included."""
    return len(model.target) + sum(len(t) for t in model.terms)


def relative_residual(model: DiscoveredModel) -> float:
    if model.target_norm > 0:
        return model.residual_norm / model.target_norm
    return model.residual_norm


def parsimony_score(tolerance: float = 0.05,
                    slack: float = 0.1) -> Callable[[Sequence[DiscoveredModel]], int]:
    """Pick the model with the fewest tokens among those explaining their
    target to within ``tolerance`` (relative residual).  If none does, the
    bound widens to ``(1 + slack)`` times the best relative residual.  Ties go
    to the lower residual, then the earlier lambda.

    Residual ratios alone cannot separate a law from its algebraic
    consequences: squaring ``a = b`` gives ``ab = (a^2 + b^2)/2`` with a
    residual quadratic in the data error, so sparsity has to decide.
    """

    def choose(models: Sequence[DiscoveredModel]) -> int:
        live = [i for i, m in enumerate(models) if not m.degenerate]
        if not live:
            return 0
        rel = {i: relative_residual(models[i]) for i in live}
        bound = max(tolerance, (1.0 + slack) * min(rel.values()))
        ok = [i for i in live if rel[i] <= bound]
        return min(ok, key=lambda i: (model_complexity(models[i]), rel[i], i))

    return choose


SELECTORS = ("fitness", "parsimony")


def discover(ws: Workspace, family: Family, cfg: EvolutionConfig,
             lambdas: Sequence[float], selector: str = "fitness",
             parsimony_tolerance: float = 0.05) -> tuple[DiscoveredModel, list[DiscoveredModel]]:
    """Evolve once per lambda and keep the model preferred by ``selector``.

    Each lambda runs on its own random stream, so the sweep doubles as a set
    of independent restarts.
    """
    if selector not in SELECTORS:
        raise ValueError(f"unknown selector {selector!r}; choose from {SELECTORS}")
    if len(lambdas) == 0:
        raise ValueError("lambda grid is empty")
    models = [evolve(cfg, ws, family, lam=float(lam), stream=i) for i, lam in enumerate(lambdas)]
    if selector == "fitness":
        scores = [fitness_score(m) for m in models]
        return models[scores.index(max(scores))], models
    return models[parsimony_score(parsimony_tolerance)(models)], models
