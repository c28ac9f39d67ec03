"""Token families, terms (products of tokens) and the evaluation workspace."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np


class TokenError(ValueError):
    pass


@dataclass(frozen=True)
class DerivativeToken:
    """Derivative of the field along one grid axis; order 0 is the field itself."""

    axis: int
    order: int
    axis_name: str = field(default="", compare=False)

    family = "derivative"

    def __post_init__(self):
        if self.order < 0:
            raise TokenError("derivative order must be non-negative")
        if self.order == 0:
            # the raw field is the same token whichever axis it was built from
            object.__setattr__(self, "axis", 0)
            object.__setattr__(self, "axis_name", "")

    @property
    def sort_key(self) -> tuple:
        return (0, self.order > 0, self.axis if self.order else 0, self.order, 0.0)

    @property
    def base_key(self) -> str:
        return "u" if self.order == 0 else f"d{self.order}u/d{self.axis}"

    def label(self) -> str:
        name = self.axis_name or f"x{self.axis}"
        if self.order == 0:
            return "u"
        if self.order == 1:
            return f"du/d{name}"
        return f"d{self.order}u/d{name}{self.order}"

    def evaluate(self, base: Mapping[str, np.ndarray]) -> np.ndarray:
        try:
            return base[self.base_key]
        except KeyError:
            raise TokenError(
                f"workspace holds no derivative of order {self.order} "
                f"along axis {self.axis}"
            ) from None


@dataclass(frozen=True)
class CosToken:
    """``cos(frequency * Omega) * Lambda**power``; the amplitude is a regression weight."""

    frequency: float
    power: int

    family = "cos"

    @property
    def sort_key(self) -> tuple:
        return (1, self.power, 0, 0, float(self.frequency))

    def label(self) -> str:
        return f"cos({self.frequency:g}*Omega)*Lambda^{self.power}"

    def evaluate(self, base: Mapping[str, np.ndarray]) -> np.ndarray:
        try:
            omega, lam = base["omega"], base["lambda"]
        except KeyError as exc:
            raise TokenError(f"workspace lacks base variable {exc.args[0]!r}") from None
        return np.cos(self.frequency * omega) * lam ** self.power


Token = DerivativeToken | CosToken


@dataclass(frozen=True)
class Term:
    """Product of tokens, kept in canonical (sorted) order."""

    tokens: tuple

    def __post_init__(self):
        if not self.tokens:
            raise TokenError("a term needs at least one token")
        object.__setattr__(
            self, "tokens", tuple(sorted(self.tokens, key=lambda t: t.sort_key))
        )

    @classmethod
    def of(cls, *tokens) -> "Term":
        return cls(tuple(tokens))

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def sort_key(self) -> tuple:
        return tuple(t.sort_key for t in self.tokens)


def term_label(term: Term) -> str:
    return " * ".join(t.label() for t in term.tokens)


# --- families -------------------------------------------------------------------

@dataclass(frozen=True)
class DerivativeFamily:
    axis_names: tuple[str, ...]
    max_order: int = 2
    max_tokens: int = 3
    allow_order0: bool = True

    def __post_init__(self):
        object.__setattr__(self, "axis_names", tuple(self.axis_names))
        if self.max_order < 0 or self.max_tokens < 1:
            raise TokenError("max_order must be >= 0 and max_tokens >= 1")

    def tokens(self) -> list[DerivativeToken]:
        out = [DerivativeToken(0, 0)] if self.allow_order0 else []
        for axis, name in enumerate(self.axis_names):
            for order in range(1, self.max_order + 1):
                out.append(DerivativeToken(axis, order, name))
        return out


@dataclass(frozen=True)
class CosFamily:
    frequencies: tuple[float, ...] = tuple(range(11))
    powers: tuple[int, ...] = (0, 1, 2)
    max_tokens: int = 1

    def __post_init__(self):
        object.__setattr__(self, "frequencies", tuple(self.frequencies))
        object.__setattr__(self, "powers", tuple(int(p) for p in self.powers))
        if any(p not in (0, 1, 2) for p in self.powers):
            raise TokenError("powers of Lambda are limited to 0, 1, 2")
        if self.max_tokens != 1:
            raise TokenError("cos-family terms cannot be products of tokens")

    def tokens(self) -> list[CosToken]:
        return [CosToken(b, j) for j in self.powers for b in self.frequencies]


Family = DerivativeFamily | CosFamily


def sample_random_token(family: Family, rng: np.random.Generator):
    tokens = family.tokens()
    if not tokens:
        raise TokenError("family has no admissible tokens")
    return tokens[int(rng.integers(len(tokens)))]


def sample_random_term(family: Family, rng: np.random.Generator) -> Term:
    """Term length uniform in 1..max_tokens, then i.i.d. uniform tokens."""
    length = int(rng.integers(1, family.max_tokens + 1))
    return Term(tuple(sample_random_token(family, rng) for _ in range(length)))


def all_terms(family: Family) -> list[Term]:
    tokens = family.tokens()
    out = []
    for length in range(1, family.max_tokens + 1):
        for combo in itertools.combinations_with_replacement(tokens, length):
            out.append(Term(combo))
    return out


def count_terms(n_tokens: int, max_tokens: int) -> int:
    """Number of distinct multisets of 1..max_tokens tokens drawn from n_tokens."""
    return sum(math.comb(n_tokens + k - 1, k) for k in range(1, max_tokens + 1))


def search_space_size(n_tokens: int, max_tokens: int, terms_per_individual: int) -> int:
    return math.comb(count_terms(n_tokens, max_tokens), terms_per_individual)


# --- workspace ------------------------------------------------------------------

class Workspace:
    """Sample-point store with write-once caches of token and term vectors.

    Base vectors may be complex (Floquet ratios).  Regression columns are
    always real: complex vectors are split into their real and imaginary
    parts, stacked one after the other.
    """

    def __init__(self, base: Mapping[str, np.ndarray], n_samples: int | None = None):
        arrays = {}
        for key, vec in base.items():
            v = np.asarray(vec)
            v = v.astype(complex if np.iscomplexobj(v) else float).ravel()
            if not np.all(np.isfinite(v)):
                raise TokenError(f"base variable {key!r} has non-finite entries")
            v.setflags(write=False)
            arrays[key] = v
        lengths = {v.size for v in arrays.values()}
        if n_samples is None:
            if len(lengths) != 1:
                raise TokenError(f"base variables differ in length: {sorted(lengths)}")
            n_samples = lengths.pop()
        elif lengths and lengths != {n_samples}:
            raise TokenError("base variable length does not match n_samples")
        self.n_samples = int(n_samples)
        self.base = arrays
        self.is_complex = any(np.iscomplexobj(v) for v in arrays.values())
        self._tokens: dict = {}
        self._terms: dict = {}
        self._columns: dict = {}

    @property
    def n_rows(self) -> int:
        return 2 * self.n_samples if self.is_complex else self.n_samples

    def token_vector(self, token) -> np.ndarray:
        vec = self._tokens.get(token)
        if vec is None:
            vec = np.asarray(token.evaluate(self.base))
            if vec.shape != (self.n_samples,):
                vec = np.broadcast_to(vec, (self.n_samples,)).copy()
            if not np.all(np.isfinite(vec)):
                raise TokenError(f"token {token.label()} evaluates to non-finite values")
            vec.setflags(write=False)
            vec = self._tokens.setdefault(token, vec)
        return vec

    def term_vector(self, term: Term) -> np.ndarray:
        vec = self._terms.get(term)
        if vec is None:
            vec = self.token_vector(term.tokens[0])
            for tok in term.tokens[1:]:
                vec = vec * self.token_vector(tok)
            if len(term) > 1:
                vec.setflags(write=False)
            vec = self._terms.setdefault(term, vec)
        return vec

    def column(self, term: Term) -> np.ndarray:
        """Real regression column of a term."""
        col = self._columns.get(term)
        if col is None:
            vec = self.term_vector(term)
            if np.iscomplexobj(vec):
                col = np.concatenate([vec.real, vec.imag])
            else:
                col = np.array(vec, dtype=float)
            col.setflags(write=False)
            col = self._columns.setdefault(term, col)
        return col

    def precompute(self, family: Family, terms: Iterable[Term] = ()) -> None:
        for tok in family.tokens():
            self.token_vector(tok)
        for term in terms:
            self.column(term)


def evaluate_token(token, ws: Workspace) -> np.ndarray:
    return ws.token_vector(token)


def evaluate_term(term: Term, ws: Workspace) -> np.ndarray:
    return ws.term_vector(term)


def derivative_workspace(fields: Mapping[tuple[int, int], np.ndarray]) -> Workspace:
    """Workspace from flattened derivative fields keyed by ``(axis, order)``.

    The raw field goes under ``(0, 0)`` (any axis with order 0).
    """
    base = {}
    for (axis, order), vec in fields.items():
        base[DerivativeToken(axis, order).base_key] = vec
    return Workspace(base)


def floquet_workspace(omega: Sequence[float], lam: Sequence[complex]) -> Workspace:
    return Workspace({"omega": np.asarray(omega, dtype=float), "lambda": np.asarray(lam)})
