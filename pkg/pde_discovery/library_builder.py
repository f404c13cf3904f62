# pde_discovery/library_builder.py

"""
Candidate-term libraries Θ(U).

Terms are ordered by increasing complexity (derivative order between blocks,
polynomial power within a block). The 1-based position of a term is its
complexity index, which the parsimony penalty squares.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

from pde_discovery.errors import ConfigurationError
from pde_discovery.fields import FieldSeries, GridSpec, trim_values
from pde_discovery.operators import derivative_order

logger = logging.getLogger(__name__)

MAX_POWER = 3
DERIVATIVE_BLOCKS_1D = ("", "x", "xx", "xxx")
DERIVATIVE_BLOCKS_2D = ("", "x+y", "xx+yy")

_POWER_PREFIX = {0: "", 1: "u", 2: "u^2", 3: "u^3"}
_DERIVATIVE_LABEL = {"x": "u_x", "xx": "u_xx", "xxx": "u_xxx", "x+y": "(u_x+u_y)", "xx+yy": "lap(u)"}


@dataclass(frozen=True)
class TermSpec:
    power: int
    derivative: str
    name: str
    index: int

    @property
    def derivative_order(self) -> int:
        return derivative_order(self.derivative)

    def evaluate(self, u: np.ndarray, derivs: Mapping[str, np.ndarray]) -> np.ndarray:
        """Pointwise value of u**power times the derivative factor."""
        if not self.derivative:
            return np.ones_like(u) if self.power == 0 else u**self.power
        if self.derivative not in derivs:
            raise ConfigurationError(f"Term '{self.name}' needs the '{self.derivative}' derivative.")
        factor = derivs[self.derivative]
        return factor.copy() if self.power == 0 else u**self.power * factor


def _term_name(power: int, derivative: str) -> str:
    if not derivative:
        return "1" if power == 0 else _POWER_PREFIX[power]
    if derivative == "x+y" and power == 1:
        return "(u.grad)u"
    return _POWER_PREFIX[power] + _DERIVATIVE_LABEL[derivative]


def vocabulary(dim: int, max_power: int = MAX_POWER) -> Tuple[TermSpec, ...]:
    """Ordered term vocabulary for 1D or 2D problems."""
    if not 0 <= max_power <= MAX_POWER:
        raise ConfigurationError(f"max_power must lie in 0..{MAX_POWER}, got {max_power}.")
    if dim not in (1, 2):
        raise ConfigurationError(f"Libraries exist for 1D and 2D problems, got dim={dim}.")
    blocks = DERIVATIVE_BLOCKS_1D if dim == 1 else DERIVATIVE_BLOCKS_2D
    terms = []
    for derivative in blocks:
        for power in range(max_power + 1):
            terms.append(TermSpec(power, derivative, _term_name(power, derivative), len(terms) + 1))
    return tuple(terms)


def lookup_terms(names: Sequence[str], dim: int) -> Tuple[TermSpec, ...]:
    """Resolve term names against the vocabulary, failing on anything unsupported."""
    by_name = {t.name: t for t in vocabulary(dim)}
    missing = [n for n in names if n not in by_name]
    if missing:
        raise ConfigurationError(
            f"Unsupported term(s) for a {dim}D model: {', '.join(missing)}.\n"
            f"Supported terms: {', '.join(by_name)}."
        )
    return tuple(by_name[n] for n in names)


@dataclass(frozen=True, eq=False)
class Library:
    terms: Tuple[TermSpec, ...]
    matrix: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        if self.matrix.shape[1] != len(self.terms):
            raise ConfigurationError(
                f"Library matrix has {self.matrix.shape[1]} columns for {len(self.terms)} terms."
            )

    @property
    def size(self) -> int:
        return len(self.terms)

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(t.name for t in self.terms)

    def index_of(self, name: str) -> int:
        for term in self.terms:
            if term.name == name:
                return term.index
        raise ConfigurationError(f"Term '{name}' is not in this library ({', '.join(self.names)}).")

    def column(self, name: str) -> np.ndarray:
        return self.matrix[:, self.index_of(name) - 1]

    def column_field(self, j: int) -> np.ndarray:
        """Column j (0-based) reshaped onto the source grid."""
        return self.matrix[:, j].reshape(self.grid.shape)

    def trimmed(self, layers: int) -> "Library":
        if layers <= 0:
            return self
        columns = [trim_values(self.column_field(j), self.grid, layers).ravel() for j in range(self.size)]
        return Library(self.terms, np.column_stack(columns), self.grid.trimmed(layers))


# ------------------------------
# Library construction
# ------------------------------

def _check_grid(u: FieldSeries, derivs: Mapping[str, FieldSeries]):
    for key, d in derivs.items():
        if d.grid != u.grid:
            raise ConfigurationError(f"Derivative field '{key}' lives on a different grid than u.")


def _assemble(terms: Iterable[TermSpec], u: FieldSeries, derivs: Dict[str, np.ndarray]) -> Library:
    terms = tuple(terms)
    columns = [t.evaluate(u.values, derivs).ravel() for t in terms]
    library = Library(terms, np.column_stack(columns), u.grid)
    logger.debug("Built library with %d terms over %d samples", library.size, library.matrix.shape[0])
    return library


def build_library_1d(u: FieldSeries, derivs: Mapping[str, FieldSeries], max_power: int = MAX_POWER) -> Library:
    """
    The 16-term 1D library {1, u, u^2, u^3, u_x, uu_x, ..., u^3u_xxx}.

    `derivs` maps "x", "xx" and "xxx" to derivative fields on u's grid.
    """
    if u.grid.is_2d:
        raise ConfigurationError("build_library_1d needs a 1D field; use build_library_2d for 2D data.")
    _check_grid(u, derivs)
    missing = [d for d in DERIVATIVE_BLOCKS_1D[1:] if d not in derivs]
    if missing:
        raise ConfigurationError(f"Missing derivative field(s): {', '.join(missing)}.")
    arrays = {k: v.values for k, v in derivs.items()}
    return _assemble(vocabulary(1, max_power), u, arrays)


def build_library_2d(u: FieldSeries, derivs: Mapping[str, FieldSeries], max_power: int = MAX_POWER) -> Library:
    """
    Aggregate 2D library: {1, u, u^2, u^3} times {identity, u_x+u_y, u_xx+u_yy}.

    `derivs` may hold the aggregates ("x+y", "xx+yy") directly or their
    components ("x", "y", "xx", "yy").
    """
    if not u.grid.is_2d:
        raise ConfigurationError("build_library_2d needs a 2D field.")
    _check_grid(u, derivs)
    arrays = {k: v.values for k, v in derivs.items()}
    if "x+y" not in arrays and {"x", "y"} <= set(arrays):
        arrays["x+y"] = arrays["x"] + arrays["y"]
    if "xx+yy" not in arrays and {"xx", "yy"} <= set(arrays):
        arrays["xx+yy"] = arrays["xx"] + arrays["yy"]
    missing = [d for d in DERIVATIVE_BLOCKS_2D[1:] if d not in arrays]
    if missing:
        raise ConfigurationError(f"Missing derivative field(s): {', '.join(missing)}.")
    return _assemble(vocabulary(2, max_power), u, arrays)


def term_complexity_sum(selected: Iterable[int], M: int) -> float:
    """Model complexity C = 2 * sum(i^2) / M + 2 * len(selected) over 1-based indices."""
    selected = list(selected)
    bad = [i for i in selected if not 1 <= i <= M]
    if bad:
        raise ConfigurationError(f"Term indices {bad} fall outside the library range 1..{M}.")
    return 2.0 * sum(i * i for i in selected) / M + 2.0 * len(selected)


def required_derivatives(terms: Iterable[TermSpec]) -> Tuple[str, ...]:
    return tuple(sorted({t.derivative for t in terms if t.derivative}))


def evaluate_model_terms(terms: Sequence[TermSpec], coefficients: Sequence[float], u: np.ndarray,
                         derivs: Mapping[str, np.ndarray], out: Optional[np.ndarray] = None) -> np.ndarray:
    """Right-hand side sum_j c_j * term_j(u) on one snapshot."""
    total = np.zeros_like(u) if out is None else out
    for term, c in zip(terms, coefficients):
        total += c * term.evaluate(u, derivs)
    return total
