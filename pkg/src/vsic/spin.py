"""Spin-operator algebra and tensor-product Hilbert spaces.

Basis convention: the single-spin basis is ordered by descending projection,
``m = s, s-1, ..., -s``, and product spaces are row-major over the species
list (the first species varies slowest), i.e. ``np.kron(op_0, op_1, ...)``.
All operators are dimensionless (hbar = 1).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import prod
from typing import Sequence

import numpy as np

ELECTRON = "electron-effective"
NUCLEAR = "nuclear"

MAX_MULTIPLICITY = 16


def _as_half_integer(s) -> Fraction:
    try:
        exact = Fraction(s)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"spin quantum number must be numeric, got {s!r}") from exc
    frac = exact.limit_denominator(4)
    if abs(float(frac) - float(exact)) > 1e-12 or frac.denominator not in (1, 2):
        raise ValueError(f"spin quantum number must be a half-integer, got {s!r}")
    if frac <= 0:
        raise ValueError(f"spin quantum number must be positive, got {s!r}")
    if 2 * frac + 1 > MAX_MULTIPLICITY:
        raise ValueError(f"spin {s} exceeds the supported multiplicity {MAX_MULTIPLICITY}")
    return frac


@dataclass(frozen=True)
class OperatorSet:
    """Cartesian and ladder operators of a single spin."""

    s: float
    sx: np.ndarray
    sy: np.ndarray
    sz: np.ndarray
    s_plus: np.ndarray
    s_minus: np.ndarray

    @property
    def dim(self) -> int:
        return self.sz.shape[0]

    @property
    def identity(self) -> np.ndarray:
        return np.eye(self.dim, dtype=complex)

    def cartesian(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.sx, self.sy, self.sz


@lru_cache(maxsize=None)
def _operator_arrays(s: Fraction):
    m = np.array([float(s - k) for k in range(int(2 * s) + 1)])
    dim = len(m)
    s_plus = np.zeros((dim, dim), dtype=complex)
    sf = float(s)
    for k in range(1, dim):
        # <m+1| S+ |m>
        s_plus[k - 1, k] = np.sqrt(sf * (sf + 1) - m[k] * (m[k] + 1))
    s_minus = s_plus.conj().T.copy()
    sx = (s_plus + s_minus) / 2
    sy = (s_plus - s_minus) / 2j
    sz = np.diag(m).astype(complex)
    for a in (sx, sy, sz, s_plus, s_minus):
        a.setflags(write=False)
    return sx, sy, sz, s_plus, s_minus


def make_spin_operators(s) -> OperatorSet:
    """Return the spin operators for spin quantum number ``s``.

    ``s`` may be given as a float (``3.5``), a string (``"7/2"``) or a
    :class:`fractions.Fraction`.

    Raises
    ------
    ValueError
        If ``s`` is not a positive half-integer or exceeds 15/2.
    """
    frac = _as_half_integer(s)
    sx, sy, sz, sp, sm = _operator_arrays(frac)
    return OperatorSet(float(frac), sx, sy, sz, sp, sm)


@dataclass(frozen=True)
class SpinSpecies:
    """One spin in a product space.

    The electron-effective species carries an axial ``(g_par, g_perp)`` pair,
    nuclear species a scalar g-factor.
    """

    label: str
    s: float
    kind: str = NUCLEAR
    g_factor: float | tuple[float, float] = 0.0

    def __post_init__(self):
        object.__setattr__(self, "s", float(_as_half_integer(self.s)))
        if self.kind == ELECTRON:
            if np.ndim(self.g_factor) != 1 or len(self.g_factor) != 2:
                raise ValueError(f"{self.label}: electron species needs a (g_par, g_perp) pair")
            object.__setattr__(self, "g_factor", tuple(float(g) for g in self.g_factor))
        elif self.kind == NUCLEAR:
            if np.ndim(self.g_factor) != 0:
                raise ValueError(f"{self.label}: nuclear species needs a scalar g-factor")
            object.__setattr__(self, "g_factor", float(self.g_factor))
        else:
            raise ValueError(f"unknown spin kind {self.kind!r}")

    @property
    def dim(self) -> int:
        return int(round(2 * self.s)) + 1

    @property
    def operators(self) -> OperatorSet:
        return make_spin_operators(self.s)

    def m_values(self) -> np.ndarray:
        return self.s - np.arange(self.dim)


@dataclass(frozen=True)
class ProductSpace:
    species: tuple[SpinSpecies, ...]
    _dims: tuple[int, ...] = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "species", tuple(self.species))
        if not self.species:
            raise ValueError("a product space needs at least one species")
        object.__setattr__(self, "_dims", tuple(sp.dim for sp in self.species))

    @property
    def dims(self) -> tuple[int, ...]:
        return self._dims

    @property
    def dim(self) -> int:
        return prod(self._dims)

    def __len__(self) -> int:
        return len(self.species)

    def index_of(self, label: str) -> int:
        for i, sp in enumerate(self.species):
            if sp.label == label:
                return i
        raise KeyError(label)

    def quantum_numbers(self, index: int) -> tuple[float, ...]:
        """Map a basis index to its tuple of ``m`` values."""
        if not 0 <= index < self.dim:
            raise IndexError(f"basis index {index} out of range for dimension {self.dim}")
        digits = np.unravel_index(index, self._dims)
        return tuple(sp.s - int(d) for sp, d in zip(self.species, digits))

    def basis_index(self, ms: Sequence[float]) -> int:
        """Inverse of :meth:`quantum_numbers`."""
        if len(ms) != len(self.species):
            raise ValueError("need one m value per species")
        digits = []
        for sp, m in zip(self.species, ms):
            d = sp.s - float(m)
            if abs(d - round(d)) > 1e-9 or not 0 <= round(d) < sp.dim:
                raise ValueError(f"m = {m} is not valid for {sp.label} (s = {sp.s})")
            digits.append(int(round(d)))
        return int(np.ravel_multi_index(digits, self._dims))

    def basis(self) -> list[tuple[float, ...]]:
        return [tuple(sp.s - d for sp, d in zip(self.species, digits))
                for digits in itertools.product(*(range(d) for d in self._dims))]

    def embed(self, op: np.ndarray, site_index: int) -> np.ndarray:
        return embed(op, site_index, self)

    def spin_vector(self, site_index: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        ops = self.species[site_index].operators
        return tuple(embed(o, site_index, self) for o in ops.cartesian())


def embed(op: np.ndarray, site_index: int, space: ProductSpace) -> np.ndarray:
    """Lift a single-site operator to the full product space.

    Returns ``1 ⊗ ... ⊗ op ⊗ ... ⊗ 1`` with ``op`` in slot ``site_index``.
    """
    if not 0 <= site_index < len(space.species):
        raise IndexError(f"site index {site_index} out of range for {len(space.species)} species")
    op = np.asarray(op)
    d = space.dims[site_index]
    if op.shape != (d, d):
        raise ValueError(f"operator shape {op.shape} does not match site dimension {d}")
    left = prod(space.dims[:site_index])
    right = prod(space.dims[site_index + 1:])
    out = np.kron(np.eye(left), np.asarray(op, dtype=complex))
    return np.kron(out, np.eye(right))
