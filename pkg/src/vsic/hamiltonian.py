"""Ground-state spin Hamiltonian of the vanadium defect and its drive operator.

All energies are frequencies (H/h) in MHz and fields are in mT; z is the
crystal c-axis.  The static Hamiltonian is

    H = -muB B.g.S + S.A.I_V + muN g_V B.I_V + Q_zz I_Vz^2
        + sum_k [ Sz (A_k,par I_kz + A_k,perp I_kx) + muN g_Si B.I_k ]

with axial g and A tensors.  The 29Si terms are semi-secular: they couple to
Sz only, and the transverse nuclear component is taken along x.

Basis order is electron, 51V, then the 29Si sites.  Ket labels name the
electron by Zeeman branch: ``↑`` is the branch whose energy rises with B.
With the leading minus sign above and ``g_par > 0`` that is ``m_s = -1/2``,
so ``|↑,-5/2⟩`` is the basis state with ``(m_s, m_V) = (-1/2, -5/2)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from typing import Sequence

import numpy as np

from .spin import ELECTRON, NUCLEAR, ProductSpace, SpinSpecies

MU_B_OVER_H = 13.9962449  # MHz/mT
MU_N_OVER_H = 7.6225932e-3  # MHz/mT
G_V51 = 1.47106
G_SI29 = -1.11058

DEFAULT_PROFILE = "paper-2023-defaults"


@dataclass(frozen=True)
class DefectParams:
    g_par: float = 1.664
    g_perp: float = 0.0
    A_V_par: float = -232.02  # MHz
    A_V_perp: float = -162.32  # MHz
    Q_zz: float = -0.2  # MHz
    g_V: float = G_V51
    mu_B_over_h: float = MU_B_OVER_H
    mu_N_over_h: float = MU_N_OVER_H

    def __post_init__(self):
        for f in fields(self):
            if not np.isfinite(getattr(self, f.name)):
                raise ValueError(f"{f.name} must be finite")
        if self.mu_B_over_h <= 0 or self.mu_N_over_h <= 0:
            raise ValueError("magneton constants must be positive")


@dataclass(frozen=True)
class SiCouplingParams:
    A_Si_par: float = -8.2  # MHz
    A_Si_perp: float = -3.6  # MHz
    g_Si: float = G_SI29

    def __post_init__(self):
        for f in fields(self):
            if not np.isfinite(getattr(self, f.name)):
                raise ValueError(f"{f.name} must be finite")


@dataclass(frozen=True)
class FieldVector:
    """Static field in mT."""

    bx: float = 0.0
    by: float = 0.0
    bz: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite([self.bx, self.by, self.bz])):
            raise ValueError(f"field components must be finite, got {self}")

    @property
    def array(self) -> np.ndarray:
        return np.array([self.bx, self.by, self.bz], dtype=float)

    @property
    def magnitude(self) -> float:
        return float(np.linalg.norm(self.array))

    def __add__(self, other: "FieldVector") -> "FieldVector":
        return FieldVector(*(self.array + as_field(other).array))

    def scaled(self, alpha: float) -> "FieldVector":
        return FieldVector(*(alpha * self.array))


def as_field(b) -> FieldVector:
    """Coerce a scalar (taken along z), a 3-sequence or a FieldVector."""
    if isinstance(b, FieldVector):
        return b
    arr = np.asarray(b, dtype=float)
    if arr.ndim == 0:
        return FieldVector(0.0, 0.0, float(arr))
    if arr.shape == (3,):
        return FieldVector(*map(float, arr))
    raise ValueError(f"cannot interpret {b!r} as a field vector")


def _unit(axis) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    if axis.shape != (3,):
        raise ValueError("drive axis must be a 3-vector")
    norm = np.linalg.norm(axis)
    if not np.isfinite(norm) or norm == 0:
        raise ValueError("drive axis must have nonzero finite length")
    if abs(norm - 1) > 1e-9:
        raise ValueError(f"drive axis must be a unit vector, |axis| = {norm}")
    return axis


def format_ket(space: ProductSpace, ms: Sequence[float]) -> str:
    parts = []
    for sp, m in zip(space.species, ms):
        if sp.kind == ELECTRON and sp.s == 0.5:
            parts.append("↑" if m < 0 else "↓")
        else:
            frac = Fraction(m).limit_denominator(2)
            parts.append(f"{'+' if frac > 0 else ''}{frac}" if frac else "0")
    return "|" + ",".join(parts) + "⟩"


def parse_ket(space: ProductSpace, label: str) -> tuple[float, ...]:
    """Inverse of :func:`format_ket`; accepts ``-`` or ``−`` for minus."""
    body = label.strip().replace("−", "-").lstrip("|").rstrip("⟩>").strip()
    tokens = [t.strip() for t in body.split(",")]
    if len(tokens) != len(space.species):
        raise ValueError(f"label {label!r} does not match a {len(space.species)}-spin space")
    ms = []
    for sp, tok in zip(space.species, tokens):
        if tok in ("↑", "up"):
            ms.append(-0.5)
        elif tok in ("↓", "down"):
            ms.append(0.5)
        else:
            ms.append(float(Fraction(tok)))
    space.basis_index(ms)
    return tuple(ms)


class SpinModel:
    """Common surface of everything the spectra and dynamics layers accept.

    Subclasses provide ``space``, ``static_hamiltonian(b0)`` and
    ``drive_operator(axis, b1_amplitude)``.
    """

    space: ProductSpace

    @property
    def dim(self) -> int:
        return self.space.dim

    def basis_labels(self) -> list[str]:
        return [format_ket(self.space, ms) for ms in self.space.basis()]

    def static_hamiltonian(self, b0) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError

    def drive_operator(self, axis, b1_amplitude: float) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError


@dataclass(frozen=True)
class SystemConfig(SpinModel):
    """Vanadium defect with ``n_si`` nearest-neighbour 29Si (DT0, DT_I, DT_II)."""

    n_si: int = 0
    defect: DefectParams = field(default_factory=DefectParams)
    si: SiCouplingParams = field(default_factory=SiCouplingParams)

    def __post_init__(self):
        if self.n_si not in (0, 1, 2):
            raise ValueError(f"n_si must be 0, 1 or 2, got {self.n_si!r}")

    @property
    def space(self) -> ProductSpace:
        return _defect_space(self.n_si, self.defect.g_par, self.defect.g_perp,
                             self.defect.g_V, self.si.g_Si)

    def with_params(self, **overrides) -> "SystemConfig":
        d = {k: v for k, v in overrides.items() if k in {f.name for f in fields(DefectParams)}}
        s = {k: v for k, v in overrides.items() if k in {f.name for f in fields(SiCouplingParams)}}
        unknown = set(overrides) - set(d) - set(s) - {"n_si"}
        if unknown:
            raise KeyError(f"unknown parameters: {sorted(unknown)}")
        return replace(self, n_si=overrides.get("n_si", self.n_si),
                       defect=replace(self.defect, **d), si=replace(self.si, **s))

    def static_hamiltonian(self, b0) -> np.ndarray:
        return build_static_hamiltonian(self, b0)

    def drive_operator(self, axis, b1_amplitude: float) -> np.ndarray:
        return build_drive_operator(self, axis, b1_amplitude)


_SPACE_CACHE: dict = {}


def _defect_space(n_si, g_par, g_perp, g_v, g_si) -> ProductSpace:
    key = (n_si, g_par, g_perp, g_v, g_si)
    if key not in _SPACE_CACHE:
        species = [SpinSpecies("e", 0.5, ELECTRON, (g_par, g_perp)),
                   SpinSpecies("51V", 3.5, NUCLEAR, g_v)]
        species += [SpinSpecies(f"29Si_{k + 1}", 0.5, NUCLEAR, g_si) for k in range(n_si)]
        _SPACE_CACHE[key] = ProductSpace(tuple(species))
    return _SPACE_CACHE[key]


def build_static_hamiltonian(config: SystemConfig, b0) -> np.ndarray:
    """Static Hamiltonian in MHz for field ``b0`` (mT; scalar means along z)."""
    if not isinstance(config, SystemConfig):
        raise TypeError("config must be a SystemConfig")
    b = as_field(b0).array
    p, si = config.defect, config.si
    space = config.space
    sx, sy, sz = space.spin_vector(0)
    ix, iy, iz = space.spin_vector(1)

    h = -p.mu_B_over_h * (p.g_perp * (b[0] * sx + b[1] * sy) + p.g_par * b[2] * sz)
    h = h + p.A_V_par * sz @ iz + p.A_V_perp * (sx @ ix + sy @ iy)
    h = h + p.mu_N_over_h * p.g_V * (b[0] * ix + b[1] * iy + b[2] * iz)
    h = h + p.Q_zz * iz @ iz
    for k in range(config.n_si):
        kx, ky, kz = space.spin_vector(2 + k)
        h = h + sz @ (si.A_Si_par * kz + si.A_Si_perp * kx)
        h = h + p.mu_N_over_h * si.g_Si * (b[0] * kx + b[1] * ky + b[2] * kz)
    return (h + h.conj().T) / 2


def build_drive_operator(config: SpinModel, axis, b1_amplitude: float) -> np.ndarray:
    """Magnetic coupling to an oscillating field of amplitude ``b1_amplitude`` (mT).

    The returned operator multiplies ``cos(2 pi f t + phase)`` during a pulse.
    Species g-factors are taken from the product space, so this works for any
    :class:`SpinModel` built from electron/nuclear species.
    """
    n = _unit(axis)
    if not np.isfinite(b1_amplitude):
        raise ValueError("b1 amplitude must be finite")
    if isinstance(config, SystemConfig):
        mu_b, mu_n = config.defect.mu_B_over_h, config.defect.mu_N_over_h
    else:
        mu_b, mu_n = MU_B_OVER_H, MU_N_OVER_H
    space = config.space
    out = np.zeros((space.dim, space.dim), dtype=complex)
    for i, sp in enumerate(space.species):
        vx, vy, vz = space.spin_vector(i)
        if sp.kind == ELECTRON:
            g_par, g_perp = sp.g_factor
            out -= mu_b * b1_amplitude * (g_perp * (n[0] * vx + n[1] * vy) + g_par * n[2] * vz)
        else:
            out += mu_n * b1_amplitude * sp.g_factor * (n[0] * vx + n[1] * vy + n[2] * vz)
    return out


@dataclass(frozen=True)
class FreeSpin(SpinModel):
    """Isolated electron-like spin-1/2 with isotropic g (reference system)."""

    g: float = 2.0

    @property
    def space(self) -> ProductSpace:
        return ProductSpace((SpinSpecies("e", 0.5, ELECTRON, (self.g, self.g)),))

    def static_hamiltonian(self, b0) -> np.ndarray:
        b = as_field(b0).array
        sx, sy, sz = self.space.spin_vector(0)
        return -MU_B_OVER_H * self.g * (b[0] * sx + b[1] * sy + b[2] * sz)

    def drive_operator(self, axis, b1_amplitude: float) -> np.ndarray:
        return build_drive_operator(self, axis, b1_amplitude)


PROFILES: dict[str, tuple[DefectParams, SiCouplingParams]] = {
    DEFAULT_PROFILE: (DefectParams(), SiCouplingParams()),
}


def profile(name: str = DEFAULT_PROFILE, n_si: int = 0) -> SystemConfig:
    try:
        defect, si = PROFILES[name]
    except KeyError:
        raise KeyError(f"unknown parameter profile {name!r}; known: {sorted(PROFILES)}") from None
    return SystemConfig(n_si=n_si, defect=defect, si=si)
