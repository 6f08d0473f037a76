"""Density-matrix propagation through Rabi, Ramsey and Hahn-echo sequences.

The state is kept in the eigenbasis of the static Hamiltonian at the working
field.  Delays are free phase evolution.  During a pulse the drive
``b1 * H1 * cos(2 pi f t + phase)`` is treated in a rotating frame: levels
joined by near-resonant transitions get ladder indices ``n_k`` and the
frame Hamiltonian ``diag(E_k - n_k f) + (H1_jk / 2) e^{-i phase}`` is
time-independent.  Counter-rotating and off-resonant terms are dropped.

Times are in µs, frequencies in MHz, fields in mT.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence, Union

import numpy as np

from .hamiltonian import FieldVector, SpinModel, SystemConfig, as_field
from .spectra import CLOCK_PAIR, Z_AXIS, _match, levels_at, transitions
from .spin import ELECTRON, NUCLEAR, ProductSpace, SpinSpecies

TWO_PI = 2.0 * math.pi
RWA_WINDOW = 50.0  # MHz
DEFAULT_PAIR = (CLOCK_PAIR[1], CLOCK_PAIR[0])  # (initially populated, depleted)


class RWAWarning(UserWarning):
    """Drive strength is not small against the driven transition frequency."""


@dataclass(frozen=True)
class Pulse:
    duration: float  # µs
    b1_amplitude: float  # mT
    frequency: float  # MHz
    phase: float = 0.0  # rad
    axis: tuple[float, float, float] = Z_AXIS

    def __post_init__(self):
        if self.duration < 0:
            raise ValueError("pulse duration must be non-negative")
        if not self.frequency > 0:
            raise ValueError("pulse frequency must be positive")
        object.__setattr__(self, "axis", tuple(float(a) for a in self.axis))


@dataclass(frozen=True)
class Delay:
    duration: float  # µs

    def __post_init__(self):
        if self.duration < 0:
            raise ValueError("delay duration must be non-negative")


Element = Union[Pulse, Delay]


@dataclass(frozen=True)
class PulseSequence:
    elements: tuple[Element, ...]
    readout: tuple[str, ...] = (DEFAULT_PAIR[1],)

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        object.__setattr__(self, "readout", tuple(self.readout))
        if not self.readout:
            raise ValueError("readout must name at least one level")
        if not math.isfinite(self.total_duration):
            raise ValueError("sequence duration must be finite")

    @property
    def total_duration(self) -> float:
        return float(sum(e.duration for e in self.elements))


@dataclass(frozen=True)
class NoiseModel:
    """Quasi-static z-field noise plus optional exponential dephasing.

    ``extra_dephasing_rates`` (1/µs) is either a scalar applied to every
    coherence or a symmetric ``dim x dim`` matrix of per-coherence rates in
    the tracked level order.  Dephasing acts during delays only.
    """

    sigma_b: float = 0.0  # mT
    n_noise_samples: int = 1
    extra_dephasing_rates: float | np.ndarray | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.sigma_b < 0:
            raise ValueError("sigma_b must be non-negative")
        if self.n_noise_samples < 1:
            raise ValueError("need at least one noise sample")

    def field_offsets(self) -> np.ndarray:
        if self.sigma_b == 0:
            return np.zeros(self.n_noise_samples)
        rng = np.random.default_rng(self.rng_seed)
        return rng.normal(0.0, self.sigma_b, self.n_noise_samples)


@dataclass(frozen=True)
class AntennaProfile:
    """Loop-antenna B1 profile through the sample depth.

    The drive amplitude at depth z scales as ``R^3 / (z^2 + R^2)^{3/2}``
    (unity at the loop).  The sample is cut into equal-thickness slabs, so
    every slab carries the same number of defects.
    """

    radius: float = 50.0  # µm
    thickness: float = 500.0  # µm
    n_depth_samples: int = 25

    def __post_init__(self):
        if not self.radius > 0 or not self.thickness > 0:
            raise ValueError("antenna radius and sample thickness must be positive")
        if self.n_depth_samples < 1:
            raise ValueError("need at least one depth sample")

    def depths(self) -> np.ndarray:
        edges = np.linspace(0.0, self.thickness, self.n_depth_samples + 1)
        return 0.5 * (edges[1:] + edges[:-1])

    def b1_scale(self, z=None) -> np.ndarray:
        z = self.depths() if z is None else np.asarray(z, dtype=float)
        r = self.radius
        return r ** 3 / (z ** 2 + r ** 2) ** 1.5

    def weights(self) -> np.ndarray:
        return np.full(self.n_depth_samples, 1.0 / self.n_depth_samples)

    def driven_fraction(self, threshold: float = 0.5) -> float:
        """Fraction of the sample depth where B1 exceeds ``threshold`` of its maximum."""
        z_cut = self.radius * math.sqrt(threshold ** (-2.0 / 3.0) - 1.0)
        return min(1.0, z_cut / self.thickness)


@dataclass
class DensityState:
    rho: np.ndarray
    labels: list[str]

    def check(self, tol: float = 1e-10) -> None:
        r = self.rho
        if np.max(np.abs(r - r.conj().T)) > tol:
            raise ValueError("density matrix is not Hermitian")
        if abs(np.trace(r).real - 1.0) > tol:
            raise ValueError(f"density matrix trace {np.trace(r).real} != 1")
        if np.linalg.eigvalsh((r + r.conj().T) / 2).min() < -tol:
            raise ValueError("density matrix is not positive semidefinite")


def _matches(label: str, pattern: str) -> bool:
    lab = label.replace("−", "-")
    pat = pattern.replace("−", "-").rstrip("⟩>")
    return lab.startswith(pat) and lab[len(pat)] in ",⟩"


def level_group(labels: Sequence[str], pattern: str) -> list[int]:
    """Indices of levels whose label equals ``pattern`` or extends it with more spins."""
    idx = [k for k, lab in enumerate(labels) if _matches(lab, pattern)]
    if not idx:
        raise KeyError(f"no level matches {pattern!r}")
    return idx


def initial_populations(labels: Sequence[str], polarized_pair=DEFAULT_PAIR,
                        polarization: float = 1.0, pair_weight: float | None = None) -> np.ndarray:
    """Populations ``w(1±p)/2`` on the two pair groups, the rest spread evenly.

    ``pair_weight`` defaults to the pair's share under uniform population.
    """
    if not 0.0 <= polarization <= 1.0:
        raise ValueError("polarization must lie in [0, 1]")
    dim = len(labels)
    a = level_group(labels, polarized_pair[0])
    b = level_group(labels, polarized_pair[1])
    if set(a) & set(b):
        raise ValueError("polarized levels overlap")
    w = (len(a) + len(b)) / dim if pair_weight is None else float(pair_weight)
    if not 0.0 <= w <= 1.0:
        raise ValueError("pair_weight must lie in [0, 1]")
    rest = [k for k in range(dim) if k not in a and k not in b]
    if not rest and w < 1.0:
        w = 1.0
    pops = np.zeros(dim)
    pops[a] = w * (1 + polarization) / 2 / len(a)
    pops[b] = w * (1 - polarization) / 2 / len(b)
    if rest:
        pops[rest] = (1 - w) / len(rest)
    return pops / pops.sum()


def initial_state(model: SpinModel, b0, polarized_pair=DEFAULT_PAIR, polarization: float = 1.0,
                  pair_weight: float | None = None) -> DensityState:
    """Diagonal state in the tracked eigenbasis at ``b0`` (z component used)."""
    labels = levels_at(model, as_field(b0).bz).labels
    pops = initial_populations(labels, polarized_pair, polarization, pair_weight)
    return DensityState(np.diag(pops).astype(complex), labels)


@dataclass
class Trace:
    swept: np.ndarray
    signal: np.ndarray
    stderr: np.ndarray
    swept_name: str = "swept_parameter"
    meta: dict = field(default_factory=dict)

    def columns(self) -> dict[str, np.ndarray]:
        return {"swept_parameter": self.swept, "signal": self.signal,
                "stderr_over_samples": self.stderr}


# ---------------------------------------------------------------- frames


def ladder_indices(energies: np.ndarray, coupling: np.ndarray, frequency: float,
                   window: float = RWA_WINDOW, cutoff: float = 1e-12):
    """Assign rotating-frame photon numbers to levels.

    Levels joined by a transition within ``window`` of ``frequency`` (and with
    non-negligible coupling) differ by one photon.  Returns the integer array
    and the boolean matrix of kept (upper, lower) couplings.
    """
    dim = len(energies)
    gap = energies[:, None] - energies[None, :]
    kept = (np.abs(gap - frequency) < window) & (np.abs(coupling) > cutoff)
    n = np.full(dim, np.iinfo(np.int64).min, dtype=np.int64)
    for start in np.argsort(energies):
        if n[start] != np.iinfo(np.int64).min:
            continue
        n[start] = 0
        stack = [start]
        while stack:
            k = stack.pop()
            for j in np.nonzero(kept[:, k])[0]:  # j above k
                if n[j] == np.iinfo(np.int64).min:
                    n[j] = n[k] + 1
                    stack.append(j)
                elif n[j] != n[k] + 1:
                    raise ValueError("near-resonant transitions do not admit a single rotating frame")
            for j in np.nonzero(kept[k, :])[0]:  # j below k
                if n[j] == np.iinfo(np.int64).min:
                    n[j] = n[k] - 1
                    stack.append(j)
                elif n[j] != n[k] - 1:
                    raise ValueError("near-resonant transitions do not admit a single rotating frame")
    return n, kept


def rwa_hamiltonian(energies, coupling, pulse: Pulse, window: float = RWA_WINDOW):
    """Frame Hamiltonian (MHz) and ladder indices for one pulse.

    ``coupling`` is the drive operator for the pulse amplitude, in the
    eigenbasis.
    """
    n, kept = ladder_indices(energies, coupling, pulse.frequency, window)
    # kept[j, k] marks j above k; the co-rotating term is (H1_jk / 2) e^{-i phase}
    upper = np.where(kept, 0.5 * coupling * np.exp(-1j * pulse.phase), 0.0)
    h = np.diag(energies - n * pulse.frequency) + upper + upper.conj().T
    if np.any(kept):
        max_el = np.max(np.abs(coupling[kept]))
        gaps = (energies[:, None] - energies[None, :])[kept]
        if max_el > 0.1 * np.min(np.abs(gaps)):
            warnings.warn(f"drive element {max_el:.3g} MHz exceeds 10% of the smallest driven "
                          f"transition ({np.min(np.abs(gaps)):.3g} MHz); RWA is questionable",
                          RWAWarning, stacklevel=3)
    return h, n


def _frame(n, frequency, t):
    return np.exp(-1j * TWO_PI * n * frequency * t)


def dephasing_factors(rates, dim: int, tau: float) -> np.ndarray | None:
    if rates is None or tau == 0:
        return None
    g = np.asarray(rates, dtype=float)
    if g.ndim == 0:
        d = np.full((dim, dim), math.exp(-float(g) * tau))
        np.fill_diagonal(d, 1.0)
    else:
        if g.shape != (dim, dim) or np.any(np.abs(g - g.T) > 1e-12) or np.any(g < 0):
            raise ValueError("dephasing rates must be a non-negative symmetric matrix")
        d = np.exp(-g * tau)
        np.fill_diagonal(d, 1.0)
    if np.linalg.eigvalsh(d).min() < -1e-12:
        raise ValueError("dephasing rates do not define a positive channel at "
                         f"tau = {tau} µs; use a scalar rate or a physical rate pattern")
    return d


class Trajectory:
    """One noise/depth realization: eigenbasis, drive operators and caches."""

    def __init__(self, model: SpinModel, b0: FieldVector, reference_vectors, b1_scale=1.0,
                 rwa=True, window=RWA_WINDOW, lab_steps_per_period=50):
        vals, vecs = np.linalg.eigh(model.static_hamiltonian(b0))
        vecs, perm, worst = _match(reference_vectors, vals, vecs)
        if worst < 0.5:
            raise ValueError("noise sample moved the working point too far to identify levels")
        self.energies = vals[perm]
        self.vectors = vecs[:, perm]
        self.model = model
        self.b1_scale = b1_scale
        self.rwa = rwa
        self.window = window
        self.lab_steps = lab_steps_per_period
        self._drive_cache: dict = {}
        self._pulse_cache: dict = {}

    def drive(self, axis) -> np.ndarray:
        if axis not in self._drive_cache:
            op = self.model.drive_operator(axis, 1.0)
            self._drive_cache[axis] = self.vectors.conj().T @ op @ self.vectors
        return self._drive_cache[axis]

    def free(self, tau: float) -> np.ndarray:
        return np.exp(-1j * TWO_PI * self.energies * tau)

    def pulse_unitary(self, pulse: Pulse, t0: float) -> np.ndarray:
        """Lab-eigenbasis propagator of ``pulse`` starting at absolute time ``t0``."""
        amp = pulse.b1_amplitude * self.b1_scale
        if not self.rwa:
            return self._lab_pulse(pulse, amp, t0)
        key = (pulse.duration, amp, pulse.frequency, pulse.phase, pulse.axis)
        if key not in self._pulse_cache:
            coupling = amp * self.drive(pulse.axis)
            h, n = rwa_hamiltonian(self.energies, coupling, pulse, self.window)
            w, v = np.linalg.eigh(h)
            u = (v * np.exp(-1j * TWO_PI * w * pulse.duration)) @ v.conj().T
            self._pulse_cache[key] = (u, n)
        u, n = self._pulse_cache[key]
        t1 = t0 + pulse.duration
        return _frame(n, pulse.frequency, t1)[:, None] * u * _frame(n, pulse.frequency, t0).conj()[None, :]

    def _lab_pulse(self, pulse: Pulse, amp: float, t0: float) -> np.ndarray:
        coupling = amp * self.drive(pulse.axis)
        n_steps = max(1, int(math.ceil(pulse.duration * pulse.frequency * self.lab_steps)))
        dt = pulse.duration / n_steps
        u = np.eye(len(self.energies), dtype=complex)
        e = np.diag(self.energies).astype(complex)
        for s in range(n_steps):
            tm = t0 + (s + 0.5) * dt
            h = e + coupling * math.cos(TWO_PI * pulse.frequency * tm + pulse.phase)
            w, v = np.linalg.eigh(h)
            u = ((v * np.exp(-1j * TWO_PI * w * dt)) @ v.conj().T) @ u
        return u

    def run(self, sequence: PulseSequence, rho0: np.ndarray, readout_idx, rates=None) -> float:
        rho = rho0
        t = 0.0
        for el in sequence.elements:
            if el.duration == 0:
                continue
            if isinstance(el, Delay):
                ph = self.free(el.duration)
                rho = ph[:, None] * rho * ph.conj()[None, :]
                d = dephasing_factors(rates, len(ph), el.duration)
                if d is not None:
                    rho = rho * d
            else:
                u = self.pulse_unitary(el, t)
                rho = u @ rho @ u.conj().T
            t += el.duration
        return float(np.real(np.sum(np.diag(rho)[readout_idx])))


def propagate(sequences: Sequence[PulseSequence] | PulseSequence, model: SpinModel, b0,
              noise: NoiseModel | None = None, antenna: AntennaProfile | None = None,
              rwa: bool = True, swept: Iterable[float] | None = None,
              polarized_pair=DEFAULT_PAIR, polarization: float = 1.0,
              pair_weight: float | None = None, window: float = RWA_WINDOW,
              threads: int = 1, swept_name: str = "swept_parameter") -> Trace:
    """Readout population after each sequence, averaged over noise and depth.

    Every trajectory (one field offset times one depth slab) is propagated
    independently; results are combined in a fixed order, so threading does
    not change the output.
    """
    if isinstance(sequences, PulseSequence):
        sequences = [sequences]
    sequences = list(sequences)
    noise = noise or NoiseModel()
    b0 = as_field(b0)
    nominal = levels_at(model, b0.bz)
    labels = nominal.labels
    ref_vecs = nominal.vectors[0]
    if b0.bx or b0.by:
        vals, vecs = np.linalg.eigh(model.static_hamiltonian(b0))
        ref_vecs, perm, _ = _match(ref_vecs, vals, vecs)
        ref_vecs = ref_vecs[:, perm]
    pops = initial_populations(labels, polarized_pair, polarization, pair_weight)
    rho0 = np.diag(pops).astype(complex)
    readouts = [sorted({k for pat in s.readout for k in level_group(labels, pat)})
                for s in sequences]

    offsets = noise.field_offsets()
    if antenna is None:
        scales, depth_w = np.array([1.0]), np.array([1.0])
    else:
        scales, depth_w = antenna.b1_scale(), antenna.weights()
    jobs = [(dz, s, wd / len(offsets)) for dz in offsets for s, wd in zip(scales, depth_w)]

    def one(job):
        dz, scale, _ = job
        traj = Trajectory(model, b0 + FieldVector(0.0, 0.0, dz), ref_vecs, scale, rwa, window)
        return [traj.run(seq, rho0, ro, noise.extra_dephasing_rates)
                for seq, ro in zip(sequences, readouts)]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, jobs))
    else:
        results = [one(j) for j in jobs]
    values = np.array(results)  # (n_traj, n_seq)
    weights = np.array([j[2] for j in jobs])
    weights = weights / weights.sum()
    mean = weights @ values
    if len(jobs) > 1:
        var = weights @ (values - mean) ** 2
        n_eff = 1.0 / np.sum(weights ** 2)
        stderr = np.sqrt(var / max(n_eff - 1.0, 1.0))
    else:
        stderr = np.zeros(len(sequences))
    x = np.arange(len(sequences), dtype=float) if swept is None else np.asarray(list(swept), float)
    meta = {"b0_mT": b0.bz, "n_trajectories": len(jobs), "rwa": rwa}
    return Trace(x, mean, stderr, swept_name, meta)


# ------------------------------------------------------- experiment wrappers


def central_frequency(model: SpinModel, b0: float, pair=CLOCK_PAIR) -> float:
    """Frequency (MHz) of the central ODMR line, i.e. the 29Si-free clock pair."""
    base = replace(model, n_si=0) if isinstance(model, SystemConfig) else model
    diagram = levels_at(base, float(b0))
    i, j = (diagram.level(p) for p in pair)
    return float(abs(diagram.energies[0, j] - diagram.energies[0, i]))


def drive_element(model: SpinModel, b0: float, axis=Z_AXIS, pair=CLOCK_PAIR) -> float:
    """|<j|H1|i>| in MHz per mT, which is the Rabi frequency per mT of B1."""
    base = replace(model, n_si=0) if isinstance(model, SystemConfig) else model
    return transitions(base, b0, axis, pairs=[pair]).find(*pair).matrix_element


def _resolve_frequency(model, b0, frequency):
    if frequency is not None:
        return float(frequency)
    if isinstance(model, SystemConfig):
        return central_frequency(model, b0)
    raise ValueError("pass the drive frequency explicitly for this model")


def rabi_sequences(durations, b1, frequency, axis=Z_AXIS, readout=(DEFAULT_PAIR[1],)):
    return [PulseSequence((Pulse(float(d), b1, frequency, 0.0, axis),), readout) for d in durations]


def simulate_rabi(model: SpinModel, b0, b1: float, durations, detuning: float = 0.0,
                  frequency: float | None = None, axis=Z_AXIS, **kw) -> Trace:
    """Readout population versus pulse duration (µs)."""
    f = _resolve_frequency(model, as_field(b0).bz, frequency) + detuning
    readout = kw.pop("readout", (kw.get("polarized_pair", DEFAULT_PAIR)[1],))
    seqs = rabi_sequences(durations, b1, f, axis, readout)
    tr = propagate(seqs, model, b0, swept=durations, swept_name="pulse_duration_us", **kw)
    tr.meta.update(frequency_MHz=f, b1_mT=b1)
    return tr


def calibrate_pi_pulse(model: SpinModel, b0, b1: float, frequency: float | None = None,
                       axis=Z_AXIS, n_points: int = 201, **kw) -> float:
    """π-pulse duration (µs) maximizing noise-free population transfer.

    The first transfer maximum is located on a grid spanning 1.5 nominal
    Rabi periods, then refined with a parabola.
    """
    kw = {k: v for k, v in kw.items() if k not in ("noise", "antenna")}
    f = _resolve_frequency(model, as_field(b0).bz, frequency)
    try:
        omega = drive_element(model, as_field(b0).bz, axis) * b1
    except (KeyError, ValueError):
        omega = 0.0
    if not omega > 0:
        omega = np.max(np.abs(model.drive_operator(axis, b1)))
    grid = np.linspace(0.0, 1.5 / omega, n_points)
    y = simulate_rabi(model, b0, b1, grid, frequency=f, axis=axis, **kw).signal
    # first local maximum that reaches 90% of the best transfer
    peaks = [i for i in range(1, len(y) - 1) if y[i] >= y[i - 1] and y[i] >= y[i + 1]
             and y[i] >= 0.9 * y.max()]
    k = peaks[0] if peaks else int(np.argmax(y))
    tr = Trace(grid, y, np.zeros_like(y))
    if 0 < k < len(grid) - 1:
        y0, y1, y2 = tr.signal[k - 1:k + 2]
        denom = y0 - 2 * y1 + y2
        shift = 0.5 * (y0 - y2) / denom if denom != 0 else 0.0
        return float(grid[k] + shift * (grid[1] - grid[0]))
    return float(grid[k])


def ramsey_sequence(tau, pi_half, b1, frequency, axis=Z_AXIS, phase2=0.0,
                    readout=(DEFAULT_PAIR[1],)) -> PulseSequence:
    return PulseSequence((Pulse(pi_half, b1, frequency, 0.0, axis), Delay(float(tau)),
                          Pulse(pi_half, b1, frequency, phase2, axis)), readout)


def simulate_ramsey(model: SpinModel, b0, detuning: float, tau_list, b1: float = 0.1,
                    pi_half: float | None = None, frequency: float | None = None,
                    axis=Z_AXIS, **kw) -> Trace:
    """Ramsey fringes versus free precession time; drive detuned from the central line."""
    bz = as_field(b0).bz
    f0 = _resolve_frequency(model, bz, frequency)
    if pi_half is None:
        cal_model = replace(model, n_si=0) if isinstance(model, SystemConfig) else model
        pi_half = 0.5 * calibrate_pi_pulse(cal_model, b0, b1, f0, axis)
    readout = kw.pop("readout", (kw.get("polarized_pair", DEFAULT_PAIR)[1],))
    seqs = [ramsey_sequence(t, pi_half, b1, f0 + detuning, axis, readout=readout) for t in tau_list]
    tr = propagate(seqs, model, b0, swept=tau_list, swept_name="tau_us", **kw)
    tr.meta.update(frequency_MHz=f0 + detuning, pi_half_us=pi_half, b1_mT=b1, detuning_MHz=detuning)
    return tr


def hahn_sequence(tau_fix, tau_var, pi_half, b1, frequency, axis=Z_AXIS,
                  readout=(DEFAULT_PAIR[1],)) -> PulseSequence:
    return PulseSequence((Pulse(pi_half, b1, frequency, 0.0, axis), Delay(float(tau_fix)),
                          Pulse(2 * pi_half, b1, frequency, 0.0, axis), Delay(float(tau_var)),
                          Pulse(pi_half, b1, frequency, 0.0, axis)), readout)


ECHO_OFFSET = 3.0  # µs


@dataclass
class HahnResult:
    trace: Trace
    echo_amplitude: float
    tau_fix: float


def simulate_hahn(model: SpinModel, b0, tau_fix: float, tau_var_list=(), b1: float = 0.1,
                  pi_half: float | None = None, frequency: float | None = None,
                  axis=Z_AXIS, **kw) -> HahnResult:
    """Hahn echo versus the second free-precession time.

    The echo amplitude is ``signal(tau_var = tau_fix + 3 µs) - signal(tau_var = tau_fix)``.
    """
    bz = as_field(b0).bz
    f = _resolve_frequency(model, bz, frequency)
    if pi_half is None:
        cal_model = replace(model, n_si=0) if isinstance(model, SystemConfig) else model
        pi_half = 0.5 * calibrate_pi_pulse(cal_model, b0, b1, f, axis)
    readout = kw.pop("readout", (kw.get("polarized_pair", DEFAULT_PAIR)[1],))
    taus = list(tau_var_list) + [tau_fix, tau_fix + ECHO_OFFSET]
    seqs = [hahn_sequence(tau_fix, tv, pi_half, b1, f, axis, readout) for tv in taus]
    tr = propagate(seqs, model, b0, swept=taus, swept_name="tau_var_us", **kw)
    amp = float(tr.signal[-1] - tr.signal[-2])
    n = len(taus) - 2
    out = Trace(tr.swept[:n], tr.signal[:n], tr.stderr[:n], tr.swept_name, dict(tr.meta))
    out.meta.update(frequency_MHz=f, pi_half_us=pi_half, b1_mT=b1, tau_fix_us=tau_fix)
    return HahnResult(out, amp, float(tau_fix))


def echo_amplitudes(model: SpinModel, b0, tau_fix_list, **kw) -> Trace:
    """Echo amplitude versus total free precession time 2 tau_fix."""
    bz = as_field(b0).bz
    if kw.get("pi_half") is None:
        b1 = kw.get("b1", 0.1)
        f = _resolve_frequency(model, bz, kw.get("frequency"))
        cal_model = replace(model, n_si=0) if isinstance(model, SystemConfig) else model
        kw["pi_half"] = 0.5 * calibrate_pi_pulse(cal_model, b0, b1, f, kw.get("axis", Z_AXIS))
    amps = [simulate_hahn(model, b0, t, (), **kw).echo_amplitude for t in tau_fix_list]
    x = 2 * np.asarray(tau_fix_list, dtype=float)
    return Trace(x, np.array(amps), np.zeros(len(amps)), "two_tau_fix_us", {"b0_mT": bz})


def ensemble_average(traces: Sequence[Trace], weights: Sequence[float]) -> Trace:
    """Weighted sum of subensemble traces sharing one swept axis."""
    if len(traces) != len(weights) or not traces:
        raise ValueError("need one weight per trace")
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    for tr in traces[1:]:
        if not np.array_equal(tr.swept, traces[0].swept):
            raise ValueError("traces must share the swept axis")
    signal = sum(wk * tr.signal for wk, tr in zip(w, traces))
    stderr = np.sqrt(sum((wk * tr.stderr) ** 2 for wk, tr in zip(w, traces)))
    meta = dict(traces[0].meta)
    meta["ensemble_weights"] = [float(x) for x in w]
    return Trace(traces[0].swept.copy(), signal, stderr, traces[0].swept_name, meta)


# ------------------------------------------------------------------ ESEEM


@dataclass(frozen=True)
class TwoSpinParams:
    """Effective electron two-level system coupled to one nuclear spin-1/2 (MHz)."""

    a_par: float
    a_perp: float
    nu_i: float  # bare nuclear Larmor frequency

    def nuclear_frequencies(self) -> tuple[float, float]:
        """Nuclear frequencies in the two electron manifolds (m_s = +1/2, -1/2)."""
        fa = math.hypot(self.nu_i + self.a_par / 2, self.a_perp / 2)
        fb = math.hypot(self.nu_i - self.a_par / 2, self.a_perp / 2)
        return fa, fb

    def depth(self) -> float:
        fa, fb = self.nuclear_frequencies()
        if fa == 0 or fb == 0:
            return 0.0
        return (self.a_perp * self.nu_i / (fa * fb)) ** 2


def eseem_two_spin_oracle(params: TwoSpinParams, tau) -> np.ndarray:
    """Two-pulse echo envelope E(2 tau) for S = 1/2, I = 1/2 with ideal pulses."""
    tau = np.asarray(tau, dtype=float)
    fa, fb = params.nuclear_frequencies()
    wa, wb = TWO_PI * fa * tau, TWO_PI * fb * tau
    k = params.depth()
    return 1.0 - k / 4 * (2 - 2 * np.cos(wa) - 2 * np.cos(wb)
                          + np.cos(wa - wb) + np.cos(wa + wb))


@dataclass(frozen=True)
class TwoSpinModel(SpinModel):
    """``H = nu_s Sz + Sz (a_par Iz + a_perp Ix) + nu_i Iz``; the drive acts on S only.

    The static field argument is ignored; everything is set by frequencies.
    """

    params: TwoSpinParams
    nu_s: float = 1000.0  # MHz
    rabi_per_mT: float = 1.0  # MHz of Rabi frequency per mT of B1

    @property
    def space(self) -> ProductSpace:
        return ProductSpace((SpinSpecies("e", 0.5, ELECTRON, (1.0, 1.0)),
                             SpinSpecies("n", 0.5, NUCLEAR, 0.0)))

    def static_hamiltonian(self, b0=None) -> np.ndarray:
        sx, sy, sz = self.space.spin_vector(0)
        ix, iy, iz = self.space.spin_vector(1)
        p = self.params
        return self.nu_s * sz + sz @ (p.a_par * iz + p.a_perp * ix) + p.nu_i * iz

    def drive_operator(self, axis, b1_amplitude: float) -> np.ndarray:
        n = np.asarray(axis, dtype=float)
        sx, sy, sz = self.space.spin_vector(0)
        # a transverse drive of the electron; 2 Sx gives Rabi frequency = rabi_per_mT * b1
        return 2 * self.rabi_per_mT * b1_amplitude * (n[0] * sx + n[1] * sy + n[2] * sx)


def eseem_numerical(params: TwoSpinParams, tau_list, rabi: float = 2.0e4,
                    nu_s: float = 1.0e6) -> np.ndarray:
    """Echo envelope from finite-pulse propagation of :class:`TwoSpinModel`.

    The electron starts in its ``m_s = +1/2`` manifold with the nucleus
    unpolarized; ``1 - 2 P(flipped)`` after π/2 - τ - π - τ - π/2 is returned.
    """
    model = TwoSpinModel(params, nu_s=nu_s, rabi_per_mT=rabi)
    pi_half = 0.25 / rabi
    # delays run between pulse centres; m_s = +1/2 carries the ↓ label
    seqs = [hahn_sequence(max(t - 1.5 * pi_half, 0.0), max(t - 1.5 * pi_half, 0.0), pi_half, 1.0,
                          nu_s, Z_AXIS, ("|↑",)) for t in tau_list]
    tr = propagate(seqs, model, 0.0, polarized_pair=("|↓", "|↑"), pair_weight=1.0)
    return 1.0 - 2.0 * tr.signal
