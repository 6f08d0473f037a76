"""Structural invariants and oracle cross-checks, run by ``vsic validate``."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dynamics import (AntennaProfile, Delay, NoiseModel, Pulse, TwoSpinParams, Trajectory,
                       central_frequency, dephasing_factors, drive_element, eseem_numerical,
                       eseem_two_spin_oracle, propagate, ramsey_sequence, simulate_rabi)
from .fitting import fit_rabi
from .hamiltonian import SystemConfig, as_field, profile
from .spectra import Z_AXIS, levels_at
from .spin import make_spin_operators


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name}: {self.value:.3g} (tol {self.tolerance:.1g}) {self.detail}".rstrip()


def _result(name, value, tol, detail="") -> CheckResult:
    return CheckResult(name, bool(value <= tol), float(value), tol, detail)


# ------------------------------------------------------- reference assembler


def _ladder(s: float, m: float) -> float:
    return math.sqrt(max(s * (s + 1) - m * (m + 1), 0.0))


def reference_hamiltonian(config: SystemConfig, bz: float) -> np.ndarray:
    """Static Hamiltonian for a z field, assembled element by element.

    Works directly on quantum-number tuples: diagonal terms from the
    projections, off-diagonal ones from the raising and lowering matrix
    elements written out for each coupling.
    """
    p, si = config.defect, config.si
    spins = [0.5, 3.5] + [0.5] * config.n_si
    states = list(itertools.product(*[[s - k for k in range(int(2 * s) + 1)] for s in spins]))
    index = {st: i for i, st in enumerate(states)}
    h = np.zeros((len(states), len(states)), dtype=complex)
    mub, mun = p.mu_B_over_h, p.mu_N_over_h
    for i, st in enumerate(states):
        ms, mv, *msi = st
        h[i, i] += -mub * p.g_par * bz * ms + p.A_V_par * ms * mv + mun * p.g_V * bz * mv
        h[i, i] += p.Q_zz * mv ** 2
        for k, mk in enumerate(msi):
            h[i, i] += si.A_Si_par * ms * mk + mun * si.g_Si * bz * mk
        # A_perp (S+ I- + S- I+)/2 on the vanadium spin
        for ds in (1, -1):
            new = (ms + ds, mv - ds, *msi)
            if new in index:
                amp = _ladder(0.5, ms if ds > 0 else ms - 1) * _ladder(3.5, mv - ds if ds > 0 else mv)
                h[index[new], i] += 0.5 * p.A_V_perp * amp
        # Sz A_Si_perp Ix on each silicon: Ix = (I+ + I-)/2
        for k, mk in enumerate(msi):
            for d in (1, -1):
                mk2 = mk + d
                if abs(mk2) <= 0.5:
                    new = list(st)
                    new[2 + k] = mk2
                    amp = _ladder(0.5, mk if d > 0 else mk2)
                    h[index[tuple(new)], i] += si.A_Si_perp * ms * 0.5 * amp
    return h


# ------------------------------------------------------------------ checks


def check_spin_algebra(s_values=(0.5, 1.0, 1.5, 3.5, 7.5)) -> CheckResult:
    worst = 0.0
    for s in s_values:
        op = make_spin_operators(s)
        x, y, z = op.sx, op.sy, op.sz
        for a, b, c in ((x, y, z), (y, z, x), (z, x, y)):
            worst = max(worst, np.max(np.abs(a @ b - b @ a - 1j * c)))
        cas = x @ x + y @ y + z @ z
        worst = max(worst, np.max(np.abs(cas - s * (s + 1) * np.eye(op.dim))))
    return _result("commutator algebra [Sx,Sy]=iSz and S^2=s(s+1)", worst, 1e-12)


def check_hermiticity(fields=(0.0, 12.3, 29.8, 47.0)) -> CheckResult:
    worst = 0.0
    for n in (0, 1, 2):
        m = profile(n_si=n)
        for b in fields:
            for b_vec in (b, (0.3, -0.2, b)):
                h = m.static_hamiltonian(b_vec)
                worst = max(worst, np.max(np.abs(h - h.conj().T)))
        for axis in ((1.0, 0.0, 0.0), Z_AXIS):
            d = m.drive_operator(axis, 1.0)
            worst = max(worst, np.max(np.abs(d - d.conj().T)))
    return _result("Hamiltonian and drive operators Hermitian", worst, 1e-12)


def check_reference_eigenvalues(fields=(0.0, 10.0, 29.82, 33.0, 50.0)) -> CheckResult:
    worst = 0.0
    for n in (0, 1, 2):
        m = profile(n_si=n)
        for b in fields:
            a = np.linalg.eigvalsh(m.static_hamiltonian(b))
            r = np.linalg.eigvalsh(reference_hamiltonian(m, b))
            worst = max(worst, np.max(np.abs(a - r)))
    return _result("eigenvalues match element-wise reference assembler (MHz)", worst, 1e-8)


def check_unitarity() -> CheckResult:
    worst = 0.0
    for n in (0, 1):
        m = profile(n_si=n)
        d = levels_at(m, 33.0)
        tr = Trajectory(m, as_field(33.0), d.vectors[0])
        f0 = central_frequency(m, 33.0)
        for pulse in (Pulse(0.05, 0.3, f0), Pulse(0.2, 1.0, f0 - 1.0, 0.7), Pulse(0.1, 0.5, f0, 0, (1, 0, 0))):
            u = tr.pulse_unitary(pulse, 0.37)
            worst = max(worst, np.max(np.abs(u.conj().T @ u - np.eye(len(u)))))
        ph = tr.free(3.3)
        worst = max(worst, np.max(np.abs(np.abs(ph) - 1)))
    return _result("pulse and delay propagators unitary", worst, 1e-10)


def _final_state(model, b0, seq, rate):
    d = levels_at(model, b0)
    tr = Trajectory(model, as_field(b0), d.vectors[0])
    dim = model.dim
    rng = np.random.default_rng(5)
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = g @ g.conj().T
    rho /= np.trace(rho).real
    t = 0.0
    for el in seq.elements:
        if isinstance(el, Delay):
            ph = tr.free(el.duration)
            rho = ph[:, None] * rho * ph.conj()[None, :]
            fac = dephasing_factors(rate, dim, el.duration)
            if fac is not None:
                rho = rho * fac
        else:
            u = tr.pulse_unitary(el, t)
            rho = u @ rho @ u.conj().T
        t += el.duration
    return rho


def check_trace_and_positivity() -> list[CheckResult]:
    m = profile(n_si=1)
    f0 = central_frequency(m, 33.0)
    seq = ramsey_sequence(1.7, 0.05, 0.3, f0 - 1.0)
    rho = _final_state(m, 33.0, seq, 0.8)
    herm = np.max(np.abs(rho - rho.conj().T))
    tr_err = abs(np.trace(rho).real - 1)
    min_eig = np.linalg.eigvalsh((rho + rho.conj().T) / 2).min()
    return [_result("trace preserved with dephasing", tr_err, 1e-10),
            _result("density matrix positive semidefinite with dephasing", max(-min_eig, 0.0), 1e-10,
                    f"(min eigenvalue {min_eig:.2e})"),
            _result("density matrix Hermitian with dephasing", herm, 1e-10)]


def check_determinism() -> list[CheckResult]:
    m = profile(n_si=0)
    f0 = central_frequency(m, 33.0)
    seqs = [ramsey_sequence(t, 0.05, 0.3, f0 - 1.0) for t in (0.0, 0.4, 1.1)]
    noise = NoiseModel(sigma_b=0.02, n_noise_samples=16, rng_seed=11)
    ant = AntennaProfile(n_depth_samples=6)
    a = propagate(seqs, m, 33.0, noise=noise, antenna=ant)
    b = propagate(seqs, m, 33.0, noise=noise, antenna=ant)
    same = float(np.max(np.abs(a.signal - b.signal)) + np.max(np.abs(a.stderr - b.stderr)))

    # reversing the depth order must not change the weighted average
    class Reversed(AntennaProfile):
        def depths(self):
            return super().depths()[::-1]

    c = propagate(seqs, m, 33.0, noise=noise, antenna=Reversed(n_depth_samples=6))
    reorder = float(np.max(np.abs(a.signal - c.signal)))
    threaded = propagate(seqs, m, 33.0, noise=noise, antenna=ant, threads=3)
    thr = float(np.max(np.abs(a.signal - threaded.signal)))
    return [_result("identical seed gives bit-identical traces", same, 0.0),
            _result("antenna average invariant under slab reordering", reorder, 1e-12),
            _result("threaded propagation identical to serial", thr, 0.0)]


def check_eseem_oracle() -> CheckResult:
    p = TwoSpinParams(a_par=0.6, a_perp=0.5, nu_i=0.3)
    tau = np.linspace(0.0, 4.0, 17)
    # very short pulses; the finite-pulse error scales as (spectral width / Rabi)^2
    num = eseem_numerical(p, tau, rabi=5.0e5, nu_s=2.5e7)
    ora = eseem_two_spin_oracle(p, tau)
    return _result("two-spin Hahn ESEEM matches the analytic oracle", float(np.max(np.abs(num - ora))), 1e-6)


def check_rwa_vs_lab() -> CheckResult:
    m = profile(n_si=0)
    durations = np.linspace(0.0, 0.09, 7)
    kw = dict(pair_weight=1.0)
    rwa = simulate_rabi(m, 33.0, 0.2, durations, **kw)
    lab = simulate_rabi(m, 33.0, 0.2, durations, rwa=False, **kw)
    return _result("RWA matches lab-frame integration on the clock pair (population)",
                   float(np.max(np.abs(rwa.signal - lab.signal))), 1e-2)


def check_generalized_rabi(detuning: float = 1.5, b1: float = 0.2) -> CheckResult:
    m = profile(n_si=0)
    omega = drive_element(m, 33.0) * b1
    t = np.linspace(0.0, 3.0, 301)
    tr = simulate_rabi(m, 33.0, b1, t, detuning=detuning, pair_weight=1.0)
    fit = fit_rabi(t, tr.signal, 1)
    expect = math.hypot(omega, detuning)
    err = abs(fit.components()["f"][0] - expect) / expect
    return _result("Rabi frequency equals sqrt(Omega^2 + delta^2)", err, 1e-2,
                   f"(fit {fit.components()['f'][0]:.4f} MHz, analytic {expect:.4f} MHz)")


CHECKS: list[Callable[[], CheckResult | list[CheckResult]]] = [
    check_spin_algebra, check_hermiticity, check_reference_eigenvalues, check_unitarity,
    check_trace_and_positivity, check_determinism, check_eseem_oracle, check_rwa_vs_lab,
    check_generalized_rabi,
]


def run_suite() -> list[CheckResult]:
    out: list[CheckResult] = []
    for check in CHECKS:
        try:
            res = check()
        except Exception as exc:  # a crashing check is a failed check
            res = CheckResult(check.__name__, False, math.nan, math.nan, f"raised {exc!r}")
        out.extend(res if isinstance(res, list) else [res])
    return out
