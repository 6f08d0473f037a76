import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vsic.hamiltonian import (FreeSpin, SystemConfig, as_field, build_drive_operator, format_ket,
                              parse_ket, profile)
from vsic.spectra import CLOCK_PAIR, levels_at
from vsic.validation import reference_hamiltonian


def _brute_force(config: SystemConfig, b):
    """Dense textbook Hamiltonian built from scratch with explicit Kronecker products."""
    def ops(s):
        m = np.arange(s, -s - 1, -1)
        sp = np.diag(np.sqrt(s * (s + 1) - m[1:] * (m[1:] + 1)), 1)
        return (sp + sp.T) / 2, (sp - sp.T) / 2j, np.diag(m)

    spins = [0.5, 3.5] + [0.5] * config.n_si
    dims = [int(2 * s + 1) for s in spins]

    def lift(op, k):
        mats = [np.eye(d) for d in dims]
        mats[k] = op
        out = mats[0]
        for m in mats[1:]:
            out = np.kron(out, m)
        return out

    S = [lift(o, 0) for o in ops(0.5)]
    V = [lift(o, 1) for o in ops(3.5)]
    p, si = config.defect, config.si
    bx, by, bz = b
    h = -p.mu_B_over_h * (p.g_perp * (bx * S[0] + by * S[1]) + p.g_par * bz * S[2])
    h = h + p.A_V_par * S[2] @ V[2] + p.A_V_perp * (S[0] @ V[0] + S[1] @ V[1])
    h = h + p.Q_zz * V[2] @ V[2]
    h = h + p.mu_N_over_h * p.g_V * (bx * V[0] + by * V[1] + bz * V[2])
    for k in range(config.n_si):
        K = [lift(o, 2 + k) for o in ops(0.5)]
        h = h + S[2] @ (si.A_Si_par * K[2] + si.A_Si_perp * K[0])
        h = h + p.mu_N_over_h * si.g_Si * (bx * K[0] + by * K[1] + bz * K[2])
    return h


def test_eigenvalues_match_brute_force_at_30mT(dt0):
    a = np.linalg.eigvalsh(dt0.static_hamiltonian(30.0))
    b = np.linalg.eigvalsh(_brute_force(dt0, (0, 0, 30.0)))
    assert np.max(np.abs(a - b)) < 1e-8


def test_zero_field_pure_hyperfine(dt0):
    m = dt0.with_params(Q_zz=0.0)
    a = np.linalg.eigvalsh(m.static_hamiltonian(0.0))
    b = np.linalg.eigvalsh(_brute_force(m, (0, 0, 0)))
    assert np.max(np.abs(a - b)) < 1e-8
    # axial S.A.I for S=1/2, I=7/2 has two multiplets (F = 3 and F = 4 for A_par = A_perp)
    assert len(np.unique(np.round(a, 6))) < len(a)


@given(st.integers(0, 2), st.floats(-60, 60), st.floats(-5, 5), st.floats(-5, 5))
def test_eigenvalues_match_two_oracles(n_si, bz, bx, by):
    m = profile(n_si=n_si)
    a = np.linalg.eigvalsh(m.static_hamiltonian((bx, by, bz)))
    b = np.linalg.eigvalsh(_brute_force(m, (bx, by, bz)))
    assert np.max(np.abs(a - b)) < 1e-8
    c = np.linalg.eigvalsh(reference_hamiltonian(m, bz))
    d = np.linalg.eigvalsh(m.static_hamiltonian(bz))
    assert np.max(np.abs(c - d)) < 1e-8


@given(st.integers(0, 2), st.floats(-60, 60), st.floats(-60, 60), st.floats(-60, 60),
       st.floats(0, np.pi), st.floats(0, 2 * np.pi))
def test_hermitian(n_si, bx, by, bz, theta, phi):
    m = profile(n_si=n_si)
    h = m.static_hamiltonian((bx, by, bz))
    assert np.max(np.abs(h - h.conj().T)) < 1e-10
    axis = (np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta))
    d = m.drive_operator(axis, 0.7)
    assert np.max(np.abs(d - d.conj().T)) < 1e-10


def test_transverse_field_without_g_perp_is_nuclear_only(dt0):
    h = dt0.static_hamiltonian((12.0, 0.0, 0.0)) - dt0.static_hamiltonian(0.0)
    space = dt0.space
    ix = space.spin_vector(1)[0]
    expected = dt0.defect.mu_N_over_h * dt0.defect.g_V * 12.0 * ix
    assert np.max(np.abs(h - expected)) < 1e-12


def test_z_drive_diagonal(dt2):
    d = dt2.drive_operator((0, 0, 1), 1.0)
    assert np.max(np.abs(d - np.diag(np.diag(d)))) == 0


def test_x_drive_without_g_perp_has_no_electron_part(dt0):
    d = dt0.drive_operator((1, 0, 0), 1.0)
    ix = dt0.space.spin_vector(1)[0]
    assert np.max(np.abs(d - dt0.defect.mu_N_over_h * dt0.defect.g_V * ix)) < 1e-15


def test_clock_states_are_driven_by_z_field(dt0):
    d = levels_at(dt0, 29.82)
    v = d.vectors[0]
    i, j = (d.level(p) for p in CLOCK_PAIR)
    h1 = v.conj().T @ dt0.drive_operator((0, 0, 1), 1.0) @ v
    scale = np.max(np.abs(np.diag(h1)))
    assert abs(h1[i, j]) > 1e-3 * scale


def test_drive_axis_must_be_unit():
    with pytest.raises(ValueError):
        build_drive_operator(profile(), (0, 0, 2), 1.0)


def test_label_convention_up_is_upper_branch(dt0):
    # ↑ is m_s = -1/2, which has the higher Zeeman energy for g > 0
    d = levels_at(dt0, 50.0)
    e = d.energies[0]
    for mi in ("-7/2", "+1/2", "+7/2"):
        assert e[d.level(f"|↑,{mi}⟩")] > e[d.level(f"|↓,{mi}⟩")]
    assert parse_ket(dt0.space, "|↑,-5/2⟩") == (-0.5, -2.5)
    assert format_ket(dt0.space, (0.5, -3.5)) == "|↓,-7/2⟩"


def test_ket_labels_roundtrip(dt2):
    for ms in dt2.space.basis():
        assert parse_ket(dt2.space, format_ket(dt2.space, ms)) == ms


def test_with_params_and_validation():
    m = profile().with_params(A_V_par=-200.0, A_Si_par=-9.0, n_si=1)
    assert m.defect.A_V_par == -200.0 and m.si.A_Si_par == -9.0 and m.n_si == 1
    with pytest.raises(KeyError):
        profile().with_params(bogus=1.0)
    with pytest.raises(ValueError):
        SystemConfig(n_si=3)
    with pytest.raises(KeyError):
        profile("nope")


def test_free_spin_levels_linear():
    h = FreeSpin().static_hamiltonian(10.0)
    assert np.allclose(np.sort(np.linalg.eigvalsh(h)), [-139.962449, 139.962449])


def test_as_field():
    assert as_field(3.0).array.tolist() == [0, 0, 3.0]
    with pytest.raises(ValueError):
        as_field([1, 2])


@given(st.integers(0, 2), st.floats(-5, 5), st.tuples(st.floats(-40, 40), st.floats(-40, 40), st.floats(-40, 40)))
def test_linear_in_field(n_si, alpha, b):
    m = profile(n_si=n_si)
    h0 = m.static_hamiltonian(0.0)
    lhs = m.static_hamiltonian(tuple(alpha * x for x in b)) - h0
    rhs = alpha * (m.static_hamiltonian(b) - h0)
    assert np.max(np.abs(lhs - rhs)) < 1e-10


@pytest.mark.parametrize("bz", [0.0, 17.0, 33.0])
def test_decoupled_silicon_block(dt0, bz):
    m2 = profile(n_si=2).with_params(A_Si_par=0.0, A_Si_perp=0.0)
    base = np.linalg.eigvalsh(dt0.static_hamiltonian(bz))
    zee = m2.defect.mu_N_over_h * m2.si.g_Si * bz
    shifts = [zee * (m1 + m2_) for m1, m2_ in itertools.product((0.5, -0.5), repeat=2)]
    expected = np.sort(np.concatenate([base + s for s in shifts]))
    assert np.max(np.abs(np.linalg.eigvalsh(m2.static_hamiltonian(bz)) - expected)) < 1e-10


@given(st.floats(0, 50), st.floats(0, np.pi), st.floats(0, 2 * np.pi))
def test_isotropic_limit_depends_on_magnitude_only(b, theta, phi):
    m = profile().with_params(g_perp=1.664, A_V_perp=-232.02, Q_zz=0.0)
    vec = (b * np.sin(theta) * np.cos(phi), b * np.sin(theta) * np.sin(phi), b * np.cos(theta))
    a = np.linalg.eigvalsh(m.static_hamiltonian(vec))
    z = np.linalg.eigvalsh(m.static_hamiltonian(b))
    assert np.max(np.abs(a - z)) < 1e-8
