import numpy as np
import pytest
import scipy.linalg as sla
from scipy.sparse.linalg import gmres

from boxmen.aperture import RectAperture, analytic_rect_aperture, coupling_matrix, solve_aperture_modes
from boxmen.boxmodes import TE, TM, enumerate_modes, mode_arrays, pulse_overlap
from boxmen.geometry import Box, Layer, LayerStack, Port, build_aperture
from boxmen.media import asymptotic_coeff_arrays
from boxmen.men import (
    FLAG_RESIDUAL,
    GeneralizedZ,
    MenError,
    MenModel,
    TLSection,
    assemble_static,
    assemble_system,
    cascade,
    direct_system,
    impedance_matrix,
    reduce_to_ports,
    solve,
    solve_system,
    tl_section,
    z_to_s,
)

from conftest import AIR_COVER, SUBSTRATE, through_line_geometry

BOX = Box(0.02, 0.02)
RECT = RectAperture(BOX, 4e-3, 8e-3, 12e-3, 4e-3)
INNER_PORT = Port(1, (10e-3, 10e-3), 1e-3, 2e-3, "y")
STACK = LayerStack([SUBSTRATE], [AIR_COVER])
LOSSY = LayerStack([Layer(2.33, 1.57e-3, 0.002)], [AIR_COVER])


def small_model(n_basis=20, n_k=2000, n_acc=1, m_static=1000, m_dyn=50, stack=STACK, ports=(INNER_PORT,)):
    ap = analytic_rect_aperture(RECT, n_basis)
    bm = enumerate_modes(BOX, n_k)
    C = coupling_matrix(ap, bm, check="off").C
    return MenModel.build(C, bm, stack, ports, n_acc, m_static, m_dyn)


def rel(a, b):
    return np.abs(a - b).max() / np.abs(b).max()


# ----------------------------------------------------------------------- static kernel


def test_static_sums_match_naive_double_loop(rng):
    box = Box(0.03, 0.02)
    bm = enumerate_modes(box, 40)
    C = rng.normal(size=(6, 40))
    arr = mode_arrays(bm)
    c1, c2 = asymptotic_coeff_arrays(arr["is_te"], arr["kc"], STACK)
    split = assemble_static(C, bm, (c1, c2), 3, 30)
    S1 = np.zeros((6, 6))
    S2 = np.zeros((6, 6))
    for i in range(6):
        for j in range(6):
            for m in range(3, 30):
                term = C[i, m] * C[j, m]
                S1[i, j] += c1[m] * term
                S2[i, j] += c2[m].real * term
    assert rel(split.S1, S1) < 1e-12
    assert rel(split.S2, S2) < 1e-12


def test_static_sums_symmetric_psd():
    m = small_model()
    for S in (m.split.S1, m.split.S2):
        assert np.abs(S - S.T).max() <= 1e-12 * np.abs(S).max()
        assert np.linalg.eigvalsh(S.real).min() >= -1e-10 * np.abs(S).max()


def test_static_sum_single_te_term(rng):
    box = Box(0.03, 0.02)
    bm = enumerate_modes(box, 10)
    n = next(i for i, md in enumerate(bm) if md.family == TE and i > 0)
    C = rng.normal(size=(4, 10))
    arr = mode_arrays(bm)
    c1, c2 = asymptotic_coeff_arrays(arr["is_te"], arr["kc"], STACK)
    split = assemble_static(C, bm, (c1, c2), n, n + 1)
    np.testing.assert_allclose(split.S1, c1[n] * np.outer(C[:, n], C[:, n]), rtol=1e-14)
    assert np.all(split.S2 == 0)


def test_static_sum_tm_term_only_in_s2(rng):
    box = Box(0.03, 0.02)
    bm = enumerate_modes(box, 10)
    n = next(i for i, md in enumerate(bm) if md.family == TM)
    C = rng.normal(size=(4, 10))
    arr = mode_arrays(bm)
    c1, c2 = asymptotic_coeff_arrays(arr["is_te"], arr["kc"], STACK)
    split = assemble_static(C, bm, (c1, c2), n, n + 1)
    assert np.all(split.S1 == 0)
    np.testing.assert_allclose(split.S2, c2[n].real * np.outer(C[:, n], C[:, n]), rtol=1e-14)


def test_static_sum_range_errors(rng):
    bm = enumerate_modes(BOX, 20)
    C = rng.normal(size=(3, 20))
    coeffs = (np.ones(20), np.ones(20))
    with pytest.raises(ValueError, match="exceeds"):
        assemble_static(C, bm, coeffs, 0, 21)
    with pytest.raises(ValueError):
        assemble_static(C, bm, coeffs, 5, 5)
    with pytest.raises(ValueError):
        assemble_static(C, bm, coeffs, 0, 10, 11)


def test_lossy_layer_makes_s2_complex():
    m = small_model(stack=LOSSY)
    assert np.abs(m.split.S2.imag).max() > 0
    assert np.abs(small_model().split.S2.imag).max() == 0


# ----------------------------------------------------------------------- system


def test_lossless_system_is_j_times_real_symmetric():
    A = small_model().system(2e9).A
    B = A / 1j
    assert np.abs(B.imag).max() <= 1e-12 * np.abs(B).max()
    assert np.abs(B - B.T).max() <= 1e-12 * np.abs(B).max()


def test_lossy_system_complex_symmetric_not_hermitian():
    A = small_model(stack=LOSSY).system(2e9).A
    assert np.abs(A - A.T).max() <= 1e-12 * np.abs(A).max()
    assert np.abs(A - A.conj().T).max() > 1e-6 * np.abs(A).max()


def test_dynamic_correction_contributes():
    a0 = small_model(m_dyn=0).system(3e9).A
    a1 = small_model(m_dyn=1000).system(3e9).A
    assert rel(a0, a1) > 1e-6


def test_full_dynamic_equals_direct_sum():
    m = small_model(m_dyn=1000)
    split_sys = m.system(3e9)
    direct = direct_system(m.C, m.box_modes, STACK, m.port_cols, 1, 1000, 3e9)
    assert rel(split_sys.A, direct.A) < 1e-12
    np.testing.assert_array_equal(split_sys.rhs, direct.rhs)


def test_kummer_split_vs_long_direct_sum():
    ap = analytic_rect_aperture(RECT, 20)
    bm = enumerate_modes(BOX, 20000)
    C = coupling_matrix(ap, bm, check="off").C
    m = MenModel.build(C, bm, STACK, (INNER_PORT,), 1, 4000, 100)
    for f in (0.5e9, 2e9, 5e9):
        kummer = m.system(f).A
        direct = direct_system(C, bm, STACK, m.port_cols, 1, 20000, f).A
        assert rel(kummer, direct) < 1e-2


def test_port_column_is_truncated_expansion():
    m = small_model()
    modes = m.box_modes
    expected = [sum(m.C[i, k] * pulse_overlap(modes[k], INNER_PORT) for k in range(len(modes))) for i in range(3)]
    np.testing.assert_allclose(m.port_cols[:3, 0], expected, rtol=1e-10, atol=1e-14)


def test_frequency_must_be_positive():
    with pytest.raises(ValueError):
        small_model().system(0.0)


# ----------------------------------------------------------------------- solve


def test_solve_residual_and_flags():
    system = small_model().system(2e9)
    alpha, cond = solve(system)
    res = np.linalg.norm(system.rhs - system.A @ alpha, axis=0)
    assert np.all(res < 1e-10 * np.linalg.norm(system.rhs, axis=0))
    assert FLAG_RESIDUAL not in system.flags
    assert np.isfinite(cond) and cond >= 1


def test_duplicate_rhs_columns_give_identical_alpha():
    system = small_model().system(2e9)
    system.rhs = np.concatenate([system.rhs, system.rhs[:, :1]], axis=1)
    alpha, _ = solve(system)
    np.testing.assert_array_equal(alpha[:, 0], alpha[:, -1])


def test_dense_solve_matches_gmres():
    system = small_model(n_basis=30).system(2.5e9)
    alpha, _ = solve(system)
    for c in range(system.rhs.shape[1]):
        x, info = gmres(system.A, system.rhs[:, c], rtol=1e-14, atol=0, restart=60, maxiter=200)
        assert info == 0
        assert np.linalg.norm(x - alpha[:, c]) <= 1e-8 * np.linalg.norm(alpha[:, c])


def test_singular_and_nonfinite_systems_raise():
    system = small_model().system(2e9)
    system.A = np.zeros_like(system.A)
    with pytest.raises(MenError, match="singular"):
        solve(system)
    system.A = np.full_like(system.A, np.nan)
    with pytest.raises(MenError, match="non-finite"):
        solve(system)


# ----------------------------------------------------------------------- impedance


def test_generalized_z_symmetric_and_imaginary():
    m = small_model(n_acc=2)
    sol = m.solve_at(2e9)
    Z = sol.zbar.Z
    assert Z.shape == (3, 3)
    assert np.abs(Z - Z.T).max() <= 1e-10 * np.abs(Z).max()
    assert np.abs(Z.real).max() <= 1e-10 * np.abs(Z).max()


def test_compact_form_equals_rhs_projection():
    m = small_model(n_acc=2)
    system = m.system(2e9)
    alpha, _ = solve(system)
    zb = impedance_matrix(alpha, system.rhs, 1)
    # Z_{0,0} = sum_k alpha_{0,k} C_{k,0};  Z_{m,n} = sum_k alpha_{n,k} C_{k,m}
    assert zb.zpp[0, 0] == pytest.approx(np.dot(alpha[:, 0], m.port_cols[:, 0]), rel=1e-14)
    assert zb.zaa[1, 0] == pytest.approx(np.dot(alpha[:, 1], m.C[:, 1]), rel=1e-14)
    assert zb.zap[0, 0] == pytest.approx(np.dot(alpha[:, 0], m.C[:, 0]), rel=1e-14)


def test_mirror_symmetric_two_port_has_equal_self_impedances():
    box, metal, ports = through_line_geometry(a=0.02, gap=2e-3, width=4e-3)
    mask = build_aperture(box, metal, 80, 80)
    ap = solve_aperture_modes(mask, 40)
    bm = enumerate_modes(box, 3000)
    C = coupling_matrix(ap, bm, check="off").C
    m = MenModel.build(C, bm, STACK, ports, 1, 2000, 100)
    for f in (1e9, 3e9):
        Z = m.solve_at(f).z_ports
        assert abs(Z[0, 0] - Z[1, 1]) <= 1e-8 * abs(Z[0, 0])
        assert abs(Z[0, 1] - Z[1, 0]) <= 1e-10 * abs(Z).max()


# ----------------------------------------------------------------------- reduction


def test_reduce_without_accessible_modes_is_identity():
    zb = GeneralizedZ(np.array([[1 + 2j, 3j], [3j, 4j]]), 2)
    np.testing.assert_array_equal(reduce_to_ports(zb, None), zb.Z)


def test_reduce_matches_schur_formula(rng):
    R = rng.normal(size=(5, 5))
    Z = 1j * (R + R.T)
    zb = GeneralizedZ(Z, 2)
    y = 1j * rng.normal(size=3)
    ref = zb.zpp - zb.zpa @ np.linalg.solve(zb.zaa + np.diag(1 / y), zb.zap)
    np.testing.assert_allclose(reduce_to_ports(zb, y), ref, rtol=1e-12)


def test_reduce_admittance_count_checked():
    zb = GeneralizedZ(np.eye(3, dtype=complex), 1)
    with pytest.raises(ValueError):
        reduce_to_ports(zb, [1.0])


@pytest.mark.parametrize("f", [0.7e9, 2.2e9, 4.1e9])
def test_mode_reallocation_invariance(f):
    zs = []
    for n_acc in (0, 1, 2):
        zs.append(small_model(n_acc=n_acc, m_dyn=200).solve_at(f).z_ports)
    for z in zs[1:]:
        assert rel(z, zs[0]) < 1e-6


def test_accessible_mode_terminated_in_total_admittance():
    m = small_model(n_acc=1)
    sol = m.solve_at(2e9)
    y, _ = m.accessible_admittances(2e9)
    manual = solve_system(m.system(2e9), m).z_ports
    np.testing.assert_array_equal(manual, sol.z_ports)
    np.testing.assert_allclose(sol.z_ports, reduce_to_ports(sol.zbar, y), rtol=0)


# ----------------------------------------------------------------------- S conversion


def test_z_to_s_reference_cases():
    np.testing.assert_allclose(z_to_s(50.0 * np.eye(2)), np.zeros((2, 2)), atol=1e-15)
    np.testing.assert_allclose(z_to_s(np.zeros((2, 2))), -np.eye(2), atol=1e-15)
    s = z_to_s(np.array([[37.3j]]))
    assert abs(abs(s[0, 0]) - 1) < 1e-8
    z = np.array([[10 + 5j, 3j], [3j, 20 - 2j]])
    ref = (z - 50 * np.eye(2)) @ np.linalg.inv(z + 50 * np.eye(2))
    np.testing.assert_allclose(z_to_s(z), ref, rtol=1e-12)
    np.testing.assert_allclose(z_to_s(z, 75.0), (z - 75 * np.eye(2)) @ np.linalg.inv(z + 75 * np.eye(2)), rtol=1e-12)


def test_z_to_s_errors():
    with pytest.raises(ValueError):
        z_to_s(np.zeros((2, 3)))
    with pytest.raises(MenError):
        z_to_s(-50.0 * np.eye(2))


def test_two_port_network_physics():
    ports = (Port(1, (7e-3, 10e-3), 1e-3, 2e-3, "y"), Port(2, (13e-3, 10e-3), 1e-3, 2e-3, "y"))
    for stack, lossless in ((STACK, True), (LOSSY, False)):
        m = small_model(ports=ports, stack=stack)
        S = z_to_s(m.solve_at(2.3e9).z_ports)
        assert np.abs(S - S.T).max() < 1e-8
        sv = np.linalg.svd(S, compute_uv=False)
        if lossless:
            np.testing.assert_allclose(S.conj().T @ S, np.eye(2), atol=1e-6)
        else:
            assert sv.max() <= 1 + 1e-9 and sv.min() < 1 - 1e-6


# ----------------------------------------------------------------------- cascade


def random_disc(rng, n_ports, n_acc):
    n = n_ports + n_acc
    R = rng.normal(size=(n, n))
    X = rng.normal(size=(n, n))
    Z = (R @ R.T + n * np.eye(n)) + 1j * (X + X.T)
    return GeneralizedZ(Z, n_ports)


def line_y(sec):
    gl = sec.gamma * sec.length
    return sec.yc, 1 / np.tanh(gl), 1 / np.sinh(gl)


def test_cascade_single_is_identity(rng):
    d = random_disc(rng, 1, 2)
    assert cascade([d], []) is d


def test_cascade_nodal_oracle(rng):
    d1, d2 = random_disc(rng, 1, 1), random_disc(rng, 1, 1)
    sec = tl_section(enumerate_modes(BOX, 1), SUBSTRATE, 3e-3, 2.5e9)
    Zc = cascade([d1, d2], [sec]).Z  # terminals: p1, p2, acc(first), acc(last)
    yc, cth, csh = line_y(sec)
    # nodal admittance over (p1, a1, p2, a2)
    Y = sla.block_diag(np.linalg.inv(d1.Z), np.linalg.inv(d2.Z))
    Y[np.ix_([1, 3], [1, 3])] += yc[0] * np.array([[cth[0], -csh[0]], [-csh[0], cth[0]]])
    Zref = np.linalg.inv(Y)[np.ix_([0, 2, 1, 3], [0, 2, 1, 3])]
    assert rel(Zc, Zref) < 1e-8


def test_cascade_abcd_chain_oracle(rng):
    d1, d2 = random_disc(rng, 1, 1), random_disc(rng, 1, 1)
    sec = tl_section(enumerate_modes(BOX, 1), Layer(4.0, 2e-3, 0.01), 5e-3, 3e9)
    Zc = cascade([d1, d2], [sec])
    # with ports open each discontinuity is a shunt impedance Z_aa at its node
    shunt = lambda z: np.array([[1, 0], [1 / z, 1]])
    gl = sec.gamma[0] * sec.length
    line = np.array([[np.cosh(gl), np.sinh(gl) / sec.yc[0]], [sec.yc[0] * np.sinh(gl), np.cosh(gl)]])
    A, B, Cc, D = (shunt(d1.Z[1, 1]) @ line @ shunt(d2.Z[1, 1])).ravel()
    z_chain = np.array([[A / Cc, (A * D - B * Cc) / Cc], [1 / Cc, D / Cc]])
    assert rel(Zc.zaa, z_chain) < 1e-8


def test_cascade_three_discs_two_modes(rng):
    discs = [random_disc(rng, 1, 2) for _ in range(3)]
    modes = enumerate_modes(BOX, 2)
    secs = [tl_section(modes, SUBSTRATE, 1e-3, 2e9), tl_section(modes, AIR_COVER, 4e-3, 2e9)]
    Zc = cascade(discs, secs).Z
    # nodal oracle: terminals (p_k, a_k0, a_k1) per disc
    Y = sla.block_diag(*[np.linalg.inv(d.Z) for d in discs]).astype(complex)
    for k, sec in enumerate(secs):
        yc, cth, csh = line_y(sec)
        for n in range(2):
            i, j = 3 * k + 1 + n, 3 * (k + 1) + 1 + n
            Y[np.ix_([i, j], [i, j])] += yc[n] * np.array([[cth[n], -csh[n]], [-csh[n], cth[n]]])
    order = [0, 3, 6, 1, 2, 7, 8]
    Zfull = np.linalg.inv(Y)
    Zref = Zfull[np.ix_(order, order)]
    assert rel(Zc, Zref) < 1e-8
    assert np.abs(Zc - Zc.T).max() < 1e-10 * np.abs(Zc).max()


def test_cascade_zero_length_is_node_merge(rng):
    d1, d2 = random_disc(rng, 1, 1), random_disc(rng, 1, 1)
    sec = TLSection(0.0, np.array([1.0 + 50j]), np.array([0.02 + 0j]))
    Zc = cascade([d1, d2], [sec]).Z
    Y = sla.block_diag(np.linalg.inv(d1.Z), np.linalg.inv(d2.Z))
    # merge node a2 (index 3) into a1 (index 1)
    P = np.zeros((4, 3))
    P[0, 0] = P[2, 1] = P[1, 2] = P[3, 2] = 1
    Zm = np.linalg.inv(P.T @ Y @ P)  # terminals p1, p2, a
    assert rel(Zc[:3, :3], Zm) < 1e-8
    np.testing.assert_allclose(Zc[:, 2], Zc[:, 3], rtol=1e-10)


def test_cascade_mismatch_rejected(rng):
    d1, d2 = random_disc(rng, 1, 1), random_disc(rng, 1, 2)
    sec = tl_section(enumerate_modes(BOX, 1), SUBSTRATE, 1e-3, 1e9)
    with pytest.raises(ValueError, match="mismatch"):
        cascade([d1, d2], [sec])
    d3 = random_disc(rng, 1, 1)
    with pytest.raises(ValueError, match="mismatch"):
        cascade([d1, d3], [tl_section(enumerate_modes(BOX, 2), SUBSTRATE, 1e-3, 1e9)])
    with pytest.raises(ValueError):
        cascade([d1, d3], [])
    with pytest.raises(ValueError):
        cascade([], [])
