import numpy as np
import pytest

from sacfem import fem, mesh, noise, spectral


@pytest.fixture(scope="module")
def model64():
    return noise.build_noise_model(rho=1.5, modes=64)


def test_cf_estimate_single_mode_closed_form():
    nm = noise.build_noise_model(rho=1.5, modes=1)
    lam1 = 3 * np.pi ** 2
    assert nm.c_f_estimate == pytest.approx(lam1 ** -3 * 8 * (1 + lam1), rel=1e-14)


def test_cf_estimate_truncation_tail():
    c100 = noise.build_noise_model(rho=1.5, modes=100).c_f_estimate
    c200 = noise.build_noise_model(rho=1.5, modes=200).c_f_estimate
    assert c200 > c100
    assert (c200 - c100) / c100 <= 0.10


def test_rho_threshold_rejected():
    with pytest.raises(ValueError, match="diverges"):
        noise.build_noise_model(rho=1.0)
    with pytest.raises(ValueError):
        noise.build_noise_model(rho=1.5, modes=0)
    with pytest.raises(ValueError):
        noise.build_noise_model(sigma_kind="bogus")


def test_increment_determinism_and_statistics():
    a = noise.sample_increments(42, 10_000, 4, 0.01)
    b = noise.sample_increments(42, 10_000, 4, 0.01)
    assert np.array_equal(a.table, b.table)
    c = noise.sample_increments(43, 10_000, 4, 0.01)
    assert not np.array_equal(a.table, c.table)
    tau, k = 0.01, 10_000
    means = a.table.mean(axis=0)
    assert np.all(np.abs(means) <= 4 * np.sqrt(tau / k))
    variances = a.table.var(axis=0, ddof=1)
    assert np.all(variances >= 0.94 * tau) and np.all(variances <= 1.06 * tau)


def test_increment_truncation_extension():
    small = noise.sample_increments(9, 50, 32, 1e-3)
    big = noise.sample_increments(9, 50, 64, 1e-3)
    assert np.array_equal(small.table, big.table[:, :32])


def test_increment_file_roundtrip(tmp_path):
    inc = noise.sample_increments(1234, 20, 8, 2.5e-4)
    path = tmp_path / "increments.bin"
    noise.save_increments(inc, path)
    back = noise.load_increments(path)
    assert back.seed == 1234 and back.steps == 20 and back.modes == 8
    assert back.dt == 2.5e-4
    assert np.array_equal(inc.table, back.table)
    # header is 4 little-endian 64-bit fields
    assert path.stat().st_size == 32 + 20 * 8 * 8


def test_path_seed_derivation():
    seeds = {noise.derive_path_seed(7, j) for j in range(1000)}
    assert len(seeds) == 1000
    assert noise.derive_path_seed(7, 3) == noise.derive_path_seed(7, 3)
    assert noise.derive_path_seed(8, 3) != noise.derive_path_seed(7, 3)


def test_diffusion_load_zero_sigma(space4, model64):
    nm = noise.build_noise_model(rho=1.5, modes=64, sigma_kind="zero")
    assert nm.c_f_estimate == model64.c_f_estimate
    y = fem.StateVector(np.ones(space4.dof_count), space4)
    g = noise.diffusion_load(space4, nm, y, np.ones(64))
    assert np.array_equal(g, np.zeros(space4.dof_count))


def test_diffusion_load_single_mode_against_direct_quadrature(space4):
    nm = noise.build_noise_model(rho=1.5, modes=1)
    y = fem.StateVector(np.zeros(space4.dof_count), space4)
    dw = np.array([0.37])
    g = noise.diffusion_load(space4, nm, y, dw)

    def e1(p):
        return 2 ** 1.5 * np.sin(np.pi * p[:, 0]) * np.sin(np.pi * p[:, 1]) * np.sin(np.pi * p[:, 2])

    qv = e1(space4.qpoints.reshape(-1, 3)).reshape(space4.qpoints.shape[:2])
    direct = nm.amplitudes[0] * 0.37 * fem.load_vector(space4, qv)
    assert np.abs(g - direct).max() < 1e-10


def test_diffusion_load_homogeneous_in_increments(space4, model64):
    rng = np.random.default_rng(0)
    y = fem.StateVector(rng.standard_normal(space4.dof_count), space4)
    dw = rng.standard_normal(64)
    g1 = noise.diffusion_load(space4, model64, y, dw)
    g3 = noise.diffusion_load(space4, model64, y, 3.0 * dw)
    assert np.abs(g3 - 3.0 * g1).max() < 1e-14


def test_hs_norm_zero_state(space8, model64):
    y = fem.StateVector(np.zeros(space8.dof_count), space8)
    analytic = np.sqrt(np.sum(model64.amplitudes ** 2))
    assert noise.hs_norm_F(model64, y) == pytest.approx(analytic, rel=1e-10)
    with pytest.raises(noise.UnsupportedExponent):
        noise.hs_norm_F(model64, y, q=4)


def test_hs_norm_truncation_tail_identity(space8):
    full = noise.build_noise_model(rho=1.5, modes=64)
    half = noise.build_noise_model(rho=1.5, modes=32)
    y = fem.StateVector(np.zeros(space8.dof_count), space8)
    a = noise.hs_norm_F(full, y, space8)
    b = noise.hs_norm_F(half, y, space8)
    tail = np.sum(full.amplitudes[32:] ** 2)
    assert a ** 2 - b ** 2 == pytest.approx(tail, rel=1e-10)


def test_hs_norm_growth_and_lipschitz(space8, model64):
    rng = np.random.default_rng(1)
    sqrt_cf = np.sqrt(model64.c_f_estimate)
    lip = np.sqrt(np.sum(8.0 * model64.amplitudes ** 2))
    for _ in range(100):
        scale = 10.0 ** rng.uniform(-1, 1)
        u = fem.StateVector(scale * rng.standard_normal(space8.dof_count), space8)
        v = fem.StateVector(scale * rng.standard_normal(space8.dof_count), space8)
        assert noise.hs_norm_F(model64, u) <= sqrt_cf * (1.0 + fem.lq_norm(space8, u, 2))
        du = fem.StateVector(u.coeffs - v.coeffs, space8)
        assert noise.hs_norm_F_diff(model64, u, v) <= 1.05 * lip * fem.lq_norm(space8, du, 2)


def test_hs_norm_modal(model64):
    basis = spectral.build_spectral_basis(8)
    y = spectral.ModalVector(np.zeros(8), basis)
    analytic = np.sqrt(np.sum(model64.amplitudes ** 2))
    assert noise.hs_norm_F(model64, y) == pytest.approx(analytic, rel=1e-3)


def test_coupling_same_field_across_nested_meshes(model64):
    coarse_mesh = mesh.build_box_mesh(4)
    fine_mesh = mesh.refine_red(coarse_mesh)
    coarse = fem.assemble(coarse_mesh)
    fine = fem.assemble(fine_mesh)
    rng = np.random.default_rng(2)
    y = fem.StateVector(rng.standard_normal(coarse.dof_count), coarse)
    lifted = fem.prolongate_state(coarse, fine, y)
    dw = rng.standard_normal(64)

    shared = coarse_mesh.vertices
    field = noise.noise_field(model64, shared, dw)
    yc = fem.full_values(coarse, y)
    yf = fem.full_values(fine, lifted)[: coarse_mesh.n_vertices]
    a = field * noise.sigma_values("sqrt1py2", yc)
    b = field * noise.sigma_values("sqrt1py2", yf)
    assert np.abs(a - b).max() < 1e-12


def test_mode_table_single_precision_consistency(space4, model64):
    t64 = noise.mode_table(space4, model64)
    t32 = noise.mode_table_f32(space4, model64)
    assert t32.dtype == np.float32
    assert np.abs(t64 - t32).max() < 1e-6


def test_boundary_condition_and_cosine_violation(model64, mesh4):
    pts = mesh4.vertices[mesh4.boundary_mask]
    assert noise.boundary_condition_residual(model64, pts).max() < 1e-28
    violating = noise.build_noise_model(rho=1.5, modes=64, field_kind="cosine")
    assert noise.boundary_condition_residual(violating, pts).max() > 1e-6


def test_sigma_profiles():
    y = np.linspace(-3, 3, 11)
    assert np.allclose(noise.sigma_values("sqrt1py2", y), np.sqrt(1 + y * y))
    assert np.allclose(noise.sigma_values("tanh", y), np.tanh(y))
    assert np.all(noise.sigma_values("zero", y) == 0)
    assert np.all(noise.sigma_values("one", y) == 1)
    # 1-Lipschitz profiles
    for kind in ("sqrt1py2", "tanh"):
        vals = noise.sigma_values(kind, y)
        assert np.abs(np.diff(vals) / np.diff(y)).max() <= 1.0 + 1e-12
