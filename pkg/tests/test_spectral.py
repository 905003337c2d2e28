import numpy as np
import pytest

from sacfem import noise, spectral


@pytest.fixture(scope="module")
def basis64():
    return spectral.build_spectral_basis(64)


def test_mode_ordering(basis64):
    assert basis64.modes[0].tolist() == [1, 1, 1]
    assert basis64.lambdas[0] == pytest.approx(3 * np.pi ** 2)
    # ties broken lexicographically
    assert basis64.modes[1:4].tolist() == [[1, 1, 2], [1, 2, 1], [2, 1, 1]]
    assert np.all(np.diff(basis64.lambdas) >= -1e-12)
    with pytest.raises(ValueError):
        spectral.build_spectral_basis(0)


def test_modes_orthonormal_on_grid(basis64):
    g = 32
    x = (np.arange(g) + 0.5) / g
    xs, ys, zs = np.meshgrid(x, x, x, indexing="ij")
    pts = np.column_stack([xs.ravel(), ys.ravel(), zs.ravel()])
    e = spectral.eval_modes(basis64, pts)
    gram = (e.T @ e) / g ** 3
    assert np.abs(gram - np.eye(64)).max() < 1e-6


def test_heat_apply(basis64):
    rng = np.random.default_rng(0)
    v = spectral.ModalVector(rng.standard_normal(64), basis64)
    out = spectral.heat_apply(basis64, v, 0.0)
    assert np.array_equal(out.coeffs, v.coeffs)

    one = np.zeros(64)
    one[0] = 1.0
    out = spectral.heat_apply(basis64, spectral.ModalVector(one, basis64), 0.1)
    assert out.coeffs[0] == pytest.approx(np.exp(-3 * np.pi ** 2 * 0.1), rel=1e-12)
    assert out.coeffs[0] == pytest.approx(0.0517733, abs=5e-7)

    with pytest.raises(ValueError):
        spectral.heat_apply(basis64, v, -0.1)


def test_heat_smoothing_bound(basis64):
    lam = basis64.lambdas
    for t in (0.01, 0.1, 1.0):
        assert (lam * np.exp(-lam * t)).max() <= 1.0 / (np.e * t) + 1e-12


def test_heat_semigroup_property(basis64):
    rng = np.random.default_rng(1)
    v = spectral.ModalVector(rng.standard_normal(64), basis64)
    a = spectral.heat_apply(basis64, spectral.heat_apply(basis64, v, 0.04), 0.06)
    b = spectral.heat_apply(basis64, v, 0.1)
    assert np.abs(a.coeffs - b.coeffs).max() < 1e-12


def test_convolution_zero_and_constant(basis64):
    g = np.zeros((11, 64))
    out = spectral.convolve_s0(basis64, g, 0.1, 1.0)
    assert np.array_equal(out.coeffs, np.zeros(64))

    g = np.ones((101, 64))
    out = spectral.convolve_s0(basis64, g, 0.01, 1.0)
    lam = basis64.lambdas
    exact = (1.0 - np.exp(-lam)) / lam
    assert np.abs(out.coeffs - exact).max() < 1e-12


def test_convolution_stationary_limit(basis64):
    g = np.ones((201, 64))
    out = spectral.convolve_s0(basis64, g, 0.01, 2.0)
    lam0 = basis64.lambdas[0]
    rel = abs(out.coeffs[0] - 1.0 / lam0) * lam0
    # the analytic deviation exp(-2 lam) ~ 2e-26 sits below float roundoff
    assert rel <= max(np.exp(-2 * lam0), 5e-15)


def test_convolution_rejects_off_grid(basis64):
    g = np.ones((11, 64))
    with pytest.raises(ValueError):
        spectral.convolve_s0(basis64, g, 0.1, 0.55)
    with pytest.raises(ValueError):
        spectral.convolve_s0(basis64, g, 0.1, 1.5)


def _zero_noise(modes=4):
    return noise.build_noise_model(rho=1.5, modes=modes, sigma_kind="zero")


def test_galerkin_zero_equilibrium(basis64):
    nm = _zero_noise()
    inc = noise.sample_increments(0, 50, 4, 1e-3)
    y0 = spectral.ModalVector(np.zeros(64), basis64)
    for scheme in ("semi-implicit", "splitting"):
        traj = spectral.galerkin_path(basis64, y0, nm, inc, 1e-3, scheme=scheme)
        assert np.all(traj.coeffs == 0.0)


def test_galerkin_tracks_linear_flow_at_small_amplitude(basis64):
    # cubic is negligible at amplitude 1e-3; the splitting propagator is
    # exact for the linear part, the rational one needs a smaller step
    nm = _zero_noise()
    lam0 = 3 * np.pi ** 2
    y0 = np.zeros(64)
    y0[0] = 1e-3
    y0 = spectral.ModalVector(y0, basis64)

    inc = noise.sample_increments(0, 100, 4, 1e-3)
    traj = spectral.galerkin_path(basis64, y0, nm, inc, 1e-3, scheme="splitting")
    target = 1e-3 * np.exp((1 - lam0) * 0.1)
    assert traj.coeffs[-1][0] == pytest.approx(target, rel=0.01)

    inc = noise.sample_increments(0, 1000, 4, 1e-4)
    traj = spectral.galerkin_path(basis64, y0, nm, inc, 1e-4, scheme="semi-implicit")
    assert traj.coeffs[-1][0] == pytest.approx(target, rel=0.01)


def test_galerkin_splitting_reproduces_heat_flow(basis64):
    # noise off, cubic off: exact reproduction of heat_apply times e^t
    nm = _zero_noise()
    rng = np.random.default_rng(2)
    y0 = spectral.ModalVector(rng.standard_normal(64) * 0.1, basis64)
    inc = noise.sample_increments(0, 100, 4, 1e-3)
    traj = spectral.galerkin_path(basis64, y0, nm, inc, 1e-3, scheme="splitting",
                                  cubic=False)
    exact = spectral.heat_apply(basis64, y0, 0.1).coeffs * np.exp(0.1)
    rel = np.abs(traj.coeffs[-1] - exact).max() / np.abs(exact).max()
    assert rel < 1e-6


def test_galerkin_cubic_is_alias_free(basis64):
    # a pure mode cubes into (3 sin - sin 3k)/4 per axis; check the
    # coefficient that folds back onto the original mode
    nm = _zero_noise()
    y0 = np.zeros(64)
    y0[0] = 1.0
    tau = 1e-6
    inc = noise.sample_increments(0, 1, 4, tau)
    traj = spectral.galerkin_path(basis64, spectral.ModalVector(y0, basis64),
                                  nm, inc, tau, scheme="semi-implicit")
    # y1 = (y0 + tau (y0 - c3)) / (1 + tau lam): recover c3 from the step
    lam0 = basis64.lambdas[0]
    c3 = (y0[0] * (1 + tau) - traj.coeffs[-1][0] * (1 + tau * lam0)) / tau
    # e_111^3 projects onto e_111 with weight 2^(9/2) (3/4)^3 / 2^(3/2) = 27/8
    assert c3 == pytest.approx(3.375, rel=1e-6)


def test_moment_growth_with_noise(basis64):
    # bounded fourth-moment proxy over a short horizon
    nm = noise.build_noise_model(rho=1.5, modes=16)
    rng = np.random.default_rng(3)
    y0c = np.zeros(64)
    y0c[0] = 0.5
    y0 = spectral.ModalVector(y0c, basis64)
    sups = []
    for j in range(16):
        inc = noise.sample_increments(noise.derive_path_seed(99, j), 50, 16, 1e-2)
        traj = spectral.galerkin_path(basis64, y0, nm, inc, 1e-2, scheme="splitting")
        sups.append(np.max(np.linalg.norm(traj.coeffs, axis=1)))
    start = np.linalg.norm(y0.coeffs)
    assert np.isfinite(sups).all()
    assert max(sups) <= 10.0 * start


def test_exact_ou_matches_heat_without_noise(basis64):
    y0 = spectral.ModalVector(np.ones(64), basis64)
    inc = noise.sample_increments(5, 100, 64, 1e-3)
    traj = spectral.exact_ou_path(basis64, y0, np.zeros(64), inc, 1e-3)
    exact = spectral.heat_apply(basis64, y0, 0.1)
    assert np.abs(traj.coeffs[-1] - exact.coeffs).max() < 1e-12


def test_ou_stationary_variance():
    basis = spectral.build_spectral_basis(4)
    amps = basis.lambdas ** -1.5
    y0 = spectral.ModalVector(np.zeros(4), basis)
    finals = []
    for j in range(1024):
        inc = noise.sample_increments(noise.derive_path_seed(7, j), 40, 4, 0.05)
        traj = spectral.exact_ou_path(basis, y0, amps, inc, 0.05,
                                      sample_stride=40)
        finals.append(traj.coeffs[-1])
    finals = np.array(finals)
    target = amps ** 2 / (2 * basis.lambdas)
    sample = finals.var(axis=0, ddof=1)
    # 3 standard errors of a chi-square variance estimate
    se = target * np.sqrt(2.0 / 1023)
    assert np.all(np.abs(sample - target) <= 3 * se + 1e-18)


def test_euler_ou_strong_order():
    basis = spectral.build_spectral_basis(16)
    amps = basis.lambdas ** -1.5
    y0 = spectral.ModalVector(np.zeros(16), basis)
    errs = []
    taus = (4e-3, 2e-3, 1e-3)
    for tau in taus:
        steps = int(round(0.25 / tau))
        per_path = []
        for j in range(64):
            inc = noise.sample_increments(noise.derive_path_seed(11, j), steps, 16, tau)
            a = spectral.exact_ou_path(basis, y0, amps, inc, tau, sample_stride=steps)
            b = spectral.euler_ou_path(basis, y0, amps, inc, tau, sample_stride=steps)
            per_path.append(np.linalg.norm(a.coeffs[-1] - b.coeffs[-1]))
        errs.append(np.sqrt(np.mean(np.square(per_path))))
    slope = np.polyfit(np.log(taus), np.log(errs), 1)[0]
    assert 0.7 <= slope <= 1.3


def test_euler_ou_rejects_unstable_step():
    basis = spectral.build_spectral_basis(64)
    inc = noise.sample_increments(0, 10, 64, 0.01)
    with pytest.raises(ValueError, match="unstable"):
        spectral.euler_ou_path(basis, spectral.ModalVector(np.zeros(64), basis),
                               np.ones(64), inc, 0.01)
