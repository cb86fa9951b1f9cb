import cmath
import warnings

import numpy as np
import pytest

from carleman_lab.operator1d import (
    ConvergenceError,
    Grid,
    Potential,
    bounded_noise,
    cap_profile,
    discretize,
    m_weight,
    potential_from_config,
    potential_from_csv,
    solution_to_csv,
    solve,
    square_well,
    step_stack,
    weighted_norm,
    zero_potential,
)


def free_green(x, h, z):
    # outgoing solution of -h^2 G'' - z G = delta
    return 1j * np.exp(1j * cmath.sqrt(z) * np.abs(x) / h) / (2 * h * cmath.sqrt(z))


def hat_convolution(x, h, z, a):
    # u(x) = int G(x - y) f(y) dy for the unit-mass hat f of half-width a
    t, wt = np.polynomial.legendre.leggauss(40)
    out = np.zeros(x.size, complex)
    for i, xi in enumerate(x):
        cuts = sorted({-a, 0.0, a, min(max(xi, -a), a)})
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            if hi <= lo:
                continue
            y = 0.5 * (hi + lo) + 0.5 * (hi - lo) * t
            f = np.maximum(0.0, 1.0 - np.abs(y) / a) / a
            out[i] += 0.5 * (hi - lo) * np.sum(wt * free_green(xi - y, h, z) * f)
    return out


def test_solve_matches_free_green_function():
    h, E, eps, a = 0.1, 1.0, 0.1, 0.2
    g = Grid.with_spacing(-30.0, 30.0, h / 100)
    op = discretize(zero_potential(), h, E, eps, g, "dirichlet")
    f = np.maximum(0.0, 1.0 - np.abs(g.x) / a) / a
    u = solve(op, f)
    sel = np.abs(g.x) <= 5.0
    xs = g.x[sel][::25]
    ref = hat_convolution(xs, h, E + 1j * eps, a)
    err = np.max(np.abs(u[sel][::25] - ref)) / np.max(np.abs(ref))
    assert err <= 1e-3


def test_solve_zero_and_determinism():
    g = Grid(-5.0, 5.0, 400)
    op = discretize(square_well(2.0, 1.0), 0.3, 1.0, 0.01, g)
    assert np.all(solve(op, np.zeros(g.count)) == 0)
    rng = np.random.default_rng(3)
    f = rng.standard_normal(g.count)
    u1 = solve(op, f)
    u2 = solve(discretize(square_well(2.0, 1.0), 0.3, 1.0, 0.01, g), f)
    assert np.array_equal(u1, u2)


def test_adjoint_solve():
    g = Grid(-5.0, 5.0, 100)
    op = discretize(square_well(2.0, 1.0), 0.5, 1.0, 0.05, g)
    A = op.toarray()
    rng = np.random.default_rng(0)
    f = rng.standard_normal(g.count) + 1j * rng.standard_normal(g.count)
    np.testing.assert_allclose(A.conj().T @ op.solve(f, trans="C"), f, atol=1e-10)
    np.testing.assert_allclose(op.rmatvec(f), A.conj().T @ f, atol=1e-12)


def test_free_norm_is_one_over_epsilon():
    g = Grid.with_spacing(-50.0, 50.0, 0.01)
    op = discretize(zero_potential(), 0.1, 1.0, 0.1, g, "dirichlet")
    assert weighted_norm(op).norm == pytest.approx(10.0, rel=1e-2)


def test_norm_matches_dense_svd():
    g = Grid(-10.0, 10.0, 200)
    op = discretize(square_well(4.0, 1.0), 1.0, 1.0, 0.1, g)
    ref = np.linalg.svd(np.linalg.inv(op.toarray()), compute_uv=False)[0]
    assert weighted_norm(op).norm == pytest.approx(ref, rel=1e-6)
    w = 1.0 / m_weight(np.abs(g.x), 0.5)
    ref_w = np.linalg.svd(w[:, None] * np.linalg.inv(op.toarray()) * w, compute_uv=False)[0]
    assert weighted_norm(op, w).norm == pytest.approx(ref_w, rel=1e-6)


def test_weighted_norm_below_unweighted():
    g = Grid.with_spacing(-30.0, 30.0, 0.02)
    op = discretize(square_well(4.0, 1.0), 0.2, 1.0, 1e-2, g)
    w = 1.0 / m_weight(np.abs(g.x), 0.5)
    assert weighted_norm(op, w).norm <= weighted_norm(op).norm


def test_norm_nonincreasing_in_epsilon():
    g = Grid.with_spacing(-30.0, 30.0, 0.02)
    w = 1.0 / m_weight(np.abs(g.x), 0.5)
    norms = [weighted_norm(discretize(square_well(4.0, 1.0), 0.2, 1.0, e, g), w).norm
             for e in (1e-3, 1e-2, 1e-1, 0.5)]
    assert all(a >= b for a, b in zip(norms, norms[1:]))


def test_real_part_symmetric():
    g = Grid(-5.0, 5.0, 50)
    A = discretize(bounded_noise(1.0, 2.0, 8, 1), 0.5, 1.0, 0.1, g).toarray()
    np.testing.assert_array_equal(A.real, A.real.T)
    assert np.all(A.imag.diagonal() <= 0)


def test_convergence_error_reports_estimate():
    g = Grid(-10.0, 10.0, 200)
    op = discretize(zero_potential(), 0.5, 1.0, 0.01, g)
    with pytest.raises(ConvergenceError) as ei:
        weighted_norm(op, maxiter=2, block=1)
    assert ei.value.estimate > 0


def test_rejects_bad_inputs():
    g = Grid(-5.0, 5.0, 50)
    with pytest.raises(ValueError):
        discretize(zero_potential(), 0.5, 1.0, 0.0, g)
    with pytest.raises(ValueError):
        discretize(zero_potential(), 0.5, 1.0, 0.1, g, boundary="pml")
    with pytest.raises(ValueError):
        weighted_norm(discretize(zero_potential(), 0.5, 1.0, 0.1, g), -np.ones(50))


def test_dirichlet_warns_on_small_box():
    g = Grid(-5.0, 5.0, 500)
    with pytest.warns(RuntimeWarning, match="decay length"):
        discretize(zero_potential(), 0.1, 1.0, 1e-3, g, "dirichlet")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        discretize(zero_potential(), 0.1, 1.0, 1e-3, g, "cap")


def test_cap_profile():
    x = np.array([0.0, 10.0, 15.0, 20.0])
    np.testing.assert_allclose(cap_profile(x, 10.0, 20.0, 2.0), [0, 0, 2 * 0.5**4, 2.0])


def test_cell_average_integrates_potential():
    V = square_well(3.0, 1.0)
    g = Grid(-3.0, 3.0, 997)
    dx = g.spacing
    assert np.sum(V.cell_average(g.x, dx)) * dx == pytest.approx(6.0, rel=1e-12)


def test_potential_constructors(tmp_path):
    V = step_stack([-1.0, 0.0, 2.0], [1.0, -2.0])
    assert V.support_radius == 2.0 and V.sup_norm == 2.0
    np.testing.assert_array_equal(V(np.array([-0.5, 0.5, 3.0])), [1.0, -2.0, 0.0])
    N1, N2 = bounded_noise(1.0, 0.5, 10, 7), bounded_noise(1.0, 0.5, 10, 7)
    assert N1.values == N2.values and N1.sup_norm <= 0.5
    path = tmp_path / "v.csv"
    path.write_text("x,V\n-1,1\n0,-2\n2,0\n")
    assert potential_from_csv(path).values == V.values
    path.write_text("x,V\n-1,1\n0,-2\n2,1\n")
    with pytest.raises(ValueError, match="V = 0"):
        potential_from_csv(path)
    assert potential_from_config({"kind": "square_well", "depth": 1, "radius": 2}).support_radius == 2
    with pytest.raises(ValueError):
        potential_from_config({"kind": "gaussian"})
    with pytest.raises(ValueError):
        Potential("bad", (1.0, 0.0), (1.0,))


def test_solution_csv(tmp_path):
    g = Grid(-1.0, 1.0, 3)
    solution_to_csv(g, np.array([1 + 2j, 0, -1j]), tmp_path / "u.csv")
    lines = (tmp_path / "u.csv").read_text().splitlines()
    assert lines[0] == "x,re_u,im_u" and lines[1] == "-0.5,1,2"


def test_grid():
    g = Grid.with_spacing(0.0, 1.0, 0.1)
    assert g.count == 9 and g.spacing == pytest.approx(0.1)
    with pytest.raises(ValueError):
        Grid(1.0, 0.0, 4)
