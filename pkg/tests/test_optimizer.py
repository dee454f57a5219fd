import numpy as np
import pytest

from bnpsens.model import Dataset, ModelSpec
from bnpsens.optimizer import FitResult, initialize, minimize_smooth, optimize
from bnpsens.variational import flatten


# ---------------------------------------------------------------------------
# initialize
# ---------------------------------------------------------------------------

def _three_blobs(rng):
    centers = np.array([[0.0, 0.0], [6.0, 0.0], [0.0, 6.0]])
    pts = np.concatenate([rng.normal(c, 0.3, size=(30, 2)) for c in centers])
    return pts, centers


def test_initialize_recovers_blob_centers():
    rng = np.random.default_rng(9)
    pts, centers = _three_blobs(rng)
    data = Dataset(points=pts)
    model = ModelSpec.for_data(data, K=5, alpha0=1.0)
    eta = initialize(data, model, seed=4)
    for c in centers:
        gaps = np.linalg.norm(eta.means - c, axis=1)
        assert gaps.min() < 0.5


def test_initialize_fewer_points_than_clusters():
    pts = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0], [5.0, 5.0]])
    data = Dataset(points=pts)
    model = ModelSpec.for_data(data, K=6, alpha0=1.0)
    eta = initialize(data, model, seed=0)
    # the four occupied seeds are the four points themselves
    for p in pts:
        assert np.min(np.linalg.norm(eta.means[:4] - p, axis=1)) < 1e-9
    # the rest sit at the prior mean
    np.testing.assert_allclose(eta.means[4:], np.tile(model.niw.prior_mean, (2, 1)),
                               atol=1e-12)


def test_initialize_deterministic():
    rng = np.random.default_rng(10)
    pts, _ = _three_blobs(rng)
    data = Dataset(points=pts)
    model = ModelSpec.for_data(data, K=7, alpha0=2.0)
    a = flatten(initialize(data, model, seed=123))
    b = flatten(initialize(data, model, seed=123))
    assert np.array_equal(a, b)
    c = flatten(initialize(data, model, seed=124))
    assert not np.array_equal(a, c)


def test_initialize_unit_stick_scale():
    rng = np.random.default_rng(11)
    pts, _ = _three_blobs(rng)
    data = Dataset(points=pts)
    eta = initialize(data, ModelSpec.for_data(data, K=4, alpha0=1.0), seed=1)
    np.testing.assert_array_equal(eta.stick_log_scale, np.zeros(3))


# ---------------------------------------------------------------------------
# minimize_smooth on analytic objectives
# ---------------------------------------------------------------------------

def _quadratic(dim, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(dim, dim))
    A = a @ a.T + dim * np.eye(dim)
    b = rng.normal(size=dim)
    vg = lambda x: (0.5 * x @ A @ x - b @ x, A @ x - b)
    return A, b, vg


def test_newton_exact_on_quadratic():
    A, b, vg = _quadratic(8, 0)
    x0 = np.full(8, 5.0)
    x, info = minimize_smooth(vg, lambda x: A, x0, tol=1e-8, lbfgs_maxiter=0)
    assert info["converged"]
    assert info["iterations"] <= 9  # one Newton step suffices; allow slack
    np.testing.assert_allclose(x, np.linalg.solve(A, b), atol=1e-10)
    assert info["hessian_min_eig"] > 0


def test_monotone_trace_on_rosenbrock():
    def vg(x):
        f = (1 - x[0]) ** 2 + 100.0 * (x[1] - x[0] ** 2) ** 2
        g = np.array([-2 * (1 - x[0]) - 400.0 * x[0] * (x[1] - x[0] ** 2),
                      200.0 * (x[1] - x[0] ** 2)])
        return f, g

    def hess(x):
        return np.array([[2.0 + 1200.0 * x[0] ** 2 - 400.0 * x[1], -400.0 * x[0]],
                         [-400.0 * x[0], 200.0]])

    x, info = minimize_smooth(vg, hess, np.array([-1.2, 1.0]), tol=1e-10)
    assert info["converged"]
    np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-8)
    trace = np.asarray(info["trace"])
    assert np.all(np.diff(trace) <= 1e-12)


def test_saddle_escape():
    # x^4/4 - x^2/2 in each coordinate: gradient vanishes at 0 (a saddle of
    # the coupled version); minima at +-1
    def vg(x):
        return float(np.sum(0.25 * x ** 4 - 0.5 * x ** 2)), x ** 3 - x

    def hess(x):
        return np.diag(3.0 * x ** 2 - 1.0)

    x, info = minimize_smooth(vg, hess, np.zeros(3), tol=1e-9, lbfgs_maxiter=200)
    assert info["converged"]
    assert info["n_restarts"] >= 1
    np.testing.assert_allclose(np.abs(x), np.ones(3), atol=1e-8)


def test_exhaustion_reports_unconverged():
    A, b, vg = _quadratic(5, 1)
    x0 = np.full(5, 50.0)
    _, info = minimize_smooth(vg, lambda x: A, x0, tol=1e-12, lbfgs_maxiter=0,
                              max_newton=0)
    assert not info["converged"]


# ---------------------------------------------------------------------------
# optimize on model problems
# ---------------------------------------------------------------------------

def test_blob_fit_converges(blob_fit):
    assert blob_fit.converged
    assert blob_fit.grad_norm <= blob_fit.tol
    assert blob_fit.hessian_min_eig > 0
    assert blob_fit.hessian is not None


def test_blob_fit_monotone_objective(blob_fit):
    trace = np.asarray(blob_fit.objective_trace)
    assert np.all(np.diff(trace) <= 1e-9)


def test_restart_from_optimum_is_fixed_point(blob_problem, blob_fit):
    data, model, asm = blob_problem
    again = optimize(blob_fit.eta_opt, data, model, assembly=asm)
    assert again.converged
    assert again.iterations <= 1
    gap = np.max(np.abs(flatten(again.eta_opt) - flatten(blob_fit.eta_opt)))
    assert gap <= 1e-10


def test_fit_result_invariant_enforced():
    from bnpsens.variational import unflatten

    eta = unflatten(np.zeros(6), 2, 1)
    with pytest.raises(ValueError):
        FitResult(eta_opt=eta, kl_value=0.0, grad_norm=1.0, hessian_min_eig=1.0,
                  iterations=0, converged=True, tol=1e-6)
    with pytest.raises(ValueError):
        FitResult(eta_opt=eta, kl_value=0.0, grad_norm=0.0, hessian_min_eig=-1.0,
                  iterations=0, converged=True, tol=1e-6)
