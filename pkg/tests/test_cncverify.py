import numpy as np
import pytest

from saddlelab.cncverify import (
    CncSettings,
    QuadraticSurrogate,
    estimate_gamma,
    projection_second_moment,
    sam_gradient,
    sam_projection_moment,
    sample_batches,
    save_theorem1_report,
    theorem1_report,
)
from saddlelab.datagen import ClassGeometry, ImbalanceProfile, generate
from saddlelab.errors import ParameterError
from saddlelab.linalg import SeededRng
from saddlelab.losses import LossSpec
from saddlelab.model import Batch, MlpSpec, init_params, loss_grad
from saddlelab.spectral import SpectralSettings

A_SADDLE = np.diag([2.0, -1.0])
V_MIN = np.array([0.0, 1.0])  # eigenvector of lambda_min = -1


def small_problem(seed=40):
    profile = ImbalanceProfile("longtail", 2, 60, 6.0)
    geom = ClassGeometry(input_dim=4, class_mean_radius=2.0, within_class_std=1.0)
    ds = generate(profile, geom, SeededRng(seed).child("datagen"))
    spec = MlpSpec((4, 6, 2))
    w = init_params(spec, SeededRng(seed).child("init"))
    loss = LossSpec(variant="ce", class_counts=ds.class_counts)
    return ds, spec, w, loss


def test_full_batch_gamma_is_deterministic():
    ds, spec, w, loss = small_problem()
    _, g = loss_grad(spec, w, Batch(ds.features, ds.labels), loss)
    v = g / np.linalg.norm(g)
    gamma, se = estimate_gamma(spec, w, v, ds, loss, batch_size=len(ds),
                               num_batches=5, rng=SeededRng(41).child("b"))
    assert gamma == pytest.approx(float(v @ g) ** 2, rel=1e-12)
    assert se == 0.0


def test_gamma_with_isotropic_noise_matches_closed_form():
    # g_z = g + xi, xi ~ N(0, sigma^2 I): E<v, g_z>^2 = <v, g>^2 + sigma^2
    rng = SeededRng(42).child("noise")
    g = np.array([1.0, 2.0, -0.5, 0.25])
    v = np.array([0.5, -0.5, 0.5, 0.5])
    sigma = 0.3
    grads = [g + rng.normal(size=4, std=sigma) for _ in range(10_000)]
    mean, se = projection_second_moment(grads, v)
    expected = float(v @ g) ** 2 + sigma ** 2
    assert abs(mean - expected) <= 3 * se


def test_orthogonal_deterministic_gradient_gives_zero():
    g = np.array([1.0, 0.0])
    v = np.array([0.0, 1.0])
    mean, se = projection_second_moment([g, g, g], v)
    assert mean == 0.0 and se == 0.0


def test_gamma_invariant_under_sign_flip_of_direction():
    rng = SeededRng(43).child("noise")
    grads = [rng.normal(size=3) for _ in range(50)]
    v = np.array([1.0, 0.0, 0.0])
    assert projection_second_moment(grads, v) == projection_second_moment(grads, -v)


def test_unit_norm_precondition():
    with pytest.raises(ParameterError):
        projection_second_moment([np.ones(2), np.ones(2)], np.array([1.0, 1.0]))


def test_sam_gradient_quadratic_closed_form():
    # w=(1,1): g = (2,-1); eps = rho*g; g_sam = A(w+eps)+0 = (I+rho*A)g
    quad = QuadraticSurrogate(A_SADDLE)
    fn = quad.grad_fn_for_noise(np.zeros(2))
    g_sam = sam_gradient(fn, np.array([1.0, 1.0]), rho=0.5, mode="unnormalized")
    assert np.array_equal(g_sam, np.array([4.0, -0.5]))
    proj = float(V_MIN @ g_sam)
    assert proj == -0.5
    assert proj ** 2 == 0.25  # = (1 + 0.5*(-1))^2 * <v, Aw>^2


def test_noisy_quadratic_ratio_exact_per_draw():
    # constant Hessian: <v, g_sam> = (1 + rho*lambda_min) <v, g_z> pointwise,
    # so the paired ratio equals the predicted factor exactly
    quad = QuadraticSurrogate(A_SADDLE, noise_std=0.4)
    w = np.array([1.0, 1.0])
    rng = SeededRng(44).child("noise")
    for rho in (0.0, 0.25, 0.5):
        plain, perturbed = [], []
        for _ in range(200):
            xi = quad.draw_noise(rng)
            fn = quad.grad_fn_for_noise(xi)
            _, g = fn(w)
            plain.append(g)
            perturbed.append(sam_gradient(fn, w, rho, "unnormalized"))
        gamma, _ = projection_second_moment(plain, V_MIN)
        moment, _ = projection_second_moment(perturbed, V_MIN)
        assert moment / gamma == pytest.approx((1 - rho) ** 2, rel=1e-12)


def test_gamma_closed_form_on_noisy_quadratic():
    quad = QuadraticSurrogate(A_SADDLE, noise_std=0.2)
    w = np.array([1.0, 1.0])
    rng = SeededRng(45).child("noise")
    grads = []
    for _ in range(10_000):
        fn = quad.grad_fn_for_noise(quad.draw_noise(rng))
        grads.append(fn(w)[1])
    gamma, se = projection_second_moment(grads, V_MIN)
    expected = float(V_MIN @ (A_SADDLE @ w)) ** 2 + 0.2 ** 2
    assert abs(gamma - expected) <= 3 * se


def test_factor_zero_degeneracy():
    # lambda_min = -1, rho = 1: (1 + rho*lambda_min) = 0 kills the projection
    quad = QuadraticSurrogate(A_SADDLE)
    fn = quad.grad_fn_for_noise(np.zeros(2))
    g_sam = sam_gradient(fn, np.array([1.0, 1.0]), rho=1.0, mode="unnormalized")
    assert float(V_MIN @ g_sam) == 0.0


def test_sam_moment_rho_zero_equals_gamma():
    ds, spec, w, loss = small_problem(46)
    _, g = loss_grad(spec, w, Batch(ds.features, ds.labels), loss)
    v = g / np.linalg.norm(g)
    batches = sample_batches(ds, 16, 20, SeededRng(47).child("batches"))
    gamma = estimate_gamma(spec, w, v, ds, loss, 16, 20, SeededRng(0), batches=batches)
    moment = sam_projection_moment(spec, w, v, ds, loss, 0.0, "unnormalized",
                                   16, 20, SeededRng(0), batches=batches)
    assert moment == gamma


def test_theorem1_report_rows():
    ds, spec, w, loss = small_problem(48)
    settings = CncSettings(batch_size=16, num_batches=24,
                           spectral=SpectralSettings(lanczos_iters=30, num_probes=2,
                                                     residual_tol=1e-7))
    rows = theorem1_report(spec, w, ds, loss, [0.0, 0.1], settings,
                           SeededRng(49).child("cnc"))
    assert [r.rho for r in rows] == [0.0, 0.1]
    r0, r1 = rows
    assert r0.predicted_factor == pytest.approx((1 + 0.0 * r0.lambda_min) ** 2)
    assert r1.predicted_factor == pytest.approx((1 + 0.1 * r1.lambda_min) ** 2)
    # paired batches make the rho = 0 ratio exactly 1
    assert not r0.cnc_violation
    assert r0.measured_ratio == pytest.approx(1.0, abs=1e-12)
    assert r0.taylor_residual == 0.0
    assert r1.taylor_residual >= 0.0
    # lambda_min shared across rows (computed once)
    assert r0.lambda_min == r1.lambda_min


def test_taylor_residual_shrinks_with_rho():
    ds, spec, w, loss = small_problem(50)
    settings_small = CncSettings(batch_size=len(ds), num_batches=2,
                                 spectral=SpectralSettings(lanczos_iters=20, num_probes=2))
    rows = theorem1_report(spec, w, ds, loss, [1e-4, 1e-1], settings_small,
                           SeededRng(51).child("cnc"))
    assert rows[0].taylor_residual < rows[1].taylor_residual


def test_report_export(tmp_path):
    ds, spec, w, loss = small_problem(52)
    settings = CncSettings(batch_size=16, num_batches=8,
                           spectral=SpectralSettings(lanczos_iters=20, num_probes=2))
    rows = theorem1_report(spec, w, ds, loss, [0.0], settings, SeededRng(53).child("c"))
    csv_path = tmp_path / "cnc.csv"
    json_path = tmp_path / "cnc.json"
    save_theorem1_report(rows, csv_path, json_path, settings, meta={"seed": 53})
    text = csv_path.read_text().splitlines()
    assert text[0].startswith("rho,lambda_min,gamma_hat")
    assert len(text) == 2
    import json
    payload = json.loads(json_path.read_text())
    assert payload["seed"] == 53
    assert payload["rows"][0]["rho"] == 0.0


def test_settings_validation():
    with pytest.raises(ParameterError):
        CncSettings(num_batches=1)
    with pytest.raises(ParameterError):
        CncSettings(mode="sideways")
