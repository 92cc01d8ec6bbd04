import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bltrec import fem as F
from bltrec import lm as L
from bltrec import media as md
from bltrec import mesh as M
from bltrec import sources as S
from bltrec.data import add_noise
from bltrec.errors import DomainError, JacobianError, SolverError, ValidationError

from oracles import scalar_lm_intensity

HEART = md.MediaMap.uniform("heart")
OMEGA = S.Domain(3.0, 2)
DISK = S.Family("disk", 2)


@pytest.fixture(scope="module")
def ctx():
    mesh = M.build_disk_mesh(3.0, 0.3, interfaces=(1.0,))
    return F.ForwardContext(mesh, HEART, smoothing=F.INVERSION_SMOOTHING)


@pytest.fixture(scope="module")
def problem(ctx):
    return L.InverseProblem(ctx, DISK, OMEGA)


def test_schedule_values():
    assert L.lambda_schedule(0, 0.7, 0) == 0.5
    assert L.lambda_schedule(2, 0.5, 0) == pytest.approx(1 / (1 + math.e), rel=1e-15)
    assert L.lambda_schedule(2, 0.5, 0) == pytest.approx(0.268941, abs=1e-6)
    assert L.lambda_schedule(10, 0.8, 8) == pytest.approx(1 / (1 + math.exp(14.4)), rel=1e-12)
    assert L.lambda_schedule(10, 0.8, 8) == pytest.approx(5.5e-7, rel=0.02)


def test_schedule_needs_positive_beta():
    with pytest.raises(ValidationError):
        L.lambda_schedule(0, 0.0, 0)


@given(beta=st.floats(0.05, 3), i0=st.integers(0, 10), i=st.integers(0, 30))
def test_schedule_decreasing(beta, i0, i):
    a, b = L.lambda_schedule(i, beta, i0), L.lambda_schedule(i + 1, beta, i0)
    assert 0 < b < a < 1 or (b == a and a < 1e-300)


def test_config_validation():
    with pytest.raises(ValidationError) as e:
        L.LMConfig(beta=-1, max_iter=0, stop_tol=0)
    assert len(e.value.violations) == 3


def test_step_examples():
    assert np.all(L.lm_step(np.eye(3), np.zeros(3), 0.3) == 0)
    f = np.array([1.0, -2.0, 4.0])
    assert np.allclose(L.lm_step(np.eye(3), f, 1.0), f / 2)
    assert L.lm_step([[2.0]], [4.0], 0.5)[0] == pytest.approx(8 / 4.5, rel=1e-15)
    with pytest.raises(ValidationError):
        L.lm_step(np.eye(2), np.ones(2), 0.0)


@given(seed=st.integers(0, 2**32 - 1), lam=st.floats(1e-8, 10))
def test_normal_equation_residual(seed, lam):
    rng = np.random.default_rng(seed)
    G = rng.normal(size=(12, 4))
    f = rng.normal(size=12)
    d = L.lm_step(G, f, lam)
    rhs = G.T @ f
    assert np.linalg.norm((G.T @ G + lam * np.eye(4)) @ d - rhs) <= 1e-12 * np.linalg.norm(rhs)


def test_small_lambda_is_least_squares():
    rng = np.random.default_rng(0)
    G = rng.normal(size=(10, 3))
    f = rng.normal(size=10)
    assert np.allclose(L.lm_step(G, f, 1e-12), np.linalg.pinv(G) @ f, rtol=1e-9)


def test_residual_examples(ctx, problem):
    theta = np.array([0.2, -0.1, 0.8, 1.5])
    data = ctx(problem.field(theta)) * 1.1
    zero = L.residual([0.2, -0.1, 0.8, 0.0], data, problem)
    assert np.array_equal(zero, data)
    r = L.residual(theta, data, problem)
    assert np.allclose(zero - r, 1.5 * ctx(problem.field([0.2, -0.1, 0.8, 1.0])), rtol=1e-10)
    with pytest.raises(ValidationError):
        L.residual([0, 0, -1, 1], data, problem)


def test_fd_jacobian_columns(ctx, problem):
    theta = np.array([0.0, 0.0, 1.0, 1.0])
    G = L.fd_jacobian(theta, problem, L.LMConfig(beta=0.7))
    assert np.allclose(G[:, 3], ctx(S.single(S.Ball((0, 0), 1), 1.0)), rtol=1e-9)
    G2 = L.fd_jacobian(theta, problem, L.LMConfig(beta=0.7, fd_rel=2e-3))
    assert np.allclose(G2[:, 3], G[:, 3], rtol=1e-8)
    # radius column of a centred disk is radially symmetric
    assert np.ptp(G[:, 2]) <= 0.01 * np.mean(G[:, 2])


def test_fd_flips_to_backward(ctx):
    # a disk touching the containment limit cannot grow; its radius column must flip
    prob = L.InverseProblem(ctx, DISK, OMEGA)
    theta = np.array([0.0, 0.0, 2.9, 1.0])
    assert prob.admissible(theta)
    G = L.fd_jacobian(theta, prob, L.LMConfig(beta=0.7), free=np.array([0, 0, 1, 0], bool))
    assert G.shape == (200, 1) and np.all(np.isfinite(G))
    assert G[:, 0].min() > 0


def test_fd_both_directions_invalid(ctx):
    prob = L.InverseProblem(ctx, DISK, OMEGA)
    cfg = L.LMConfig(beta=0.7, fd_geom=5.0)
    with pytest.raises(JacobianError, match="'cx'"):
        L.fd_jacobian([0.0, 0.0, 1.0, 1.0], prob, cfg)


def test_relative_error_examples():
    q = S.single(S.Ball((0.2, 0.1), 0.7), 1.3)
    assert L.relative_error(q, q, OMEGA, spacing=0.02) == 0
    assert L.relative_error(None, q, OMEGA, spacing=0.02) == pytest.approx(1.0)
    assert L.relative_error(q.scaled(2), q, OMEGA, spacing=0.02) == pytest.approx(1.0, rel=1e-14)
    with pytest.raises(DomainError):
        L.relative_error(q, q.scaled(0), OMEGA, spacing=0.05)


def test_relative_error_of_shifted_disks():
    # |A xor B| / |A| for unit disks offset by d: 2 - 2 * lens_area / pi
    d = 0.3
    lens = 2 * math.acos(d / 2) - d / 2 * math.sqrt(4 - d * d)
    exact = math.sqrt(2 - 2 * lens / math.pi)
    got = L.relative_error(S.single(S.Ball((d, 0), 1), 1.0), S.single(S.Ball((0, 0), 1), 1.0),
                           OMEGA, spacing=0.005)
    assert got == pytest.approx(exact, rel=5e-3)


def test_noiseless_start_at_truth_stops_after_one_step(ctx, problem):
    theta = np.array([0.3, -0.2, 0.9, 1.2])
    data = ctx(problem.field(theta))
    tr = L.run(theta, L.LMConfig(beta=0.7), data, problem, q_true=problem.field(theta))
    assert tr.termination == "converged" and tr.iterations == 1
    assert tr.E[1] <= 1e-2 and tr.e_r[0] == 0


def test_intensity_only_matches_dense_oracle(ctx, problem):
    shape = [0.4, 0.3, 0.8]
    g = ctx(problem.field(shape + [1.0]))
    data = add_noise(2.3 * g, 0.01, seed=5)
    cfg = L.LMConfig(beta=0.7, stop_tol=1e-9)
    free = np.array([0, 0, 0, 1], bool)
    tr = L.run(shape + [0.5], cfg, data, problem, free=free)
    expect = scalar_lm_intensity(g, data.noisy, 0.5, 0.7, 0, 20, 1e-9)
    assert abs(tr.final_theta[3] - expect) <= 1e-6
    assert np.array_equal(tr.final_theta[:3], shape)


def test_small_reconstruction_and_trace(ctx, problem, tmp_path):
    truth = np.array([0.5, -0.3, 0.9, 1.0])
    data = add_noise(ctx(problem.field(truth)), 0.01, seed=1)
    tr = L.run([0.2, 0.1, 0.6, 0.8], L.LMConfig(beta=0.7), data, problem, q_true=problem.field(truth))
    assert tr.residual_norm[-1] <= tr.residual_norm[0]
    assert all(a > b for a, b in zip(tr.lam, tr.lam[1:]))
    assert np.linalg.norm(tr.final_theta - truth) < 0.1
    tr.to_csv(tmp_path / "t.csv")
    head = (tmp_path / "t.csv").read_text().splitlines()[0]
    assert head == "iter,lambda,residual_norm,E_i,e_r,cx,cy,r,phi"
    tr.write_summary(tmp_path / "s.json", {"beta": 0.7})
    assert '"termination"' in (tmp_path / "s.json").read_text()


def test_inadmissible_start(problem):
    with pytest.raises(ValidationError, match="initial"):
        L.run([0, 0, -0.5, 1], L.LMConfig(beta=0.7), np.zeros(200), problem)


def test_forward_failure_marks_trace(ctx):
    calls = []

    def flaky(q):
        calls.append(1)
        if len(calls) > 3:
            raise SolverError("no convergence", residual=1.0)
        return ctx(q)

    prob = L.InverseProblem(flaky, DISK, OMEGA)
    tr = L.run([0.1, 0.1, 0.8, 1.0], L.LMConfig(beta=0.7), np.ones(200), prob)
    assert tr.termination == "forward_failure" and "iteration 0" in tr.message
    assert len(tr.theta) == 1


def test_invalid_step_marker(ctx):
    # the data asks for a radius far beyond the containment limit
    prob = L.InverseProblem(ctx, DISK, OMEGA)
    target = 50 * ctx(S.single(S.Ball((0, 0), 2.8), 1.0))
    tr = L.run([0, 0, 2.85, 1.0], L.LMConfig(beta=0.7, max_halvings=0), target, prob,
               free=np.array([0, 0, 1, 0], bool))
    assert tr.termination == "invalid_step"
