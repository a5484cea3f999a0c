import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from stemos.alignment import (CameraIntrinsics, MapProjection, map_jacobian, map_residuals, objective_gradient,
                              perturb, pnp_jacobian, random_transform, render, reprojection_residual,
                              solve_map_alignment, solve_pnp, solve_rigid_3d3d)
from stemos.errors import BehindCameraError, DegenerateConfigurationError
from stemos.geometry import Transform, rotation_angle, so3_exp

K = CameraIntrinsics(520.0, 510.0, 320.0, 240.0)
PROJ = MapProjection(2.0, (1.5, -0.5))


def scene(rng, n=12):
    return rng.uniform(-1.0, 1.0, size=(n, 3)) * [2.0, 2.0, 0.8]


def camera_scene(rng, pose, n=20):
    """Points in front of a camera at ``pose`` (world-to-camera), returned in the world frame."""
    P = np.column_stack([rng.uniform(-1, 1, n), rng.uniform(-1, 1, n), rng.uniform(3, 6, n)])
    return pose.inverse().apply(P)


def rot_err(a: Transform, b: Transform) -> float:
    return rotation_angle(a.R, b.R)


def fd_gradient(residual_fn, T, h=1e-6):
    g = np.zeros(6)
    for i in range(6):
        e = np.zeros(6)
        e[i] = h
        fp = float(np.sum(residual_fn(perturb(T, e)) ** 2))
        fm = float(np.sum(residual_fn(perturb(T, -e)) ** 2))
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


# ---------------------------------------------------------------------------
# closed form


def test_rigid_identity_and_recovery():
    rng = np.random.default_rng(0)
    X = scene(rng, 10)
    assert solve_rigid_3d3d(X, X).rms < 1e-12
    T = random_transform(rng)
    res = solve_rigid_3d3d(X, T.apply(X))
    assert rot_err(res.transform, T) < 1e-9
    assert np.allclose(res.transform.t, T.t, atol=1e-9)


def test_rigid_noise_monte_carlo():
    rng = np.random.default_rng(1)
    rms, worst = [], 0.0
    for _ in range(100):
        X = scene(rng, 30)
        T = random_transform(rng)
        res = solve_rigid_3d3d(X, T.apply(X) + rng.normal(0, 0.01, X.shape))
        rms.append(res.rms)
        worst = max(worst, rot_err(res.transform, T))
    assert worst < math.radians(1.0)
    assert np.mean(rms) == pytest.approx(0.01, rel=0.25)


def test_rigid_degenerate():
    line = np.outer(np.arange(5.0), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateConfigurationError):
        solve_rigid_3d3d(line, line)
    with pytest.raises(DegenerateConfigurationError):
        solve_rigid_3d3d(line[:2], line[:2])


# ---------------------------------------------------------------------------
# map alignment


def test_map_identity():
    X = scene(np.random.default_rng(2))
    res = solve_map_alignment(X, PROJ.project(X), PROJ, Transform())
    assert res.cost < 1e-20 and rot_err(res.transform, Transform()) < 1e-9


def test_map_recovers_known_transform_and_flags_z():
    rng = np.random.default_rng(3)
    for _ in range(20):
        X = scene(rng)
        T = random_transform(rng)
        res = solve_map_alignment(X, PROJ.project(T.apply(X)), PROJ, Transform())
        assert res.cost < 1e-12
        assert rot_err(res.transform, T) < 1e-6
        assert np.allclose(res.transform.t[:2], T.t[:2], atol=1e-6)
        assert res.unobservable == ("tz",)


def test_map_z_translation_leaves_residual_unchanged():
    rng = np.random.default_rng(4)
    X, T = scene(rng), random_transform(rng)
    y = PROJ.project(T.apply(X))
    lifted = perturb(T, [0, 0, 0, 0, 0, 3.0])
    assert np.allclose(map_residuals(lifted, X, y, PROJ), 0.0)


def test_map_degenerate():
    X = np.outer(np.arange(6.0), [1.0, 1.0, 0.0])
    with pytest.raises(DegenerateConfigurationError):
        solve_map_alignment(X, X[:, :2])
    with pytest.raises(DegenerateConfigurationError):
        solve_map_alignment(scene(np.random.default_rng(0), 3), np.zeros((3, 2)))


# ---------------------------------------------------------------------------
# PnP


def test_pnp_identity_one_iteration():
    rng = np.random.default_rng(5)
    X = camera_scene(rng, Transform())
    res = solve_pnp(X, render(X, K, Transform()), K, Transform())
    assert res.iterations == 1 and res.rms < 1e-12


def test_pnp_recovers_from_nearby_init():
    rng = np.random.default_rng(6)
    for _ in range(20):
        pose = random_transform(rng)
        X = camera_scene(rng, pose)
        init = perturb(pose, np.concatenate([rng.normal(size=3) * math.radians(10) / math.sqrt(3),
                                             rng.uniform(-0.1, 0.1, 3) / math.sqrt(3)]))
        res = solve_pnp(X, render(X, K, pose), K, init)
        assert res.rms < 1e-8
        assert rot_err(res.transform, pose) < 1e-6


def test_pnp_noise():
    rng = np.random.default_rng(7)
    errs, rms = [], []
    for _ in range(30):
        pose = random_transform(rng, max_shift=0.3)
        X = camera_scene(rng, pose, 50)
        u = render(X, K, pose) + rng.normal(0, 0.5, (50, 2))
        res = solve_pnp(X, u, K, pose)
        errs.append(rot_err(res.transform, pose))
        rms.append(res.rms)
    assert max(errs) < math.radians(0.5)
    assert np.mean(rms) == pytest.approx(0.5, rel=0.2)


def test_reprojection_residual_examples():
    rng = np.random.default_rng(8)
    X = camera_scene(rng, Transform())
    u = render(X, K, Transform())
    r, rms = reprojection_residual(X, u, K, Transform())
    assert np.allclose(r, 0.0) and rms == 0.0
    shifted = Transform.from_translation(1.0 / K.fx * 4.0, 0.0)
    assert reprojection_residual(X, u, K, shifted)[1] > 0.0
    with pytest.raises(BehindCameraError):
        reprojection_residual(X, u, K, Transform.from_translation(0, 0, -10))
    with pytest.raises(DegenerateConfigurationError):
        CameraIntrinsics(0.0, 1.0)


# ---------------------------------------------------------------------------
# properties

seeds = st.integers(0, 2 ** 32 - 1)


@given(seeds)
def test_map_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    X, T = scene(rng), random_transform(rng)
    y = PROJ.project(X) + rng.normal(0, 0.5, (len(X), 2))
    fn = lambda A: map_residuals(A, X, y, PROJ)  # noqa: E731
    g = objective_gradient(fn, lambda A: map_jacobian(A, X, PROJ), T)
    assert rel_err(g, fd_gradient(fn, T)) < 1e-5


@given(seeds)
def test_pnp_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    pose = random_transform(rng, max_shift=0.3)
    X = camera_scene(rng, pose)
    u = render(X, K, pose) + rng.normal(0, 3.0, (len(X), 2))
    T = perturb(pose, rng.normal(0, 0.02, 6))
    fn = lambda A: reprojection_residual(X, u, K, A)[0].ravel()  # noqa: E731
    g = objective_gradient(fn, lambda A: pnp_jacobian(A, X, K), T)
    assert rel_err(g, fd_gradient(fn, T)) < 1e-5


@given(seeds)
def test_monotone_descent(seed):
    rng = np.random.default_rng(seed)
    pose = random_transform(rng, max_shift=0.3)
    X = camera_scene(rng, pose)
    u = render(X, K, pose) + rng.normal(0, 1.0, (len(X), 2))
    res = solve_pnp(X, u, K, perturb(pose, rng.normal(0, 0.05, 6)))
    assert all(b <= a for a, b in zip(res.costs, res.costs[1:]))
    Xm = scene(rng)
    res = solve_map_alignment(Xm, PROJ.project(random_transform(rng).apply(Xm)) + rng.normal(0, 0.1, (len(Xm), 2)),
                              PROJ)
    assert all(b <= a for a, b in zip(res.costs, res.costs[1:]))


def test_image_to_map_chain():
    """Camera pixels back to reconstruction points, then onto the map, land on the known map coordinates."""
    rng = np.random.default_rng(9)
    for _ in range(10):
        cam_pose = random_transform(rng, max_shift=0.3)
        X = camera_scene(rng, cam_pose)
        u = render(X, K, cam_pose)
        pose = solve_pnp(X, u, K, perturb(cam_pose, rng.normal(0, 0.05, 6))).transform
        depth = cam_pose.apply(X)[:, 2]
        rays = np.column_stack([(u[:, 0] - K.cx) / K.fx, (u[:, 1] - K.cy) / K.fy, np.ones(len(u))])
        recon = pose.inverse().apply(rays * depth[:, None])
        T_map = random_transform(rng)
        truth = PROJ.project(T_map.apply(X))
        T_est = solve_map_alignment(recon, truth, PROJ).transform
        assert np.max(np.abs(PROJ.project(T_est.apply(recon)) - truth)) < 1e-6


def test_so3_exp_used_for_perturbation():
    T = perturb(Transform(), [0.1, 0.0, 0.0, 1.0, 2.0, 3.0])
    assert np.allclose(T.R, so3_exp([0.1, 0, 0])) and np.allclose(T.t, [1, 2, 3])
