"""Rigid registration: closed-form 3D-3D Procrustes, reconstruction-to-map
alignment under a top-down projection, and camera PnP.

Both iterative solvers run Gauss-Newton over SE(3) with the perturbation
``R <- exp(w) R``, ``t <- t + d`` and halve the step until the cost does not
increase.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCameraError, DegenerateConfigurationError, NoConvergenceError
from .geometry import Transform, hat, so3_exp

STEP_TOL = 1e-10
MAX_ITERS = 100
PARAM_NAMES = ("wx", "wy", "wz", "tx", "ty", "tz")


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float = 0.0
    cy: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DegenerateConfigurationError("focal lengths must be positive")


@dataclass(frozen=True)
class MapProjection:
    """Scaled orthographic top-down view: drop z, then ``y = scale * (x, y) + offset``."""

    scale: float = 1.0
    offset: tuple[float, float] = (0.0, 0.0)

    def project(self, P) -> np.ndarray:
        P = np.asarray(P, dtype=float)
        return self.scale * P[..., :2] + np.asarray(self.offset, dtype=float)


@dataclass
class AlignmentResult:
    transform: Transform
    cost: float
    rms: float
    iterations: int = 0
    converged: bool = True
    unobservable: tuple = ()
    costs: list = field(default_factory=list)


def _as_points(a, dim: int) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[1] != dim:
        raise DegenerateConfigurationError(f"expected an (n, {dim}) array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DegenerateConfigurationError("non-finite coordinates")
    return a


def _spread_rank(P: np.ndarray, tol: float = 1e-9) -> int:
    C = P - P.mean(axis=0)
    s = np.linalg.svd(C, compute_uv=False)
    if s.size == 0 or s[0] <= tol:
        return 0
    return int(np.sum(s > tol * max(1.0, s[0])))


def solve_rigid_3d3d(src, dst) -> AlignmentResult:
    """Least-squares ``dst ~ R src + t`` by centroid alignment and SVD Procrustes."""
    P, Q = _as_points(src, 3), _as_points(dst, 3)
    if len(P) != len(Q) or len(P) < 3:
        raise DegenerateConfigurationError("need at least 3 paired points")
    if _spread_rank(P) < 2 or _spread_rank(Q) < 2:
        raise DegenerateConfigurationError("points are collinear or coincident")
    mp, mq = P.mean(axis=0), Q.mean(axis=0)
    H = (P - mp).T @ (Q - mq)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0])
    R = Vt.T @ D @ U.T
    t = mq - R @ mp
    res = Q - (P @ R.T + t)
    cost = float(np.sum(res * res))
    return AlignmentResult(Transform.from_matrix(R, t), cost, float(np.sqrt(cost / res.size)))


# ---------------------------------------------------------------------------
# residual models


def map_residuals(T: Transform, X, y, proj: MapProjection) -> np.ndarray:
    return (proj.project(T.apply(X)) - np.asarray(y, dtype=float)).ravel()


def map_jacobian(T: Transform, X, proj: MapProjection) -> np.ndarray:
    RX = np.asarray(X, dtype=float) @ T.R.T
    J = np.zeros((2 * len(RX), 6))
    for j, q in enumerate(RX):
        dp = np.hstack([-hat(q), np.eye(3)])
        J[2 * j:2 * j + 2] = proj.scale * dp[:2]
    return J


def reprojection_residual(X, u, K: CameraIntrinsics, pose: Transform) -> tuple[np.ndarray, float]:
    """Per-point 2D residuals ``pi(K(R X + t)) - u`` and their per-coordinate RMS in pixels."""
    X, u = _as_points(X, 3), _as_points(u, 2)
    P = pose.apply(X)
    if np.any(P[:, 2] <= 0.0):
        raise BehindCameraError("a point has non-positive depth")
    proj = np.column_stack([K.fx * P[:, 0] / P[:, 2] + K.cx, K.fy * P[:, 1] / P[:, 2] + K.cy])
    r = proj - u
    return r, float(np.sqrt(np.mean(r * r)))


def pnp_jacobian(T: Transform, X, K: CameraIntrinsics) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    RX = X @ T.R.T
    P = RX + T.t
    J = np.zeros((2 * len(X), 6))
    for j, (q, p) in enumerate(zip(RX, P)):
        x, y, z = p
        dpi = np.array([[K.fx / z, 0.0, -K.fx * x / (z * z)], [0.0, K.fy / z, -K.fy * y / (z * z)]])
        J[2 * j:2 * j + 2] = dpi @ np.hstack([-hat(q), np.eye(3)])
    return J


def perturb(T: Transform, xi) -> Transform:
    """The solver's retraction: rotation by ``exp(w)`` on the left, translation additive."""
    xi = np.asarray(xi, dtype=float)
    return Transform.from_matrix(so3_exp(xi[:3]) @ T.R, T.t + xi[3:])


def objective_gradient(residual_fn, jacobian_fn, T: Transform) -> np.ndarray:
    r = residual_fn(T)
    return 2.0 * jacobian_fn(T).T @ r


# ---------------------------------------------------------------------------
# Gauss-Newton


def _gauss_newton(residual_fn, jacobian_fn, init: Transform, max_iters: int, step_tol: float,
                  cost_tol: float) -> AlignmentResult:
    T = init
    r = residual_fn(T)
    cost = float(r @ r)
    costs = [cost]
    converged = False
    it = 0
    behind = False
    while it < max_iters:
        it += 1
        J = jacobian_fn(T)
        step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        alpha = 1.0
        accepted = False
        for _ in range(40):
            xi = alpha * step
            if np.linalg.norm(xi) < step_tol:
                break
            try:
                cand = perturb(T, xi)
                rc = residual_fn(cand)
            except BehindCameraError:
                behind = True
                alpha *= 0.5
                continue
            c = float(rc @ rc)
            if c <= cost:
                T, r, cost, accepted = cand, rc, c, True
                break
            alpha *= 0.5
        costs.append(cost)
        if not accepted or np.linalg.norm(alpha * step) < step_tol:
            converged = True
            break
    if not converged and behind and not costs[-1] < costs[0]:
        raise BehindCameraError("iterates keep crossing behind the camera")
    if not converged and cost > cost_tol:
        raise NoConvergenceError(f"no convergence in {max_iters} iterations (cost {cost:.3e})", cost=cost)
    return AlignmentResult(T, cost, float(np.sqrt(cost / max(1, r.size))), it, converged, (), costs)


def _nullspace_axes(J: np.ndarray, tol: float = 1e-9) -> list[np.ndarray]:
    _, s, Vt = np.linalg.svd(J, full_matrices=True)
    smax = s[0] if s.size else 0.0
    rank = int(np.sum(s > tol * max(smax, 1.0)))
    return [Vt[i] for i in range(rank, Vt.shape[0])]


def map_seed(X, y, proj: MapProjection = MapProjection()) -> Transform:
    """Closed-form start: fit an unconstrained 2x3 map, project it onto the nearest pair of orthonormal rows."""
    X, y = _as_points(X, 3), _as_points(y, 2)
    Z = (y - np.asarray(proj.offset)) / proj.scale
    A = np.hstack([X, np.ones((len(X), 1))])
    sol, *_ = np.linalg.lstsq(A, Z, rcond=None)
    M = sol[:3].T
    U, _, Vt = np.linalg.svd(M, full_matrices=False)
    rows = U @ Vt
    R = np.vstack([rows, np.cross(rows[0], rows[1])])
    t = np.array([sol[3, 0], sol[3, 1], 0.0])
    return Transform.from_matrix(R, t)


def solve_map_alignment(points, targets, projection: MapProjection = MapProjection(),
                        init: Transform | None = None, max_iters: int = MAX_ITERS,
                        step_tol: float = STEP_TOL, cost_tol: float = 1e-9) -> AlignmentResult:
    """Rigid transform taking reconstruction points onto 2D map targets.

    Under the top-down projection the z translation never reaches the
    residual; the solver leaves it at its initial value and lists it in
    ``unobservable``.
    """
    X, y = _as_points(points, 3), _as_points(targets, 2)
    if len(X) != len(y) or len(X) < 4:
        raise DegenerateConfigurationError("need at least 4 correspondences")
    if _spread_rank(X) < 2:
        raise DegenerateConfigurationError("reconstruction points are collinear or coincident")
    seed = map_seed(X, y, projection)
    starts = [seed] if init is None else [init, Transform.from_matrix(seed.R, (*seed.t[:2], init.t[2]))]
    null = _nullspace_axes(map_jacobian(starts[0], X, projection))
    unobservable = []
    for v in null:
        k = int(np.argmax(np.abs(v)))
        if abs(v[k]) < 0.99 or PARAM_NAMES[k] != "tz":
            raise DegenerateConfigurationError("correspondences leave the rotation or x-y translation unconstrained")
        unobservable.append("tz")
    # a caller's init may sit in a poor basin under large rotations; the closed-form seed is also tried
    results = []
    for start in starts:
        try:
            results.append(_gauss_newton(lambda T: map_residuals(T, X, y, projection),
                                         lambda T: map_jacobian(T, X, projection), start, max_iters, step_tol,
                                         cost_tol))
        except NoConvergenceError:
            if start is starts[-1] and not results:
                raise
    result = min(results, key=lambda r: r.cost)
    result.unobservable = tuple(unobservable)
    return result


def solve_pnp(points, pixels, K: CameraIntrinsics, init: Transform = Transform(),
              max_iters: int = MAX_ITERS, step_tol: float = STEP_TOL, cost_tol: float = 1e-9) -> AlignmentResult:
    """Camera pose ``(R, t)`` minimising pixel reprojection error."""
    X, u = _as_points(points, 3), _as_points(pixels, 2)
    if len(X) != len(u) or len(X) < 6:
        raise DegenerateConfigurationError("need at least 6 correspondences")
    if _spread_rank(X) < 2:
        raise DegenerateConfigurationError("points are collinear or coincident")
    reprojection_residual(X, u, K, init)  # raises if anything starts behind the camera

    def residual(T):
        return reprojection_residual(X, u, K, T)[0].ravel()

    return _gauss_newton(residual, lambda T: pnp_jacobian(T, X, K), init, max_iters, step_tol, cost_tol)


# ---------------------------------------------------------------------------
# synthetic data


def random_rotation(rng: np.random.Generator, max_angle: float = np.pi) -> np.ndarray:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return so3_exp(axis * rng.uniform(0.0, max_angle))


def random_transform(rng: np.random.Generator, max_angle: float = np.pi, max_shift: float = 1.0) -> Transform:
    return Transform.from_matrix(random_rotation(rng, max_angle), rng.uniform(-max_shift, max_shift, size=3))


def render(X, K: CameraIntrinsics, pose: Transform) -> np.ndarray:
    P = pose.apply(X)
    return np.column_stack([K.fx * P[:, 0] / P[:, 2] + K.cx, K.fy * P[:, 1] / P[:, 2] + K.cy])
