"""Perspective-n-Point head pose solver with flipped-pose correction.

The chain is: linear DLT estimate of ``[R|t]`` with the rotation constraint
relaxed, SVD projection of the 3x3 block onto SO(3), then Levenberg-Marquardt
on the pixel reprojection error.  Because face landmarks are nearly planar,
the objective has a second local minimum obtained by rotating the head by pi
about the model z axis and negating the translation; the landmarks then sit
behind the camera.  :func:`estimate_pose` optionally detects that basin after
a few LM iterations and restarts from its mirror image.
"""

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import so3
from .errors import (
    IllConditionedWarning,
    InsufficientPointsError,
    InvalidInputError,
    NumericalFailureError,
    ProjectionSingularityError,
)
from .face_camera import transform

ILL_CONDITIONED = 1e12


@dataclass(frozen=True)
class HeadPose:
    rotation: np.ndarray
    translation: np.ndarray
    cost: float = float("nan")
    converged: bool = False
    iterations: int = 0
    correction_applied: bool = False
    could_not_correct: bool = False
    cost_history: tuple = ()
    flipped: bool = field(init=False)

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "flipped", bool(t[2] < 0))


@dataclass(frozen=True)
class SolverConfig:
    max_lm_iterations: int = 100
    lm_initial_damping: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 0.1
    convergence_tol: float = 1e-10
    correction_enabled: bool = True
    correction_after_iterations: int = 10

    def __post_init__(self):
        numeric = (
            self.max_lm_iterations,
            self.lm_initial_damping,
            self.damping_up,
            self.damping_down,
            self.convergence_tol,
            self.correction_after_iterations,
        )
        if any(not v > 0 for v in numeric):
            raise InvalidInputError("solver settings must all be positive")
        if self.correction_after_iterations > self.max_lm_iterations:
            raise InvalidInputError("correction_after_iterations exceeds max_lm_iterations")
        if not self.damping_up > 1 or not self.damping_down < 1:
            raise InvalidInputError("damping_up must exceed 1 and damping_down be below 1")


@dataclass(frozen=True)
class DltEstimate:
    """Relaxed linear pose: ``matrix`` is the (non-orthogonal) rotation block."""

    matrix: np.ndarray
    translation: np.ndarray
    condition_number: float
    ill_conditioned: bool
    planar_fallback: bool = False

    def __iter__(self):
        yield self.matrix
        yield self.translation


def _observed(observed):
    return observed.points if hasattr(observed, "points") else np.asarray(observed, dtype=float)


def _normalized_image_coords(observed, idx, cam):
    xy = _observed(observed)[idx]
    return np.column_stack(((xy[:, 0] - cam.cx) / cam.fx, (xy[:, 1] - cam.cy) / cam.fy))


def _similarity(points):
    """Isotropic normalising transform: centroid to origin, mean radius sqrt(d)."""
    d = points.shape[1]
    c = points.mean(axis=0)
    r = np.mean(np.linalg.norm(points - c, axis=1))
    s = np.sqrt(d) / r if r > 0 else 1.0
    T = np.eye(d + 1)
    T[:d, :d] *= s
    T[:d, d] = -s * c
    return T


def _fix_scale_and_sign(M, t, P):
    n = np.linalg.norm(M[2])
    M, t = M / n, t / n
    depths = P @ M[2] + t[2]
    if np.count_nonzero(depths > 0) * 2 < len(depths):
        M, t = -M, -t
    return M, t


def dlt_initialize(model, indices, observed, cam):
    """Linear least-squares estimate of ``[R|t]`` from 2D-3D correspondences.

    Data are Hartley-normalised before the SVD.  ``condition_number`` is the
    ratio of the largest to the second-smallest singular value of the design
    matrix; above 1e12 an :class:`IllConditionedWarning` is emitted and the
    estimate falls back to a plane-induced homography, which is well posed for
    flat point sets.
    """
    idx = list(model.indices(indices))
    if len(idx) < 6:
        raise InsufficientPointsError(f"DLT needs at least 6 points, got {len(idx)}")
    P = model.points[idx]
    uv = _normalized_image_coords(observed, idx, cam)

    T3 = _similarity(P)
    T2 = _similarity(uv)
    Ph = np.column_stack((P, np.ones(len(idx)))) @ T3.T
    uvn = np.column_stack((uv, np.ones(len(idx)))) @ T2.T

    n = len(idx)
    A = np.zeros((2 * n, 12))
    A[0::2, 0:4] = Ph
    A[0::2, 8:12] = -uvn[:, [0]] * Ph
    A[1::2, 4:8] = Ph
    A[1::2, 8:12] = -uvn[:, [1]] * Ph
    _, s, Vt = np.linalg.svd(A)
    cond = float(s[0] / s[-2]) if s[-2] > 0 else float("inf")

    if cond > ILL_CONDITIONED:
        warnings.warn(
            f"DLT design matrix ill-conditioned (condition {cond:.3g}); "
            "using planar homography initialisation",
            IllConditionedWarning,
            stacklevel=2,
        )
        M, t = _homography_initialize(P, uv)
        return DltEstimate(M, t, cond, True, planar_fallback=True)

    Pn = Vt[-1].reshape(3, 4)
    Pmat = np.linalg.solve(T2, Pn @ T3)
    M, t = _fix_scale_and_sign(Pmat[:, :3], Pmat[:, 3], P)
    return DltEstimate(M, t, cond, False)


def _homography_initialize(P, uv):
    # best-fit plane of the model points defines a 2D frame (e1, e2, normal)
    c = P.mean(axis=0)
    _, _, Vt = np.linalg.svd(P - c)
    E = Vt  # rows: in-plane axes then normal
    if np.linalg.det(E) < 0:
        E[2] = -E[2]
    ab = (P - c) @ E[:2].T
    T_ab = _similarity(ab)
    T_uv = _similarity(uv)
    abh = np.column_stack((ab, np.ones(len(ab)))) @ T_ab.T
    uvh = np.column_stack((uv, np.ones(len(uv)))) @ T_uv.T
    n = len(ab)
    A = np.zeros((2 * n, 9))
    A[0::2, 0:3] = abh
    A[0::2, 6:9] = -uvh[:, [0]] * abh
    A[1::2, 3:6] = abh
    A[1::2, 6:9] = -uvh[:, [1]] * abh
    _, _, V = np.linalg.svd(A)
    H = np.linalg.solve(T_uv, V[-1].reshape(3, 3) @ T_ab)
    h1, h2, h3 = H[:, 0], H[:, 1], H[:, 2]
    lam = 2.0 / (np.linalg.norm(h1) + np.linalg.norm(h2))
    r1, r2, tp = lam * h1, lam * h2, lam * h3
    if tp[2] < 0:
        r1, r2, tp = -r1, -r2, -tp
    Rp = project_to_rotation(np.column_stack((r1, r2, np.cross(r1, r2))))
    # plane frame -> model frame: X = Rp @ E @ (P - c) + tp
    R = Rp @ E
    t = tp - R @ c
    return R, t


def project_to_rotation(M, return_ambiguity=False):
    """Nearest rotation to ``M`` in Frobenius norm.

    With ``return_ambiguity`` a second value reports whether the minimiser is
    non-unique (rank-deficient input, or a reflection whose two smallest
    singular values coincide).
    """
    M = np.asarray(M, dtype=float)
    if M.shape != (3, 3) or not np.all(np.isfinite(M)):
        raise InvalidInputError("expected a finite 3x3 matrix")
    U, s, Vt = np.linalg.svd(M)
    d = 1.0 if np.linalg.det(U @ Vt) > 0 else -1.0
    R = U @ np.diag([1.0, 1.0, d]) @ Vt
    if not return_ambiguity:
        return R
    scale = max(s[0], np.finfo(float).tiny)
    ambiguous = bool((s[1] + d * s[2]) <= 1e-12 * scale)
    return R, ambiguous


def pose_residuals(model, indices, observed, cam, R, t):
    """Stacked ``(x_hat - x, y_hat - y)`` residuals, shape ``(2n,)``."""
    idx = list(model.indices(indices))
    X = transform(model, idx, (R, t))
    Z = X[:, 2]
    if np.any(Z == 0.0):
        raise ProjectionSingularityError("zero depth during refinement")
    obs = _observed(observed)[idx]
    r = np.empty(2 * len(idx))
    r[0::2] = X[:, 0] / Z * cam.fx + cam.cx - obs[:, 0]
    r[1::2] = X[:, 1] / Z * cam.fy + cam.cy - obs[:, 1]
    return r


def pose_jacobian(model, indices, cam, R, t):
    """Jacobian of :func:`pose_residuals` w.r.t. ``(delta, t)``.

    ``delta`` is the axis-angle increment applied on the left,
    ``R <- exp(hat(delta)) @ R``; the derivative is taken at ``delta = 0``.
    """
    idx = list(model.indices(indices))
    a = model.points[idx] @ np.asarray(R).T  # rotated, untranslated
    X = a + t
    x, y, z = X[:, 0], X[:, 1], X[:, 2]
    iz = 1.0 / z
    n = len(idx)
    # d(pixel)/d(camera point)
    du = np.zeros((n, 3))
    dv = np.zeros((n, 3))
    du[:, 0] = cam.fx * iz
    du[:, 2] = -cam.fx * x * iz * iz
    dv[:, 1] = cam.fy * iz
    dv[:, 2] = -cam.fy * y * iz * iz
    # d(camera point)/d(delta) = d(delta x a)/d(delta) = -hat(a)
    ax, ay, az = a[:, 0], a[:, 1], a[:, 2]
    J = np.empty((2 * n, 6))
    for rows, dp in ((slice(0, None, 2), du), (slice(1, None, 2), dv)):
        J[rows, 0] = dp[:, 2] * ay - dp[:, 1] * az
        J[rows, 1] = dp[:, 0] * az - dp[:, 2] * ax
        J[rows, 2] = dp[:, 1] * ax - dp[:, 0] * ay
        J[rows, 3:6] = dp
    return J


def _trial_cost(model, idx, observed, cam, R, t):
    try:
        r = pose_residuals(model, idx, observed, cam, R, t)
    except ProjectionSingularityError:
        return None, float("inf")
    c = float(r @ r)
    return r, (c if np.isfinite(c) else float("inf"))


def lm_refine(model, indices, observed, cam, init_pose, config=None, max_iterations=None):
    """Levenberg-Marquardt refinement of a pose on the reprojection error.

    Steps are accepted only if they strictly lower the cost, so the recorded
    ``cost_history`` is non-increasing.
    """
    config = config or SolverConfig()
    max_it = config.max_lm_iterations if max_iterations is None else int(max_iterations)
    idx = list(model.indices(indices))
    R, t = (
        (init_pose.rotation, init_pose.translation)
        if hasattr(init_pose, "rotation")
        else init_pose
    )
    R = np.array(R, dtype=float)
    t = np.array(t, dtype=float)
    if not so3.is_rotation(R, tol=1e-6):
        raise InvalidInputError("initial rotation is not a valid rotation matrix")
    R = project_to_rotation(R)

    try:
        r = pose_residuals(model, idx, observed, cam, R, t)
    except ProjectionSingularityError as exc:
        raise NumericalFailureError(str(exc), HeadPose(R, t)) from exc
    cost = float(r @ r)
    if not np.isfinite(cost):
        raise NumericalFailureError("non-finite residuals at initial pose", HeadPose(R, t))

    lam = config.lm_initial_damping
    history = [cost]
    converged = False
    it = 0
    while it < max_it:
        if cost == 0.0:
            converged = True
            break
        J = pose_jacobian(model, idx, cam, R, t)
        if not np.all(np.isfinite(J)):
            raise NumericalFailureError(
                "non-finite Jacobian", HeadPose(R, t, cost, False, it, cost_history=tuple(history))
            )
        A = J.T @ J
        g = J.T @ r
        it += 1
        diag = np.maximum(np.diag(A), 1e-12 * max(1.0, float(np.max(np.diag(A)))))
        try:
            step = np.linalg.solve(A + lam * np.diag(diag), -g)
        except np.linalg.LinAlgError:
            step = None
        if step is not None and np.all(np.isfinite(step)):
            R_new = project_to_rotation(so3.exp_map(step[:3]) @ R)
            t_new = t + step[3:]
            r_new, cost_new = _trial_cost(model, idx, observed, cam, R_new, t_new)
        else:
            cost_new = float("inf")
        if cost_new < cost:
            rel = (cost - cost_new) / cost
            R, t, r, cost = R_new, t_new, r_new, cost_new
            history.append(cost)
            lam = max(lam * config.damping_down, 1e-15)
            if rel < config.convergence_tol:
                converged = True
                break
        else:
            lam *= config.damping_up
            if lam > 1e16:
                converged = True
                break
        if step is not None and np.all(np.isfinite(step)):
            tiny_rot = np.linalg.norm(step[:3]) < 1e-15
            tiny_t = np.linalg.norm(step[3:]) < 1e-15 * (1.0 + np.linalg.norm(t))
            if tiny_rot and tiny_t:
                converged = True
                break

    return HeadPose(R, t, cost, converged, it, cost_history=tuple(history))


def flip_pose(pose):
    """Mirror pose ``(R @ Rz(pi), -t)``: identical projection for planar models."""
    return replace(
        pose,
        rotation=pose.rotation @ so3.RZ_PI,
        translation=-pose.translation,
        cost=float("nan"),
        converged=False,
        iterations=0,
        cost_history=(),
    )


def detect_flip(pose, model=None, indices=None, diagnostics=False):
    """True iff the translation's z component is negative.

    With ``diagnostics=True`` (and a model) also returns how many transformed
    landmarks have negative depth.
    """
    flipped = bool(pose.translation[2] < 0)
    if not diagnostics:
        return flipped
    if model is None:
        raise InvalidInputError("depth diagnostics need a model")
    Z = transform(model, indices if indices is not None else "all", pose)[:, 2]
    return flipped, int(np.count_nonzero(Z < 0))


def initial_pose(model, indices, observed, cam):
    est = dlt_initialize(model, indices, observed, cam)
    return HeadPose(project_to_rotation(est.matrix), est.translation)


def estimate_pose(model, indices, observed, cam, config=None, init_pose=None):
    """Full solver chain; ``init_pose`` overrides the DLT start (used to inject
    adversarial initialisations)."""
    config = config or SolverConfig()
    idx = list(model.indices(indices))
    obs = _observed(observed)
    if obs.shape[0] <= max(idx):
        raise InvalidInputError("observed landmarks do not cover the index set")
    start = init_pose if init_pose is not None else initial_pose(model, idx, observed, cam)

    if not config.correction_enabled:
        return lm_refine(model, idx, observed, cam, start, config)

    first = lm_refine(
        model, idx, observed, cam, start, config, max_iterations=config.correction_after_iterations
    )
    if detect_flip(first):
        final = lm_refine(model, idx, observed, cam, flip_pose(first), config)
        corrected = True
    elif not first.converged and first.iterations < config.max_lm_iterations:
        remaining = config.max_lm_iterations - first.iterations
        final = lm_refine(model, idx, observed, cam, first, config, max_iterations=remaining)
        corrected = False
    else:
        return first
    return replace(
        final,
        iterations=first.iterations + final.iterations,
        correction_applied=corrected,
        could_not_correct=bool(final.translation[2] < 0),
    )


def pose_record(frame_id, which, pose):
    """Serialisable dict for the pose output file."""
    return {
        "frame_id": frame_id,
        "set": which,
        "rotation": [float(v) for v in pose.rotation.ravel()],
        "translation": [float(v) for v in pose.translation],
        "cost": float(pose.cost),
        "flipped": pose.flipped,
        "converged": pose.converged,
        "iterations": int(pose.iterations),
    }


def pose_from_record(rec):
    try:
        R = np.array(rec["rotation"], dtype=float).reshape(3, 3)
        t = np.array(rec["translation"], dtype=float).reshape(3)
        pose = HeadPose(
            R,
            t,
            float(rec["cost"]),
            bool(rec["converged"]),
            int(rec["iterations"]),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise InvalidInputError(f"malformed pose record: {exc}") from exc
    if pose.flipped != bool(rec["flipped"]):
        raise InvalidInputError("pose record flipped flag disagrees with translation sign")
    return pose
