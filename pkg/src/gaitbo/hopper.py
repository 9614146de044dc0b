"""Planar single-legged hopper: kinematics and hybrid flight/stance dynamics.

Generalized coordinates are ``q = [x_base, z_base, hip, knee]``. The base
translates without rotating, the hip angle is measured from the vertical and
the knee angle relative to the thigh, so that

    foot = base + l_thigh * e(hip) + l_shank * e(hip + knee),  e(a) = (sin a, -cos a).

All functions broadcast over leading batch dimensions and only use analytic
numpy operations, so they accept complex arrays for complex-step derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DynamicsError(RuntimeError):
    pass


@dataclass(frozen=True)
class HopperParams:
    mass_base: float = 5.0
    mass_thigh: float = 0.5
    mass_shank: float = 0.5
    length_thigh: float = 0.35
    length_shank: float = 0.35
    inertia_thigh: float | None = None
    inertia_shank: float | None = None
    gravity: float = 9.81
    torque_limit: float = 60.0
    joint_speed_limit: float = 8.0        # rad/s, hip and knee
    hip_limits: tuple[float, float] = (-2.5, 2.5)
    knee_limits: tuple[float, float] = (0.2, 2.8)
    friction: float = 0.8

    def __post_init__(self):
        # slender-rod inertias about the link centre unless given
        if self.inertia_thigh is None:
            object.__setattr__(self, "inertia_thigh", self.mass_thigh * self.length_thigh**2 / 12.0)
        if self.inertia_shank is None:
            object.__setattr__(self, "inertia_shank", self.mass_shank * self.length_shank**2 / 12.0)
        positive = [self.mass_base, self.mass_thigh, self.mass_shank, self.length_thigh,
                    self.length_shank, self.inertia_thigh, self.inertia_shank, self.friction,
                    self.torque_limit, self.joint_speed_limit, self.gravity]
        if not all(np.isfinite(v) and v > 0 for v in positive):
            raise ValueError("hopper masses, lengths, inertias, limits and friction must be positive")
        for lo, hi in (self.hip_limits, self.knee_limits):
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ValueError("joint limits must be finite with lower < upper")

    @property
    def total_mass(self) -> float:
        return self.mass_base + self.mass_thigh + self.mass_shank

    @property
    def weight(self) -> float:
        return self.total_mass * self.gravity

    @property
    def link_masses(self) -> np.ndarray:
        return np.array([self.mass_base, self.mass_thigh, self.mass_shank])


SELECTION = np.array([[0.0, 0.0, 1.0, 0.0],
                      [0.0, 0.0, 0.0, 1.0]])


def _angles(q):
    th1 = q[..., 2]
    th2 = q[..., 2] + q[..., 3]
    return th1, th2


def _rates(qdot):
    return qdot[..., 2], qdot[..., 2] + qdot[..., 3]


def _zeros_like(a):
    return np.zeros(np.shape(a), dtype=np.result_type(a, float))


def body_jacobians(params: HopperParams, q):
    """Linear-velocity Jacobians of base, thigh and shank centres, shape (..., 3, 2, 4)."""
    q = np.asarray(q)
    th1, th2 = _angles(q)
    c1, c2 = 0.5 * params.length_thigh, 0.5 * params.length_shank
    l1 = params.length_thigh
    zero, one = _zeros_like(th1), _zeros_like(th1) + 1.0
    base = [[one, zero, zero, zero], [zero, one, zero, zero]]
    thigh = [[one, zero, c1 * np.cos(th1), zero],
             [zero, one, c1 * np.sin(th1), zero]]
    shank = [[one, zero, l1 * np.cos(th1) + c2 * np.cos(th2), c2 * np.cos(th2)],
             [zero, one, l1 * np.sin(th1) + c2 * np.sin(th2), c2 * np.sin(th2)]]
    J = np.array([base, thigh, shank])  # (3, 2, 4, ...)
    return np.moveaxis(J, (0, 1, 2), (-3, -2, -1))


def body_bias_accelerations(params: HopperParams, q, qdot):
    """Velocity-product accelerations ``Jdot qdot`` of the three centres, shape (..., 3, 2)."""
    th1, th2 = _angles(q)
    w1, w2 = _rates(qdot)
    c1, c2 = 0.5 * params.length_thigh, 0.5 * params.length_shank
    l1 = params.length_thigh
    zero = _zeros_like(th1 * w1)
    base = [zero, zero]
    thigh = [-c1 * np.sin(th1) * w1**2, c1 * np.cos(th1) * w1**2]
    shank = [-l1 * np.sin(th1) * w1**2 - c2 * np.sin(th2) * w2**2,
             l1 * np.cos(th1) * w1**2 + c2 * np.cos(th2) * w2**2]
    return np.moveaxis(np.array([base, thigh, shank]), (0, 1), (-2, -1))


def body_positions(params: HopperParams, q):
    """Centre positions of base, thigh and shank, shape (..., 3, 2)."""
    q = np.asarray(q)
    th1, th2 = _angles(q)
    c1, c2 = 0.5 * params.length_thigh, 0.5 * params.length_shank
    l1 = params.length_thigh
    x, z = q[..., 0], q[..., 1]
    pts = [[x, z],
           [x + c1 * np.sin(th1), z - c1 * np.cos(th1)],
           [x + l1 * np.sin(th1) + c2 * np.sin(th2), z - l1 * np.cos(th1) - c2 * np.cos(th2)]]
    return np.moveaxis(np.array(pts), (0, 1), (-2, -1))


def foot_position(params: HopperParams, q):
    q = np.asarray(q)
    th1, th2 = _angles(q)
    l1, l2 = params.length_thigh, params.length_shank
    x = q[..., 0] + l1 * np.sin(th1) + l2 * np.sin(th2)
    z = q[..., 1] - l1 * np.cos(th1) - l2 * np.cos(th2)
    return np.stack([x, z], axis=-1)


def contact_jacobian(params: HopperParams, q, qdot=None):
    """Foot Jacobian ``J_c`` (..., 2, 4) and, if ``qdot`` is given, ``Jdot_c qdot`` (..., 2)."""
    q = np.asarray(q)
    th1, th2 = _angles(q)
    l1, l2 = params.length_thigh, params.length_shank
    zero, one = _zeros_like(th1), _zeros_like(th1) + 1.0
    rows = [[one, zero, l1 * np.cos(th1) + l2 * np.cos(th2), l2 * np.cos(th2)],
            [zero, one, l1 * np.sin(th1) + l2 * np.sin(th2), l2 * np.sin(th2)]]
    J = np.moveaxis(np.array(rows), (0, 1), (-2, -1))
    if qdot is None:
        return J
    w1, w2 = _rates(np.asarray(qdot))
    jdot_qdot = np.stack([-l1 * np.sin(th1) * w1**2 - l2 * np.sin(th2) * w2**2,
                          l1 * np.cos(th1) * w1**2 + l2 * np.cos(th2) * w2**2], axis=-1)
    return J, jdot_qdot


def foot_velocity(params: HopperParams, q, qdot):
    return np.einsum("...ij,...j->...i", contact_jacobian(params, q), qdot)


def mass_matrix(params: HopperParams, q):
    J = body_jacobians(params, q)
    M = np.einsum("...bik,...bil,b->...kl", J, J, params.link_masses)
    # link rotations: thigh spins with hip, shank with hip + knee
    M = M.astype(np.result_type(M, float), copy=False)
    it, ish = params.inertia_thigh, params.inertia_shank
    M[..., 2, 2] += it + ish
    M[..., 2, 3] += ish
    M[..., 3, 2] += ish
    M[..., 3, 3] += ish
    return M


def bias_terms(params: HopperParams, q, qdot):
    """Return ``(b, g)``: Coriolis/centrifugal and gravity generalized forces."""
    J = body_jacobians(params, q)
    acc = body_bias_accelerations(params, q, qdot)
    m = params.link_masses
    b = np.einsum("...bik,...bi,b->...k", J, acc, m)
    up = np.array([0.0, params.gravity])
    g = np.einsum("...bik,i,b->...k", J, up, m)
    return b, g


def flight_dynamics(params: HopperParams, q, qdot, u):
    """Generalized accelerations with no contact: ``M qddot = S^T u - b - g``."""
    M = mass_matrix(params, q)
    b, g = bias_terms(params, q, qdot)
    rhs = np.asarray(u) @ SELECTION - b - g
    try:
        return np.linalg.solve(M, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise DynamicsError("singular mass matrix") from exc


def constrained_dynamics(params: HopperParams, q, qdot, u, force):
    """Accelerations for a prescribed foot force: ``M qddot = S^T u - b - g + J_c^T force``."""
    M = mass_matrix(params, q)
    b, g = bias_terms(params, q, qdot)
    Jc = contact_jacobian(params, q)
    rhs = (np.asarray(u) @ SELECTION - b - g
           + np.einsum("...ij,...i->...j", Jc, np.asarray(force)))
    return np.linalg.solve(M, rhs[..., None])[..., 0]


def stance_dynamics(params: HopperParams, q, qdot, u):
    """Solve the stance KKT system for accelerations and foot contact force.

    Returns ``(qddot, force)`` satisfying both the equations of motion and
    ``J_c qddot + Jdot_c qdot = 0``.
    """
    M = mass_matrix(params, q)
    b, g = bias_terms(params, q, qdot)
    Jc, jdot_qdot = contact_jacobian(params, q, qdot)
    batch = M.shape[:-2]
    K = np.zeros(batch + (6, 6), dtype=np.result_type(M, Jc))
    K[..., :4, :4] = M
    K[..., :4, 4:] = -np.swapaxes(Jc, -1, -2)
    K[..., 4:, :4] = -Jc
    rhs = np.concatenate([np.asarray(u) @ SELECTION - b - g, jdot_qdot], axis=-1)
    try:
        sol = np.linalg.solve(K, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise DynamicsError("singular stance KKT matrix") from exc
    return sol[..., :4], sol[..., 4:]


def center_of_mass(params: HopperParams, q):
    return np.einsum("...bi,b->...i", body_positions(params, q), params.link_masses) / params.total_mass


def center_of_mass_acceleration(params: HopperParams, q, qdot, qddot):
    J = body_jacobians(params, q)
    acc = np.einsum("...bik,...k->...bi", J, qddot) + body_bias_accelerations(params, q, qdot)
    return np.einsum("...bi,b->...i", acc, params.link_masses) / params.total_mass


def kinetic_energy(params: HopperParams, q, qdot):
    return 0.5 * np.einsum("...i,...ij,...j->...", qdot, mass_matrix(params, q), qdot)


def potential_energy(params: HopperParams, q):
    z = body_positions(params, q)[..., 1]
    return params.gravity * np.einsum("...b,b->...", z, params.link_masses)


def nominal_pose(params: HopperParams, knee: float = 1.0):
    """Joint angles ``(hip, knee)`` placing the foot straight below the base, and base height."""
    l1, l2 = params.length_thigh, params.length_shank
    # foot x offset l1 sin(h) + l2 sin(h + k) = 0
    hip = -np.arctan2(l2 * np.sin(knee), l1 + l2 * np.cos(knee))
    height = l1 * np.cos(hip) + l2 * np.cos(hip + knee)
    return float(hip), float(knee), float(height)


def gravity_compensation(params: HopperParams, q):
    """Joint torques and foot force holding ``q`` at rest with the foot in contact."""
    _, g = bias_terms(params, q, np.zeros(4))
    force = np.array([0.0, params.weight])
    Jc = contact_jacobian(params, q)
    u = g[2:] - Jc[:, 2:].T @ force
    return u, force


def inverse_kinematics(params: HopperParams, base, foot, knee_sign: float = 1.0):
    """Joint angles putting the foot at ``foot`` given the base position.

    Returns ``None`` when the target is out of reach.
    """
    l1, l2 = params.length_thigh, params.length_shank
    dx, dz = foot[0] - base[0], foot[1] - base[1]
    r2 = dx * dx + dz * dz
    cos_k = (r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
    if not -1.0 <= cos_k <= 1.0:
        return None
    knee = knee_sign * np.arccos(cos_k)
    # direction angle of the base->foot vector measured like e(a)
    alpha = np.arctan2(dx, -dz)
    hip = alpha - np.arctan2(l2 * np.sin(knee), l1 + l2 * np.cos(knee))
    return float(hip), float(knee)
