"""Lower-level trajectory NLP: direct collocation for a fixed contact schedule.

The horizon is a sequence of nodes spaced ``dt`` apart. Each node carries
``q, qdot, u`` and, on stance nodes, the foot force. Consecutive nodes are
linked by implicit Euler defects on positions and velocities, where node
accelerations come from the rigid-body equations with the node's own force.
(Trapezoidal defects admit an alternating-acceleration null mode that the
optimizer readily exploits to fake contact forces; implicit Euler has none.)

Every constraint is a fixed linear combination of per-node *features*
(the node variables themselves plus nonlinear node quantities such as
accelerations, foot position and terrain height under the foot). The
constraint Jacobian is therefore ``A @ blockdiag(dfeatures/dvars)``, and the
block derivatives are obtained in one batched complex-step evaluation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import hopper
from .hopper import HopperParams
from .terrain import HEIGHT_BOUND, TerrainModel

STANCE, FLIGHT = 0, 1
PHASE_NAMES = ("stance", "flight")

N_SLOTS = 5
FIRST_SLOT_VALUES = (3, 4, 5, 6)
LATER_SLOT_VALUES = (0, 3, 4, 5, 6)
GOAL_MAX = 1.0

# node-local variable layout
NV = 12
Q, QD, U, LAM = slice(0, 4), slice(4, 8), slice(8, 10), slice(10, 12)
# node-local nonlinear features, appended after the variables
F_ACC, F_FOOT, F_FOOTVEL, F_H, F_SLOPE, F_LN, F_LT = 12, 16, 18, 20, 21, 22, 23
NG = 24

MERIT_CAP = 10.0
FAILED_MERIT = 2.0           # raw merit floor for non-converged solves, tanh(2) ~ 0.964


class NlpError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class Action:
    """Node counts of alternating stance/flight/stance/flight/stance phases."""

    phase_nodes: tuple[int, ...]

    def __post_init__(self):
        nodes = tuple(int(n) for n in self.phase_nodes)
        object.__setattr__(self, "phase_nodes", nodes)
        if not is_canonical(nodes):
            raise NlpError(f"non-canonical action {list(nodes)}")

    @property
    def n_phases(self) -> int:
        return sum(1 for n in self.phase_nodes if n > 0)

    @property
    def n_nodes(self) -> int:
        return sum(self.phase_nodes)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.phase_nodes, dtype=float)

    def schedule_string(self) -> str:
        """Stance/flight rendering such as ``SSSS.FFF.SSSSS``."""
        parts = []
        for i, n in enumerate(self.phase_nodes):
            if n:
                parts.append(("S" if i % 2 == 0 else "F") * n)
        return ".".join(parts)

    def __str__(self):
        return "[" + ",".join(str(n) for n in self.phase_nodes) + "]"


def is_canonical(nodes) -> bool:
    nodes = tuple(nodes)
    if len(nodes) != N_SLOTS or nodes[0] not in FIRST_SLOT_VALUES:
        return False
    if any(n not in LATER_SLOT_VALUES for n in nodes[1:]):
        return False
    nonzero = [n > 0 for n in nodes]
    k = sum(nonzero)
    # trailing zeros only
    if any(nonzero[k:]) or not all(nonzero[:k]):
        return False
    return k in (1, 3, 5)


@dataclass(frozen=True)
class Context:
    goal_distance: float
    terrain_features: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        feats = np.asarray(self.terrain_features, dtype=float).reshape(-1)
        object.__setattr__(self, "terrain_features", feats)
        object.__setattr__(self, "goal_distance", float(self.goal_distance))
        if not 0.0 <= self.goal_distance <= GOAL_MAX:
            raise NlpError(f"goal distance {self.goal_distance} outside [0, {GOAL_MAX}] m")
        if np.any(np.abs(feats) > HEIGHT_BOUND + 1e-12):
            raise NlpError(f"terrain features exceed +-{HEIGHT_BOUND} m")

    def as_array(self) -> np.ndarray:
        return np.concatenate([[self.goal_distance], self.terrain_features])


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 0.05
    feas_tol: float = 1e-6
    max_inner: int = 50
    max_outer: int = 10
    max_iterations: int = 400
    rho_init: float = 100.0
    rho_max: float = 1e9
    nominal_knee: float = 0.5
    flight_apex: float = 0.1


@dataclass(frozen=True)
class MeritWeights:
    cost: float = 20.0
    equality: float = 10.0
    inequality: float = 10.0

    def __post_init__(self):
        if min(self.cost, self.equality, self.inequality) <= 0:
            raise ValueError("merit weights must be positive")


@dataclass
class NlpProblem:
    context: Context
    action: Action
    params: HopperParams
    terrain: TerrainModel
    config: SolverConfig
    phase: np.ndarray            # (N,) STANCE or FLIGHT per node
    phase_index: np.ndarray      # (N,) which of the five slots a node belongs to
    q_start: np.ndarray
    eq_map: sp.csr_matrix        # equalities = eq_map @ features + eq_offset
    eq_offset: np.ndarray
    eq_labels: list
    ineq_map: sp.csr_matrix      # inequalities (<= 0) likewise
    ineq_offset: np.ndarray
    ineq_labels: list

    @property
    def n_nodes(self) -> int:
        return len(self.phase)

    @property
    def dt(self) -> float:
        return self.config.dt

    @property
    def stance_mask(self) -> np.ndarray:
        return self.phase == STANCE

    @property
    def variable_mask(self) -> np.ndarray:
        """Which entries of the padded (N, 12) node array are decision variables."""
        mask = np.ones((self.n_nodes, NV), dtype=bool)
        mask[~self.stance_mask, LAM] = False
        # node 0 is pinned; its torque and force never enter a defect
        mask[0, U] = False
        mask[0, LAM] = False
        return mask

    # -- features -----------------------------------------------------------
    def node_features(self, V):
        """Nonlinear node quantities for node arrays ``V`` of shape (N, ..., 12)."""
        p = self.params
        q, qd, u, lam = V[..., Q], V[..., QD], V[..., U], V[..., LAM]
        mask = self.stance_mask.reshape((-1,) + (1,) * (V.ndim - 1))
        acc = hopper.constrained_dynamics(p, q, qd, u, lam * mask)
        foot = hopper.foot_position(p, q)
        footvel = hopper.foot_velocity(p, q, qd)
        h = self.terrain.evaluate(foot[..., 0])
        slope = self.terrain.evaluate(foot[..., 0], derivative=1)
        inv = 1.0 / np.sqrt(1.0 + slope * slope)
        lam_n = (-slope * lam[..., 0] + lam[..., 1]) * inv / p.weight
        lam_t = (lam[..., 0] + slope * lam[..., 1]) * inv / p.weight
        return np.concatenate([acc, foot, footvel, h[..., None], slope[..., None],
                               lam_n[..., None], lam_t[..., None]], axis=-1)

    def features(self, V):
        return np.concatenate([V, self.node_features(V)], axis=-1)

    def feature_jacobian(self, V):
        """Features (N, 24) and their node-local derivatives (N, 24, 12)."""
        step = 1e-30
        Vc = V[:, None, :] + 1j * step * np.eye(NV)[None]
        Fc = self.node_features(Vc)                      # (N, 12, 12)
        F = Fc[:, 0, :].real
        dF = np.swapaxes(Fc.imag / step, 1, 2)           # (N, nF, NV)
        eye = np.broadcast_to(np.eye(NV), (self.n_nodes, NV, NV))
        return np.concatenate([V, F], axis=-1), np.concatenate([eye, dF], axis=1)

    # -- constraints --------------------------------------------------------
    def evaluate(self, V):
        G = self.features(V).reshape(-1)
        return (self.eq_map @ G + self.eq_offset, self.ineq_map @ G + self.ineq_offset)

    @property
    def quadrature_weights(self) -> np.ndarray:
        """Right-rectangle weights matching the implicit Euler steps."""
        w = np.full(self.n_nodes, self.dt)
        w[0] = 0.0
        return w

    def objective(self, V) -> float:
        """Effort over the horizon, integrated with the collocation quadrature."""
        u = V[:, U] / self.params.torque_limit
        return float(self.quadrature_weights @ np.sum(u * u, axis=1))

    def pack(self, V) -> np.ndarray:
        """Decision vector ``[q, qdot, u]`` per node, foot force appended on stance nodes."""
        return np.asarray(V)[self.variable_mask]

    def unpack(self, y) -> np.ndarray:
        V = np.zeros((self.n_nodes, NV))
        V[self.variable_mask] = y
        return V


class _RowBuilder:
    """Accumulates constraint rows as sparse combinations of node features."""

    def __init__(self, n_nodes):
        self.n_nodes = n_nodes
        self.rows, self.cols, self.vals = [], [], []
        self.offset = []
        self.labels = []

    def add(self, label, nodes, terms, offset=0.0):
        """Add one row per node in ``nodes``.

        ``terms`` is a list of ``(node_shift, feature, coefficient)``; the row
        for node ``i`` reads feature ``feature`` of node ``i + node_shift``.
        """
        nodes = np.atleast_1d(np.asarray(nodes, dtype=int))
        offset = np.broadcast_to(np.asarray(offset, dtype=float), nodes.shape)
        start = len(self.offset)
        ridx = start + np.arange(len(nodes))
        for shift, feat, coef in terms:
            coef = np.broadcast_to(np.asarray(coef, dtype=float), nodes.shape)
            self.rows.append(ridx)
            self.cols.append((nodes + shift) * NG + feat)
            self.vals.append(coef)
        self.offset.extend(offset.tolist())
        self.labels.extend((label, int(i)) for i in nodes)

    def build(self):
        m = len(self.offset)
        if m == 0:
            return sp.csr_matrix((0, self.n_nodes * NG)), np.zeros(0), []
        A = sp.coo_matrix((np.concatenate(self.vals),
                           (np.concatenate(self.rows), np.concatenate(self.cols))),
                          shape=(m, self.n_nodes * NG)).tocsr()
        return A, np.asarray(self.offset), self.labels


def node_phases(action: Action):
    phase, slot = [], []
    for i, n in enumerate(action.phase_nodes):
        phase += [STANCE if i % 2 == 0 else FLIGHT] * n
        slot += [i] * n
    return np.asarray(phase), np.asarray(slot)


def start_state(params: HopperParams, terrain: TerrainModel, config: SolverConfig) -> np.ndarray:
    hip, knee, height = hopper.nominal_pose(params, config.nominal_knee)
    ground = float(terrain.evaluate(0.0))
    return np.array([0.0, ground + height, hip, knee])


def build_nlp(context: Context, action: Action, params: HopperParams, terrain: TerrainModel,
              config: SolverConfig = SolverConfig()) -> NlpProblem:
    if not isinstance(action, Action):
        action = Action(tuple(action))
    if not terrain.x_min <= context.goal_distance <= terrain.x_max:
        raise NlpError("goal distance outside the terrain range")
    if not terrain.x_min <= 0.0 <= terrain.x_max:
        raise NlpError("start position outside the terrain range")

    phase, slot = node_phases(action)
    N = len(phase)
    nodes = np.arange(N)
    stance = nodes[phase == STANCE]
    flight = nodes[phase == FLIGHT]
    dt = config.dt
    q0 = start_state(params, terrain, config)

    eq = _RowBuilder(N)
    # implicit Euler defects between node i and i+1; the right node's
    # velocity and acceleration drive the step
    inner = nodes[:-1]
    for k in range(4):
        eq.add(f"defect_q{k}", inner, [(1, Q.start + k, 1.0), (0, Q.start + k, -1.0),
                                       (1, QD.start + k, -dt)])
    for k in range(4):
        eq.add(f"defect_qd{k}", inner, [(1, QD.start + k, 1.0), (0, QD.start + k, -1.0),
                                        (1, F_ACC + k, -dt)])
    # stance: foot on the ground without slipping; foot at rest on touchdown.
    # Position-level contact at every stance node plus a velocity condition
    # only where contact is made keeps the equality Jacobian full rank
    # (velocity conditions on every node would duplicate the positions up to
    # O(dt^2)). Node 0 is pinned by the start state.
    prev_stance = np.zeros(N, dtype=bool)
    prev_stance[1:] = phase[:-1] == STANCE
    held = stance[prev_stance[stance]]
    touchdown = stance[(stance > 0) & ~prev_stance[stance]]
    eq.add("contact_height", stance[1:], [(0, F_FOOT + 1, 1.0), (0, F_H, -1.0)])
    eq.add("contact_slip", held, [(0, F_FOOT, 1.0), (-1, F_FOOT, -1.0)])
    eq.add("touchdown_vel_x", touchdown, [(0, F_FOOTVEL, 1.0)])
    eq.add("touchdown_vel_z", touchdown, [(0, F_FOOTVEL + 1, 1.0)])
    # start at rest in the nominal stance, finish at rest over the goal
    for k in range(4):
        eq.add(f"initial_q{k}", [0], [(0, Q.start + k, 1.0)], -q0[k])
        eq.add(f"initial_qd{k}", [0], [(0, QD.start + k, 1.0)])
    for k in range(4):
        eq.add(f"final_qd{k}", [N - 1], [(0, QD.start + k, 1.0)])
    eq.add("final_base_x", [N - 1], [(0, Q.start, 1.0)], -context.goal_distance)

    iq = _RowBuilder(N)
    (hlo, hhi), (klo, khi) = params.hip_limits, params.knee_limits
    iq.add("hip_upper", nodes, [(0, 2, 1.0)], -hhi)
    iq.add("hip_lower", nodes, [(0, 2, -1.0)], hlo)
    iq.add("knee_upper", nodes, [(0, 3, 1.0)], -khi)
    iq.add("knee_lower", nodes, [(0, 3, -1.0)], klo)
    ulim, vlim = params.torque_limit, params.joint_speed_limit
    for k, name in enumerate(("hip", "knee")):
        iq.add(f"speed_{name}_upper", nodes, [(0, QD.start + 2 + k, 1.0 / vlim)], -1.0)
        iq.add(f"speed_{name}_lower", nodes, [(0, QD.start + 2 + k, -1.0 / vlim)], -1.0)
        iq.add(f"torque_{name}_upper", nodes, [(0, U.start + k, 1.0 / ulim)], -1.0)
        iq.add(f"torque_{name}_lower", nodes, [(0, U.start + k, -1.0 / ulim)], -1.0)
    iq.add("foot_x_upper", nodes, [(0, F_FOOT, 1.0)], -terrain.x_max)
    iq.add("foot_x_lower", nodes, [(0, F_FOOT, -1.0)], terrain.x_min)
    mu = params.friction
    iq.add("normal_force", stance, [(0, F_LN, -1.0)])
    iq.add("friction_pos", stance, [(0, F_LT, 1.0), (0, F_LN, -mu)])
    iq.add("friction_neg", stance, [(0, F_LT, -1.0), (0, F_LN, -mu)])
    iq.add("clearance", flight, [(0, F_H, 1.0), (0, F_FOOT + 1, -1.0)])

    A_eq, b_eq, l_eq = eq.build()
    A_iq, b_iq, l_iq = iq.build()
    return NlpProblem(context, action, params, terrain, config, phase, slot, q0,
                      A_eq, b_eq, l_eq, A_iq, b_iq, l_iq)


def initial_guess(problem: NlpProblem) -> np.ndarray:
    """Deterministic seed trajectory, returned as the padded (N, 12) node array.

    The base moves linearly to the goal at nominal height (raised by a bump in
    flight), the foot rests on evenly spaced footholds during stance and arcs
    between them in flight, joints follow by inverse kinematics.
    """
    p, cfg, terrain = problem.params, problem.config, problem.terrain
    N, goal = problem.n_nodes, problem.context.goal_distance
    hip0, knee0, height = hopper.nominal_pose(p, cfg.nominal_knee)
    phase, slot = problem.phase, problem.phase_index

    n_stance = len(set(slot[phase == STANCE].tolist()))
    holds = [0.0] if n_stance == 1 else list(np.linspace(0.0, goal, n_stance))
    stance_rank = {s: r for r, s in enumerate(sorted(set(slot[phase == STANCE].tolist())))}

    V = np.zeros((N, NV))
    base_x = goal * np.arange(N) / max(N - 1, 1)
    for i in range(N):
        s = slot[i]
        if phase[i] == STANCE:
            fx = holds[stance_rank[s]]
            fz = float(terrain.evaluate(fx))
            bump = 0.0
        else:
            members = np.flatnonzero(slot == s)
            frac = (i - members[0] + 1) / (len(members) + 1)
            a, b = holds[stance_rank[s - 1]], holds[stance_rank[s + 1]]
            fx = a + frac * (b - a)
            bump = cfg.flight_apex * np.sin(np.pi * frac)
            fz = float(terrain.evaluate(fx)) + bump
        bz = float(terrain.evaluate(fx)) + height + bump
        joints = hopper.inverse_kinematics(p, (base_x[i], bz), (fx, fz))
        if joints is None or not (p.hip_limits[0] <= joints[0] <= p.hip_limits[1]
                                  and p.knee_limits[0] <= joints[1] <= p.knee_limits[1]):
            joints = (hip0, knee0)
        V[i, Q] = [base_x[i], bz, *joints]
        if phase[i] == STANCE:
            V[i, LAM] = [0.0, p.weight]
    if N > 1:
        V[:, QD] = np.gradient(V[:, Q], problem.dt, axis=0)
    V[0, QD] = 0.0
    V[-1, QD] = 0.0
    return V


@dataclass
class NlpSolution:
    problem: NlpProblem
    nodes: np.ndarray            # padded (N, 12) node array at the final iterate
    objective_value: float
    equality_residuals: np.ndarray
    inequality_values: np.ndarray
    converged: bool
    iterations: int
    message: str = ""

    @property
    def y_opt(self) -> np.ndarray:
        return self.problem.pack(self.nodes)

    @property
    def max_violation(self) -> float:
        eq = np.max(np.abs(self.equality_residuals), initial=0.0)
        iq = np.max(self.inequality_values, initial=-np.inf)
        return float(max(eq, iq, 0.0))

    def residuals_by_label(self) -> dict:
        """Largest absolute violation per constraint label."""
        out = {}
        for (label, _), v in zip(self.problem.eq_labels, self.equality_residuals):
            out[label] = max(out.get(label, 0.0), abs(float(v)))
        for (label, _), v in zip(self.problem.ineq_labels, self.inequality_values):
            out[label] = max(out.get(label, 0.0), max(float(v), 0.0))
        return out


def solve_nlp(problem: NlpProblem, V0=None, config: SolverConfig | None = None) -> NlpSolution:
    from .solver import gauss_newton_sqp

    if config is None:
        config = problem.config
    if V0 is None:
        V0 = initial_guess(problem)
    V0 = np.asarray(V0, dtype=float)
    if V0.ndim == 1:
        V0 = problem.unpack(V0)
    if V0.shape != (problem.n_nodes, NV):
        raise NlpError("initial guess does not match the problem layout")
    return gauss_newton_sqp(problem, V0, config)


def merit(solution: NlpSolution, weights: MeritWeights = MeritWeights()) -> float:
    g = np.asarray(solution.equality_residuals, dtype=float)
    h = np.asarray(solution.inequality_values, dtype=float)
    value = (weights.cost * solution.objective_value
             + weights.equality * np.sum(g * g)
             + weights.inequality * np.sum(np.maximum(0.0, h) ** 2))
    if not np.isfinite(value):
        return MERIT_CAP
    return float(value)


def scored_merit(solution: NlpSolution, weights: MeritWeights = MeritWeights()) -> float:
    """Raw merit used to score a schedule; a failed solve never looks good."""
    m = merit(solution, weights)
    if not solution.converged:
        m = max(m, FAILED_MERIT)
    return m


def refine_merit(m):
    """Squash a raw merit into (-1, 1); order preserving."""
    return np.tanh(m)


def resimulation_gap(solution: NlpSolution, substeps: int = 20) -> float:
    """Largest state mismatch when intervals are re-integrated with RK4.

    Each interval starts from the collocated state at its left node and is
    driven by the right node's torque held constant (as in the implicit
    Euler step), under the phase dynamics of the right node: the contact
    solve in stance, free flight otherwise. Touchdown intervals carry the
    impact and are skipped.
    """
    prob = solution.problem
    V = solution.nodes
    p = prob.params
    h = prob.dt / substeps

    def rhs(x, u, stance):
        q, qd = x[:4], x[4:]
        if stance:
            acc, _ = hopper.stance_dynamics(p, q, qd, u)
        else:
            acc = hopper.flight_dynamics(p, q, qd, u)
        return np.concatenate([qd, acc])

    gap = 0.0
    for i in range(prob.n_nodes - 1):
        stance = prob.phase[i + 1] == STANCE
        if stance and prob.phase[i] != STANCE:
            continue
        u = V[i + 1, U]
        x = V[i, :8].copy()
        for _ in range(substeps):
            k1 = rhs(x, u, stance)
            k2 = rhs(x + 0.5 * h * k1, u, stance)
            k3 = rhs(x + 0.5 * h * k2, u, stance)
            k4 = rhs(x + h * k3, u, stance)
            x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        gap = max(gap, float(np.max(np.abs(x - V[i + 1, :8]))))
    return gap


def export_solution_csv(solution: NlpSolution, path) -> None:
    prob = solution.problem
    V = solution.nodes
    header = (["node", "t", "phase"] + ["x_base", "z_base", "hip", "knee"]
              + ["dx_base", "dz_base", "dhip", "dknee"] + ["u_hip", "u_knee"]
              + ["force_x", "force_z", "foot_x", "foot_z"])
    feet = hopper.foot_position(prob.params, V[:, Q])
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(prob.n_nodes):
            row = [i, f"{i * prob.dt:.6g}", PHASE_NAMES[prob.phase[i]]]
            row += [f"{v:.10g}" for v in V[i]] + [f"{v:.10g}" for v in feet[i]]
            w.writerow(row)
