"""Upper level: contextual GP-UCB over contact schedules.

Each iteration draws a random context, picks the schedule minimizing the
lower confidence bound of the refined merit, scores it with the trajectory
NLP and adds the result to the GP. Training stops once the low-pass
filtered squared relative prediction error (fSRR) falls below a threshold.
"""

from __future__ import annotations

import csv
import functools
import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .collocation import (FIRST_SLOT_VALUES, LATER_SLOT_VALUES, N_SLOTS, Action, Context,
                          MeritWeights, NlpError, SolverConfig, build_nlp, is_canonical, merit,
                          refine_merit, scored_merit, solve_nlp)
from .gp import GpState, KernelParams, default_kernel_params, encode
from .hopper import HopperParams
from .terrain import (Heightmap, TerrainModel, build_terrain, flat_heightmap,
                      sample_random_terrain, variable_node_indices)

log = logging.getLogger(__name__)

FLAT, ROUGH = "flat", "rough"
ROUGH_NODES = 3
RELATIVE_FLOOR = 1e-3


# -- action space ---------------------------------------------------------------

class ActionSpace:
    """All canonical schedules in lexicographic order."""

    def __init__(self, actions):
        self.actions = tuple(actions)
        self.matrix = np.array([a.as_array() for a in self.actions])
        self.matrix.setflags(write=False)
        self._index = {a: i for i, a in enumerate(self.actions)}

    def __len__(self):
        return len(self.actions)

    def __iter__(self):
        return iter(self.actions)

    def __getitem__(self, i):
        return self.actions[i]

    def __contains__(self, action):
        return action in self._index

    def index(self, action) -> int:
        return self._index[action]


@functools.lru_cache(maxsize=1)
def enumerate_actions() -> ActionSpace:
    raw = itertools.product(FIRST_SLOT_VALUES, *([LATER_SLOT_VALUES] * (N_SLOTS - 1)))
    return ActionSpace(Action(nodes) for nodes in sorted(raw) if is_canonical(nodes))


def canonicalize(raw) -> Action:
    """Canonical form of a raw slot vector.

    The only non-canonical pattern accepted is a stance phase followed by two
    empty slots and a trailing flight/stance pair, which is compacted to the
    front. Anything else must already be canonical.
    """
    nodes = tuple(int(n) for n in raw)
    if len(nodes) != N_SLOTS:
        raise NlpError(f"an action has {N_SLOTS} slots, got {len(nodes)}")
    if nodes[0] not in FIRST_SLOT_VALUES:
        raise NlpError("the first slot must be a stance phase of 3..6 nodes")
    if any(n not in LATER_SLOT_VALUES for n in nodes[1:]):
        raise NlpError(f"slot values must lie in {LATER_SLOT_VALUES}")
    if nodes[1] == nodes[2] == 0 and nodes[3] > 0 and nodes[4] > 0:
        nodes = (nodes[0], nodes[3], nodes[4], 0, 0)
    return Action(nodes)


# -- contexts -------------------------------------------------------------------

@dataclass(frozen=True)
class TerrainSettings:
    base: Heightmap = field(default_factory=flat_heightmap)
    variable_positions: tuple = (0.4, 0.5, 0.6)
    sigma: float = 0.1

    @functools.cached_property
    def indices(self) -> np.ndarray:
        return variable_node_indices(self.base, self.variable_positions)

    @functools.cached_property
    def base_model(self) -> TerrainModel:
        return build_terrain(self.base)


def n_terrain_features(scenario: str) -> int:
    if scenario == FLAT:
        return 0
    if scenario == ROUGH:
        return ROUGH_NODES
    raise ValueError(f"unknown scenario {scenario!r}")


def sample_context(rng: np.random.Generator, scenario: str,
                   terrain: TerrainSettings = TerrainSettings()):
    """Uniform goal distance in [0, 1] m, plus random knot heights on rough ground."""
    goal = float(rng.uniform(0.0, 1.0))
    n_t = n_terrain_features(scenario)
    if n_t == 0:
        return Context(goal), terrain.base_model
    hm, heights = sample_random_terrain(rng, n_t, terrain.base, terrain.indices, terrain.sigma)
    return Context(goal, heights), build_terrain(hm)


def lift_context(context: Context, n_features: int) -> Context:
    """Pad (flat) terrain features with zeros, or drop them for a flat-ground model."""
    feats = context.terrain_features
    if len(feats) == n_features:
        return context
    if n_features == 0:
        return Context(context.goal_distance)
    out = np.zeros(n_features)
    out[:len(feats)] = feats
    return Context(context.goal_distance, out)


# -- acquisition ----------------------------------------------------------------

def candidate_rows(context: Context, action_space: ActionSpace) -> np.ndarray:
    ctx = np.broadcast_to(context.as_array(), (len(action_space), len(context.as_array())))
    return np.hstack([ctx, action_space.matrix])


def beta(k: int) -> float:
    if k < 1:
        raise ValueError("iteration index starts at 1")
    return float(np.log(k))


def acquisition(gp: GpState, context: Context, action_space: ActionSpace, k: int):
    """Lower confidence bound mu - sqrt(beta_k) sigma for every action."""
    mu, sigma = gp.shared_context_posterior(context.as_array(), action_space.matrix)
    return mu - np.sqrt(beta(k)) * sigma, mu, sigma


def select_action(gp: GpState, context: Context, action_space: ActionSpace, k: int) -> Action:
    lcb, _, _ = acquisition(gp, context, action_space, k)
    return action_space[int(np.argmin(lcb))]


# -- fSRR -----------------------------------------------------------------------

@dataclass(frozen=True)
class FsrrState:
    E: float = 1.0
    k: int = 0


def update_fsrr(state: FsrrState, m: float, mu: float, rho: float) -> FsrrState:
    """One step of the low-pass filter on the squared relative residual."""
    denom = max(abs(m), RELATIVE_FLOOR)
    rel = (m - mu) / denom
    return FsrrState(rho * rel**2 + (1.0 - rho) * state.E, state.k + 1)


# -- lower-level oracle ---------------------------------------------------------

@dataclass
class MeritOracle:
    """Scores a schedule in a context by solving the trajectory NLP."""

    params: HopperParams = field(default_factory=HopperParams)
    solver: SolverConfig = field(default_factory=SolverConfig)
    weights: MeritWeights = field(default_factory=MeritWeights)

    def solve(self, context: Context, terrain: TerrainModel, action: Action):
        problem = build_nlp(context, action, self.params, terrain, self.solver)
        return solve_nlp(problem)

    def __call__(self, context: Context, terrain: TerrainModel, action: Action):
        """Return ``(refined merit, converged)``."""
        solution = self.solve(context, terrain, action)
        m = float(refine_merit(scored_merit(solution, self.weights)))
        return m, solution.converged


# -- training -------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epsilon: float = 0.01
    epsilon_intermediate: float = 0.05
    rho: float = 0.1
    max_iterations: int = 2000
    burn_in: int = 25
    seed: int = 0
    scenario: str = FLAT

    def __post_init__(self):
        if not 0 < self.rho <= 1:
            raise ValueError("rho must lie in (0, 1]")
        if not (self.epsilon > 0 and self.epsilon_intermediate > 0):
            raise ValueError("fSRR thresholds must be positive")
        if self.max_iterations < 1 or self.burn_in < 0:
            raise ValueError("iteration counts must be positive")
        n_terrain_features(self.scenario)


LOG_FIELDS = ["stage", "k", "goal_distance", "terrain_features", "action", "merit",
              "mu_pred", "sigma_pred", "beta", "fsrr", "solver_converged"]


@dataclass
class TrainResult:
    gp: GpState
    log: list
    converged: bool
    stages: list


def _stages(config: TrainConfig, warm_start: bool):
    if config.scenario == FLAT:
        return [(FLAT, config.epsilon)]
    if warm_start:
        return [(ROUGH, config.epsilon)]
    return [(FLAT, config.epsilon_intermediate), (ROUGH, config.epsilon)]


def train(config: TrainConfig = TrainConfig(), oracle: Optional[Callable] = None,
          kernel: Optional[KernelParams] = None, warm_start: Optional[GpState] = None,
          terrain: TerrainSettings = TerrainSettings(),
          callback: Optional[Callable] = None) -> TrainResult:
    """Algorithm loop; rough scenarios first train on flat ground unless warm-started.

    ``oracle(context, terrain_model, action)`` returns ``(refined merit, converged)``.
    Each stage has its own fSRR filter, burn-in and iteration budget.
    """
    oracle = MeritOracle() if oracle is None else oracle
    n_feat = n_terrain_features(config.scenario)
    if kernel is None:
        kernel = default_kernel_params(n_feat)
    if kernel.n_context != 1 + n_feat:
        raise ValueError("kernel context dimension does not match the scenario")
    gp = GpState(kernel)
    if warm_start is not None:
        gp = lift_model(warm_start, kernel)

    rng = np.random.default_rng(config.seed)
    action_space = enumerate_actions()
    rows = []
    stages = []
    converged = False
    for stage_no, (scenario, eps) in enumerate(_stages(config, warm_start is not None), 1):
        fsrr = FsrrState()
        converged = False
        for it in range(1, config.max_iterations + 1):
            context, terrain_model = sample_context(rng, scenario, terrain)
            context = lift_context(context, n_feat)
            k = gp.n + 1
            lcb, mu, sigma = acquisition(gp, context, action_space, k)
            idx = int(np.argmin(lcb))
            action = action_space[idx]
            m, solved = oracle(context, terrain_model, action)
            if not abs(m) < 1:
                m = float(np.clip(m, -1 + 1e-12, 1 - 1e-12))
            fsrr = update_fsrr(fsrr, m, float(mu[idx]), config.rho)
            gp.add_observation(encode(context, action), m)
            row = {
                "stage": stage_no, "k": k, "goal_distance": context.goal_distance,
                "terrain_features": " ".join(repr(float(v)) for v in context.terrain_features),
                "action": str(action), "merit": m, "mu_pred": float(mu[idx]),
                "sigma_pred": float(sigma[idx]), "beta": beta(k), "fsrr": fsrr.E,
                "solver_converged": bool(solved),
            }
            rows.append(row)
            if callback is not None:
                callback(row)
            log.debug("stage %d k=%d z=%.3f s=%s m=%.4f mu=%.4f E=%.4f", stage_no, k,
                      context.goal_distance, action, m, mu[idx], fsrr.E)
            if it > config.burn_in and fsrr.E <= eps:
                converged = True
                break
        stages.append({"stage": stage_no, "scenario": scenario, "epsilon": eps,
                       "iterations": it, "converged": converged, "fsrr": fsrr.E})
        log.info("stage %d (%s) finished after %d iterations, fSRR %.4g%s", stage_no, scenario,
                 it, fsrr.E, "" if converged else " (not converged)")
    return TrainResult(gp, rows, converged, stages)


def lift_model(model: GpState, kernel: KernelParams) -> GpState:
    """Re-express a model's observations with ``kernel``'s context dimension.

    Flat-ground observations gain zero terrain features; the kernel of the
    returned state is ``kernel``.
    """
    nc_old = model.params.n_context
    nc_new = kernel.n_context
    X = model.X
    if nc_new < nc_old:
        raise ValueError("cannot drop context dimensions from a model")
    if nc_new > nc_old:
        pad = np.zeros((len(X), nc_new - nc_old))
        X = np.hstack([X[:, :nc_old], pad, X[:, nc_old:]])
    return GpState(kernel, X, model.m.copy())


def write_log(rows, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        w.writeheader()
        for row in rows:
            out = dict(row)
            for key in ("goal_distance", "merit", "mu_pred", "sigma_pred", "beta", "fsrr"):
                out[key] = repr(float(out[key]))
            w.writerow(out)


def read_log(path) -> list:
    with open(Path(path), newline="") as fh:
        rows = []
        for row in csv.DictReader(fh):
            for key in ("goal_distance", "merit", "mu_pred", "sigma_pred", "beta", "fsrr"):
                row[key] = float(row[key])
            row["stage"] = int(row["stage"])
            row["k"] = int(row["k"])
            row["solver_converged"] = row["solver_converged"] == "True"
            rows.append(row)
        return rows
