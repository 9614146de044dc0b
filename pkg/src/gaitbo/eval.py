"""Duels between schedule selectors, and plot data for trained models.

A duel samples contexts, lets both players choose a schedule for the same
(context, terrain) instance, scores both with the same NLP stack and awards
the round to the lower refined merit.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bo import (ActionSpace, MeritOracle, TerrainSettings, enumerate_actions, lift_context,
                 sample_context)
from .collocation import Action, Context
from .gp import GpState

BASELINE_SCHEDULES = (
    Action((3, 0, 0, 0, 0)),
    Action((4, 3, 5, 0, 0)),
    Action((5, 4, 6, 0, 0)),
    Action((4, 3, 3, 3, 4)),
    Action((5, 4, 3, 4, 6)),
)
FAILURE_MERIT = 0.9
TIE_TOL = 1e-9


def is_failure(m: float, converged: bool, threshold: float = FAILURE_MERIT) -> bool:
    return (not converged) or m > threshold


# -- players --------------------------------------------------------------------

def predict_action(model: GpState, context: Context,
                   action_space: ActionSpace | None = None) -> Action:
    """Posterior-mean argmin; the model only sees the context entries it was trained on."""
    action_space = enumerate_actions() if action_space is None else action_space
    context = lift_context(context, model.params.n_context - 1)
    mu = model.shared_context_posterior(context.as_array(), action_space.matrix, std=False)
    return action_space[int(np.argmin(mu))]


@dataclass(frozen=True)
class BaselineSet:
    actions: tuple = BASELINE_SCHEDULES

    def __post_init__(self):
        if len(self.actions) == 0:
            raise ValueError("baseline set is empty")
        object.__setattr__(self, "actions", tuple(
            a if isinstance(a, Action) else Action(tuple(a)) for a in self.actions))


def baseline_select(context: Context, terrain, baseline: BaselineSet, oracle):
    """Solve every baseline schedule and keep the best one.

    Returns ``(action, merit, converged, all_failed)``. Ties go to the
    lexicographically smallest schedule so the result does not depend on the
    order of the set.
    """
    scored = []
    for action in sorted(baseline.actions):
        m, ok = oracle(context, terrain, action)
        scored.append((m, action, ok))
    best = min(scored, key=lambda t: (t[0], t[1]))
    all_failed = all(is_failure(m, ok) for m, _, ok in scored)
    return best[1], best[0], best[2], all_failed


class ModelPlayer:
    def __init__(self, model: GpState, name: str = "model"):
        self.model = model
        self.name = name

    def play(self, context, terrain, oracle):
        action = predict_action(self.model, context)
        m, ok = oracle(context, terrain, action)
        return action, m, ok


class BaselinePlayer:
    def __init__(self, baseline: BaselineSet = BaselineSet(), name: str = "baseline"):
        self.baseline = baseline
        self.name = name

    def play(self, context, terrain, oracle):
        action, m, ok, _ = baseline_select(context, terrain, self.baseline, oracle)
        return action, m, ok


class _CachedOracle:
    """Solves each (action) once per round; both players see identical scores."""

    def __init__(self, oracle):
        self.oracle = oracle
        self.cache = {}

    def __call__(self, context, terrain, action):
        key = (context.goal_distance, tuple(context.terrain_features), action)
        if key not in self.cache:
            self.cache[key] = self.oracle(context, terrain, action)
        return self.cache[key]


# -- duel -----------------------------------------------------------------------

@dataclass
class DuelRecord:
    round: int
    goal_distance: float
    terrain_features: np.ndarray
    action1: Action
    merit1: float
    converged1: bool
    action2: Action
    merit2: float
    converged2: bool
    winner: int          # 1, 2, or 0 for a tie


@dataclass
class DuelReport:
    player1: str
    player2: str
    records: list = field(default_factory=list)

    @property
    def n_rounds(self) -> int:
        return len(self.records)

    @property
    def ties(self) -> int:
        return sum(r.winner == 0 for r in self.records)

    @property
    def wins1(self) -> float:
        return sum(r.winner == 1 for r in self.records) + 0.5 * self.ties

    @property
    def wins2(self) -> float:
        return sum(r.winner == 2 for r in self.records) + 0.5 * self.ties

    @property
    def win_fraction1(self) -> float:
        return self.wins1 / self.n_rounds if self.records else 0.0

    @property
    def failures1(self) -> int:
        return sum(is_failure(r.merit1, r.converged1) for r in self.records)

    @property
    def failures2(self) -> int:
        return sum(is_failure(r.merit2, r.converged2) for r in self.records)

    @property
    def failure_rate1(self) -> float:
        return self.failures1 / self.n_rounds if self.records else 0.0

    @property
    def failure_rate2(self) -> float:
        return self.failures2 / self.n_rounds if self.records else 0.0

    def summary(self) -> dict:
        m1 = np.array([r.merit1 for r in self.records])
        m2 = np.array([r.merit2 for r in self.records])
        return {
            "player1": self.player1, "player2": self.player2, "rounds": self.n_rounds,
            "wins1": self.wins1, "wins2": self.wins2, "ties": self.ties,
            "win_fraction1": self.win_fraction1,
            "failures1": self.failures1, "failures2": self.failures2,
            "failure_rate1": self.failure_rate1, "failure_rate2": self.failure_rate2,
            "mean_merit1": float(m1.mean()) if len(m1) else None,
            "mean_merit2": float(m2.mean()) if len(m2) else None,
        }

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["round", "goal_distance", "terrain_features", "action1", "merit1",
                        "converged1", "action2", "merit2", "converged2", "winner"])
            for r in self.records:
                w.writerow([r.round, repr(r.goal_distance),
                            " ".join(repr(float(v)) for v in r.terrain_features),
                            str(r.action1), repr(r.merit1), r.converged1,
                            str(r.action2), repr(r.merit2), r.converged2, r.winner])

    @classmethod
    def from_csv(cls, path, player1: str = "player1", player2: str = "player2") -> "DuelReport":
        report = cls(player1, player2)
        with open(Path(path), newline="") as fh:
            for row in csv.DictReader(fh):
                feats = np.array([float(v) for v in row["terrain_features"].split()])
                report.records.append(DuelRecord(
                    int(row["round"]), float(row["goal_distance"]), feats,
                    _parse_action(row["action1"]), float(row["merit1"]), row["converged1"] == "True",
                    _parse_action(row["action2"]), float(row["merit2"]), row["converged2"] == "True",
                    int(row["winner"])))
        return report

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2))


def _parse_action(text: str) -> Action:
    return Action(tuple(int(v) for v in text.strip("[]").split(",")))


def duel(player1, player2, n_z: int, seed: int = 0, scenario: str = "flat", oracle=None,
         terrain: TerrainSettings = TerrainSettings(), callback=None) -> DuelReport:
    """Play ``n_z`` rounds on freshly sampled contexts."""
    oracle = MeritOracle() if oracle is None else oracle
    rng = np.random.default_rng(seed)
    report = DuelReport(player1.name, player2.name)
    for i in range(n_z):
        context, terrain_model = sample_context(rng, scenario, terrain)
        scorer = _CachedOracle(oracle)
        a1, m1, ok1 = player1.play(context, terrain_model, scorer)
        a2, m2, ok2 = player2.play(context, terrain_model, scorer)
        if abs(m1 - m2) <= TIE_TOL:
            winner = 0
        else:
            winner = 1 if m1 < m2 else 2
        rec = DuelRecord(i, context.goal_distance, context.terrain_features, a1, float(m1),
                         bool(ok1), a2, float(m2), bool(ok2), winner)
        report.records.append(rec)
        if callback is not None:
            callback(rec)
    return report


def smooth_merits(series, window: int) -> np.ndarray:
    """Centred moving average; near the ends the window is truncated."""
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        raise ValueError("empty series")
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be odd and >= 1")
    h = window // 2
    c = np.concatenate([[0.0], np.cumsum(x)])
    i = np.arange(len(x))
    lo = np.maximum(i - h, 0)
    hi = np.minimum(i + h + 1, len(x))
    return (c[hi] - c[lo]) / (hi - lo)


# -- transition map -------------------------------------------------------------

def transition_map(model: GpState, resolution: float = 0.001, goal_min: float = 0.0,
                   goal_max: float = 1.0, terrain_features=None):
    """Predicted schedule along a goal-distance sweep; returns a list of rows."""
    n = int(round((goal_max - goal_min) / resolution)) + 1
    goals = np.linspace(goal_min, goal_max, n)
    feats = np.zeros(0) if terrain_features is None else np.asarray(terrain_features, float)
    space = enumerate_actions()
    rows = []
    for g in goals:
        action = predict_action(model, Context(float(g), feats), space)
        rows.append({"goal_distance": float(g), "action": action,
                     "n_phases": action.n_phases, "schedule": action.schedule_string()})
    return rows


def write_transition_map(rows, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["goal_distance", "action", "n_phases", "schedule"])
        for r in rows:
            w.writerow([f"{r['goal_distance']:.6f}", str(r["action"]), r["n_phases"],
                        r["schedule"]])
