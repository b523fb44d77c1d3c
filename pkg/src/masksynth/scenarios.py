"""Scenario builders: sensor-based models, the two shipped instances, and
reference masking policies.

Both shipped scenarios share one pattern: binary sensors with disjoint
coverage detect the system inside their region with probability ``beta``
(zero false positives), the masking agent silences at most one sensor per
step, masking actions are visible to the observer, and re-masking the same
sensor costs half its set price.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AmbiguousSecretCoverage, InvalidPolicyRow
from .model import HmmSpec, MaskMdp, validate
from .policy import ConditioningMode, PolicyParams

NULL_READING = "0"
SATURATION = 50.0  # logit offset giving pi > 1 - 1e-20 on the chosen action


@dataclass(frozen=True)
class Sensor:
    label: str
    coverage: frozenset  # state indices
    detection_prob: float


@dataclass
class SensorScenario:
    """Declarative layer between scenario files / builders and the HMM."""

    name: str
    states: tuple
    transition: np.ndarray
    sensors: tuple                  # of Sensor
    mask_actions: tuple             # labels; each a sensor label or the none label
    none_action: str
    base_costs: dict                # sensor label -> set cost
    repeat_factor: float
    no_mask_cost: float
    initial_dist: np.ndarray        # over states
    initial_config: str
    secret_states: frozenset        # state indices
    horizon: int
    discount: float
    budget: float
    mask_visible: bool = True

    def build(self) -> HmmSpec:
        return validate(_sensor_scenario_to_spec(self))


def _sensor_scenario_to_spec(scn: SensorScenario) -> HmmSpec:
    n_s = len(scn.states)
    n_a = len(scn.mask_actions)
    covering = np.full(n_s, -1, dtype=int)  # sensor index covering each state
    for i, sensor in enumerate(scn.sensors):
        for s in sensor.coverage:
            if covering[s] >= 0:
                raise AmbiguousSecretCoverage(
                    f"state {scn.states[s]!r} is covered by sensors "
                    f"{scn.sensors[covering[s]].label!r} and {sensor.label!r}"
                )
            covering[s] = i

    readings = [sensor.label for sensor in scn.sensors] + [NULL_READING]
    if scn.mask_visible:
        observations = tuple(
            f"{r}|{a}" for r in readings for a in scn.mask_actions
        )
        def obs_index(reading: str, action: int) -> int:
            return readings.index(reading) * n_a + action
    else:
        observations = tuple(readings)
        def obs_index(reading: str, action: int) -> int:
            return readings.index(reading)

    emission = np.zeros((n_s, n_a, len(observations)))
    for s in range(n_s):
        for a, action_label in enumerate(scn.mask_actions):
            c = covering[s]
            if c >= 0 and scn.sensors[c].label != action_label:
                beta = scn.sensors[c].detection_prob
                emission[s, a, obs_index(scn.sensors[c].label, a)] += beta
                emission[s, a, obs_index(NULL_READING, a)] += 1.0 - beta
            else:
                emission[s, a, obs_index(NULL_READING, a)] = 1.0

    cost = np.zeros((n_s, n_a, n_a))
    for prev in range(n_a):
        for nxt, nxt_label in enumerate(scn.mask_actions):
            if nxt_label == scn.none_action:
                c = scn.no_mask_cost
            elif prev == nxt:
                c = scn.base_costs[nxt_label] * scn.repeat_factor
            else:
                c = scn.base_costs[nxt_label]
            cost[:, prev, nxt] = c

    sensor_by_label = {sensor.label: sensor for sensor in scn.sensors}
    action_coverage = tuple(
        frozenset(sensor_by_label[a].coverage) if a in sensor_by_label else frozenset()
        for a in scn.mask_actions
    )
    return HmmSpec(
        states=tuple(scn.states),
        transition=np.asarray(scn.transition, dtype=np.float64),
        observations=observations,
        mask_actions=tuple(scn.mask_actions),
        emission=emission,
        initial_dist=np.asarray(scn.initial_dist, dtype=np.float64),
        initial_config=scn.mask_actions.index(scn.initial_config),
        secret_set=frozenset(scn.secret_states),
        mask_cost=cost,
        horizon=scn.horizon,
        discount=scn.discount,
        budget=scn.budget,
        no_mask_action=scn.mask_actions.index(scn.none_action),
        action_coverage=action_coverage,
    )


def illustrative_scenario(epsilon: float = 60.0, discount: float = 1.0) -> SensorScenario:
    """Declarative form of the seven-state branching scenario.

    One uniform three-way branch from the start, then a deterministic hop
    into one of three absorbing states, two of which are secret.  Sensors R,
    G, P, B watch states s1, s3, s4, s6 with detection probability 0.85.
    Masking R, G or P costs 10, masking B costs 30, repeats half price.
    """
    n = 7
    transition = np.zeros((n, n))
    transition[0, 1:4] = 1.0 / 3.0
    transition[1, 4] = 1.0
    transition[2, 5] = 1.0
    transition[3, 6] = 1.0
    for s in (4, 5, 6):
        transition[s, s] = 1.0
    scn = SensorScenario(
        name="illustrative",
        states=tuple(f"s{i}" for i in range(n)),
        transition=transition,
        sensors=(
            Sensor("R", frozenset({1}), 0.85),
            Sensor("G", frozenset({3}), 0.85),
            Sensor("P", frozenset({4}), 0.85),
            Sensor("B", frozenset({6}), 0.85),
        ),
        mask_actions=("R", "G", "P", "B", "N"),
        none_action="N",
        base_costs={"R": 10.0, "G": 10.0, "P": 10.0, "B": 30.0},
        repeat_factor=0.5,
        no_mask_cost=0.0,
        initial_dist=np.eye(n)[0],
        initial_config="N",
        secret_states=frozenset({4, 6}),
        horizon=2,
        discount=discount,
        budget=epsilon,
    )
    return scn


def build_illustrative(epsilon: float = 60.0, discount: float = 1.0) -> HmmSpec:
    """Validated model for the seven-state branching scenario."""
    return illustrative_scenario(epsilon=epsilon, discount=discount).build()


# Grid directions: row-major indexing from the top-left, so North decreases
# the row index.
_MOVES = {"N": (-1, 0), "S": (1, 0), "E": (0, 1), "W": (0, -1)}
_LATERALS = {"N": ("E", "W"), "S": ("E", "W"), "E": ("N", "S"), "W": ("N", "S")}


@dataclass
class GridworldConfig:
    """Grid layout, robot goal policy, and sensor/masking economics."""

    rows: int
    cols: int
    slip_prob: float                 # probability of reaching the intended cell
    walls: frozenset
    hazards: frozenset               # absorbing sink cells
    secrets: frozenset
    initial_cells: tuple
    robot_policy: dict               # cell -> tuple of direction labels (uniform mix)
    sensors: tuple                   # of (label, frozenset of cells, detection_prob)
    base_costs: dict
    repeat_factor: float = 0.5
    no_mask_cost: float = 0.0
    none_action: str = "N"
    horizon: int = 10
    discount: float = 0.9
    budget: float = 70.0
    mask_visible: bool = True
    goals_absorbing: bool = True

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols


# Goal policy shipped with the default facility layout.  This is an
# approximate hand transcription (the layout's authoritative form is a
# drawing, not a table), calibrated so the summary statistics of the induced
# chain match the reference values; builders accept any replacement table.
DEFAULT_ROBOT_POLICY = {
    0: ("S",), 2: ("S",), 3: ("S",), 4: ("S",), 5: ("S",),
    6: ("E",), 7: ("E",), 8: ("N", "E"),
    10: ("W",), 11: ("W",),
    12: ("N",), 14: ("N",), 16: ("N",),
    18: ("N",),
    21: ("W",), 22: ("S",),
    24: ("E",), 25: ("E",), 26: ("N", "E"), 27: ("E", "N"), 28: ("E", "N"),
    29: ("N",),
    30: ("N",), 31: ("E",), 32: ("N",), 33: ("N",), 34: ("N", "E"),
}


def default_gridworld_config(beta: float = 0.85, epsilon: float = 70.0) -> GridworldConfig:
    """The shipped 6x6 facility instance; ``beta`` sets every sensor alike."""
    return GridworldConfig(
        rows=6,
        cols=6,
        slip_prob=0.8,
        walls=frozenset({17, 19}),
        hazards=frozenset({1, 13, 15, 35}),
        secrets=frozenset({9, 20, 23}),
        initial_cells=(12, 30),
        robot_policy=dict(DEFAULT_ROBOT_POLICY),
        sensors=(
            ("A", frozenset({3, 4, 9, 10}), beta),
            ("B", frozenset({21, 22, 28}), beta),
            ("C", frozenset({23, 29, 35}), beta),
            ("D", frozenset({6, 7, 8, 12, 13, 14}), beta),
        ),
        base_costs={"A": 20.0, "B": 25.0, "C": 15.0, "D": 10.0},
        budget=epsilon,
    )


def _grid_transition(cfg: GridworldConfig) -> np.ndarray:
    n = cfg.n_cells
    sinks = set(cfg.hazards) | (set(cfg.secrets) if cfg.goals_absorbing else set())

    def resolve(cell: int, direction: str) -> int:
        r, c = divmod(cell, cfg.cols)
        dr, dc = _MOVES[direction]
        r2, c2 = r + dr, c + dc
        if not (0 <= r2 < cfg.rows and 0 <= c2 < cfg.cols):
            return cell
        target = r2 * cfg.cols + c2
        return cell if target in cfg.walls else target

    transition = np.zeros((n, n))
    for cell in range(n):
        if cell in sinks or cell in cfg.walls or cell not in cfg.robot_policy:
            transition[cell, cell] = 1.0
            continue
        arrows = cfg.robot_policy[cell]
        side = (1.0 - cfg.slip_prob) / 2.0
        for direction in arrows:
            w = 1.0 / len(arrows)
            transition[cell, resolve(cell, direction)] += w * cfg.slip_prob
            for lateral in _LATERALS[direction]:
                transition[cell, resolve(cell, lateral)] += w * side
    return transition


def _check_policy_coverage(cfg: GridworldConfig, transition: np.ndarray) -> None:
    """Reachable non-sink cells must carry a control action."""
    sinks = set(cfg.hazards) | (set(cfg.secrets) if cfg.goals_absorbing else set())
    reached = set(cfg.initial_cells)
    frontier = list(reached)
    while frontier:
        cell = frontier.pop()
        for nxt in np.flatnonzero(transition[cell] > 0.0):
            if nxt not in reached:
                reached.add(int(nxt))
                frontier.append(int(nxt))
    for cell in sorted(reached):
        if cell in sinks or cell in cfg.walls:
            continue
        if cell not in cfg.robot_policy:
            raise InvalidPolicyRow(f"cell {cell} is reachable but has no control action")


def build_gridworld(cfg: GridworldConfig) -> HmmSpec:
    """Compose the goal policy with slip dynamics and attach the sensor grid."""
    if not 0.0 < cfg.slip_prob <= 1.0:
        raise ValueError(f"slip_prob must be in (0, 1], got {cfg.slip_prob}")
    special = [
        ("walls", cfg.walls), ("hazards", cfg.hazards), ("secrets", cfg.secrets)
    ]
    for (name_a, set_a) in special:
        for (name_b, set_b) in special:
            if name_a < name_b and set_a & set_b:
                raise ValueError(f"{name_a} and {name_b} overlap: {sorted(set_a & set_b)}")
        if any(not 0 <= c < cfg.n_cells for c in set_a):
            raise ValueError(f"{name_a} contains an out-of-grid cell")

    transition = _grid_transition(cfg)
    _check_policy_coverage(cfg, transition)
    initial = np.zeros(cfg.n_cells)
    initial[list(cfg.initial_cells)] = 1.0 / len(cfg.initial_cells)
    scn = SensorScenario(
        name="gridworld",
        states=tuple(f"c{i}" for i in range(cfg.n_cells)),
        transition=transition,
        sensors=tuple(Sensor(lbl, frozenset(cov), beta) for lbl, cov, beta in cfg.sensors),
        mask_actions=tuple(list(cfg.base_costs) + [cfg.none_action]),
        none_action=cfg.none_action,
        base_costs=dict(cfg.base_costs),
        repeat_factor=cfg.repeat_factor,
        no_mask_cost=cfg.no_mask_cost,
        initial_dist=initial,
        initial_config=cfg.none_action,
        secret_states=frozenset(cfg.secrets),
        horizon=cfg.horizon,
        discount=cfg.discount,
        budget=cfg.budget,
        mask_visible=cfg.mask_visible,
    )
    return scn.build()


def no_masking_policy(mdp: MaskMdp) -> PolicyParams:
    """Saturated mask that always picks the no-mask configuration."""
    spec = mdp.spec
    if spec.no_mask_action is None:
        raise ValueError("model does not declare a no-mask action")
    theta = np.zeros((spec.n_states, spec.n_actions))
    theta[:, spec.no_mask_action] = SATURATION
    return PolicyParams(theta, ConditioningMode.STATE_ONLY)


def final_state_masking_policy(mdp: MaskMdp) -> PolicyParams:
    """Deterministic reference mask guarding the step before a secret.

    Wherever some secret state is reachable in one step, mask the sensor
    covering it (lowest sensor index on ties); otherwise mask nothing.
    Requires every secret state to be covered by at most one sensor.
    """
    spec = mdp.spec
    if spec.no_mask_action is None or spec.action_coverage is None:
        raise ValueError("model does not declare sensor-coverage metadata")
    cover_actions = {}
    for g in spec.secret_set:
        acts = [
            a for a, cov in enumerate(spec.action_coverage)
            if g in cov and a != spec.no_mask_action
        ]
        if len(acts) > 1:
            raise AmbiguousSecretCoverage(
                f"secret state {spec.states[g]!r} is covered by several sensors"
            )
        if acts:
            cover_actions[g] = acts[0]

    theta = np.zeros((spec.n_states, spec.n_actions))
    for s in range(spec.n_states):
        reachable = [g for g in spec.secret_set if spec.transition[s, g] > 0.0]
        candidates = sorted(cover_actions[g] for g in reachable if g in cover_actions)
        choice = candidates[0] if candidates else spec.no_mask_action
        theta[s, choice] = SATURATION
    return PolicyParams(theta, ConditioningMode.STATE_ONLY)
