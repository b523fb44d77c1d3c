"""File formats: scenario definitions, serialized policies, traces, batches.

Scenario files are TOML with the sections ``states``, ``transitions``,
``sensors``, ``mask_actions``, ``mask_costs``, ``initial``, ``secret`` and
``problem`` (see ``docs/scenario-format.md`` for the full schema).  A file
may instead carry a ``gridworld`` section describing a grid layout plus a
per-cell control policy, from which the flat sections are derived.

Policy files are line-oriented text carrying, per parameter row, both the
action probabilities (for people) and the raw logits in C99 hex notation
(for bit-exact round-trips).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib  # py >= 3.11
except ModuleNotFoundError:  # pragma: no cover - environment specific
    import tomli as tomllib

from .costs import TrajectoryBatch
from .errors import PolicyModelMismatch, ScenarioFormatError
from .model import HmmSpec, MaskMdp
from .optimizer import SynthesisTrace
from .policy import ConditioningMode, PolicyParams
from .scenarios import GridworldConfig, Sensor, SensorScenario, build_gridworld

TRACE_HEADER = "iter,entropy,value,lambda,grad_norm,wall_s"


@dataclass
class ScenarioDoc:
    """Parsed scenario file, kept in declarative form so overrides (sensor
    detection probability, budget, horizon...) can be applied before the
    model is built.  ``synthesis_defaults`` carries the optional [synthesis]
    section: per-scenario optimizer settings that CLI flags override."""

    name: str
    sensor_scenario: Optional[SensorScenario] = None
    gridworld: Optional[GridworldConfig] = None
    synthesis_defaults: dict = None

    def build(self, beta=None, gamma=None, epsilon=None, horizon=None) -> HmmSpec:
        if self.gridworld is not None:
            cfg = self.gridworld
            if beta is not None:
                cfg = replace(
                    cfg, sensors=tuple((l, c, float(beta)) for l, c, _ in cfg.sensors)
                )
            if gamma is not None:
                cfg = replace(cfg, discount=float(gamma))
            if epsilon is not None:
                cfg = replace(cfg, budget=float(epsilon))
            if horizon is not None:
                cfg = replace(cfg, horizon=int(horizon))
            return build_gridworld(cfg)
        scn = self.sensor_scenario
        if beta is not None:
            scn = replace(
                scn,
                sensors=tuple(
                    Sensor(s.label, s.coverage, float(beta)) for s in scn.sensors
                ),
            )
        if gamma is not None:
            scn = replace(scn, discount=float(gamma))
        if epsilon is not None:
            scn = replace(scn, budget=float(epsilon))
        if horizon is not None:
            scn = replace(scn, horizon=int(horizon))
        return scn.build()


def _require(table: dict, section: str, key: str):
    if key not in table:
        raise ScenarioFormatError(f"[{section}] is missing required key {key!r}")
    return table[key]


def _section(doc: dict, name: str) -> dict:
    if name not in doc:
        raise ScenarioFormatError(f"missing section [{name}]")
    return doc[name]


def load_scenario(path) -> ScenarioDoc:
    """Parse a scenario file; errors name the offending section or line."""
    path = Path(path)
    if not path.exists():
        raise ScenarioFormatError(f"scenario file not found: {path}")
    try:
        with open(path, "rb") as f:
            doc = tomllib.load(f)
    except tomllib.TOMLDecodeError as exc:  # message carries line/column
        raise ScenarioFormatError(f"{path}: {exc}") from exc

    name = doc.get("scenario", {}).get("name", path.stem)
    synthesis_defaults = dict(doc.get("synthesis", {}))
    problem = _section(doc, "problem")
    horizon = int(_require(problem, "problem", "horizon"))
    discount = float(problem.get("discount", 1.0))
    budget = float(_require(problem, "problem", "budget"))
    mask_visible = bool(problem.get("mask_visible", True))

    costs_tbl = _section(doc, "mask_costs")
    base_costs = {str(k): float(v) for k, v in _require(costs_tbl, "mask_costs", "base").items()}
    repeat = float(costs_tbl.get("repeat_factor", 0.5))
    no_mask_cost = float(costs_tbl.get("no_mask_cost", 0.0))
    actions_tbl = _section(doc, "mask_actions")
    action_labels = tuple(str(a) for a in _require(actions_tbl, "mask_actions", "labels"))
    none_action = str(_require(actions_tbl, "mask_actions", "none"))
    if none_action not in action_labels:
        raise ScenarioFormatError(
            f"[mask_actions] none action {none_action!r} is not among the labels"
        )

    if "gridworld" in doc:
        for forbidden in ("states", "transitions", "sensors", "initial", "secret"):
            if forbidden in doc:
                raise ScenarioFormatError(
                    f"[{forbidden}] must be omitted when [gridworld] is present"
                )
        gw = doc["gridworld"]
        sensors = tuple(
            (
                str(_require(s, "gridworld.sensors", "name")),
                frozenset(int(c) for c in _require(s, "gridworld.sensors", "coverage")),
                float(_require(s, "gridworld.sensors", "detection_prob")),
            )
            for s in gw.get("sensors", [])
        )
        for s in gw.get("sensors", []):
            if float(s.get("false_positive_prob", 0.0)) != 0.0:
                raise ScenarioFormatError(
                    "[gridworld.sensors] nonzero false_positive_prob is not supported"
                )
        try:
            robot_policy = {
                int(cell): tuple(str(d) for d in dirs)
                for cell, dirs in _require(gw, "gridworld", "robot_policy").items()
            }
        except ValueError as exc:
            raise ScenarioFormatError(f"[gridworld.robot_policy] bad cell key: {exc}") from exc
        cfg = GridworldConfig(
            rows=int(_require(gw, "gridworld", "rows")),
            cols=int(_require(gw, "gridworld", "cols")),
            slip_prob=float(_require(gw, "gridworld", "slip_prob")),
            walls=frozenset(int(c) for c in gw.get("walls", [])),
            hazards=frozenset(int(c) for c in gw.get("hazards", [])),
            secrets=frozenset(int(c) for c in _require(gw, "gridworld", "secrets")),
            initial_cells=tuple(int(c) for c in _require(gw, "gridworld", "initial_cells")),
            robot_policy=robot_policy,
            sensors=sensors,
            base_costs=base_costs,
            repeat_factor=repeat,
            no_mask_cost=no_mask_cost,
            none_action=none_action,
            horizon=horizon,
            discount=discount,
            budget=budget,
            mask_visible=mask_visible,
            goals_absorbing=bool(gw.get("goals_absorbing", True)),
        )
        return ScenarioDoc(name=name, gridworld=cfg, synthesis_defaults=synthesis_defaults)

    states_tbl = _section(doc, "states")
    states = tuple(str(s) for s in _require(states_tbl, "states", "labels"))
    index = {s: i for i, s in enumerate(states)}

    def state_index(label, section):
        if str(label) not in index:
            raise ScenarioFormatError(f"[{section}] references unknown state {label!r}")
        return index[str(label)]

    transitions = _section(doc, "transitions")
    entries = _require(transitions, "transitions", "entries")
    matrix = np.zeros((len(states), len(states)))
    for row in entries:
        if len(row) != 3:
            raise ScenarioFormatError(
                f"[transitions] entry {row!r} is not (from, to, prob)"
            )
        frm, to, prob = row
        matrix[state_index(frm, "transitions"), state_index(to, "transitions")] += float(prob)

    sensors = []
    for s in doc.get("sensors", []):
        if float(s.get("false_positive_prob", 0.0)) != 0.0:
            raise ScenarioFormatError(
                "[sensors] nonzero false_positive_prob is not supported"
            )
        sensors.append(
            Sensor(
                label=str(_require(s, "sensors", "name")),
                coverage=frozenset(
                    state_index(c, "sensors") for c in _require(s, "sensors", "coverage")
                ),
                detection_prob=float(_require(s, "sensors", "detection_prob")),
            )
        )

    initial_tbl = _section(doc, "initial")
    dist = np.zeros(len(states))
    for label, p in _require(initial_tbl, "initial", "dist").items():
        dist[state_index(label, "initial")] = float(p)
    initial_config = str(_require(initial_tbl, "initial", "config"))
    if initial_config not in action_labels:
        raise ScenarioFormatError(
            f"[initial] config {initial_config!r} is not a mask action"
        )

    secret_tbl = _section(doc, "secret")
    secret = frozenset(
        state_index(s, "secret") for s in _require(secret_tbl, "secret", "states")
    )

    scn = SensorScenario(
        name=name,
        states=states,
        transition=matrix,
        sensors=tuple(sensors),
        mask_actions=action_labels,
        none_action=none_action,
        base_costs=base_costs,
        repeat_factor=repeat,
        no_mask_cost=no_mask_cost,
        initial_dist=dist,
        initial_config=initial_config,
        secret_states=secret,
        horizon=horizon,
        discount=discount,
        budget=budget,
        mask_visible=mask_visible,
    )
    return ScenarioDoc(name=name, sensor_scenario=scn, synthesis_defaults=synthesis_defaults)


def _toml_str(s: str) -> str:
    return json.dumps(str(s))


def save_scenario(doc: ScenarioDoc, path) -> None:
    """Write a scenario back to TOML (the exact schema load_scenario reads)."""
    lines = [f"[scenario]", f"name = {_toml_str(doc.name)}", ""]
    if doc.synthesis_defaults:
        lines.append("[synthesis]")
        for key, val in doc.synthesis_defaults.items():
            if isinstance(val, bool):
                lines.append(f"{key} = {str(val).lower()}")
            elif isinstance(val, str):
                lines.append(f"{key} = {_toml_str(val)}")
            else:
                lines.append(f"{key} = {val!r}")
        lines.append("")
    if doc.gridworld is not None:
        cfg = doc.gridworld
        lines += [
            "[problem]",
            f"horizon = {cfg.horizon}",
            f"discount = {cfg.discount!r}",
            f"budget = {cfg.budget!r}",
            f"mask_visible = {str(cfg.mask_visible).lower()}",
            "",
            "[mask_actions]",
            "labels = [" + ", ".join(_toml_str(a) for a in list(cfg.base_costs) + [cfg.none_action]) + "]",
            f"none = {_toml_str(cfg.none_action)}",
            "",
            "[mask_costs]",
            "base = {" + ", ".join(f"{_toml_str(k)} = {float(v)!r}" for k, v in cfg.base_costs.items()) + "}",
            f"repeat_factor = {cfg.repeat_factor!r}",
            f"no_mask_cost = {cfg.no_mask_cost!r}",
            "",
            "[gridworld]",
            f"rows = {cfg.rows}",
            f"cols = {cfg.cols}",
            f"slip_prob = {cfg.slip_prob!r}",
            f"walls = {sorted(cfg.walls)}",
            f"hazards = {sorted(cfg.hazards)}",
            f"secrets = {sorted(cfg.secrets)}",
            f"initial_cells = {list(cfg.initial_cells)}",
            f"goals_absorbing = {str(cfg.goals_absorbing).lower()}",
            "",
            "[gridworld.robot_policy]",
        ]
        for cell in sorted(cfg.robot_policy):
            dirs = ", ".join(_toml_str(d) for d in cfg.robot_policy[cell])
            lines.append(f'"{cell}" = [{dirs}]')
        lines.append("")
        for label, coverage, beta in cfg.sensors:
            lines += [
                "[[gridworld.sensors]]",
                f"name = {_toml_str(label)}",
                f"coverage = {sorted(coverage)}",
                f"detection_prob = {float(beta)!r}",
                "false_positive_prob = 0.0",
                "",
            ]
    else:
        scn = doc.sensor_scenario
        lines += [
            "[problem]",
            f"horizon = {scn.horizon}",
            f"discount = {scn.discount!r}",
            f"budget = {scn.budget!r}",
            f"mask_visible = {str(scn.mask_visible).lower()}",
            "",
            "[states]",
            "labels = [" + ", ".join(_toml_str(s) for s in scn.states) + "]",
            "",
            "[secret]",
            "states = [" + ", ".join(_toml_str(scn.states[g]) for g in sorted(scn.secret_states)) + "]",
            "",
            "[initial]",
            "dist = {" + ", ".join(
                f"{_toml_str(scn.states[i])} = {float(p)!r}"
                for i, p in enumerate(scn.initial_dist) if p > 0.0
            ) + "}",
            f"config = {_toml_str(scn.initial_config)}",
            "",
            "[mask_actions]",
            "labels = [" + ", ".join(_toml_str(a) for a in scn.mask_actions) + "]",
            f"none = {_toml_str(scn.none_action)}",
            "",
            "[mask_costs]",
            "base = {" + ", ".join(f"{_toml_str(k)} = {float(v)!r}" for k, v in scn.base_costs.items()) + "}",
            f"repeat_factor = {scn.repeat_factor!r}",
            f"no_mask_cost = {scn.no_mask_cost!r}",
            "",
            "[transitions]",
            "entries = [",
        ]
        for i, row in enumerate(np.asarray(scn.transition)):
            for j in np.flatnonzero(row):
                lines.append(
                    f"    [{_toml_str(scn.states[i])}, {_toml_str(scn.states[j])}, {float(row[j])!r}],"
                )
        lines.append("]")
        lines.append("")
        for sensor in scn.sensors:
            lines += [
                "[[sensors]]",
                f"name = {_toml_str(sensor.label)}",
                "coverage = [" + ", ".join(_toml_str(scn.states[c]) for c in sorted(sensor.coverage)) + "]",
                f"detection_prob = {float(sensor.detection_prob)!r}",
                "false_positive_prob = 0.0",
                "",
            ]
    Path(path).write_text("\n".join(lines) + "\n")


def save_policy(policy: PolicyParams, mdp: MaskMdp, path) -> None:
    """Serialize a mask with per-row probabilities and raw hex logits."""
    from .policy import action_probs

    spec = mdp.spec
    pi = action_probs(policy, mdp)
    lines = [
        "# dynamic mask parameters",
        f"mode: {policy.mode.value}",
        "actions: " + " ".join(spec.mask_actions),
        f"rows: {policy.theta.shape[0]}",
    ]
    for r in range(policy.theta.shape[0]):
        if policy.mode is ConditioningMode.STATE_ONLY:
            key = f"{spec.states[r]} *"
            probs = pi[r * spec.n_actions]
        else:
            s, cfg = divmod(r, spec.n_actions)
            key = f"{spec.states[s]} {spec.mask_actions[cfg]}"
            probs = pi[r]
        prob_txt = " ".join(f"{p:.6f}" for p in probs)
        hex_txt = " ".join(float(v).hex() for v in policy.theta[r])
        lines.append(f"row {key} | probs {prob_txt} | theta {hex_txt}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_policy(path, mdp: MaskMdp) -> PolicyParams:
    """Inverse of :func:`save_policy`; exact on theta.

    Raises :class:`PolicyModelMismatch` when the file's actions, mode or row
    keys do not fit the model.
    """
    spec = mdp.spec
    lines = [
        ln for ln in Path(path).read_text().splitlines()
        if ln.strip() and not ln.startswith("#")
    ]
    header = dict(ln.split(":", 1) for ln in lines[:3])
    try:
        mode = ConditioningMode(header["mode"].strip())
    except (KeyError, ValueError) as exc:
        raise PolicyModelMismatch(f"bad or missing mode header: {exc}") from exc
    actions = tuple(header.get("actions", "").split())
    if actions != spec.mask_actions:
        raise PolicyModelMismatch(
            f"policy actions {actions} do not match model actions {spec.mask_actions}"
        )
    rows = [ln for ln in lines if ln.startswith("row ")]
    expected = spec.n_states if mode is ConditioningMode.STATE_ONLY else mdp.n_aug
    if len(rows) != expected:
        raise PolicyModelMismatch(
            f"policy has {len(rows)} rows, model needs {expected} for mode {mode.value}"
        )
    theta = np.zeros((expected, spec.n_actions))
    state_index = {s: i for i, s in enumerate(spec.states)}
    for ln in rows:
        head, _, rest = ln[4:].partition(" | probs ")
        state_label, cfg_label = head.rsplit(" ", 1)
        _, _, hex_part = rest.partition(" | theta ")
        values = [float.fromhex(tok) for tok in hex_part.split()]
        if len(values) != spec.n_actions:
            raise PolicyModelMismatch(f"row {head!r} has {len(values)} logits")
        if state_label not in state_index:
            raise PolicyModelMismatch(f"row references unknown state {state_label!r}")
        s = state_index[state_label]
        if mode is ConditioningMode.STATE_ONLY:
            r = s
        else:
            if cfg_label not in spec.mask_actions:
                raise PolicyModelMismatch(f"row references unknown config {cfg_label!r}")
            r = s * spec.n_actions + spec.mask_actions.index(cfg_label)
        theta[r] = values
    if not np.all(np.isfinite(theta)):
        raise PolicyModelMismatch("policy file contains non-finite parameters")
    return PolicyParams(theta, mode)


def save_trace(trace: SynthesisTrace, path, reproducible: bool = True) -> None:
    """CSV with the fixed header ``iter,entropy,value,lambda,grad_norm,wall_s``.

    With ``reproducible`` (the default) the volatile wall-clock column is
    written as 0.0 so identical (scenario, overrides, seed) runs produce
    byte-identical files; total wall time is reported in the run summary
    instead.
    """
    lines = [TRACE_HEADER]
    for i in range(len(trace)):
        wall = 0.0 if reproducible else trace.wall_s[i]
        lines.append(
            f"{trace.iterations[i]},{trace.entropy[i]!r},{trace.value[i]!r},"
            f"{trace.lam[i]!r},{trace.grad_norm[i]!r},{wall!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def load_trace(path) -> SynthesisTrace:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != TRACE_HEADER:
        raise ScenarioFormatError(f"{path}: bad trace header")
    trace = SynthesisTrace()
    for ln in lines[1:]:
        it, h, v, lam, gn, ws = ln.split(",")
        trace.iterations.append(int(it))
        trace.entropy.append(float(h))
        trace.value.append(float(v))
        trace.value_sampled.append(float("nan"))
        trace.lam.append(float(lam))
        trace.grad_norm.append(float(gn))
        trace.wall_s.append(float(ws))
    return trace


def save_summary(path, **fields) -> None:
    """Key=value text file; parseable by :func:`load_summary`."""
    Path(path).write_text(
        "\n".join(f"{k} = {v!r}" if isinstance(v, str) else f"{k} = {v}" for k, v in fields.items())
        + "\n"
    )


def load_summary(path) -> dict:
    out = {}
    for ln in Path(path).read_text().splitlines():
        if not ln.strip():
            continue
        key, _, val = ln.partition(" = ")
        try:
            out[key] = json.loads(val.replace("'", '"'))
        except json.JSONDecodeError:
            out[key] = val
    return out


def export_batch(batch: TrajectoryBatch, path) -> None:
    """One JSON record per trajectory, for debugging sampled runs."""
    with open(path, "w") as f:
        for i in range(len(batch)):
            rec = {
                "states": batch.states[i].tolist(),
                "actions": batch.actions[i].tolist(),
                "observations": batch.observations[i].tolist(),
                "costs": batch.costs[i].tolist(),
            }
            f.write(json.dumps(rec) + "\n")


def load_batch_records(path) -> list:
    return [json.loads(ln) for ln in Path(path).read_text().splitlines() if ln.strip()]
