"""Masking-cost evaluation and trajectory machinery.

A run through the augmented process visits ``L = horizon + 1`` states, emits
an observation at each, and makes ``L - 1`` masking choices; the choice at
step ``t`` (1-based) costs ``C(z_t, a_t)`` discounted by ``gamma^(t-1)``.
The value of a mask is the expected discounted total.  Exact evaluation is a
finite-horizon backward induction; the sampled policy gradient is
reward-to-go REINFORCE, and an exact occupancy-weighted gradient is provided
for verification at tight tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import MaskMdp
from .policy import PROB_FLOOR, PolicyParams, action_probs, induced_transition, row_map


@dataclass
class TrajectoryBatch:
    """Struct-of-arrays batch of sampled runs.

    states: (n, L) augmented-state indices.
    actions: (n, L-1) masking choices; actions[:, t] taken at states[:, t].
    observations: (n, L) emitted symbols.
    costs: (n, L-1) undiscounted step costs.
    log_probs: (n, L-1) log pi(action | state) at sampling time.
    """

    states: np.ndarray
    actions: np.ndarray
    observations: np.ndarray
    costs: np.ndarray
    log_probs: np.ndarray

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def n_stages(self) -> int:
        return self.states.shape[1]

    def trajectory(self, i: int) -> "Trajectory":
        return Trajectory(
            states=self.states[i].copy(),
            actions=self.actions[i].copy(),
            observations=self.observations[i].copy(),
            costs=self.costs[i].copy(),
            log_probs=self.log_probs[i].copy(),
        )

    def discounted_costs(self, discount: float) -> np.ndarray:
        """Per-trajectory discounted cost totals."""
        steps = self.costs.shape[1]
        return self.costs @ (discount ** np.arange(steps))


@dataclass
class Trajectory:
    """One sampled run (a row view of a batch)."""

    states: np.ndarray
    actions: np.ndarray
    observations: np.ndarray
    costs: np.ndarray
    log_probs: np.ndarray


def _draw_rows(rng: np.random.Generator, row_probs: np.ndarray) -> np.ndarray:
    """One categorical draw per row of ``row_probs``."""
    cdf = np.cumsum(row_probs, axis=1)
    u = rng.random(row_probs.shape[0])
    return np.minimum(
        (u[:, None] > cdf).sum(axis=1), row_probs.shape[1] - 1
    ).astype(np.intp)


def sample_trajectories(
    mdp: MaskMdp, policy: PolicyParams, n: int, seed=None
) -> TrajectoryBatch:
    """Draw ``n`` independent runs of the mask-induced process.

    Per stage the draw order is observation, action, successor state, making
    batches bit-reproducible for a given seed.  ``seed`` may be an int or a
    ready-made :class:`numpy.random.Generator`.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    spec = mdp.spec
    n_stages, n_a = spec.n_stages, spec.n_actions
    pi = action_probs(policy, mdp)
    log_pi = np.log(np.maximum(pi, PROB_FLOOR))

    states = np.empty((n, n_stages), dtype=np.intp)
    actions = np.empty((n, n_stages - 1), dtype=np.intp)
    observations = np.empty((n, n_stages), dtype=np.intp)
    costs = np.empty((n, n_stages - 1))
    log_probs = np.empty((n, n_stages - 1))

    states[:, 0] = _draw_rows(rng, np.tile(mdp.initial_dist, (n, 1)))
    for t in range(n_stages):
        z = states[:, t]
        observations[:, t] = _draw_rows(rng, mdp.emission[z])
        if t == n_stages - 1:
            break
        a = _draw_rows(rng, pi[z])
        actions[:, t] = a
        costs[:, t] = mdp.cost[z, a]
        log_probs[:, t] = log_pi[z, a]
        base_next = _draw_rows(rng, spec.transition[z // n_a])
        states[:, t + 1] = base_next * n_a + a
    return TrajectoryBatch(states, actions, observations, costs, log_probs)


def _stage_values(mdp: MaskMdp, pi: np.ndarray):
    """Backward induction: per-stage state values and action values.

    Returns ``(values, q_values)`` with ``values[t]`` of shape (N,) and
    ``q_values[t]`` of shape (N, A), for action stages t = 0..L-2 (0-based).
    """
    spec = mdp.spec
    n_s, n_a = spec.n_states, spec.n_actions
    steps = spec.n_stages - 1
    values = np.zeros((steps + 1, mdp.n_aug))
    q_values = np.zeros((steps, mdp.n_aug, n_a))
    for t in range(steps - 1, -1, -1):
        nxt = values[t + 1].reshape(n_s, n_a)            # V_{t+1}[(s', a)]
        expect = spec.transition @ nxt                   # (S, A): E over s'
        q = mdp.cost + spec.discount * np.repeat(expect, n_a, axis=0)
        q_values[t] = q
        values[t] = np.einsum("za,za->z", pi, q)
    return values, q_values


def exact_value(mdp: MaskMdp, policy: PolicyParams) -> float:
    """Expected discounted masking cost of the policy, by backward induction."""
    pi = action_probs(policy, mdp)
    values, _ = _stage_values(mdp, pi)
    return float(mdp.initial_dist @ values[0])


def exact_value_gradient(mdp: MaskMdp, policy: PolicyParams) -> np.ndarray:
    """Exact policy gradient of the expected discounted cost.

    Occupancy-weighted advantage form: the derivative in ``theta[r, a]`` sums
    ``gamma^t P(Z_t = z) pi(a|z) (Q_t(z, a) - V_t(z))`` over stages and the
    states mapped to row ``r``.
    """
    pi = action_probs(policy, mdp)
    values, q_values = _stage_values(mdp, pi)
    chain = induced_transition(policy, mdp).matrix
    rows = row_map(mdp, policy.mode)
    grad = np.zeros_like(policy.theta, dtype=np.float64)
    occupancy = mdp.initial_dist.copy()
    for t in range(q_values.shape[0]):
        advantage = q_values[t] - values[t][:, None]
        term = occupancy[:, None] * pi * advantage
        np.add.at(grad, rows, term)
        occupancy = mdp.spec.discount * (chain @ occupancy)
    return grad


def reinforce_value_gradient(
    mdp: MaskMdp, policy: PolicyParams, batch: TrajectoryBatch, baseline: bool = False
) -> np.ndarray:
    """Reward-to-go REINFORCE estimate of the cost gradient.

    Per trajectory and step, ``grad log pi(a_t | z_t)`` is weighted by the
    downstream discounted cost ``sum_{k >= t} gamma^k c_k`` (discounting from
    the run start, which keeps the estimator unbiased for the discounted
    value).  ``baseline=True`` subtracts the batch-mean reward-to-go at each
    step; off by default.
    """
    spec = mdp.spec
    pi = action_probs(policy, mdp)
    rows = row_map(mdp, policy.mode)
    n, steps = batch.costs.shape
    disc = spec.discount ** np.arange(steps)
    weighted = batch.costs * disc[None, :]
    togo = np.flip(np.cumsum(np.flip(weighted, axis=1), axis=1), axis=1)
    if baseline:
        togo = togo - togo.mean(axis=0, keepdims=True)

    grad = np.zeros_like(policy.theta, dtype=np.float64)
    for t in range(steps):
        z = batch.states[:, t]
        contrib = -pi[z] * togo[:, t, None]
        contrib[np.arange(n), batch.actions[:, t]] += togo[:, t]
        np.add.at(grad, rows[z], contrib)
    return grad / n


def empirical_value(batch: TrajectoryBatch, discount: float) -> float:
    """Batch-mean discounted masking cost."""
    return float(batch.discounted_costs(discount).mean())
