"""Core model types: an HMM with a controllable emission channel and the
masking decision process built on top of it.

The base model couples a Markov chain ``P(s'|s)`` with an emission channel
``E(o|s, sigma)`` whose distribution depends on the active sensor
configuration ``sigma``.  A masking agent picks the next configuration at
every step, paying ``C(s, sigma, sigma')``.  Planning happens on the product
space ``Z = S x Sigma``, where choosing configuration ``a`` moves
``(s, sigma) -> (s', a)`` with probability ``P(s'|s)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import EmptySecretSetWarning, NegativeCost, NonStochasticRow

# Row sums within this distance of 1 are silently renormalized (hand-written
# scenario files carry rounded decimals); anything worse is rejected.
REPAIR_TOL = 1e-9
STOCHASTIC_TOL = 1e-12


@dataclass(frozen=True)
class HmmSpec:
    """Hidden Markov model with controllable emissions plus the masking problem data.

    Attributes
    ----------
    states : tuple of str
        State labels; index into ``transition`` rows.
    transition : ndarray, shape (S, S)
        Row-stochastic chain, ``transition[s, t] = P(next=t | current=s)``.
    observations : tuple of str
        Observation-symbol labels.
    mask_actions : tuple of str
        Sensor-configuration labels (the masking action alphabet).
    emission : ndarray, shape (S, A, M)
        ``emission[s, a, o] = E(o | state=s, config=a)``.
    initial_dist : ndarray, shape (S,)
        Initial state distribution.
    initial_config : int
        Index of the configuration in force before the first masking choice.
    secret_set : frozenset of int
        Indices of secret states.
    mask_cost : ndarray, shape (S, A, A)
        ``mask_cost[s, prev, nxt] = C(s, prev, nxt) >= 0``.
    horizon : int
        Number of transitions; a run visits ``horizon + 1`` states and emits
        one observation at each of them.
    discount : float
        Cost discount in [0, 1].
    budget : float
        Upper bound on expected discounted masking cost.
    no_mask_action : int or None
        Index of the "mask nothing" configuration, when the scenario has one.
    action_coverage : tuple of frozenset, or None
        For each masking action, the states whose sensor that action silences
        (empty for the no-mask action).  Builder metadata used by reference
        policies; plain HMMs may leave it unset.
    """

    states: tuple
    transition: np.ndarray
    observations: tuple
    mask_actions: tuple
    emission: np.ndarray
    initial_dist: np.ndarray
    initial_config: int
    secret_set: frozenset
    mask_cost: np.ndarray
    horizon: int
    discount: float = 1.0
    budget: float = 0.0
    no_mask_action: Optional[int] = None
    action_coverage: Optional[tuple] = None

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return len(self.mask_actions)

    @property
    def n_obs(self) -> int:
        return len(self.observations)

    @property
    def n_stages(self) -> int:
        """Number of emitting stages in a run (horizon + 1)."""
        return self.horizon + 1


def _repair_rows(rows: np.ndarray, what: str, labels) -> np.ndarray:
    """Renormalize near-stochastic rows; reject anything off by > REPAIR_TOL."""
    rows = np.asarray(rows, dtype=np.float64)
    if np.any(rows < 0.0):
        bad = np.argwhere(rows < 0.0)[0]
        raise NonStochasticRow(f"{what} {labels(bad)} has a negative probability")
    sums = rows.sum(axis=-1)
    off = np.abs(sums - 1.0)
    if np.any(off > REPAIR_TOL):
        idx = np.unravel_index(int(np.argmax(off)), sums.shape)
        raise NonStochasticRow(
            f"{what} {labels(idx)} sums to {sums[idx]:.12g}, not 1"
        )
    return rows / sums[..., None]


def validate(spec: HmmSpec) -> HmmSpec:
    """Check all model invariants and return a normalized, frozen copy.

    Distributions within ``REPAIR_TOL`` of stochastic are renormalized;
    anything further off raises :class:`NonStochasticRow`.  Costs must be
    non-negative and the horizon at least 1.  The returned spec's arrays are
    read-only, so it is safe to share across threads.
    """
    n_s, n_a, n_o = len(spec.states), len(spec.mask_actions), len(spec.observations)
    if spec.transition.shape != (n_s, n_s):
        raise ValueError(f"transition shape {spec.transition.shape} != {(n_s, n_s)}")
    if spec.emission.shape != (n_s, n_a, n_o):
        raise ValueError(f"emission shape {spec.emission.shape} != {(n_s, n_a, n_o)}")
    if spec.mask_cost.shape != (n_s, n_a, n_a):
        raise ValueError(f"mask_cost shape {spec.mask_cost.shape} != {(n_s, n_a, n_a)}")
    if spec.initial_dist.shape != (n_s,):
        raise ValueError("initial_dist length does not match the state count")
    if not 0 <= spec.initial_config < n_a:
        raise ValueError(f"initial_config {spec.initial_config} out of range")
    if not all(0 <= g < n_s for g in spec.secret_set):
        raise ValueError("secret_set contains an out-of-range state index")
    if spec.horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {spec.horizon}")
    if not 0.0 <= spec.discount <= 1.0:
        raise ValueError(f"discount must be in [0, 1], got {spec.discount}")
    if spec.budget < 0.0:
        raise ValueError(f"budget must be >= 0, got {spec.budget}")

    cost = np.asarray(spec.mask_cost, dtype=np.float64)
    if np.any(cost < 0.0):
        s, a, b = np.argwhere(cost < 0.0)[0]
        raise NegativeCost(
            f"C({spec.states[s]}, {spec.mask_actions[a]}, {spec.mask_actions[b]})"
            f" = {cost[s, a, b]} is negative"
        )
    if not spec.secret_set:
        warnings.warn(
            "secret set is empty: conditional entropy is identically 0",
            EmptySecretSetWarning,
            stacklevel=2,
        )

    transition = _repair_rows(
        spec.transition, "transition row for state", lambda i: repr(spec.states[i[0]])
    )
    emission = _repair_rows(
        spec.emission,
        "emission row for",
        lambda i: f"({spec.states[i[0]]!r}, {spec.mask_actions[i[1]]!r})",
    )
    initial = _repair_rows(
        spec.initial_dist[None, :], "initial distribution", lambda i: ""
    )[0]

    for arr in (transition, emission, initial, cost):
        arr.setflags(write=False)
    return replace(
        spec,
        transition=transition,
        emission=emission,
        initial_dist=initial,
        mask_cost=cost,
        secret_set=frozenset(spec.secret_set),
    )


@dataclass(frozen=True)
class MaskMdp:
    """Masking decision process on the augmented space ``Z = S x Sigma``.

    Augmented index convention: ``z = s * n_actions + sigma``.

    Attributes
    ----------
    spec : HmmSpec
        The validated base model.
    transition : ndarray, shape (N, A, N)
        ``transition[z, a, z']`` is nonzero only when the configuration
        component of ``z'`` equals ``a``, where it equals ``P(s'|s)``.
    emission : ndarray, shape (N, M)
        ``emission[z, o] = E(o | s, sigma)`` for ``z = (s, sigma)``.
    cost : ndarray, shape (N, A)
        ``cost[z, a] = C(s, sigma, a)``.
    initial_dist : ndarray, shape (N,)
        Mass ``initial_dist_base(s)`` placed on ``(s, initial_config)``.
    secret_vector : ndarray, shape (N,)
        Float 0/1 indicator of augmented states whose base state is secret.
    """

    spec: HmmSpec
    transition: np.ndarray
    emission: np.ndarray
    cost: np.ndarray
    initial_dist: np.ndarray
    secret_vector: np.ndarray

    @property
    def n_aug(self) -> int:
        return self.spec.n_states * self.spec.n_actions

    @property
    def n_actions(self) -> int:
        return self.spec.n_actions

    @property
    def n_obs(self) -> int:
        return self.spec.n_obs

    def to_aug(self, state: int, config: int) -> int:
        return state * self.spec.n_actions + config

    def from_aug(self, z: int):
        return divmod(z, self.spec.n_actions)

    def state_of(self, z) -> np.ndarray:
        """Base-state component, vectorized over augmented indices."""
        return np.asarray(z) // self.spec.n_actions

    def aug_label(self, z: int) -> str:
        s, a = self.from_aug(z)
        return f"({self.spec.states[s]},{self.spec.mask_actions[a]})"


def build_mask_mdp(spec: HmmSpec) -> MaskMdp:
    """Construct the augmented masking process from a validated spec."""
    n_s, n_a = spec.n_states, spec.n_actions
    n_aug = n_s * n_a

    trans = np.zeros((n_s, n_a, n_a, n_s, n_a))
    for a in range(n_a):
        trans[:, :, a, :, a] = spec.transition[:, None, :]
    transition = trans.reshape(n_aug, n_a, n_aug)

    emission = spec.emission.reshape(n_aug, spec.n_obs).copy()

    cost = spec.mask_cost.reshape(n_aug, n_a).copy()

    initial = np.zeros(n_aug)
    initial[np.arange(n_s) * n_a + spec.initial_config] = spec.initial_dist

    secret = np.zeros(n_aug)
    for g in spec.secret_set:
        secret[g * n_a : (g + 1) * n_a] = 1.0

    for arr in (transition, emission, cost, initial, secret):
        arr.setflags(write=False)
    return MaskMdp(
        spec=spec,
        transition=transition,
        emission=emission,
        cost=cost,
        initial_dist=initial,
        secret_vector=secret,
    )


def emission_matrix(mdp: MaskMdp) -> np.ndarray:
    """Observation-by-state matrix ``B[o, z] = E(o | z)``; columns sum to 1."""
    return mdp.emission.T.copy()
