"""Softmax-parameterized dynamic masks and their analytic derivatives.

A mask is a randomized rule choosing the next sensor configuration.  It can
condition either on the full augmented state ``(s, sigma)`` or on the base
state ``s`` alone; in the second mode all augmented states sharing a base
state alias the same parameter row.

The induced observer-side chain uses the *reversed* (column-stochastic)
convention throughout: ``T[i, j] = P(next = i | current = j)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DegeneratePolicy
from .model import MaskMdp

PROB_FLOOR = 1e-300  # probabilities are floored here before any log
LN2 = float(np.log(2.0))


class ConditioningMode(str, Enum):
    AUGMENTED = "augmented"      # rows indexed by (state, previous config)
    STATE_ONLY = "state_only"    # rows indexed by state alone


@dataclass
class PolicyParams:
    """Raw mask parameters: one row of action logits per conditioning class."""

    theta: np.ndarray  # (n_rows, n_actions)
    mode: ConditioningMode = ConditioningMode.AUGMENTED

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.theta.copy(), self.mode)

    def check_finite(self) -> "PolicyParams":
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("policy parameters contain NaN or Inf")
        return self


def n_param_rows(mdp: MaskMdp, mode: ConditioningMode) -> int:
    if mode is ConditioningMode.AUGMENTED:
        return mdp.n_aug
    return mdp.spec.n_states


def row_map(mdp: MaskMdp, mode: ConditioningMode) -> np.ndarray:
    """Map each augmented state to its parameter row."""
    if mode is ConditioningMode.AUGMENTED:
        return np.arange(mdp.n_aug)
    return np.arange(mdp.n_aug) // mdp.n_actions


def zero_policy(mdp: MaskMdp, mode: ConditioningMode = ConditioningMode.AUGMENTED) -> PolicyParams:
    """Uniform-random mask: all logits zero."""
    return PolicyParams(np.zeros((n_param_rows(mdp, mode), mdp.n_actions)), mode)


def _softmax_rows(theta: np.ndarray) -> np.ndarray:
    shifted = theta - theta.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def action_probs(policy: PolicyParams, mdp: MaskMdp) -> np.ndarray:
    """Per-augmented-state action distribution, shape (N, A)."""
    pi_rows = _softmax_rows(np.asarray(policy.theta, dtype=np.float64))
    return pi_rows[row_map(mdp, policy.mode)]


def action_distribution(policy: PolicyParams, mdp: MaskMdp, z: int) -> np.ndarray:
    """softmax(theta[row(z)]): the mask's distribution over next configurations."""
    r = row_map(mdp, policy.mode)[z]
    return _softmax_rows(np.asarray(policy.theta, dtype=np.float64)[r])


@dataclass
class TransitionGradient:
    """Derivative of the induced chain with respect to every parameter.

    The derivative of ``T`` with respect to ``theta[r, a]`` is zero outside
    the columns of augmented states mapped to row ``r``; for such a column
    ``z`` it equals ``pi(a|z) * (P(.|z, a) - T[:, z])``.  ``columns[z, a]``
    stores exactly that vector, so the full per-parameter matrix never needs
    to be materialized in hot paths.
    """

    columns: np.ndarray  # (N, A, N): columns[z, a] = d T[:, z] / d theta[row(z), a]
    rows: np.ndarray     # (N,) parameter-row index per augmented state
    n_rows: int

    def dense(self, row: int, action: int) -> np.ndarray:
        """Materialize d T / d theta[row, action] as an (N, N) matrix."""
        n = self.columns.shape[0]
        out = np.zeros((n, n))
        for z in np.flatnonzero(self.rows == row):
            out[:, z] = self.columns[z, action]
        return out


@dataclass
class InducedChain:
    """Observer-side chain induced by a mask: column-stochastic matrix plus gradient."""

    matrix: np.ndarray  # (N, N), T[i, j] = P(Z_{t+1} = i | Z_t = j)
    gradient: TransitionGradient


def induced_transition(policy: PolicyParams, mdp: MaskMdp) -> InducedChain:
    """Marginalize the masking action out of the augmented process.

    ``T[i, j] = sum_a P(i | j, a) pi(a | j)`` in the reversed convention.
    """
    pi = action_probs(policy, mdp)
    matrix = np.einsum("zai,za->iz", mdp.transition, pi)
    return InducedChain(matrix=matrix, gradient=_transition_gradient(mdp, policy, pi, matrix))


def _transition_gradient(mdp, policy, pi, matrix) -> TransitionGradient:
    # softmax derivative: d pi(a'|z) / d theta[row(z), a] = pi(a'|z)(1[a'=a] - pi(a|z)),
    # composed with the augmented transition kernel.
    cols = mdp.transition - matrix.T[:, None, :]       # (N, A, N): P(.|z,a) - T[:,z]
    cols = cols * pi[:, :, None]
    return TransitionGradient(columns=cols, rows=row_map(mdp, policy.mode),
                              n_rows=n_param_rows(mdp, policy.mode))


def transition_gradient(policy: PolicyParams, mdp: MaskMdp) -> TransitionGradient:
    return induced_transition(policy, mdp).gradient


def log_prob_gradient(policy: PolicyParams, mdp: MaskMdp, z: int, action: int) -> np.ndarray:
    """Score function of the mask: gradient of ``log pi(action | z)``.

    Nonzero only on parameter row ``row(z)``, where it is the usual softmax
    score ``1[a = action] - pi(a | z)``.
    """
    probs = action_distribution(policy, mdp, z)
    if probs[action] < PROB_FLOOR:
        raise DegeneratePolicy(
            f"pi({mdp.spec.mask_actions[action]!r} | {mdp.aug_label(z)}) underflowed to 0"
        )
    grad = np.zeros_like(policy.theta)
    r = row_map(mdp, policy.mode)[z]
    grad[r] = -probs
    grad[r, action] += 1.0
    return grad
