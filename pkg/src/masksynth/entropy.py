"""Conditional entropy of the final-state secret, exact and sampled.

The objective is ``H(W | Y) = -sum_y sum_w P(w, y) log2 P(w | y)`` where
``W`` indicates whether the last hidden state is secret and ``Y`` ranges over
full observation sequences.  Exact evaluation enumerates the sequence space
(gated by a cap, with zero-probability prefixes pruned); the sampled
estimator averages the exact per-sequence posterior entropy over on-policy
draws, which is unbiased for the exact value.

The gradient combines three per-sequence terms (log-derivative trick applied
to the joint, plus the chain rule through the conditional):

    -E_y[ sum_w ( log2 P(w|y) dP(w|y)
                  + P(w|y) log2 P(w|y) dP(y)/P(y)
                  + dP(w|y) / ln 2 ) ]

with every inner quantity computed analytically by the observable-operator
layer.  Posteriors are clamped to ``[1e-12, 1 - 1e-12]`` inside log terms
only, which bounds gradients near deterministic posteriors without biasing
any probability value.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import EnumerationTooLarge, ZeroProbabilityObservation
from .inference import POSTERIOR_CLAMP, REALIZABLE_FLOOR, BatchEvaluator
from .model import MaskMdp, emission_matrix
from .policy import PolicyParams

ENUMERATION_CAP = 1_000_000


class EstimateMode(str, Enum):
    EXACT = "exact"
    SAMPLED = "sampled"


@dataclass
class EntropyEstimate:
    """Conditional entropy in bits, with provenance."""

    value: float
    mode: EstimateMode
    sample_count: int = 0
    std_error: float = 0.0


def _clamped_log2(p: np.ndarray) -> np.ndarray:
    return np.log2(np.clip(p, POSTERIOR_CLAMP, 1.0 - POSTERIOR_CLAMP))


def binary_entropy_bits(p) -> np.ndarray:
    """H_b(p) in bits with the 0 log 0 = 0 convention."""
    p = np.asarray(p, dtype=np.float64)
    out = np.zeros_like(p)
    interior = (p > 0.0) & (p < 1.0)
    q = p[interior]
    out[interior] = -(q * np.log2(q) + (1.0 - q) * np.log2(1.0 - q))
    return out


def enumeration_size(mdp: MaskMdp) -> int:
    return mdp.n_obs ** mdp.spec.n_stages


def enumerate_observation_space(mdp: MaskMdp, policy: PolicyParams, cap: int = ENUMERATION_CAP):
    """All realizable observation sequences with their likelihood statistics.

    Returns ``(obs, p_obs, p_joint)`` where ``obs`` has shape (n, L) and the
    joint column is ``P(final state secret, y)``.  Prefixes with exactly zero
    probability are pruned as the tree expands; sequences absent from the
    output all have probability 0.  Raises :class:`EnumerationTooLarge` when
    ``|O|^L`` exceeds ``cap``.
    """
    if enumeration_size(mdp) > cap:
        raise EnumerationTooLarge(
            f"|O|^L = {mdp.n_obs}^{mdp.spec.n_stages} exceeds the cap {cap}"
        )
    ev = BatchEvaluator(mdp, policy)
    n_obs, n_aug, length = mdp.n_obs, mdp.n_aug, mdp.spec.n_stages
    b = emission_matrix(mdp)

    f = mdp.initial_dist[None, :]                       # (n_prefix, N)
    obs = np.zeros((1, 0), dtype=np.intp)
    for k in range(1, length):
        u = f[:, None, :] * b[None, :, :]               # (n_prefix, M, N)
        w = np.einsum(
            "pmsg,sga->pmsa", u.reshape(len(f), n_obs, ev.n_s, ev.n_a), ev.pi3,
            optimize=True,
        )
        nxt = np.einsum("pmsa,st->pmta", w, ev.p_states, optimize=True)
        f = nxt.reshape(len(f) * n_obs, n_aug)
        obs = np.hstack(
            [np.repeat(obs, n_obs, axis=0), np.tile(np.arange(n_obs, dtype=np.intp), len(obs))[:, None]]
        )
        keep = f.sum(axis=1) > 0.0
        f, obs = f[keep], obs[keep]

    p_full = f @ b.T                                    # (n_prefix, M)
    p_joint_full = f @ (b * mdp.secret_vector[None, :]).T
    obs = np.hstack(
        [np.repeat(obs, n_obs, axis=0), np.tile(np.arange(n_obs, dtype=np.intp), len(obs))[:, None]]
    )
    p_obs = p_full.reshape(-1)
    p_joint = p_joint_full.reshape(-1)
    keep = p_obs > 0.0
    return obs[keep], p_obs[keep], p_joint[keep]


def total_sequence_probability(mdp: MaskMdp, policy: PolicyParams, cap: int = ENUMERATION_CAP) -> float:
    """Sum of P(y) over the whole observation-sequence space (should be 1)."""
    _, p_obs, _ = enumerate_observation_space(mdp, policy, cap)
    return float(p_obs.sum())


def exact_conditional_entropy(
    mdp: MaskMdp, policy: PolicyParams, cap: int = ENUMERATION_CAP
) -> EntropyEstimate:
    """Full-enumeration conditional entropy of the secret, in bits.

    Terms with ``P(y) = 0`` contribute nothing, as do deterministic
    posteriors (0 log 0 := 0).
    """
    _, p_obs, p_joint = enumerate_observation_space(mdp, policy, cap)
    value = float(np.sum(p_obs * binary_entropy_bits(p_joint / p_obs)))
    return EntropyEstimate(value=value, mode=EstimateMode.EXACT)


def sampled_conditional_entropy(
    mdp: MaskMdp, policy: PolicyParams, obs_batch: np.ndarray
) -> EntropyEstimate:
    """Monte-Carlo conditional entropy from on-policy observation sequences.

    Each sample contributes the exact posterior entropy of its sequence; the
    average is an unbiased estimate of the exact value.  Off-policy samples
    surface as :class:`ZeroProbabilityObservation`.
    """
    obs_batch = np.asarray(obs_batch, dtype=np.intp)
    p_obs, p_joint = BatchEvaluator(mdp, policy).posterior_stats(obs_batch)
    if np.any(p_obs < REALIZABLE_FLOOR):
        bad = int(np.argmax(p_obs < REALIZABLE_FLOOR))
        raise ZeroProbabilityObservation(
            f"sample {bad} has probability below {REALIZABLE_FLOOR:g};"
            " was it drawn under a different mask?"
        )
    h = binary_entropy_bits(p_joint / p_obs)
    n = len(h)
    std_error = float(h.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return EntropyEstimate(
        value=float(h.mean()), mode=EstimateMode.SAMPLED, sample_count=n, std_error=std_error
    )


def _entropy_gradient_weighted(
    mdp: MaskMdp, policy: PolicyParams, obs: np.ndarray, weights: np.ndarray
):
    """Shared core: ``-sum_v weights[v] * (inner gradient term for y_v)``.

    Per sequence, with ``p1 = P(w=1|y)`` and complement ``p0``:

        inner = (log2 cl(p1) - log2 cl(p0)) dp1
                + (p1 log2 cl(p1) + p0 log2 cl(p0)) dP(y)/P(y)
                + (dp1 + dp0)/ln2                       [identically zero]

    Substituting ``dp1 = (dQ - p1 dP)/P`` with ``Q = P(w=1, y)`` collapses the
    whole thing to per-sequence coefficients on ``dQ`` and ``dP``, which the
    batched evaluator accumulates in one backward sweep over the shared
    forward pass.  Returns ``(gradient, per-sequence posterior entropies)``;
    the latter are a free by-product reused by the optimizer's trace.
    """
    ev = BatchEvaluator(mdp, policy)
    obs = np.asarray(obs, dtype=np.intp)
    f = ev.forward(obs)
    last_cols = ev.b_obs[obs[:, -1]]
    p_obs = np.einsum("vi,vi->v", last_cols, f[:, -1])
    p_joint = np.einsum("vi,vi->v", last_cols * ev.g_vec, f[:, -1])
    if np.any(p_obs < REALIZABLE_FLOOR):
        raise ZeroProbabilityObservation("a sequence in the batch is unrealizable")
    p1 = p_joint / p_obs
    p0 = 1.0 - p1
    log_p1 = _clamped_log2(p1)
    log_p0 = _clamped_log2(p0)
    delta = log_p1 - log_p0
    neg_h = p1 * log_p1 + p0 * log_p0
    coef_joint = -weights * delta / p_obs
    coef_obs = -weights * (neg_h - delta * p1) / p_obs
    grad = ev.gradient_from_forward(obs, f, coef_joint, coef_obs)
    return grad, binary_entropy_bits(p1)


def sampled_entropy_gradient(
    mdp: MaskMdp, policy: PolicyParams, obs_batch: np.ndarray
) -> np.ndarray:
    """Monte-Carlo gradient of the conditional entropy, shape matching theta."""
    obs_batch = np.asarray(obs_batch, dtype=np.intp)
    n = obs_batch.shape[0]
    grad, _ = _entropy_gradient_weighted(mdp, policy, obs_batch, np.full(n, 1.0 / n))
    return grad


def sampled_entropy_gradient_with_estimate(
    mdp: MaskMdp, policy: PolicyParams, obs_batch: np.ndarray
):
    """Gradient plus the same batch's entropy estimate from one shared sweep."""
    obs_batch = np.asarray(obs_batch, dtype=np.intp)
    n = obs_batch.shape[0]
    grad, h = _entropy_gradient_weighted(mdp, policy, obs_batch, np.full(n, 1.0 / n))
    std_error = float(h.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    est = EntropyEstimate(
        value=float(h.mean()), mode=EstimateMode.SAMPLED, sample_count=n, std_error=std_error
    )
    return grad, est


def exact_entropy_gradient(
    mdp: MaskMdp, policy: PolicyParams, cap: int = ENUMERATION_CAP
) -> np.ndarray:
    """Full-enumeration entropy gradient: sample weights replaced by P(y).

    This is the anti-drift reference for the sampled estimator; it must match
    finite differences of :func:`exact_conditional_entropy`.
    """
    obs, p_obs, _ = enumerate_observation_space(mdp, policy, cap)
    grad, _ = _entropy_gradient_weighted(mdp, policy, obs, p_obs)
    return grad
