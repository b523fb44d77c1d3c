"""Observable-operator inference on the mask-induced hidden Markov chain.

For a fixed mask the observer faces an HMM over the augmented states with
column-stochastic transition matrix ``T`` and observation matrix ``B``.  The
operator for symbol ``o`` is ``A_o = T @ diag(B[o, :])``; ordered products of
operators give sequence likelihoods,

    P(y) = 1' A_{y[L-1]} ... A_{y[0]} mu0,

joint hidden-state distributions, and the posterior of the final-state
secret.  Everything here is differentiable in the mask parameters because
only ``T`` depends on them; gradients use the product rule with prefix/suffix
vector caching, so a length-L sequence costs O(L) matrix products rather
than O(L^2).

Likelihoods are kept in plain (non-log) space with an underflow guard: when a
partial product's largest entry drops below ``RESCALE_FLOOR`` the vector is
rescaled and the log scale tracked.  Sequences whose probability falls below
``REALIZABLE_FLOOR`` are rejected rather than smoothed -- they cannot arise
from on-policy sampling, and smoothing them would corrupt gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ZeroProbabilityObservation
from .model import MaskMdp, emission_matrix
from .policy import (
    InducedChain,
    PolicyParams,
    action_probs,
    induced_transition,
    row_map,
)

RESCALE_FLOOR = 1e-250
REALIZABLE_FLOOR = 1e-300
LN2 = float(np.log(2.0))
# Posteriors are clamped to this interval inside log terms only; probability
# values themselves are never clamped.
POSTERIOR_CLAMP = 1e-12


@dataclass
class ObservableOperatorSet:
    """Per-symbol operators ``A_o`` plus everything needed for their derivatives."""

    ops: np.ndarray            # (M, N, N): ops[o] = T @ diag(B[o, :])
    obs_matrix: np.ndarray     # (M, N) observation probability matrix B
    chain: InducedChain
    initial: np.ndarray        # (N,) initial distribution over augmented states
    secret_vector: np.ndarray  # (N,) indicator of augmented secret states

    @property
    def n_aug(self) -> int:
        return self.initial.shape[0]

    @property
    def n_theta_actions(self) -> int:
        return self.chain.gradient.columns.shape[1]

    def operator(self, o: int) -> np.ndarray:
        return self.ops[o]

    def operator_derivative(self, o: int, row: int, action: int) -> np.ndarray:
        """d A_o / d theta[row, action] = (d T / d theta[row, action]) @ diag(B[o])."""
        return self.chain.gradient.dense(row, action) * self.obs_matrix[o][None, :]


def observable_operators(mdp: MaskMdp, policy: PolicyParams) -> ObservableOperatorSet:
    chain = induced_transition(policy, mdp)
    b = emission_matrix(mdp)
    ops = chain.matrix[None, :, :] * b[:, None, :]
    return ObservableOperatorSet(
        ops=ops,
        obs_matrix=b,
        chain=chain,
        initial=mdp.initial_dist.copy(),
        secret_vector=mdp.secret_vector.copy(),
    )


def _scaled_forward(oos: ObservableOperatorSet, y):
    """Prefix vectors ``f_k = A_{y[k-1]} ... A_{y[0]} mu0``, k = 0..L-1.

    Returns ``(f, logs)`` where ``f[k] = true f_k / exp(logs[k])``.  The final
    operator application is skipped: downstream quantities only ever need
    ``f_{L-1}`` together with the last symbol's emission column.
    """
    y = np.asarray(y, dtype=np.intp)
    f = np.empty((len(y), oos.n_aug))
    logs = np.zeros(len(y))
    f[0] = oos.initial
    for k in range(1, len(y)):
        f[k] = oos.ops[y[k - 1]] @ f[k - 1]
        logs[k] = logs[k - 1]
        peak = f[k].max()
        if 0.0 < peak < RESCALE_FLOOR:
            f[k] /= peak
            logs[k] += float(np.log(peak))
    return f, logs


def sequence_probability(oos: ObservableOperatorSet, y) -> float:
    """Likelihood ``P(Y = y)`` of an observation sequence under the mask."""
    y = np.asarray(y, dtype=np.intp)
    f, logs = _scaled_forward(oos, y)
    # 1' A_{y[-1]} f = B[y[-1], :] . f because T is column-stochastic.
    val = float(oos.obs_matrix[y[-1]] @ f[-1])
    return val * float(np.exp(logs[-1]))


def joint_state_probability(oos: ObservableOperatorSet, y_prefix, state: int) -> float:
    """Joint ``P(o_{1:t}, Z_{t+1} = state)`` for a length-t observation prefix."""
    y = np.asarray(y_prefix, dtype=np.intp)
    f = oos.initial.copy()
    log_scale = 0.0
    for o in y:
        f = oos.ops[o] @ f
        peak = f.max()
        if 0.0 < peak < RESCALE_FLOOR:
            f /= peak
            log_scale += float(np.log(peak))
    return float(f[state]) * float(np.exp(log_scale))


def _product_gradient(oos, y, suffix_row, n_ops, f, logs, out_log: float) -> np.ndarray:
    """Gradient of ``suffix_row' A_{y[n_ops-1]} ... A_{y[0]} mu0`` over theta.

    The result is reported on the scale ``exp(out_log)``, i.e. the true
    gradient divided by ``exp(out_log)``, which lets callers keep quotients
    consistent with scaled likelihood values.  Works backward through the
    product, turning the sparse structure of dT into per-column dot products
    instead of dense per-parameter matrices.
    """
    grad_cols = oos.chain.gradient.columns        # (N, A, N)
    rows = oos.chain.gradient.rows
    out = np.zeros((oos.chain.gradient.n_rows, oos.n_theta_actions))
    c = np.asarray(suffix_row, dtype=np.float64).copy()
    suffix_log = 0.0
    for k in range(n_ops, 0, -1):
        o = y[k - 1]
        u = oos.obs_matrix[o] * f[k - 1]          # diag(B[o]) f_{k-1}
        term = np.einsum("zai,i->za", grad_cols, c) * u[:, None]
        factor = np.exp(logs[k - 1] + suffix_log - out_log)
        if factor != 1.0:
            term = term * factor
        np.add.at(out, rows, term)
        if k > 1:
            c = c @ oos.ops[o]
            peak = c.max()
            if 0.0 < peak < RESCALE_FLOOR:
                c /= peak
                suffix_log += float(np.log(peak))
    return out


def sequence_probability_gradient(oos: ObservableOperatorSet, y) -> np.ndarray:
    """Gradient of ``P(y)`` in the mask parameters, shape matching theta.

    Expanding the operator product, the derivative is the sum over positions
    ``k`` of the same product with ``A_{y[k]}`` replaced by
    ``dT @ diag(B[y[k]])``.  The topmost term vanishes identically because
    ``dT`` has zero column sums, so the sum starts one operator down.
    """
    y = np.asarray(y, dtype=np.intp)
    f, logs = _scaled_forward(oos, y)
    grad = _product_gradient(oos, y, oos.obs_matrix[y[-1]], len(y) - 1, f, logs, 0.0)
    return grad


@dataclass
class SecretPosterior:
    """Posterior of the final-state secret for one observation sequence."""

    p_secret: float
    p_obs: float
    grad_p_secret: np.ndarray
    grad_p_obs: np.ndarray

    @property
    def p_nonsecret(self) -> float:
        return 1.0 - self.p_secret


def secret_posterior(oos: ObservableOperatorSet, y, secret_vector=None) -> SecretPosterior:
    """Posterior ``P(final state secret | y)`` with its parameter gradient.

    The numerator is ``sum_g E(y[-1] | g) P(Z_L = g, y[:-1])`` over augmented
    secret states ``g``; the gradient applies the quotient rule to it and to
    the sequence likelihood.  Raises :class:`ZeroProbabilityObservation` when
    the sequence is unrealizable under the current mask.
    """
    y = np.asarray(y, dtype=np.intp)
    g_vec = oos.secret_vector if secret_vector is None else np.asarray(secret_vector, float)
    f, logs = _scaled_forward(oos, y)
    scale = float(np.exp(logs[-1]))

    last_col = oos.obs_matrix[y[-1]]
    p_obs = float(last_col @ f[-1])
    if p_obs * scale < REALIZABLE_FLOOR:
        raise ZeroProbabilityObservation(
            f"sequence has probability {p_obs * scale:.3g} under the current mask"
        )
    numer = float((last_col * g_vec) @ f[-1])
    p_secret = numer / p_obs

    n_ops = len(y) - 1
    # both gradients on the scale of the stored (rescaled) likelihoods, so the
    # quotient below is exact regardless of rescaling
    grad_obs = _product_gradient(oos, y, last_col, n_ops, f, logs, logs[-1])
    grad_numer = _product_gradient(oos, y, last_col * g_vec, n_ops, f, logs, logs[-1])
    grad_secret = (grad_numer * p_obs - numer * grad_obs) / (p_obs * p_obs)
    return SecretPosterior(
        p_secret=p_secret,
        p_obs=p_obs * scale,
        grad_p_secret=grad_secret,
        grad_p_obs=grad_obs * scale,
    )


def secret_posterior_gradient(oos: ObservableOperatorSet, y, secret_vector=None) -> np.ndarray:
    return secret_posterior(oos, y, secret_vector).grad_p_secret


class BatchEvaluator:
    """Vectorized likelihood/posterior/gradient kernels for sequence batches.

    Exploits the product structure of the augmented process -- choosing action
    ``a`` always lands in a state whose configuration component is ``a`` -- so
    per-sequence work scales with ``|S|^2 A`` instead of ``N^2 A``.  Used by
    the sampled estimators and the optimizer hot loop; agrees with the
    per-sequence functions above to machine precision.  No underflow guard:
    batched callers evaluate on-policy samples at moderate horizons.
    """

    def __init__(self, mdp: MaskMdp, policy: PolicyParams):
        self.mdp = mdp
        self.policy = policy
        spec = mdp.spec
        self.n_s, self.n_a = spec.n_states, spec.n_actions
        self.p_states = spec.transition                 # (S, S) row-stochastic
        self.pi = action_probs(policy, mdp)             # (N, A)
        self.pi3 = self.pi.reshape(self.n_s, self.n_a, self.n_a)
        self.b_obs = emission_matrix(mdp)               # (M, N)
        self.initial = mdp.initial_dist
        self.g_vec = mdp.secret_vector
        self.rows = row_map(mdp, policy.mode)
        self.n_rows = policy.theta.shape[0]

    def _step_forward(self, f, o):
        """One application of the observable operators, batched over rows.

        Contractions are stacked matmuls rather than einsum; at these shapes
        the BLAS path is several times faster per call.
        """
        v = f.shape[0]
        u3 = (self.b_obs[o] * f).reshape(v, self.n_s, self.n_a)
        # w[v,s,a] = sum_g u3[v,s,g] pi3[s,g,a]
        w = np.matmul(u3.swapaxes(0, 1), self.pi3).swapaxes(0, 1)
        # f'[v,(t,a)] = sum_s P(t|s) w[v,s,a]
        nxt = np.tensordot(w, self.p_states, axes=([1], [0]))
        return np.ascontiguousarray(nxt.transpose(0, 2, 1)).reshape(v, -1)

    def forward(self, obs: np.ndarray) -> np.ndarray:
        """Prefix vectors ``F[v, k] = f_k`` for each sequence, shape (V, L, N)."""
        obs = np.asarray(obs, dtype=np.intp)
        v, length = obs.shape
        f = np.empty((v, length, self.n_s * self.n_a))
        f[:, 0] = self.initial
        for k in range(1, length):
            f[:, k] = self._step_forward(f[:, k - 1], obs[:, k - 1])
        return f

    def posterior_stats(self, obs: np.ndarray):
        """Per-sequence ``(P(y), P(secret, y))`` from a single forward sweep.

        Streams the recursion instead of storing the history, so arbitrarily
        large evaluation batches stay cheap on memory.
        """
        obs = np.asarray(obs, dtype=np.intp)
        v, length = obs.shape
        f = np.broadcast_to(self.initial, (v, self.n_s * self.n_a))
        for k in range(1, length):
            f = self._step_forward(f, obs[:, k - 1])
        last_cols = self.b_obs[obs[:, -1]]
        p_obs = np.einsum("vi,vi->v", last_cols, f)
        p_joint = np.einsum("vi,vi->v", last_cols * self.g_vec, f)
        return p_obs, p_joint

    def weighted_pair_gradient(self, obs, coef_joint, coef_obs) -> np.ndarray:
        """Accumulate ``sum_v coef_joint[v] dP(secret, y_v) + coef_obs[v] dP(y_v)``.

        Both gradients share the same backward recursion, so each sequence
        carries one combined suffix row seeded from its two coefficients.
        """
        obs = np.asarray(obs, dtype=np.intp)
        return self.gradient_from_forward(obs, self.forward(obs), coef_joint, coef_obs)

    def gradient_from_forward(self, obs, f, coef_joint, coef_obs) -> np.ndarray:
        """Backward sweep of :meth:`weighted_pair_gradient` given its forward pass."""
        v, length = obs.shape
        last_cols = self.b_obs[obs[:, -1]]
        c = last_cols * (coef_obs[:, None] + coef_joint[:, None] * self.g_vec)
        grad = np.zeros((self.n_rows, self.n_a))
        for k in range(length - 1, 0, -1):
            o = obs[:, k - 1]
            c3 = c.reshape(v, self.n_s, self.n_a)
            # d[v,s,a] = sum_r c3[v,r,a] P(r|s): suffix row hit by the kernel
            d = np.tensordot(c3, self.p_states, axes=([1], [1])).transpose(0, 2, 1)
            # s_k[v,s,g] = sum_a pi3[s,g,a] d[v,s,a]
            s_k = np.matmul(self.pi3, d.transpose(1, 2, 0)).transpose(2, 0, 1)
            u3 = (self.b_obs[o] * f[:, k - 1]).reshape(v, self.n_s, self.n_a)
            # term[s,g,a] = pi3[s,g,a] (sum_v u3[v,s,g] (d[v,s,a] - s_k[v,s,g]))
            term = np.matmul(u3.transpose(1, 2, 0), d.transpose(1, 0, 2))
            term -= (u3 * s_k).sum(axis=0)[:, :, None]
            term *= self.pi3
            np.add.at(grad, self.rows, term.reshape(-1, self.n_a))
            if k > 1:
                c = s_k.reshape(v, -1) * self.b_obs[o]
        return grad
