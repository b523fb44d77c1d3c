"""Primal-dual gradient ascent-descent for budget-constrained opacity.

Maximizes the Lagrangian ``L(theta, lam) = H(W|Y; theta) + lam (eps - V)``
over the mask parameters while minimizing over the multiplier ``lam >= 0``:

    theta <- theta + eta * (dH - lam * dV)
    lam   <- max(0, lam - kappa * (eps - V))

Each iteration samples a fresh on-policy batch, splits it into mini-batches
for sequential primal updates (entropy gradient via observable operators,
cost gradient via REINFORCE, both from the same trajectories), then applies
one projected dual update from the full-batch cost estimate.  The projection
implements the ``lam >= 0`` constraint that a raw gradient step can violate.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .costs import (
    TrajectoryBatch,
    empirical_value,
    exact_value,
    reinforce_value_gradient,
    sample_trajectories,
)
from .entropy import sampled_entropy_gradient_with_estimate
from .errors import DivergedParameters
from .model import MaskMdp
from .policy import ConditioningMode, PolicyParams, zero_policy


@dataclass
class SynthesisConfig:
    """Loop hyperparameters.

    The step-size defaults are tuned to the small branching scenario (they
    reach its plateau within 60-200 iterations); larger models want smaller
    steps and a gentler dual rate, so shipped scenario files carry their own
    [synthesis] settings and everything is overridable.
    """

    iterations: int = 1000
    batch_size: int = 1500
    batches_per_iter: int = 1
    eta: float = 1.0
    kappa: float = 0.05
    seed: Optional[int] = None
    lambda0: float = 1.0
    theta_bound: float = 1e4
    conditioning: ConditioningMode = ConditioningMode.AUGMENTED
    value_baseline: bool = False   # subtract batch-mean reward-to-go in REINFORCE
    early_stop: bool = False
    early_stop_window: int = 50
    early_stop_tol: float = 1e-4


@dataclass
class SynthesisTrace:
    """Per-iteration synthesis record.

    ``value`` is the exact expected discounted cost of the current mask
    (recomputed by backward induction each iteration); ``value_sampled`` is
    the batch estimate that drove the dual update.
    """

    iterations: list = field(default_factory=list)
    entropy: list = field(default_factory=list)
    value: list = field(default_factory=list)
    value_sampled: list = field(default_factory=list)
    lam: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    wall_s: list = field(default_factory=list)

    def append(self, iteration, entropy, value, value_sampled, lam, grad_norm, wall_s):
        # entropy may be NaN for bare `step` calls that track no estimate;
        # the synthesis loop always records a real one
        if not all(np.isfinite([value, lam, grad_norm])):
            raise DivergedParameters(
                f"non-finite trace entry at iteration {iteration}"
            )
        self.iterations.append(int(iteration))
        self.entropy.append(float(entropy))
        self.value.append(float(value))
        self.value_sampled.append(float(value_sampled))
        self.lam.append(float(lam))
        self.grad_norm.append(float(grad_norm))
        self.wall_s.append(float(wall_s))

    def __len__(self) -> int:
        return len(self.iterations)


@dataclass
class LagrangianState:
    """Mutable optimizer state threaded through the loop."""

    policy: PolicyParams
    lam: float
    iteration: int
    eta: float
    kappa: float
    epsilon: float
    theta_bound: float = 1e4
    trace: SynthesisTrace = field(default_factory=SynthesisTrace)


def lagrangian(entropy_value: float, value: float, lam: float, epsilon: float) -> float:
    """L = H + lam * (eps - V)."""
    return entropy_value + lam * (epsilon - value)


def primal_update(state: LagrangianState, entropy_grad, value_grad) -> np.ndarray:
    """Ascent step on theta; returns the applied Lagrangian gradient."""
    grad = entropy_grad - state.lam * value_grad
    state.policy.theta += state.eta * grad
    peak = float(np.abs(state.policy.theta).max())
    if not np.isfinite(peak) or peak > state.theta_bound:
        raise DivergedParameters(
            f"|theta|_inf = {peak:.3g} exceeded bound {state.theta_bound:.3g}"
            f" at iteration {state.iteration}"
        )
    return grad


def dual_update(state: LagrangianState, value_estimate: float) -> None:
    """Projected multiplier step: lam <- max(0, lam - kappa (eps - V))."""
    state.lam = max(0.0, state.lam - state.kappa * (state.epsilon - value_estimate))


def step(
    state: LagrangianState,
    entropy_grad: np.ndarray,
    value_grad: np.ndarray,
    value_estimate: float,
    entropy_estimate: float = float("nan"),
    value_exact: Optional[float] = None,
    wall_s: float = 0.0,
) -> LagrangianState:
    """One full primal + projected dual update, appending a trace row."""
    grad = primal_update(state, entropy_grad, value_grad)
    dual_update(state, value_estimate)
    state.iteration += 1
    state.trace.append(
        state.iteration,
        entropy_estimate,
        value_estimate if value_exact is None else value_exact,
        value_estimate,
        state.lam,
        float(np.linalg.norm(grad)),
        wall_s,
    )
    return state


def synthesize(
    mdp: MaskMdp,
    config: SynthesisConfig,
    initial_policy: Optional[PolicyParams] = None,
    epsilon: Optional[float] = None,
):
    """Run the primal-dual loop; returns ``(policy, trace)``.

    Every iteration draws ``batch_size`` trajectories under the current mask,
    applies one primal step per mini-batch (entropy and cost gradients both
    from that mini-batch, re-evaluated at the current parameters), then one
    dual step from the full batch's empirical cost.
    """
    eps = mdp.spec.budget if epsilon is None else float(epsilon)
    policy = (
        zero_policy(mdp, config.conditioning) if initial_policy is None else initial_policy.copy()
    )
    state = LagrangianState(
        policy=policy,
        lam=config.lambda0,
        iteration=0,
        eta=config.eta,
        kappa=config.kappa,
        epsilon=eps,
        theta_bound=config.theta_bound,
    )
    rng = np.random.default_rng(config.seed)
    splits = max(1, config.batches_per_iter)
    lagrangian_history = []
    start = time.perf_counter()
    for _ in range(config.iterations):
        batch = sample_trajectories(mdp, state.policy, config.batch_size, rng)
        bounds = np.linspace(0, len(batch), splits + 1).astype(int)
        grads = []
        entropy_sum, entropy_n = 0.0, 0
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            if lo == hi:
                continue
            obs = batch.observations[lo:hi]
            sub = _slice_batch(batch, lo, hi)
            entropy_grad, est = sampled_entropy_gradient_with_estimate(
                mdp, state.policy, obs
            )
            entropy_sum += est.value * est.sample_count
            entropy_n += est.sample_count
            value_grad = reinforce_value_gradient(
                mdp, state.policy, sub, baseline=config.value_baseline
            )
            grads.append(primal_update(state, entropy_grad, value_grad))
        # batch entropy estimate accumulated across the iteration's
        # mini-batch updates (exactly the single-batch estimate when
        # batches_per_iter is 1)
        entropy_est = entropy_sum / max(entropy_n, 1)
        value_sampled = empirical_value(batch, mdp.spec.discount)
        dual_update(state, value_sampled)
        state.iteration += 1
        value_now = exact_value(mdp, state.policy)
        state.trace.append(
            state.iteration,
            entropy_est,
            value_now,
            value_sampled,
            state.lam,
            float(np.linalg.norm(np.mean(grads, axis=0))) if grads else 0.0,
            time.perf_counter() - start,
        )
        if config.early_stop:
            lagrangian_history.append(
                lagrangian(entropy_est, value_now, state.lam, eps)
            )
            w = config.early_stop_window
            if len(lagrangian_history) >= 2 * w:
                recent = np.mean(lagrangian_history[-w:])
                prev = np.mean(lagrangian_history[-2 * w : -w])
                if abs(recent - prev) < config.early_stop_tol:
                    break
    return state.policy, state.trace


def _slice_batch(batch, lo, hi):
    return TrajectoryBatch(
        states=batch.states[lo:hi],
        actions=batch.actions[lo:hi],
        observations=batch.observations[lo:hi],
        costs=batch.costs[lo:hi],
        log_probs=batch.log_probs[lo:hi],
    )
