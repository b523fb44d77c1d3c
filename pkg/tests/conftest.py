import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from masksynth.model import HmmSpec, build_mask_mdp, validate
from masksynth.policy import ConditioningMode, zero_policy
from masksynth.scenarios import build_illustrative

settings.register_profile(
    "suite",
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def illustrative_spec():
    return build_illustrative()


@pytest.fixture(scope="session")
def illustrative_mdp(illustrative_spec):
    return build_mask_mdp(illustrative_spec)


def random_hmm_spec(
    rng,
    n_states=4,
    n_actions=2,
    n_obs=3,
    horizon=2,
    secret_size=1,
    discount=1.0,
    concentrated=False,
):
    """Random dense model; `concentrated` sharpens rows to exercise near-zero
    probabilities without creating exact zeros."""
    alpha = 0.3 if concentrated else 1.0
    transition = rng.dirichlet(alpha * np.ones(n_states), size=n_states)
    emission = rng.dirichlet(alpha * np.ones(n_obs), size=(n_states, n_actions))
    initial = rng.dirichlet(np.ones(n_states))
    secret = frozenset(rng.choice(n_states, size=secret_size, replace=False).tolist())
    cost = rng.uniform(0.0, 5.0, size=(n_states, n_actions, n_actions))
    spec = HmmSpec(
        states=tuple(f"q{i}" for i in range(n_states)),
        transition=transition,
        observations=tuple(f"o{i}" for i in range(n_obs)),
        mask_actions=tuple(f"a{i}" for i in range(n_actions)),
        emission=emission,
        initial_dist=initial,
        initial_config=int(rng.integers(n_actions)),
        secret_set=secret,
        mask_cost=cost,
        horizon=horizon,
        discount=discount,
        budget=float(rng.uniform(1.0, 10.0)),
    )
    return validate(spec)


def random_policy(rng, mdp, mode=ConditioningMode.AUGMENTED, scale=0.8):
    pol = zero_policy(mdp, mode)
    pol.theta[:] = rng.normal(0.0, scale, pol.theta.shape)
    return pol


def finite_difference(fn, policy, h=1e-6):
    """Central finite differences of a scalar function of the parameters."""
    grad = np.zeros_like(policy.theta)
    for idx in np.ndindex(policy.theta.shape):
        plus = policy.copy()
        plus.theta[idx] += h
        minus = policy.copy()
        minus.theta[idx] -= h
        grad[idx] = (fn(plus) - fn(minus)) / (2.0 * h)
    return grad


def rel_err(analytic, reference, floor=1e-8):
    """Vector relative error: max abs deviation over the reference scale."""
    analytic = np.asarray(analytic, dtype=float)
    reference = np.asarray(reference, dtype=float)
    scale = max(float(np.abs(reference).max(initial=0.0)), floor)
    return float(np.abs(analytic - reference).max(initial=0.0)) / scale


def softmax_rows_reference(theta):
    e = np.exp(theta - theta.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def policy_action_prob(spec, policy, s, cfg, a):
    """pi(a | state, previous config) straight from theta, bypassing MaskMdp."""
    n_a = len(spec.mask_actions)
    if policy.mode is ConditioningMode.STATE_ONLY:
        row = policy.theta[s]
    else:
        row = policy.theta[s * n_a + cfg]
    return float(softmax_rows_reference(row)[a])


def brute_force_sequence_stats(spec, policy, y):
    """(P(y), P(y, final state secret)) by explicit path enumeration.

    Walks every state/config/action path of the generative process and sums
    path probabilities, independently of the operator algebra.
    """
    length = len(y)
    n_s, n_a = len(spec.states), len(spec.mask_actions)
    total = 0.0
    joint = 0.0

    def recurse(t, s, cfg, prob):
        nonlocal total, joint
        prob = prob * spec.emission[s, cfg, y[t]]
        if prob == 0.0:
            return
        if t == length - 1:
            total += prob
            if s in spec.secret_set:
                joint += prob
            return
        for a in range(n_a):
            pa = policy_action_prob(spec, policy, s, cfg, a)
            if pa == 0.0:
                continue
            for s2 in range(n_s):
                p2 = spec.transition[s, s2]
                if p2 > 0.0:
                    recurse(t + 1, s2, a, prob * pa * p2)

    for s in range(n_s):
        if spec.initial_dist[s] > 0.0:
            recurse(0, s, spec.initial_config, float(spec.initial_dist[s]))
    return total, joint


def brute_force_joint_next_state(spec, policy, y_prefix, aug_state):
    """P(o_{1:t}, Z_{t+1} = (s, cfg)) by path enumeration."""
    length = len(y_prefix)
    n_s, n_a = len(spec.states), len(spec.mask_actions)
    target_s, target_cfg = divmod(aug_state, n_a)
    out = 0.0

    def recurse(t, s, cfg, prob):
        nonlocal out
        prob = prob * spec.emission[s, cfg, y_prefix[t]]
        if prob == 0.0:
            return
        for a in range(n_a):
            pa = policy_action_prob(spec, policy, s, cfg, a)
            if pa == 0.0:
                continue
            for s2 in range(n_s):
                p2 = spec.transition[s, s2]
                if p2 == 0.0:
                    continue
                if t == length - 1:
                    if s2 == target_s and a == target_cfg:
                        out += prob * pa * p2
                else:
                    recurse(t + 1, s2, a, prob * pa * p2)

    for s in range(n_s):
        if spec.initial_dist[s] > 0.0:
            recurse(0, s, spec.initial_config, float(spec.initial_dist[s]))
    return out


def all_sequences(n_obs, length):
    """Every observation sequence in O^length, as an (n, length) array."""
    grids = np.meshgrid(*([np.arange(n_obs)] * length), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def brute_force_conditional_entropy(spec, policy):
    """Entropy of the secret given full observations, by path enumeration."""
    length = spec.horizon + 1
    total_h = 0.0
    for y in all_sequences(len(spec.observations), length):
        p, q = brute_force_sequence_stats(spec, policy, y)
        if p <= 0.0:
            continue
        for w in (q / p, 1.0 - q / p):
            if w > 0.0:
                total_h -= p * w * np.log2(w)
    return total_h
