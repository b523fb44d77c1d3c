"""Command-line entry point.

Subcommands:
  synthesize       run the primal-dual loop, write trace/policy/summary
  evaluate         entropy and exact expected cost of a saved policy
  gradcheck        finite-difference verification of every gradient family
  enumerate-check  total-probability and exact-vs-sampled entropy checks

Exit codes: 0 success, 2 scenario parse/usage error, 3 diverged parameters,
4 policy/model mismatch, 5 gradient-check failure.

The default output directory comes from ``--output-dir`` or the
``MASKSYNTH_OUTPUT_DIR`` environment variable (falling back to ``.``);
``--threads`` caps the numerical worker threads and must act before numpy
loads, which is why the heavy imports live inside the command handlers.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_DIVERGED = 3
EXIT_MISMATCH = 4
EXIT_GRADCHECK = 5


def _add_common(p):
    p.add_argument("scenario", help="path to a scenario TOML file")
    p.add_argument("--beta", type=float, default=None,
                   help="override every sensor's detection probability")
    p.add_argument("--gamma", type=float, default=None, help="override the cost discount")
    p.add_argument("--epsilon", type=float, default=None, help="override the masking budget")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None,
                   help="cap numerical worker threads")
    p.add_argument("--output-dir", default=None,
                   help="artifact directory (default $MASKSYNTH_OUTPUT_DIR or .)")


def build_parser():
    parser = argparse.ArgumentParser(prog="masksynth")
    sub = parser.add_subparsers(dest="command", required=True)

    p_syn = sub.add_parser("synthesize", help="optimize a dynamic mask")
    _add_common(p_syn)
    p_syn.add_argument("--iterations", type=int, default=None)
    p_syn.add_argument("--batch-size", type=int, default=None)
    p_syn.add_argument("--batches-per-iter", type=int, default=None)
    p_syn.add_argument("--eta", type=float, default=None, help="primal step size")
    p_syn.add_argument("--kappa", type=float, default=None, help="dual step size")
    p_syn.add_argument("--lambda0", type=float, default=None, help="initial multiplier")
    p_syn.add_argument("--conditioning", choices=["augmented", "state_only"], default=None)
    p_syn.add_argument("--value-baseline", action="store_true", default=None,
                       help="subtract the batch-mean reward-to-go in REINFORCE")

    p_eval = sub.add_parser("evaluate", help="score a saved policy")
    _add_common(p_eval)
    p_eval.add_argument("policy", help="path to a saved policy file")
    p_eval.add_argument("--samples", type=int, default=20000,
                        help="sample count when exact enumeration is infeasible")

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    _add_common(p_grad)
    p_grad.add_argument("--probes", type=int, default=5,
                        help="random parameter points per gradient family")
    p_grad.add_argument("--threshold", type=float, default=1e-4)

    p_enum = sub.add_parser("enumerate-check",
                            help="total probability and exact-vs-sampled entropy")
    _add_common(p_enum)
    p_enum.add_argument("--samples", type=int, default=4000)
    return parser


def _set_threads(n):
    if n is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(max(1, n))


def _output_dir(args) -> Path:
    out = args.output_dir or os.environ.get("MASKSYNTH_OUTPUT_DIR") or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_model(args):
    from .model import build_mask_mdp
    from .scenario_io import load_scenario

    doc = load_scenario(args.scenario)
    spec = doc.build(beta=args.beta, gamma=args.gamma, epsilon=args.epsilon)
    return doc, spec, build_mask_mdp(spec)


def cmd_synthesize(args) -> int:
    from .errors import DivergedParameters, ZeroProbabilityObservation
    from .optimizer import SynthesisConfig, synthesize
    from .policy import ConditioningMode
    from .scenario_io import save_policy, save_summary, save_trace

    doc, spec, mdp = _load_model(args)
    defaults = doc.synthesis_defaults or {}
    overrides = {
        "iterations": args.iterations,
        "batch_size": args.batch_size,
        "batches_per_iter": args.batches_per_iter,
        "eta": args.eta,
        "kappa": args.kappa,
        "lambda0": args.lambda0,
        "conditioning": args.conditioning,
        "value_baseline": args.value_baseline,
        "seed": args.seed,
    }
    merged = {**defaults, **{k: v for k, v in overrides.items() if v is not None}}
    if "conditioning" in merged:
        merged["conditioning"] = ConditioningMode(merged["conditioning"])
    config = SynthesisConfig(**merged)

    out = _output_dir(args)
    start = time.perf_counter()
    try:
        policy, trace = synthesize(mdp, config)
    except DivergedParameters as exc:
        print(f"error: parameters diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ZeroProbabilityObservation as exc:
        # saturation so fast the batch went off-policy mid-iteration: a
        # divergence symptom, usually oversized step sizes
        print(f"error: sampling went off-policy ({exc}); reduce eta/kappa",
              file=sys.stderr)
        return EXIT_DIVERGED
    wall = time.perf_counter() - start

    save_trace(trace, out / "trace.csv")
    save_policy(policy, mdp, out / "policy.txt")
    entropy_txt, entropy_val = _entropy_for_report(mdp, policy, args.seed, 20000)
    from .costs import exact_value

    cost = exact_value(mdp, policy)
    save_summary(
        out / "summary.txt",
        scenario=doc.name,
        entropy_bits=entropy_val,
        entropy_mode=entropy_txt,
        expected_cost=cost,
        epsilon=mdp.spec.budget,
        iterations=config.iterations,
        wall_seconds=round(wall, 3),
    )
    print(f"entropy {entropy_val:.4f} bits ({entropy_txt}), expected cost {cost:.3f}"
          f" <= budget {mdp.spec.budget:g}: artifacts in {out}")
    return EXIT_OK


def _entropy_for_report(mdp, policy, seed, samples):
    from .costs import sample_trajectories
    from .entropy import (
        ENUMERATION_CAP,
        enumeration_size,
        exact_conditional_entropy,
        sampled_conditional_entropy,
    )

    if enumeration_size(mdp) <= ENUMERATION_CAP:
        return "exact", exact_conditional_entropy(mdp, policy).value
    batch = sample_trajectories(mdp, policy, samples, seed=seed)
    est = sampled_conditional_entropy(mdp, policy, batch.observations)
    return f"sampled n={samples} se={est.std_error:.4f}", est.value


def cmd_evaluate(args) -> int:
    from .costs import exact_value
    from .errors import PolicyModelMismatch
    from .scenario_io import load_policy

    doc, spec, mdp = _load_model(args)
    try:
        policy = load_policy(args.policy, mdp)
    except FileNotFoundError:
        print(f"error: policy file not found: {args.policy}", file=sys.stderr)
        return EXIT_MISMATCH
    except PolicyModelMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    mode_txt, value = _entropy_for_report(mdp, policy, args.seed, args.samples)
    cost = exact_value(mdp, policy)
    print(f"entropy {value:.4f} bits ({mode_txt})")
    print(f"expected cost {cost:.4f} (budget {mdp.spec.budget:g})")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    import numpy as np

    from .costs import exact_value, exact_value_gradient, sample_trajectories
    from .entropy import (
        ENUMERATION_CAP,
        enumeration_size,
        exact_conditional_entropy,
        exact_entropy_gradient,
    )
    from .inference import (
        observable_operators,
        secret_posterior,
        sequence_probability,
        sequence_probability_gradient,
    )
    from .policy import ConditioningMode, zero_policy

    doc, spec, mdp = _load_model(args)
    rng = np.random.default_rng(args.seed)
    h = 1e-5
    worst = {"sequence_likelihood": 0.0, "secret_posterior": 0.0, "cost_value": 0.0}
    enumerable = enumeration_size(mdp) <= ENUMERATION_CAP
    if enumerable:
        worst["conditional_entropy"] = 0.0
    else:
        print("model too large for enumeration; skipping the entropy family")

    def fd(fn, pol):
        grad = np.zeros_like(pol.theta)
        for idx in np.ndindex(pol.theta.shape):
            plus, minus = pol.copy(), pol.copy()
            plus.theta[idx] += h
            minus.theta[idx] -= h
            grad[idx] = (fn(plus) - fn(minus)) / (2 * h)
        return grad

    def rel(analytic, reference):
        scale = max(float(np.abs(reference).max(initial=0.0)), 1e-8)
        return float(np.abs(analytic - reference).max(initial=0.0)) / scale

    for _ in range(args.probes):
        pol = zero_policy(mdp, ConditioningMode.STATE_ONLY)
        pol.theta[:] = rng.normal(0.0, 0.8, pol.theta.shape)
        y = sample_trajectories(mdp, pol, 1, seed=int(rng.integers(2**31))).observations[0]
        oos = observable_operators(mdp, pol)

        grad = sequence_probability_gradient(oos, y)
        ref = fd(lambda p: sequence_probability(observable_operators(mdp, p), y), pol)
        worst["sequence_likelihood"] = max(worst["sequence_likelihood"], rel(grad, ref))

        post = secret_posterior(oos, y)
        ref = fd(
            lambda p: secret_posterior(observable_operators(mdp, p), y).p_secret, pol
        )
        worst["secret_posterior"] = max(worst["secret_posterior"], rel(post.grad_p_secret, ref))

        grad = exact_value_gradient(mdp, pol)
        ref = fd(lambda p: exact_value(mdp, p), pol)
        worst["cost_value"] = max(worst["cost_value"], rel(grad, ref))

        if enumerable:
            grad = exact_entropy_gradient(mdp, pol)
            ref = fd(lambda p: exact_conditional_entropy(mdp, p).value, pol)
            worst["conditional_entropy"] = max(worst["conditional_entropy"], rel(grad, ref))

    ok = True
    for family, err in worst.items():
        status = "ok" if err < args.threshold else "FAIL"
        ok = ok and err < args.threshold
        print(f"{family:22s} max relative error {err:.3e}  [{status}]")
    return EXIT_OK if ok else EXIT_GRADCHECK


def cmd_enumerate_check(args) -> int:
    from .costs import sample_trajectories
    from .entropy import (
        ENUMERATION_CAP,
        enumeration_size,
        exact_conditional_entropy,
        sampled_conditional_entropy,
        total_sequence_probability,
    )
    from .policy import ConditioningMode, zero_policy

    doc, spec, mdp = _load_model(args)
    if enumeration_size(mdp) > ENUMERATION_CAP:
        print(
            f"error: |O|^L = {enumeration_size(mdp)} exceeds the enumeration cap",
            file=sys.stderr,
        )
        return EXIT_PARSE
    import numpy as np

    rng = np.random.default_rng(args.seed)
    pol = zero_policy(mdp, ConditioningMode.STATE_ONLY)
    pol.theta[:] = rng.normal(0.0, 0.5, pol.theta.shape)
    total = total_sequence_probability(mdp, pol)
    exact = exact_conditional_entropy(mdp, pol).value
    batch = sample_trajectories(mdp, pol, args.samples, seed=args.seed)
    est = sampled_conditional_entropy(mdp, pol, batch.observations)
    gap = abs(est.value - exact)
    tol = 3.0 * est.std_error + 1e-9
    print(f"sum of sequence probabilities: {total:.12f}")
    print(f"exact entropy {exact:.6f} bits, sampled {est.value:.6f} "
          f"+- {est.std_error:.6f} (n={args.samples})")
    ok = abs(total - 1.0) < 1e-9 and gap <= tol
    print("ok" if ok else f"FAIL: |sampled - exact| = {gap:.6f} > {tol:.6f}")
    return EXIT_OK if ok else EXIT_GRADCHECK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _set_threads(getattr(args, "threads", None))
    from .errors import ScenarioFormatError

    handlers = {
        "synthesize": cmd_synthesize,
        "evaluate": cmd_evaluate,
        "gradcheck": cmd_gradcheck,
        "enumerate-check": cmd_enumerate_check,
    }
    try:
        return handlers[args.command](args)
    except ScenarioFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
