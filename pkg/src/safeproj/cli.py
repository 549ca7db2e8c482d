"""Command-line front end: synthesis, bound fitting, training, evaluation
and method comparisons, with CSV tables and static SVG plots.

Exit codes: 0 success, 1 runtime failure (e.g. infeasible synthesis),
2 configuration or argument error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import plots
from .envs import (
    BoundFit,
    ConfigError,
    EnvInstance,
    bound_coverage,
    build_env,
    cartpole_dynamics,
    CartPoleParams,
    load_env_config,
    quadrotor_dynamics,
    QuadrotorParams,
    fit_norm_bounds,
    write_trajectory_csv,
)
from .policy import Mlp, RobustPolicy, load_policy, save_policy
from .synthesis import (
    InfeasibleError,
    RobustCertificate,
    SynthesisError,
    certificate_residual,
    load_certificate,
    save_certificate,
    solve_lqr_nonrobust,
    synth_hinf,
    synth_nldi,
    synth_pldi,
)
from .training import (
    AdversaryConfig,
    TrainConfig,
    evaluate,
    make_adversary,
    rollout,
    train_mbp,
    write_curve_csv,
)

METHODS = ("lqr", "robust-lqr", "mbp", "robust-mbp")
MODES = ("original", "adversarial")


def robust_kind(env: EnvInstance) -> str:
    if env.family == "pldi":
        return "pldi-poly"
    if env.family == "hinf":
        return "hinf-soc"
    return "nldi0-halfspace" if env.system.d_is_zero else "nldi-soc"


def synthesize(env: EnvInstance, alpha: float) -> RobustCertificate:
    if env.family == "pldi":
        return synth_pldi(env.system, alpha, env.Q, env.R)
    if env.family == "hinf":
        return synth_hinf(env.system, alpha)
    return synth_nldi(env.system, alpha, env.Q, env.R)


def _default_net(env: EnvInstance, seed: int) -> Mlp:
    return Mlp([env.s, 64, 64, env.a], seed=seed, zero_final=True)


def build_policy(method: str, env: EnvInstance,
                 cert: RobustCertificate | None, seed: int = 0) -> RobustPolicy:
    if method == "lqr":
        if env.family == "pldi":
            a0 = np.mean([a for a, _ in env.system.vertices], axis=0)
            b0 = np.mean([b for _, b in env.system.vertices], axis=0)
        else:
            a0, b0 = env.system.A, env.system.B
        gain = solve_lqr_nonrobust(a0, b0, env.Q, env.R)
        return RobustPolicy("none", gain, _default_net(env, seed))
    if cert is None:
        raise ConfigError(f"method {method!r} requires a certificate")
    if method == "robust-lqr":
        return RobustPolicy("none", cert.K, _default_net(env, seed))
    if method == "mbp":
        return RobustPolicy("none", cert.K, _default_net(env, seed))
    if method == "robust-mbp":
        return RobustPolicy(robust_kind(env), cert.K, _default_net(env, seed),
                            cert, env.system)
    raise ConfigError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    env = build_env(load_env_config(args.config))
    cert = synthesize(env, args.alpha)
    save_certificate(args.out, cert)
    resid = certificate_residual(cert, env.system)
    report = {
        "env": env.name,
        "alpha": args.alpha,
        "lmi_residual_max_eig": resid,
        "objective": cert.objective,
        "accepted": bool(resid <= 1e-6),
    }
    with open(args.out + ".report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"certificate written to {args.out} (LMI residual {resid:.3e})")
    return 0


def cmd_fit_bounds(args) -> int:
    config = load_env_config(args.config)
    family = config["family"]
    bf = config.get("bound_fit", {})
    grid = int(bf.get("grid_points", 50))
    if family == "cartpole":
        params = CartPoleParams(**config.get("params", {}))
        x_max = bf.get("x_max", (1.5, 2.0, 0.2, 1.5))
        u_max = bf.get("u_max", (10.0,))
        dyn = lambda x, u: cartpole_dynamics(x, u, params)
    elif family == "quadrotor":
        params = QuadrotorParams(**config.get("params", {}))
        x_max = bf.get("x_max", (1.0, 1.0, 0.15, 0.6, 0.6, 1.3))
        u_max = bf.get("u_max", (2.0, 2.0))
        dyn = lambda x, u: quadrotor_dynamics(x, u, params)
    else:
        raise ConfigError(f"fit-bounds supports cartpole/quadrotor, not {family!r}")
    fit = fit_norm_bounds(dyn, x_max, u_max, grid)
    with open(args.out, "w") as fh:
        fh.write(fit.to_json())
        fh.write("\n")
    held_out = bound_coverage(fit, dyn, 2 * grid)
    print(f"bounds written to {args.out}: training coverage "
          f"{fit.coverage_train:.6f}, held-out ({2*grid} pts/var) {held_out:.6f}")
    return 0


def _train_config(args, config: dict, method: str) -> TrainConfig:
    overrides = dict(config.get("train", {}))
    if args.updates is not None:
        overrides["updates"] = args.updates
    overrides.setdefault("updates", 1000)
    overrides.setdefault("rollouts_per_update", 20)
    overrides.setdefault("lr", 1e-4 if method == "robust-mbp" else 1e-3)
    overrides.setdefault("seed", args.seed)
    return TrainConfig(**overrides)


def _load_or_synth_cert(args, env) -> RobustCertificate | None:
    if args.cert:
        return load_certificate(args.cert)
    try:
        return synthesize(env, args.alpha)
    except SynthesisError:
        return None


def cmd_train(args) -> int:
    config = load_env_config(args.config)
    env = build_env(config)
    if args.method not in ("mbp", "robust-mbp"):
        raise ConfigError("train supports methods mbp and robust-mbp")
    cert = _load_or_synth_cert(args, env)
    policy = build_policy(args.method, env, cert, seed=args.seed)
    cfg = _train_config(args, config, args.method)
    result = train_mbp(policy, env, cfg, cert=cert)
    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, f"{args.method}.json")
    save_policy(ckpt, policy, cert_ref=args.cert or "")
    curve_csv = os.path.join(args.out, f"{args.method}-curve.csv")
    write_curve_csv(curve_csv, result.curve)
    _plot_curve(os.path.join(args.out, f"{args.method}-curve.svg"),
                result.curve, args.method)
    print(f"trained {args.method}: checkpoint {ckpt}; "
          f"final eval cost {result.curve[-1].mean_cost_original:.4f}; "
          f"Lyapunov flags {result.monitor_flags}; "
          f"divergences {result.train_divergences}")
    return 0


def _plot_curve(path, curve, name):
    xs = [row.epoch for row in curve]
    series = [(f"{name} (original)", xs,
               [row.mean_cost_original for row in curve])]
    if any(math.isfinite(row.mean_cost_adversarial) for row in curve):
        series.append((f"{name} (adversarial)", xs,
                       [row.mean_cost_adversarial for row in curve]))
    markers = [("x", row.epoch, row.mean_cost_original)
               for row in curve if row.instability_count > 0]
    svg = plots.render_line_chart(series, title="evaluation cost over training",
                                  x_label="epoch (10 updates)", y_label="cost",
                                  markers=markers)
    with open(path, "w") as fh:
        fh.write(svg)


def _policy_for_eval(args, env, cert) -> RobustPolicy:
    if args.checkpoint:
        policy, _ = load_policy(args.checkpoint, certificate=cert,
                                system=env.system)
        if policy.kind != "none" and cert is None:
            raise ConfigError("checkpoint is a robust policy; supply --cert")
        return policy
    return build_policy(args.method, env, cert, seed=args.seed)


def cmd_eval(args) -> int:
    env = build_env(load_env_config(args.config))
    cert = load_certificate(args.cert) if args.cert else None
    policy = _policy_for_eval(args, env, cert)
    res = evaluate(policy, env, args.mode, args.episodes, args.seed,
                   cert=cert)
    lines = ["episode,cost,diverged"]
    for e, (c, dv) in enumerate(zip(res.costs, res.diverged)):
        lines.append(f"{e},{c!r},{int(dv)}")
    with open(args.out, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"mode={args.mode} episodes={args.episodes} "
          f"mean_cost={res.mean_cost:.6f} instability={res.instability_count} "
          f"monitor_flags={res.monitor_flags}")
    return 0


def cmd_compare(args) -> int:
    with open(args.spec) as fh:
        spec = json.load(fh)
    methods = spec.get("methods", [])
    if not methods:
        raise ConfigError("experiment spec must list at least one method")
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}")
    modes = spec.get("modes", ["original"])
    for m in modes:
        if m not in MODES:
            raise ConfigError(f"unknown mode {m!r}")
    seeds = spec.get("seeds")
    if not seeds:
        raise ConfigError("experiment spec must list explicit seeds")
    episodes = int(spec.get("episodes", 50))
    alpha = float(spec.get("alpha", 0.1))
    out_dir = args.out or spec.get("out_dir", "compare-out")
    os.makedirs(out_dir, exist_ok=True)

    env_config = spec["env_config"]
    if isinstance(env_config, str):
        env_config = load_env_config(env_config)
    env = build_env(env_config)
    cert = synthesize(env, alpha)
    save_certificate(os.path.join(out_dir, "certificate.json"), cert)

    policies = {}
    curves = {}
    for method in methods:
        policy = build_policy(method, env, cert, seed=int(spec.get("train_seed", 0)))
        if method in ("mbp", "robust-mbp"):
            overrides = dict(spec.get("train", {}))
            overrides.setdefault("lr", 1e-4 if method == "robust-mbp" else 1e-3)
            overrides.setdefault("updates", 1000)
            overrides.setdefault("seed", int(spec.get("train_seed", 0)))
            cfg = TrainConfig(**overrides)
            result = train_mbp(policy, env, cfg, cert=cert)
            curves[method] = result.curve
            write_curve_csv(os.path.join(out_dir, f"{method}-curve.csv"),
                            result.curve)
            save_policy(os.path.join(out_dir, f"{method}.json"), policy,
                        cert_ref="certificate.json")
        policies[method] = policy

    rows = []
    detail = ["method,mode,seed,mean_cost,instability_count"]
    for method in methods:
        for mode in modes:
            costs = []
            unstable = 0
            for seed in seeds:
                res = evaluate(policies[method], env, mode, episodes, int(seed),
                               cert=cert if method.startswith("robust") else None)
                detail.append(f"{method},{mode},{seed},{res.mean_cost!r},"
                              f"{res.instability_count}")
                costs.extend(res.costs)
                unstable += res.instability_count
            rows.append((method, mode, float(np.mean(costs)), unstable))

    lines = ["method,mode,mean_cost,instability_count"]
    for method, mode, cost, unstable in rows:
        lines.append(f"{method},{mode},{cost!r},{unstable}")
    with open(os.path.join(out_dir, "compare.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(os.path.join(out_dir, "compare-by-seed.csv"), "w") as fh:
        fh.write("\n".join(detail) + "\n")
    if curves:
        series = []
        markers = []
        for method, curve in curves.items():
            xs = [r.epoch for r in curve]
            series.append((method, xs, [r.mean_cost_original for r in curve]))
            markers += [("x", r.epoch, r.mean_cost_original)
                        for r in curve if r.instability_count > 0]
        svg = plots.render_line_chart(series, title=f"{env.name}: training curves",
                                      x_label="epoch (10 updates)",
                                      y_label="cost", markers=markers)
        with open(os.path.join(out_dir, "curves.svg"), "w") as fh:
            fh.write(svg)
    for method, mode, cost, unstable in rows:
        print(f"{method:12s} {mode:12s} mean_cost={cost:.4f} unstable={unstable}")
    return 0


def cmd_adversary(args) -> int:
    env = build_env(load_env_config(args.config))
    cert = load_certificate(args.cert) if args.cert else None
    policy = _policy_for_eval(args, env, cert)
    adv = make_adversary(policy, env, AdversaryConfig(), seed=args.seed)
    ep = rollout(policy, env, disturbance=adv, episode_seed=args.seed)
    write_trajectory_csv(args.out, env, ep.states, ep.actions,
                         ep.disturbances, cert=cert)
    print(f"adversarial episode: cost={ep.cost:.6f} diverged={ep.diverged}; "
          f"trajectory written to {args.out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="safeproj",
        description="Robust controller synthesis and certified-safe policy "
                    "training on differential-inclusion models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a robust certificate")
    p.add_argument("--config", required=True)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("fit-bounds", help="fit linearization-error norm bounds")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_fit_bounds)

    p = sub.add_parser("train", help="train a model-based planner policy")
    p.add_argument("--config", required=True)
    p.add_argument("--method", required=True, choices=("mbp", "robust-mbp"))
    p.add_argument("--cert", default="")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--updates", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a policy")
    p.add_argument("--config", required=True)
    p.add_argument("--method", default="robust-lqr", choices=METHODS)
    p.add_argument("--checkpoint", default="")
    p.add_argument("--cert", default="")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--mode", default="original", choices=MODES)
    p.add_argument("--episodes", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("compare", help="run a multi-method comparison")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", default="")
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("adversary", help="attack a policy and dump a trajectory")
    p.add_argument("--config", required=True)
    p.add_argument("--method", default="robust-lqr", choices=METHODS)
    p.add_argument("--checkpoint", default="")
    p.add_argument("--cert", default="")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_adversary)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, json.JSONDecodeError, FileNotFoundError, KeyError,
            ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SynthesisError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
