"""Model-based policy training, evaluation, stability monitoring and the
model-predictive adversarial disturbance.

The trainer backpropagates the quadratic rollout cost through the known
dynamics and the policy (including its projection) over the full horizon.
Environment disturbances are treated as exogenous signals during policy
training: their dependence on the visited states is not differentiated.
The adversary differentiates its own disturbance network through the
same machinery, with the policy frozen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import safesets
from .envs import (
    AttenuatingL2Disturbance,
    EnvInstance,
    ZeroDisturbance,
    is_diverged,
    make_disturbance,
    sample_initial_state,
    step,
)
from .policy import Mlp, RobustPolicy, policy_backward, policy_forward
from .synthesis import RobustCertificate


@dataclass
class TrainConfig:
    updates: int = 1000
    rollouts_per_update: int = 20
    lr: float = 1e-4            # 1e-3 works best for the non-robust variant
    seed: int = 0
    eval_every: int = 10
    eval_episodes: int = 5
    eval_adversarial: bool = False
    monitor: bool = True
    grad_clip: float | None = None  # cap on the update gradient norm; None = off
    optimizer: str = "gd"           # "gd" (plain, the default) or "adam"

    def __post_init__(self):
        if self.updates < 1 or self.rollouts_per_update < 1 or self.lr <= 0:
            raise ValueError("updates, rollouts and learning rate must be positive")
        if self.optimizer not in ("gd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class AdversaryConfig:
    replan_every: int = 10
    horizon: int = 40
    inner_steps: int = 20
    inner_lr: float = 1e-2
    hidden: int = 32

    def __post_init__(self):
        if self.horizon < self.replan_every:
            raise ValueError("adversary horizon must cover the replan interval")


@dataclass
class EpisodeRollout:
    states: np.ndarray        # (T+1, s); includes the post-divergence state
    actions: np.ndarray       # (T, a)
    disturbances: np.ndarray  # (T, d) or hull weights (T, L)
    cost: float
    diverged: bool
    tapes: list | None = None

    @property
    def steps(self) -> int:
        return len(self.actions)


@dataclass
class RolloutBatch:
    episodes: list

    @property
    def mean_cost(self) -> float:
        return float(np.mean([e.cost for e in self.episodes]))

    @property
    def n_diverged(self) -> int:
        return sum(e.diverged for e in self.episodes)


def rollout(policy: RobustPolicy, env: EnvInstance, disturbance=None,
            episode_seed: int = 0, with_tapes: bool = False,
            assert_admissible: bool = True) -> EpisodeRollout:
    """Run one episode; truncates at divergence and flags it.

    ``disturbance`` may be None (the env model), the string "none", or a
    callable/adversary handle.  Admissibility of every emitted
    disturbance is asserted unless disabled.
    """
    if disturbance is None:
        disturbance = make_disturbance(env)
    elif disturbance == "none":
        if env.family == "pldi":
            L = env.system.n_vertices
            disturbance = lambda t, x, u: np.full(L, 1.0 / L)
        else:
            disturbance = ZeroDisturbance(env.system.d)
    if hasattr(disturbance, "begin_episode"):
        disturbance.begin_episode(episode_seed)

    rng = env.episode_rng(episode_seed)
    x = sample_initial_state(env, rng)
    states = [x.copy()]
    actions = []
    dists = []
    tapes = [] if with_tapes else None
    cost = 0.0
    diverged = False
    for t in range(env.horizon):
        u, tape = policy_forward(policy, x)
        w = disturbance(t, x, u)
        if assert_admissible:
            _assert_admissible(env, x, u, w)
        cost += env.dt * (float(x @ env.Q @ x) + float(u @ env.R @ u))
        x_next = step(env, x, u, w)
        actions.append(u)
        dists.append(np.asarray(w, dtype=float))
        if with_tapes:
            tapes.append(tape)
        states.append(x_next.copy())
        if is_diverged(x_next):
            diverged = True
            break
        x = x_next
    return EpisodeRollout(
        states=np.asarray(states), actions=np.asarray(actions),
        disturbances=np.asarray(dists), cost=cost, diverged=diverged,
        tapes=tapes,
    )


def _assert_admissible(env, x, u, w):
    if env.family == "nldi":
        bound = float(np.linalg.norm(env.system.C @ x + env.system.D @ u))
        if float(np.linalg.norm(w)) > bound + 1e-9 * (1.0 + bound):
            raise AssertionError(
                f"inadmissible disturbance: ||w||={np.linalg.norm(w):.6e} "
                f"> bound {bound:.6e}"
            )
    elif env.family == "pldi":
        w = np.asarray(w)
        if np.any(w < -1e-12) or abs(float(np.sum(w)) - 1.0) > 1e-9:
            raise AssertionError("hull weights must lie on the simplex")
    # hinf: any finite-energy signal is admissible per model


def _realized_ab(env: EnvInstance, w):
    sys = env.system
    if env.family == "pldi":
        weights = np.asarray(w, dtype=float)
        a_t = sum(g * ai for g, (ai, _) in zip(weights, sys.vertices))
        b_t = sum(g * bi for g, (_, bi) in zip(weights, sys.vertices))
        return a_t, b_t
    return sys.A, sys.B


def rollout_cost_gradient(policy: RobustPolicy, env: EnvInstance,
                          episode: EpisodeRollout) -> np.ndarray:
    """d(episode cost)/d(theta) by reverse sweep through the dynamics.

    Disturbances are treated as fixed exogenous sequences.
    """
    if episode.tapes is None:
        raise ValueError("episode was not recorded with tapes")
    dt = env.dt
    lam = np.zeros(env.s)
    grad = np.zeros(policy.n_params)
    for t in reversed(range(episode.steps)):
        x = episode.states[t]
        u = episode.actions[t]
        a_t, b_t = _realized_ab(env, episode.disturbances[t])
        d_u = dt * 2.0 * (env.R @ u) + dt * (b_t.T @ lam)
        g_t, d_x = policy_backward(policy, episode.tapes[t], d_u)
        grad += g_t
        lam = dt * 2.0 * (env.Q @ x) + lam + dt * (a_t.T @ lam) + d_x
    return grad


# ---------------------------------------------------------------------------
# stability monitor


@dataclass
class MonitorReport:
    flags: list            # step indices violating the discrete decrease
    max_ratio_excess: float  # max of V_{t+1}/threshold - 1 over steps
    max_surrogate: float   # worst continuous worst-case surrogate
    n_steps: int

    @property
    def n_flags(self) -> int:
        return len(self.flags)


def lyapunov_monitor(episode: EpisodeRollout, cert: RobustCertificate,
                     env: EnvInstance, eps: float = 1e-3) -> MonitorReport:
    """Check the discrete exponential-decrease surrogate along a trajectory.

    Flags step t when V(x_{t+1}) > e^{-alpha dt} V(x_t) (1 + eps), with
    the gain-bounded family's energy allowance added before the margin
    test (its guarantee bounds V-growth by the disturbance energy in
    excess of the running cost rather than forcing monotone decay).
    Also reports the worst continuous-time worst-case surrogate computed
    from the model, which carries no discretization error.
    """
    decay = math.exp(-cert.alpha * env.dt)
    flags = []
    worst_ratio = -np.inf
    worst_sur = -np.inf
    sys = env.system
    for t in range(episode.steps):
        x, u = episode.states[t], episode.actions[t]
        v_now = cert.lyapunov(x)
        v_next = cert.lyapunov(episode.states[t + 1])
        threshold = decay * v_now * (1.0 + eps)
        if cert.kind == "hinf":
            w = episode.disturbances[t]
            sigma = cert.multiplier
            allowance = env.dt * sigma * (
                sys.gamma**2 * float(w @ w)
                - float(x @ env.Q @ x) - float(u @ env.R @ u)
            )
            threshold = (decay * v_now + allowance) * (1.0 + eps)
        threshold = max(threshold, 1e-12)
        if v_next > threshold:
            flags.append(t)
        worst_ratio = max(worst_ratio, v_next / threshold - 1.0)
        worst_sur = max(worst_sur, safesets.surrogate(sys, cert, x, u))
    return MonitorReport(flags, float(worst_ratio), float(worst_sur), episode.steps)


# ---------------------------------------------------------------------------
# adversarial disturbance (model-predictive ascent)


class Adversary:
    """Disturbance handle maximizing rollout cost against a frozen policy.

    Every ``replan_every`` steps the disturbance network is re-optimized
    by (normalized) gradient ascent on the cost of a lookahead rollout
    through the known dynamics and the frozen policy.  Emitted
    disturbances are rescaled into the admissible set at every step, so
    admissibility holds by construction.
    """

    def __init__(self, policy: RobustPolicy, env: EnvInstance,
                 cfg: AdversaryConfig = AdversaryConfig(), seed: int = 0):
        self.policy = policy
        self.env = env
        self.cfg = cfg
        self.seed = seed
        self.net = None
        self._next_replan = 0
        if env.family == "pldi":
            self._out_dim = env.system.n_vertices
        else:
            self._out_dim = env.system.d
        self._schedule = None
        if env.family == "hinf":
            model = make_disturbance(env)
            if isinstance(model, AttenuatingL2Disturbance):
                self._schedule = model.norm_at
            else:
                self._schedule = lambda t_s: 1.0

    def begin_episode(self, episode_seed: int) -> None:
        self.net = Mlp([self.env.s, self.cfg.hidden, self._out_dim],
                       seed=(self.seed * 1_000_003 + episode_seed),
                       zero_final=False)
        self._next_replan = 0

    # -- emission -----------------------------------------------------------

    def __call__(self, t: int, x, u):
        if self.net is None:
            self.begin_episode(0)
        if t >= self._next_replan:
            self._replan(np.asarray(x, dtype=float), t)
            self._next_replan = t + self.cfg.replan_every
        return self._emit(t, x, u)[0]

    def _emit(self, t, x, u):
        raw, tape = self.net.forward(np.asarray(x, dtype=float))
        fam = self.env.family
        if fam == "pldi":
            z = raw - np.max(raw)
            e = np.exp(z)
            return e / np.sum(e), (tape, raw)
        if fam == "hinf":
            # reuse the schedule amplitude; direction from the adversary net
            amp = self._schedule(t * self.env.dt)
            nrm = float(np.linalg.norm(raw))
            if nrm < 1e-300:
                return np.zeros(self._out_dim), (tape, raw)
            return (amp / nrm) * raw, (tape, raw)
        sys = self.env.system
        bound = float(np.linalg.norm(sys.C @ x + sys.D @ np.asarray(u, dtype=float)))
        nrm = float(np.linalg.norm(raw))
        if nrm < 1e-300:
            return np.zeros_like(raw), (tape, raw)
        # hard rescale onto the admissible sphere: the full allowance in
        # the network's direction, never above the bound
        return (bound / nrm) * raw, (tape, raw)

    # -- replanning ----------------------------------------------------------

    _GRAD_CLIP = 100.0

    def _replan(self, x0, t0):
        theta = self.net.get_flat()
        for _ in range(self.cfg.inner_steps):
            grad = self._lookahead_gradient(x0, t0)
            nrm = float(np.linalg.norm(grad))
            if not np.isfinite(nrm) or nrm < 1e-300:
                break
            if nrm > self._GRAD_CLIP:
                grad = grad * (self._GRAD_CLIP / nrm)
            theta = theta + self.cfg.inner_lr * grad
            self.net.set_flat(theta)

    def _lookahead_gradient(self, x0, t0):
        env, policy, cfg = self.env, self.policy, self.cfg
        dt = env.dt
        sys = env.system
        fam = env.family
        xs, us, taped_pol, taped_net, ws = [], [], [], [], []
        x = x0.copy()
        for k in range(cfg.horizon):
            u, ptape = policy_forward(policy, x)
            w, (ntape, raw) = self._emit(t0 + k, x, u)
            xs.append(x.copy())
            us.append(u)
            taped_pol.append(ptape)
            taped_net.append((ntape, raw))
            ws.append(w)
            x = step(env, x, u, w)
            if is_diverged(x):
                break
        lam = np.zeros(env.s)
        grad = np.zeros(self.net.n_params)
        for k in reversed(range(len(us))):
            x, u, w = xs[k], us[k], ws[k]
            ntape, raw = taped_net[k]
            a_t, b_t = _realized_ab(env, w)
            d_u = dt * 2.0 * (env.R @ u) + dt * (b_t.T @ lam)
            d_x = dt * 2.0 * (env.Q @ x) + lam + dt * (a_t.T @ lam)
            if fam == "pldi":
                # dL/dweights then through the softmax
                d_w = np.array([
                    dt * float(lam @ (ai @ x + bi @ u))
                    for ai, bi in sys.vertices
                ])
                d_raw = w * (d_w - float(w @ d_w))
            else:
                d_wvec = dt * (sys.G.T @ lam)
                d_raw, d_rho = self._emission_vjp(raw, x, u, d_wvec, t0 + k, fam)
                if fam == "nldi" and d_rho != 0.0:
                    z = sys.C @ x + sys.D @ u
                    rho = float(np.linalg.norm(z))
                    if rho > 1e-300:
                        zhat = z / rho
                        d_x = d_x + d_rho * (sys.C.T @ zhat)
                        d_u = d_u + d_rho * (sys.D.T @ zhat)
            g_net, d_x_net = self.net.backward(ntape, d_raw)
            grad += g_net
            g_pol, d_x_pol = policy_backward(policy, taped_pol[k], d_u)
            lam = d_x + d_x_net + d_x_pol
        return grad

    def _emission_vjp(self, raw, x, u, d_w, t, fam):
        """(d_raw, d_rho) of the admissibility scaling at this step."""
        nrm = float(np.linalg.norm(raw))
        if nrm < 1e-300:
            return np.zeros_like(raw), 0.0
        rhat = raw / nrm
        if fam == "hinf":
            amp = self._schedule(t * self.env.dt)
            d_raw = (amp / nrm) * (d_w - rhat * float(rhat @ d_w))
            return d_raw, 0.0
        sys = self.env.system
        bound = float(np.linalg.norm(sys.C @ x + sys.D @ np.asarray(u, dtype=float)))
        d_raw = (bound / nrm) * (d_w - rhat * float(rhat @ d_w))
        d_rho = float(rhat @ d_w)
        return d_raw, d_rho


def make_adversary(policy: RobustPolicy, env: EnvInstance,
                   cfg: AdversaryConfig = AdversaryConfig(),
                   seed: int = 0) -> Adversary:
    return Adversary(policy, env, cfg, seed)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalResult:
    mean_cost: float
    costs: list
    instability_count: int
    monitor_flags: int
    max_ratio_excess: float = -np.inf
    diverged: list = field(default_factory=list)


def evaluate(policy: RobustPolicy, env: EnvInstance, mode: str = "original",
             episodes: int = 50, seed: int = 0,
             adversary_cfg: AdversaryConfig | None = None,
             cert: RobustCertificate | None = None) -> EvalResult:
    """Mean cost and instability count over paired-seed episodes.

    Episode e uses the env stream (seed + e); running two policies with
    the same arguments pairs their initial states and disturbance nets.
    Adversarial mode builds a fresh adversary against this policy.
    """
    if mode not in ("original", "adversarial"):
        raise ValueError(f"unknown mode {mode!r}")
    disturbance = None
    if mode == "adversarial":
        disturbance = make_adversary(policy, env, adversary_cfg or AdversaryConfig(),
                                     seed=seed)
    costs = []
    diverged = []
    flags = 0
    worst = -np.inf
    for e in range(episodes):
        ep = rollout(policy, env, disturbance=disturbance,
                     episode_seed=seed + e)
        costs.append(ep.cost)
        diverged.append(bool(ep.diverged))
        if cert is not None:
            rep = lyapunov_monitor(ep, cert, env)
            flags += rep.n_flags
            worst = max(worst, rep.max_ratio_excess)
    return EvalResult(float(np.mean(costs)), costs, sum(diverged), flags, worst,
                      diverged)


# ---------------------------------------------------------------------------
# training


@dataclass
class CurveRow:
    epoch: int
    mean_cost_original: float
    mean_cost_adversarial: float
    instability_count: int


@dataclass
class TrainResult:
    policy: RobustPolicy
    curve: list
    monitor_flags: int         # Lyapunov violations across all training rollouts
    train_divergences: int
    skipped_updates: int


def train_mbp(policy: RobustPolicy, env: EnvInstance, cfg: TrainConfig,
              cert: RobustCertificate | None = None,
              adversary_cfg: AdversaryConfig | None = None) -> TrainResult:
    """Plain gradient descent on the rollout cost through known dynamics.

    The learning curve is recorded every ``eval_every`` updates on a
    fixed test set of episode seeds.  When a certificate is supplied and
    monitoring is on, every training rollout is checked for discrete
    Lyapunov-decrease violations.
    """
    monitor_cert = cert if cert is not None else policy.certificate
    curve = []
    flags = 0
    divergences = 0
    skipped = 0
    eval_seed = 1_000_000 + cfg.seed
    adam_m = np.zeros(policy.n_params)
    adam_v = np.zeros(policy.n_params)
    adam_t = 0

    def record(update):
        res_o = evaluate(policy, env, "original", cfg.eval_episodes, eval_seed,
                         cert=monitor_cert if cfg.monitor else None)
        cost_a = float("nan")
        unstable = res_o.instability_count
        nonlocal flags
        flags += res_o.monitor_flags
        if cfg.eval_adversarial:
            res_a = evaluate(policy, env, "adversarial", cfg.eval_episodes,
                             eval_seed, adversary_cfg,
                             cert=monitor_cert if cfg.monitor else None)
            cost_a = res_a.mean_cost
            unstable += res_a.instability_count
            flags += res_a.monitor_flags
        curve.append(CurveRow(update // cfg.eval_every, res_o.mean_cost,
                              cost_a, unstable))

    for update in range(cfg.updates):
        if update % cfg.eval_every == 0:
            record(update)
        grads = []
        for e in range(cfg.rollouts_per_update):
            ep = rollout(policy, env, episode_seed=update * cfg.rollouts_per_update + e,
                         with_tapes=True)
            divergences += int(ep.diverged)
            if cfg.monitor and monitor_cert is not None:
                flags += lyapunov_monitor(ep, monitor_cert, env).n_flags
            grads.append(rollout_cost_gradient(policy, env, ep))
        gbar = np.mean(grads, axis=0)
        if not np.all(np.isfinite(gbar)):
            skipped += 1
            continue
        if cfg.grad_clip is not None:
            nrm = float(np.linalg.norm(gbar))
            if nrm > cfg.grad_clip:
                gbar = gbar * (cfg.grad_clip / nrm)
        if cfg.optimizer == "adam":
            adam_t += 1
            adam_m = 0.9 * adam_m + 0.1 * gbar
            adam_v = 0.999 * adam_v + 0.001 * gbar * gbar
            m_hat = adam_m / (1.0 - 0.9 ** adam_t)
            v_hat = adam_v / (1.0 - 0.999 ** adam_t)
            step = m_hat / (np.sqrt(v_hat) + 1e-8)
        else:
            step = gbar
        policy.net.set_flat(policy.net.get_flat() - cfg.lr * step)
    record(cfg.updates)
    return TrainResult(policy, curve, flags, divergences, skipped)


def write_curve_csv(path, curve) -> None:
    lines = ["epoch,mean_cost_original,mean_cost_adversarial,instability_count"]
    for row in curve:
        lines.append(
            f"{row.epoch},{row.mean_cost_original!r},"
            f"{row.mean_cost_adversarial!r},{row.instability_count}"
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
