"""Environment instances: synthetic generators, physical linearizations,
norm-bound fitting, simulation stepping and initial-state sampling.

All randomness flows through counter-based Philox streams keyed by
``(seed, stream)`` so that instance generation, disturbance nets and
per-episode sampling are reproducible and independent.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .conic import ConeProgram, ConeSettings, ConeSpec, solve_cone_program
from .linalg import psd_project, sqrt_psd, sym_eig
from .policy import Mlp
from .synthesis import HinfSystem, NldiSystem, PldiSystem

GRAVITY = 9.81


def rng_stream(seed: int, stream: int) -> np.random.Generator:
    """Independent deterministic generator for (seed, stream)."""
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
                    np.uint64(stream & 0xFFFFFFFFFFFFFFFF)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


# stream ids
_STREAM_SYSTEM = 0
_STREAM_COST = 1
_STREAM_NET = 2
_STREAM_EPISODE_BASE = 1000


@dataclass
class DisturbanceSpec:
    """How the simulator produces w(t) (or hull weights) each step."""

    kind: str  # "random-net-normbound" | "hull-weights-net" | "attenuating-l2" | "none"
    hidden: int = 32
    amplitude: float = 20.0  # attenuating-l2 peak scale


@dataclass
class InitSampler:
    kind: str                      # "gauss" | "box"
    lo: np.ndarray | None = None   # box bounds (kind "box")
    hi: np.ndarray | None = None


@dataclass
class EnvInstance:
    family: str  # "nldi" | "pldi" | "hinf"
    system: object
    Q: np.ndarray
    R: np.ndarray
    dt: float
    horizon: int
    disturbance: DisturbanceSpec
    init: InitSampler
    seed: int
    name: str = ""
    bound_fit: "BoundFit | None" = None

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")

    @property
    def s(self) -> int:
        return self.system.s

    @property
    def a(self) -> int:
        return self.system.a

    def episode_rng(self, episode_seed: int) -> np.random.Generator:
        return rng_stream(self.seed, _STREAM_EPISODE_BASE + episode_seed)


# ---------------------------------------------------------------------------
# disturbance models


class RandomNetDisturbance:
    """Fixed random network output, rescaled into the admissible ball.

    The raw output is kept when it already satisfies the norm bound and
    shrunk onto it otherwise, so admissibility holds by construction
    while typical magnitudes stay moderate.
    """

    def __init__(self, sys: NldiSystem, hidden: int, seed: int):
        self.sys = sys
        self.net = Mlp([sys.s, hidden, sys.d], seed=seed, zero_final=False)

    def __call__(self, t: int, x, u):
        bound = float(np.linalg.norm(self.sys.C @ x + self.sys.D @ u))
        raw, _ = self.net.forward(x)
        nrm = float(np.linalg.norm(raw))
        if nrm < 1e-300 or bound == 0.0:
            return np.zeros(self.sys.d)
        if nrm <= bound:
            return raw
        return (bound / nrm) * raw


class HullWeightsDisturbance:
    """Simplex weights over hull vertices from a softmax net."""

    def __init__(self, sys: PldiSystem, hidden: int, seed: int):
        self.sys = sys
        self.net = Mlp([sys.s, hidden, sys.n_vertices], seed=seed, zero_final=False)

    def __call__(self, t: int, x, u):
        z, _ = self.net.forward(x)
        z = z - np.max(z)
        e = np.exp(z)
        return e / np.sum(e)


class AttenuatingL2Disturbance:
    """||w(t)|| = amplitude * phi(2t/T) exactly, phi the standard normal pdf."""

    def __init__(self, sys: HinfSystem, hidden: int, seed: int,
                 amplitude: float, total_time: float):
        self.sys = sys
        self.net = Mlp([sys.s, hidden, sys.d], seed=seed, zero_final=False)
        self.amplitude = amplitude
        self.total_time = total_time
        self.dt = None  # set by attach

    def norm_at(self, t_seconds: float) -> float:
        z = 2.0 * t_seconds / self.total_time
        return self.amplitude * math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)

    def __call__(self, t: int, x, u):
        raw, _ = self.net.forward(x)
        nrm = float(np.linalg.norm(raw))
        direction = raw / nrm if nrm > 1e-300 else np.eye(self.sys.d)[0]
        return self.norm_at(t * self.dt) * direction


class ZeroDisturbance:
    def __init__(self, d: int):
        self.d = d

    def __call__(self, t: int, x, u):
        return np.zeros(self.d)


def make_disturbance(env: EnvInstance):
    """Build the env's disturbance callable ``w = f(step_index, x, u)``."""
    spec = env.disturbance
    if spec.kind == "none":
        if env.family == "pldi":
            # uniform hull weights
            L = env.system.n_vertices
            return lambda t, x, u: np.full(L, 1.0 / L)
        return ZeroDisturbance(env.system.d)
    if spec.kind == "random-net-normbound":
        return RandomNetDisturbance(env.system, spec.hidden, _net_seed(env))
    if spec.kind == "hull-weights-net":
        return HullWeightsDisturbance(env.system, spec.hidden, _net_seed(env))
    if spec.kind == "attenuating-l2":
        model = AttenuatingL2Disturbance(
            env.system, spec.hidden, _net_seed(env), spec.amplitude,
            env.horizon * env.dt,
        )
        model.dt = env.dt
        return model
    raise ValueError(f"unknown disturbance kind {spec.kind!r}")


def _net_seed(env: EnvInstance) -> int:
    return int(rng_stream(env.seed, _STREAM_NET).integers(0, 2**31 - 1))


# ---------------------------------------------------------------------------
# stepping


def dynamics_rhs(env: EnvInstance, x, u, w):
    """Continuous-time right-hand side for the env's family.

    For the polytopic family ``w`` holds the hull weights.
    """
    sys = env.system
    if env.family == "pldi":
        weights = np.asarray(w, dtype=float)
        a_t = sum(g * ai for g, (ai, _) in zip(weights, sys.vertices))
        b_t = sum(g * bi for g, (_, bi) in zip(weights, sys.vertices))
        return a_t @ x + b_t @ u
    return sys.A @ x + sys.B @ u + sys.G @ np.asarray(w, dtype=float)


def step(env: EnvInstance, x, u, w, dt: float | None = None) -> np.ndarray:
    """Forward-Euler step ``x' = x + dt * f(x, u, w)``."""
    dt = env.dt if dt is None else dt
    x = np.asarray(x, dtype=float)
    return x + dt * dynamics_rhs(env, x, np.asarray(u, dtype=float), w)


DIVERGENCE_NORM = 1e3


def is_diverged(x) -> bool:
    x = np.asarray(x)
    return (not np.all(np.isfinite(x))) or float(np.max(np.abs(x))) > DIVERGENCE_NORM


# ---------------------------------------------------------------------------
# synthetic generators


@dataclass(frozen=True)
class SyntheticScales:
    """Distribution scales for the synthetic generators.

    The source only pins the cost construction (standard-normal square
    roots); system matrices are "normal distributions" with free scale.
    These defaults keep the disturbance coupling strong enough that
    non-robust gains can be driven to hard divergence by an adversarial
    disturbance while robust synthesis stays feasible at the default
    decay rate on most seeds.
    """

    a_scale: float = 1.0
    b_scale: float = 1.0
    g_scale: float = 1.5
    cd_scale: float = 1.0
    r_ridge: float = 0.1
    pldi_center_scale: float = 0.3
    pldi_spread: float = 0.15


DEFAULT_SCALES = SyntheticScales()


def _random_cost(rng, s, a, r_ridge):
    qh = rng.normal(size=(s, s))
    rh = rng.normal(size=(a, a))
    return qh.T @ qh, rh.T @ rh + r_ridge * np.eye(a)


def gen_synthetic_nldi(seed: int, d_zero: bool = False,
                       scales: SyntheticScales = DEFAULT_SCALES) -> EnvInstance:
    """Random norm-bounded instance, s=5, a=3, d=k=2, dt=0.01, horizon 200."""
    s, a, d, k = 5, 3, 2, 2
    rng = rng_stream(seed, _STREAM_SYSTEM)
    A = scales.a_scale * rng.normal(size=(s, s))
    B = scales.b_scale * rng.normal(size=(s, a))
    G = scales.g_scale * rng.normal(size=(s, d))
    C = scales.cd_scale * rng.normal(size=(k, s))
    D = np.zeros((k, a)) if d_zero else scales.cd_scale * rng.normal(size=(k, a))
    Q, R = _random_cost(rng_stream(seed, _STREAM_COST), s, a, scales.r_ridge)
    return EnvInstance(
        family="nldi",
        system=NldiSystem(A, B, G, C, D),
        Q=Q, R=R, dt=0.01, horizon=200,
        disturbance=DisturbanceSpec("random-net-normbound"),
        init=InitSampler("gauss"),
        seed=seed,
        name=f"synthetic-nldi{'0' if d_zero else ''}-{seed}",
    )


def gen_synthetic_pldi(seed: int,
                       scales: SyntheticScales = DEFAULT_SCALES) -> EnvInstance:
    """Random polytopic instance, L=3, s=5, a=3."""
    s, a, L = 5, 3, 3
    rng = rng_stream(seed, _STREAM_SYSTEM)
    a0 = scales.pldi_center_scale * rng.normal(size=(s, s))
    b0 = scales.b_scale * rng.normal(size=(s, a))
    verts = tuple(
        (a0 + scales.pldi_spread * rng.normal(size=(s, s)),
         b0 + scales.pldi_spread * rng.normal(size=(s, a)))
        for _ in range(L)
    )
    Q, R = _random_cost(rng_stream(seed, _STREAM_COST), s, a, scales.r_ridge)
    return EnvInstance(
        family="pldi",
        system=PldiSystem(verts),
        Q=Q, R=R, dt=0.01, horizon=200,
        disturbance=DisturbanceSpec("hull-weights-net"),
        init=InitSampler("gauss"),
        seed=seed,
        name=f"synthetic-pldi-{seed}",
    )


def gen_synthetic_hinf(seed: int, gamma: float = 10.0,
                       scales: SyntheticScales = DEFAULT_SCALES) -> EnvInstance:
    """Random gain-bounded instance, s=5, a=3, d=2, attenuating disturbance."""
    s, a, d = 5, 3, 2
    rng = rng_stream(seed, _STREAM_SYSTEM)
    A = scales.a_scale * rng.normal(size=(s, s))
    B = scales.b_scale * rng.normal(size=(s, a))
    G = scales.g_scale * rng.normal(size=(s, d))
    Q, R = _random_cost(rng_stream(seed, _STREAM_COST), s, a, scales.r_ridge)
    return EnvInstance(
        family="hinf",
        system=HinfSystem(A, B, G, gamma, Q, R),
        Q=Q, R=R, dt=0.01, horizon=200,
        disturbance=DisturbanceSpec("attenuating-l2"),
        init=InitSampler("gauss"),
        seed=seed,
        name=f"synthetic-hinf-{seed}",
    )


# ---------------------------------------------------------------------------
# physical dynamics


@dataclass(frozen=True)
class CartPoleParams:
    m_c: float = 1.0
    m_p: float = 0.1
    length: float = 0.5
    g: float = GRAVITY


def cartpole_dynamics(x, u, params: CartPoleParams = CartPoleParams()):
    """Nonlinear cart-pole dynamics and the 4x5 Jacobian in (x, u).

    State [cart position, cart velocity, pole angle, pole angular rate],
    scalar horizontal force input.
    """
    x = np.asarray(x, dtype=float)
    uu = float(np.atleast_1d(u)[0])
    mc, mp, ell, g = params.m_c, params.m_p, params.length, params.g
    _, v, phi, om = x
    sin, cos = math.sin(phi), math.cos(phi)
    den = mc + mp * sin**2

    acc = (uu + mp * sin * (ell * om**2 - g * cos)) / den
    angacc = ((mc + mp) * g * sin - uu * cos - mp * ell * om**2 * cos * sin) / (ell * den)
    xdot = np.array([v, acc, om, angacc])

    dacc_dphi = (
        (mp * cos * (om**2 * ell - g * cos) + g * mp * sin**2) / den
        - 2 * mp * sin * cos * (mp * sin * (om**2 * ell - g * cos) + uu) / den**2
    )
    dacc_dom = 2 * om * ell * mp * sin / den
    dacc_du = 1.0 / den
    n_ang = (mc + mp) * g * sin - om**2 * ell * mp * sin * cos - uu * cos
    dang_dphi = (
        ((mc + mp) * g * cos + om**2 * ell * mp * (sin**2 - cos**2) + uu * sin)
        / (ell * den)
        - 2 * mp * sin * cos * n_ang / (ell * den**2)
    )
    dang_dom = -2 * om * mp * sin * cos / den
    dang_du = -cos / (ell * den)

    jac = np.zeros((4, 5))
    jac[0, 1] = 1.0
    jac[1, 2] = dacc_dphi
    jac[1, 3] = dacc_dom
    jac[1, 4] = dacc_du
    jac[2, 3] = 1.0
    jac[3, 2] = dang_dphi
    jac[3, 3] = dang_dom
    jac[3, 4] = dang_du
    return xdot, jac


@dataclass(frozen=True)
class QuadrotorParams:
    m: float = 0.486
    length: float = 0.25
    inertia: float = 0.00383
    g: float = GRAVITY


def quadrotor_dynamics(x, u, params: QuadrotorParams = QuadrotorParams()):
    """Planar quadrotor dynamics and the 6x8 Jacobian in (x, u).

    State [horizontal pos, vertical pos, roll, body-frame velocities x2,
    roll rate]; thrust inputs are offsets from the hover baseline
    (m g / 2 per rotor), so the origin is an equilibrium and the
    dynamics are affine in u.
    """
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    m, ell, inertia, g = params.m, params.length, params.inertia, params.g
    _, _, phi, vx, vz, om = x
    sin, cos = math.sin(phi), math.cos(phi)

    drift = np.array([
        vx * cos - vz * sin,
        vx * sin + vz * cos,
        om,
        vz * om - g * sin,
        -vx * om - g * cos + g,
        0.0,
    ])
    bmat = np.zeros((6, 2))
    bmat[4, :] = 1.0 / m
    bmat[5, 0] = ell / inertia
    bmat[5, 1] = -ell / inertia
    xdot = drift + bmat @ u

    jac = np.zeros((6, 8))
    jac[0, 2] = -vx * sin - vz * cos
    jac[0, 3] = cos
    jac[0, 4] = -sin
    jac[1, 2] = vx * cos - vz * sin
    jac[1, 3] = sin
    jac[1, 4] = cos
    jac[2, 5] = 1.0
    jac[3, 2] = -g * cos
    jac[3, 4] = om
    jac[3, 5] = vz
    jac[4, 2] = g * sin
    jac[4, 3] = -om
    jac[4, 5] = -vx
    jac[5, :] = 0.0
    jac[:, 6:] = bmat
    return xdot, jac


# ---------------------------------------------------------------------------
# norm-bound fitting


@dataclass
class BoundFit:
    """Outcome of fitting ||w||^2 <= ||C x + D u||^2 over a box."""

    C: np.ndarray
    D: np.ndarray
    F: list            # per-output PSD quadratic-form matrices, (s+a) side
    coverage_train: float
    max_violation: float
    active_vars: list  # per-output list of active variable indices
    x_max: np.ndarray
    u_max: np.ndarray
    grid_points: int

    def to_json(self) -> str:
        return json.dumps({
            "version": 1,
            "C": self.C.tolist(),
            "D": self.D.tolist(),
            "F": [f.tolist() for f in self.F],
            "coverage_train": self.coverage_train,
            "max_violation": self.max_violation,
            "active_vars": self.active_vars,
            "x_max": self.x_max.tolist(),
            "u_max": self.u_max.tolist(),
            "grid_points": self.grid_points,
        }, indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "BoundFit":
        d = json.loads(text)
        return BoundFit(
            C=np.asarray(d["C"], dtype=float),
            D=np.asarray(d["D"], dtype=float),
            F=[np.asarray(f, dtype=float) for f in d["F"]],
            coverage_train=d["coverage_train"],
            max_violation=d["max_violation"],
            active_vars=d["active_vars"],
            x_max=np.asarray(d["x_max"], dtype=float),
            u_max=np.asarray(d["u_max"], dtype=float),
            grid_points=int(d["grid_points"]),
        )


def _detect_active_vars(residual_fn, n_vars, hi, rows, probes=24):
    """Variables a residual row actually depends on, by deterministic probing."""
    rng = rng_stream(12345, 0)
    pts = rng.uniform(-1.0, 1.0, size=(probes, n_vars)) * hi[None, :]
    base = np.array([residual_fn(p) for p in pts])  # (probes, rows)
    active = [[] for _ in range(rows)]
    for j in range(n_vars):
        zeroed = pts.copy()
        zeroed[:, j] = 0.0
        alt = np.array([residual_fn(p) for p in zeroed])
        changed = np.max(np.abs(alt - base), axis=0) > 1e-12
        for i in range(rows):
            if changed[i]:
                active[i].append(j)
    return active


def _coverage_lp(features, targets, settings=None):
    """min sum_j (q_j f - w_j^2)  s.t.  q_j f >= w_j^2, by row generation.

    Row generation keeps the working constraint set small; rows violated
    beyond the solver accuracy are pulled in until none remain, so the
    returned point solves the full grid program to solver accuracy.
    """
    settings = settings or ConeSettings(eps=1e-6, max_iters=60_000)
    n_rows, n_f = features.shape
    c = features.sum(axis=0)
    order = np.argsort(-targets)
    sel = set(order[: min(256, n_rows)].tolist())
    sel.update(range(0, n_rows, max(1, n_rows // 1024)))
    scale = 1.0 + np.abs(targets)
    add_tol = 10.0 * settings.eps
    f = np.zeros(n_f)
    for _ in range(40):
        idx = np.array(sorted(sel))
        prog = ConeProgram(
            c, -features[idx], -targets[idx], ConeSpec((("nonneg", idx.size),))
        )
        sol = solve_cone_program(prog, settings)
        f = sol.x
        viol = targets - features @ f
        bad = np.flatnonzero(viol > add_tol * scale)
        fresh = [j for j in bad[np.argsort(-viol[bad])].tolist() if j not in sel]
        if not fresh:
            return f
        sel.update(fresh[:512])
    return f  # coverage is restored by the rescale step regardless


def _tri_features(pts):
    """Quadratic-form features: columns follow upper-triangle (p<=q) order."""
    n, t = pts.shape
    cols = []
    for p in range(t):
        for q_ in range(p, t):
            if p == q_:
                cols.append(pts[:, p] ** 2)
            else:
                cols.append(2.0 * pts[:, p] * pts[:, q_])
    return np.column_stack(cols) if cols else np.zeros((n, 0))


def _tri_to_sym(f, t):
    m = np.zeros((t, t))
    at = 0
    for p in range(t):
        for q_ in range(p, t):
            m[p, q_] = f[at]
            m[q_, p] = f[at]
            at += 1
    return m


def fit_norm_bounds(dynamics_fn, x_max, u_max, grid_points_per_var: int = 50) -> BoundFit:
    """Entrywise quadratic over-bounds of the linearization error.

    For each output row the slack-minimizing linear program is solved
    over a mesh grid of the row's active variables; the resulting
    quadratic form is projected to the PSD cone and rescaled by the
    smallest factor >= 1 restoring full training-grid coverage (the LP
    alone does not force semidefiniteness, the square-root step needs it).
    Outputs whose dynamics are exactly linear get zero rows; in
    particular, dynamics affine in the input yield D = 0 exactly.
    """
    x_max = np.asarray(x_max, dtype=float)
    u_max = np.atleast_1d(np.asarray(u_max, dtype=float))
    s, a = x_max.size, u_max.size
    n_vars = s + a
    hi = np.concatenate([x_max, u_max])

    _, j0 = dynamics_fn(np.zeros(s), np.zeros(a))
    j0 = np.asarray(j0, dtype=float)

    def residual(xi):
        f, _ = dynamics_fn(xi[:s], xi[s:])
        return np.asarray(f, dtype=float) - j0 @ xi

    active = _detect_active_vars(residual, n_vars, hi, s)

    f_mats = []
    coverage_num = 0
    coverage_den = 0
    max_violation = 0.0
    for i in range(s):
        act = active[i]
        if not act:
            f_mats.append(np.zeros((n_vars, n_vars)))
            continue
        t = len(act)
        axes = [np.linspace(-hi[j], hi[j], grid_points_per_var) for j in act]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts_act = np.column_stack([m.ravel() for m in mesh])
        pts = np.zeros((pts_act.shape[0], n_vars))
        pts[:, act] = pts_act
        w = np.array([residual(p)[i] for p in pts])
        targets = w * w
        if float(np.max(targets, initial=0.0)) <= 1e-18:
            f_mats.append(np.zeros((n_vars, n_vars)))
            continue
        features = _tri_features(pts_act)
        f = _coverage_lp(features, targets)
        f_act = psd_project(_tri_to_sym(f, t))
        vals = _tri_features(pts_act) @ _sym_to_tri(f_act, t)
        # smallest tau >= 1 restoring coverage on the training grid
        pos = vals > 1e-300
        if np.any(~pos & (targets > 1e-16)):
            # PSD projection killed a needed direction: bump with a ridge
            ridge = float(np.max(targets)) / max(float(np.min(
                np.sum(pts_act**2, axis=1))), 1e-12)
            f_act = f_act + ridge * np.eye(t)
            vals = _tri_features(pts_act) @ _sym_to_tri(f_act, t)
            pos = vals > 1e-300
        tau = 1.0
        if np.any(pos):
            tau = max(1.0, float(np.max(targets[pos] / vals[pos])))
        f_act = tau * f_act
        vals = vals * tau
        covered = targets <= vals + 1e-9
        coverage_num += int(np.sum(covered))
        coverage_den += covered.size
        max_violation = max(max_violation, float(np.max(targets - vals)))
        f_full = np.zeros((n_vars, n_vars))
        f_full[np.ix_(act, act)] = f_act
        f_mats.append(f_full)

    m_stack = np.vstack([sqrt_psd(f) for f in f_mats])
    c_mat = m_stack[:, :s]
    d_mat = m_stack[:, s:]
    # exact zeros for entries below representational noise
    d_mat[np.abs(d_mat) < 1e-14] = 0.0
    c_mat[np.abs(c_mat) < 1e-14] = 0.0
    coverage = 1.0 if coverage_den == 0 else coverage_num / coverage_den
    return BoundFit(
        C=c_mat, D=d_mat, F=f_mats,
        coverage_train=coverage, max_violation=max_violation,
        active_vars=active, x_max=x_max, u_max=u_max,
        grid_points=grid_points_per_var,
    )


def _sym_to_tri(m, t):
    out = []
    for p in range(t):
        for q_ in range(p, t):
            out.append(m[p, q_])
    return np.array(out)


def bound_coverage(fit: BoundFit, dynamics_fn, grid_points_per_var: int) -> float:
    """Fraction of a fresh mesh grid where the fitted bound covers the
    squared residual (for held-out evaluation at a denser resolution)."""
    s, a = fit.x_max.size, fit.u_max.size
    hi = np.concatenate([fit.x_max, fit.u_max])
    _, j0 = dynamics_fn(np.zeros(s), np.zeros(a))
    j0 = np.asarray(j0, dtype=float)
    covered = 0
    total = 0
    for i in range(s):
        act = fit.active_vars[i]
        if not act:
            continue
        axes = [np.linspace(-hi[j], hi[j], grid_points_per_var) for j in act]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts_act = np.column_stack([m.ravel() for m in mesh])
        pts = np.zeros((pts_act.shape[0], s + a))
        pts[:, act] = pts_act
        w = np.array([
            (np.asarray(dynamics_fn(p[:s], p[s:])[0], dtype=float) - j0 @ p)[i]
            for p in pts
        ])
        f_act = fit.F[i][np.ix_(act, act)]
        vals = np.einsum("np,pq,nq->n", pts_act, f_act, pts_act)
        covered += int(np.sum(w * w <= vals + 1e-9))
        total += pts_act.shape[0]
    return 1.0 if total == 0 else covered / total


# ---------------------------------------------------------------------------
# physical envs as norm-bounded instances


def cartpole_env(seed: int = 0, params: CartPoleParams = CartPoleParams(),
                 x_max=(1.5, 2.0, 0.2, 1.5), u_max=(10.0,),
                 grid_points: int = 50,
                 bound_fit: BoundFit | None = None) -> EnvInstance:
    """Cart-pole linearized about upright as a norm-bounded instance.

    State box and input box delimit where the fitted disturbance bound
    is valid; the simulator keeps the bound honest by construction.
    """
    fit = bound_fit or fit_norm_bounds(
        lambda x, u: cartpole_dynamics(x, u, params), x_max, u_max, grid_points
    )
    _, j0 = cartpole_dynamics(np.zeros(4), np.zeros(1), params)
    sys = NldiSystem(A=j0[:, :4], B=j0[:, 4:], G=np.eye(4), C=fit.C, D=fit.D)
    Q = np.eye(4)
    R = 0.1 * np.eye(1)
    lo = np.array([-1.0, 0.0, -0.1, 0.0])
    hi = np.array([1.0, 0.0, 0.1, 0.0])
    return EnvInstance(
        family="nldi", system=sys, Q=Q, R=R, dt=0.05, horizon=200,
        disturbance=DisturbanceSpec("random-net-normbound"),
        init=InitSampler("box", lo, hi),
        seed=seed, name=f"cartpole-{seed}", bound_fit=fit,
    )


def quadrotor_env(seed: int = 0, params: QuadrotorParams = QuadrotorParams(),
                  x_max=(1.0, 1.0, 0.15, 0.6, 0.6, 1.3), u_max=(2.0, 2.0),
                  grid_points: int = 50,
                  bound_fit: BoundFit | None = None) -> EnvInstance:
    fit = bound_fit or fit_norm_bounds(
        lambda x, u: quadrotor_dynamics(x, u, params), x_max, u_max, grid_points
    )
    _, j0 = quadrotor_dynamics(np.zeros(6), np.zeros(2), params)
    sys = NldiSystem(A=j0[:, :6], B=j0[:, 6:], G=np.eye(6), C=fit.C, D=fit.D)
    Q = np.eye(6)
    R = 0.1 * np.eye(2)
    lo = np.array([-1.0, -1.0, -0.05, 0.0, 0.0, 0.0])
    hi = np.array([1.0, 1.0, 0.05, 0.0, 0.0, 0.0])
    return EnvInstance(
        family="nldi", system=sys, Q=Q, R=R, dt=0.02, horizon=200,
        disturbance=DisturbanceSpec("random-net-normbound"),
        init=InitSampler("box", lo, hi),
        seed=seed, name=f"quadrotor-{seed}", bound_fit=fit,
    )


# ---------------------------------------------------------------------------
# microgrid (user-supplied matrices)


class ConfigError(ValueError):
    pass


def microgrid_from_config(config: dict) -> EnvInstance:
    """Norm-bounded instance from user-supplied A, B, G matrices.

    The bound output matrix C is generated from a seeded normal
    distribution (k rows) and D = 0; Q and R are diagonal with weight 1
    on the performance indices and 0.1 elsewhere.
    """
    try:
        mats = config["matrices"]
        A = np.asarray(mats["A"], dtype=float)
        B = np.asarray(mats["B"], dtype=float)
        G = np.asarray(mats["G"], dtype=float)
    except KeyError as exc:
        raise ConfigError(f"microgrid config missing matrices: {exc}") from exc
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConfigError(f"A must be square, got shape {A.shape}")
    s = A.shape[0]
    if B.ndim != 2 or B.shape[0] != s:
        raise ConfigError(f"B must have {s} rows, got shape {B.shape}")
    if G.ndim != 2 or G.shape[0] != s:
        raise ConfigError(f"G must have {s} rows, got shape {G.shape}")
    a = B.shape[1]
    k = int(config.get("k", 2))
    seed = int(config.get("seed", 0))
    c_scale = float(config.get("c_scale", 0.2))
    C = c_scale * rng_stream(seed, _STREAM_SYSTEM).normal(size=(k, s))
    D = np.zeros((k, a))
    perf = list(config.get("perf_indices", []))
    for p in perf:
        if not 0 <= int(p) < s:
            raise ConfigError(f"perf index {p} out of range for state dim {s}")
    qdiag = np.full(s, 0.1)
    qdiag[[int(p) for p in perf]] = 1.0
    rdiag = np.full(a, 0.1)
    return EnvInstance(
        family="nldi",
        system=NldiSystem(A, B, G, C, D),
        Q=np.diag(qdiag), R=np.diag(rdiag),
        dt=float(config.get("dt", 0.01)),
        horizon=int(config.get("horizon", 200)),
        disturbance=DisturbanceSpec("random-net-normbound"),
        init=InitSampler("gauss"),
        seed=seed,
        name=config.get("name", "microgrid"),
    )


# ---------------------------------------------------------------------------
# initial states


def sample_initial_state(env: EnvInstance, rng: np.random.Generator) -> np.ndarray:
    init = env.init
    if init.kind == "gauss":
        return rng.standard_normal(env.s)
    if init.kind == "box":
        return rng.uniform(init.lo, init.hi)
    raise ValueError(f"unknown init sampler {init.kind!r}")


def find_safe_init_region(cert, x_max) -> tuple[float, np.ndarray]:
    """Largest sublevel set of V inside the box, and a scaled box inside it.

    Returns ``(c, x_init_max)``: c is the minimum of V(x) = x'Px over the
    box boundary (so {V <= c} is contained in the box), and x_init_max
    scales the box by the largest factor whose corners all satisfy
    V <= c.  Boxes are symmetric about the origin.
    """
    x_max = np.asarray(x_max, dtype=float)
    if np.any(x_max <= 0):
        raise ValueError("box half-widths must be positive")
    P = cert.P
    s = x_max.size

    def face_min(dim, sign):
        # minimize x'Px with x_dim fixed; exact coordinate updates with
        # clipping converge for a strictly convex quadratic over a box.
        best = np.inf
        starts = [np.zeros(s)]
        rng = rng_stream(777, dim * 2 + (sign > 0))
        for _ in range(4):
            starts.append(rng.uniform(-x_max, x_max))
        for x0 in starts:
            x = np.clip(x0, -x_max, x_max)
            x[dim] = sign * x_max[dim]
            for _ in range(200):
                delta = 0.0
                for j in range(s):
                    if j == dim:
                        continue
                    rest = P[j] @ x - P[j, j] * x[j]
                    new = np.clip(-rest / P[j, j], -x_max[j], x_max[j])
                    delta = max(delta, abs(new - x[j]))
                    x[j] = new
                if delta < 1e-14:
                    break
            best = min(best, float(x @ P @ x))
        return best

    c = min(face_min(d, sgn) for d in range(s) for sgn in (-1.0, 1.0))

    # dense face sampling as verification; tighten c if sampling finds less
    pts_per_var = max(3, int(round(3000 ** (1.0 / max(s - 1, 1)))))
    for d in range(s):
        axes = [np.linspace(-x_max[j], x_max[j], pts_per_var)
                for j in range(s) if j != d]
        mesh = np.meshgrid(*axes, indexing="ij") if axes else []
        rest = np.column_stack([m.ravel() for m in mesh]) if axes else np.zeros((1, 0))
        for sgn in (-1.0, 1.0):
            pts = np.zeros((rest.shape[0], s))
            cols = [j for j in range(s) if j != d]
            pts[:, cols] = rest
            pts[:, d] = sgn * x_max[d]
            vals = np.einsum("np,pq,nq->n", pts, P, pts)
            c = min(c, float(np.min(vals)))

    corners = np.array(np.meshgrid(*[[-v, v] for v in x_max], indexing="ij"))
    corners = corners.reshape(s, -1).T
    corner_vmax = float(np.max(np.einsum("np,pq,nq->n", corners, P, corners)))
    lo_t, hi_t = 0.0, 1.0
    for _ in range(40):
        mid = 0.5 * (lo_t + hi_t)
        if mid * mid * corner_vmax <= c:
            lo_t = mid
        else:
            hi_t = mid
    return c, lo_t * x_max


# ---------------------------------------------------------------------------
# env config files


def load_env_config(path) -> dict:
    with open(path) as fh:
        config = json.load(fh)
    if not isinstance(config, dict) or "family" not in config:
        raise ConfigError("env config must be a JSON object with a 'family' key")
    if int(config.get("schema", 1)) != 1:
        raise ConfigError(f"unsupported config schema {config.get('schema')}")
    return config


def build_env(config: dict) -> EnvInstance:
    """Construct an EnvInstance from a parsed config dict."""
    family = config["family"]
    seed = int(config.get("seed", 0))
    scale_args = config.get("scales", {})
    scales = SyntheticScales(**scale_args) if scale_args else DEFAULT_SCALES
    if family == "nldi":
        env = gen_synthetic_nldi(seed, bool(config.get("d_zero", False)), scales)
    elif family == "pldi":
        env = gen_synthetic_pldi(seed, scales)
    elif family == "hinf":
        env = gen_synthetic_hinf(seed, float(config.get("gamma", 10.0)), scales)
    elif family == "cartpole":
        fit = _maybe_bounds(config)
        params = CartPoleParams(**config.get("params", {}))
        kw = {}
        if "bound_fit" in config:
            bf = config["bound_fit"]
            kw["x_max"] = tuple(bf.get("x_max", (1.5, 2.0, 0.2, 1.5)))
            kw["u_max"] = tuple(bf.get("u_max", (10.0,)))
            kw["grid_points"] = int(bf.get("grid_points", 50))
        env = cartpole_env(seed, params, bound_fit=fit, **kw)
    elif family == "quadrotor":
        fit = _maybe_bounds(config)
        params = QuadrotorParams(**config.get("params", {}))
        kw = {}
        if "bound_fit" in config:
            bf = config["bound_fit"]
            kw["x_max"] = tuple(bf.get("x_max", (1.0, 1.0, 0.15, 0.6, 0.6, 1.3)))
            kw["u_max"] = tuple(bf.get("u_max", (2.0, 2.0)))
            kw["grid_points"] = int(bf.get("grid_points", 50))
        env = quadrotor_env(seed, params, bound_fit=fit, **kw)
    elif family == "microgrid":
        env = microgrid_from_config(config)
    else:
        raise ConfigError(f"unknown family {family!r}")
    if "dt" in config:
        env.dt = float(config["dt"])
    if "horizon" in config:
        env.horizon = int(config["horizon"])
    return env


def _maybe_bounds(config):
    ref = config.get("bounds_file")
    if not ref:
        return None
    with open(ref) as fh:
        return BoundFit.from_json(fh.read())


# ---------------------------------------------------------------------------
# trajectory dumps


def write_trajectory_csv(path, env: EnvInstance, states, actions, disturbances,
                         cert=None) -> None:
    """CSV dump: t, state, action, disturbance, Lyapunov value, cost step."""
    s, a = env.s, env.a
    d = disturbances.shape[1] if len(disturbances) else 0
    header = (
        ["t"]
        + [f"x{i+1}" for i in range(s)]
        + [f"u{i+1}" for i in range(a)]
        + [f"w{i+1}" for i in range(d)]
        + ["V", "cost_inc"]
    )
    lines = [",".join(header)]
    for t in range(len(actions)):
        x = states[t]
        u = actions[t]
        w = disturbances[t]
        v = cert.lyapunov(x) if cert is not None else 0.0
        inc = env.dt * (float(x @ env.Q @ x) + float(u @ env.R @ u))
        row = [repr(round(t * env.dt, 12))]
        row += [repr(float(val)) for val in x]
        row += [repr(float(val)) for val in u]
        row += [repr(float(val)) for val in w]
        row += [repr(float(v)), repr(float(inc))]
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
