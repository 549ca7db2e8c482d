"""Neural policies with certified safe-action projections.

A policy computes ``u = Proj(K x + net(x))`` where the projection target
is the state-dependent safe action set of its certificate (or nothing,
for the non-robust baseline).  Forward passes record a tape; the backward
pass returns the gradient with respect to the flat network parameters and
with respect to the input state.  The state gradient includes the paths
through the safe-set coefficients, so rollout adjoints and disturbance
adversaries see the full derivative of the projected action.

Parameter flattening is layer-major, weights (row-major) before bias,
layer 0 first.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import safesets
from .projection import (
    DEFAULT_SETTINGS,
    ProjectionSettings,
    project_halfspace,
    project_halfspace_backward,
    project_polyhedron_forward,
    project_polyhedron_backward,
    project_soc_backward,
    project_soc_forward,
)
from .safesets import DegenerateSingleton, Halfspace, Polyhedron, SocConstraint
from .synthesis import RobustCertificate

POLICY_KINDS = ("none", "nldi-soc", "nldi0-halfspace", "pldi-poly", "hinf-soc")


class Mlp:
    """Feedforward tanh network with manual reverse-mode gradients."""

    def __init__(self, widths, seed=0, zero_final=True):
        widths = [int(w) for w in widths]
        if len(widths) < 2:
            raise ValueError("need at least input and output widths")
        self.widths = widths
        rng = np.random.default_rng(np.random.Philox(key=seed))
        self.weights = []
        self.biases = []
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            scale = 1.0 / np.sqrt(fan_in)
            w = rng.normal(scale=scale, size=(fan_out, fan_in))
            b = np.zeros(fan_out)
            if zero_final and i == len(widths) - 2:
                w = np.zeros_like(w)
            self.weights.append(w)
            self.biases.append(b)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def get_flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def set_flat(self, theta: np.ndarray) -> None:
        theta = np.asarray(theta, dtype=float)
        if theta.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {theta.size}")
        at = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = theta[at:at + w.size].reshape(w.shape).copy()
            at += w.size
            self.biases[i] = theta[at:at + b.size].copy()
            at += b.size

    def forward(self, x):
        """Returns (output, tape); hidden layers tanh, last layer linear."""
        x = np.asarray(x, dtype=float)
        acts = [x]
        h = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = w @ h + b
            h = np.tanh(z) if i < len(self.weights) - 1 else z
            acts.append(h)
        return h, acts

    def backward(self, tape, d_out):
        """Gradients (d_theta_flat, d_x) for a given output cotangent."""
        acts = tape
        g = np.asarray(d_out, dtype=float)
        gw = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            if i < len(self.weights) - 1:
                g = g * (1.0 - acts[i + 1] ** 2)  # tanh'
            gw[i] = np.outer(g, acts[i])
            gb[i] = g.copy()
            g = self.weights[i].T @ g
        flat = np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(gw, gb)])
        return flat, g


@dataclass
class RobustPolicy:
    """``u(x) = Proj_{C(x)}(K x + net(x))`` (projection skipped for kind none)."""

    kind: str
    K: np.ndarray
    net: Mlp
    certificate: RobustCertificate | None = None
    system: object = None
    projection_settings: ProjectionSettings = field(default=DEFAULT_SETTINGS)

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        self.K = np.atleast_2d(np.asarray(self.K, dtype=float))
        if self.kind != "none" and self.certificate is None:
            raise ValueError("robust policy kinds require a certificate")
        if self.kind != "none" and self.system is None:
            raise ValueError("robust policy kinds require the system description")

    @property
    def n_params(self) -> int:
        return self.net.n_params


@dataclass
class PolicyTape:
    x: np.ndarray
    net_tape: list
    proj_kind: str
    proj_ctx: object = None       # projection tape/result
    safe_set: object = None
    singleton: bool = False


def policy_forward(policy: RobustPolicy, x) -> tuple[np.ndarray, PolicyTape]:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("policy input state must be finite")
    net_out, net_tape = policy.net.forward(x)
    u_hat = policy.K @ x + net_out

    if policy.kind == "none":
        return u_hat, PolicyTape(x, net_tape, "none")

    made = safesets.build_safe_set(policy.kind, policy.certificate, policy.system, x)
    if isinstance(made, DegenerateSingleton):
        return made.u_star.copy(), PolicyTape(x, net_tape, "singleton", None, made, True)
    if isinstance(made, Halfspace):
        u, hs_tape = project_halfspace(u_hat, made)
        return u, PolicyTape(x, net_tape, "halfspace", hs_tape, made)
    if isinstance(made, Polyhedron):
        res = project_polyhedron_forward(u_hat, made, policy.projection_settings)
        return res.u, PolicyTape(x, net_tape, "poly", res, made)
    res = project_soc_forward(u_hat, made, policy.projection_settings)
    return res.u, PolicyTape(x, net_tape, "soc", res, made)


def policy_backward(policy: RobustPolicy, tape: PolicyTape, d_u):
    """Gradients (d_theta_flat, d_x) of a loss with cotangent ``d_u``.

    The K gain is synthesis output, not a trainable parameter; d_theta
    covers the network only.  d_x includes the network input path, the
    K x path, and the state-dependence of the safe-set coefficients.
    """
    d_u = np.asarray(d_u, dtype=float)
    cert, system, x = policy.certificate, policy.system, tape.x

    if tape.proj_kind == "none":
        d_theta, d_x_net = policy.net.backward(tape.net_tape, d_u)
        return d_theta, d_x_net + policy.K.T @ d_u

    if tape.proj_kind == "singleton":
        d_x = safesets.hinf_singleton_x_vjp(cert, system, x, d_u)
        return np.zeros(policy.net.n_params), d_x

    if tape.proj_kind == "halfspace":
        d_u_hat, d_eta, d_zeta = project_halfspace_backward(tape.proj_ctx, d_u)
        d_x_set = safesets.nldi0_halfspace_x_vjp(cert, system, x, d_eta, d_zeta)
    elif tape.proj_kind == "poly":
        d_H, d_g, d_u_hat = project_polyhedron_backward(tape.proj_ctx, d_u)
        d_x_set = safesets.pldi_poly_x_vjp(cert, system, x, d_H, d_g)
    else:  # soc
        d_A, d_b, d_c, d_d, d_u_hat = project_soc_backward(tape.proj_ctx, d_u)
        if policy.kind == "hinf-soc":
            d_x_set = safesets.hinf_soc_x_vjp(cert, system, x, d_A, d_b)
        else:
            d_x_set = safesets.nldi_soc_x_vjp(cert, system, x, d_A, d_b, d_c, d_d)
    d_theta, d_x_net = policy.net.backward(tape.net_tape, d_u_hat)
    return d_theta, d_x_net + policy.K.T @ d_u_hat + d_x_set


# ---------------------------------------------------------------------------
# checkpoints


def save_policy(path, policy: RobustPolicy, cert_ref: str = "") -> None:
    payload = {
        "version": 1,
        "arch": policy.net.widths,
        "params": [float(v) for v in policy.net.get_flat()],
        "K": [float(v) for v in policy.K.ravel()],
        "cert-ref": cert_ref,
        "kind": policy.kind,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_policy(path, certificate=None, system=None) -> tuple[RobustPolicy, str]:
    """Load a checkpoint; returns (policy, cert_ref).

    The caller supplies the certificate and system matching ``cert-ref``
    (checkpoints store a reference, not the objects).
    """
    with open(path) as fh:
        payload = json.load(fh)
    net = Mlp(payload["arch"], zero_final=False)
    net.set_flat(np.asarray(payload["params"], dtype=float))
    s = payload["arch"][0]
    k_flat = np.asarray(payload["K"], dtype=float)
    K = k_flat.reshape(-1, s)
    policy = RobustPolicy(
        kind=payload["kind"], K=K, net=net,
        certificate=certificate, system=system,
    )
    return policy, payload.get("cert-ref", "")
