"""Causal quantities computed from a fitted two-stage model."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidArgumentError
from .features import FeatureMap, transform
from .numkit import kron_rows
from .two_stage import TwoStageModel, mean_feature


def _rows(x: np.ndarray) -> np.ndarray:
    return x[None, :] if x.ndim == 1 else x


@dataclass
class StructuralEstimate:
    """``f(a) = offset + u^T (psi_A2(a) (x) mu_W)``."""

    u: np.ndarray
    psi_a2: FeatureMap
    mu_w: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64).reshape(-1)
        self.mu_w = np.asarray(self.mu_w, dtype=np.float64).reshape(-1)
        if self.u.size != self.psi_a2.output_dim * self.mu_w.size:
            raise InvalidArgumentError(
                f"u has {self.u.size} entries, expected {self.psi_a2.output_dim} x {self.mu_w.size}"
            )


def mean_outcome_feature(psi_w: FeatureMap, samples) -> np.ndarray:
    """Average of ``psi_W(w)`` over the outcome-proxy sample."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        raise InvalidArgumentError("S_W is empty")
    if samples.ndim == 1:
        samples = samples[:, None] if psi_w.input_dim == 1 else samples[None, :]
    return mean_feature(psi_w, samples)


def structural_estimate(model: TwoStageModel, samples=None) -> StructuralEstimate:
    """Package a model's structural function, optionally re-averaging ``psi_W`` over ``samples``."""
    mu = model.mu_w if samples is None else mean_outcome_feature(model.psi_w, samples)
    return StructuralEstimate(model.u, model.psi_a2, mu, model.y_offset)


def eval_structural(est: StructuralEstimate, a) -> np.ndarray:
    """Structural function at one treatment (scalar) or a batch of treatments (vector)."""
    a = np.asarray(a, dtype=np.float64)
    d = est.psi_a2.input_dim
    single = a.ndim == 0 or (a.ndim == 1 and a.size == d)
    if single:
        a = a.reshape(1, -1)
    elif a.ndim == 1 and d == 1:
        a = a[:, None]
    feats = _rows(transform(est.psi_a2, a))
    out = est.offset + kron_rows(feats, np.broadcast_to(est.mu_w, (feats.shape[0], est.mu_w.size))) @ est.u
    return float(out[0]) if single else out


def eval_bridge(model: TwoStageModel, a, w) -> np.ndarray:
    """``h(a, w) = y_offset + u^T (psi_A2(a) (x) psi_W(w))`` for matching rows of ``a`` and ``w``."""
    a = np.asarray(a, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    single = a.ndim <= 1 and w.ndim <= 1 and a.size == model.psi_a2.input_dim and w.size == model.psi_w.input_dim
    if single:
        a, w = a.reshape(1, -1), w.reshape(1, -1)
    if a.ndim == 1:
        a = a[:, None]
    if w.ndim == 1:
        w = w[:, None]
    fa = _rows(transform(model.psi_a2, a))
    fw = _rows(transform(model.psi_w, w))
    if fa.shape[0] != fw.shape[0]:
        raise InvalidArgumentError(f"{fa.shape[0]} treatments but {fw.shape[0]} outcome proxies")
    out = model.y_offset + kron_rows(fa, fw) @ model.u
    return float(out[0]) if single else out


# -- policies ----------------------------------------------------------------


def policy_cost(c1, c2):
    """Price set from the two fuel costs: ``23 + c1*c2``."""
    return 23.0 + np.asarray(c1, dtype=np.float64) * np.asarray(c2, dtype=np.float64)


def policy_price(p):
    """Thirty percent price cut with a floor of 10: ``max(0.7p, 10)``."""
    return np.maximum(0.7 * np.asarray(p, dtype=np.float64), 10.0)


POLICY_KINDS = ("cost_policy", "price_policy", "tabulated")
CONTEXTS = ("costs", "price")


@dataclass(frozen=True)
class Policy:
    """Deterministic policy mapping a context to a treatment.

    ``cost_policy`` reads the costs ``(c1, c2)``, ``price_policy`` the current
    price. A ``tabulated`` policy returns the action of the nearest table key
    (first key wins ties); its ``context`` says which variable it reads.
    """

    kind: str
    context: str = "costs"
    keys: Optional[np.ndarray] = field(default=None, compare=False)
    actions: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise InvalidArgumentError(f"unknown policy kind {self.kind!r}")
        if self.kind == "cost_policy":
            object.__setattr__(self, "context", "costs")
        elif self.kind == "price_policy":
            object.__setattr__(self, "context", "price")
        if self.context not in CONTEXTS:
            raise InvalidArgumentError(f"unknown policy context {self.context!r}")
        if self.kind == "tabulated":
            keys = np.asarray(self.keys, dtype=np.float64)
            keys = keys.reshape(keys.shape[0], -1) if keys.ndim else keys.reshape(1, 1)
            actions = np.asarray(self.actions, dtype=np.float64).reshape(keys.shape[0], -1)
            if keys.shape[0] < 1:
                raise InvalidArgumentError("a tabulated policy needs at least one entry")
            object.__setattr__(self, "keys", keys)
            object.__setattr__(self, "actions", actions)

    def __call__(self, c) -> np.ndarray:
        """Actions for a batch of contexts, shape ``(n, d_A)``."""
        c = np.asarray(c, dtype=np.float64)
        if c.ndim == 1:
            c = c[:, None]
        if self.kind == "cost_policy":
            if c.shape[1] != 2:
                raise InvalidArgumentError("cost_policy expects two cost columns")
            return policy_cost(c[:, 0], c[:, 1])[:, None]
        if self.kind == "price_policy":
            return policy_price(c[:, :1])
        d2 = ((c[:, None, :] - self.keys[None, :, :]) ** 2).sum(-1)
        return self.actions[np.argmin(d2, axis=1)]

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "context": self.context}
        if self.kind == "tabulated":
            d["keys"] = self.keys.tolist()
            d["actions"] = self.actions.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Policy":
        return cls(d["kind"], d.get("context", "costs"), d.get("keys"), d.get("actions"))


def constant_policy(action, context: str = "costs") -> Policy:
    """Tabulated policy with a single entry, so every context maps to ``action``."""
    action = np.atleast_1d(np.asarray(action, dtype=np.float64))
    width = 2 if context == "costs" else 1
    return Policy("tabulated", context, np.zeros((1, width)), action[None, :])


def policy_contexts(policy: Policy, a, z) -> np.ndarray:
    """Select the context column(s) a policy reads from treatment/proxy records."""
    return np.asarray(z if policy.context == "costs" else a, dtype=np.float64)


def estimate_value(model: TwoStageModel, policy: Policy, contexts, w) -> float:
    """Policy value: mean of ``h(pi(c_i), w_i)`` over the evaluation sample.

    Pairing ``pi(c_i)`` with ``w_i`` assumes the context is independent of the
    outcome proxy given the confounder. ``price_policy`` reads the observed
    price, which need not satisfy this; the estimate is computed as is.
    """
    contexts = np.asarray(contexts, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if contexts.shape[0] == 0 or w.size == 0:
        raise InvalidArgumentError("the policy-evaluation sample is empty")
    if w.ndim == 1:
        w = w[:, None]
    actions = policy(contexts)
    if actions.shape[0] != w.shape[0]:
        raise InvalidArgumentError(f"{actions.shape[0]} contexts but {w.shape[0]} outcome proxies")
    return float(np.mean(eval_bridge(model, actions, w)))
