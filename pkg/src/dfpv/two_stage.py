"""Two-stage ridge regression with fixed or learned features.

Stage 1 regresses outcome-proxy features ``psi_W(w)`` on
``phi_A1(a) (x) phi_Z(z)``; stage 2 regresses ``y`` on
``psi_A2(a) (x) V phi(a, z)``. With fixed RBF dictionaries both stages are a
single closed-form solve. DFPV additionally trains the four feature networks,
alternating Adam steps on the stage-1 and stage-2 losses with the ridge
weights recomputed in closed form at every step.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import ObservationSet, _mat
from .errors import InvalidArgumentError, NonFiniteLossError
from .features import (
    FeatureMap,
    MlpFeatureMap,
    RbfDictionary,
    build_rbf_dictionary,
    feature_map_from_dict,
    init_mlp,
    mlp_features,
    transform,
)
from .numkit import GradTape, grad_backward, kron_rows, solve_spd

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA_GRID = [(l1, l2) for l1 in (1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0) for l2 in (1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0)]


# -- closed-form weights ---------------------------------------------------


def _ridge(X: np.ndarray, Y: Optional[np.ndarray], lam: float, count: int) -> np.ndarray:
    """``(X^T X + count*lam*I)^{-1} X^T Y``; the dual form is used when it is smaller.

    ``Y=None`` returns the operator ``(X^T X + count*lam*I)^{-1} X^T`` itself.
    """
    if lam < 0:
        raise InvalidArgumentError(f"ridge penalty must be nonnegative, got {lam}")
    rows, d = X.shape
    reg = count * lam
    if lam > 0 and d > rows:
        # push-through identity: same solution, rows x rows system
        G = X @ X.T
        G[np.diag_indices_from(G)] += reg
        return X.T @ solve_spd(G, np.eye(rows) if Y is None else Y)
    A = X.T @ X
    A[np.diag_indices_from(A)] += reg
    return solve_spd(A, X.T if Y is None else X.T @ Y, jitter=lam > 0)


def fit_stage1_weights(Psi1, Phi1, lambda1: float, m: Optional[int] = None) -> np.ndarray:
    """``V = Psi1^T Phi1 (Phi1^T Phi1 + m*lambda1*I)^{-1}``, shape ``(d_W, d_1)``."""
    Psi1 = np.asarray(Psi1, dtype=np.float64)
    Phi1 = np.asarray(Phi1, dtype=np.float64)
    if Psi1.ndim != 2 or Phi1.ndim != 2 or Psi1.shape[0] != Phi1.shape[0]:
        raise InvalidArgumentError(f"stage-1 matrices need equal row counts, got {Psi1.shape} and {Phi1.shape}")
    m = Phi1.shape[0] if m is None else int(m)
    if m < 1:
        raise InvalidArgumentError("m must be at least 1")
    return _ridge(Phi1, Psi1, lambda1, m).T


def fit_stage2_weights(Phi2, y, lambda2: float, n: Optional[int] = None) -> np.ndarray:
    """``u = (Phi2^T Phi2 + n*lambda2*I)^{-1} Phi2^T y``."""
    Phi2 = np.asarray(Phi2, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if Phi2.ndim != 2 or Phi2.shape[0] != y.shape[0]:
        raise InvalidArgumentError(f"stage-2 design {Phi2.shape} does not match {y.shape[0]} outcomes")
    n = Phi2.shape[0] if n is None else int(n)
    if n < 1:
        raise InvalidArgumentError("n must be at least 1")
    return _ridge(Phi2, y, lambda2, n)


# -- models ------------------------------------------------------------------


@dataclass
class TrainConfig:
    lambda1: float = 0.1
    lambda2: float = 0.1
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    outer_iterations: int = 200
    stage1_inner_steps: int = 20
    stage2_inner_steps: int = 1
    batch_size: Optional[int] = None
    convergence_rtol: float = 1e-5
    convergence_window: int = 10
    seed: int = 0
    hidden_dims: Tuple[int, ...] = (32, 16)
    feature_dim: int = 8
    standardize_inputs: bool = False
    feature_intercept: bool = False
    center_outcome: bool = True

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        self.validate()

    def validate(self) -> None:
        if not (self.lambda1 >= 0 and self.lambda2 >= 0):
            raise InvalidArgumentError("lambda1 and lambda2 must be nonnegative")
        if not self.learning_rate > 0:
            raise InvalidArgumentError("learning_rate must be positive")
        counts = [self.outer_iterations, self.stage1_inner_steps, self.stage2_inner_steps, self.convergence_window, self.feature_dim]
        if self.batch_size is not None:
            counts.append(self.batch_size)
        if any(int(c) != c or c < 1 for c in counts) or any(h < 1 for h in self.hidden_dims):
            raise InvalidArgumentError("iteration counts, batch size and layer widths must be positive integers")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise InvalidArgumentError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TwoStageModel:
    """Fitted bridge ``h(a, w) = y_offset + u^T (psi_A2(a) (x) psi_W(w))`` plus the stage-1 map ``V``.

    ``mu_w`` is the mean of ``psi_W`` over the outcome-proxy sample ``S_W``.
    ``y_offset`` is an unpenalized constant (zero unless the outcome was centered).
    """

    phi_a1: FeatureMap
    phi_z: FeatureMap
    psi_a2: FeatureMap
    psi_w: FeatureMap
    V: np.ndarray
    u: np.ndarray
    mu_w: np.ndarray
    lambda1: float
    lambda2: float
    y_offset: float = 0.0

    estimator = "two_stage"

    def stage1_features(self, a, z) -> np.ndarray:
        return kron_rows(_batch(transform(self.phi_a1, a)), _batch(transform(self.phi_z, z)))

    def predict_stage1(self, a, z) -> np.ndarray:
        """Estimated ``E[psi_W(W) | a, z]`` per row."""
        return self.stage1_features(a, z) @ self.V.T

    def predict_outcome(self, a, z) -> np.ndarray:
        """Estimated ``E[Y | a, z]`` per row."""
        return self.y_offset + kron_rows(_batch(transform(self.psi_a2, a)), self.predict_stage1(a, z)) @ self.u

    def _payload(self) -> dict:
        return {
            "estimator": self.estimator,
            "phi_a1": self.phi_a1.to_dict(),
            "phi_z": self.phi_z.to_dict(),
            "psi_a2": self.psi_a2.to_dict(),
            "psi_w": self.psi_w.to_dict(),
            "V": self.V.tolist(),
            "u": self.u.tolist(),
            "mu_w": self.mu_w.tolist(),
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "y_offset": self.y_offset,
        }

    def to_dict(self) -> dict:
        return self._payload()

    @staticmethod
    def _common(d: dict) -> dict:
        return dict(
            phi_a1=feature_map_from_dict(d["phi_a1"]),
            phi_z=feature_map_from_dict(d["phi_z"]),
            psi_a2=feature_map_from_dict(d["psi_a2"]),
            psi_w=feature_map_from_dict(d["psi_w"]),
            V=np.asarray(d["V"], dtype=np.float64),
            u=np.asarray(d["u"], dtype=np.float64),
            mu_w=np.asarray(d["mu_w"], dtype=np.float64),
            lambda1=float(d["lambda1"]),
            lambda2=float(d["lambda2"]),
            y_offset=float(d.get("y_offset", 0.0)),
        )


@dataclass
class FixedFeatureModel(TwoStageModel):
    estimator = "fixed_feature"

    @classmethod
    def from_dict(cls, d: dict) -> "FixedFeatureModel":
        return cls(**cls._common(d))


@dataclass
class DfpvModel(TwoStageModel):
    config: TrainConfig = field(default_factory=TrainConfig)
    final_losses: Tuple[float, float] = (float("nan"), float("nan"))
    loss_trace: List[Tuple[float, float]] = field(default_factory=list, repr=False)
    iterations: int = 0

    estimator = "dfpv"

    def to_dict(self) -> dict:
        d = self._payload()
        d["config"] = self.config.to_dict()
        d["final_losses"] = list(self.final_losses)
        d["iterations"] = self.iterations
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DfpvModel":
        return cls(
            **cls._common(d),
            config=TrainConfig.from_dict(d["config"]),
            final_losses=tuple(d.get("final_losses", (float("nan"), float("nan")))),
            iterations=int(d.get("iterations", 0)),
        )

    @property
    def theta(self) -> "DfpvFeatures":
        return DfpvFeatures(self.phi_a1, self.phi_z, self.psi_a2, self.psi_w)


def model_from_dict(d: dict) -> TwoStageModel:
    kinds = {"dfpv": DfpvModel, "fixed_feature": FixedFeatureModel}
    try:
        return kinds[d["estimator"]].from_dict(d)
    except KeyError as exc:
        raise InvalidArgumentError(f"not a serialized model: missing or unknown {exc}") from None


def _batch(x: np.ndarray) -> np.ndarray:
    return x[None, :] if x.ndim == 1 else x


# -- DFPV losses -------------------------------------------------------------


@dataclass
class DfpvFeatures:
    """The four feature networks ``theta = (theta_A1, theta_Z, theta_A2, theta_W)``."""

    phi_a1: MlpFeatureMap
    phi_z: MlpFeatureMap
    psi_a2: MlpFeatureMap
    psi_w: MlpFeatureMap

    def stage1_parameters(self) -> Dict[str, np.ndarray]:
        return {**self.phi_a1.parameters("phi_a1."), **self.phi_z.parameters("phi_z.")}

    def stage2_parameters(self) -> Dict[str, np.ndarray]:
        return {**self.psi_a2.parameters("psi_a2."), **self.psi_w.parameters("psi_w.")}


@dataclass
class LossResult:
    loss: float
    grads: Dict[str, np.ndarray]
    V: np.ndarray
    u: Optional[np.ndarray] = None


def _check_finite(value: float, what: str) -> float:
    if not np.isfinite(value):
        raise NonFiniteLossError(f"{what} is not finite ({value})")
    return float(value)


def _check_finite_array(x: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteLossError(f"{what} contains NaN or inf")
    return x


def dfpv_stage1_loss(theta: DfpvFeatures, a, z, w, lambda1: float) -> LossResult:
    """Stage-1 loss at the closed-form ``V(theta)`` and its gradient in ``(theta_A1, theta_Z)``.

    ``V`` minimizes the same penalized objective, so holding it fixed while
    differentiating gives the total derivative.
    """
    a, z, w = (_mat(v) for v in (a, z, w))
    m = a.shape[0]
    if m == 0:
        raise InvalidArgumentError("stage-1 data is empty")
    Psi1 = _check_finite_array(mlp_features(w, theta.psi_w), "stage-1 target features")
    tape = GradTape()
    fa = mlp_features(a, theta.phi_a1, tape, "phi_a1.")
    fz = mlp_features(z, theta.phi_z, tape, "phi_z.")
    Phi1 = tape.kron_rows(fa, fz)
    V = fit_stage1_weights(Psi1, _check_finite_array(Phi1.value, "stage-1 features"), lambda1, m)
    fit = tape.sq_error(tape.matmul_const(Phi1, V.T), Psi1, 1.0 / m)
    loss = _check_finite(float(fit.value) + lambda1 * float(np.sum(V * V)), "stage-1 loss")
    return LossResult(loss, grad_backward(tape, fit), V)


def dfpv_stage2_loss(theta: DfpvFeatures, a2, z2, y2, a1, z1, w1, lambda1: float, lambda2: float) -> LossResult:
    """Stage-2 loss at the closed-form ``u(theta)`` and its gradient in ``(theta_A2, theta_W)``.

    The stage-1 networks are frozen, so ``V(theta_W) = Psi1(theta_W)^T M`` with
    ``M = Phi1 (Phi1^T Phi1 + m*lambda1*I)^{-1}`` constant; the gradient in
    ``theta_W`` flows through that product. ``u`` is handled by the envelope
    argument as in stage 1.
    """
    a2, z2, a1, z1, w1 = (_mat(v) for v in (a2, z2, a1, z1, w1))
    y2 = _check_finite_array(np.asarray(y2, dtype=np.float64).reshape(-1), "stage-2 outcomes")
    m, n = a1.shape[0], a2.shape[0]
    if m == 0 or n == 0:
        raise InvalidArgumentError("stage-1 and stage-2 data must be nonempty")
    Phi1 = _check_finite_array(kron_rows(mlp_features(a1, theta.phi_a1), mlp_features(z1, theta.phi_z)), "stage-1 features")
    Mt = _ridge(Phi1, None, lambda1, m)  # M^T, shape (d1, m)
    Phi1_tilde = kron_rows(mlp_features(a2, theta.phi_a1), mlp_features(z2, theta.phi_z))

    tape = GradTape()
    Psi1 = mlp_features(w1, theta.psi_w, tape, "psi_w.")
    Vt = tape.const_matmul(Mt, Psi1)  # V^T, shape (d1, d_W)
    P = tape.const_matmul(Phi1_tilde, Vt)
    Phi2 = tape.kron_rows(mlp_features(a2, theta.psi_a2, tape, "psi_a2."), P)
    u = fit_stage2_weights(_check_finite_array(Phi2.value, "stage-2 features"), y2, lambda2, n)
    fit = tape.sq_error(tape.matmul_const(Phi2, u[:, None]), y2[:, None], 1.0 / n)
    loss = _check_finite(float(fit.value) + lambda2 * float(u @ u), "stage-2 loss")
    return LossResult(loss, grad_backward(tape, fit), Vt.value.T, u)


# -- training ----------------------------------------------------------------


class Adam:
    """Adam over a dict of parameter arrays, updated in place."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, p in params.items():
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            p -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


class _Batcher:
    """Index batches drawn without replacement, reshuffled every epoch."""

    def __init__(self, size: int, batch_size: Optional[int], rng: np.random.Generator):
        self.size = size
        self.batch_size = None if batch_size is None or batch_size >= size else batch_size
        self.rng = rng
        self.perm = np.arange(size)
        self.pos = size

    def next(self) -> np.ndarray:
        if self.batch_size is None:
            return self.perm
        if self.pos + self.batch_size > self.size:
            self.perm = self.rng.permutation(self.size)
            self.pos = 0
        idx = self.perm[self.pos : self.pos + self.batch_size]
        self.pos += self.batch_size
        return np.sort(idx)


INIT_ATTEMPTS = 10


def init_dfpv_features(data: ObservationSet, config: TrainConfig) -> DfpvFeatures:
    """Draw the four networks from ``config.seed``.

    A network whose features are all zero on its training inputs gets no
    gradient and stays dead, so it is redrawn from a derived seed (at most
    ``INIT_ATTEMPTS`` draws).
    """
    da, dz, dw = data.dims()
    seeds = np.random.SeedSequence(config.seed).generate_state(4)
    dims = [[d, *config.hidden_dims, config.feature_dim] for d in (da, dz, da, dw)]
    a_all = np.vstack([data.a1, data.a2])
    z_all = np.vstack([data.z1, data.z2])
    inputs = (a_all, z_all, a_all, data.w1)
    nets = []
    for k, (d, s, x) in enumerate(zip(dims, seeds, inputs)):
        for attempt in range(INIT_ATTEMPTS):
            seed = int(s) if attempt == 0 else int(np.random.SeedSequence([config.seed, k, attempt]).generate_state(1)[0])
            net = init_mlp(d, seed, config.feature_intercept)
            if config.standardize_inputs:
                net = net.with_standardization(x)
            if np.any(mlp_features(x, net)[:, : config.feature_dim]):
                break
            logger.debug("network %d is dead at initialization (attempt %d); redrawing", k, attempt)
        nets.append(net)
    return DfpvFeatures(*nets)


def mean_feature(fmap: FeatureMap, samples) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.shape[0] == 0:
        raise InvalidArgumentError("outcome-proxy sample is empty")
    return _batch(transform(fmap, samples)).mean(axis=0)


def train_dfpv(data: ObservationSet, config: Optional[TrainConfig] = None, theta: Optional[DfpvFeatures] = None) -> DfpvModel:
    """Fit DFPV by alternating Adam updates on the two stage losses.

    Each outer iteration takes ``stage1_inner_steps`` steps on
    ``(theta_A1, theta_Z)`` then ``stage2_inner_steps`` steps on
    ``(theta_A2, theta_W)``. Training stops after ``outer_iterations`` or once
    the stage-2 loss changes by less than ``convergence_rtol`` (relative) over
    ``convergence_window`` iterations.

    Raises
    ------
    NonFiniteLossError
        A loss became NaN/inf; ``iteration`` and ``loss_trace`` are attached.
    """
    config = config or TrainConfig()
    config.validate()
    theta = theta or init_dfpv_features(data, config)
    rng = np.random.Generator(np.random.Philox(config.seed))
    batch1 = _Batcher(data.m, config.batch_size, rng)
    batch2 = _Batcher(data.n, config.batch_size, rng)
    opt_kw = dict(lr=config.learning_rate, beta1=config.adam_beta1, beta2=config.adam_beta2, eps=config.adam_eps)
    opt1, opt2 = Adam(**opt_kw), Adam(**opt_kw)
    params1, params2 = theta.stage1_parameters(), theta.stage2_parameters()
    lam1, lam2 = config.lambda1, config.lambda2
    offset = float(np.mean(data.y2)) if config.center_outcome else 0.0
    y2_all = data.y2 - offset

    trace: List[Tuple[float, float]] = []
    it = 0
    try:
        for it in range(config.outer_iterations):
            i1, i2 = batch1.next(), batch2.next()
            a1, z1, w1 = data.a1[i1], data.z1[i1], data.w1[i1]
            a2, z2, y2 = data.a2[i2], data.z2[i2], y2_all[i2]
            for _ in range(config.stage1_inner_steps):
                r1 = dfpv_stage1_loss(theta, a1, z1, w1, lam1)
                opt1.step(params1, r1.grads)
            for _ in range(config.stage2_inner_steps):
                r2 = dfpv_stage2_loss(theta, a2, z2, y2, a1, z1, w1, lam1, lam2)
                opt2.step(params2, r2.grads)
            trace.append((r1.loss, r2.loss))
            w = config.convergence_window
            if len(trace) > w:
                prev, cur = trace[-1 - w][1], trace[-1][1]
                if abs(cur - prev) <= config.convergence_rtol * abs(prev):
                    logger.debug("converged after %d outer iterations", it + 1)
                    break
        it += 1
        final1 = dfpv_stage1_loss(theta, data.a1, data.z1, data.w1, lam1)
        final2 = dfpv_stage2_loss(theta, data.a2, data.z2, y2_all, data.a1, data.z1, data.w1, lam1, lam2)
    except NonFiniteLossError as exc:
        raise NonFiniteLossError(
            f"training diverged at outer iteration {it}: {exc}", iteration=it, loss_trace=trace
        ) from exc

    return DfpvModel(
        phi_a1=theta.phi_a1,
        phi_z=theta.phi_z,
        psi_a2=theta.psi_a2,
        psi_w=theta.psi_w,
        V=final1.V,
        u=final2.u,
        mu_w=mean_feature(theta.psi_w, data.outcome_proxy_sample()),
        lambda1=lam1,
        lambda2=lam2,
        y_offset=offset,
        config=config,
        final_losses=(final1.loss, final2.loss),
        loss_trace=trace,
        iterations=it,
    )


# -- fixed features ----------------------------------------------------------


@dataclass(frozen=True)
class FixedDictionaries:
    phi_a1: RbfDictionary
    phi_z: RbfDictionary
    psi_a2: RbfDictionary
    psi_w: RbfDictionary


def build_dictionaries(data: ObservationSet, n_centers: int = 100, seed: int = 0) -> FixedDictionaries:
    """RBF dictionaries centered on stage-1 points, bandwidth by the median heuristic."""
    da = build_rbf_dictionary(data.a1, n_centers, seed)
    return FixedDictionaries(
        phi_a1=da,
        phi_z=build_rbf_dictionary(data.z1, n_centers, seed + 1),
        psi_a2=da,
        psi_w=build_rbf_dictionary(data.w1, n_centers, seed + 2),
    )


class FixedFeatureFitter:
    """Fixed-feature fits on one dataset, reusing feature matrices and stage-1 solves.

    Useful for grid searches: stage 1 is solved once per distinct ``lambda1``.
    """

    def __init__(self, data: ObservationSet, dictionaries: FixedDictionaries):
        d = dictionaries
        if any(x is None for x in (d.phi_a1, d.phi_z, d.psi_a2, d.psi_w)):
            raise InvalidArgumentError("dictionaries for all four roles are required")
        self.data, self.dictionaries = data, d
        self.Phi1 = kron_rows(transform(d.phi_a1, data.a1), transform(d.phi_z, data.z1))
        self.Psi1 = transform(d.psi_w, data.w1)
        self.Phi1_tilde = kron_rows(transform(d.phi_a1, data.a2), transform(d.phi_z, data.z2))
        self.Psi_a2 = transform(d.psi_a2, data.a2)
        self.mu_w = mean_feature(d.psi_w, data.outcome_proxy_sample())
        self._stage1: Dict[float, Tuple[np.ndarray, np.ndarray]] = {}

    def stage1(self, lambda1: float) -> Tuple[np.ndarray, np.ndarray]:
        """``(V, Phi2)`` for this ``lambda1``."""
        key = float(lambda1)
        if key not in self._stage1:
            V = fit_stage1_weights(self.Psi1, self.Phi1, key)
            self._stage1[key] = (V, kron_rows(self.Psi_a2, self.Phi1_tilde @ V.T))
        return self._stage1[key]

    def fit(self, lambda1: float, lambda2: float) -> FixedFeatureModel:
        V, Phi2 = self.stage1(lambda1)
        u = fit_stage2_weights(Phi2, self.data.y2, lambda2)
        d = self.dictionaries
        return FixedFeatureModel(d.phi_a1, d.phi_z, d.psi_a2, d.psi_w, V, u, self.mu_w, float(lambda1), float(lambda2))


def fit_fixed_feature(data: ObservationSet, dictionaries: FixedDictionaries, lambda1: float, lambda2: float) -> FixedFeatureModel:
    """Closed-form two-stage fit with fixed dictionaries."""
    return FixedFeatureFitter(data, dictionaries).fit(lambda1, lambda2)


# -- cross-stage tuning ------------------------------------------------------


@dataclass
class TuneResult:
    lambda1: float
    lambda2: float
    scores: List[Tuple[float, float, float, float]]  # (lambda1, lambda2, stage1_oos, stage2_oos)

    @property
    def best(self) -> Tuple[float, float]:
        return self.lambda1, self.lambda2


def out_of_sample_losses(model: TwoStageModel, data: ObservationSet) -> Tuple[float, float]:
    """Stage-1 loss on the stage-2 split and stage-2 loss on the stage-1 split."""
    r1 = transform(model.psi_w, data.w2) - model.predict_stage1(data.a2, data.z2)
    r2 = data.y1 - model.predict_outcome(data.a1, data.z1)
    return float(np.mean(np.sum(r1 * r1, axis=1))), float(np.mean(r2 * r2))


def tune_lambdas(
    full_data: ObservationSet,
    grid: Sequence[Tuple[float, float]] = DEFAULT_LAMBDA_GRID,
    fit: Optional[Callable[[ObservationSet, float, float], TwoStageModel]] = None,
    dictionaries: Optional[FixedDictionaries] = None,
) -> TuneResult:
    """Pick ``(lambda1, lambda2)`` by the stage-2 loss on held-out stage-1 records.

    ``fit`` defaults to the fixed-feature estimator with ``dictionaries``
    (built from ``full_data`` when omitted). Ties go to the larger ``lambda2``,
    then the larger ``lambda1``.
    """
    grid = [(float(l1), float(l2)) for l1, l2 in grid]
    if not grid:
        raise InvalidArgumentError("the lambda grid is empty")
    if not full_data.has_full_records:
        raise InvalidArgumentError("tuning needs (a, z, w, y) on both splits")
    if fit is None:
        fitter = FixedFeatureFitter(full_data, dictionaries or build_dictionaries(full_data))

        def fit(data, l1, l2):
            return fitter.fit(l1, l2)

    scores = []
    for l1, l2 in dict.fromkeys(grid):
        s1, s2 = out_of_sample_losses(fit(full_data, l1, l2), full_data)
        scores.append((l1, l2, s1, s2))
    best = min(scores, key=lambda s: (s[3], -s[1], -s[0]))
    return TuneResult(best[0], best[1], scores)
