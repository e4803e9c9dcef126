"""Feature maps: fixed Gaussian RBF dictionaries and small ReLU networks.

Every network layer, the last one included, is followed by a ReLU, so learned
features are elementwise nonnegative.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from scipy.spatial.distance import cdist

from .errors import InvalidArgumentError
from .numkit import GradTape, Node, median_heuristic


def _as_batch(x, dim: int, what: str):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim <= 1
    X = x.reshape(1, -1) if single else x
    if X.ndim != 2 or X.shape[1] != dim:
        raise InvalidArgumentError(f"{what} expects inputs of dimension {dim}, got shape {x.shape}")
    return X, single


@dataclass(frozen=True)
class RbfDictionary:
    """Gaussian features ``exp(-|x - c_k|^2 / (2 bandwidth^2))`` over ``K`` centers."""

    centers: np.ndarray
    bandwidth: float

    def __post_init__(self):
        centers = np.asarray(self.centers, dtype=np.float64)
        if centers.ndim == 1:
            centers = centers[:, None]
        if centers.ndim != 2 or centers.shape[0] < 1 or centers.shape[1] < 1:
            raise InvalidArgumentError("an RBF dictionary needs at least one center")
        if not (np.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise InvalidArgumentError(f"bandwidth must be positive, got {self.bandwidth}")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "bandwidth", float(self.bandwidth))

    @property
    def input_dim(self) -> int:
        return self.centers.shape[1]

    @property
    def output_dim(self) -> int:
        return self.centers.shape[0]

    def to_dict(self) -> dict:
        return {"kind": "rbf", "centers": self.centers.tolist(), "bandwidth": self.bandwidth}

    @classmethod
    def from_dict(cls, d: dict) -> "RbfDictionary":
        return cls(np.asarray(d["centers"], dtype=np.float64), float(d["bandwidth"]))


def rbf_features(x, dictionary: RbfDictionary) -> np.ndarray:
    """Evaluate the dictionary at one point (returns ``K``) or a batch (returns ``n x K``)."""
    X, single = _as_batch(x, dictionary.input_dim, "rbf_features")
    sq = cdist(X, dictionary.centers, "sqeuclidean")
    out = np.exp(-sq / (2.0 * dictionary.bandwidth**2))
    return out[0] if single else out


def build_rbf_dictionary(points, n_centers: int = 100, seed: int = 0) -> RbfDictionary:
    """Centers are a seeded subsample of ``min(n_centers, len(points))`` points;
    the bandwidth comes from the median heuristic over all points."""
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if n_centers < 1:
        raise InvalidArgumentError("n_centers must be at least 1")
    rng = np.random.Generator(np.random.Philox(seed))
    k = min(n_centers, X.shape[0])
    idx = np.sort(rng.choice(X.shape[0], k, replace=False))
    return RbfDictionary(X[idx].copy(), median_heuristic(X, seed=seed))


@dataclass
class MlpFeatureMap:
    """Fully-connected ReLU network.

    ``weights[l]`` has shape ``(layer_dims[l+1], layer_dims[l])``. Inputs are
    first mapped through the fixed standardization ``(x - input_shift) / input_scale``,
    which is not trained. With ``append_constant`` a trailing feature fixed at 1
    is added after the last ReLU.
    """

    layer_dims: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    input_shift: Optional[np.ndarray] = None
    input_scale: Optional[np.ndarray] = None
    append_constant: bool = False

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        if len(self.layer_dims) < 2:
            raise InvalidArgumentError("an MLP needs an input dim and at least one layer")
        if any(d < 1 for d in self.layer_dims):
            raise InvalidArgumentError(f"layer sizes must be positive, got {self.layer_dims}")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64).reshape(-1) for b in self.biases]
        n_layers = len(self.layer_dims) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise InvalidArgumentError("number of weight/bias arrays does not match layer_dims")
        for l in range(n_layers):
            shape = (self.layer_dims[l + 1], self.layer_dims[l])
            if self.weights[l].shape != shape or self.biases[l].shape != (shape[0],):
                raise InvalidArgumentError(f"layer {l} parameters inconsistent with layer_dims {self.layer_dims}")
        d = self.layer_dims[0]
        self.input_shift = np.zeros(d) if self.input_shift is None else np.asarray(self.input_shift, dtype=np.float64).reshape(d)
        self.input_scale = np.ones(d) if self.input_scale is None else np.asarray(self.input_scale, dtype=np.float64).reshape(d)
        if np.any(self.input_scale <= 0):
            raise InvalidArgumentError("input_scale entries must be positive")

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1] + int(self.append_constant)

    def parameters(self, prefix: str = "") -> Dict[str, np.ndarray]:
        """Live parameter arrays keyed as ``{prefix}W{l}`` / ``{prefix}b{l}``."""
        out = {}
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}W{l}"] = W
            out[f"{prefix}b{l}"] = b
        return out

    def copy(self) -> "MlpFeatureMap":
        return MlpFeatureMap(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.input_shift.copy(),
            self.input_scale.copy(),
            self.append_constant,
        )

    def with_standardization(self, points) -> "MlpFeatureMap":
        """Copy whose input standardization is the mean/std of ``points``."""
        X = np.asarray(points, dtype=np.float64).reshape(-1, self.input_dim)
        sd = X.std(axis=0)
        m = self.copy()
        m.input_shift = X.mean(axis=0)
        m.input_scale = np.where(sd > 0, sd, 1.0)
        return m

    def to_dict(self) -> dict:
        return {
            "layer_dims": list(self.layer_dims),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "input_shift": self.input_shift.tolist(),
            "input_scale": self.input_scale.tolist(),
            "append_constant": self.append_constant,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpFeatureMap":
        return cls(
            d["layer_dims"],
            [np.asarray(w, dtype=np.float64) for w in d["weights"]],
            [np.asarray(b, dtype=np.float64) for b in d["biases"]],
            d.get("input_shift"),
            d.get("input_scale"),
            bool(d.get("append_constant", False)),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "MlpFeatureMap":
        return cls.from_dict(json.loads(text))


def init_mlp(layer_dims: Sequence[int], seed: int, append_constant: bool = False) -> MlpFeatureMap:
    """He-uniform weights (bound ``sqrt(6/fan_in)``) and zero biases."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2:
        raise InvalidArgumentError("init_mlp needs at least one layer")
    if any(d < 1 for d in dims):
        raise InvalidArgumentError(f"layer sizes must be positive, got {dims}")
    rng = np.random.Generator(np.random.Philox(seed))
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpFeatureMap(dims, weights, biases, append_constant=append_constant)


def mlp_features(x, fmap: MlpFeatureMap, tape: Optional[GradTape] = None, prefix: str = "") -> Union[np.ndarray, Node]:
    """Forward pass through the network.

    Without a tape this returns an array (``d_out`` for one point, ``n x d_out``
    for a batch). With a tape the parameters are registered under
    ``prefix`` and the output node is returned.
    """
    X, single = _as_batch(x, fmap.input_dim, "mlp_features")
    h = (X - fmap.input_shift) / fmap.input_scale
    if tape is None:
        for W, b in zip(fmap.weights, fmap.biases):
            h = np.maximum(h @ W.T + b, 0.0)
        if fmap.append_constant:
            h = np.hstack([h, np.ones((h.shape[0], 1))])
        return h[0] if single else h
    node = h
    for l, (W, b) in enumerate(zip(fmap.weights, fmap.biases)):
        Wn = tape.param(f"{prefix}W{l}", W)
        bn = tape.param(f"{prefix}b{l}", b)
        node = tape.relu(tape.affine(node, Wn, bn))
    if fmap.append_constant:
        # constant-weight affine map: [h, 1]
        d = fmap.layer_dims[-1]
        node = tape.affine(node, np.eye(d + 1, d), np.eye(1, d + 1, d)[0])
    return node


FeatureMap = Union[RbfDictionary, MlpFeatureMap]


def transform(fmap: FeatureMap, x) -> np.ndarray:
    """Evaluate either kind of feature map."""
    if isinstance(fmap, RbfDictionary):
        return rbf_features(x, fmap)
    return mlp_features(x, fmap)


def feature_map_from_dict(d: dict) -> FeatureMap:
    if d.get("kind") == "rbf":
        return RbfDictionary.from_dict(d)
    return MlpFeatureMap.from_dict(d)
