"""Dense linear algebra helpers and a small reverse-mode gradient tape.

Matrices are plain ``float64`` numpy arrays. The tape only knows the handful
of primitives the two-stage losses are built from: affine maps, ReLU,
row-wise Kronecker products, products with a constant matrix and a
squared-error reduction.
"""
from __future__ import annotations

from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.linalg import cho_solve
from scipy.spatial.distance import pdist

from .errors import DegenerateBandwidthError, InvalidArgumentError, SingularMatrixError

MEDIAN_SUBSAMPLE_CAP = 2000
_JITTER_SCALE = 1e-12
_JITTER_RETRIES = 4


def kron_vec(a, b) -> np.ndarray:
    """Return ``vec(a b^T)`` flattened row-major, ``out[i*len(b) + j] = a[i]*b[j]``."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise InvalidArgumentError("kron_vec needs two nonempty vectors")
    return np.outer(a, b).ravel()


def kron_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Apply :func:`kron_vec` to matching rows of two matrices."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise InvalidArgumentError(
            f"kron_rows needs two matrices with equal row counts, got {a.shape} and {b.shape}"
        )
    n = a.shape[0]
    return (a[:, :, None] * b[:, None, :]).reshape(n, a.shape[1] * b.shape[1])


def _cholesky_ok(L: np.ndarray) -> bool:
    d = np.diag(L)
    if not np.all(np.isfinite(L)) or d.size == 0:
        return False
    # numerically singular pivots count as a failed factorization
    return d.min() ** 2 > d.size * np.finfo(np.float64).eps * d.max() ** 2


def solve_spd(A, B, jitter: bool = True) -> np.ndarray:
    """Solve ``A X = B`` for symmetric positive-definite ``A`` by Cholesky.

    If the factorization fails (or has numerically zero pivots) and
    ``jitter`` is true, ``1e-12 * trace(A)/n`` is added to the diagonal and
    multiplied by 10 on each of up to four retries.

    Raises
    ------
    SingularMatrixError
        No acceptable factorization was found.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidArgumentError(f"solve_spd needs a square matrix, got shape {A.shape}")
    vector_rhs = B.ndim == 1
    B2 = B[:, None] if vector_rhs else B
    if B2.ndim != 2 or B2.shape[0] != A.shape[0]:
        raise InvalidArgumentError(f"right-hand side has {B2.shape[0]} rows, matrix has {A.shape[0]}")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B2))):
        raise InvalidArgumentError("solve_spd inputs must be finite")
    scale = max(np.abs(A).max(initial=0.0), 1e-300)
    if np.abs(A - A.T).max(initial=0.0) > 1e-8 * scale:
        raise InvalidArgumentError("solve_spd needs a symmetric matrix")

    n = A.shape[0]
    shifts = [0.0]
    if jitter:
        base = _JITTER_SCALE * np.trace(A) / n
        shifts += [base * 10.0**k for k in range(_JITTER_RETRIES + 1) if base > 0]

    for shift in shifts:
        try:
            L = np.linalg.cholesky(A + shift * np.eye(n) if shift else A)
        except np.linalg.LinAlgError:
            continue
        if not _cholesky_ok(L):
            continue
        X = cho_solve((L, True), B2)
        if np.all(np.isfinite(X)):
            return X[:, 0] if vector_rhs else X
    raise SingularMatrixError(f"Cholesky factorization of a {n}x{n} matrix failed after jitter retries")


def median_heuristic(points, seed: int = 0) -> float:
    """Median pairwise Euclidean distance between ``points``.

    Above 2000 points the median is taken over a seeded subsample of 2000.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 2:
        raise InvalidArgumentError("median_heuristic needs at least two points")
    if X.shape[0] > MEDIAN_SUBSAMPLE_CAP:
        rng = np.random.Generator(np.random.Philox(seed))
        X = X[rng.choice(X.shape[0], MEDIAN_SUBSAMPLE_CAP, replace=False)]
    med = float(np.median(pdist(X)))
    if not med > 0.0:
        raise DegenerateBandwidthError("median pairwise distance is zero (points are identical)")
    return med


class Node:
    """A value recorded on a :class:`GradTape`."""

    __slots__ = ("value", "parents", "backward", "key", "index")

    def __init__(self, value, parents=(), backward=None, key=None, index=-1):
        self.value = value
        self.parents = parents
        self.backward = backward
        self.key = key
        self.index = index

    @property
    def shape(self):
        return self.value.shape


def _val(x):
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


class GradTape:
    """Eager reverse-mode tape.

    Operations evaluate immediately and append a node holding the result and a
    closure mapping the output adjoint to adjoints of the node inputs. Plain
    arrays passed as inputs are treated as constants.
    """

    def __init__(self):
        self.nodes: List[Node] = []
        self.params: Dict[str, Node] = {}

    def _record(self, value, parents, backward, key=None) -> Node:
        node = Node(value, tuple(parents), backward, key, len(self.nodes))
        self.nodes.append(node)
        return node

    def param(self, key: str, value) -> Node:
        if key in self.params:
            raise InvalidArgumentError(f"parameter {key!r} already registered")
        node = self._record(np.array(value, dtype=np.float64), (), None, key)
        self.params[key] = node
        return node

    def affine(self, x, W, b) -> Node:
        """``x @ W.T + b`` with ``W`` of shape (out, in)."""
        xv, Wv, bv = _val(x), _val(W), _val(b)
        out = xv @ Wv.T + bv

        def backward(g):
            gx = g @ Wv
            gW = g.T @ xv if xv.ndim == 2 else np.outer(g, xv)
            gb = g.sum(axis=0) if g.ndim == 2 else g
            return gx, gW, gb

        return self._record(out, (x, W, b), backward)

    def relu(self, x) -> Node:
        xv = _val(x)
        mask = xv > 0

        def backward(g):
            return (g * mask,)

        return self._record(np.where(mask, xv, 0.0), (x,), backward)

    def kron_rows(self, a, b) -> Node:
        av, bv = _val(a), _val(b)
        out = kron_rows(av, bv)
        n, p, q = av.shape[0], av.shape[1], bv.shape[1]

        def backward(g):
            G = g.reshape(n, p, q)
            return np.einsum("npq,nq->np", G, bv), np.einsum("npq,np->nq", G, av)

        return self._record(out, (a, b), backward)

    def matmul_const(self, x, C) -> Node:
        """``x @ C`` for a constant matrix ``C``."""
        C = np.asarray(C, dtype=np.float64)
        out = _val(x) @ C

        def backward(g):
            return (g @ C.T,)

        return self._record(out, (x,), backward)

    def const_matmul(self, C, x) -> Node:
        """``C @ x`` for a constant matrix ``C``."""
        C = np.asarray(C, dtype=np.float64)
        out = C @ _val(x)

        def backward(g):
            return (C.T @ g,)

        return self._record(out, (x,), backward)

    def sq_error(self, x, target=0.0, scale: float = 1.0) -> Node:
        """Scalar ``scale * sum((x - target)**2)``."""
        diff = _val(x) - _val(target)
        out = np.asarray(scale * np.sum(diff * diff))

        def backward(g):
            return (2.0 * scale * g * diff,)

        return self._record(out, (x,), backward)


def grad_backward(tape: GradTape, output: Node, keys: Optional[Sequence[str]] = None) -> Dict[str, np.ndarray]:
    """Gradients of the scalar ``output`` with respect to registered parameters.

    Parameters not reached from ``output`` get an exact zero gradient.
    """
    if not isinstance(output, Node) or not 0 <= output.index < len(tape.nodes) or tape.nodes[output.index] is not output:
        raise InvalidArgumentError("output must be a node recorded on this tape")
    if np.size(output.value) != 1:
        raise InvalidArgumentError(f"output must be a scalar, got shape {np.shape(output.value)}")
    adj: Dict[int, np.ndarray] = {output.index: np.ones_like(output.value)}
    for node in reversed(tape.nodes[: output.index + 1]):
        g = adj.pop(node.index, None)
        if g is None:
            continue
        if node.key is not None:
            adj[node.index] = g
            continue
        for parent, pg in zip(node.parents, node.backward(g)):
            if not isinstance(parent, Node):
                continue
            prev = adj.get(parent.index)
            adj[parent.index] = pg if prev is None else prev + pg
    wanted = keys if keys is not None else list(tape.params)
    grads = {}
    for k in wanted:
        node = tape.params[k]
        g = adj.get(node.index)
        grads[k] = np.zeros_like(node.value) if g is None else np.reshape(g, node.value.shape)
    return grads

