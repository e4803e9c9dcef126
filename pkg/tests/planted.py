"""Planted instances whose bridge function lies exactly in a fixed RBF span.

Treatment and confounder take four values each, ``Z = U`` and ``W = U`` up to
Gaussian noise of scale ``noise``. With RBF centers on the support points,
every conditional mean given ``(A, Z)`` is representable by the stage-1
features, and the bridge ``h*(a, w) = u*^T (psi_A(a) (x) psi_W(w))`` is
representable by construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from dfpv.data import ObservationSet
from dfpv.features import RbfDictionary, rbf_features
from dfpv.numkit import kron_rows
from dfpv.two_stage import FixedDictionaries

A_VALUES = np.array([0.0, 1.0, 2.0, 3.0])
U_VALUES = np.array([-1.0, 0.0, 1.0, 2.0])
U_PROBS = np.array([0.2, 0.3, 0.3, 0.2])
BANDWIDTH = 0.8


@dataclass
class PlantedInstance:
    data: ObservationSet
    dictionaries: FixedDictionaries
    u_star: np.ndarray
    grid: np.ndarray
    truth: np.ndarray


def _treatment_probs(j: int) -> np.ndarray:
    # confounded: high U pushes toward high treatment, every cell has mass
    w = np.exp(0.8 * j * np.arange(4) / 3.0)
    return w / w.sum()


def _sample(rng, n, u_star, psi_a, psi_w, noise):
    j = rng.choice(4, size=n, p=U_PROBS)
    i = np.array([rng.choice(4, p=_treatment_probs(k)) for k in j])
    a = A_VALUES[i][:, None]
    z = U_VALUES[j][:, None]
    w = (U_VALUES[j] + noise * rng.standard_normal(n))[:, None]
    h = kron_rows(rbf_features(a, psi_a), rbf_features(w, psi_w)) @ u_star
    y = h + noise * rng.standard_normal(n)
    return a, z, w, y


def smoothed_rbf_mean(u: np.ndarray, centers: np.ndarray, bw: float, noise: float) -> np.ndarray:
    """``E[exp(-(u + noise*e - c)^2 / (2 bw^2))]`` for standard normal ``e`` (Gaussian convolution)."""
    s2 = bw * bw + noise * noise
    return bw / math.sqrt(s2) * np.exp(-((u[:, None] - centers[None, :]) ** 2) / (2 * s2))


def planted_instance(n: int, noise: float, seed: int = 0) -> PlantedInstance:
    rng = np.random.Generator(np.random.Philox(seed))
    psi_a = RbfDictionary(A_VALUES[:, None], BANDWIDTH)
    phi_z = RbfDictionary(U_VALUES[:, None], BANDWIDTH)
    psi_w = RbfDictionary(U_VALUES[:, None], BANDWIDTH)
    u_star = rng.uniform(-1.0, 1.0, size=16)
    a1, z1, w1, y1 = _sample(rng, n, u_star, psi_a, psi_w, noise)
    a2, z2, w2, y2 = _sample(rng, n, u_star, psi_a, psi_w, noise)
    data = ObservationSet(a1, z1, w1, a2, z2, y2, y1=y1, w2=w2)
    mu = U_PROBS @ smoothed_rbf_mean(U_VALUES, U_VALUES, BANDWIDTH, noise)
    grid = np.linspace(0.0, 3.0, 20)[:, None]
    feats = rbf_features(grid, psi_a)
    truth = kron_rows(feats, np.broadcast_to(mu, (20, 4))) @ u_star
    return PlantedInstance(data, FixedDictionaries(psi_a, phi_z, psi_a, psi_w), u_star, grid, truth)
