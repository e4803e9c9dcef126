"""Seeded data-generating processes and ground-truth oracles.

Three benchmark settings are provided: the ticket-demand design (treatment =
price, treatment proxy = fuel costs, outcome proxy = page views), the
two-confounder setting with a closed-form structural function, and an
image-free stand-in for the sprite experiment in which a seeded random
Fourier embedding replaces image rendering.

All generators are pure functions of their counts and seed; random numbers
come from a Philox counter-based generator.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple

import numpy as np

from .causal import Policy
from .data import ObservationSet
from .errors import InvalidArgumentError

VARIANCE = "variance"
STD = "std"


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def evenly_spaced(lo: float, hi: float, count: int) -> np.ndarray:
    """Inclusive evenly spaced grid."""
    return np.linspace(lo, hi, count)


@dataclass
class GroundTruth:
    """Structural-function values on a treatment grid.

    ``mc_stderr`` is zero for closed-form entries.
    """

    grid: np.ndarray
    values: np.ndarray
    mc_stderr: np.ndarray
    n_mc: int = 0

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        if self.grid.ndim == 1:
            self.grid = self.grid[:, None]
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        self.mc_stderr = np.asarray(self.mc_stderr, dtype=np.float64).reshape(-1)
        if not (self.grid.shape[0] == self.values.size == self.mc_stderr.size):
            raise InvalidArgumentError("grid, values and mc_stderr must have equal lengths")
        if np.any(self.mc_stderr < 0):
            raise InvalidArgumentError("standard errors must be nonnegative")

    def write_csv(self, path) -> None:
        d = self.grid.shape[1]
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"a_{i}" for i in range(d)] + ["value", "mc_stderr", "n_mc"])
            for g, v, s in zip(self.grid, self.values, self.mc_stderr):
                w.writerow([repr(float(x)) for x in g] + [repr(float(v)), repr(float(s)), str(self.n_mc)])

    @classmethod
    def read_csv(cls, path) -> "GroundTruth":
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        d = sum(1 for h in header if h.startswith("a_"))
        arr = np.array([[float(x) for x in r[: d + 2]] for r in body])
        n_mc = int(body[0][d + 2]) if body else 0
        return cls(arr[:, :d], arr[:, d], arr[:, d + 1], n_mc)


def _mc_mean(samples: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-column mean and standard error over axis 0."""
    n = samples.shape[0]
    return samples.mean(axis=0), samples.std(axis=0, ddof=1) / math.sqrt(n)


# -- ticket demand -----------------------------------------------------------

DEMAND_GRID = evenly_spaced(10.0, 30.0, 10)


def demand_g(d):
    """Nonlinear demand effect ``2((d-5)^4/600 + exp(-4(d-5)^2) + d/10 - 2)``."""
    d = np.asarray(d, dtype=np.float64)
    out = 2.0 * ((d - 5.0) ** 4 / 600.0 + np.exp(-4.0 * (d - 5.0) ** 2) + d / 10.0 - 2.0)
    return float(out) if out.ndim == 0 else out


def demand_outcome_mean(p, views, d):
    """``E[Y | P=p, V, D] = p * min(exp((V - p)/10), 5) - 5 g(D)``."""
    return p * np.minimum(np.exp((views - p) / 10.0), 5.0) - 5.0 * demand_g(d)


def _demand_records(rng: np.random.Generator, n: int) -> dict:
    D = rng.uniform(0.0, 10.0, n)
    e = rng.standard_normal((5, n))
    g = demand_g(D)
    C1 = 2.0 * np.sin(2.0 * np.pi * D / 10.0) + e[0]
    C2 = 2.0 * np.cos(2.0 * np.pi * D / 10.0) + e[1]
    V = 7.0 * g + 45.0 + e[2]
    P = 35.0 + (C1 + 3.0) * g + C2 + e[3]
    Y = demand_outcome_mean(P, V, D) + e[4]
    return {"a": P[:, None], "z": np.column_stack([C1, C2]), "w": V[:, None], "y": Y, "D": D}


def gen_demand(n_stage1: int, n_stage2: int, seed: int, n_eval: int = 0) -> ObservationSet:
    """Ticket-demand data: ``A = P``, ``Z = (C1, C2)``, ``W = V``.

    Stage 1, stage 2 and the optional evaluation split are independent draws
    from the same law. The latent demand ``D`` of each split is kept in
    ``internals``.
    """
    _check_counts(n_stage1, n_stage2)
    rng = make_rng(seed)
    s1, s2 = _demand_records(rng, n_stage1), _demand_records(rng, n_stage2)
    internals = {"D1": s1["D"], "D2": s2["D"]}
    extra = {}
    if n_eval:
        s3 = _demand_records(rng, n_eval)
        internals["D3"] = s3["D"]
        extra = dict(a3=s3["a"], z3=s3["z"], w3=s3["w"], y3=s3["y"])
    return ObservationSet(
        s1["a"], s1["z"], s1["w"], s2["a"], s2["z"], s2["y"],
        y1=s1["y"], w2=s2["w"], internals=internals, **extra,
    )


def demand_truth_mc(grid=None, n_mc: int = 1_000_000, seed: int = 0, chunk: int = 200_000) -> GroundTruth:
    """Monte-Carlo structural function of the demand design.

    Common random numbers are shared across grid points.
    """
    if n_mc < 10_000:
        raise InvalidArgumentError("n_mc must be at least 1e4")
    grid = DEMAND_GRID if grid is None else np.asarray(grid, dtype=np.float64).reshape(-1)
    rng = make_rng(seed)
    total = np.zeros(grid.size)
    total_sq = np.zeros(grid.size)
    done = 0
    while done < n_mc:
        k = min(chunk, n_mc - done)
        D = rng.uniform(0.0, 10.0, k)
        V = 7.0 * demand_g(D) + 45.0 + rng.standard_normal(k)
        vals = demand_outcome_mean(grid[None, :], V[:, None], D[:, None])
        total += vals.sum(axis=0)
        total_sq += (vals * vals).sum(axis=0)
        done += k
    mean = total / n_mc
    var = (total_sq - n_mc * mean * mean) / (n_mc - 1)
    return GroundTruth(grid, mean, np.sqrt(np.maximum(var, 0.0) / n_mc), n_mc)


def ope_truth_mc(policy: Policy, n_mc: int = 1_000_000, seed: int = 0) -> Tuple[float, float]:
    """Value of ``policy`` in the demand design, with its Monte-Carlo standard error.

    Confounders and noise are drawn from the demand law, the policy sets the
    price from its context (costs or observed price), and the conditional
    mean outcome at that price is averaged.
    """
    if not isinstance(policy, Policy):
        raise InvalidArgumentError(f"unknown policy {policy!r}")
    if n_mc < 10_000:
        raise InvalidArgumentError("n_mc must be at least 1e4")
    rec = _demand_records(make_rng(seed), n_mc)
    context = rec["z"] if policy.context == "costs" else rec["a"]
    action = policy(context)[:, 0]
    vals = demand_outcome_mean(action, rec["w"][:, 0], rec["D"])
    mean, se = _mc_mean(vals[:, None])
    return float(mean[0]), float(se[0])


def demand_outcome_population_mean(n_mc: int = 1_000_000, seed: int = 0) -> Tuple[float, float]:
    """Observational ``E[Y]`` under the demand law."""
    rec = _demand_records(make_rng(seed), n_mc)
    mean, se = _mc_mean(rec["y"][:, None])
    return float(mean[0]), float(se[0])


# -- two-confounder setting --------------------------------------------------

MASTOURI_GRID = evenly_spaced(0.0, 1.0, 20)


def _noise_sd(spread: float, convention: str) -> float:
    if convention == VARIANCE:
        return math.sqrt(spread)
    if convention == STD:
        return spread
    raise InvalidArgumentError(f"noise convention must be {VARIANCE!r} or {STD!r}, got {convention!r}")


def _mastouri_latents(rng: np.random.Generator, n: int) -> Tuple[np.ndarray, np.ndarray]:
    U2 = rng.uniform(-1.0, 2.0, n)
    U1 = rng.uniform(0.0, 1.0, n) - ((U2 >= 0.0) & (U2 <= 1.0))
    return U1, U2


def _mastouri_records(rng: np.random.Generator, n: int, convention: str) -> dict:
    U1, U2 = _mastouri_latents(rng, n)
    sd3, sd005 = _noise_sd(3.0, convention), _noise_sd(0.05, convention)
    Z = np.column_stack([U1 + rng.uniform(-1.0, 1.0, n), U2 + sd3 * rng.standard_normal(n)])
    W = np.column_stack([U1 + sd3 * rng.standard_normal(n), U2 + rng.uniform(-1.0, 1.0, n)])
    A = U2 + sd005 * rng.standard_normal(n)
    Y = U2 * np.cos(2.0 * (A + 0.3 * U1 + 0.2))
    return {"a": A[:, None], "z": Z, "w": W, "y": Y, "U1": U1, "U2": U2}


def gen_mastouri(n_stage1: int, n_stage2: int, seed: int, noise_convention: str = VARIANCE) -> ObservationSet:
    """Two-confounder setting; ``noise_convention`` says whether ``N(0, s)`` means variance or sd ``s``."""
    _check_counts(n_stage1, n_stage2)
    rng = make_rng(seed)
    s1 = _mastouri_records(rng, n_stage1, noise_convention)
    s2 = _mastouri_records(rng, n_stage2, noise_convention)
    return ObservationSet(
        s1["a"], s1["z"], s1["w"], s2["a"], s2["z"], s2["y"],
        y1=s1["y"], w2=s2["w"],
        internals={"U1_1": s1["U1"], "U2_1": s1["U2"], "U1_2": s2["U1"], "U2_2": s2["U2"]},
    )


def _sin_branch(a: np.ndarray, c: float) -> np.ndarray:
    return (np.sin(2.0 * a + 0.6 * (c + 1.0) + 0.4) - np.sin(2.0 * a + 0.6 * c + 0.4)) / 0.6


def mastouri_truth(grid=None) -> GroundTruth:
    """Closed-form structural function ``E[U2 cos(2(a + 0.3 U1 + 0.2))]``.

    On ``U2 in [0, 1]`` (mass 1/3, ``E[U2 1{.}] = 1/6``) ``U1 ~ Unif[-1, 0]``;
    elsewhere (``E[U2 1{.}] = 1/3``) ``U1 ~ Unif[0, 1]``, independent of ``U2``.
    """
    grid = MASTOURI_GRID if grid is None else np.asarray(grid, dtype=np.float64).reshape(-1)
    values = _sin_branch(grid, -1.0) / 6.0 + _sin_branch(grid, 0.0) / 3.0
    return GroundTruth(grid, values, np.zeros(grid.size), 0)


def mastouri_truth_mc(grid=None, n_mc: int = 1_000_000, seed: int = 0) -> GroundTruth:
    """Monte-Carlo oracle for :func:`mastouri_truth`."""
    grid = MASTOURI_GRID if grid is None else np.asarray(grid, dtype=np.float64).reshape(-1)
    U1, U2 = _mastouri_latents(make_rng(seed), n_mc)
    means, ses = [], []
    for a in grid:
        m, s = _mc_mean((U2 * np.cos(2.0 * (a + 0.3 * U1 + 0.2)))[:, None])
        means.append(m[0])
        ses.append(s[0])
    return GroundTruth(grid, means, ses, n_mc)


# -- sprite stand-in ---------------------------------------------------------

DSPRITE_TARGET = 5000.0
DSPRITE_SCALE = 1000.0
_LATENT_LO = np.array([0.5, 0.0, 0.0, 0.0])
_LATENT_HI = np.array([1.0, 2.0 * np.pi, 1.0, 1.0])


@dataclass(frozen=True)
class SpriteWorld:
    """Fixed embedding ``cos(Omega l + b)`` of normalized latents and the outcome matrix ``B``."""

    omega: np.ndarray
    phase: np.ndarray
    B: np.ndarray

    @property
    def embed_dim(self) -> int:
        return self.omega.shape[0]

    def embed(self, latents) -> np.ndarray:
        L = np.atleast_2d(np.asarray(latents, dtype=np.float64))
        unit = (L - _LATENT_LO) / (_LATENT_HI - _LATENT_LO)
        return np.cos(unit @ self.omega.T + self.phase)

    def structural(self, a) -> np.ndarray:
        BA = np.atleast_2d(a) @ self.B.T
        return ((BA * BA).sum(axis=1) - DSPRITE_TARGET) / DSPRITE_SCALE


def _sample_latents(rng: np.random.Generator, n: int) -> np.ndarray:
    return _LATENT_LO + (_LATENT_HI - _LATENT_LO) * rng.uniform(size=(n, 4))


def make_sprite_world(embed_dim: int = 32, world_seed: int = 0, n_calibration: int = 100_000) -> SpriteWorld:
    """Draw the embedding and ``B`` (entries ``Unif(0, 1)``), then rescale ``B``
    so the mean of ``|B A|^2`` over noisy treatments is 5000."""
    if embed_dim < 8:
        raise InvalidArgumentError("embed_dim must be at least 8")
    rng = make_rng(world_seed)
    omega = rng.normal(0.0, 3.0, size=(embed_dim, 4))
    phase = rng.uniform(0.0, 2.0 * np.pi, embed_dim)
    B0 = rng.uniform(0.0, 1.0, size=(10, embed_dim))
    world = SpriteWorld(omega, phase, B0)
    A = world.embed(_sample_latents(rng, n_calibration)) + math.sqrt(0.1) * rng.standard_normal((n_calibration, embed_dim))
    BA = A @ B0.T
    scale = math.sqrt(DSPRITE_TARGET / float(np.mean((BA * BA).sum(axis=1))))
    return SpriteWorld(omega, phase, B0 * scale)


def dsprite_truth(world: SpriteWorld) -> GroundTruth:
    """Truth on a 2 (posX) x 2 (posY) x 3 (scale) x 4 (rotation) latent grid."""
    scale = evenly_spaced(0.5, 1.0, 3)
    rotation = evenly_spaced(0.0, 2.0 * np.pi, 4)
    pos = evenly_spaced(0.0, 1.0, 2)
    latents = np.array([[s, r, x, y] for s in scale for r in rotation for x in pos for y in pos])
    A = world.embed(latents)
    return GroundTruth(A, world.structural(A), np.zeros(A.shape[0]), 0)


def _sprite_records(rng: np.random.Generator, world: SpriteWorld, n: int) -> dict:
    L = _sample_latents(rng, n)
    noise_sd = math.sqrt(0.1)
    A = world.embed(L) + noise_sd * rng.standard_normal((n, world.embed_dim))
    posY = L[:, 3]
    w_latents = np.column_stack([np.full(n, 0.8), np.zeros(n), np.full(n, 0.5), posY])
    W = world.embed(w_latents) + noise_sd * rng.standard_normal((n, world.embed_dim))
    # 12 (posY - 0.5)^2 has mean one under Unif[0, 1], so f is the causal target
    Y = 12.0 * (posY - 0.5) ** 2 * world.structural(A) + math.sqrt(0.5) * rng.standard_normal(n)
    return {"a": A, "z": L[:, :3], "w": W, "y": Y, "posY": posY}


def gen_dsprite_surrogate(
    n_stage1: int, n_stage2: int, embed_dim: int = 32, seed: int = 0, world_seed: int = 0
) -> Tuple[ObservationSet, GroundTruth]:
    """Sprite-style data: treatment is a noisy embedding of all four latents,
    ``Z = (scale, rotation, posX)`` and ``W`` embeds a fixed sprite at the same ``posY``.

    ``world_seed`` fixes the embedding and ``B``; ``seed`` drives the samples.
    """
    _check_counts(n_stage1, n_stage2)
    world = make_sprite_world(embed_dim, world_seed)
    rng = make_rng(seed)
    s1, s2 = _sprite_records(rng, world, n_stage1), _sprite_records(rng, world, n_stage2)
    data = ObservationSet(
        s1["a"], s1["z"], s1["w"], s2["a"], s2["z"], s2["y"],
        y1=s1["y"], w2=s2["w"], internals={"posY1": s1["posY"], "posY2": s2["posY"]},
    )
    return data, dsprite_truth(world)


def _check_counts(*counts: int) -> None:
    if any(int(c) != c or c < 1 for c in counts):
        raise InvalidArgumentError(f"sample counts must be positive integers, got {counts}")


DGPS = ("demand", "mastouri", "dsprite_surrogate")


def generate(dgp: str, n_stage1: int, n_stage2: int, seed: int, n_eval: int = 0, **options) -> ObservationSet:
    """Dispatch to a generator by name."""
    if dgp == "demand":
        return gen_demand(n_stage1, n_stage2, seed, n_eval=n_eval)
    if n_eval:
        raise InvalidArgumentError("an evaluation split is only defined for the demand design")
    if dgp == "mastouri":
        return gen_mastouri(n_stage1, n_stage2, seed, options.get("noise_convention", VARIANCE))
    if dgp == "dsprite_surrogate":
        return gen_dsprite_surrogate(
            n_stage1, n_stage2, options.get("embed_dim", 32), seed, options.get("world_seed", 0)
        )[0]
    raise InvalidArgumentError(f"unknown dgp {dgp!r}; choose from {DGPS}")


def ground_truth(dgp: str, n_mc: int = 1_000_000, seed: int = 0, **options) -> GroundTruth:
    """Truth on the setting's evaluation grid (deterministic for fixed arguments)."""
    if dgp == "demand":
        return demand_truth_mc(n_mc=n_mc, seed=seed)
    if dgp == "mastouri":
        return mastouri_truth()
    if dgp == "dsprite_surrogate":
        return dsprite_truth(make_sprite_world(options.get("embed_dim", 32), options.get("world_seed", 0)))
    raise InvalidArgumentError(f"unknown dgp {dgp!r}; choose from {DGPS}")


def sidecar(dgp: str, seed: int, data: ObservationSet, **options) -> dict:
    meta = {
        "dgp": dgp,
        "seed": int(seed),
        "n_stage1": data.m,
        "n_stage2": data.n,
        "n_eval": 0 if data.a3 is None else int(data.a3.shape[0]),
        "noise_convention": options.get("noise_convention", VARIANCE),
    }
    if dgp == "dsprite_surrogate":
        meta["embed_dim"] = options.get("embed_dim", 32)
        meta["world_seed"] = options.get("world_seed", 0)
    return meta
