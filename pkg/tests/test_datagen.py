import math

import numpy as np
import pytest

from dfpv.causal import Policy, constant_policy
from dfpv.data import read_csv, write_csv
from dfpv.datagen import (
    DEMAND_GRID,
    MASTOURI_GRID,
    STD,
    GroundTruth,
    demand_g,
    demand_truth_mc,
    dsprite_truth,
    gen_demand,
    gen_dsprite_surrogate,
    gen_mastouri,
    generate,
    ground_truth,
    make_sprite_world,
    mastouri_truth,
    mastouri_truth_mc,
    ope_truth_mc,
    sidecar,
)
from dfpv.errors import InvalidArgumentError

from oracles import simpson

# -- demand -------------------------------------------------------------------------


def test_demand_g_examples():
    assert demand_g(5.0) == -1.0
    assert demand_g(0.0) == pytest.approx(2 * (625 / 600 - 2), abs=1e-12)
    assert demand_g(10.0) == pytest.approx(2 * (625 / 600 - 1), abs=1e-12)
    assert demand_g(0.0) == pytest.approx(-1.9167, abs=1e-4)
    assert demand_g(10.0) == pytest.approx(0.0833, abs=1e-4)


def test_demand_moments_and_construction_residual():
    n = 100_000
    data = gen_demand(n, 10, seed=1)
    D = data.internals["D1"]
    assert abs(D.mean() - 5.0) <= 4 * (10 / math.sqrt(12)) / math.sqrt(n)
    C1, C2 = data.z1[:, 0], data.z1[:, 1]
    resid = data.a1[:, 0] - 35.0 - (C1 + 3.0) * demand_g(D) - C2
    assert abs(resid.mean()) <= 4 / math.sqrt(n)
    assert abs(resid.std() - 1.0) < 0.02
    assert np.all(np.abs(C1) <= 8.0)


def test_demand_splits_and_eval_split():
    data = gen_demand(300, 200, seed=2, n_eval=100)
    assert (data.m, data.n, data.a3.shape[0]) == (300, 200, 100)
    assert data.z1.shape == (300, 2) and data.w1.shape == (300, 1)
    assert data.has_full_records and data.has_eval_split


def test_generators_are_pure_functions_of_seed():
    for dgp in ("demand", "mastouri", "dsprite_surrogate"):
        a, b = generate(dgp, 50, 40, seed=3), generate(dgp, 50, 40, seed=3)
        assert np.array_equal(a.a1, b.a1) and np.array_equal(a.y2, b.y2) and np.array_equal(a.w1, b.w1)
        assert not np.array_equal(a.y2, generate(dgp, 50, 40, seed=4).y2)


def test_splits_are_independent():
    n = 20_000
    for data in (gen_demand(n, n, seed=5), gen_mastouri(n, n, seed=5)):
        r1, r2 = data.y1 - data.y1.mean(), data.y2 - data.y2.mean()
        rho = np.corrcoef(r1, r2)[0, 1]
        assert abs(rho) <= 4 / math.sqrt(n)


def test_demand_truth_self_consistency_and_bounds():
    t1 = demand_truth_mc(n_mc=200_000, seed=1)
    t2 = demand_truth_mc(n_mc=200_000, seed=2)
    assert np.array_equal(t1.grid[:, 0], DEMAND_GRID) and DEMAND_GRID[0] == 10 and DEMAND_GRID[-1] == 30
    assert np.all(np.abs(t1.values - t2.values) <= 6 * np.hypot(t1.mc_stderr, t2.mc_stderr))
    assert np.all(np.isfinite(t1.values)) and np.all(np.abs(t1.values) < 200)
    with pytest.raises(InvalidArgumentError):
        demand_truth_mc(n_mc=100)


def test_mean_of_g_matches_quadrature():
    n = 200_000
    D = np.random.Generator(np.random.Philox(11)).uniform(0, 10, n)
    g = demand_g(D)
    exact = simpson(demand_g, 0.0, 10.0, 10_000) / 10.0
    assert abs(g.mean() - exact) <= 3 * g.std(ddof=1) / math.sqrt(n)
    # the structural function is the price term minus 5 E[g(D)]; at a price where
    # exp((V - p)/10) is capped for every draw the price term is exactly 5p
    t = demand_truth_mc(grid=[1.0], n_mc=100_000, seed=3)
    assert t.values[0] == pytest.approx(5.0 - 5.0 * exact, abs=4 * t.mc_stderr[0] + 1e-9)


def test_ope_truth():
    const = ope_truth_mc(constant_policy(20.0), n_mc=200_000, seed=1)
    f = demand_truth_mc(grid=[20.0], n_mc=200_000, seed=2)
    assert abs(const[0] - f.values[0]) <= 4 * math.hypot(const[1], f.mc_stderr[0])
    a = ope_truth_mc(Policy("price_policy"), n_mc=100_000, seed=3)
    b = ope_truth_mc(Policy("price_policy"), n_mc=100_000, seed=4)
    assert abs(a[0] - b[0]) <= 6 * math.hypot(a[1], b[1])
    assert -200 <= a[0] <= 200
    assert np.isfinite(ope_truth_mc(Policy("cost_policy"), n_mc=20_000)[0])
    with pytest.raises(InvalidArgumentError):
        ope_truth_mc("price_policy", n_mc=20_000)


# -- two-confounder setting ---------------------------------------------------------------


def test_mastouri_moments_and_bounds():
    n = 100_000
    data = gen_mastouri(n, 10, seed=6)
    A = data.a1[:, 0]
    assert abs(A.mean() - 0.5) <= 4 * A.std() / math.sqrt(n)
    U1 = data.internals["U1_1"]
    p = np.mean(U1 < 0)
    assert abs(p - 1 / 3) <= 4 * math.sqrt(2 / 9 / n)
    assert np.all(np.abs(data.y1) <= 2.0)
    assert data.z1.shape == (n, 2) and data.w1.shape == (n, 2)


def test_mastouri_noise_convention():
    var = gen_mastouri(50_000, 10, seed=7)
    sd = gen_mastouri(50_000, 10, seed=7, noise_convention=STD)
    # the second coordinate of Z carries N(0, 3) noise on top of Unif[-1, 2]
    assert var.z1[:, 1].var() == pytest.approx(0.75 + 3.0, rel=0.05)
    assert sd.z1[:, 1].var() == pytest.approx(0.75 + 9.0, rel=0.05)
    with pytest.raises(InvalidArgumentError):
        gen_mastouri(10, 10, 0, noise_convention="precision")


def test_mastouri_closed_form_matches_monte_carlo_at_zero():
    mc = mastouri_truth_mc(grid=[0.0], n_mc=1_000_000, seed=8)
    cf = mastouri_truth(grid=[0.0])
    assert abs(cf.values[0] - mc.values[0]) <= 3 * mc.mc_stderr[0]


def test_mastouri_truth_bounds_and_periodicity():
    t = mastouri_truth()
    assert np.array_equal(t.grid[:, 0], MASTOURI_GRID) and t.values.size == 20
    assert np.all(np.abs(t.values) <= 5 / 3)
    assert np.all(t.mc_stderr == 0)
    a = np.linspace(-3, 3, 31)
    np.testing.assert_allclose(mastouri_truth(a).values, mastouri_truth(a + math.pi).values, atol=1e-12)


# -- sprite stand-in --------------------------------------------------------------------


def test_sprite_calibration():
    world = make_sprite_world(32, world_seed=0)
    rng = np.random.Generator(np.random.Philox(99))
    lat = np.array([0.5, 0.0, 0.0, 0.0]) + np.array([0.5, 2 * np.pi, 1.0, 1.0]) * rng.uniform(size=(100_000, 4))
    A = world.embed(lat) + math.sqrt(0.1) * rng.standard_normal((100_000, 32))
    BA = A @ world.B.T
    assert np.mean((BA * BA).sum(axis=1)) == pytest.approx(5000.0, rel=0.02)
    with pytest.raises(InvalidArgumentError):
        make_sprite_world(4)


def test_sprite_outcome_vanishes_at_centre_row():
    data, truth = gen_dsprite_surrogate(20_000, 10, embed_dim=16, seed=1)
    world = make_sprite_world(16, 0)
    posY = data.internals["posY1"]
    eps = data.y1 - 12.0 * (posY - 0.5) ** 2 * world.structural(data.a1)
    assert abs(eps.mean()) <= 4 * math.sqrt(0.5 / len(eps))
    assert eps.var() == pytest.approx(0.5, rel=0.05)
    # posY = 0.5 zeroes the signal, so only noise is left
    assert 12.0 * (0.5 - 0.5) ** 2 * world.structural(data.a1[:1])[0] == 0.0
    assert data.a1.shape == (20_000, 16) and data.z1.shape == (20_000, 3)
    assert truth.values.size == 48


def test_sprite_truth_is_deterministic():
    t1 = dsprite_truth(make_sprite_world(16, 3))
    t2 = ground_truth("dsprite_surrogate", embed_dim=16, world_seed=3)
    assert np.array_equal(t1.values, t2.values) and np.array_equal(t1.grid, t2.grid)


# -- dispatch and serialization ------------------------------------------------------------


def test_dispatch_errors():
    with pytest.raises(InvalidArgumentError):
        generate("nope", 10, 10, 0)
    with pytest.raises(InvalidArgumentError):
        generate("mastouri", 10, 10, 0, n_eval=5)
    with pytest.raises(InvalidArgumentError):
        gen_demand(0, 10, 0)
    with pytest.raises(InvalidArgumentError):
        ground_truth("nope")


def test_ground_truth_csv_round_trip(tmp_path):
    t = mastouri_truth()
    t.write_csv(tmp_path / "truth.csv")
    back = GroundTruth.read_csv(tmp_path / "truth.csv")
    assert np.array_equal(back.values, t.values) and np.array_equal(back.grid, t.grid)
    with pytest.raises(InvalidArgumentError):
        GroundTruth([1.0, 2.0], [1.0], [0.0])
    with pytest.raises(InvalidArgumentError):
        GroundTruth([1.0], [1.0], [-1.0])


def test_dataset_csv_round_trip(tmp_path):
    data = gen_demand(30, 20, seed=9, n_eval=10)
    meta = sidecar("demand", 9, data)
    write_csv(data, tmp_path / "d.csv", meta)
    back = read_csv(tmp_path / "d.csv")
    for name in ("a1", "z1", "w1", "a2", "z2", "y2", "y1", "w2", "a3", "w3"):
        assert np.array_equal(getattr(back, name), getattr(data, name)), name
    assert meta["dgp"] == "demand" and meta["seed"] == 9
