"""Shared fixtures.

The preset bundles are expensive (reference solves plus 11 solver runs
each) and session-scoped; they back the acceptance tests and the
preset-scale solver property tests.  Unit tests use the tiny fixtures,
which build in well under a second.
"""

import math
import time

import numpy as np
import pytest

from mctomo.motion import motion_sequence
from mctomo.projector import Geometry
from mctomo.simulate import (
    estimate_norms,
    gate_operators,
    generate,
    make_phantom,
    nonrigid_preset,
    rigid_preset,
)
from mctomo.solvers import Problem, cg_reference, default_config, run

KAPPA = 70.0
EPOCHS = 60
SEEDS = 10

# one line per acceptance criterion, echoed after the run so the
# verdicts stay visible even when pytest captures stdout
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def _build_bundle(maker):
    timings = {}
    t0 = time.perf_counter()
    dataset = maker(size="fast", seed=0)
    timings["data"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    norms = estimate_norms(dataset.geometry, dataset.motion)
    timings["norms"] = time.perf_counter() - t0

    alpha = norms["base_norm_sq"] / KAPPA
    problem_mc = Problem.from_parts(
        alpha, gate_operators(dataset.geometry, dataset.motion, True), dataset.sinograms
    )
    problem_nomc = Problem.from_parts(
        alpha, gate_operators(dataset.geometry, dataset.motion, False), dataset.sinograms
    )

    t0 = time.perf_counter()
    saddle_mc = cg_reference(problem_mc, tol=1e-12)
    timings["cg_mc"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    saddle_nomc = cg_reference(problem_nomc, tol=1e-12)
    timings["cg_nomc"] = time.perf_counter() - t0

    def run_one(mode, seed):
        snapshots = {}

        def on_epoch(epoch, state):
            if epoch == 30:
                snapshots["x30"] = state.x.copy()

        config = default_config(
            mode,
            norms["gate_norms"],
            alpha,
            EPOCHS,
            seed=seed,
            stacked_norm_sq=norms["stacked_norm_sq"],
        )
        x, record = run(
            config, problem_mc, saddle=saddle_mc, truth=dataset.truth, on_epoch=on_epoch
        )
        return {"x": x, "x30": snapshots["x30"], "record": record, "seed": seed}

    t0 = time.perf_counter()
    pdhg = run_one("pdhg", 0)
    timings["pdhg"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    spdhg = [run_one("spdhg", seed) for seed in range(SEEDS)]
    timings["spdhg_total"] = time.perf_counter() - t0

    return {
        "dataset": dataset,
        "norms": norms,
        "alpha": alpha,
        "kappa": KAPPA,
        "problem_mc": problem_mc,
        "problem_nomc": problem_nomc,
        "saddle_mc": saddle_mc,
        "saddle_nomc": saddle_nomc,
        "pdhg": pdhg,
        "spdhg": spdhg,
        "timings": timings,
    }


@pytest.fixture(scope="session")
def rigid_bundle():
    return _build_bundle(rigid_preset)


@pytest.fixture(scope="session")
def nonrigid_bundle():
    return _build_bundle(nonrigid_preset)


@pytest.fixture(scope="session")
def preset_bundles(rigid_bundle, nonrigid_bundle):
    return {"rigid": rigid_bundle, "nonrigid": nonrigid_bundle}


@pytest.fixture(scope="session")
def rigid_long_pdhg(rigid_bundle):
    """2000-epoch pdhg run against the rigid reference problem."""
    b = rigid_bundle
    config = default_config(
        "pdhg",
        b["norms"]["gate_norms"],
        b["alpha"],
        2000,
        stacked_norm_sq=b["norms"]["stacked_norm_sq"],
    )
    t0 = time.perf_counter()
    x, record = run(config, b["problem_mc"], saddle=b["saddle_mc"])
    return {"x": x, "record": record, "seconds": time.perf_counter() - t0}


@pytest.fixture(scope="session")
def tiny_geometry():
    return Geometry(24, 24, 16, 32, math.hypot(24, 24) / 32)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_geometry):
    phantom = make_phantom("nested_shells", 24, 24)
    motion = motion_sequence("rigid", 4, magnitude=0.6)
    return generate(phantom, motion, tiny_geometry, master_seed=3)


@pytest.fixture(scope="session")
def tiny_setup(tiny_dataset):
    """Dataset, norms, problem, and a tight reference for solver tests."""
    ds = tiny_dataset
    norms = estimate_norms(ds.geometry, ds.motion)
    alpha = norms["base_norm_sq"] / KAPPA
    problem = Problem.from_parts(
        alpha, gate_operators(ds.geometry, ds.motion, True), ds.sinograms
    )
    saddle = cg_reference(problem, tol=1e-13, max_iter=3000)
    return {
        "dataset": ds,
        "norms": norms,
        "alpha": alpha,
        "problem": problem,
        "saddle": saddle,
    }


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
