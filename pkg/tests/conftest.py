import numpy as np
import pytest

from cgmatch import cgmap as cgm
from cgmatch import microsys as ms
from cgmatch import sampler as sp

SEED = 20261016


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running statistical checks")


@pytest.fixture
def rng():
    return np.random.default_rng(SEED)


@pytest.fixture(scope="session")
def dimer():
    return ms.harmonic_dimer(1.0)


@pytest.fixture(scope="session")
def dimer_com():
    return cgm.center_of_mass([[0, 1]], [1.0, 1.0], dim=1)


@pytest.fixture(scope="session")
def dimer_samples(dimer):
    # 100 chains x 1000 kept states = 1e5 samples
    return sp.metropolis_sample(dimer, 1.0, 11000, step_size=0.5, seed=SEED, n_burn=1000,
                                n_thin=10, n_chains=100)


@pytest.fixture(scope="session")
def molecule():
    return ms.three_atom_molecule(k_b=50.0, r0=1.0, k_theta=2.0)


@pytest.fixture(scope="session")
def molecule_samples(molecule):
    return sp.metropolis_sample(molecule, 1.0, 11000, step_size=0.2, seed=SEED, n_burn=1000,
                                n_thin=10, n_chains=100)


def random_molecule(rng, n=100, spread=0.3):
    """Random non-degenerate 3-atom geometries around a right angle."""
    base = np.array([1.0, 0, 0, 0, 0, 0, 0, 1.0, 0])
    return base + spread * rng.standard_normal((n, 9))


@pytest.fixture(scope="session")
def dimer_forces(dimer, dimer_com, dimer_samples):
    from cgmatch import meanforce as mf

    return mf.evaluate_over_samples(dimer, dimer_com, mf.WSpec.equals_jacobian(), 1.0,
                                    dimer_samples)


# one PASS/FAIL line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES = {}


@pytest.fixture
def acceptance():
    def record(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
