import numpy as np
import pytest

from cavbec.bogoliubov import optimal_wavenumber, solve_bdg
from cavbec.core import ComplexField, SystemParams, make_grid
from cavbec.dynamics import IntegratorConfig, build_coupling, run_trajectory
from cavbec.groundstate import solve_ground_state

ACCEPTANCE_LINES = []


def report(number: int, ok: bool, detail: str):
    """Record one acceptance line; all lines are printed in the terminal summary."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def desk_grid():
    return make_grid(256, 10.0)


@pytest.fixture(scope="session")
def paper_grid():
    return make_grid(1024, 16.0)


@pytest.fixture(scope="session")
def params64():
    return SystemParams(n_atoms=1000.0, interaction=64.0, cavity_wavenumber=0.453, coupling_rate=0.042)


@pytest.fixture(scope="session")
def basis64(desk_grid, params64):
    return solve_bdg(solve_ground_state(params64, desk_grid), params64)


@pytest.fixture(scope="session")
def basis0(desk_grid):
    p = SystemParams(n_atoms=1000.0, interaction=0.0, cavity_wavenumber=1.0, coupling_rate=0.042)
    return solve_bdg(solve_ground_state(p, desk_grid), p)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def paper_runs(paper_grid):
    """One full-length trajectory per scheme on the fine grid, driven by the same Wiener stream."""
    p = SystemParams(n_atoms=1000.0, interaction=64.0, cavity_wavenumber=1.0, coupling_rate=0.042)
    gs = solve_ground_state(p, paper_grid)
    p = p.replace(cavity_wavenumber=optimal_wavenumber(solve_bdg(gs, p), p, 1))
    psi = ComplexField(np.sqrt(1000.0) * gs.psi0.astype(complex), paper_grid)
    cp = build_coupling(p, paper_grid)
    runs = {}
    for scheme in ("milstein", "exact_split"):
        cfg = IntegratorConfig(dt=1e-4, t_final=30.0, scheme=scheme, rng_seed=7,
                               observable_stride=100, snapshot_stride=10**6)
        runs[scheme] = run_trajectory(psi, p, cp, cfg, store_snapshots=False)
    return runs
