"""Condensate ground state of the harmonically trapped 1D gas."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .core import ParameterError, SpatialGrid, SystemParams

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    """Raised when an iterative solve stops before reaching its tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class GroundState:
    """Normalized real ground state psi0 with chemical potential mu.

    ``energy`` is the energy per atom and ``residual`` the max-norm of
    (H0 + C psi0^2 - mu) psi0.
    """

    psi0: np.ndarray
    mu: float
    energy: float
    residual: float
    grid: SpatialGrid
    interaction: float
    iterations: int = 0
    energy_history: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)


def trap_potential(grid: SpatialGrid) -> np.ndarray:
    return 0.5 * grid.x**2


def gp_apply(psi: np.ndarray, grid: SpatialGrid, interaction: float) -> np.ndarray:
    """(H0 + C|psi|^2) psi for a real psi."""
    return grid.apply_kinetic(psi).real + (trap_potential(grid) + interaction * psi**2) * psi


def energy_per_atom(psi: np.ndarray, grid: SpatialGrid, interaction: float) -> float:
    kin = np.sum(psi * grid.apply_kinetic(psi).real)
    pot = np.sum(trap_potential(grid) * psi**2)
    nl = 0.5 * interaction * np.sum(psi**4)
    return float((kin + pot + nl) * grid.dx)


def chemical_potential(psi: np.ndarray, grid: SpatialGrid, interaction: float) -> float:
    return float(np.sum(psi * gp_apply(psi, grid, interaction)) * grid.dx)


def stationarity_residual(psi: np.ndarray, mu: float, grid: SpatialGrid, interaction: float) -> float:
    return float(np.max(np.abs(gp_apply(psi, grid, interaction) - mu * psi)))


def _normalize(psi: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    return psi / np.sqrt(np.sum(psi**2) * grid.dx)


def _imaginary_time(psi, grid, C, dtau, max_iters, switch_residual):
    """Strang split-step imaginary-time relaxation with step halving on energy increase."""
    v = trap_potential(grid)
    e_hist = [energy_per_atom(psi, grid, C)]
    it = 0
    last_check = np.inf
    while it < max_iters:
        half = np.exp(-0.5 * dtau * grid.kinetic)
        trial = np.fft.ifft(half * np.fft.fft(psi)).real
        trial *= np.exp(-dtau * (v + C * trial**2))
        trial = np.fft.ifft(half * np.fft.fft(trial)).real
        trial = grid.symmetrize(np.abs(_normalize(trial, grid)), 1)
        e = energy_per_atom(trial, grid, C)
        it += 1
        if e > e_hist[-1] + 1e-15 * abs(e_hist[-1]):
            dtau *= 0.5
            if dtau < 1e-12:
                break
            continue
        psi = trial
        e_hist.append(e)
        if it % 200 == 0:
            res = stationarity_residual(psi, chemical_potential(psi, grid, C), grid, C)
            # the split-step fixed point carries an O(dtau^2) residual; hand over
            # to Newton once relaxation stalls or is close enough
            if res < switch_residual or res > 0.95 * last_check:
                break
            last_check = res
    return psi, np.asarray(e_hist), it


def _newton(psi, grid, C, tol, max_iters):
    """Newton polish of (H0 + C psi^2 - mu) psi = 0, int psi^2 = 1 in the even sector."""
    basis = grid.parity_basis(1)
    h = basis.T @ (grid.kinetic_matrix() + np.diag(trap_potential(grid))) @ basis
    a = basis.T @ psi
    mu = chemical_potential(psi, grid, C)
    best = (stationarity_residual(psi, mu, grid, C), psi, mu)
    it = 0
    for it in range(1, max_iters + 1):
        dens = (basis @ a) ** 2
        dsec = basis.T @ (dens[:, None] * basis)
        f1 = h @ a + C * dsec @ a - mu * a
        f2 = 0.5 * (grid.dx * np.sum(a * a) - 1.0)
        n = a.size
        jac = np.zeros((n + 1, n + 1))
        jac[:n, :n] = h + 3.0 * C * dsec - mu * np.eye(n)
        jac[:n, n] = -a
        jac[n, :n] = grid.dx * a
        step = scipy.linalg.solve(jac, -np.concatenate([f1, [f2]]))
        a = a + step[:n]
        psi_new = _normalize(grid.symmetrize(basis @ a, 1), grid)
        a = basis.T @ psi_new
        mu = chemical_potential(psi_new, grid, C)
        res = stationarity_residual(psi_new, mu, grid, C)
        if res < best[0]:
            best = (res, psi_new, mu)
        if res <= tol:
            break
    return best, it


def solve_ground_state(params: SystemParams, grid: SpatialGrid, tol: float = 1e-10,
                       max_iters: int = 200_000, dtau: float = 1e-3) -> GroundState:
    """Ground state of H0 + C|psi|^2 in the harmonic trap x^2/2.

    Imaginary-time split-step relaxation from a unit-width Gaussian, followed
    by a Newton polish of the discretized stationary equation so the residual
    reaches ``tol``.  mu is the expectation of the GP operator.
    """
    C = params.interaction
    if C < 0:
        raise ParameterError("attractive interactions are not supported")
    gauss = np.pi**-0.25 * np.exp(-0.5 * grid.x**2)
    gauss = grid.symmetrize(gauss, 1)

    if C == 0:
        psi = _normalize(gauss, grid)
        mu = chemical_potential(psi, grid, 0.0)
        res = stationarity_residual(psi, mu, grid, 0.0)
        e = energy_per_atom(psi, grid, 0.0)
        return _finish(GroundState(psi, mu, e, res, grid, 0.0, 0, np.array([e])), tol)

    psi, hist, it = _imaginary_time(_normalize(gauss, grid), grid, C, dtau,
                                    max_iters, switch_residual=1e-6)
    (res, psi, mu), newton_it = _newton(psi, grid, C, tol, max_iters=30)
    it += newton_it
    log.debug("ground state C=%g: %d iterations, residual %.2e", C, it, res)
    gs = GroundState(psi, mu, energy_per_atom(psi, grid, C), res, grid, C, it, hist)
    return _finish(gs, tol)


def _finish(gs: GroundState, tol: float) -> GroundState:
    if not gs.residual <= tol:
        raise ConvergenceError("ground state did not converge", gs.residual)
    if not gs.grid.boundary_density_ok(gs.psi0):
        log.warning("ground-state density at the grid edge exceeds 1e-10 of the peak; "
                    "increase the grid half width")
    gs.psi0.setflags(write=False)
    return gs


def thomas_fermi_mu(interaction: float) -> float:
    """1D Thomas-Fermi chemical potential (3C/(4 sqrt 2))^(2/3)."""
    return (3.0 * interaction / (4.0 * np.sqrt(2.0))) ** (2.0 / 3.0)
