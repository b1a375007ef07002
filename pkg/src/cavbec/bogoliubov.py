"""Bogoliubov quasiparticle modes, mode decomposition and overlap integrals."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.optimize

from .core import GridError, SpatialGrid, SystemParams, eval_cavity_mode, eval_pump_profile, field_values
from .groundstate import GroundState, trap_potential

log = logging.getLogger(__name__)

DEFAULT_N_MODES = 12

#: Modes above this fraction of the grid's usable energy range are rejected.
RELIABLE_FRACTION = 0.25


class ResolutionError(ValueError):
    """Raised when more modes are requested than the grid resolves."""


@dataclass(frozen=True)
class BogoliubovBasis:
    """Condensate plus the lowest quasiparticle modes.

    ``u`` and ``v`` have shape (n_modes, n_points); row j-1 holds mode j.
    Modes are real, symplectically orthonormal, orthogonal to psi0 and have
    parity (-1)^j.
    """

    ground: GroundState
    u: np.ndarray
    v: np.ndarray
    eps: np.ndarray
    parity: np.ndarray

    @property
    def grid(self) -> SpatialGrid:
        return self.ground.grid

    @property
    def psi0(self) -> np.ndarray:
        return self.ground.psi0

    @property
    def mu(self) -> float:
        return self.ground.mu

    @property
    def n_modes(self) -> int:
        return self.eps.size


@dataclass(frozen=True)
class ModeAmplitudes:
    time: float
    beta: np.ndarray
    beta0: complex

    @property
    def populations(self) -> np.ndarray:
        return np.abs(self.beta) ** 2


def _sector_modes(grid, psi0, mu, C, parity):
    """Positive-energy BdG solutions in one parity sector.

    With S = H0 - mu + C psi0^2 and M = H0 - mu + 3 C psi0^2, f = u + v and
    g = u - v obey eps g = S f, eps f = M g, so eps^2 are the eigenvalues of
    the symmetric matrix M^1/2 S M^1/2.
    """
    b = grid.parity_basis(parity)
    h0 = b.T @ (grid.kinetic_matrix() + np.diag(trap_potential(grid) - mu)) @ b
    dens = b.T @ ((C * psi0**2)[:, None] * b)
    s = h0 + dens
    m = h0 + 3.0 * dens
    lam, q = scipy.linalg.eigh(m)
    # M is positive definite for C > 0; at C = 0 it shares the condensate zero mode
    m_half = (q * np.sqrt(np.clip(lam, 0.0, None))) @ q.T
    eps2, w = scipy.linalg.eigh(m_half @ s @ m_half)
    return b, m_half, s, eps2, w


def solve_bdg(ground: GroundState, params: Optional[SystemParams] = None,
              n_modes: int = DEFAULT_N_MODES) -> BogoliubovBasis:
    """Lowest ``n_modes`` Bogoliubov modes about ``ground``.

    The eigenproblem is solved separately in the even and odd sectors of the
    grid reflection, so parities are exact.  The zero-energy phase mode is
    dropped and the remaining modes are projected orthogonal to psi0
    (number-conserving form), which leaves eps, the symplectic products and
    all (u - v) overlaps unchanged.
    """
    grid = ground.grid
    C = ground.interaction if params is None else params.interaction
    if params is not None and abs(params.interaction - ground.interaction) > 1e-12 * max(1.0, C):
        raise ValueError("params.interaction differs from the ground-state interaction")
    psi0, mu, dx = np.asarray(ground.psi0), ground.mu, grid.dx

    cand = []
    for parity in (1, -1):
        b, m_half, s, eps2, w = _sector_modes(grid, psi0, mu, C, parity)
        start = 0
        if parity == 1:
            # phase (Goldstone) mode of the condensate
            if abs(eps2[0]) > 1e-6 * max(1.0, abs(eps2[1])):
                log.warning("condensate zero mode found at eps^2 = %.3e", eps2[0])
            start = 1
        for i in range(start, min(eps2.size, start + n_modes)):
            cand.append((float(np.sqrt(eps2[i])), parity, b, m_half, s, w[:, i]))
    cand.sort(key=lambda c: (round(c[0], 10), -c[1]))
    cand = cand[:n_modes]
    if len(cand) < n_modes:
        raise ResolutionError(f"grid supports only {len(cand)} modes")

    limit = RELIABLE_FRACTION * min(grid.kinetic_cutoff, 0.5 * grid.x_max**2)
    if cand[-1][0] > limit:
        raise ResolutionError(
            f"mode {n_modes} has eps = {cand[-1][0]:.3g}, above the reliable limit "
            f"{limit:.3g} of this grid; use a wider or finer grid or fewer modes"
        )

    us, vs, eps, par = [], [], [], []
    for e, parity, b, m_half, s, wv in cand:
        wv = wv / np.sqrt(e * dx * np.dot(wv, wv))
        f = m_half @ wv
        g = (s @ f) / e
        u = grid.symmetrize(b @ (0.5 * (f + g)), parity)
        v = grid.symmetrize(b @ (0.5 * (f - g)), parity)
        c0 = np.sum(psi0 * u) * dx
        u = u - c0 * psi0
        v = v - c0 * psi0
        sign = _moment_sign(u, grid)
        us.append(sign * u)
        vs.append(sign * v)
        eps.append(e)
        par.append(parity)

    u, v = np.array(us), np.array(vs)
    for a in (u, v):
        a.setflags(write=False)
    return BogoliubovBasis(ground, u, v, np.array(eps), np.array(par))


def _moment_sign(u: np.ndarray, grid: SpatialGrid) -> float:
    """Sign making the first non-vanishing moment int x^m u dx positive."""
    x = grid.x
    for m in range(0, 64):
        xm = x**m
        mom = np.sum(xm * u)
        if abs(mom) > 1e-8 * np.sum(np.abs(xm * u)):
            return 1.0 if mom > 0 else -1.0
    return 1.0


def mode_amplitudes(psi, basis: BogoliubovBasis, t: float = 0.0, mu: Optional[float] = None) -> ModeAmplitudes:
    """Invert the classical Bogoliubov expansion of ``psi`` at time ``t``.

    beta_i = int [u_i psi e^{i mu t} + v_i psi* e^{-i mu t}] dx and
    beta_0 = int psi0 psi e^{i mu t} dx.  ``mu`` overrides the reference
    frequency (e.g. to include a uniform light shift).
    """
    grid = basis.grid
    if hasattr(psi, "grid") and not grid.same_as(psi.grid):
        raise GridError("field and basis live on different grids")
    arr = field_values(psi, grid)
    beta, beta0 = _project(arr, basis, t, basis.mu if mu is None else mu)
    return ModeAmplitudes(t, beta, complex(beta0))


def _project(arr: np.ndarray, basis: BogoliubovBasis, t, mu):
    """Vectorised inversion; ``arr`` may carry leading batch axes."""
    phase = np.exp(1j * mu * np.asarray(t, dtype=float))
    rot = arr * (phase[..., None] if phase.ndim else phase)
    dx = basis.grid.dx
    r = rot[..., None, :]
    beta = np.sum(basis.u * r + basis.v * np.conj(r), axis=-1) * dx
    beta0 = np.sum(basis.psi0 * rot, axis=-1) * dx
    return beta, beta0


def synthesize(basis: BogoliubovBasis, beta, beta0: complex, t: float = 0.0) -> np.ndarray:
    """Field e^{-i mu t} {beta0 psi0 + sum_j [beta_j u_j - beta_j* v_j]}."""
    beta = np.asarray(beta, dtype=complex)
    n = beta.shape[-1]
    fl = beta[..., None] * basis.u[:n] - np.conj(beta)[..., None] * basis.v[:n]
    psi = np.asarray(beta0)[..., None] * basis.psi0 + fl.sum(axis=-2)
    return psi * np.exp(-1j * basis.mu * t)


def overlap_excitation(basis: BogoliubovBasis, cavity_shape: np.ndarray) -> np.ndarray:
    """O_i = int g(x) psi0(x) [u_i(x) - v_i(x)] dx per unit g0."""
    w = np.asarray(cavity_shape) * basis.psi0
    return np.sum(w * (basis.u - basis.v), axis=-1) * basis.grid.dx


def overlap_detection(basis: BogoliubovBasis, cavity_shape: np.ndarray,
                      pump_shape: np.ndarray) -> np.ndarray:
    """Detection overlap  int g h [u_i - v_i] psi0 dx / (g0 h0)."""
    return overlap_excitation(basis, np.asarray(cavity_shape) * np.asarray(pump_shape))


def condensate_overlap(basis: BogoliubovBasis, cavity_shape, pump_shape) -> float:
    """int g h psi0^2 dx / (g0 h0)."""
    return float(np.sum(np.asarray(cavity_shape) * np.asarray(pump_shape) * basis.psi0**2) * basis.grid.dx)


def overlap_scan(basis: BogoliubovBasis, params: SystemParams, ks: Sequence[float],
                 detection: bool = True) -> np.ndarray:
    """Overlaps for every wavenumber in ``ks``; shape (len(ks), n_modes)."""
    grid = basis.grid
    h = eval_pump_profile(grid, params) if detection else np.ones(grid.n_points)
    return np.array([overlap_detection(basis, eval_cavity_mode(grid, params, k), h) for k in ks])


def optimal_wavenumber(basis: BogoliubovBasis, params: SystemParams, mode: int,
                       k_max: float = 4.0, n_scan: int = 801) -> float:
    """Wavenumber in (0, k_max] maximizing |O_mode| for the configured cavity parity.

    A dense scan brackets the global maximum, then a bounded scalar search
    refines it.
    """
    grid = basis.grid
    j = mode - 1

    def overlap(k):
        return abs(overlap_excitation(basis, eval_cavity_mode(grid, params, k))[j])

    ks = np.linspace(k_max / n_scan, k_max, n_scan)
    vals = np.array([overlap(k) for k in ks])
    i = int(np.argmax(vals))
    lo, hi = ks[max(i - 1, 0)], ks[min(i + 1, ks.size - 1)]
    res = scipy.optimize.minimize_scalar(lambda k: -overlap(k), bounds=(lo, hi),
                                         method="bounded", options={"xatol": 1e-10})
    return float(res.x) if -res.fun >= vals[i] else float(ks[i])
