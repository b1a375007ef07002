"""Measurement functionals, trajectory observables and phonon-detection signals."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .bogoliubov import BogoliubovBasis, condensate_overlap, overlap_detection
from .core import GridError, ParameterError, SpatialGrid, SystemParams, eval_cavity_mode, eval_pump_profile, field_values


def _grid_of(psi, grid):
    g = getattr(psi, "grid", None) or grid
    if g is None:
        raise GridError("a grid is required for plain arrays")
    return g


def detection_weight(params: SystemParams, grid: SpatialGrid) -> np.ndarray:
    """Dimensionless shape of the monitored observable.

    g h / (g0 h0) for the transverse pump, g^2 / g0^2 for the axial pump.
    """
    g = eval_cavity_mode(grid, params)
    if params.pump_geometry == "axial":
        return g * g
    return g * eval_pump_profile(grid, params)


def y_functional(psi, params: SystemParams, grid: Optional[SpatialGrid] = None) -> float:
    """Classical value of the monitored atomic observable, in units of omega.

    Transverse pump: Y = int (h g / Delta_pa) |psi|^2 dx.  Axial pump:
    X = int (g^2 / Delta_pa) |psi|^2 dx.  Needs the raw g0, Delta_pa (and h0
    for the transverse case).
    """
    grid = _grid_of(psi, grid)
    raw = params.raw
    if params.pump_geometry == "axial":
        if not raw.has("g0", "delta_pa"):
            raise ParameterError("X functional needs raw g0 and delta_pa")
        scale = raw.g0**2 / raw.delta_pa
    else:
        if not raw.has("g0", "h0", "delta_pa"):
            raise ParameterError("Y functional needs raw g0, h0 and delta_pa")
        scale = raw.g0 * raw.h0 / raw.delta_pa
    dens = np.abs(field_values(psi, grid)) ** 2
    return scale * np.sum(detection_weight(params, grid) * dens, axis=-1) * grid.dx


def measurement_rate(psi, params: SystemParams, grid: Optional[SpatialGrid] = None):
    """Photon counting rate 2 Y^2 / kappa (transverse) or 2|eta|^2 X^2 / kappa^3 (axial).

    Both reduce to 2 * coupling_rate * (int w |psi|^2 dx)^2 with w the
    dimensionless detection weight, so only the grouped rate is needed.
    """
    grid = _grid_of(psi, grid)
    if params.coupling_rate is None:
        raise ParameterError("measurement rate needs the coupling rate")
    dens = np.abs(field_values(psi, grid)) ** 2
    overlap = np.sum(detection_weight(params, grid) * dens, axis=-1) * grid.dx
    return 2.0 * params.coupling_rate * overlap**2


def photon_number(y: float, kappa: float) -> float:
    """Intracavity photon number (Y / kappa)^2; the counting rate is 2 kappa times this."""
    return (y / kappa) ** 2


def center_of_mass(psi, grid: Optional[SpatialGrid] = None):
    """Per-atom displacement (1/N) int x |psi|^2 dx.

    Multiply by N = int |psi|^2 dx for the unnormalized first moment.
    Accepts leading batch axes.
    """
    grid = _grid_of(psi, grid)
    dens = np.abs(field_values(psi, grid)) ** 2
    n = np.sum(dens, axis=-1)
    if np.any(n == 0):
        raise ValueError("center of mass of a zero-norm field")
    return np.sum(grid.x * dens, axis=-1) / n


def g1_from_probes(a: np.ndarray, b: np.ndarray) -> float:
    """|<a* b>| / sqrt(<|a|^2><|b|^2>) over the leading (ensemble) axis."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape[0] < 2:
        raise ValueError("coherence needs at least two ensemble members")
    na = np.mean(np.abs(a) ** 2, axis=0)
    nb = np.mean(np.abs(b) ** 2, axis=0)
    if np.any(na == 0) or np.any(nb == 0):
        raise ValueError("vanishing density at a probe point")
    return np.abs(np.mean(np.conj(a) * b, axis=0)) / np.sqrt(na * nb)


def g1_jackknife(a: np.ndarray, b: np.ndarray):
    """Coherence estimate and its delete-one jackknife standard error."""
    a, b = np.asarray(a), np.asarray(b)
    m = a.shape[0]
    full = g1_from_probes(a, b)
    if m < 3:
        return full, np.full_like(np.asarray(full, dtype=float), np.nan)
    s_ab = np.sum(np.conj(a) * b, axis=0)
    s_a = np.sum(np.abs(a) ** 2, axis=0)
    s_b = np.sum(np.abs(b) ** 2, axis=0)
    loo_ab = (s_ab - np.conj(a) * b) / (m - 1)
    loo_a = (s_a - np.abs(a) ** 2) / (m - 1)
    loo_b = (s_b - np.abs(b) ** 2) / (m - 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        loo = np.abs(loo_ab) / np.sqrt(loo_a * loo_b)
    se = np.sqrt((m - 1) / m * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))
    return full, se


def g1_coherence(fields, x: float, x_prime: float, grid: Optional[SpatialGrid] = None) -> float:
    """Normalized first-order coherence between two positions over an ensemble.

    ``fields`` has shape (M, n_points); the probes use the nearest grid points.
    """
    arr = np.asarray([field_values(f, grid) for f in fields]) if not isinstance(fields, np.ndarray) else fields
    if grid is None:
        grid = getattr(fields[0], "grid", None)
        if grid is None:
            raise GridError("a grid is required for plain arrays")
    i, j = grid.nearest_index(x), grid.nearest_index(x_prime)
    return float(g1_from_probes(arr[:, i], arr[:, j]))


def populations(fields, basis: BogoliubovBasis) -> np.ndarray:
    """|beta_j|^2 of each field, with the phase referenced to its own condensate part.

    Referencing to arg(int psi0 psi dx) removes the global phase that a
    monitored field accumulates, so fluctuations are measured in the frame
    of the condensate.  Accepts leading batch axes.
    """
    arr = np.asarray(fields)
    dx = basis.grid.dx
    beta0 = np.sum(basis.psi0 * arr, axis=-1) * dx
    ph = np.ones_like(beta0)
    nz = np.abs(beta0) > 0
    ph[nz] = np.conj(beta0[nz]) / np.abs(beta0[nz])
    rot = arr * ph[..., None]
    r = rot[..., None, :]
    beta = np.sum(basis.u * r + basis.v * np.conj(r), axis=-1) * dx
    return np.abs(beta) ** 2


def mode_populations(record, basis: BogoliubovBasis) -> np.ndarray:
    """|beta_j|^2 for every field snapshot of a trajectory record; shape (n_snap, n_modes)."""
    if record.snapshots is None:
        raise ValueError("record carries no field snapshots")
    if record.snapshots.shape[-1] != basis.grid.n_points:
        raise GridError("record and basis live on different grids")
    return populations(record.snapshots, basis)


@dataclass(frozen=True)
class PhononSignal:
    """Light scattered by a thermal phonon population.

    ``counting_rate`` (photons per unit time) needs only the grouped coupling
    rate.  ``coherent_amplitude`` and ``fluctuation_power`` are the cavity
    amplitude and photon-number variance and need kappa; they are None
    without it.  ``depletion_u``, ``depletion_v`` and ``condensate_overlap``
    are int g h u_j^2, int g h v_j^2 and int g h psi0^2 per unit g0 h0 / Delta_pa.
    """

    counting_rate: float
    rate_contributions: np.ndarray
    overlaps: np.ndarray
    occupations: np.ndarray
    depletion_u: np.ndarray
    depletion_v: np.ndarray
    condensate_overlap: float
    coherent_amplitude: Optional[float] = None
    fluctuation_power: Optional[float] = None
    mode_contributions: Optional[np.ndarray] = None


def occupations_from_populations(mean_pops) -> np.ndarray:
    """Quasiparticle numbers from Wigner mode populations (subtract 1/2, clamp at 0)."""
    return np.clip(np.asarray(mean_pops, dtype=float) - 0.5, 0.0, None)


def phonon_signal(basis: BogoliubovBasis, params: SystemParams, occupations: Sequence[float],
                  n0: Optional[float] = None) -> PhononSignal:
    """Coherent and fluctuating light from phonon occupations ``occupations``.

    The fluctuation part keeps only the leading term
    N0 * sum_j O_j^2 (2 n_j + 1) with O_j the detection overlap.
    """
    if params.coupling_rate is None:
        raise ParameterError("phonon signal needs the coupling rate")
    occ = np.asarray(occupations, dtype=float)
    if occ.shape != (basis.n_modes,):
        raise ValueError(f"need {basis.n_modes} occupations, got shape {occ.shape}")
    if np.any(occ < 0):
        raise ValueError("occupations must be >= 0")
    n0 = params.n_atoms if n0 is None else n0
    grid = basis.grid
    g = eval_cavity_mode(grid, params)
    h = eval_pump_profile(grid, params)
    w = g * h
    ov = overlap_detection(basis, g, h)
    gamma = params.coupling_rate
    rate_j = 2.0 * gamma * n0 * ov**2 * (2.0 * occ + 1.0)
    dep_u = np.sum(w * basis.u**2, axis=-1) * grid.dx
    dep_v = np.sum(w * basis.v**2, axis=-1) * grid.dx
    cond = condensate_overlap(basis, g, h)

    amp = power = contrib = None
    kappa = params.raw.kappa
    if kappa is not None:
        raw = params.raw
        if raw.has("g0", "h0", "delta_pa"):
            scale = raw.h0 * raw.g0 / (raw.delta_pa * kappa)
        else:
            # |h0 g0 / (Delta_pa kappa)| = sqrt(gamma / kappa)
            scale = np.sqrt(gamma / kappa)
        weight = n0 * cond + np.sum(dep_u * occ + dep_v * (occ + 1.0))
        amp = float(scale * weight)
        contrib = rate_j / (2.0 * kappa)
        power = float(np.sum(contrib))
    return PhononSignal(float(np.sum(rate_j)), rate_j, ov, occ, dep_u, dep_v, cond,
                        amp, power, contrib)
