"""Grids, parameters and mode shapes shared by the whole package.

Units throughout: hbar = m = omega = 1, so lengths are in x0 = sqrt(hbar/m omega),
times in 1/omega and energies in hbar*omega.  Fields live on a uniform periodic
grid ``x_i = -L + i*dx`` (i = 0..n-1); the reflection x -> -x maps index i to
(n - i) mod n, which keeps parity arguments exact on the discrete grid.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

log = logging.getLogger(__name__)

#: Boundary density must stay below this fraction of the peak density.
BOUNDARY_DENSITY_TOL = 1e-10

#: Healing-length atom number above which the weak-fluctuation expansion is
#: flagged as valid.
WEAK_FLUCTUATION_MIN_NXI = 10.0


class GridError(ValueError):
    """Raised for invalid grids or fields living on mismatched grids."""


class ParameterError(ValueError):
    """Raised for physically inconsistent parameter sets."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform symmetric periodic 1D grid.

    Parameters
    ----------
    n_points : int
        Number of grid points (even, >= 2).
    x_max : float
        Half width; the grid covers ``[-x_max, x_max)``.
    """

    n_points: int
    x_max: float

    def __post_init__(self):
        if not isinstance(self.n_points, (int, np.integer)) or self.n_points < 2:
            raise GridError(f"n_points must be an integer >= 2, got {self.n_points!r}")
        if self.n_points % 2:
            raise GridError(f"n_points must be even, got {self.n_points}")
        if not (np.isfinite(self.x_max) and self.x_max > 0):
            raise GridError(f"half width must be positive, got {self.x_max!r}")

    @property
    def x_min(self) -> float:
        return -self.x_max

    @property
    def length(self) -> float:
        return 2.0 * self.x_max

    @property
    def dx(self) -> float:
        return self.length / self.n_points

    @cached_property
    def x(self) -> np.ndarray:
        return _readonly(self.x_min + self.dx * np.arange(self.n_points))

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Spectral wavenumbers ``2 pi m / (n dx)`` in FFT ordering."""
        return _readonly(2.0 * np.pi * np.fft.fftfreq(self.n_points, d=self.dx))

    @cached_property
    def kinetic(self) -> np.ndarray:
        """Diagonal of the kinetic operator -1/2 d^2/dx^2 in Fourier space."""
        return _readonly(0.5 * self.wavenumbers**2)

    @cached_property
    def reflection(self) -> np.ndarray:
        """Index map implementing f(x) -> f(-x)."""
        return _readonly((-np.arange(self.n_points)) % self.n_points)

    @property
    def kinetic_cutoff(self) -> float:
        return 0.5 * (np.pi / self.dx) ** 2

    def same_as(self, other: "SpatialGrid") -> bool:
        return self.n_points == other.n_points and self.x_max == other.x_max

    def check_field(self, values: np.ndarray) -> None:
        if np.shape(values)[-1] != self.n_points:
            raise GridError(
                f"field has {np.shape(values)[-1]} points, grid has {self.n_points}"
            )

    # quadrature helpers -------------------------------------------------

    def integrate(self, f: np.ndarray, axis: int = -1):
        return np.sum(f, axis=axis) * self.dx

    def norm2(self, psi: np.ndarray):
        return np.sum(np.abs(psi) ** 2, axis=-1) * self.dx

    def norm2_spectral(self, psi: np.ndarray):
        """Norm via Parseval's identity on the discrete Fourier coefficients."""
        return np.sum(np.abs(np.fft.fft(psi, axis=-1)) ** 2, axis=-1) * self.dx / self.n_points

    def apply_kinetic(self, psi: np.ndarray) -> np.ndarray:
        """Spectral -1/2 d^2 psi/dx^2 (complex result)."""
        return np.fft.ifft(self.kinetic * np.fft.fft(psi, axis=-1), axis=-1)

    def kinetic_matrix(self) -> np.ndarray:
        """Dense real-symmetric matrix of the spectral kinetic operator."""
        eye = np.eye(self.n_points)
        t = np.fft.ifft(self.kinetic[:, None] * np.fft.fft(eye, axis=0), axis=0).real
        return 0.5 * (t + t.T)

    def reflect(self, f: np.ndarray) -> np.ndarray:
        return f[..., self.reflection]

    def symmetrize(self, f: np.ndarray, parity: int) -> np.ndarray:
        """Exact projection onto even (+1) or odd (-1) functions."""
        if parity == 1:
            return 0.5 * (f + self.reflect(f))
        if parity == -1:
            return 0.5 * (f - self.reflect(f))
        raise ValueError("parity must be +1 or -1")

    def parity_basis(self, parity: int) -> np.ndarray:
        """Orthonormal (Euclidean) basis columns spanning one parity sector."""
        n, h = self.n_points, self.n_points // 2
        pairs = np.arange(1, h)
        s = 1.0 / math.sqrt(2.0)
        if parity == 1:
            b = np.zeros((n, h + 1))
            b[0, 0] = 1.0
            b[h, 1] = 1.0
            b[pairs, pairs + 1] = s
            b[n - pairs, pairs + 1] = s
        elif parity == -1:
            b = np.zeros((n, h - 1))
            b[pairs, pairs - 1] = s
            b[n - pairs, pairs - 1] = -s
        else:
            raise ValueError("parity must be +1 or -1")
        return b

    def nearest_index(self, x: float) -> int:
        i = int(round((x - self.x_min) / self.dx))
        if not 0 <= i < self.n_points:
            raise GridError(f"position {x} lies outside the grid")
        return i

    def boundary_density_ok(self, psi: np.ndarray) -> bool:
        dens = np.abs(psi) ** 2
        peak = dens.max()
        edge = max(dens[..., 0].max(), dens[..., -1].max())
        return bool(peak == 0 or edge < BOUNDARY_DENSITY_TOL * peak)


def make_grid(n_points: int, half_width: float) -> SpatialGrid:
    """Build a symmetric periodic grid covering ``[-half_width, half_width)``."""
    return SpatialGrid(n_points, float(half_width))


@dataclass(frozen=True)
class ComplexField:
    """A complex amplitude sampled on a grid."""

    values: np.ndarray
    grid: SpatialGrid

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        self.grid.check_field(v)
        object.__setattr__(self, "values", v)

    @property
    def norm2(self) -> float:
        return float(self.grid.norm2(self.values))

    @property
    def norm2_spectral(self) -> float:
        return float(self.grid.norm2_spectral(self.values))

    @property
    def density(self) -> np.ndarray:
        return np.abs(self.values) ** 2


def field_values(psi, grid: Optional[SpatialGrid] = None) -> np.ndarray:
    """Return the raw array of ``psi`` (ComplexField or array), checking the grid."""
    if isinstance(psi, ComplexField):
        if grid is not None and not grid.same_as(psi.grid):
            raise GridError("field lives on a different grid")
        return psi.values
    arr = np.asarray(psi)
    if grid is not None:
        grid.check_field(arr)
    return arr


# --------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class RawParams:
    """Optional dimensional inputs (frequencies in units of omega, lengths in x0).

    Only kept for provenance and for quantities that need absolute scales
    (adiabaticity ratio, Y in physical units, photon numbers).
    """

    g0: Optional[float] = None
    h0: Optional[float] = None
    kappa: Optional[float] = None
    delta_pa: Optional[float] = None
    delta_pc: Optional[float] = None
    eta: Optional[float] = None
    omega_perp: Optional[float] = None
    a_s: Optional[float] = None

    def has(self, *names: str) -> bool:
        return all(getattr(self, n) is not None for n in names)

    def asdict(self) -> dict:
        return {k: v for k, v in dataclasses.asdict(self).items() if v is not None}


CAVITY_PARITIES = ("sine", "cosine")
PUMP_GEOMETRIES = ("transverse", "axial")
PUMP_PROFILES = ("uniform", "gaussian")


@dataclass(frozen=True)
class SystemParams:
    """Physical, cavity and pump parameters in oscillator units.

    ``coupling_rate`` is gamma_m = h0^2 g0^2 / (kappa Delta_pa^2) for the
    transverse pump and gamma_a = |eta|^2 g0^4 / (kappa^3 Delta_pa^2) for the
    axial pump; the measurement noise coefficient is sqrt(2*coupling_rate)
    times the dimensionless mode shape.  ``lightshift_rate`` is h0^2/Delta_pa
    (transverse) or |eta|^2 g0^2 / (kappa^2 Delta_pa) (axial).
    ``kappa_ratio`` is N g0^2 / (Delta_pa kappa).
    """

    n_atoms: float
    interaction: float
    cavity_wavenumber: float
    coupling_rate: Optional[float] = None
    cavity_parity: str = "sine"
    pump_geometry: str = "transverse"
    pump_profile: str = "uniform"
    pump_width: Optional[float] = None
    lightshift_rate: float = 0.0
    kappa_ratio: Optional[float] = None
    temperature: float = 0.0
    raw: RawParams = field(default_factory=RawParams)

    def __post_init__(self):
        if not self.n_atoms > 0:
            raise ParameterError("n_atoms must be positive")
        if not self.interaction >= 0:
            raise ParameterError("interaction C must be >= 0 (attractive gases are not supported)")
        if not self.cavity_wavenumber > 0:
            raise ParameterError("cavity wavenumber must be positive")
        if self.coupling_rate is not None and not self.coupling_rate >= 0:
            raise ParameterError("coupling rate must be >= 0")
        if not self.temperature >= 0:
            raise ParameterError("temperature must be >= 0")
        if self.cavity_parity not in CAVITY_PARITIES:
            raise ParameterError(f"cavity_parity must be one of {CAVITY_PARITIES}")
        if self.pump_geometry not in PUMP_GEOMETRIES:
            raise ParameterError(f"pump_geometry must be one of {PUMP_GEOMETRIES}")
        if self.pump_profile not in PUMP_PROFILES:
            raise ParameterError(f"pump_profile must be one of {PUMP_PROFILES}")
        if self.pump_profile == "gaussian" and not (self.pump_width and self.pump_width > 0):
            raise ParameterError("gaussian pump profile needs a positive pump_width")
        for name in ("interaction", "cavity_wavenumber", "lightshift_rate", "n_atoms"):
            if not math.isfinite(getattr(self, name)):
                raise ParameterError(f"{name} must be finite")
        if self.kappa_ratio is not None and abs(self.kappa_ratio) >= 1:
            log.warning(
                "kappa ratio N g0^2/(Delta_pa kappa) = %.3g, magnitude >= 1: the eliminated-cavity "
                "model is not valid", self.kappa_ratio,
            )

    @property
    def U(self) -> float:
        """Single-atom 1D interaction strength C/N."""
        return self.interaction / self.n_atoms

    @classmethod
    def from_raw(cls, n_atoms: float, cavity_wavenumber: float, raw: RawParams,
                 interaction: Optional[float] = None, **kw) -> "SystemParams":
        """Group raw cavity/pump inputs into the rates the dynamics uses.

        ``interaction`` defaults to N*U with U = 2 omega_perp a_s.
        """
        geometry = kw.get("pump_geometry", "transverse")
        if interaction is None:
            if not raw.has("omega_perp", "a_s"):
                raise ParameterError("need interaction C or raw omega_perp and a_s")
            interaction = n_atoms * 2.0 * raw.omega_perp * raw.a_s
        coupling = shift = ratio = None
        if raw.has("g0", "kappa", "delta_pa"):
            g0, kap, dpa = raw.g0, raw.kappa, raw.delta_pa
            ratio = n_atoms * g0**2 / (dpa * kap)
            if geometry == "transverse" and raw.has("h0"):
                coupling = raw.h0**2 * g0**2 / (kap * dpa**2)
                shift = raw.h0**2 / dpa
            elif geometry == "axial" and raw.has("eta"):
                eta2 = abs(raw.eta) ** 2
                coupling = eta2 * g0**4 / (kap**3 * dpa**2)
                shift = eta2 * g0**2 / (kap**2 * dpa)
        kw.setdefault("lightshift_rate", shift if shift is not None else 0.0)
        return cls(n_atoms=n_atoms, interaction=interaction,
                   cavity_wavenumber=cavity_wavenumber, coupling_rate=coupling,
                   kappa_ratio=ratio, raw=raw, **kw)

    def replace(self, **changes) -> "SystemParams":
        return dataclasses.replace(self, **changes)


# --------------------------------------------------------------------------
# mode shapes


def eval_cavity_mode(grid: SpatialGrid, params: SystemParams, k: Optional[float] = None) -> np.ndarray:
    """Dimensionless cavity mode g(x)/g0, exactly odd (sine) or even (cosine) on the grid."""
    k = params.cavity_wavenumber if k is None else k
    if params.cavity_parity == "sine":
        return grid.symmetrize(np.sin(k * grid.x), -1)
    return grid.symmetrize(np.cos(k * grid.x), 1)


def eval_pump_profile(grid: SpatialGrid, params: SystemParams) -> np.ndarray:
    """Dimensionless transverse pump profile h(x)/h0 (identically zero for axial pumping)."""
    if params.pump_geometry == "axial":
        return np.zeros(grid.n_points)
    if params.pump_profile == "uniform":
        return np.ones(grid.n_points)
    w = params.pump_width
    return grid.symmetrize(np.exp(-0.5 * (grid.x / w) ** 2), 1)


@dataclass(frozen=True)
class Diagnostics:
    tonks_gamma: float
    healing_atoms: float
    peak_density: float
    weak_fluctuations: bool


def diagnostics(params: SystemParams, psi0, grid: Optional[SpatialGrid] = None) -> Diagnostics:
    """Tonks parameter at the peak density and the atom number per healing length.

    ``psi0`` is normalized to one; the peak 1D density is N*max|psi0|^2.
    """
    v = field_values(psi0, grid)
    peak = params.n_atoms * float(np.max(np.abs(v) ** 2))
    if peak <= 0:
        raise ParameterError("zero density: Tonks parameter undefined")
    gamma = params.U / peak
    n_xi = math.inf if gamma == 0 else 1.0 / math.sqrt(2.0 * gamma)
    return Diagnostics(gamma, n_xi, peak, n_xi >= WEAK_FLUCTUATION_MIN_NXI)
