"""Measurement-conditioned stochastic field dynamics.

The conditioned field obeys the Ito equation

    dpsi = {-i [H0 + U|psi|^2 + s(x)] - c(x)^2 / 2} psi dt - i c(x) psi dW

with one real Wiener increment dW shared by all grid points.  Its
Stratonovich form is purely unitary (phase kick c(x) dW), which both
integrators exploit: the kinetic part is applied exactly in Fourier space
and the local part is either solved by the implicit midpoint rule
("milstein") or exponentiated exactly ("exact_split").
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .bogoliubov import BogoliubovBasis
from .core import ComplexField, GridError, ParameterError, SpatialGrid, SystemParams, eval_cavity_mode, eval_pump_profile, field_values
from .groundstate import trap_potential
from .observables import center_of_mass, detection_weight, populations
from .sampler import make_rng

log = logging.getLogger(__name__)

SCHEMES = ("milstein", "exact_split")

#: Adiabatic-elimination ratio above which a warning is emitted.
ADIABATICITY_WARN = 0.5

#: Wiener increments are drawn per trajectory in blocks of this many steps.
NOISE_BLOCK = 1024


class IntegrationError(RuntimeError):
    """A trajectory produced non-finite values."""


@dataclass(frozen=True)
class IntegratorConfig:
    """Time stepping options.

    ``kinetic`` and ``trap`` switch off the corresponding Hamiltonian terms
    (used for oracle checks against closed-form solutions).
    """

    dt: float = 1e-4
    t_final: float = 30.0
    scheme: str = "milstein"
    rng_seed: int = 0
    snapshot_stride: int = 100
    observable_stride: int = 10
    max_iterations: int = 8
    iteration_tol: float = 1e-12
    kinetic: bool = True
    trap: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_final >= 0:
            raise ValueError("t_final must be >= 0")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.snapshot_stride < 1 or self.observable_stride < 1:
            raise ValueError("strides must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))


@dataclass(frozen=True)
class MeasurementCoupling:
    """Noise coefficient c(x) and the local light-shift potential, both real."""

    c: np.ndarray
    potential_shift: np.ndarray

    @property
    def damping(self) -> np.ndarray:
        """Ito drift damping c^2 / 2."""
        return 0.5 * self.c**2


def build_coupling(params: SystemParams, grid: SpatialGrid) -> MeasurementCoupling:
    """Noise coefficient and light shift for the configured pump geometry.

    Transverse: c = sqrt(2 gamma_m) g h, shift = s h^2.  Axial: c =
    sqrt(2 gamma_a) g^2, shift = s_a g^2 (lattice potential of the pumped
    cavity mode).
    """
    if params.coupling_rate is None:
        what = "|eta|, g0, kappa, delta_pa" if params.pump_geometry == "axial" else "gamma_m or h0, g0, kappa, delta_pa"
        raise ParameterError(f"coupling rate unavailable; supply {what}")
    g = eval_cavity_mode(grid, params)
    amp = np.sqrt(2.0 * params.coupling_rate)
    if params.pump_geometry == "axial":
        c = amp * g * g
        shift = params.lightshift_rate * g * g
    else:
        h = eval_pump_profile(grid, params)
        c = amp * g * h
        shift = params.lightshift_rate * h * h
    return MeasurementCoupling(c, shift)


def adiabaticity_ratio(psi, params: SystemParams, grid: Optional[SpatialGrid] = None):
    """|int (g^2 / Delta_pa) |psi|^2 dx| / kappa, or None without the cavity ratio.

    Uses kappa_ratio = N g0^2 / (Delta_pa kappa), so the result is
    |kappa_ratio| / N * int g^2 |psi|^2 dx / g0^2.
    """
    if params.kappa_ratio is None:
        return None
    grid = getattr(psi, "grid", None) or grid
    g = eval_cavity_mode(grid, params)
    dens = np.abs(field_values(psi, grid)) ** 2
    return abs(params.kappa_ratio) / params.n_atoms * np.sum(g * g * dens, axis=-1) * grid.dx


@dataclass
class TrajectoryRecord:
    """Observables of one trajectory on a shared time base.

    ``times`` indexes q1, r_meas, norm, adiabaticity, populations and probes;
    ``snapshot_times`` indexes ``snapshots``.  ``probes`` holds the field at
    the probe positions (for coherence estimates).
    """

    times: np.ndarray
    q1: np.ndarray
    r_meas: np.ndarray
    norm: np.ndarray
    snapshot_times: np.ndarray
    snapshots: Optional[np.ndarray] = None
    populations: Optional[np.ndarray] = None
    adiabaticity: Optional[np.ndarray] = None
    probes: Optional[np.ndarray] = None
    sampler_seed: Optional[int] = None
    wiener_seed: Optional[int] = None
    failed: bool = False
    message: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def norm_drift(self) -> float:
        n = self.norm[np.isfinite(self.norm)]
        return float(np.max(np.abs(n / n[0] - 1.0))) if n.size else float("nan")

    @property
    def max_adiabaticity(self) -> Optional[float]:
        return None if self.adiabaticity is None else float(np.max(self.adiabaticity))


# -- single steps -----------------------------------------------------------


def _static_potential(grid, coupling, config):
    v = np.array(coupling.potential_shift, dtype=float)
    if config.trap:
        v = v + trap_potential(grid)
    return v


def _local_exact(psi, a, U, dt):
    """psi * exp(-i theta), theta = a + U |psi|^2 dt; a already holds V dt + c dW."""
    theta = a + (U * dt) * (psi.real**2 + psi.imag**2)
    return psi * (np.cos(theta) - 1j * np.sin(theta))


def _local_midpoint(psi, a, U, dt, max_iter, tol):
    """Implicit midpoint step of dpsi = -i theta(psi_mid) psi_mid, pointwise.

    With psi_{n+1} = psi_n (1 - i th/2) / (1 + i th/2) the midpoint density is
    |psi_n|^2 / (1 + th^2/4), so th solves the scalar equation
    th = a + b / (1 + th^2/4), b = U |psi_n|^2 dt, iterated by Newton.
    Expanded to O(dt) this is the Ito drift plus the Milstein correction
    -(c^2/2) psi (dW^2 - dt).
    """
    b = (U * dt) * (psi.real**2 + psi.imag**2)
    theta = a + b
    if U != 0:
        for _ in range(max_iter):
            q = 1.0 + 0.25 * theta * theta
            f = theta - a - b / q
            df = 1.0 + 0.5 * b * theta / (q * q)
            upd = f / df
            theta = theta - upd
            if np.max(np.abs(upd)) <= tol:
                break
    half = 0.5 * theta
    return psi * ((1.0 - 1j * half) / (1.0 + 1j * half))


def step(psi, dt: float, dW: float, coupling: MeasurementCoupling, params: SystemParams,
         scheme: str = "milstein", grid: Optional[SpatialGrid] = None,
         config: Optional[IntegratorConfig] = None):
    """Advance ``psi`` by one time step with Wiener increment ``dW``.

    Strang splitting: half kinetic step (exact in Fourier space), local
    step, half kinetic step.  Returns the same type as ``psi``.
    """
    grid = getattr(psi, "grid", None) or grid
    if grid is None:
        raise GridError("a grid is required for plain arrays")
    cfg = config or IntegratorConfig(dt=dt, scheme=scheme)
    arr = np.asarray(field_values(psi, grid), dtype=complex)
    half = np.exp(-0.5j * dt * grid.kinetic)
    if cfg.kinetic:
        arr = np.fft.ifft(half * np.fft.fft(arr))
    a = _static_potential(grid, coupling, cfg) * dt + coupling.c * dW
    if scheme == "milstein":
        arr = _local_midpoint(arr, a, params.U, dt, cfg.max_iterations, cfg.iteration_tol)
    elif scheme == "exact_split":
        arr = _local_exact(arr, a, params.U, dt)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    if cfg.kinetic:
        arr = np.fft.ifft(half * np.fft.fft(arr))
    if not np.all(np.isfinite(arr)):
        raise IntegrationError("non-finite field after step")
    return ComplexField(arr, grid) if isinstance(psi, ComplexField) else arr


# -- batched trajectories ------------------------------------------------------


class WienerStream:
    """Per-trajectory Wiener increments drawn in fixed blocks."""

    def __init__(self, seed: int, dt: float):
        self.seed = int(seed)
        self._rng = make_rng(seed)
        self._sd = np.sqrt(dt)
        self._buf = np.empty(0)
        self._pos = 0

    def take(self, n: int) -> np.ndarray:
        out = np.empty(n)
        filled = 0
        while filled < n:
            if self._pos == self._buf.size:
                self._buf = self._sd * self._rng.standard_normal(NOISE_BLOCK)
                self._pos = 0
            k = min(n - filled, self._buf.size - self._pos)
            out[filled:filled + k] = self._buf[self._pos:self._pos + k]
            self._pos += k
            filled += k
        return out


def record_steps(config: IntegratorConfig):
    """Step indices at which observables and snapshots are recorded."""
    n = config.n_steps
    obs = sorted(set(range(0, n + 1, config.observable_stride)) | {n})
    snap = sorted(set(range(0, n + 1, config.snapshot_stride)) | {n})
    return np.array(obs), np.array(snap)


def integrate_batch(psi0, params: SystemParams, coupling: MeasurementCoupling,
                    config: IntegratorConfig, grid: SpatialGrid,
                    wiener_seeds: Sequence[int], basis: Optional[BogoliubovBasis] = None,
                    probe_positions: Sequence[float] = (), store_snapshots: bool = True,
                    sampler_seeds: Optional[Sequence[Optional[int]]] = None,
                    noise: Optional[np.ndarray] = None) -> list[TrajectoryRecord]:
    """Integrate a batch of trajectories side by side.

    ``psi0`` has shape (B, n_points).  Row b is driven by the Wiener stream
    seeded with ``wiener_seeds[b]`` (or by ``noise[b]`` if given, an array of
    n_steps increments).  Rows that turn non-finite are zeroed, flagged and
    kept out of further work.
    """
    psi = np.array(field_values(psi0, grid), dtype=complex, ndmin=2)
    nb = psi.shape[0]
    if len(wiener_seeds) != nb:
        raise ValueError("need one Wiener seed per trajectory")
    if np.any(grid.norm2(psi) == 0):
        raise ValueError("initial field has zero norm")
    n_steps, dt = config.n_steps, config.dt
    if noise is not None:
        noise = np.asarray(noise, dtype=float).reshape(nb, -1)
        if noise.shape[1] < n_steps:
            raise ValueError("noise array shorter than the number of steps")
    streams = [WienerStream(s, dt) for s in wiener_seeds]
    obs_steps, snap_steps = record_steps(config)
    is_obs = np.zeros(n_steps + 1, bool)
    is_obs[obs_steps] = True
    is_snap = np.zeros(n_steps + 1, bool)
    is_snap[snap_steps] = True

    U = params.U
    v_dt = _static_potential(grid, coupling, config) * dt
    c = coupling.c
    half = np.exp(-0.5j * dt * grid.kinetic)
    full = np.exp(-1j * dt * grid.kinetic)
    weight = detection_weight(params, grid) if params.coupling_rate is not None else None
    probe_idx = [grid.nearest_index(p) for p in probe_positions]
    ratio_on = params.kappa_ratio is not None
    g2 = eval_cavity_mode(grid, params) ** 2 if ratio_on else None

    n_obs, n_snap = obs_steps.size, snap_steps.size
    q1 = np.zeros((nb, n_obs))
    rate = np.zeros((nb, n_obs))
    norm = np.zeros((nb, n_obs))
    adiab = np.zeros((nb, n_obs)) if ratio_on else None
    pops = np.zeros((nb, n_obs, basis.n_modes)) if basis is not None else None
    probes = np.zeros((nb, n_obs, len(probe_idx)), complex) if probe_idx else None
    snaps = np.zeros((nb, n_snap, grid.n_points), complex) if store_snapshots else None
    failed = np.zeros(nb, bool)
    fail_msg = [""] * nb
    warned = False

    def record(k_obs, k_snap, t):
        nonlocal warned
        ok = ~failed
        dens = psi.real**2 + psi.imag**2
        nrm = np.sum(dens, axis=-1) * grid.dx
        if k_obs is not None:
            norm[:, k_obs] = nrm
            with np.errstate(invalid="ignore", divide="ignore"):
                q1[:, k_obs] = np.where(ok, np.sum(grid.x * dens, axis=-1) * grid.dx / nrm, np.nan)
            if weight is not None:
                rate[:, k_obs] = 2.0 * params.coupling_rate * (np.sum(weight * dens, axis=-1) * grid.dx) ** 2
            if adiab is not None:
                adiab[:, k_obs] = abs(params.kappa_ratio) / params.n_atoms * np.sum(g2 * dens, axis=-1) * grid.dx
                if not warned and np.max(adiab[ok, k_obs], initial=0.0) > ADIABATICITY_WARN:
                    log.warning("adiabatic-elimination ratio %.3g exceeds %.2g at t=%g",
                                np.max(adiab[ok, k_obs]), ADIABATICITY_WARN, t)
                    warned = True
            if pops is not None:
                pops[:, k_obs] = populations(psi, basis)
            if probes is not None:
                probes[:, k_obs] = psi[:, probe_idx]
            norm[failed, k_obs] = np.nan
            rate[failed, k_obs] = np.nan
        if k_snap is not None and snaps is not None:
            snaps[:, k_snap] = psi

    record(0, 0, 0.0)
    k_obs = k_snap = 1
    synced = True
    pos = 0
    block = None
    for n in range(1, n_steps + 1):
        if noise is not None:
            dW = noise[:, n - 1:n]
        else:
            if block is None or pos == block.shape[1]:
                m = min(NOISE_BLOCK, n_steps - n + 1)
                block = np.stack([s.take(m) for s in streams])
                pos = 0
            dW = block[:, pos:pos + 1]
            pos += 1
        if config.kinetic:
            prop = half if synced else full
            psi = np.fft.ifft(prop * np.fft.fft(psi, axis=-1), axis=-1)
        a = v_dt + c * dW
        if config.scheme == "milstein":
            psi = _local_midpoint(psi, a, U, dt, config.max_iterations, config.iteration_tol)
        else:
            psi = _local_exact(psi, a, U, dt)
        rec_o, rec_s = is_obs[n], is_snap[n]
        synced = False
        if rec_o or rec_s or n == n_steps:
            if config.kinetic:
                psi = np.fft.ifft(half * np.fft.fft(psi, axis=-1), axis=-1)
            synced = True
            bad = ~np.all(np.isfinite(psi), axis=-1) & ~failed
            for b in np.flatnonzero(bad):
                failed[b] = True
                fail_msg[b] = f"non-finite field at t={n * dt:.6g}"
                log.warning("trajectory with Wiener seed %d failed: %s", wiener_seeds[b], fail_msg[b])
            psi[failed] = 0.0
            record(k_obs if rec_o else None, k_snap if rec_s else None, n * dt)
            k_obs += rec_o
            k_snap += rec_s

    times = obs_steps * dt
    snap_times = snap_steps * dt
    out = []
    for b in range(nb):
        out.append(TrajectoryRecord(
            times=times, q1=q1[b], r_meas=rate[b], norm=norm[b],
            snapshot_times=snap_times,
            snapshots=None if snaps is None else snaps[b],
            populations=None if pops is None else pops[b],
            adiabaticity=None if adiab is None else adiab[b],
            probes=None if probes is None else probes[b],
            sampler_seed=None if sampler_seeds is None else sampler_seeds[b],
            wiener_seed=int(wiener_seeds[b]),
            failed=bool(failed[b]), message=fail_msg[b],
            meta={"scheme": config.scheme, "dt": dt},
        ))
    return out


def run_trajectory(initial, params: SystemParams, coupling: MeasurementCoupling,
                   config: IntegratorConfig, basis: Optional[BogoliubovBasis] = None,
                   probe_positions: Sequence[float] = (), store_snapshots: bool = True,
                   sampler_seed: Optional[int] = None, noise=None) -> TrajectoryRecord:
    """Integrate one trajectory from ``initial`` to ``config.t_final``.

    The Wiener stream is seeded by ``config.rng_seed`` unless ``noise`` (the
    explicit increments) is given.  A failed trajectory returns its partial
    record with ``failed`` set.
    """
    grid = getattr(initial, "grid", None) or (basis.grid if basis is not None else None)
    if grid is None:
        raise GridError("a grid is required for plain arrays")
    rec = integrate_batch(field_values(initial, grid)[None, :], params, coupling, config, grid,
                          [config.rng_seed], basis, probe_positions, store_snapshots,
                          [sampler_seed], None if noise is None else np.asarray(noise)[None, :])[0]
    return rec
