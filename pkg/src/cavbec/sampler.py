"""Wigner sampling of the Bogoliubov vacuum / thermal initial state."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bogoliubov import BogoliubovBasis, synthesize
from .core import ComplexField


@dataclass(frozen=True)
class SamplerConfig:
    """Initial-state sampling options.

    ``mode_cutoff=None`` uses every solved mode; ``condensate_number=None``
    means N0 = N (depletion neglected).
    """

    temperature: float = 0.0
    mode_cutoff: Optional[int] = None
    condensate_number: Optional[float] = None
    fluctuations_enabled: bool = False
    rng_seed: int = 0

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.mode_cutoff is not None and self.mode_cutoff < 0:
            raise ValueError("mode_cutoff must be >= 0")
        if self.condensate_number is not None and not self.condensate_number > 0:
            raise ValueError("condensate number must be positive")


def thermal_occupation(eps, temperature: float):
    """Bose-Einstein occupation 1/(exp(eps/kT) - 1); zero at T = 0."""
    eps = np.asarray(eps, dtype=float)
    if temperature == 0:
        return np.zeros_like(eps)[()] if eps.ndim else 0.0
    with np.errstate(over="ignore"):
        n = 1.0 / np.expm1(eps / temperature)
    return n[()] if n.ndim else float(n)


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator keyed by a 64-bit seed."""
    return np.random.Generator(np.random.Philox(key=int(seed) & 0xFFFFFFFFFFFFFFFF))


def sample_amplitudes(occupations, rng: np.random.Generator, size=None) -> np.ndarray:
    """Complex Gaussian amplitudes with <|b|^2> = n + 1/2 and <b> = <b^2> = 0."""
    occ = np.asarray(occupations, dtype=float)
    shape = occ.shape if size is None else tuple(np.atleast_1d(size)) + occ.shape
    z = rng.standard_normal(shape + (2,))
    return np.sqrt(0.5 * (occ + 0.5)) * (z[..., 0] + 1j * z[..., 1])


def _cutoff(basis: BogoliubovBasis, config: SamplerConfig) -> int:
    cut = basis.n_modes if config.mode_cutoff is None else config.mode_cutoff
    if cut > basis.n_modes:
        raise ValueError(f"mode cutoff {cut} exceeds the {basis.n_modes} solved modes")
    return cut


def sample_initial_field(basis: BogoliubovBasis, config: SamplerConfig, n_atoms: float,
                         rng: Optional[np.random.Generator] = None) -> ComplexField:
    """Draw psi(x, 0) = sqrt(N0) psi0 + sum_j [beta_j u_j - beta_j* v_j].

    With fluctuations disabled the result is exactly sqrt(N0) psi0.  ``rng``
    defaults to a generator seeded from ``config.rng_seed``.
    """
    cut = _cutoff(basis, config)
    n0 = n_atoms if config.condensate_number is None else config.condensate_number
    if not config.fluctuations_enabled or cut == 0:
        return ComplexField(np.sqrt(n0) * basis.psi0.astype(complex), basis.grid)
    rng = make_rng(config.rng_seed) if rng is None else rng
    occ = thermal_occupation(basis.eps[:cut], config.temperature)
    beta = sample_amplitudes(occ, rng)
    return ComplexField(synthesize(basis, beta, np.sqrt(n0)), basis.grid)


def mean_atom_number(basis: BogoliubovBasis, config: SamplerConfig, n_atoms: float) -> float:
    """Wigner mean of int |psi|^2: N0 + sum_j (n_j + 1/2) int (u_j^2 + v_j^2) dx."""
    cut = _cutoff(basis, config)
    n0 = n_atoms if config.condensate_number is None else config.condensate_number
    if not config.fluctuations_enabled:
        return float(n0)
    occ = thermal_occupation(basis.eps[:cut], config.temperature)
    w = np.sum(basis.u[:cut] ** 2 + basis.v[:cut] ** 2, axis=-1) * basis.grid.dx
    return float(n0 + np.sum((occ + 0.5) * w))
