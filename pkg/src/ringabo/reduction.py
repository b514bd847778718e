"""Reduction of the 3D toroidal + ring-lattice trap to the effective 1D model.

The radial and axial ground states are harmonic-oscillator Gaussians of the
toroidal trap; the radial one is centred on the ring radius and renormalised
on the integration window ``r0 +/- 8 sigma_r`` (which must stay inside r > 0).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import constants, integrate, special

from .errors import InvalidParameterError, NumericalError

HBAR_SI = constants.hbar
RB87_MASS = 86.909180527 * constants.atomic_mass

_WINDOW = 8.0
_TOL = 1e-10


@dataclass(frozen=True)
class Trap3DParams:
    mass: float
    r0: float
    omega_perp: float
    omega_z: float
    w0: float
    zR: float
    U: float
    l: int

    def __post_init__(self):
        for name in ("mass", "r0", "omega_perp", "omega_z", "w0", "zR", "U"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise InvalidParameterError(f"{name} must be positive and finite")
        if int(self.l) != self.l or self.l < 1:
            raise InvalidParameterError("azimuthal_l must be >= 1")

    def is_matched(self, rtol: float = 1e-6) -> bool:
        """True when the ring radius sits on the intensity maximum, r0 = sqrt(l/2) w0."""
        return math.isclose(self.r0, math.sqrt(self.l / 2.0) * self.w0, rel_tol=rtol)

    @classmethod
    def matched(cls, mass, r0, omega_perp, omega_z, zR, U, l) -> "Trap3DParams":
        return cls(mass, r0, omega_perp, omega_z, r0 / math.sqrt(l / 2.0), zR, U, l)


@dataclass(frozen=True)
class ReducedParams:
    I: float
    V: float
    eps0: float


def lg_profile(l: int, xi):
    """Intensity profile exp(-xi^2) xi^(2l) / l! of a p = 0 LG beam."""
    xi = np.asarray(xi, dtype=float)
    with np.errstate(divide="ignore"):
        logv = -xi**2 + 2 * l * np.log(xi) - special.gammaln(l + 1)
    out = np.where(xi > 0, np.exp(logv), 0.0)
    return float(out) if out.ndim == 0 else out


def peak_profile(l: int) -> float:
    """max_xi f_l(xi) = l^l e^(-l) / l!, attained at xi = sqrt(l)."""
    return math.exp(l * math.log(l) - l - math.lgamma(l + 1))


def _gauss_density(x, width):
    return np.exp(-(x / width) ** 2) / (math.sqrt(math.pi) * width)


def _quad(f, a, b, what):
    val, err = integrate.quad(f, a, b, epsabs=0.0, epsrel=_TOL, limit=400)
    if not np.isfinite(val) or err > 1e3 * _TOL * abs(val) + 1e-300:
        raise NumericalError(f"{what} quadrature did not converge (value={val}, error={err})")
    return val


def reduce_3d(trap: Trap3DParams, hbar: float = HBAR_SI) -> ReducedParams:
    """Effective moment of inertia, lattice depth and energy offset.

    The first term of ``eps0`` is the radial integral of |R0|^2 / (4 r^2)
    taken literally, with no hbar^2/m prefactor.
    """
    m = trap.mass
    sig_r = math.sqrt(hbar / (m * trap.omega_perp))
    sig_z = math.sqrt(hbar / (m * trap.omega_z))
    if sig_r / trap.r0 > 0.1:
        warnings.warn(f"ring width / radius = {sig_r / trap.r0:.3g} is not small", stacklevel=2)
    if sig_z / trap.zR > 0.1:
        warnings.warn(f"axial width / Rayleigh length = {sig_z / trap.zR:.3g} is not small", stacklevel=2)
    r_lo = trap.r0 - _WINDOW * sig_r
    r_hi = trap.r0 + _WINDOW * sig_r
    if r_lo <= 0:
        raise InvalidParameterError("radial ground state reaches r = 0; ring width too large for the reduction")

    def dens_r(r):
        return _gauss_density(r - trap.r0, sig_r)

    norm_r = _quad(dens_r, r_lo, r_hi, "radial norm")
    inv_r2 = _quad(lambda r: dens_r(r) / r**2, r_lo, r_hi, "radial <1/r^2>") / norm_r
    I = m / inv_r2

    z_hi = _WINDOW * sig_z
    norm_z = _quad(lambda z: _gauss_density(z, sig_z), -z_hi, z_hi, "axial norm")

    def radial_shell(r):
        def fz(z):
            wz = trap.w0 * math.sqrt(1.0 + (z / trap.zR) ** 2)
            return _gauss_density(z, sig_z) * lg_profile(trap.l, math.sqrt(2.0) * r / wz)

        return dens_r(r) * _quad(fz, -z_hi, z_hi, "axial overlap")

    V = trap.U * _quad(radial_shell, r_lo, r_hi, "lattice overlap") / (norm_r * norm_z)
    eps0 = 0.25 * inv_r2 + 0.5 * hbar * (trap.omega_z + trap.omega_perp) - V
    return ReducedParams(I, V, eps0)


def estimate_params(trap: Trap3DParams) -> tuple[float, float]:
    """Thin-ring estimates (I, V) = (m r0^2, U l^l e^(-l) / l!)."""
    return trap.mass * trap.r0**2, trap.U * peak_profile(trap.l)
