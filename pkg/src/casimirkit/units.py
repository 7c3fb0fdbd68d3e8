"""Natural-unit conventions and SI conversion factors.

Inside the package hbar = c = 1 and lengths are in micrometres, so a
frequency xi, a wavenumber and a temperature k_B T/(hbar c) all carry 1/um,
an energy carries hbar*c/um, and so on.  Only the CLI converts to SI.
"""
import scipy.constants as sc

UM = 1e-6                     # metres per micrometre
HBAR_C = sc.hbar * sc.c       # J m

# SI value of one natural unit, keyed by physical quantity.  The 1d and 2d
# models live in one and two space dimensions, so their energies and forces
# carry the same units as in 3d; plate results are per unit area.
SI_FACTORS = {
    "energy": HBAR_C / UM,             # J
    "force": HBAR_C / UM**2,           # N
    "pressure": HBAR_C / UM**4,        # Pa
    "frequency": sc.c / UM,            # rad/s per (1/um)
}

SI_UNITS = {
    "energy": "J",
    "force": "N",
    "pressure": "Pa",
    "frequency": "rad/s",
}


def temperature_to_natural(T_kelvin: float) -> float:
    """k_B T/(hbar c) in 1/um."""
    return sc.k * T_kelvin / HBAR_C * UM


def thermal_wavelength(T_kelvin: float) -> float:
    """lambda_T = hbar c/(k_B T) in um (about 7.6 um at 300 K)."""
    return 1.0 / temperature_to_natural(T_kelvin)


def to_si(value: float, quantity: str) -> float:
    return value * SI_FACTORS[quantity]
