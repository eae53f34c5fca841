"""Hygrothermal material relations for porous building materials.

Simplified Kunzel model: sorption isotherm, vapor and liquid transport,
moisture dependent thermal conductivity and the storage terms of the
coupled heat and moisture balance equations. Relative humidity phi [-]
and temperature theta [deg C] are the state variables; moisture content
w is in kg m^-3.

All evaluation functions accept scalars or numpy arrays of matching
shape and broadcast elementwise, so assembly loops can evaluate whole
element batches at once.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass

import numpy as np

# physical constants
R_GAS = 8314.41                  # J kmol^-1 K^-1, universal gas constant
M_WATER = 18.01528               # kg kmol^-1, molar mass of water
R_VAPOR = R_GAS / M_WATER        # J kg^-1 K^-1, gas constant of water vapor
P_ATM = 101325.0                 # Pa, ambient air pressure
C_WATER = 4187.0                 # J kg^-1 K^-1, heat capacity of liquid water
T_ZERO = 273.15                  # K, zero Celsius

# temperature validity window of the transport correlations, deg C
THETA_MIN = -40.0
THETA_MAX = 80.0

# loose admissibility band for relative humidity; transient schemes may
# overshoot [0, 1] by solver-level amounts without invalidating a state
PHI_SLACK = 1e-2

MATERIAL_FIELDS = ("w_f", "w_80", "lambda_0", "b_tcs", "rho_s", "mu", "A", "c_s")


class ConstitutiveError(ValueError):
    """Raised for states or parameters outside the model's domain."""


@dataclass(frozen=True)
class MaterialParams:
    """Measured parameter record of one material phase.

    w_f       free water saturation [kg m^-3]
    w_80      equilibrium water content at phi = 0.8 [kg m^-3]
    lambda_0  dry thermal conductivity [W m^-1 K^-1]
    b_tcs     thermal conductivity supplement [-]
    rho_s     bulk density of the dry material [kg m^-3]
    mu        vapor diffusion resistance factor [-]
    A         water absorption coefficient [kg m^-2 s^-0.5]
    c_s       specific heat capacity of the dry material [J kg^-1 K^-1]
    """

    name: str
    w_f: float
    w_80: float
    lambda_0: float
    b_tcs: float
    rho_s: float
    mu: float
    A: float
    c_s: float

    def __post_init__(self):
        positive = ("w_f", "lambda_0", "rho_s", "mu", "c_s")
        bad = [f for f in positive if getattr(self, f) <= 0.0]
        if self.w_80 <= 0.0 or self.A < 0.0 or self.b_tcs < 0.0:
            bad.append("w_80/A/b_tcs")
        if bad:
            raise ConstitutiveError(f"{self.name}: non-physical parameters {bad}")
        if not self.w_80 < 0.8 * self.w_f:
            raise ConstitutiveError(
                f"{self.name}: w_80 = {self.w_80} must lie below 0.8 w_f = "
                f"{0.8 * self.w_f}; no approximation factor b > 1 exists"
            )


@dataclass(frozen=True)
class CoefficientSet:
    """Coupled transport and storage coefficients at one state.

    The balance equations read

        c_tt dtheta/dt = div(k_tt grad theta) + div(k_tf grad phi)
        c_ff dphi/dt   = div(k_ft grad theta) + div(k_ff grad phi)

    where the cross terms carry the vapor flux delta_p grad(phi p_sat)
    split into its temperature and humidity parts, with the latent heat
    h_v applied in the energy balance.
    """

    k_tt: np.ndarray | float
    k_tf: np.ndarray | float
    k_ft: np.ndarray | float
    k_ff: np.ndarray | float
    c_tt: np.ndarray | float
    c_ff: np.ndarray | float


def _check_theta(theta):
    th = np.asarray(theta, dtype=float)
    if np.any(~np.isfinite(th)) or np.any(th <= THETA_MIN) or np.any(th >= THETA_MAX):
        raise ConstitutiveError(
            f"temperature outside validity window ({THETA_MIN}, {THETA_MAX}) degC"
        )
    return th


def _check_phi(phi):
    ph = np.asarray(phi, dtype=float)
    if np.any(~np.isfinite(ph)) or np.any(ph < -PHI_SLACK) or np.any(ph > 1.0 + PHI_SLACK):
        raise ConstitutiveError("relative humidity outside the admissible band [0, 1]")
    return ph


def saturation_pressure(theta):
    """Water vapor saturation pressure [Pa] at theta [deg C].

    Empirical fit 611 exp(a theta / (theta_0 + theta)) with coefficient
    pairs switching at the freezing point; both branches meet at 611 Pa.
    """
    th = _check_theta(theta)
    a = np.where(th < 0.0, 22.44, 17.08)
    t0 = np.where(th < 0.0, 272.44, 234.18)
    p = 611.0 * np.exp(a * th / (t0 + th))
    return p if p.ndim else float(p)


def saturation_pressure_derivative(theta):
    """d p_sat / d theta [Pa K^-1], piecewise like the pressure itself."""
    th = _check_theta(theta)
    a = np.where(th < 0.0, 22.44, 17.08)
    t0 = np.where(th < 0.0, 272.44, 234.18)
    p = 611.0 * np.exp(a * th / (t0 + th))
    d = p * a * t0 / (t0 + th) ** 2
    return d if d.ndim else float(d)


def latent_heat(theta):
    """Latent heat of evaporation h_v [J kg^-1] at theta [deg C].

    The underlying correlation takes absolute temperature,
    h_v = 2.5008e6 (273.15 / T)^(0.167 + 3.67e-4 T).
    """
    th = _check_theta(theta)
    t_abs = th + T_ZERO
    h = 2.5008e6 * (T_ZERO / t_abs) ** (0.167 + 3.67e-4 * t_abs)
    return h if h.ndim else float(h)


def derive_approximation_factor(w_f, w_80):
    """Approximation factor b of the sorption isotherm.

    Solves w(0.8) = w_80 for the one-parameter isotherm
    w(phi) = w_f (b - 1) phi / (b - phi); the closed form is
    b = 0.8 (w_f - w_80) / (0.8 w_f - w_80), valid for w_80 < 0.8 w_f.
    """
    if not 0.0 < w_80 < 0.8 * w_f:
        raise ConstitutiveError(
            f"w_80 = {w_80} outside (0, 0.8 w_f) for w_f = {w_f}; b undefined"
        )
    b = 0.8 * (w_f - w_80) / (0.8 * w_f - w_80)
    assert b > 1.0
    return b


def water_content(params: MaterialParams, phi, b: float | None = None):
    """Equilibrium water content w(phi) [kg m^-3] of the sorption isotherm."""
    ph = _check_phi(phi)
    if b is None:
        b = derive_approximation_factor(params.w_f, params.w_80)
    w = params.w_f * (b - 1.0) * ph / (b - ph)
    return w if w.ndim else float(w)


def moisture_capacity(params: MaterialParams, phi, b: float | None = None):
    """Moisture storage capacity dw/dphi [kg m^-3] (always positive)."""
    ph = _check_phi(phi)
    if b is None:
        b = derive_approximation_factor(params.w_f, params.w_80)
    c = params.w_f * (b - 1.0) * b / (b - ph) ** 2
    return c if c.ndim else float(c)


def moisture_capacity_derivative(params: MaterialParams, phi,
                                 b: float | None = None):
    """Second derivative of the sorption isotherm, d^2 w / d phi^2."""
    ph = _check_phi(phi)
    if b is None:
        b = derive_approximation_factor(params.w_f, params.w_80)
    c = 2.0 * params.w_f * (b - 1.0) * b / (b - ph) ** 3
    return c if c.ndim else float(c)


def vapor_diffusion(theta, p=P_ATM):
    """Vapor diffusion coefficient in air, delta [kg m^-1 s^-1 Pa^-1].

    delta = 2.306e-5 p_a / (R_v T p) (T / 273.15)^1.81 with T in kelvin.
    """
    th = _check_theta(theta)
    t_abs = th + T_ZERO
    d = 2.306e-5 * P_ATM / (R_VAPOR * t_abs * p) * (t_abs / T_ZERO) ** 1.81
    return d if d.ndim else float(d)


def vapor_permeability(params: MaterialParams, theta, p=P_ATM):
    """Vapor permeability of the porous material, delta_p = delta / mu."""
    return vapor_diffusion(theta, p) / params.mu


def liquid_conduction(params: MaterialParams, phi, b: float | None = None):
    """Liquid conduction coefficient D_phi [kg m^-1 s^-1].

    D_phi = D_w(w) dw/dphi with the capillary transport coefficient
    D_w = 3.8 (A / w_f)^2 1000^(w / w_f - 1)  [m^2 s^-1].
    """
    if b is None:
        b = derive_approximation_factor(params.w_f, params.w_80)
    w = water_content(params, phi, b)
    d_w = 3.8 * (params.A / params.w_f) ** 2 * 1000.0 ** (np.asarray(w) / params.w_f - 1.0)
    out = d_w * moisture_capacity(params, phi, b)
    return out if np.ndim(out) else float(out)


def thermal_conductivity(params: MaterialParams, w):
    """Moisture dependent thermal conductivity [W m^-1 K^-1].

    lambda = lambda_0 (1 + b_tcs w / rho_s), linear in the water content.
    """
    lam = params.lambda_0 * (1.0 + params.b_tcs * np.asarray(w, dtype=float) / params.rho_s)
    return lam if lam.ndim else float(lam)


def heat_storage(params: MaterialParams, phi, b: float | None = None):
    """Heat storage capacity dH/dtheta [J m^-3 K^-1].

    Dry skeleton plus retained liquid water:
    dH/dtheta = rho_s c_s + c_w w(phi).
    """
    w = water_content(params, phi, b)
    out = params.rho_s * params.c_s + C_WATER * np.asarray(w)
    return out if np.ndim(out) else float(out)


def transport_coefficients(params: MaterialParams, theta, phi,
                           b: float | None = None) -> CoefficientSet:
    """Full coupled CoefficientSet at state (theta [deg C], phi [-]).

    All entries are positive inside the validity window; c_tt is bounded
    below by the dry heat capacity rho_s c_s.
    """
    th = _check_theta(theta)
    ph = _check_phi(phi)
    if b is None:
        b = derive_approximation_factor(params.w_f, params.w_80)
    w = water_content(params, ph, b)
    dp = vapor_permeability(params, th)
    psat = saturation_pressure(th)
    dpsat = saturation_pressure_derivative(th)
    hv = latent_heat(th)
    lam = thermal_conductivity(params, w)
    return CoefficientSet(
        k_tt=lam + hv * dp * ph * dpsat,
        k_tf=hv * dp * psat,
        k_ft=dp * ph * dpsat,
        k_ff=liquid_conduction(params, ph, b) + dp * psat,
        c_tt=params.rho_s * params.c_s + C_WATER * np.asarray(w),
        c_ff=moisture_capacity(params, ph, b),
    )


class KunzelMaterial:
    """A material phase with its derived approximation factor cached."""

    def __init__(self, params: MaterialParams):
        self.params = params
        self.b = derive_approximation_factor(params.w_f, params.w_80)

    @property
    def name(self):
        return self.params.name

    def coefficients(self, theta, phi) -> CoefficientSet:
        return transport_coefficients(self.params, theta, phi, self.b)

    def storage_derivatives(self, theta, phi):
        """(d c_tt / d phi, d c_ff / d phi) for Jacobian assembly.

        Both storage coefficients depend on the state only through the
        water content, so only humidity derivatives arise.
        """
        dw = moisture_capacity(self.params, phi, self.b)
        d2w = moisture_capacity_derivative(self.params, phi, self.b)
        return C_WATER * np.asarray(dw), np.asarray(d2w)

    def __repr__(self):
        return f"KunzelMaterial({self.params.name}, b={self.b:.6g})"


class LinearMaterial:
    """Constant-coefficient stand-in with the same evaluation interface.

    Used for verification problems with known closed-form behavior; the
    state arguments are accepted and ignored apart from broadcasting.
    """

    def __init__(self, name, k_tt, k_ff, c_tt, c_ff, k_tf=0.0, k_ft=0.0):
        self.name = name
        self._c = CoefficientSet(k_tt, k_tf, k_ft, k_ff, c_tt, c_ff)

    def coefficients(self, theta, phi) -> CoefficientSet:
        shape = np.broadcast(np.asarray(theta), np.asarray(phi)).shape
        if not shape:
            return self._c
        full = lambda v: np.full(shape, v, dtype=float)
        c = self._c
        return CoefficientSet(full(c.k_tt), full(c.k_tf), full(c.k_ft),
                              full(c.k_ff), full(c.c_tt), full(c.c_ff))

    def storage_derivatives(self, theta, phi):
        shape = np.broadcast(np.asarray(theta), np.asarray(phi)).shape
        zero = np.zeros(shape if shape else ())
        return zero, zero.copy()

    def __repr__(self):
        return f"LinearMaterial({self.name})"


# reference parameter sets for a historic brick masonry
BRICK = MaterialParams("brick", w_f=229.30, w_80=141.68, lambda_0=0.25,
                       b_tcs=10.0, rho_s=1690.0, mu=16.80, A=0.51, c_s=840.0)
MORTAR = MaterialParams("mortar", w_f=160.00, w_80=22.72, lambda_0=0.45,
                        b_tcs=9.0, rho_s=1670.0, mu=9.63, A=0.82, c_s=1000.0)


def default_materials() -> dict[str, KunzelMaterial]:
    """Brick and mortar phases with the bundled reference parameters."""
    return {"brick": KunzelMaterial(BRICK), "mortar": KunzelMaterial(MORTAR)}


def save_materials(path, materials: dict[str, MaterialParams]):
    """Write an INI material file, one section per phase."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    for name, params in materials.items():
        cp[name] = {f: repr(getattr(params, f)) for f in MATERIAL_FIELDS}
    with open(path, "w") as fh:
        cp.write(fh)


def load_materials(path) -> dict[str, KunzelMaterial]:
    """Read an INI material file into ready-to-use material phases.

    Every section must define exactly the eight parameter fields; all
    problems with the file are reported together.
    """
    cp = configparser.ConfigParser()
    cp.optionxform = str
    with open(path) as fh:
        cp.read_file(fh)
    errors = []
    out = {}
    for name in cp.sections():
        sec = cp[name]
        missing = [f for f in MATERIAL_FIELDS if f not in sec]
        extra = [k for k in sec if k not in MATERIAL_FIELDS]
        if missing:
            errors.append(f"[{name}] missing fields {missing}")
        if extra:
            errors.append(f"[{name}] unknown fields {extra}")
        if missing or extra:
            continue
        try:
            values = {f: float(sec[f]) for f in MATERIAL_FIELDS}
            out[name] = KunzelMaterial(MaterialParams(name, **values))
        except (ValueError, ConstitutiveError) as exc:
            errors.append(f"[{name}] {exc}")
    if errors:
        raise ConstitutiveError("material file " + str(path) + ": " + "; ".join(errors))
    if not out:
        raise ConstitutiveError(f"material file {path}: no phases defined")
    return out
