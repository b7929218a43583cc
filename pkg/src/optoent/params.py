"""Transducer parameters, derived rates and the shipped parameter presets.

All rates are stored as angular frequencies (rad/s).  Human-facing values
quoted as ``x/2pi`` in Hz are converted with :func:`hz` or
:meth:`PhysicalParams.from_hz`.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Literal

from scipy import constants

from .errors import ConfigurationError

HBAR = constants.hbar
E_CHARGE = constants.e
C_LIGHT = constants.c
TWO_PI = 2 * math.pi

DEFAULT_WAVELENGTH = 1550e-9

SignMode = Literal["total-spin", "spin-difference"]
SIGN_MODES = ("total-spin", "spin-difference")


def hz(f):
    """Convert an ordinary frequency (Hz) to an angular frequency (rad/s)."""
    return TWO_PI * f


def per_2pi(w):
    """Convert an angular frequency (rad/s) back to Hz."""
    return w / TWO_PI


@dataclass(frozen=True)
class PhysicalParams:
    """Physical constants of one qubit-mechanics-optics node.

    Rates (``chi``, ``omega_m``, ``gamma``, ``g``, ``kappa``, ``g0``) are in
    rad/s, ``T1``/``T2`` in s, ``lambda_opt`` and ``x_zpf`` in m, ``m_eff``
    in kg.
    """

    chi: float
    omega_m: float
    gamma: float
    n_bar: float
    g: float
    kappa: float
    T1: float
    T2: float
    g0: float | None = None
    lambda_opt: float | None = None
    m_eff: float | None = None
    x_zpf: float | None = None

    def __post_init__(self):
        for name in ("chi", "omega_m", "gamma", "g", "kappa"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigurationError(f"{name} must be a finite non-negative rate, got {v!r}")
        for name in ("omega_m", "gamma", "kappa"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be strictly positive")
        if not self.n_bar >= 0:
            raise ConfigurationError(f"n_bar must be >= 0, got {self.n_bar!r}")
        if not (self.T1 > 0 and self.T2 > 0):
            raise ConfigurationError("T1 and T2 must be strictly positive")
        for name in ("g0", "lambda_opt", "m_eff", "x_zpf"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigurationError(f"{name} must be positive when given")
        if self.m_eff is not None and self.x_zpf is not None:
            expected = zero_point_fluctuation(self.m_eff, self.omega_m)
            if abs(self.x_zpf / expected - 1) > 0.01:
                raise ConfigurationError(
                    f"x_zpf={self.x_zpf:.4g} m inconsistent with m_eff and omega_m "
                    f"(expected {expected:.4g} m)"
                )

    @classmethod
    def from_hz(cls, *, chi, omega_m, gamma, n_bar, g, kappa, T1, T2, g0=None, **kw):
        """Build from ``/2pi`` frequencies given in Hz."""
        return cls(
            chi=hz(chi), omega_m=hz(omega_m), gamma=hz(gamma), n_bar=n_bar,
            g=hz(g), kappa=hz(kappa), T1=T1, T2=T2,
            g0=None if g0 is None else hz(g0), **kw,
        )

    def replace(self, **changes) -> PhysicalParams:
        return dataclasses.replace(self, **changes)

    def scaled(self, s: float) -> PhysicalParams:
        """Rescale every frequency by ``s`` (and every time by ``1/s``)."""
        return self.replace(
            chi=self.chi * s, omega_m=self.omega_m * s, gamma=self.gamma * s,
            g=self.g * s, kappa=self.kappa * s, T1=self.T1 / s, T2=self.T2 / s,
            g0=None if self.g0 is None else self.g0 * s,
        )


@dataclass(frozen=True)
class ChannelParams:
    """Optical link between the two nodes and the detector."""

    tau: float = 1.0
    eta: float = 1.0
    phi: float = math.pi / 2
    sign_mode: SignMode = "total-spin"

    def __post_init__(self):
        check_fraction("tau", self.tau)
        check_fraction("eta", self.eta)
        if self.sign_mode not in SIGN_MODES:
            raise ConfigurationError(f"unknown sign_mode {self.sign_mode!r}")


def check_fraction(name, v):
    if not (0 < v <= 1):
        raise ConfigurationError(f"{name} must lie in (0, 1], got {v!r}")


@dataclass(frozen=True)
class EffectiveRates:
    """Rate constants of the effective two-qubit master equation.

    ``gamma_meas`` is the single-node measurement rate before transmission
    losses; the joint backaction rate and measurement amplitude of the
    two-node equation are ``tau * gamma_meas`` and
    ``sqrt(tau * eta * gamma_meas)``.  ``gamma_mech_2`` already carries the
    factor ``tau`` coming from the matched coupling of node 2.
    """

    gamma_meas: float
    gamma_mech_1: float = 0.0
    gamma_mech_2: float = 0.0
    gamma_loss_1: float = 0.0
    gamma_relax: float = 0.0
    gamma_phi: float = 0.0
    eta: float = 1.0
    tau: float = 1.0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigurationError(f"{f.name} must be finite and >= 0, got {v!r}")
        check_fraction("tau", self.tau)
        check_fraction("eta", self.eta)

    @classmethod
    def normalized(cls, Gamma=1.0, gamma_minus=0.0, gamma_1=0.0, gamma_2=0.0, eta=1.0):
        """Rates written directly in the reduced form used for postselection
        studies: relaxation ``gamma_minus``, local dephasing ``gamma_1``,
        ``gamma_2`` and joint measurement rate ``Gamma``."""
        return cls(gamma_meas=Gamma, gamma_mech_1=gamma_1, gamma_mech_2=gamma_2,
                   gamma_relax=gamma_minus, eta=eta, tau=1.0)

    @property
    def joint(self) -> float:
        """Rate multiplying D[sigma_z^1 +- sigma_z^2]."""
        return self.tau * self.gamma_meas

    @property
    def dephasing_1(self) -> float:
        return self.gamma_phi + self.gamma_loss_1 + self.gamma_mech_1

    @property
    def dephasing_2(self) -> float:
        return self.gamma_phi + self.gamma_mech_2

    @property
    def total(self) -> float:
        return 2 * self.gamma_relax + self.dephasing_1 + self.dephasing_2 + self.joint

    def as_dict(self):
        return dataclasses.asdict(self)


def zero_point_fluctuation(m_eff, omega_m):
    return math.sqrt(HBAR / (2 * m_eff * omega_m))


def measurement_rate(p: PhysicalParams) -> float:
    return 16 * p.chi**2 * p.g**2 / (p.kappa * p.omega_m**2)


def mechanical_dephasing(p: PhysicalParams) -> float:
    return p.chi**2 * p.gamma * (2 * p.n_bar + 1) / p.omega_m**2


def mechanical_dephasing_high_temperature(p: PhysicalParams) -> float:
    """Thermal-force estimate 2 chi^2 gamma n_bar / omega_m^2.

    Approximation of :func:`mechanical_dephasing` valid for ``n_bar >> 1``;
    not used by the simulation.
    """
    return 2 * p.chi**2 * p.gamma * p.n_bar / p.omega_m**2


def measurement_time(p: PhysicalParams) -> float:
    return p.kappa * p.omega_m**2 / (16 * p.chi**2 * p.g**2)


def cooperativity(p: PhysicalParams) -> float:
    if p.n_bar <= 0:
        raise ConfigurationError("cooperativity 4g^2/(kappa gamma n_bar) is undefined for n_bar = 0")
    return 4 * p.g**2 / (p.kappa * p.gamma * p.n_bar)


def match_coupling(chi_1, tau):
    """Node-2 coupling that equalises both measurement rates behind a lossy link."""
    check_fraction("tau", tau)
    return math.sqrt(tau) * chi_1


def derive_rates(p: PhysicalParams, ch: ChannelParams = ChannelParams(), *,
                 t2_convention: Literal["rate", "coherence"] = "rate") -> EffectiveRates:
    """Effective rates for two identical nodes with node 2 coupling matched.

    ``t2_convention="rate"`` uses ``1/T2`` directly as the rate in front of
    D[sigma_z]; ``"coherence"`` interprets T2 as the total coherence time,
    ``1/T2 = 1/(2 T1) + 2 gamma_phi``, clipped at zero.
    """
    if not isinstance(ch, ChannelParams):
        raise TypeError("ch must be ChannelParams")
    gm = measurement_rate(p)
    gd = mechanical_dephasing(p)
    if t2_convention == "rate":
        gphi = 1 / p.T2
    elif t2_convention == "coherence":
        gphi = max(0.0, (1 / p.T2 - 0.5 / p.T1) / 2)
    else:
        raise ConfigurationError(f"unknown t2_convention {t2_convention!r}")
    return EffectiveRates(
        gamma_meas=gm,
        gamma_mech_1=gd,
        # node 2 runs at chi_2 = sqrt(tau) chi, so its thermal dephasing scales with tau
        gamma_mech_2=ch.tau * gd,
        gamma_loss_1=(1 - ch.tau) * gm,
        gamma_relax=1 / p.T1,
        gamma_phi=gphi,
        eta=ch.eta,
        tau=ch.tau,
    )


def driving_power(p: PhysicalParams) -> float:
    """Optical input power (W) needed to enhance ``g0`` to ``g``."""
    if p.g0 is None:
        raise ConfigurationError("driving_power needs the bare coupling g0")
    lam = p.lambda_opt if p.lambda_opt is not None else DEFAULT_WAVELENGTH
    return 0.5 * HBAR * (TWO_PI * C_LIGHT / lam) * p.kappa * (p.g / p.g0) ** 2


def qubit_force(p: PhysicalParams) -> float:
    """Magnitude of the state-dependent force hbar chi / (sqrt(2) x_zpf), N."""
    return HBAR * p.chi / (math.sqrt(2) * _x_zpf(p))


def force_sensitivity(p: PhysicalParams) -> float:
    """Shot-noise-limited force sensitivity S_F in N/sqrt(Hz).

    Uses S_F^2 = kappa x_zpf^2 / (8 g^2 chi_m^2) with the quasi-static
    susceptibility chi_m = 1/(m_eff omega_m^2) and kappa in rad/s.  With this
    convention S_F = F sqrt(tau_meas) holds exactly; tabulated literature
    values may differ by O(1) factors from 2pi conventions.
    """
    x = _x_zpf(p)
    m = p.m_eff if p.m_eff is not None else HBAR / (2 * p.omega_m * x**2)
    chi_m = 1 / (m * p.omega_m**2)
    return math.sqrt(p.kappa * x**2 / (8 * p.g**2 * chi_m**2))


def _x_zpf(p: PhysicalParams) -> float:
    if p.x_zpf is not None:
        if p.m_eff is not None:
            # keep F and S_F mutually consistent: both use the mass-derived value
            return zero_point_fluctuation(p.m_eff, p.omega_m)
        return p.x_zpf
    if p.m_eff is not None:
        return zero_point_fluctuation(p.m_eff, p.omega_m)
    raise ConfigurationError("need m_eff or x_zpf")


def chi_parallel_plate(E_C, C_g, V_g, d, x_zpf):
    """Qubit-mechanical coupling of a transmon with a compliant gate capacitor.

    ``E_C`` is the charging energy as an angular frequency; the result has the
    same unit.  ``C_g`` in F, ``V_g`` in V, ``d`` and ``x_zpf`` in m.
    """
    return 2 * E_C * (C_g * V_g / E_CHARGE) * (x_zpf / d)


def chi_flux(B0, I_p, l_eff, x_zpf):
    """Lorentz-force coupling of a flux qubit, as an angular frequency (rad/s).

    ``B0 I_p l_eff x_zpf`` is an energy; it is divided by hbar.
    """
    return B0 * I_p * l_eff * x_zpf / HBAR


# --- presets -------------------------------------------------------------

_UNIT_SCALE = {
    "1": 1.0, "Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9,
    "pg": 1e-15, "kg": 1.0, "uW": 1e-6, "W": 1.0,
    "aN/rtHz": 1e-18, "am/rtHz": 1e-18, "fm": 1e-15, "nm": 1e-9, "m": 1.0,
    "us": 1e-6, "ms": 1e-3, "s": 1.0,
}

_EXPECTED_DIMENSION = {
    "chi/2pi": "freq", "omega_m/2pi": "freq", "gamma/2pi": "freq", "kappa/2pi": "freq",
    "g0/2pi": "freq", "g/2pi": "freq", "Gamma_meas/2pi": "freq",
    "m_eff": "mass", "Q_m": "1", "n_bar": "1", "Q_opt": "1", "C": "1",
    "P": "power", "S_F": "force", "S_x": "length", "x_zpf": "length", "lambda": "length",
    "T1": "time", "T2": "time",
}

_DIMENSION_UNITS = {
    "freq": {"Hz", "kHz", "MHz", "GHz"}, "mass": {"pg", "kg"}, "1": {"1"},
    "power": {"uW", "W"}, "force": {"aN/rtHz"}, "length": {"am/rtHz", "fm", "nm", "m"},
    "time": {"us", "ms", "s"},
}


@dataclass(frozen=True)
class Preset:
    """One column of the parameter table, in SI units (frequencies in Hz)."""

    name: str
    table: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    qubit: dict = field(default_factory=dict)

    def physical(self, **overrides) -> PhysicalParams:
        t, e, q = self.table, self.extra, self.qubit
        kw = dict(
            chi=t["chi/2pi"], omega_m=t["omega_m/2pi"], gamma=t["gamma/2pi"],
            n_bar=t["n_bar"], g=t["g/2pi"], kappa=t["kappa/2pi"], g0=t.get("g0/2pi"),
            T1=q["T1"], T2=q["T2"], m_eff=t.get("m_eff"),
            x_zpf=e.get("x_zpf"), lambda_opt=e.get("lambda", DEFAULT_WAVELENGTH),
        )
        p = PhysicalParams.from_hz(**kw)
        return p.replace(**overrides) if overrides else p


def load_presets(path=None) -> dict[str, Preset]:
    """Load and unit-check the preset catalogue (defaults to the shipped file)."""
    if path is None:
        text = resources.files("optoent").joinpath("data/presets.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    doc = json.loads(text)
    units = doc.get("units", {})
    for key, unit in units.items():
        dim = _EXPECTED_DIMENSION.get(key)
        if dim is None:
            raise ConfigurationError(f"unknown preset field {key!r}")
        if unit not in _DIMENSION_UNITS[dim]:
            raise ConfigurationError(f"field {key!r} has unit {unit!r}, expected a {dim} unit")
    out = {}
    for name, rec in doc["presets"].items():
        blocks = {}
        for block in ("table", "extra", "qubit"):
            vals = {}
            for key, v in rec.get(block, {}).items():
                if key not in units:
                    raise ConfigurationError(f"preset {name!r}: field {key!r} has no declared unit")
                vals[key] = float(v) * _UNIT_SCALE[units[key]]
            blocks[block] = vals
        missing = {"chi/2pi", "omega_m/2pi", "gamma/2pi", "n_bar", "g/2pi", "kappa/2pi"} - blocks["table"].keys()
        if missing:
            raise ConfigurationError(f"preset {name!r} lacks {sorted(missing)}")
        out[name] = Preset(name=name, **blocks)
    return out


def get_preset(name: str) -> Preset:
    presets = load_presets()
    try:
        return presets[name]
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; available: {sorted(presets)}") from None
