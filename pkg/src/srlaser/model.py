"""Parameter types, unit handling and closed-form laser quantities.

Every rate stored on :class:`PhysicalParams` is an angular frequency in rad/s.
Configuration files and reports speak ordinary frequency (Hz); the conversion
happens once, in :func:`rate_from_config` and :meth:`PhysicalParams.from_hz`.

The linewidth formulas (:func:`linewidth_schawlow_townes` and friends) accept
angular rates like everything else in the package, evaluate their prefactors
with the corresponding ordinary-frequency rates (``rate / 2pi``) and return Hz.
Dimensionless ratios (group index, detuning bracket, cooperativity) do not
depend on that choice.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError, DegenerateRateError, ValidationError

TWO_PI = 2.0 * math.pi
SPEED_OF_LIGHT = 299_792_458.0  # m/s
PLANCK = 6.626_070_15e-34  # J s

RATE_FIELDS = ("gamma", "kappa", "g", "chi", "eta", "delta")


def hz_to_angular(value_hz: float) -> float:
    return TWO_PI * value_hz


def angular_to_hz(value_rad_s: float) -> float:
    return value_rad_s / TWO_PI


def _check_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValidationError(f"{name} must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class PhysicalParams:
    """Rate set defining one simulation instance.

    All rates are angular frequencies (rad/s). ``delta`` is the cavity-atom
    detuning ``omega_c - omega_a`` and may be negative; ``n_atoms`` is real
    valued so that ensembles of 1e11 ions need no special casing.
    """

    gamma: float
    kappa: float
    g: float
    chi: float
    eta: float
    delta: float = 0.0
    n_atoms: float = 1.0

    def __post_init__(self) -> None:
        for name in RATE_FIELDS + ("n_atoms",):
            object.__setattr__(self, name, _check_finite(name, getattr(self, name)))
        for name in ("gamma", "kappa", "g", "chi", "eta", "n_atoms"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0, got {getattr(self, name)!r}")

    @classmethod
    def from_hz(cls, *, gamma, kappa, g, chi, eta, delta=0.0, n_atoms=1.0) -> "PhysicalParams":
        """Build from ordinary-frequency rates in Hz (multiplied by 2pi)."""
        return cls(
            gamma=hz_to_angular(gamma),
            kappa=hz_to_angular(kappa),
            g=hz_to_angular(g),
            chi=hz_to_angular(chi),
            eta=hz_to_angular(eta),
            delta=hz_to_angular(delta),
            n_atoms=n_atoms,
        )

    def replace(self, **changes) -> "PhysicalParams":
        return replace(self, **changes)

    def scaled(self, factor: float) -> "PhysicalParams":
        """All rates multiplied by ``factor``; atom number unchanged."""
        return replace(self, **{k: getattr(self, k) * factor for k in RATE_FIELDS})

    @property
    def max_rate(self) -> float:
        return max(abs(getattr(self, k)) for k in RATE_FIELDS)

    def to_dict(self) -> dict[str, float]:
        return asdict(self)

    def to_hz_dict(self) -> dict[str, float]:
        out = {k: angular_to_hz(getattr(self, k)) for k in RATE_FIELDS}
        out["n_atoms"] = self.n_atoms
        return out


@dataclass(frozen=True)
class CavityGeometry:
    length: float  # m
    r1: float
    r2: float
    speed_of_light: float = SPEED_OF_LIGHT

    def __post_init__(self) -> None:
        if not (self.length > 0 and math.isfinite(self.length)):
            raise ValidationError(f"cavity length must be > 0, got {self.length!r}")
        for name in ("r1", "r2"):
            r = getattr(self, name)
            if not 0.0 < r <= 1.0:
                raise ValidationError(f"mirror reflectivity {name} must lie in (0, 1], got {r!r}")


@dataclass(frozen=True)
class MaterialParams:
    """Doped-crystal description used for the ion-count estimate.

    Densities are per cubic micrometre and the excitation volume is in cubic
    micrometres, so :func:`ion_number_estimate` returns a plain count. The
    optional fields are carried for reporting only.
    """

    host_ion_density: float  # ions / um^3
    doping_fraction: float
    gamma_h: float  # Hz
    gamma_inh: float  # Hz
    excitation_volume: float  # um^3
    t1: float | None = None  # s
    t2: float | None = None  # s
    dipole_moment: float | None = None  # C m
    wavelength: float | None = None  # m
    finesse: float | None = None
    cross_section: float | None = None  # m^2
    beam_area: float | None = None  # m^2

    def __post_init__(self) -> None:
        for name, value in asdict(self).items():
            if value is None:
                continue
            if not math.isfinite(value) or value < 0:
                raise ValidationError(f"{name} must be finite and >= 0, got {value!r}")
        if self.gamma_inh <= 0:
            raise ValidationError("gamma_inh must be > 0")
        if self.gamma_h > self.gamma_inh:
            raise ValidationError(
                f"homogeneous linewidth {self.gamma_h} exceeds inhomogeneous {self.gamma_inh}"
            )


@dataclass(frozen=True)
class DerivedQuantities:
    c1: float
    n_c: float
    m_c: float
    n_crit: float
    group_index: float
    pulling: float
    n_c1_gamma: float  # rad/s

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


def cold_cavity_loss(geom: CavityGeometry) -> float:
    """Cavity energy loss rate -(c/2L) ln(R1 R2) in s^-1."""
    loss = -(geom.speed_of_light / (2.0 * geom.length)) * math.log(geom.r1 * geom.r2)
    return loss + 0.0  # normalise -0.0 for lossless mirrors


def group_index(gamma: float, kappa: float) -> float:
    if gamma == 0:
        raise DegenerateRateError("group index undefined for gamma = 0")
    return (2.0 * gamma + kappa) / (2.0 * gamma)


def pulling_coefficient(gamma: float, kappa: float) -> float:
    return 1.0 / group_index(gamma, kappa)


def cooperativity(g: float, gamma: float, kappa: float) -> float:
    if gamma == 0 or kappa == 0:
        raise DegenerateRateError(
            f"single-atom cooperativity needs gamma > 0 and kappa > 0 (gamma={gamma}, kappa={kappa})"
        )
    return g * g / (gamma * kappa)


def critical_atom_number(chi: float, c1: float, gamma: float) -> float:
    """Superradiance threshold 2 chi / (C1 gamma).

    Returns 0 when ``chi == 0`` (no dephasing to overcome) and ``inf`` when
    ``C1 gamma == 0``.
    """
    if chi == 0:
        return 0.0
    denom = c1 * gamma
    if denom == 0:
        return math.inf
    return 2.0 * chi / denom


def derive(params: PhysicalParams) -> DerivedQuantities:
    p = params
    c1 = cooperativity(p.g, p.gamma, p.kappa)
    g2 = p.g * p.g
    n_c = p.gamma * p.kappa / g2 if g2 > 0 else math.inf
    m_c = p.gamma * p.gamma / g2 if g2 > 0 else math.inf
    n_g = group_index(p.gamma, p.kappa)
    return DerivedQuantities(
        c1=c1,
        n_c=n_c,
        m_c=m_c,
        n_crit=critical_atom_number(p.chi, c1, p.gamma),
        group_index=n_g,
        pulling=1.0 / n_g,
        n_c1_gamma=p.n_atoms * c1 * p.gamma,
    )


# Linewidth formulas. Inputs: frequencies nu in Hz, rates in rad/s, power in W.


def linewidth_schawlow_townes(nu: float, kappa: float, p_out: float) -> float:
    """Good-cavity quantum-limited FWHM, h nu kappa^2 / (4 pi P_out), in Hz."""
    if not p_out > 0:
        raise ValidationError(f"output power must be > 0, got {p_out!r}")
    kappa_hz = angular_to_hz(kappa)
    return PLANCK * nu * kappa_hz**2 / (4.0 * math.pi * p_out)


def spontaneous_emission_factor(pop_excited: float, pop_ground: float) -> float:
    if not pop_excited > pop_ground:
        raise ValidationError(
            f"no population inversion: N_e={pop_excited!r} <= N_g={pop_ground!r}"
        )
    return pop_excited / (pop_excited - pop_ground)


def linewidth_bad_cavity_haken(
    nu: float,
    nu0: float,
    kappa: float,
    gamma: float,
    p_out: float,
    pop_excited: float,
    pop_ground: float,
) -> float:
    """Homogeneously broadened single-mode linewidth with dressed loss kappa/n_g.

    ``p_out`` is the power leaving the cavity, as in the good-cavity formula.
    The detuning bracket compares the angular offset ``2 pi (nu - nu0)`` with
    the angular rate ``gamma + kappa/2``.
    """
    if not p_out > 0:
        raise ValidationError(f"output power must be > 0, got {p_out!r}")
    n_sp = spontaneous_emission_factor(pop_excited, pop_ground)
    n_g = group_index(gamma, kappa)
    bracket = 1.0 + (TWO_PI * (nu - nu0) / (gamma + 0.5 * kappa)) ** 2
    dressed_hz = angular_to_hz(kappa) / n_g
    return PLANCK * nu * dressed_hz**2 / (4.0 * math.pi * p_out) * n_sp * bracket


def linewidth_bad_cavity_photon(gamma: float, kappa: float, m_c: float) -> float:
    """Bad-cavity FWHM gamma^2 / (pi kappa M_c) in Hz."""
    if kappa <= 0 or m_c <= 0:
        raise DegenerateRateError("bad-cavity photon formula needs kappa > 0 and M_c > 0")
    gamma_hz = angular_to_hz(gamma)
    return gamma_hz**2 / (math.pi * angular_to_hz(kappa) * m_c)


def linewidth_cooperativity(c1: float, gamma: float) -> float:
    """Bad-cavity FWHM C1 gamma / pi in Hz."""
    return c1 * angular_to_hz(gamma) / math.pi


def ion_number_estimate(mat: MaterialParams) -> float:
    return (
        mat.host_ion_density
        * mat.doping_fraction
        * (mat.gamma_h / mat.gamma_inh)
        * mat.excitation_volume
    )


def cylinder_volume_um3(radius_m: float, length_m: float) -> float:
    """Volume of a beam cylinder in um^3, from metres."""
    return math.pi * (radius_m * 1e6) ** 2 * (length_m * 1e6)


def cooperativity_from_cavity(finesse: float, cross_section: float, beam_area: float) -> float:
    if beam_area <= 0:
        raise ValidationError("beam area must be > 0")
    return finesse * cross_section / beam_area


# --- configuration boundary -------------------------------------------------


def rate_from_config(section: Mapping[str, Any], name: str, default: float | None = None) -> float:
    """Read ``name`` (Hz) or ``name_angular`` (rad/s) from a config table.

    Giving both spellings is an error; the returned value is angular.
    """
    has_hz = name in section
    has_ang = f"{name}_angular" in section
    if has_hz and has_ang:
        raise ConfigError(f"give either '{name}' (Hz) or '{name}_angular' (rad/s), not both")
    if has_ang:
        return float(section[f"{name}_angular"])
    if has_hz:
        return hz_to_angular(float(section[name]))
    if default is None:
        raise ConfigError(f"missing rate '{name}'")
    return default


PARAM_KEYS = {
    *(k for k in RATE_FIELDS),
    *(f"{k}_angular" for k in RATE_FIELDS),
    "n_atoms",
}


def params_from_config(section: Mapping[str, Any], cavity: Mapping[str, Any] | None = None) -> PhysicalParams:
    unknown = set(section) - PARAM_KEYS
    if unknown:
        raise ConfigError(f"unknown parameter keys: {sorted(unknown)}")
    rates = {}
    for name in RATE_FIELDS:
        default = 0.0 if name == "delta" else None
        if name == "kappa" and cavity is not None and "kappa" not in section and "kappa_angular" not in section:
            rates[name] = cold_cavity_loss(geometry_from_config(cavity))
            continue
        rates[name] = rate_from_config(section, name, default)
    if "n_atoms" not in section:
        raise ConfigError("missing 'n_atoms'")
    return PhysicalParams(n_atoms=float(section["n_atoms"]), **rates)


def geometry_from_config(section: Mapping[str, Any]) -> CavityGeometry:
    allowed = {"length", "r1", "r2"}
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown cavity keys: {sorted(unknown)}")
    try:
        return CavityGeometry(float(section["length"]), float(section["r1"]), float(section["r2"]))
    except KeyError as exc:
        raise ConfigError(f"cavity table missing {exc}") from None


MATERIAL_KEYS = {f.name for f in MaterialParams.__dataclass_fields__.values()}


def material_from_config(section: Mapping[str, Any]) -> MaterialParams:
    data = dict(section)
    if "excitation_volume" not in data and {"beam_radius", "crystal_length"} <= data.keys():
        data["excitation_volume"] = cylinder_volume_um3(data.pop("beam_radius"), data.pop("crystal_length"))
    unknown = set(data) - MATERIAL_KEYS
    if unknown:
        raise ConfigError(f"unknown material keys: {sorted(unknown)}")
    try:
        return MaterialParams(**{k: float(v) for k, v in data.items()})
    except TypeError as exc:
        raise ConfigError(f"material table: {exc}") from None


# --- presets ------------------------------------------------------------------


def preset_names() -> list[str]:
    root = resources.files("srlaser") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def load_preset(name: str) -> dict[str, Any]:
    """Raw TOML tables of a shipped preset (``fig2``, ``er_liyf4``, ...)."""
    path = resources.files("srlaser") / "presets" / f"{name}.toml"
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return tomllib.loads(path.read_text(encoding="utf-8"))


def load_toml(path: str | Path) -> dict[str, Any]:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from None
