"""Camera counts to temperature and back, with emissivity and window fitting.

The band-radiance model is the Sakuma-Hattori Planckian form
S(T) = C / (exp(c2 / (A*T_kelvin + B)) - 1), invertible in closed form.
The measurement equation adds reflected-ambient and window self-emission
terms so that counts below the non-object background are a detectable error
rather than a silent wrong temperature.
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

from .errors import BelowFloorError, IllConditionedError, ParameterError

C2_UM_K = 14388.0  # second radiation constant, um*K
KELVIN_OFFSET = 273.15


@dataclass(frozen=True)
class RadianceModel:
    """Band-radiance parameters. Defaults target a long-wave camera band."""

    a_um: float = 9.5
    b_um_k: float = 0.0
    c_counts: float = 60000.0

    def __post_init__(self):
        if self.a_um <= 0 or self.c_counts <= 0:
            raise ParameterError("model parameters A and C must be positive")

    def signal(self, t_c):
        """Blackbody band signal in counts at temperature t_c (degC)."""
        t_k = np.asarray(t_c, dtype=np.float64) + KELVIN_OFFSET
        if np.any(t_k <= 0):
            raise ParameterError("temperature at or below absolute zero")
        return self.c_counts / np.expm1(C2_UM_K / (self.a_um * t_k + self.b_um_k))

    def temperature(self, signal):
        """Inverse of :meth:`signal`; signal must be strictly positive."""
        s = np.asarray(signal, dtype=np.float64)
        if np.any(s <= 0):
            raise ParameterError("signal must be positive to invert")
        t_k = (C2_UM_K / np.log1p(self.c_counts / s) - self.b_um_k) / self.a_um
        return t_k - KELVIN_OFFSET


@dataclass(frozen=True)
class CalibrationProfile:
    emissivity_powder: float = 0.63
    emissivity_printed: float = 0.21
    window_transmission: float = 0.75
    reflected_temperature_c: float = 25.0
    model: RadianceModel = field(default_factory=RadianceModel)

    def __post_init__(self):
        for name in ("emissivity_powder", "emissivity_printed", "window_transmission"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise ParameterError(f"{name} must be in (0, 1], got {v}")


class SurfaceClass(IntEnum):
    POWDER = 0
    AS_PRINTED = 1
    UNITY = 2


def emissivity_of(cls: SurfaceClass, profile: CalibrationProfile) -> float:
    if cls == SurfaceClass.POWDER:
        return profile.emissivity_powder
    if cls == SurfaceClass.AS_PRINTED:
        return profile.emissivity_printed
    return 1.0


def _validate_eps(eps) -> None:
    e = np.asarray(eps, dtype=np.float64)
    if np.any(e <= 0.0) or np.any(e > 1.0):
        raise ParameterError(f"emissivity must be in (0, 1]")


def background_counts(eps, profile: CalibrationProfile):
    """Non-object term: reflected ambient through the window plus window glow."""
    tau = profile.window_transmission
    s_refl = profile.model.signal(profile.reflected_temperature_c)
    s_win = s_refl  # window assumed at the reflected/ambient temperature
    e = np.asarray(eps, dtype=np.float64)
    return tau * (1.0 - e) * s_refl + (1.0 - tau) * s_win

def forward_counts(t_obj_c, eps, profile: CalibrationProfile):
    """Counts seen by the camera for an object at t_obj_c with emissivity eps."""
    _validate_eps(eps)
    tau = profile.window_transmission
    e = np.asarray(eps, dtype=np.float64)
    s_obj = profile.model.signal(t_obj_c)
    out = tau * e * s_obj + background_counts(eps, profile)
    if np.isscalar(t_obj_c) and np.isscalar(eps):
        return float(out)
    return out


def invert_counts(counts: float, eps: float, profile: CalibrationProfile) -> float:
    """Unique object temperature with forward_counts(T) = counts.

    Raises BelowFloorError when counts do not exceed the background term,
    i.e. the object would be colder than its surroundings.
    """
    _validate_eps(eps)
    floor = float(background_counts(eps, profile))
    if counts <= floor:
        raise BelowFloorError(
            f"counts {counts:.3f} at or below background floor {floor:.3f}"
        )
    s_obj = (counts - floor) / (profile.window_transmission * eps)
    return float(profile.model.temperature(s_obj))


def invert_counts_array(counts, eps, profile: CalibrationProfile):
    """Vectorized inversion; returns (temperatures, valid). Below-floor pixels
    are NaN with valid=False instead of raising."""
    _validate_eps(eps)
    c = np.asarray(counts, dtype=np.float64)
    e = np.broadcast_to(np.asarray(eps, dtype=np.float64), c.shape)
    floor = background_counts(e, profile)
    valid = c > floor
    s_obj = np.where(valid, (c - floor) / (profile.window_transmission * e), 1.0)
    t = profile.model.temperature(s_obj)
    t = np.where(valid, t, np.nan)
    return t, valid


@dataclass
class TemperatureFrame:
    """Per-pixel temperatures in degC with a validity mask (False = below floor)."""

    values: np.ndarray
    valid: np.ndarray


def convert_frame(frame, class_map, profile: CalibrationProfile) -> TemperatureFrame:
    """Convert a counts frame using each pixel's surface-class emissivity.

    class_map is either a single SurfaceClass, an integer grid of
    SurfaceClass values, or a float grid of custom emissivities.
    """
    c = np.asarray(frame, dtype=np.float64)
    if isinstance(class_map, SurfaceClass):
        eps = np.full(c.shape, emissivity_of(class_map, profile))
    else:
        m = np.asarray(class_map)
        if m.shape != c.shape:
            raise ParameterError(
                f"class map shape {m.shape} does not match frame shape {c.shape}"
            )
        if np.issubdtype(m.dtype, np.floating):
            eps = m.astype(np.float64)
        else:
            eps = np.choose(
                m.astype(np.int64),
                [
                    profile.emissivity_powder,
                    profile.emissivity_printed,
                    1.0,
                ],
            )
    values, valid = invert_counts_array(c, eps, profile)
    return TemperatureFrame(values=values, valid=valid)


_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_min(f, lo: float, hi: float, tol: float = 1e-4) -> float:
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def _check_samples(temps, min_span: float = 100.0) -> None:
    t = np.asarray(temps, dtype=np.float64)
    if t.size < 2:
        raise ParameterError("need at least 2 calibration samples")
    if not np.isfinite(t).all():
        raise ParameterError("non-finite reference temperature in samples")
    if float(t.max() - t.min()) < 1e-9:
        raise IllConditionedError("all samples at one temperature; objective is flat")
    if float(t.max() - t.min()) < min_span:
        raise ParameterError(
            f"reference temperatures must span at least {min_span} degC"
        )


def fit_emissivity(
    samples, profile: CalibrationProfile, tol: float = 1e-4
) -> tuple[float, float]:
    """Fit the emissivity minimizing squared temperature error.

    samples: iterable of (counts, reference_temperature_c). Returns
    (emissivity, residual standard deviation in degC).
    """
    counts = np.asarray([s[0] for s in samples], dtype=np.float64)
    temps = np.asarray([s[1] for s in samples], dtype=np.float64)
    if not np.isfinite(counts).all():
        raise ParameterError("non-finite counts in samples")
    _check_samples(temps)

    def objective(eps: float) -> float:
        total = 0.0
        for c, t in zip(counts, temps):
            try:
                total += (invert_counts(float(c), eps, profile) - t) ** 2
            except BelowFloorError:
                total += 1e12
        return total

    eps = min(1.0, _golden_min(objective, 1e-3, 1.0, tol))
    resid = np.array(
        [invert_counts(float(c), eps, profile) - t for c, t in zip(counts, temps)]
    )
    return eps, float(np.std(resid, ddof=1))


def fit_window_transmission(
    paired, profile: CalibrationProfile, tol: float = 1e-4
) -> float:
    """Fit window transmission from with/without-glass count pairs.

    paired: iterable of (counts_with_glass, counts_without_glass,
    reference_temperature_c). Minimizes squared disagreement between the
    temperature inverted with the glass term and the glass-free inversion.
    """
    with_g = np.asarray([p[0] for p in paired], dtype=np.float64)
    without_g = np.asarray([p[1] for p in paired], dtype=np.float64)
    temps = np.asarray([p[2] for p in paired], dtype=np.float64)
    if not (np.isfinite(with_g).all() and np.isfinite(without_g).all()):
        raise ParameterError("non-finite counts in pairs")
    _check_samples(temps)

    eps = profile.emissivity_powder
    bare = replace(profile, window_transmission=1.0)
    t_bare = []
    for c in without_g:
        try:
            t_bare.append(invert_counts(float(c), eps, bare))
        except BelowFloorError:
            raise ParameterError("glass-free counts below background floor")

    def objective(tau: float) -> float:
        prof = replace(profile, window_transmission=tau)
        total = 0.0
        for c, t_ref in zip(with_g, t_bare):
            try:
                total += (invert_counts(float(c), eps, prof) - t_ref) ** 2
            except BelowFloorError:
                total += 1e12
        return total

    return min(1.0, _golden_min(objective, 0.05, 1.0, tol))


_PROFILE_SECTION = "profile"
_PROFILE_KEYS = (
    "emissivity_powder",
    "emissivity_printed",
    "window_transmission",
    "reflected_temperature_c",
    "model_a",
    "model_b",
    "model_c",
)


def profile_to_text(profile: CalibrationProfile) -> str:
    """Serialize to a UTF-8 key-value config section."""
    cp = configparser.ConfigParser()
    cp[_PROFILE_SECTION] = {
        "emissivity_powder": repr(profile.emissivity_powder),
        "emissivity_printed": repr(profile.emissivity_printed),
        "window_transmission": repr(profile.window_transmission),
        "reflected_temperature_c": repr(profile.reflected_temperature_c),
        "model_a": repr(profile.model.a_um),
        "model_b": repr(profile.model.b_um_k),
        "model_c": repr(profile.model.c_counts),
    }
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def profile_from_text(text: str) -> CalibrationProfile:
    cp = configparser.ConfigParser()
    cp.read_string(text)
    if not cp.has_section(_PROFILE_SECTION):
        raise ParameterError("missing [profile] section")
    sec = cp[_PROFILE_SECTION]
    defaults = CalibrationProfile()
    model = RadianceModel(
        a_um=sec.getfloat("model_a", defaults.model.a_um),
        b_um_k=sec.getfloat("model_b", defaults.model.b_um_k),
        c_counts=sec.getfloat("model_c", defaults.model.c_counts),
    )
    return CalibrationProfile(
        emissivity_powder=sec.getfloat("emissivity_powder", defaults.emissivity_powder),
        emissivity_printed=sec.getfloat(
            "emissivity_printed", defaults.emissivity_printed
        ),
        window_transmission=sec.getfloat(
            "window_transmission", defaults.window_transmission
        ),
        reflected_temperature_c=sec.getfloat(
            "reflected_temperature_c", defaults.reflected_temperature_c
        ),
        model=model,
    )
