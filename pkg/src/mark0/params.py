"""Model parameters for the Mark-0 economy.

All rates held by :class:`ModelParams` are *per simulation step*. Human-facing
config files and output tables use %/year; see :mod:`mark0.measure` for the
linear conversion.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_COLLAPSE_GUARD = 1e150


class ConfigError(ValueError):
    """Raised for invalid or incomplete model configuration."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True, kw_only=True)
class ModelParams:
    # varied parameters, no defaults
    ratio_R: float
    tau_R: float
    tau_T: float
    phi_pi: float
    pi_star: float
    rho_star: float

    n_firms: int = 10000
    c0: float = 0.5
    beta: float = 2.0
    gamma: float = 0.1
    eta0_minus: float = 0.2
    delta: float = 0.02
    theta: float = 3.0
    phi_revival: float = 0.1
    f_share: float = 0.5
    alpha_c: float = 4.0
    alpha_gamma: float = 50.0
    gamma0: float = 0.0
    omega: float = 0.2
    g_index: float = 1.0
    T: int = 10000
    T_eq: int = 5000
    seed: int = 0
    steps_per_year: int = 2
    zlb_enabled: bool = False
    collapse_guard: float = DEFAULT_COLLAPSE_GUARD

    # set when the inactive-CB normalization rewrote tau_T / pi_star
    normalized: bool = field(default=False, compare=False, repr=False)

    def __post_init__(self):
        self._validate()
        if self.phi_pi == 0 and (self.tau_T != 0 or self.pi_star != 0):
            log.warning(
                "phi_pi == 0: forcing tau_T=0 and pi_star=0 (was tau_T=%r, pi_star=%r)",
                self.tau_T,
                self.pi_star,
            )
            object.__setattr__(self, "tau_T", 0.0)
            object.__setattr__(self, "pi_star", 0.0)
            object.__setattr__(self, "normalized", True)

    @property
    def eta0_plus(self) -> float:
        return self.ratio_R * self.eta0_minus

    def replace(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes)

    def _validate(self):
        def check(key, ok, msg):
            if not ok:
                raise ConfigError(key, f"{msg} (got {getattr(self, key)!r})")

        for name in ("n_firms", "T", "T_eq", "seed", "steps_per_year"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise ConfigError(name, f"must be an integer (got {value!r})")
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, float) and not np.isfinite(value):
                raise ConfigError(f.name, "must be finite")

        check("n_firms", self.n_firms >= 1, "must be positive")
        for name in ("c0", "eta0_minus", "delta", "phi_revival", "f_share", "g_index"):
            check(name, 0.0 <= getattr(self, name) <= 1.0, "must lie in [0, 1]")
        for name in ("beta", "gamma", "ratio_R", "alpha_c", "alpha_gamma", "gamma0",
                     "tau_R", "tau_T", "phi_pi"):
            check(name, getattr(self, name) >= 0.0, "must be >= 0")
        check("theta", self.theta > 0.0, "must be > 0")
        check("omega", 0.0 < self.omega <= 1.0, "must lie in (0, 1]")
        check("T", self.T >= 1, "must be positive")
        check("T_eq", 0 <= self.T_eq < self.T, "must satisfy 0 <= T_eq < T")
        check("seed", 0 <= self.seed < 2**64, "must be a 64-bit unsigned integer")
        check("steps_per_year", self.steps_per_year >= 1, "must be positive")
        check("collapse_guard", self.collapse_guard > 1.0, "must be > 1")


# Numeric view of ModelParams consumed by the jitted kernels.
PARAMS_DTYPE = np.dtype(
    [
        ("n_firms", "f8"),
        ("c0", "f8"),
        ("beta", "f8"),
        ("gamma", "f8"),
        ("eta0_plus", "f8"),
        ("eta0_minus", "f8"),
        ("delta", "f8"),
        ("theta", "f8"),
        ("phi_revival", "f8"),
        ("f_share", "f8"),
        ("alpha_c", "f8"),
        ("alpha_gamma", "f8"),
        ("gamma0", "f8"),
        ("omega", "f8"),
        ("g_index", "f8"),
        ("tau_R", "f8"),
        ("tau_T", "f8"),
        ("phi_pi", "f8"),
        ("pi_star", "f8"),
        ("rho_star", "f8"),
        ("zlb_enabled", "f8"),
        ("collapse_guard", "f8"),
    ]
)


def params_record(params: ModelParams) -> np.ndarray:
    rec = np.zeros(1, dtype=PARAMS_DTYPE)
    for name in PARAMS_DTYPE.names:
        rec[0][name] = float(getattr(params, name))
    return rec
