"""Run configuration: defaults, key=value files, command-line overrides."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .errors import ConfigurationError, ParseError
from .features import DESCRIPTOR_KINDS
from .metrics import LossWeights
from .refinement import RefinementConfig

MODES = ("temporal", "single_frame")


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs beyond its input/output locations.

    The scalar fields are settable from a config file or ``--set``
    overrides under the same names; paths travel as CLI arguments.
    """

    mode: str = "temporal"
    theta: float = 0.3
    eta: float = 0.5
    gamma: float = 0.9
    lambda_dc: float = 0.1
    lambda_gdp: float = 1.2
    iters: int = 5
    disparities: int = 64
    descriptor: str = "zncc_patch"
    radius: int = 4
    state_channels: int = 16
    lookup_radius: int = 4
    beta: float = 14.0
    step_clamp: float = 2.0
    gradient_clamp: float = 8.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}")
        if self.descriptor not in DESCRIPTOR_KINDS:
            raise ConfigurationError(
                f"descriptor must be one of {DESCRIPTOR_KINDS}")
        if not 0.0 <= self.theta <= 2.0:
            raise ConfigurationError("theta must lie in [0, 2]")
        if self.iters < 0:
            raise ConfigurationError("iters must be >= 0")
        if self.disparities < 4:
            raise ConfigurationError("disparities must be >= 4")
        if self.radius < 1 or self.lookup_radius < 1:
            raise ConfigurationError("radii must be >= 1")
        if self.state_channels < 1:
            raise ConfigurationError("state_channels must be >= 1")
        # the loss/refinement constructors own the remaining bounds
        self.loss_weights()
        self.refinement()

    def loss_weights(self) -> LossWeights:
        return LossWeights(eta=self.eta, gamma=self.gamma,
                           lambda_dc=self.lambda_dc,
                           lambda_gdp=self.lambda_gdp)

    def refinement(self) -> RefinementConfig:
        return RefinementConfig(num_iterations=self.iters,
                                lookup_radius=self.lookup_radius,
                                beta=self.beta, step_clamp=self.step_clamp,
                                gradient_clamp=self.gradient_clamp)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigurationError(f"bad value {raw!r} for {key}") from None
    return raw


def _reject_unknown(key: str):
    accepted = ", ".join(sorted(_FIELD_TYPES))
    raise ConfigurationError(f"unknown key {key!r}; accepted: {accepted}")


def apply_overrides(cfg: RunConfig, assignments) -> RunConfig:
    """Apply ``key=value`` strings (CLI --set) on top of a config."""
    updates = {}
    for text in assignments:
        key, sep, raw = text.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigurationError(f"override {text!r} is not key=value")
        if key not in _FIELD_TYPES:
            _reject_unknown(key)
        updates[key] = _coerce(key, raw)
    return replace(cfg, **updates)


def read_config_file(path, base: RunConfig | None = None) -> RunConfig:
    """Parse a plain-text config: one ``key = value`` per line, '#' comments."""
    cfg = base or RunConfig()
    updates = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            key, sep, raw = body.partition("=")
            key = key.strip()
            if not sep or not key:
                raise ParseError(path, "expected key = value", line=line_no)
            if key not in _FIELD_TYPES:
                accepted = ", ".join(sorted(_FIELD_TYPES))
                raise ParseError(path, f"unknown key {key!r}; accepted: "
                                       f"{accepted}", line=line_no)
            try:
                updates[key] = _coerce(key, raw)
            except ConfigurationError as exc:
                raise ParseError(path, str(exc), line=line_no) from None
    return replace(cfg, **updates)


def config_text(cfg: RunConfig) -> str:
    """Serialize a config in the same format read_config_file parses."""
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in fields(RunConfig)]
    return "\n".join(lines) + "\n"
