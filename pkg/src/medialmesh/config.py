"""Pipeline configuration: dotted ``section.key`` settings with typed defaults.

Files use one ``section.key = value`` per line; ``#`` starts a comment.
Command-line flags use the same names (``--mat.lambda 1``) and override the
file, which overrides the defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .losses import LossConfig
from .mat import MatConfig
from .mesher import RefineConfig


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _weights(text) -> tuple:
    if isinstance(text, (tuple, list)):
        return tuple(float(w) for w in text)
    return tuple(float(w) for w in str(text).split(","))


# dotted key -> (parser, default, help)
SETTINGS = {
    "mat.lambda": (float, 0.0, "prune candidate spheres with radius <= this (mm)"),
    "mat.sigmoid_k": (float, 50.0, "sigmoid scale of the relaxed ridge mask"),
    "skeleton.simplify": (int, 8, "target vertex count for edge-collapse simplification (0 = off)"),
    "skeleton.drop_redundant": (_bool, True, "drop spheres whose power cell is empty"),
    "fit.enabled": (_bool, True, "fit skeleton centers and radii to the mask boundary"),
    "fit.evaluations": (int, 40, "maximum least-squares evaluations"),
    "fit.center_damping": (float, 0.05, "penalty weight on center displacement"),
    "fit.quadrature_order": (int, 8, "quadrature order used while fitting"),
    "field.level": (float, 0.5, "surface level C"),
    "field.quadrature_order": (int, 16, "Gauss-Legendre order per axis"),
    "field.cutoff": (float, 1e-6, "primitive culling threshold"),
    "mesh.resolution": (float, 0.5, "sampling step in mm (0 = min radius / 4)"),
    "mesh.inflate": (float, 3.0, "bbox padding in multiples of the largest radius"),
    "refine.step_k": (float, 0.5, "maximum refinement step (mm)"),
    "refine.omega": (float, 1e-3, "refinement tolerance on |f - C|"),
    "refine.max_iters": (int, 100, "refinement iteration cap"),
    "refine.frozen_normal": (_bool, False, "compute the normal once before iterating"),
    "loss.sigma": (float, 1.0, "Gaussian sigma of the stochastic distance loss"),
    "loss.sigmoid_k": (float, 50.0, "sigmoid scale inside the MAT loss"),
    "loss.weights": (_weights, (1.0, 1.0, 1.0, 1.0), "weights of dice,stochastic,laplacian,mat"),
    "report.figures": (_bool, True, "render PNG figures next to the report"),
}


@dataclass
class PipelineConfig:
    values: dict = field(default_factory=lambda: {k: v[1] for k, v in SETTINGS.items()})

    def __post_init__(self):
        self.validate()

    def __getitem__(self, key):
        return self.values[key]

    def set(self, key: str, raw) -> None:
        if key not in SETTINGS:
            raise ConfigError(f"unknown setting {key!r}")
        parse = SETTINGS[key][0]
        try:
            self.values[key] = parse(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None

    def update(self, pairs: dict) -> "PipelineConfig":
        for k, v in pairs.items():
            self.set(k, v)
        self.validate()
        return self

    def validate(self) -> None:
        try:
            self.mat()
            self.refine()
            self.loss()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        v = self.values
        if v["skeleton.simplify"] < 0:
            raise ConfigError("skeleton.simplify must be >= 0")
        if not 0.0 < v["field.level"] < 1.0:
            raise ConfigError("field.level must lie in (0, 1)")
        if v["field.quadrature_order"] < 2 or v["fit.quadrature_order"] < 2:
            raise ConfigError("quadrature orders must be >= 2")
        if v["field.cutoff"] < 0 or v["mesh.resolution"] < 0 or v["mesh.inflate"] <= 0:
            raise ConfigError("field.cutoff and mesh.resolution must be >= 0, mesh.inflate > 0")
        if v["fit.evaluations"] < 1 or v["fit.center_damping"] < 0:
            raise ConfigError("fit.evaluations must be >= 1 and fit.center_damping >= 0")

    def mat(self) -> MatConfig:
        return MatConfig(sigmoid_k=self["mat.sigmoid_k"], lambda_prune=self["mat.lambda"])

    def refine(self) -> RefineConfig:
        return RefineConfig(step_k=self["refine.step_k"], omega=self["refine.omega"],
                            max_iters=self["refine.max_iters"], frozen_normal=self["refine.frozen_normal"])

    def loss(self) -> LossConfig:
        return LossConfig(gaussian_sigma=self["loss.sigma"], sigmoid_k=self["loss.sigmoid_k"],
                          weights=self["loss.weights"])

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in sorted(self.values.items())}

    def dumps(self) -> str:
        lines = []
        for k, v in self.to_dict().items():
            if isinstance(v, list):
                text = ",".join(repr(float(w)) for w in v)
            elif isinstance(v, bool):
                text = str(v).lower()
            else:
                text = repr(v)
            lines.append(f"{k} = {text}")
        return "\n".join(lines) + "\n"


def parse_config_text(text: str) -> dict:
    pairs = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SETTINGS:
            raise ConfigError(f"line {n}: unknown setting {key!r}")
        pairs[key] = value
    return pairs


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    cfg = PipelineConfig()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        cfg.update(parse_config_text(text))
    if overrides:
        cfg.update(overrides)
    return cfg
