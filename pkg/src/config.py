"""
GSCodec - Encoder Configuration
===============================
Nested dataclasses describing one encode run, named presets (plus ablation
variants) and loading of `key = value` override files.

Override files use TOML syntax with dotted keys:

    prune.opacity = 0.01
    routes.opacity_logits.codec = "ans"
    plas.init = "morton"
    gof_len = 30
"""

import copy
import dataclasses
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

from .errors import ConfigError

PNG_PLANE = "png-plane"
ANS = "ans"
VQ_ANS = "vq+ans"
RAW_CONSTANT = "raw-constant"
CODECS = (PNG_PLANE, ANS, VQ_ANS)

FACTORIZED = "factorized"
GAUSSIAN = "gaussian"
ENTROPY_MODELS = (FACTORIZED, GAUSSIAN)

STATIC_PRESET = "static-gscodec"
DYNAMIC_PRESET = "dynamic-gscodec"
ABLATIONS = ("", "-noprune", "-6bit", "-imgonly")
PRESET_NAMES = tuple(base + suffix for base in (STATIC_PRESET, DYNAMIC_PRESET) for suffix in ABLATIONS)

# Short names accepted on the command line and in override files
ATTRIBUTE_ALIASES = {
    "mean": "means",
    "quat": "rotations",
    "rotation": "rotations",
    "scale": "log_scales",
    "scales": "log_scales",
    "opacity": "opacity_logits",
    "sh_0": "sh0",
    "sh_n": "shN",
    "shn": "shN",
}

VQ_ATTRIBUTES = ("shN", "features")


@dataclass
class PruneSettings:
    opacity: Optional[float] = 0.005
    scale: Optional[Tuple[float, float]] = None
    outliers: Optional[Tuple[int, float]] = None
    sh_mask: Optional[float] = None
    static_mask: Optional[float] = None
    static_samples: int = 16


@dataclass
class PlasSettings:
    channels: Tuple[str, ...] = ("means", "sh0", "opacity_logits")
    weights: Dict[str, float] = field(default_factory=dict)
    proposals_per_point: int = 16
    init: str = "random"


@dataclass
class AttributeRoute:
    """How one attribute is coded: codec, bit width and entropy model."""

    codec: str = PNG_PLANE
    bits: int = 8
    model: str = FACTORIZED
    transform: str = "identity"
    clip_pct: float = 0.0


@dataclass
class VQSettings:
    size: int = 4096
    iters: int = 20


@dataclass
class EntropySettings:
    alpha: float = 1.0
    # None -> bounding-box diagonal / 16
    voxel_size: Optional[float] = None


def _static_routes() -> Dict[str, AttributeRoute]:
    return {
        "means": AttributeRoute(PNG_PLANE, 16),
        "rotations": AttributeRoute(PNG_PLANE, 8),
        "log_scales": AttributeRoute(PNG_PLANE, 8),
        "opacity_logits": AttributeRoute(PNG_PLANE, 8),
        "sh0": AttributeRoute(PNG_PLANE, 8),
        "shN": AttributeRoute(VQ_ANS, 8),
        "features": AttributeRoute(PNG_PLANE, 8),
    }


def _dynamic_routes() -> Dict[str, AttributeRoute]:
    routes = _static_routes()
    routes.update({
        "pos_motion": AttributeRoute(PNG_PLANE, 12),
        "rot_motion": AttributeRoute(PNG_PLANE, 10),
        "time_center": AttributeRoute(PNG_PLANE, 10),
        "top_center": AttributeRoute(PNG_PLANE, 10),
        "top_scale": AttributeRoute(PNG_PLANE, 10, transform="log"),
    })
    return routes


@dataclass
class EncodeConfig:
    """
    Everything that controls an encode.

    Attributes without a route entry fall back to an 8-bit PNG plane.
    """

    preset: str = STATIC_PRESET
    prune: PruneSettings = field(default_factory=PruneSettings)
    plas: PlasSettings = field(default_factory=PlasSettings)
    routes: Dict[str, AttributeRoute] = field(default_factory=_static_routes)
    vq: VQSettings = field(default_factory=VQSettings)
    entropy: EntropySettings = field(default_factory=EntropySettings)
    gof_len: int = 50
    frame_count: Optional[int] = None
    fps: float = 30.0
    seed: int = 0

    def route(self, attribute: str) -> AttributeRoute:
        return self.routes.get(attribute, AttributeRoute())

    def copy(self) -> "EncodeConfig":
        return copy.deepcopy(self)

    def validate(self) -> "EncodeConfig":
        """Check every field; returns self for chaining."""
        for name, route in self.routes.items():
            if route.codec not in CODECS:
                raise ConfigError(f"route '{name}': unknown codec '{route.codec}'")
            if not 5 <= route.bits <= 16:
                raise ConfigError(f"route '{name}': bits must be in 5..16, got {route.bits}")
            if route.model not in ENTROPY_MODELS:
                raise ConfigError(f"route '{name}': unknown entropy model '{route.model}'")
            if route.codec == VQ_ANS and name not in VQ_ATTRIBUTES:
                raise ConfigError(f"route '{name}': vector quantization applies to {VQ_ATTRIBUTES} only")
            if name == "means" and route.codec == ANS and route.model == GAUSSIAN:
                raise ConfigError("means provide the spatial context and cannot use the gaussian model")
            if not 0.0 <= route.clip_pct < 50.0:
                raise ConfigError(f"route '{name}': clip_pct must be in [0, 50)")
        if self.gof_len < 1:
            raise ConfigError(f"gof_len must be >= 1, got {self.gof_len}")
        if self.vq.size < 1 or self.vq.iters < 0:
            raise ConfigError("vq.size must be >= 1 and vq.iters >= 0")
        if self.plas.init not in ("random", "morton"):
            raise ConfigError(f"plas.init must be 'random' or 'morton', got '{self.plas.init}'")
        if self.plas.proposals_per_point < 0:
            raise ConfigError("plas.proposals_per_point must be >= 0")
        if not self.entropy.alpha > 0:
            raise ConfigError("entropy.alpha must be > 0")
        if self.fps <= 0:
            raise ConfigError("fps must be > 0")
        return self


def canonical_attribute(name: str) -> str:
    return ATTRIBUTE_ALIASES.get(name, ATTRIBUTE_ALIASES.get(name.lower(), name))


def preset(name: str) -> EncodeConfig:
    """
    Build a named preset.

    Ablation suffixes:
        -noprune  pruning disabled
        -6bit     every 8-bit route lowered to 6 bits
        -imgonly  every entropy-coded route switched to PNG planes
    """
    for base in (STATIC_PRESET, DYNAMIC_PRESET):
        if name.startswith(base) and name[len(base):] in ABLATIONS:
            suffix = name[len(base):]
            break
    else:
        raise ConfigError(f"unknown preset '{name}' (choose from {', '.join(PRESET_NAMES)})")

    config = EncodeConfig(preset=name)
    if base == DYNAMIC_PRESET:
        config.routes = _dynamic_routes()
        config.gof_len = 50

    if suffix == "-noprune":
        config.prune = PruneSettings(opacity=None)
    elif suffix == "-6bit":
        for route in config.routes.values():
            if route.bits == 8:
                route.bits = 6
    elif suffix == "-imgonly":
        for route in config.routes.values():
            if route.codec != PNG_PLANE:
                route.codec = PNG_PLANE
    return config


# ---------------------------------------------------------------------------
# Overrides
# ---------------------------------------------------------------------------

def _coerce(current: Any, value: Any, key: str) -> Any:
    if isinstance(current, tuple) or (current is None and isinstance(value, list)):
        return tuple(value) if isinstance(value, (list, tuple)) else (value,)
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"'{key}' expects true/false")
        return value
    if isinstance(current, int) and not isinstance(value, bool) and isinstance(value, int):
        return value
    if isinstance(current, float) and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(current, str) and isinstance(value, str):
        return value
    if current is None:
        return value
    raise ConfigError(f"'{key}' expects {type(current).__name__}, got {value!r}")


def _apply(target: Any, values: Dict[str, Any], prefix: str = ""):
    for key, value in values.items():
        dotted = prefix + key
        if isinstance(target, dict):
            # routes.<attr>.<field>
            attr = canonical_attribute(key)
            if not isinstance(value, dict):
                raise ConfigError(f"'{dotted}' must be a table of route fields")
            route = target.setdefault(attr, AttributeRoute())
            _apply(route, value, dotted + ".")
            continue
        if not dataclasses.is_dataclass(target) or key not in {f.name for f in dataclasses.fields(target)}:
            raise ConfigError(f"unknown config key '{dotted}'")
        current = getattr(target, key)
        if dataclasses.is_dataclass(current) or key == "routes":
            if not isinstance(value, dict):
                raise ConfigError(f"'{dotted}' must be a table")
            _apply(current, value, dotted + ".")
        elif key == "weights":
            if not isinstance(value, dict):
                raise ConfigError(f"'{dotted}' must be a table")
            current.update({canonical_attribute(k): float(v) for k, v in value.items()})
        else:
            setattr(target, key, _coerce(current, value, dotted))


def apply_overrides(config: EncodeConfig, values: Dict[str, Any]) -> EncodeConfig:
    """Return a copy of `config` with nested `values` applied."""
    out = config.copy()
    _apply(out, values)
    return out.validate()


def parse_overrides(text: str) -> Dict[str, Any]:
    """Parse `key = value` lines (TOML) into nested dicts."""
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc


def load_config(path: Optional[str] = None, preset_name: str = STATIC_PRESET) -> EncodeConfig:
    """
    Preset plus optional override file.

    A top-level `preset = "..."` key in the file selects the base preset.
    """
    values: Dict[str, Any] = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as f:
            values = parse_overrides(f.read())
    name = values.pop("preset", preset_name)
    return apply_overrides(preset(name), values)


def parse_route(text: str) -> Tuple[str, str, Optional[int]]:
    """`attr=codec[:bits]` -> (attribute, codec, bits)."""
    try:
        attr, rhs = text.split("=", 1)
    except ValueError:
        raise ConfigError(f"route '{text}' must look like attr=codec[:bits]") from None
    codec, _, bits = rhs.partition(":")
    try:
        return canonical_attribute(attr.strip()), codec.strip(), int(bits) if bits else None
    except ValueError:
        raise ConfigError(f"route '{text}': bits must be an integer") from None
