"""Pipeline configuration: a flat UTF-8 ``key = value`` file with sections.

Example::

    [input]
    t1 = scenes/march.png
    t2 = scenes/august.png
    truth = scenes/truth.pgm

    [cfog]
    sigma = 1.0
    band_mode = intensity

    [forest]
    trees = 100
    seed = 7

    [output]
    dir = runs/march-august

A ``[scene]`` section may replace ``[input]``: the pipeline then generates
the synthetic scene in memory (and ``synth`` writes it to disk). Change
regions are listed as ``shape:cx,cy,size,delta`` separated by semicolons,
e.g. ``changes = rect:60,60,40,40; disk:190,190,30,-25``.

Unknown sections or keys are rejected so a typo cannot silently fall back
to a default.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace

from .cfog import CfogParams
from .neighborhood import NeighborhoodParams
from .synth import ChangeRegion, SceneSpec

BAND_MODES = ("intensity", "per_band")
TEMPLATE_SOURCES = ("t1", "t2")


@dataclass(frozen=True)
class ForestConfig:
    trees: int = 100
    mtry: int | None = None
    max_depth: int = 16
    min_leaf: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.trees < 1:
            raise ValueError("forest trees must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("forest mtry must be >= 1 (or omitted for auto)")
        if self.max_depth < 1 or self.min_leaf < 1:
            raise ValueError("forest max_depth and min_leaf must be >= 1")
        if self.seed < 0:
            raise ValueError("forest seed must be >= 0")


@dataclass(frozen=True)
class SamplingConfig:
    per_class_count: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.per_class_count < 1:
            raise ValueError("sampling per_class_count must be >= 1")
        if self.seed < 0:
            raise ValueError("sampling seed must be >= 0")


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a subcommand needs, already validated."""

    t1: str | None = None
    t2: str | None = None
    truth: str | None = None
    scene: SceneSpec | None = None
    cfog: CfogParams = field(default_factory=CfogParams)
    band_mode: str = "intensity"
    neighborhood: NeighborhoodParams = field(default_factory=NeighborhoodParams)
    template_source: str = "t1"
    forest: ForestConfig = field(default_factory=ForestConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    out_dir: str | None = None

    def __post_init__(self):
        if self.band_mode not in BAND_MODES:
            raise ValueError(f"band_mode must be one of {BAND_MODES}, got {self.band_mode!r}")
        if self.template_source not in TEMPLATE_SOURCES:
            raise ValueError(
                f"template_source must be one of {TEMPLATE_SOURCES}, got {self.template_source!r}"
            )
        if (self.t1 is None) != (self.t2 is None):
            raise ValueError("input needs both t1 and t2 (or neither)")
        if self.t1 is not None and self.scene is not None:
            raise ValueError("give [input] files or a [scene], not both")

    def with_seed(self, seed: int) -> "PipelineConfig":
        """Override every stochastic stage's seed (the --seed flag)."""
        if seed < 0:
            raise ValueError("seed must be >= 0")
        scene = replace(self.scene, seed=seed) if self.scene is not None else None
        return replace(
            self,
            scene=scene,
            forest=replace(self.forest, seed=seed),
            sampling=replace(self.sampling, seed=seed),
        )


def parse_changes(text: str) -> tuple[ChangeRegion, ...]:
    """Parse ``shape:cx,cy,size,delta; ...`` into ChangeRegions."""
    regions = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        shape, _, rest = chunk.partition(":")
        parts = [p.strip() for p in rest.split(",")]
        if len(parts) != 4:
            raise ValueError(
                f"change region {chunk!r} must be shape:cx,cy,size,delta"
            )
        try:
            cx, cy, size = int(parts[0]), int(parts[1]), int(parts[2])
            delta = float(parts[3])
        except ValueError:
            raise ValueError(f"change region {chunk!r} has non-numeric fields") from None
        regions.append(ChangeRegion(shape.strip(), (cx, cy), size, delta))
    return tuple(regions)


def format_changes(changes: tuple[ChangeRegion, ...]) -> str:
    return "; ".join(
        f"{c.shape}:{c.center[0]},{c.center[1]},{c.size},{c.delta:g}" for c in changes
    )


_SCHEMA = {
    "input": ("t1", "t2", "truth"),
    "cfog": ("orientations", "sigma", "epsilon", "band_mode"),
    "neighborhood": (
        "nsci_window",
        "template",
        "search",
        "variance_floor",
        "template_source",
    ),
    "forest": ("trees", "mtry", "max_depth", "min_leaf", "seed"),
    "sampling": ("per_class_count", "seed"),
    "output": ("dir",),
    "scene": (
        "width",
        "height",
        "bands",
        "texture_scale",
        "gain",
        "bias",
        "noise_sigma",
        "seed",
        "changes",
    ),
}


class _Section:
    """Typed accessors over one config section, tracking consumed keys."""

    def __init__(self, parser: configparser.ConfigParser, name: str):
        self.name = name
        self.raw = dict(parser[name]) if parser.has_section(name) else {}

    def _take(self, key: str) -> str | None:
        return self.raw.get(key)

    def get(self, key: str, default: str | None = None) -> str | None:
        value = self._take(key)
        return default if value in (None, "") else value

    def get_int(self, key: str, default: int) -> int:
        value = self._take(key)
        if value is None or value == "":
            return default
        try:
            return int(value)
        except ValueError:
            raise ValueError(f"[{self.name}] {key} must be an integer, got {value!r}") from None

    def get_float(self, key: str, default: float) -> float:
        value = self._take(key)
        if value is None or value == "":
            return default
        try:
            return float(value)
        except ValueError:
            raise ValueError(f"[{self.name}] {key} must be a number, got {value!r}") from None


def _check_schema(parser: configparser.ConfigParser, path: str) -> None:
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ValueError(f"{path}: unknown config section [{section}]")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ValueError(f"{path}: unknown key {key!r} in section [{section}]")


def load_config(path) -> PipelineConfig:
    """Read and validate a pipeline config file."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ValueError(f"{path}: {exc}") from exc
    _check_schema(parser, str(path))

    inp = _Section(parser, "input")
    cfog = _Section(parser, "cfog")
    neigh = _Section(parser, "neighborhood")
    forest = _Section(parser, "forest")
    sampling = _Section(parser, "sampling")
    output = _Section(parser, "output")

    scene = None
    if parser.has_section("scene"):
        sc = _Section(parser, "scene")
        scene = SceneSpec(
            width=sc.get_int("width", 256),
            height=sc.get_int("height", 256),
            bands=sc.get_int("bands", 3),
            texture_scale=sc.get_float("texture_scale", 2.0),
            gain=sc.get_float("gain", 1.0),
            bias=sc.get_float("bias", 0.0),
            noise_sigma=sc.get_float("noise_sigma", 0.0),
            changes=parse_changes(sc.get("changes", "") or ""),
            seed=sc.get_int("seed", 0),
        )

    mtry_raw = forest.get("mtry")
    mtry = forest.get_int("mtry", 0) if mtry_raw not in (None, "") else None
    return PipelineConfig(
        t1=inp.get("t1"),
        t2=inp.get("t2"),
        truth=inp.get("truth"),
        scene=scene,
        cfog=CfogParams(
            orientations=cfog.get_int("orientations", 9),
            sigma=cfog.get_float("sigma", 1.0),
            epsilon=cfog.get_float("epsilon", 1e-5),
        ),
        band_mode=cfog.get("band_mode", "intensity"),
        neighborhood=NeighborhoodParams(
            nsci_window=neigh.get_int("nsci_window", 5),
            template=neigh.get_int("template", 3),
            search=neigh.get_int("search", 9),
            variance_floor=neigh.get_float("variance_floor", 1e-12),
        ),
        template_source=neigh.get("template_source", "t1"),
        forest=ForestConfig(
            trees=forest.get_int("trees", 100),
            mtry=mtry,
            max_depth=forest.get_int("max_depth", 16),
            min_leaf=forest.get_int("min_leaf", 1),
            seed=forest.get_int("seed", 0),
        ),
        sampling=SamplingConfig(
            per_class_count=sampling.get_int("per_class_count", 2000),
            seed=sampling.get_int("seed", 0),
        ),
        out_dir=output.get("dir"),
    )


def scene_config_text(spec: SceneSpec) -> str:
    """Render a SceneSpec as a config-file [scene] section."""
    lines = [
        "[scene]",
        f"width = {spec.width}",
        f"height = {spec.height}",
        f"bands = {spec.bands}",
        f"texture_scale = {spec.texture_scale:g}",
        f"gain = {spec.gain:g}",
        f"bias = {spec.bias:g}",
        f"noise_sigma = {spec.noise_sigma:g}",
        f"seed = {spec.seed}",
    ]
    if spec.changes:
        lines.append(f"changes = {format_changes(spec.changes)}")
    return "\n".join(lines) + "\n"
