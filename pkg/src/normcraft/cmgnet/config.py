"""Network and training configuration, read from TOML key/value files."""

import hashlib
from dataclasses import asdict, dataclass, field, fields
from math import floor

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..errors import StructuralError


@dataclass
class NetConfig:
    patch_size: int = 128
    lfe_scales: tuple = (16, 32)
    hier_scales: tuple = (32, 32, 16, 16)
    downsample: tuple = (2 / 3, 2 / 3, 2 / 3, 1.0)
    pff_neighbors: int = 16
    # LFE, hierarchy, decoder channel counts
    feature_widths: tuple = (16, 32, 64)
    loss_weights: tuple = (0.1, 0.1, 0.5, 1.0)
    # LFE layers per scale; layers after the first pick neighbors in knn_space
    lfe_depth: int = 1
    knn_space: str = "features"
    seed: int = 0

    def __post_init__(self):
        for name in ("lfe_scales", "hier_scales", "downsample", "feature_widths", "loss_weights"):
            setattr(self, name, tuple(getattr(self, name)))
        self.validate()

    @classmethod
    def paper(cls, **overrides):
        base = dict(patch_size=700, feature_widths=(64, 128, 256))
        base.update(overrides)
        return cls(**base)

    @property
    def stage_sizes(self):
        """Point counts ``N_0 .. N_4`` through the hierarchy."""
        sizes = [self.patch_size]
        for rho in self.downsample:
            sizes.append(int(floor(sizes[-1] * rho + 1e-9)))
        return tuple(sizes)

    @property
    def decoder_points(self):
        return self.stage_sizes[-1]

    def validate(self):
        if len(self.lfe_scales) != 2:
            raise StructuralError("lfe_scales needs two entries")
        if len(self.hier_scales) != len(self.downsample):
            raise StructuralError("hier_scales and downsample must have equal length")
        if len(self.feature_widths) != 3 or len(self.loss_weights) != 4:
            raise StructuralError("feature_widths needs 3 entries and loss_weights 4")
        if self.knn_space not in ("coords", "features"):
            raise StructuralError(f"knn_space must be coords or features, got {self.knn_space!r}")
        if max(self.lfe_scales) > self.patch_size:
            raise StructuralError(f"LFE scale {max(self.lfe_scales)} exceeds patch size {self.patch_size}")
        sizes = self.stage_sizes
        for h, s in enumerate(self.hier_scales):
            if sizes[h + 1] < s:
                raise StructuralError(f"stage {h + 1} keeps {sizes[h + 1]} points, fewer than its {s} neighbors")
        if sizes[-1] < self.pff_neighbors:
            raise StructuralError(f"decoder keeps {sizes[-1]} points, fewer than {self.pff_neighbors} PFF neighbors")


@dataclass
class TrainConfig:
    lr: float = 5e-3
    epochs: int = 200
    batch_size: int = 16
    weight_decay: float = 1e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    # "cnd": nearest clean normal; "annotated": pre-noise normal of the query
    labels: str = "cnd"
    n_patches: int = 500
    seed: int = 0

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.labels not in ("cnd", "annotated"):
            raise StructuralError(f"labels must be cnd or annotated, got {self.labels!r}")


@dataclass
class RunConfig:
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    text: str = ""

    @property
    def sha256(self):
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()


def _build(cls, table, section):
    known = {f.name for f in fields(cls)}
    unknown = set(table) - known
    if unknown:
        raise StructuralError(f"unknown [{section}] keys: {', '.join(sorted(unknown))}")
    return cls(**table)


def parse_config(text):
    """Parse ``[net]`` / ``[train]`` tables; missing keys keep their defaults."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise StructuralError(f"bad config: {exc}") from exc
    extra = set(raw) - {"net", "train"}
    if extra:
        raise StructuralError(f"unknown config tables: {', '.join(sorted(extra))}")
    return RunConfig(_build(NetConfig, raw.get("net", {}), "net"), _build(TrainConfig, raw.get("train", {}), "train"), text)


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def dump_config(run):
    """TOML text for a :class:`RunConfig` (used when no file was given)."""
    lines = []
    for section, obj in (("net", run.net), ("train", run.train)):
        lines.append(f"[{section}]")
        for key, value in asdict(obj).items():
            if isinstance(value, str):
                lines.append(f'{key} = "{value}"')
            elif isinstance(value, (tuple, list)):
                lines.append(f"{key} = [{', '.join(repr(v) for v in value)}]")
            else:
                lines.append(f"{key} = {value!r}")
        lines.append("")
    return "\n".join(lines)
