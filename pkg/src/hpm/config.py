"""Flat ``key = value`` run configuration with a typed schema.

Lines starting with ``#`` are comments; lists are comma separated.
Unknown keys and out-of-range values raise ConfigError naming the key.
"""
from dataclasses import dataclass

from .backbone import BackboneConfig
from .dataio import SynthConfig
from .hpp import POOLINGS, PyramidConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text):
    return tuple(int(t) for t in text.split(",") if t.strip())


def _floats(text):
    return tuple(float(t) for t in text.split(",") if t.strip())


def _positive(v):
    return v > 0


def _non_negative(v):
    return v >= 0


def _all_positive(v):
    return len(v) > 0 and all(x > 0 for x in v)


# key -> (parser, default, check, constraint description)
SCHEMA = {
    # backbone
    "in_channels": (int, 3, _positive, "> 0"),
    "stage_channels": (_ints, (16, 32, 64, 64), lambda v: len(v) == 4 and min(v) > 0, "4 positive ints"),
    "input_height": (int, 128, lambda v: v > 0 and v % 128 == 0, "positive multiple of 128"),
    "input_width": (int, 64, lambda v: v > 0 and v % 16 == 0, "positive multiple of 16"),
    # pyramid head
    "scales": (_ints, (1, 2, 4, 8), _all_positive, "positive bin counts"),
    "reduced_dim": (int, 32, _positive, "> 0"),
    "pooling": (str, "avg_plus_max", lambda v: v in POOLINGS, f"one of {POOLINGS}"),
    # training
    "batch_size": (int, 16, _positive, "> 0"),
    "epochs": (int, 30, _non_negative, ">= 0"),
    "base_lr": (float, 0.001, _non_negative, ">= 0"),
    "decay_epoch": (int, 20, _non_negative, ">= 0"),
    "momentum": (float, 0.9, lambda v: 0 <= v < 1, "in [0, 1)"),
    "backbone_lr_mult": (float, 1.0, _positive, "> 0"),
    "seed": (int, 0, _non_negative, ">= 0"),
    "flip_augment": (_bool, True, None, ""),
    "normalize_mean": (_floats, (0.5, 0.5, 0.5), lambda v: len(v) > 0, "one value per channel"),
    "normalize_std": (_floats, (0.5, 0.5, 0.5), lambda v: len(v) > 0 and all(x != 0 for x in v),
                      "non-zero, one value per channel"),
    # retrieval / evaluation
    "flip_sum": (_bool, True, None, ""),
    "topk": (int, 10, _positive, "> 0"),
    # synthetic data
    "num_ids": (int, 16, lambda v: v >= 2, ">= 2"),
    "images_per_id_per_cam": (int, 10, _positive, "> 0"),
    "num_cams": (int, 3, lambda v: v >= 2, ">= 2"),
    "band_count": (int, 8, lambda v: v >= 2, ">= 2"),
    "misalignment_max": (int, 4, _non_negative, ">= 0"),
    "noise_std": (float, 0.05, _non_negative, ">= 0"),
    "synth_seed": (int, 7, _non_negative, ">= 0"),
    "palette_size": (int, 8, lambda v: 2 <= v <= 8, "in [2, 8]"),
    "disjoint_ids": (_bool, False, None, ""),
    # paths
    "data_dir": (str, "data", None, ""),
    "out_dir": (str, "runs", None, ""),
}


def parse_value(key, text):
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    parser, _, check, constraint = SCHEMA[key]
    try:
        value = parser(text.strip())
    except ValueError as exc:
        raise ConfigError(f"invalid value for {key!r}: {text.strip()!r} ({exc})") from None
    if check is not None and not check(value):
        raise ConfigError(f"invalid value for {key!r}: {value!r}, expected {constraint}")
    return value


def parse_lines(lines, source="<config>"):
    values = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, text = (part.strip() for part in line.split("=", 1))
        values[key] = parse_value(key, text)
    return values


@dataclass
class RunConfig:
    values: dict

    @classmethod
    def from_file(cls, path, **overrides):
        with open(path) as f:
            values = parse_lines(f, path)
        return cls.from_dict({**values, **overrides})

    @classmethod
    def from_dict(cls, values):
        merged = {k: default for k, (_, default, _, _) in SCHEMA.items()}
        for key, value in values.items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            if isinstance(value, str):
                value = parse_value(key, value)
            merged[key] = value
        cfg = cls(merged)
        cfg.validate()
        return cfg

    def __getitem__(self, key):
        return self.values[key]

    def replace(self, **changes):
        return RunConfig.from_dict({**self.values, **changes})

    def backbone(self):
        v = self.values
        return self._build(BackboneConfig, "input_height", in_channels=v["in_channels"],
                           stage_channels=tuple(v["stage_channels"]), input_height=v["input_height"],
                           input_width=v["input_width"])

    def pyramid(self, num_classes=2):
        v = self.values
        return self._build(PyramidConfig, "scales", scales=tuple(v["scales"]), reduced_dim=v["reduced_dim"],
                           pooling=v["pooling"], num_classes=num_classes)

    def train(self):
        v = self.values
        return self._build(TrainConfig, "decay_epoch", batch_size=v["batch_size"], epochs=v["epochs"],
                           base_lr=v["base_lr"], decay_epoch=v["decay_epoch"], momentum=v["momentum"],
                           backbone_lr_mult=v["backbone_lr_mult"], seed=v["seed"],
                           flip_augment=v["flip_augment"], normalize_mean=tuple(v["normalize_mean"]),
                           normalize_std=tuple(v["normalize_std"]))

    def synth(self):
        v = self.values
        return self._build(SynthConfig, "misalignment_max", num_ids=v["num_ids"],
                           images_per_id_per_cam=v["images_per_id_per_cam"], num_cams=v["num_cams"],
                           band_count=v["band_count"], misalignment_max=v["misalignment_max"],
                           noise_std=v["noise_std"], seed=v["synth_seed"], height=v["input_height"],
                           width=v["input_width"], palette_size=v["palette_size"],
                           disjoint_ids=v["disjoint_ids"])

    def validate(self):
        self.backbone()
        self.pyramid()
        self.train()
        self.synth()
        v = self.values
        bad = [n for n in v["scales"] if (v["input_height"] // 16) % n]
        if bad:
            raise ConfigError(f"invalid value for 'scales': {bad} do not divide the feature height "
                              f"{v['input_height'] // 16}")
        if len(v["normalize_mean"]) != v["in_channels"] or len(v["normalize_std"]) != v["in_channels"]:
            raise ConfigError("invalid value for 'normalize_mean'/'normalize_std': need one value per channel")

    @staticmethod
    def _build(factory, key, **kwargs):
        try:
            return factory(**kwargs)
        except ValueError as exc:
            raise ConfigError(f"invalid configuration near {key!r}: {exc}") from None

    def to_text(self):
        out = []
        for key, value in self.values.items():
            if isinstance(value, tuple):
                value = ",".join(str(x) for x in value)
            elif isinstance(value, bool):
                value = str(value).lower()
            out.append(f"{key} = {value}\n")
        return "".join(out)
