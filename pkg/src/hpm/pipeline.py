"""End-to-end helpers shared by the command line and the demo scripts:
train from samples, extract descriptor sets, score, and run ablations."""
import itertools
import os

import numpy as np

from .backbone import build_backbone
from .config import ConfigError, parse_value
from .dataio import by_split, generate_synthetic, label_map, load_split, stack
from .hpp import build_head
from .metrics import evaluate
from .retrieval import DescriptorSet, extract_descriptor, normalize
from .tensor import Rng
from .trainer import evaluate_classification, train


def load_or_generate(run_cfg, splits=("train", "query", "gallery")):
    """Samples from ``data_dir`` if it exists, otherwise synthesized in memory."""
    root = run_cfg["data_dir"]
    if os.path.isdir(root):
        size = (run_cfg["input_height"], run_cfg["input_width"])
        return [s for split in splits for s in load_split(root, split, size)]
    return [s for s in generate_synthetic(run_cfg.synth()) if s.split in splits]


def training_arrays(samples):
    images, pids, _ = stack(samples)
    classes = label_map(pids)
    labels = np.array([classes[int(p)] for p in pids], dtype=np.int64)
    return images, labels, classes


def build_model(run_cfg, num_classes):
    rng = Rng(run_cfg["seed"])
    bcfg = run_cfg.backbone()
    model = build_backbone(bcfg, rng.child("backbone"))
    head = build_head(run_cfg.pyramid(num_classes), bcfg.stage_channels[-1], rng.child("head"))
    return model, head


def train_model(run_cfg, train_samples, on_epoch=None):
    """Returns (model, head, log) trained on ``train_samples``."""
    if not train_samples:
        raise ValueError("no training samples")
    images, labels, classes = training_arrays(train_samples)
    model, head = build_model(run_cfg, max(len(classes), 2))
    log = train(model, head, images, labels, run_cfg.train(), on_epoch)
    return model, head, log


def train_accuracy(model, head, run_cfg, train_samples):
    images, labels, _ = training_arrays(train_samples)
    return evaluate_classification(model, head, images, labels, run_cfg.train())


def describe(model, head, samples, run_cfg, is_query):
    images, pids, cams = stack(samples)
    raw = extract_descriptor(model, head, images, run_cfg["normalize_mean"], run_cfg["normalize_std"],
                             flip_sum=run_cfg["flip_sum"])
    return DescriptorSet(normalize(raw), pids, cams, is_query)


def score(model, head, samples, run_cfg):
    query = describe(model, head, by_split(samples, "query"), run_cfg, True)
    gallery = describe(model, head, by_split(samples, "gallery"), run_cfg, False)
    return evaluate(query, gallery, run_cfg["topk"])


# --- ablation -------------------------------------------------------------

def parse_sweep(lines):
    """Sweep spec: ``scales = 1 ; 1,2 ; 1,2,4,8``, ``pooling = avg ; max``,
    ``seeds = 0,1,2``. Variants are the cross product of scales x pooling."""
    spec = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"sweep line {lineno}: expected 'key = value'")
        key, text = (p.strip() for p in line.split("=", 1))
        if key == "scales":
            spec[key] = [parse_value("scales", t) for t in text.split(";") if t.strip()]
        elif key == "pooling":
            spec[key] = [parse_value("pooling", t) for t in text.replace(",", ";").split(";") if t.strip()]
        elif key == "seeds":
            spec[key] = [parse_value("seed", t) for t in text.split(",") if t.strip()]
        else:
            raise ConfigError(f"unknown sweep key {key!r}")
    return spec


def sweep_variants(spec, run_cfg):
    scales = spec.get("scales") or [run_cfg["scales"]]
    poolings = spec.get("pooling") or [run_cfg["pooling"]]
    return list(itertools.product(scales, poolings))


def variant_name(scales, pooling):
    return f"scales={','.join(str(s) for s in scales)} pooling={pooling}"


def run_variant(run_cfg, samples):
    """Train on the train split and score on query/gallery; one table row."""
    model, head, _ = train_model(run_cfg, by_split(samples, "train"))
    report = score(model, head, samples, run_cfg)
    cmc = report.cmc
    at = lambda r: float(cmc[min(r, len(cmc)) - 1])
    return {"dim": head.config.descriptor_dim, "R1": at(1), "R5": at(5), "R10": at(10), "mAP": report.map}


def ablate(run_cfg, spec, samples=None, on_row=None):
    """Train and evaluate every variant for every seed on the same data.

    Returns rows (variant, dim, R1, R5, R10, mAP), metrics averaged over seeds.
    """
    if samples is None:
        samples = load_or_generate(run_cfg)
    seeds = spec.get("seeds") or [run_cfg["seed"]]
    rows = []
    for scales, pooling in sweep_variants(spec, run_cfg):
        name = variant_name(scales, pooling)
        try:
            cfg = run_cfg.replace(scales=tuple(scales), pooling=pooling)
            runs = [run_variant(cfg.replace(seed=s), samples) for s in seeds]
        except Exception as exc:
            raise RuntimeError(f"variant {name!r} failed: {exc}") from exc
        row = {"variant": name, "dim": runs[0]["dim"]}
        for key in ("R1", "R5", "R10", "mAP"):
            row[key] = float(np.mean([r[key] for r in runs]))
        rows.append(row)
        if on_row is not None:
            on_row(row)
    return rows


def format_table(rows):
    width = max([len("variant")] + [len(r["variant"]) for r in rows])
    lines = [f"{'variant':<{width}}  {'dim':>5}  {'R1':>6}  {'R5':>6}  {'R10':>6}  {'mAP':>6}"]
    for r in rows:
        lines.append(f"{r['variant']:<{width}}  {r['dim']:>5}  {r['R1']:6.4f}  {r['R5']:6.4f}  "
                     f"{r['R10']:6.4f}  {r['mAP']:6.4f}")
    return "\n".join(lines) + "\n"
