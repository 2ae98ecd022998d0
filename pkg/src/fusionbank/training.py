"""Training, evaluation and prediction around the saliency model.

A run is described by a flat ``RunConfig`` assembled from three layers:
profile defaults (``paper`` uses the published optimizer settings, ``desk``
is the scaled-down profile this artifact is verified at), then an INI-style
``key = value`` config file, then command-line overrides. One seed governs
parameter initialization and batch order; dataset generation takes its own
seed at generation time.

Run artifacts land in the output directory: ``train_log.csv`` (one row per
optimization step), ``weight_trace.csv`` (per epoch and level, the mean
ensemble weight of every scheme block), ``val_metrics.csv`` (when a
validation set is configured), ``last.ckpt`` (overwritten each epoch end) and
``final.ckpt``, each with a plain-text manifest carrying the resolved
configuration and per-module parameter counts.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from . import dataset as ds
from .bank import SCHEME_ORDER
from .errors import ConfigurationError, ContractError, DatasetError
from .losses import LossWeights, total_loss
from .metrics import MetricReport, evaluate_samples, report_csv, report_table
from .network import (
    AblationFlags,
    EncoderConfig,
    SaliencyModel,
    load_checkpoint,
    save_checkpoint,
)
from .tensor import Tensor, bilinear_resize, no_grad

__all__ = [
    "PROFILES",
    "RunConfig",
    "Adam",
    "build_model",
    "train",
    "evaluate_model",
    "evaluate_checkpoint",
    "model_from_checkpoint",
    "predict",
    "weight_trace_summary",
    "format_trace_summary",
]

PROFILES = {
    "paper": dict(lr=5e-5, batch_size=16, epochs=80, input_size=352),
    "desk": dict(lr=1e-3, batch_size=8, epochs=30, input_size=64),
}


@dataclass
class RunConfig:
    """Everything one training or evaluation run depends on."""

    train_data: str = ""
    val_data: str = ""
    input_size: int = 64
    channels: tuple[int, int, int, int] = (16, 32, 64, 128)
    decoder_width: int = 32
    lr: float = 1e-3
    batch_size: int = 8
    epochs: int = 30
    seed: int = 7
    lambda2: float = 1.0
    lambda3: float = 0.8
    lambda4: float = 0.6
    lambda5: float = 0.5
    use_smooth: bool = True
    use_dice: bool = True
    no_afb: bool = False
    no_aem: bool = False
    no_iigm: bool = False
    schemes: tuple[str, ...] | None = None
    out_dir: str = "runs/out"
    profile: str = "desk"

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(input_size=self.input_size, channels=tuple(self.channels),
                             decoder_width=self.decoder_width)

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda2, self.lambda3, self.lambda4, self.lambda5,
                           use_smooth=self.use_smooth, use_dice=self.use_dice)

    def ablation_flags(self) -> AblationFlags:
        return AblationFlags(no_afb=self.no_afb, no_aem=self.no_aem,
                             no_iigm=self.no_iigm, schemes=self.schemes)

    def to_manifest(self) -> dict[str, str]:
        return {
            "profile": self.profile,
            "input_size": str(self.input_size),
            "channels": ",".join(str(c) for c in self.channels),
            "decoder_width": str(self.decoder_width),
            "lr": repr(self.lr),
            "batch_size": str(self.batch_size),
            "epochs": str(self.epochs),
            "seed": str(self.seed),
            "lambda2": repr(self.lambda2),
            "lambda3": repr(self.lambda3),
            "lambda4": repr(self.lambda4),
            "lambda5": repr(self.lambda5),
            "use_smooth": str(self.use_smooth).lower(),
            "use_dice": str(self.use_dice).lower(),
            "no_afb": str(self.no_afb).lower(),
            "no_aem": str(self.no_aem).lower(),
            "no_iigm": str(self.no_iigm).lower(),
            "schemes": ",".join(self.schemes) if self.schemes else "all",
        }


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"cannot parse boolean value {text!r}")


def _parse_schemes(text: str) -> tuple[str, ...] | None:
    text = text.strip().lower()
    if text in ("", "all", "none"):
        return None
    names = tuple(tok.strip() for tok in text.split(",") if tok.strip())
    unknown = [n for n in names if n not in SCHEME_ORDER]
    if unknown:
        raise ConfigurationError(f"unknown fusion schemes: {unknown}")
    if not names:
        raise ConfigurationError("scheme subset must be non-empty")
    return names


# (section, key) -> (RunConfig field, parser)
_CONFIG_KEYS = {
    ("data", "train"): ("train_data", str),
    ("data", "val"): ("val_data", str),
    ("model", "input_size"): ("input_size", int),
    ("model", "channels"): ("channels", lambda s: tuple(int(x) for x in s.split(","))),
    ("model", "decoder_width"): ("decoder_width", int),
    ("train", "lr"): ("lr", float),
    ("train", "batch_size"): ("batch_size", int),
    ("train", "epochs"): ("epochs", int),
    ("train", "seed"): ("seed", int),
    ("loss", "lambda2"): ("lambda2", float),
    ("loss", "lambda3"): ("lambda3", float),
    ("loss", "lambda4"): ("lambda4", float),
    ("loss", "lambda5"): ("lambda5", float),
    ("loss", "use_smooth"): ("use_smooth", _parse_bool),
    ("loss", "use_dice"): ("use_dice", _parse_bool),
    ("ablation", "no_afb"): ("no_afb", _parse_bool),
    ("ablation", "no_aem"): ("no_aem", _parse_bool),
    ("ablation", "no_iigm"): ("no_iigm", _parse_bool),
    ("ablation", "schemes"): ("schemes", _parse_schemes),
    ("run", "out"): ("out_dir", str),
}


def load_config_file(path: str) -> dict:
    """Parse the sectioned key = value config file into RunConfig fields."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigurationError(f"cannot read config file {path}")
    values = {}
    for section in parser.sections():
        for key, raw in parser[section].items():
            spec = _CONFIG_KEYS.get((section, key))
            if spec is None:
                raise ConfigurationError(f"unknown config key [{section}] {key}")
            name, parse = spec
            try:
                values[name] = parse(raw)
            except ConfigurationError:
                raise
            except Exception as exc:
                raise ConfigurationError(f"bad value for [{section}] {key}: {exc}")
    return values


def resolve_config(profile: str = "desk", config_path: str | None = None,
                   overrides: dict | None = None) -> RunConfig:
    """profile defaults <- config file <- explicit overrides."""
    if profile not in PROFILES:
        raise ConfigurationError(f"unknown profile {profile!r}; expected paper or desk")
    cfg = RunConfig(profile=profile, **PROFILES[profile])
    if config_path:
        cfg = replace(cfg, **load_config_file(config_path))
    if overrides:
        cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    return cfg


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


class Adam:
    """Adaptive-moment estimation with bias correction."""

    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# ---------------------------------------------------------------------------
# data plumbing
# ---------------------------------------------------------------------------


def _load_arrays(index: ds.DatasetIndex, input_size: int):
    rgbs, auxs, gts, labels = [], [], [], []
    for sample in ds.iter_samples(index):
        if sample.rgb.shape[1:] != (input_size, input_size):
            raise DatasetError(
                f"sample {sample.id} is {sample.rgb.shape[1]}x{sample.rgb.shape[2]}, "
                f"the model expects {input_size}x{input_size}"
            )
        rgbs.append(sample.rgb)
        auxs.append(sample.aux)
        gts.append(sample.gt)
        labels.append(sample.labels)
    return np.stack(rgbs), np.stack(auxs), np.stack(gts), labels


def build_model(cfg: RunConfig, rng: np.random.Generator) -> SaliencyModel:
    return SaliencyModel(cfg.encoder_config(), rng, cfg.ablation_flags())


def _manifest_for(model: SaliencyModel, cfg: RunConfig) -> dict[str, str]:
    manifest = cfg.to_manifest()
    counts = model.module_parameter_counts()
    for module in sorted(counts):
        manifest[f"params.{module}"] = str(counts[module])
    manifest["params.total"] = str(sum(counts.values()))
    return manifest


@dataclass
class TrainResult:
    out_dir: Path
    final_checkpoint: Path
    last_report: MetricReport | None = None
    trace_rows: list = field(default_factory=list)


def train(cfg: RunConfig) -> TrainResult:
    """Run the full training loop; deterministic given (config, seed)."""
    if not cfg.train_data:
        raise ConfigurationError("no training dataset configured")
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index = ds.load_index(cfg.train_data)
    if not index.ids:
        raise ContractError("training dataset is empty")
    ds.validate_dataset(index)
    rgbs, auxs, gts, _ = _load_arrays(index, cfg.input_size)

    val_index = ds.load_index(cfg.val_data) if cfg.val_data else None

    init_ss, batch_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    model = build_model(cfg, np.random.Generator(np.random.PCG64(init_ss)))
    batch_rng = np.random.Generator(np.random.PCG64(batch_ss))
    optimizer = Adam(model.parameters(), lr=cfg.lr)
    loss_weights = cfg.loss_weights()
    manifest = _manifest_for(model, cfg)
    manifest["train_data"] = str(cfg.train_data)
    manifest["train_mix"] = index.meta.get("mix", "")

    n = rgbs.shape[0]
    bank_schemes = None
    if not cfg.no_afb and not cfg.no_aem:
        bank_schemes = cfg.schemes or SCHEME_ORDER

    log_path = out_dir / "train_log.csv"
    trace_path = out_dir / "weight_trace.csv"
    val_path = out_dir / "val_metrics.csv"
    trace_rows = []
    step = 0
    with open(log_path, "w") as log_f, open(trace_path, "w") as trace_f:
        log_f.write("epoch,step,l2,l3,l4,l5,smooth,dice,total\n")
        trace_f.write("epoch,level," + ",".join(SCHEME_ORDER) + "\n")
        if val_index is not None:
            val_f = open(val_path, "w")
            val_f.write("epoch,e_measure,weighted_f,f_mean,f_max,mae\n")
        for epoch in range(cfg.epochs):
            order = batch_rng.permutation(n)
            trace_sums = {i: {s: 0.0 for s in SCHEME_ORDER} for i in (2, 3, 4, 5)}
            batches = 0
            for start in range(0, n, cfg.batch_size):
                chosen = order[start:start + cfg.batch_size]
                rgb = Tensor(rgbs[chosen])
                aux = Tensor(auxs[chosen])
                gt = Tensor(gts[chosen])
                outputs, weights = model.forward(rgb, aux)
                loss, report = total_loss(outputs, gt, rgb, loss_weights)
                model.zero_grad()
                loss.backward()
                optimizer.step()
                values = ",".join(repr(v) for v in report.csv_values())
                log_f.write(f"{epoch},{step},{values}\n")
                step += 1
                batches += 1
                for level, w in weights.items():
                    for scheme, mean in w.per_scheme_mean.items():
                        trace_sums[level][scheme] += mean
            if bank_schemes is not None and batches:
                for level in (2, 3, 4, 5):
                    row = [str(epoch), str(level)]
                    means = []
                    for scheme in SCHEME_ORDER:
                        if scheme in bank_schemes:
                            value = trace_sums[level][scheme] / batches
                            row.append(repr(value))
                            means.append(value)
                        else:
                            row.append("nan")
                            means.append(float("nan"))
                    trace_f.write(",".join(row) + "\n")
                    trace_rows.append((epoch, level, means))
            save_checkpoint(out_dir / "last.ckpt", model.state(), manifest)
            if val_index is not None:
                val_report = evaluate_model(model, val_index, cfg.batch_size)
                vals = ",".join(repr(v) for v in val_report.values())
                val_f.write(f"{epoch},{vals}\n")
        if val_index is not None:
            val_f.close()
    final = out_dir / "final.ckpt"
    save_checkpoint(final, model.state(), manifest)
    return TrainResult(out_dir=out_dir, final_checkpoint=final, trace_rows=trace_rows)


# ---------------------------------------------------------------------------
# evaluation / prediction
# ---------------------------------------------------------------------------


def predictions(model: SaliencyModel, rgbs: np.ndarray, auxs: np.ndarray,
                batch_size: int) -> np.ndarray:
    """Final saliency maps, stacked (N, H, W)."""
    outs = []
    with no_grad():
        for start in range(0, rgbs.shape[0], batch_size):
            rgb = Tensor(rgbs[start:start + batch_size])
            aux = Tensor(auxs[start:start + batch_size])
            outs.append(model(rgb, aux).s2.data[:, 0])
    return np.concatenate(outs, axis=0)


def evaluate_model(model: SaliencyModel, index: ds.DatasetIndex,
                   batch_size: int = 8) -> MetricReport:
    if not index.ids:
        raise ContractError("cannot evaluate an empty dataset")
    rgbs, auxs, gts, labels = _load_arrays(index, model.cfg.input_size)
    preds = predictions(model, rgbs, auxs, batch_size)
    have_labels = all(len(l) > 0 for l in labels)
    return evaluate_samples(list(preds), [g[0] for g in gts],
                            labels if have_labels else None)


def model_from_checkpoint(path) -> tuple[SaliencyModel, dict[str, str]]:
    params, manifest = load_checkpoint(path)
    try:
        channels = tuple(int(c) for c in manifest["channels"].split(","))
        cfg = EncoderConfig(input_size=int(manifest["input_size"]), channels=channels,
                            decoder_width=int(manifest["decoder_width"]))
        flags = AblationFlags(
            no_afb=_parse_bool(manifest.get("no_afb", "false")),
            no_aem=_parse_bool(manifest.get("no_aem", "false")),
            no_iigm=_parse_bool(manifest.get("no_iigm", "false")),
            schemes=_parse_schemes(manifest.get("schemes", "all")),
        )
    except KeyError as exc:
        raise ConfigurationError(f"checkpoint manifest is missing {exc}")
    model = SaliencyModel(cfg, rng=None, flags=flags)
    model.load_state(params)
    return model, manifest


def evaluate_checkpoint(ckpt_path, data_root, out_dir=None, method: str = "fusionbank",
                        batch_size: int = 8) -> MetricReport:
    model, _ = model_from_checkpoint(ckpt_path)
    index = ds.load_index(data_root)
    report = evaluate_model(model, index, batch_size)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        name = Path(data_root).name or "dataset"
        (out_dir / "metrics.csv").write_text(report_csv(report, method, name))
        (out_dir / "metrics.txt").write_text(report_table(report, method, name))
    return report


def _load_image_chw(path) -> np.ndarray:
    try:
        img = Image.open(path).convert("RGB")
    except (FileNotFoundError, OSError) as exc:
        raise DatasetError(f"cannot read image {path}: {exc}")
    return np.asarray(img, dtype=np.float64).transpose(2, 0, 1) / 255.0


def predict(ckpt_path, rgb_path, aux_path, out_path) -> np.ndarray:
    """Write the final saliency map for one image pair as an 8-bit PNG."""
    model, _ = model_from_checkpoint(ckpt_path)
    size = model.cfg.input_size
    arrays = []
    for path in (rgb_path, aux_path):
        arr = _load_image_chw(path)
        if arr.shape[1:] != (size, size):
            with no_grad():
                arr = bilinear_resize(Tensor(arr[None]), size, size).data[0]
        arrays.append(arr)
    with no_grad():
        s2 = model(Tensor(arrays[0][None]), Tensor(arrays[1][None])).s2.data[0, 0]
    out = np.round(np.clip(s2, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(out, mode="L").save(out_path)
    return s2


# ---------------------------------------------------------------------------
# ensemble-weight trace summaries
# ---------------------------------------------------------------------------

LABEL_TO_SCHEME = {"CB": "cb", "SV": "sv", "IC": "ic", "LI": "li", "TD": "td"}


def read_weight_trace(path) -> list[tuple[int, int, list[float]]]:
    rows = []
    with open(path) as f:
        header = f.readline().strip().split(",")
        if header[:2] != ["epoch", "level"]:
            raise ContractError(f"{path} is not a weight trace file")
        for line in f:
            parts = line.strip().split(",")
            if not parts or parts == [""]:
                continue
            rows.append((int(parts[0]), int(parts[1]), [float(x) for x in parts[2:]]))
    if not rows:
        raise ContractError(f"{path} holds no trace rows")
    return rows


def weight_trace_summary(rows, challenge: str | None = None, window: int = 5) -> dict:
    """Mean scheme weights over the final ``window`` epochs, per level.

    When ``challenge`` names one of the labels, each level also reports
    whether the matched scheme's mean strictly exceeds the mean of the other
    schemes' means. With fewer epochs than the window, all epochs are used
    and the summary is flagged.
    """
    epochs = sorted({e for e, _, _ in rows})
    used = epochs[-window:]
    short = len(epochs) < window
    matched = LABEL_TO_SCHEME.get(challenge.upper()) if challenge else None
    if challenge and matched is None:
        raise ContractError(f"unknown challenge {challenge!r}")
    summary = {"window_epochs": used, "short_window": short, "levels": {}, "challenge": challenge}
    per_level_means = []
    for level in sorted({lv for _, lv, _ in rows}):
        sel = np.array([m for e, lv, m in rows if lv == level and e in used])
        means = {s: float(np.nanmean(sel[:, k])) for k, s in enumerate(SCHEME_ORDER)}
        entry = {"means": means}
        finite = {s: v for s, v in means.items() if not np.isnan(v)}
        if finite:
            top = max(finite, key=finite.get)
            uniform = max(finite.values()) - min(finite.values()) < 1e-12
            entry["dominant"] = None if uniform else top
            if matched is not None and matched in finite:
                others = [v for s, v in finite.items() if s != matched]
                entry["matched_dominant"] = bool(
                    others and finite[matched] > float(np.mean(others))
                )
        summary["levels"][level] = entry
        per_level_means.append([means[s] for s in SCHEME_ORDER])
    overall = {s: float(np.nanmean([m[k] for m in per_level_means]))
               for k, s in enumerate(SCHEME_ORDER)}
    summary["overall"] = overall
    return summary


def format_trace_summary(summary: dict) -> str:
    lines = []
    window = ",".join(str(e) for e in summary["window_epochs"])
    lines.append(f"epoch window: {window}" + (" (short)" if summary["short_window"] else ""))
    header = "level  " + "  ".join(f"{s:>7}" for s in SCHEME_ORDER)
    lines.append(header)
    for level, entry in sorted(summary["levels"].items()):
        means = entry["means"]
        row = f"{level:<5}  " + "  ".join(f"{means[s]:7.4f}" for s in SCHEME_ORDER)
        notes = []
        if entry.get("dominant"):
            notes.append(f"dominant={entry['dominant']}")
        elif entry.get("dominant", "missing") is None:
            notes.append("no dominant scheme")
        if "matched_dominant" in entry:
            notes.append(f"matched_dominant={entry['matched_dominant']}")
        if notes:
            row += "   " + " ".join(notes)
        lines.append(row)
    overall = summary["overall"]
    lines.append("all    " + "  ".join(f"{overall[s]:7.4f}" for s in SCHEME_ORDER))
    return "\n".join(lines) + "\n"
