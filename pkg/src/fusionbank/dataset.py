"""Deterministic synthetic multi-modal dataset with challenge labels.

Every sample is a textured background plus one to three exactly-rendered
shapes (disk, rectangle, triangle), drawn twice: an RGB view and an auxiliary
view standing in for the thermal/depth modality. Challenge labels transform
the scene and come with machine-checkable postconditions (measured on the
8-bit files a loader sees):

* CB - the union-mask centroid lies within 15% of some image border.
* SV - mask area below 1% or above 25% of the image, or more than one
  connected component.
* IC - the RGB background texture contrast is raised (background luminance
  std > 0.05) and the RGB foreground/background luminance gap drops
  below 0.1; the texture continues across the object so shape is the only
  strong RGB cue.
* LI - the whole RGB image is darkened to mean luminance below 0.25 while
  the auxiliary view keeps a gap above 0.3.
* TD - the auxiliary foreground is blended toward the background (gap below
  0.1) while RGB keeps a gap above 0.3.

Generation is a pure function of (seed, index, attempt): each sample draws
from its own PCG64 substream, and a sample that misses its own postconditions
(for instance a large shape clipped below the area floor) is regenerated from
the next attempt substream a bounded number of times.

On disk: ``<root>/{rgb,aux,gt,labels}/<id>.{png,txt}`` plus ``index.txt``
(one id per line) and ``meta.txt`` (key = value). RGB/aux are 8-bit color
PNGs, the mask is an 8-bit grayscale PNG thresholded at 128 on load, and the
label file holds comma-separated codes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ContractError, DatasetError

__all__ = [
    "CHALLENGES",
    "Sample",
    "DatasetIndex",
    "generate",
    "load_index",
    "load_sample",
    "iter_samples",
    "save_sample",
    "validate_sample",
    "validate_dataset",
    "luminance",
    "contrast_gap",
]

CHALLENGES = ("CB", "SV", "IC", "LI", "TD")
# the modality-degradation labels contradict each other pairwise
_EXCLUSIVE = frozenset({"IC", "LI", "TD"})
MAX_ATTEMPTS = 20
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class Sample:
    """One loaded sample; images are float arrays in [0,1], gt is binary."""

    id: str
    rgb: np.ndarray   # (3, H, W)
    aux: np.ndarray   # (3, H, W)
    gt: np.ndarray    # (1, H, W), values in {0, 1}
    labels: set[str]


@dataclass
class DatasetIndex:
    root: Path
    ids: list[str]
    split: str
    meta: dict[str, str]


def luminance(img: np.ndarray) -> np.ndarray:
    """Rec. 601 luminance of a (3,H,W) image."""
    return np.tensordot(_LUMA, img, axes=([0], [0]))


def contrast_gap(img: np.ndarray, mask: np.ndarray) -> float:
    """|mean foreground luminance - mean background luminance|."""
    luma = luminance(img)
    fg = mask.reshape(luma.shape) > 0.5
    if not fg.any() or fg.all():
        return 0.0
    return abs(float(luma[fg].mean()) - float(luma[~fg].mean()))


def _background_std(img: np.ndarray, mask: np.ndarray) -> float:
    luma = luminance(img)
    bg = mask.reshape(luma.shape) < 0.5
    return float(luma[bg].std()) if bg.any() else 0.0


def _centroid_border_distance(mask: np.ndarray) -> float:
    """Distance of the mask centroid to the closest border, as a fraction."""
    m = mask.reshape(mask.shape[-2], mask.shape[-1])
    h, w = m.shape
    ys, xs = np.nonzero(m > 0.5)
    cy, cx = ys.mean() / (h - 1), xs.mean() / (w - 1)
    return min(cy, 1.0 - cy, cx, 1.0 - cx)


def _component_count(mask: np.ndarray) -> int:
    from scipy import ndimage

    m = mask.reshape(mask.shape[-2], mask.shape[-1]) > 0.5
    return int(ndimage.label(m)[1])


# ---------------------------------------------------------------------------
# scene synthesis
# ---------------------------------------------------------------------------


def _texture(rng, h, w, amplitude):
    """Sum of two random sinusoidal gratings with the given total amplitude."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    out = np.zeros((h, w))
    for _ in range(2):
        freq = rng.uniform(1.5, 4.0) / max(h, w)
        theta = rng.uniform(0, math.pi)
        phase = rng.uniform(0, 2 * math.pi)
        out += np.sin(
            2 * math.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase
        )
    return amplitude * out / 2.0


def _shape_mask(rng, h, w, cy, cx, area_frac, kind):
    """Exactly-rendered boolean mask of one shape around (cy, cx)."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    area = area_frac * h * w
    if kind == "disk":
        r = math.sqrt(area / math.pi)
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    if kind == "rect":
        aspect = rng.uniform(0.6, 1.6)
        half_h = math.sqrt(area * aspect) / 2.0
        half_w = math.sqrt(area / aspect) / 2.0
        return (np.abs(yy - cy) <= half_h) & (np.abs(xx - cx) <= half_w)
    if kind == "triangle":
        r = math.sqrt(4.0 * area / (3.0 * math.sqrt(3.0)))  # circumradius
        rot = rng.uniform(0, 2 * math.pi)
        verts = [(cy + r * math.sin(rot + k * 2 * math.pi / 3),
                  cx + r * math.cos(rot + k * 2 * math.pi / 3)) for k in range(3)]
        mask = np.ones((h, w), dtype=bool)
        for k in range(3):
            y0, x0 = verts[k]
            y1, x1 = verts[(k + 1) % 3]
            cross = (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0)
            mask &= cross >= 0
        return mask
    raise ContractError(f"unknown shape kind {kind!r}")


def _draw_labels(rng, mix: dict[str, float]) -> set[str]:
    names = [c for c in CHALLENGES if mix.get(c, 0.0) > 0]
    weights = np.array([mix[c] for c in names], dtype=np.float64)
    if not names or weights.sum() <= 0:
        raise ContractError("challenge mix must have at least one positive weight")
    primary = names[rng.choice(len(names), p=weights / weights.sum())]
    labels = {primary}
    compatible = [c for c in names if c != primary
                  and not (c in _EXCLUSIVE and primary in _EXCLUSIVE)]
    if compatible and rng.uniform() < 0.3:
        w = np.array([mix[c] for c in compatible])
        labels.add(compatible[rng.choice(len(compatible), p=w / w.sum())])
    return labels


def _object_layout(rng, h, w, labels):
    """Choose object count, positions and sizes honoring CB/SV."""
    if "SV" in labels:
        variant = ("tiny", "large", "multi")[rng.choice(3)]
        if "CB" in labels and variant == "large":
            variant = ("tiny", "multi")[rng.choice(2)]
    else:
        variant = None
        count = int(rng.choice([1, 2, 3], p=[0.7, 0.2, 0.1]))

    if variant == "tiny":
        count, areas = 1, [rng.uniform(0.003, 0.007)]
    elif variant == "large":
        count, areas = 1, [rng.uniform(0.32, 0.42)]
    elif variant == "multi":
        count = int(rng.choice([2, 3]))
        areas = [rng.uniform(0.03, 0.06) for _ in range(count)]
    else:
        areas = [rng.uniform(0.04, 0.10) for _ in range(count)]

    if "CB" in labels:
        border = int(rng.choice(4))  # 0=N 1=S 2=W 3=E
        depth = rng.uniform(0.05, 0.11)
        alongs = 0.25 + 0.5 * (np.arange(count) + rng.uniform(0.2, 0.8, size=count)) / count
        centers = []
        for along in alongs:
            if border == 0:
                centers.append((depth * (h - 1), along * (w - 1)))
            elif border == 1:
                centers.append(((1 - depth) * (h - 1), along * (w - 1)))
            elif border == 2:
                centers.append((along * (h - 1), depth * (w - 1)))
            else:
                centers.append((along * (h - 1), (1 - depth) * (w - 1)))
    elif variant == "large":
        centers = [(rng.uniform(0.42, 0.58) * (h - 1), rng.uniform(0.42, 0.58) * (w - 1))]
    elif count == 1:
        centers = [(rng.uniform(0.30, 0.70) * (h - 1), rng.uniform(0.30, 0.70) * (w - 1))]
    else:
        # distinct quadrants keep the shapes disjoint without retry loops
        cells = rng.permutation(4)[:count]
        centers = []
        for cell in cells:
            qy, qx = divmod(int(cell), 2)
            centers.append(((0.28 + 0.44 * qy + rng.uniform(-0.04, 0.04)) * (h - 1),
                            (0.28 + 0.44 * qx + rng.uniform(-0.04, 0.04)) * (w - 1)))
    return count, centers, areas


def _set_gap(img, mask, gap):
    """Shift the foreground so the fg/bg mean-luminance gap equals ``gap``."""
    luma = luminance(img)
    fg = mask
    current = float(luma[fg].mean()) - float(luma[~fg].mean())
    img = img.copy()
    img[:, fg] += gap - current  # equal per-channel shift moves luminance 1:1
    return img


def _render(rng, h, w, labels):
    """Render (rgb, aux, mask) honoring every drawn label's postcondition."""
    count, centers, areas = _object_layout(rng, h, w, labels)
    large = "SV" in labels and len(areas) == 1 and areas[0] > 0.25
    shape_pool = ("disk", "rect") if large else ("disk", "rect", "triangle")
    kinds = [shape_pool[rng.choice(len(shape_pool))] for _ in range(count)]
    mask = np.zeros((h, w), dtype=bool)
    for (cy, cx), area, kind in zip(centers, areas, kinds):
        mask |= _shape_mask(rng, h, w, cy, cx, area, kind)
    if not mask.any() or mask.all():
        return None  # degenerate; caller retries with the next substream

    bg_luma_rgb = rng.uniform(0.42, 0.58)
    bg_luma_aux = rng.uniform(0.42, 0.58)
    # sign toward the roomy side keeps the shifted foreground inside [0,1]
    gap_rgb = rng.uniform(0.38, 0.48) * (1 if bg_luma_rgb < 0.5 else -1)
    gap_aux = rng.uniform(0.38, 0.48) * (1 if bg_luma_aux < 0.5 else -1)
    tex_amp_rgb = rng.uniform(0.09, 0.12) if "IC" in labels else rng.uniform(0.015, 0.03)
    if "IC" in labels:
        gap_rgb = rng.uniform(-0.05, 0.05)
    if "TD" in labels:
        gap_aux = rng.uniform(-0.05, 0.05)

    def compose(bg_luma, tex_amp, continue_texture):
        tex = _texture(rng, h, w, tex_amp)
        fg_tex = tex if continue_texture else _texture(rng, h, w, 0.015)
        luma = np.where(mask, bg_luma + fg_tex, bg_luma + tex)
        tint_bg = rng.uniform(-0.03, 0.03, size=3)
        tint_fg = tint_bg + rng.uniform(-0.015, 0.015, size=3) if continue_texture \
            else rng.uniform(-0.03, 0.03, size=3)
        return luma[None, :, :] + np.where(mask[None], tint_fg[:, None, None],
                                           tint_bg[:, None, None])

    rgb = compose(bg_luma_rgb, tex_amp_rgb, continue_texture="IC" in labels)
    aux = compose(bg_luma_aux, rng.uniform(0.015, 0.03), continue_texture="TD" in labels)
    rgb = np.clip(_set_gap(rgb, mask, gap_rgb), 0.0, 1.0)
    aux = np.clip(_set_gap(aux, mask, gap_aux), 0.0, 1.0)

    if "LI" in labels:
        target = rng.uniform(0.12, 0.20)
        mean_luma = float(luminance(rgb).mean())
        rgb = np.clip(rgb * (target / max(mean_luma, 1e-6)), 0.0, 1.0)

    return rgb, aux, mask


# generator-side margins are tighter than the validator thresholds so that
# 8-bit quantization cannot push an emitted sample over a limit
_GEN_MARGINS = {
    "CB": 0.145,
    "area_lo": 0.009,
    "area_hi": 0.26,
    "gap_lo": 0.09,
    "gap_hi": 0.32,
    "luma": 0.23,
    "bg_std": 0.055,
}


def _check_labels(rgb, aux, mask, labels, margins=None):
    """Return the list of violated label postconditions."""
    m = margins or {"CB": 0.15, "area_lo": 0.01, "area_hi": 0.25, "gap_lo": 0.1,
                    "gap_hi": 0.3, "luma": 0.25, "bg_std": 0.05}
    bad = []
    if not (mask > 0.5).any():
        return ["empty mask"]
    if "CB" in labels and _centroid_border_distance(mask) > m["CB"]:
        bad.append("CB: centroid not within the border band")
    if "SV" in labels:
        area = float((mask > 0.5).mean())
        if not (area < m["area_lo"] or area > m["area_hi"] or _component_count(mask) > 1):
            bad.append("SV: area/count outside the challenge bounds")
    if "IC" in labels:
        if contrast_gap(rgb, mask) >= m["gap_lo"]:
            bad.append("IC: rgb foreground/background gap too large")
        if _background_std(rgb, mask) <= m["bg_std"]:
            bad.append("IC: rgb background texture contrast too low")
    if "LI" in labels:
        if float(luminance(rgb).mean()) >= m["luma"]:
            bad.append("LI: rgb luminance not low enough")
        if contrast_gap(aux, mask) <= m["gap_hi"]:
            bad.append("LI: auxiliary contrast too low")
    if "TD" in labels:
        if contrast_gap(aux, mask) >= m["gap_lo"]:
            bad.append("TD: auxiliary foreground/background gap too large")
        if contrast_gap(rgb, mask) <= m["gap_hi"]:
            bad.append("TD: rgb contrast too low")
    return bad


def _make_sample(seed: int, index: int, mix: dict[str, float], h: int, w: int,
                 sample_id: str) -> Sample:
    for attempt in range(MAX_ATTEMPTS):
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(entropy=seed, spawn_key=(index, attempt))))
        labels = _draw_labels(rng, mix)
        rendered = _render(rng, h, w, labels)
        if rendered is None:
            continue
        rgb, aux, mask = rendered
        if (mask.sum() >= 4) and not _check_labels(rgb, aux, mask, labels, _GEN_MARGINS):
            gt = mask.astype(np.float64)[None]
            return Sample(id=sample_id, rgb=rgb, aux=aux, gt=gt, labels=labels)
    raise DatasetError(
        f"sample {sample_id}: could not satisfy labels after {MAX_ATTEMPTS} attempts"
    )


# ---------------------------------------------------------------------------
# on-disk layout
# ---------------------------------------------------------------------------


def _to_png(arr: np.ndarray) -> Image.Image:
    u8 = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    if u8.shape[0] == 1:
        return Image.fromarray(u8[0], mode="L")
    return Image.fromarray(u8.transpose(1, 2, 0), mode="RGB")


def _from_png(path: Path, expect_color: bool) -> np.ndarray:
    try:
        img = Image.open(path)
        img.load()
    except FileNotFoundError:
        raise DatasetError(f"missing dataset file: {path}")
    except OSError as exc:
        raise DatasetError(f"corrupt dataset file {path}: {exc}")
    arr = np.asarray(img, dtype=np.float64) / 255.0
    if expect_color:
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise DatasetError(f"{path}: expected an RGB image")
        return arr.transpose(2, 0, 1)
    return arr[None]


def save_sample(root: Path, sample: Sample) -> None:
    root = Path(root)
    for sub in ("rgb", "aux", "gt", "labels"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    _to_png(sample.rgb).save(root / "rgb" / f"{sample.id}.png")
    _to_png(sample.aux).save(root / "aux" / f"{sample.id}.png")
    _to_png(sample.gt).save(root / "gt" / f"{sample.id}.png")
    ordered = [c for c in CHALLENGES if c in sample.labels]
    (root / "labels" / f"{sample.id}.txt").write_text(",".join(ordered) + "\n")


def load_sample(index: DatasetIndex, sample_id: str) -> Sample:
    root = Path(index.root)
    rgb = _from_png(root / "rgb" / f"{sample_id}.png", expect_color=True)
    aux = _from_png(root / "aux" / f"{sample_id}.png", expect_color=True)
    gt_raw = _from_png(root / "gt" / f"{sample_id}.png", expect_color=False)
    gt = (gt_raw >= 128.0 / 255.0).astype(np.float64)
    label_path = root / "labels" / f"{sample_id}.txt"
    try:
        text = label_path.read_text().strip()
    except FileNotFoundError:
        raise DatasetError(f"missing dataset file: {label_path}")
    labels = {tok.strip() for tok in text.split(",") if tok.strip()}
    unknown = labels - set(CHALLENGES)
    if unknown:
        raise DatasetError(f"{label_path}: unknown challenge codes {sorted(unknown)}")
    if not labels:
        raise DatasetError(f"{label_path}: empty label set")
    return Sample(id=sample_id, rgb=rgb, aux=aux, gt=gt, labels=labels)


def iter_samples(index: DatasetIndex):
    for sample_id in index.ids:
        yield load_sample(index, sample_id)


def generate(root, seed: int, count: int, mix: dict[str, float],
             height: int = 64, width: int = 64, split: str = "train") -> DatasetIndex:
    """Generate ``count`` samples deterministically and write them under root."""
    if count < 1:
        raise ContractError("count must be >= 1")
    unknown = set(mix) - set(CHALLENGES)
    if unknown:
        raise ContractError(f"unknown challenge codes in mix: {sorted(unknown)}")
    if any(v < 0 for v in mix.values()) or sum(mix.values()) <= 0:
        raise ContractError("mix weights must be non-negative and not all zero")
    root = Path(root)
    ids = []
    for i in range(count):
        sample_id = f"{split}-{seed:05d}-{i:05d}"
        sample = _make_sample(seed, i, mix, height, width, sample_id)
        save_sample(root, sample)
        ids.append(sample_id)
    (root / "index.txt").write_text("\n".join(ids) + "\n")
    mix_text = ",".join(f"{k}:{mix[k]}" for k in CHALLENGES if k in mix)
    meta = {
        "seed": str(seed),
        "count": str(count),
        "height": str(height),
        "width": str(width),
        "split": split,
        "mix": mix_text,
    }
    (root / "meta.txt").write_text("".join(f"{k} = {v}\n" for k, v in meta.items()))
    return DatasetIndex(root=root, ids=ids, split=split, meta=meta)


def load_index(root) -> DatasetIndex:
    root = Path(root)
    try:
        ids = [line.strip() for line in (root / "index.txt").read_text().splitlines()
               if line.strip()]
    except FileNotFoundError:
        raise DatasetError(f"missing dataset index: {root / 'index.txt'}")
    meta: dict[str, str] = {}
    meta_path = root / "meta.txt"
    if meta_path.exists():
        for line in meta_path.read_text().splitlines():
            if "=" in line:
                key, _, value = line.partition("=")
                meta[key.strip()] = value.strip()
    return DatasetIndex(root=root, ids=ids, split=meta.get("split", "train"), meta=meta)


def validate_sample(sample: Sample) -> list[str]:
    """Check the sample's label postconditions on the loaded (8-bit) data."""
    issues = _check_labels(sample.rgb, sample.aux, sample.gt, sample.labels)
    binary = np.isin(sample.gt, (0.0, 1.0)).all()
    if not binary:
        issues.append("gt is not binary")
    return issues


def validate_dataset(index: DatasetIndex) -> None:
    """Raise DatasetError naming the first offending sample, if any."""
    for sample in iter_samples(index):
        issues = validate_sample(sample)
        if issues:
            raise DatasetError(f"sample {sample.id}: " + "; ".join(issues))
