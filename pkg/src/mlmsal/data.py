"""Datasets: synthetic shape generator, directory loader, paired batcher."""
import itertools
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage
from skimage import draw

from .errors import ConfigurationError, IngestionError, StorageError
from .supervision import extract_foreground_contour

SHAPES = ("rectangle", "ellipse", "triangle", "annulus")
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


@dataclass
class SampleRecord:
    image: np.ndarray  # (3, H, W) float in [0, 1]
    target: np.ndarray  # (H, W)
    kind: str
    id: str
    original_size: tuple = None


@dataclass
class SyntheticSpec:
    count: int = 8
    canvas_size: int = 64
    shapes: tuple = SHAPES
    fg_range: tuple = (0.6, 1.0)
    bg_range: tuple = (0.0, 0.35)
    noise: float = 0.04
    clutter_lines: int = 3
    seed: int = 0
    min_area: float = 0.05
    max_area: float = 0.60

    def __post_init__(self):
        self.shapes = tuple(self.shapes)
        self.fg_range = tuple(float(v) for v in self.fg_range)
        self.bg_range = tuple(float(v) for v in self.bg_range)
        if self.count < 0:
            raise ConfigurationError("count must be non-negative")
        if self.canvas_size < 16:
            raise ConfigurationError("canvas_size must be at least 16")
        if not self.shapes:
            raise ConfigurationError("shapes must be non-empty")
        bad = set(self.shapes) - set(SHAPES)
        if bad:
            raise ConfigurationError(f"unknown shape(s) {sorted(bad)}; choose from {SHAPES}")
        lo_f, hi_f = self.fg_range
        lo_b, hi_b = self.bg_range
        if not (0 <= lo_f <= hi_f <= 1 and 0 <= lo_b <= hi_b <= 1):
            raise ConfigurationError("intensity ranges must be ordered within [0, 1]")
        gap = max(lo_f - hi_b, lo_b - hi_f)
        if gap < 0.2:
            raise ConfigurationError(
                f"fg_range and bg_range must be disjoint by >= 0.2, gap is {gap:.3f}"
            )
        if not 0 < self.min_area < self.max_area < 1:
            raise ConfigurationError("need 0 < min_area < max_area < 1")

    @classmethod
    def from_dict(cls, d):
        from .model import from_mapping

        return from_mapping(cls, dict(d), "synthetic spec")

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


# --------------------------------------------------------------------------
# Synthetic generation
# --------------------------------------------------------------------------

def _draw_shape(kind, n, rng):
    mask = np.zeros((n, n), dtype=bool)
    cy, cx = rng.uniform(0.25 * n, 0.75 * n, size=2)
    if kind == "rectangle":
        h, w = rng.uniform(0.2 * n, 0.75 * n, size=2)
        r0, r1 = int(round(cy - h / 2)), int(round(cy + h / 2))
        c0, c1 = int(round(cx - w / 2)), int(round(cx + w / 2))
        mask[max(r0, 0):min(r1, n), max(c0, 0):min(c1, n)] = True
    elif kind == "ellipse":
        ry, rx = rng.uniform(0.12 * n, 0.4 * n, size=2)
        rr, cc = draw.ellipse(cy, cx, ry, rx, shape=mask.shape, rotation=rng.uniform(0, np.pi))
        mask[rr, cc] = True
    elif kind == "triangle":
        radius = rng.uniform(0.2 * n, 0.45 * n)
        angles = rng.uniform(0, 2 * np.pi) + np.array([0, 2 * np.pi / 3, 4 * np.pi / 3])
        angles += rng.uniform(-0.4, 0.4, size=3)
        rr, cc = draw.polygon(cy + radius * np.sin(angles), cx + radius * np.cos(angles),
                              shape=mask.shape)
        mask[rr, cc] = True
    else:  # annulus
        outer = rng.uniform(0.22 * n, 0.42 * n)
        inner = outer * rng.uniform(0.35, 0.6)
        yy, xx = np.mgrid[:n, :n]
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2
        mask = (d2 <= outer ** 2) & (d2 >= inner ** 2)
    return mask


def random_mask(rng, canvas_size=64, shapes=SHAPES, min_area=0.05, max_area=0.60):
    """One filled shape whose area fraction lies in [min_area, max_area].

    Returns ``(mask, shape_name)``.
    """
    while True:
        kind = shapes[rng.integers(len(shapes))]
        mask = _draw_shape(kind, canvas_size, rng)
        if min_area <= mask.mean() <= max_area:
            return mask, kind


def _texture(rng, n, amplitude):
    noise = ndimage.gaussian_filter(rng.standard_normal((3, n, n)), sigma=(0, 1.5, 1.5))
    noise /= max(np.abs(noise).max(), 1e-12)
    return amplitude * noise


def _make_sample(spec, rng):
    n = spec.canvas_size
    mask, _ = random_mask(rng, n, spec.shapes, spec.min_area, spec.max_area)
    fg = rng.uniform(*spec.fg_range, size=3)
    bg = rng.uniform(*spec.bg_range, size=3)
    img = np.where(mask[None], fg[:, None, None], bg[:, None, None])
    img = np.clip(img + _texture(rng, n, spec.noise), 0.0, 1.0)

    # edge-image variant: same scene plus line clutter on the background
    edge_img = img.copy()
    lines = np.zeros((n, n), dtype=bool)
    for _ in range(spec.clutter_lines):
        r0, c0, r1, c1 = rng.integers(0, n, size=4)
        rr, cc = draw.line(r0, c0, r1, c1)
        keep = ~mask[rr, cc]
        rr, cc = rr[keep], cc[keep]
        lines[rr, cc] = True
        shade = rng.uniform(*spec.fg_range)
        edge_img[:, rr, cc] = shade
    contour = extract_foreground_contour(mask.astype(np.uint8))
    edges = contour | lines
    return img, mask, edge_img, edges


def _to_u8(a):
    return np.round(np.clip(a, 0, 1) * 255).astype(np.uint8)


def _save_png(arr, path):
    try:
        Image.fromarray(arr).save(path, format="PNG")
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


def generate_synthetic(spec, out_dir):
    """Write ``saliency/{images,targets}`` and ``edge/{images,targets}`` under
    ``out_dir``; returns the two dataset roots."""
    out = Path(out_dir)
    roots = {"saliency": out / "saliency", "edge": out / "edge"}
    try:
        for root in roots.values():
            (root / "images").mkdir(parents=True, exist_ok=True)
            (root / "targets").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StorageError(f"cannot create dataset directories under {out}: {exc}") from exc
    rng = np.random.default_rng(spec.seed)
    for idx in range(spec.count):
        img, mask, edge_img, edges = _make_sample(spec, rng)
        sid = f"syn_{idx:04d}"
        _save_png(_to_u8(img.transpose(1, 2, 0)), roots["saliency"] / "images" / f"{sid}.png")
        _save_png(mask.astype(np.uint8) * 255, roots["saliency"] / "targets" / f"{sid}.png")
        _save_png(_to_u8(edge_img.transpose(1, 2, 0)), roots["edge"] / "images" / f"{sid}.png")
        _save_png(edges.astype(np.uint8) * 255, roots["edge"] / "targets" / f"{sid}.png")
    return roots["saliency"], roots["edge"]


# --------------------------------------------------------------------------
# Loading
# --------------------------------------------------------------------------

def read_image(path):
    """RGB image as a (3, H, W) float array in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1)


def resize_image(img, size):
    if img.shape[1:] == (size, size):
        return img
    pil = Image.fromarray(_to_u8(img.transpose(1, 2, 0)))
    pil = pil.resize((size, size), Image.BILINEAR)
    return np.asarray(pil, dtype=np.float64).transpose(2, 0, 1) / 255.0


def _read_gray(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64)


def _resize_gray(a, size, kind):
    h, w = a.shape
    if (h, w) == (size, size):
        return a
    if kind == "edge" and h == w and h % size == 0:
        f = h // size
        return a.reshape(size, f, size, f).max(axis=(1, 3))
    pil = Image.fromarray(a.astype(np.float32), mode="F").resize((size, size), Image.BILINEAR)
    return np.asarray(pil, dtype=np.float64)


def _load_target(path, kind, size):
    if path.is_dir():
        # several annotators: average into one soft map
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise IngestionError(f"annotation directory {path} is empty")
        raw = np.mean([_read_gray(f) for f in files], axis=0)
    else:
        raw = _read_gray(path)
    if size is not None:
        raw = _resize_gray(raw, size, kind)
    if kind == "saliency":
        return (raw >= 128).astype(np.float64)
    return np.clip(raw / 255.0, 0.0, 1.0)


def _index(dirpath, allow_dirs=False):
    if not dirpath.is_dir():
        return {}
    out = {}
    for p in dirpath.iterdir():
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES:
            out[p.stem] = p
        elif allow_dirs and p.is_dir():
            out[p.name] = p
    return out


def load_dataset(root, kind, input_size=None, flip=False):
    """Load ``root/images`` + ``root/targets`` pairs sorted by id.

    Saliency masks are binarised at 128; edge targets stay soft in [0, 1].
    ``flip=True`` appends horizontally mirrored copies (ids suffixed ``_flip``).
    """
    if kind not in ("saliency", "edge"):
        raise ConfigurationError(f"unknown dataset kind {kind!r}")
    root = Path(root)
    if not root.is_dir():
        raise IngestionError(f"dataset root {root} does not exist")
    images = _index(root / "images")
    targets = _index(root / "targets", allow_dirs=True)
    orphans = sorted(set(images) ^ set(targets))
    if orphans:
        raise IngestionError(f"{root}: missing image/target counterpart for id(s) {orphans}")
    records = []
    for sid in sorted(images):
        try:
            img = read_image(images[sid])
            target = _load_target(targets[sid], kind, input_size)
        except OSError as exc:
            raise IngestionError(f"{root}: cannot read sample {sid!r}: {exc}") from exc
        orig = img.shape[1:]
        if input_size is not None:
            img = resize_image(img, input_size)
        if img.shape[1:] != target.shape:
            raise IngestionError(f"{root}: {sid} image {img.shape[1:]} vs target {target.shape}")
        records.append(SampleRecord(img, target, kind, sid, orig))
        if flip:
            records.append(SampleRecord(img[:, :, ::-1].copy(), target[:, ::-1].copy(),
                                        kind, sid + "_flip", orig))
    return records


# --------------------------------------------------------------------------
# Pairing
# --------------------------------------------------------------------------

def _recycled(n, length, rng):
    parts, total = [], 0
    while total < length:
        parts.append(rng.permutation(n))
        total += n
    return np.concatenate(parts)[:length]


def paired_indices(n_sal, n_edge, seed):
    """Endless stream of ``(saliency_index, edge_index)``.

    One epoch has ``max(n_sal, n_edge)`` pairs; the shorter side is reshuffled
    and recycled to fill it.
    """
    if n_sal <= 0 or n_edge <= 0:
        raise ConfigurationError("both saliency and edge collections must be non-empty")
    rng = np.random.default_rng(seed)
    length = max(n_sal, n_edge)
    while True:
        s = _recycled(n_sal, length, rng)
        e = _recycled(n_edge, length, rng)
        yield from zip(s.tolist(), e.tolist())


def paired_batches(sal, edge, seed, start=0):
    """Stream of ``(saliency_record, edge_record)`` pairs, skipping the first
    ``start`` pairs (used when resuming)."""
    if not sal or not edge:
        raise ConfigurationError("both saliency and edge collections must be non-empty")
    stream = paired_indices(len(sal), len(edge), seed)
    for i, j in itertools.islice(stream, start, None):
        yield sal[i], edge[j]
