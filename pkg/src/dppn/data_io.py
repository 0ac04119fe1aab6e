"""Dataset ingestion and artifact serialization."""
from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .genome import Edge, Genome, GenomeError, LinearLayer, Node, NodeKind, Transfer, validate

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
GENOME_VERSION = "DPPN1"


class DataFormatError(ValueError):
    pass


@dataclass
class ImageDataset:
    images: np.ndarray        # (N, H, W) uint8
    split: str = "train"
    source: str = ""

    def __len__(self):
        return len(self.images)

    def as_float(self) -> np.ndarray:
        return self.images.astype(np.float64) / 255.0


def _open(path, mode="rb"):
    path = Path(path)
    return gzip.open(path, mode) if path.suffix == ".gz" else open(path, mode)


# -- IDX ---------------------------------------------------------------------------


def load_idx(path, split: str = "train", allow_any_size: bool = False) -> ImageDataset:
    """Read an IDX3 image file (optionally gzipped)."""
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 16:
        raise DataFormatError(f"{path}: truncated header")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise DataFormatError(f"{path}: bad magic 0x{magic:08x}")
    if not allow_any_size and (rows, cols) != (28, 28):
        raise DataFormatError(f"{path}: images are {rows}x{cols}, expected 28x28")
    body = raw[16:]
    if len(body) != n * rows * cols:
        raise DataFormatError(f"{path}: expected {n * rows * cols} pixel bytes, found {len(body)}")
    images = np.frombuffer(body, dtype=np.uint8).reshape(n, rows, cols).copy()
    return ImageDataset(images, split, str(path))


def write_idx(images: np.ndarray, path) -> None:
    images = np.asarray(images)
    if images.ndim != 3 or images.dtype != np.uint8:
        raise ValueError("expected a (N, H, W) uint8 array")
    n, r, c = images.shape
    with _open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, r, c))
        f.write(images.tobytes())


def load_idx_labels(path) -> np.ndarray:
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 8:
        raise DataFormatError(f"{path}: truncated header")
    magic, n = struct.unpack(">II", raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise DataFormatError(f"{path}: bad magic 0x{magic:08x}")
    if len(raw) - 8 != n:
        raise DataFormatError(f"{path}: expected {n} labels, found {len(raw) - 8}")
    return np.frombuffer(raw[8:], dtype=np.uint8).copy()


def write_idx_labels(labels: np.ndarray, path) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with _open(path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.size))
        f.write(labels.tobytes())


def load_mnist_dir(path) -> tuple[ImageDataset, ImageDataset]:
    """Locate train/test IDX image files in a directory (plain or gzipped)."""
    path = Path(path)
    found = {}
    for split, stem in (("train", "train-images-idx3-ubyte"), ("test", "t10k-images-idx3-ubyte")):
        for suffix in ("", ".gz"):
            p = path / (stem + suffix)
            if p.exists():
                found[split] = load_idx(p, split)
                break
        else:
            raise FileNotFoundError(f"no {stem}[.gz] in {path}")
    return found["train"], found["test"]


# -- image directories -------------------------------------------------------------


IMAGE_SUFFIXES = {".png", ".pgm", ".bmp", ".gif", ".jpg", ".jpeg", ".tif", ".tiff"}


def load_image_dir(path, size: int = 28, threshold: float = 0.5) -> ImageDataset:
    """Load every grayscale image below ``path``, area-downsampled to ``size`` x ``size``.

    Images are flipped so that ink is bright (the minority intensity becomes
    high) and binarized at ``threshold``.
    """
    from PIL import Image

    path = Path(path)
    files = sorted(p for p in path.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise DataFormatError(f"no images found in {path}")
    out = []
    for p in files:
        with Image.open(p) as im:
            a = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
        if a.mean() > 0.5:
            a = 1.0 - a
        im = Image.fromarray(np.round(a * 255).astype(np.uint8))
        small = np.asarray(im.resize((size, size), Image.BOX), dtype=np.float64) / 255.0
        out.append(np.where(small >= threshold, 255, 0).astype(np.uint8))
    return ImageDataset(np.stack(out), "test", str(path))


# -- PGM ---------------------------------------------------------------------------


def _to_bytes(image) -> np.ndarray:
    a = np.asarray(image)
    if np.issubdtype(a.dtype, np.floating):
        a = np.rint(np.nan_to_num(a) * 255.0)
    return np.clip(a, 0, 255).astype(np.uint8)


def write_pgm(image, path) -> None:
    """Binary PGM (P5). Float images are read as intensities in [0, 1]."""
    a = _to_bytes(image)
    if a.ndim != 2:
        raise ValueError("write_pgm expects a 2-D image")
    h, w = a.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(a.tobytes())


def tile_grid(images, cols: int) -> np.ndarray:
    images = [np.asarray(im) for im in images]
    h, w = images[0].shape
    rows = -(-len(images) // cols)
    grid = np.zeros((rows * h, cols * w), dtype=images[0].dtype)
    for k, im in enumerate(images):
        r, c = divmod(k, cols)
        grid[r * h:(r + 1) * h, c * w:(c + 1) * w] = im
    return grid


def write_grid_pgm(images, cols: int, path) -> None:
    """Tile images left-to-right, top-to-bottom and write one PGM."""
    write_pgm(tile_grid([_to_bytes(im) for im in images], cols), path)


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode("ascii"))
    if tokens[0] != "P5":
        raise DataFormatError(f"{path}: not a binary PGM")
    w, h, maxval = map(int, tokens[1:])
    pix = np.frombuffer(data[pos + 1:pos + 1 + w * h], dtype=np.uint8)
    if pix.size != w * h or maxval != 255:
        raise DataFormatError(f"{path}: truncated or unsupported PGM")
    return pix.reshape(h, w).copy()


# -- genome text format ------------------------------------------------------------


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(values))


def genome_to_text(g: Genome) -> str:
    lines = [
        GENOME_VERSION,
        f"input_dim {g.input_dim}",
        f"output_dim {g.output_dim}",
        f"n_mod {g.n_mod}",
        f"seed {g.seed}",
    ]
    for n in g.nodes:
        lines.append(f"node {n.id} {n.kind.value} {n.transfer.value}")
        if n.linear is not None:
            lines.append(f"linear_weight {n.id} {_fmt(n.linear.weight)}")
            lines.append(f"linear_bias {n.id} {_fmt(n.linear.bias)}")
    for e in g.edges:
        lines.append(f"edge {e.src} {e.dst} {_fmt(e.weight)}")
    return "\n".join(lines) + "\n"


def genome_from_text(text: str) -> Genome:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0] != GENOME_VERSION:
        raise DataFormatError(f"unsupported genome version {lines[0] if lines else '<empty>'!r}")
    header: dict[str, int] = {}
    nodes: dict[int, Node] = {}
    order: list[int] = []
    linear: dict[int, dict[str, np.ndarray]] = {}
    raw_edges = []
    try:
        for ln in lines[1:]:
            key, *rest = ln.split()
            if key in ("input_dim", "output_dim", "n_mod", "seed"):
                header[key] = int(rest[0])
            elif key == "node":
                nid = int(rest[0])
                nodes[nid] = Node(nid, NodeKind(rest[1]), Transfer(rest[2]))
                order.append(nid)
            elif key in ("linear_weight", "linear_bias"):
                linear.setdefault(int(rest[0]), {})[key] = np.array([float(v) for v in rest[1:]])
            elif key == "edge":
                raw_edges.append((int(rest[0]), int(rest[1]), np.array([float(v) for v in rest[2:]])))
            else:
                raise DataFormatError(f"unknown record {key!r}")
        d_in, d_out = header["input_dim"], header["output_dim"]
    except (KeyError, ValueError, IndexError) as exc:
        if isinstance(exc, DataFormatError):
            raise
        raise DataFormatError(f"cannot parse genome: {exc}") from exc

    def width(nid):
        kind = nodes[nid].kind
        return d_in if kind is NodeKind.INPUT else d_out if kind is NodeKind.OUTPUT else 1

    for nid, parts in linear.items():
        try:
            lin = LinearLayer(parts["linear_weight"].reshape(d_in, d_in), parts["linear_bias"].reshape(d_in))
            n = nodes[nid]
        except (KeyError, ValueError) as exc:
            raise DataFormatError(f"bad linear layer on node {nid}") from exc
        nodes[nid] = Node(n.id, n.kind, n.transfer, lin)
    edges = []
    for src, dst, w in raw_edges:
        if src not in nodes or dst not in nodes:
            raise DataFormatError(f"edge ({src}, {dst}) references a missing node")
        try:
            edges.append(Edge(src, dst, w.reshape(width(src), width(dst))))
        except ValueError as exc:
            raise DataFormatError(f"edge ({src}, {dst}) has {w.size} weights") from exc
    g = Genome(tuple(nodes[i] for i in order), tuple(edges), d_in, d_out,
               header.get("n_mod", 28), header.get("seed", 0))
    try:
        checked = validate(g)
    except GenomeError as exc:
        raise DataFormatError(f"genome failed validation: {exc}") from exc
    return checked


def save_genome(g: Genome, path) -> None:
    Path(path).write_text(genome_to_text(g))


def load_genome(path) -> Genome:
    return genome_from_text(Path(path).read_text())


# -- run metrics -------------------------------------------------------------------


@dataclass
class MetricsRow:
    tournament: int
    best_fitness: float
    winner_fitness: float
    loser_fitness: float
    best_param_count: int
    winner: int
    loser: int
    crossover: int
    wall_time: float = field(default=0.0, compare=False)


CSV_FIELDS = [f.name for f in fields(MetricsRow) if f.name != "wall_time"]


@dataclass
class RunMetrics:
    rows: list[MetricsRow] = field(default_factory=list)
    final_test_loss: float = float("nan")
    seed: int = 0

    def append(self, row: MetricsRow) -> None:
        if self.rows and row.tournament <= self.rows[-1].tournament:
            raise ValueError("tournament index must increase")
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)


def write_metrics_csv(metrics: RunMetrics, path) -> None:
    """One row per tournament. Wall-clock time is kept out so reruns compare bit-identically."""
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in metrics.rows:
            d = asdict(row)
            d.pop("wall_time")
            w.writerow({k: repr(float(v)) if isinstance(v, (float, np.floating)) else int(v)
                        for k, v in d.items()})


def read_metrics_csv(path) -> RunMetrics:
    types = {f.name: f.type for f in fields(MetricsRow)}
    out = RunMetrics()
    with open(path, newline="") as f:
        for rec in csv.DictReader(f):
            vals = {k: (float(v) if types[k] in (float, "float") else int(v)) for k, v in rec.items()}
            out.append(MetricsRow(**vals))
    return out


def write_timing_csv(metrics: RunMetrics, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["tournament", "wall_time"])
        for row in metrics.rows:
            w.writerow([row.tournament, f"{row.wall_time:.6f}"])
