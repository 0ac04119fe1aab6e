import gzip
import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dppn.data_io import (
    DataFormatError, MetricsRow, RunMetrics, genome_from_text, genome_to_text, load_genome,
    load_idx, load_idx_labels, load_image_dir, load_mnist_dir, read_metrics_csv, read_pgm,
    save_genome, write_grid_pgm, write_idx, write_idx_labels, write_metrics_csv, write_pgm,
)
from dppn.genome import mutate_add_edge, mutate_add_node, new_fully_connected, new_minimal

MNIST5K = Path(__file__).resolve().parents[1] / "data" / "mnist5k"


# -- IDX ---------------------------------------------------------------------------


@pytest.mark.parametrize("suffix", ["", ".gz"])
def test_idx_round_trip(tmp_path, suffix):
    imgs = np.random.default_rng(0).integers(0, 256, (7, 28, 28), dtype=np.uint8)
    path = tmp_path / ("x.idx" + suffix)
    write_idx(imgs, path)
    back = load_idx(path)
    assert back.images.dtype == np.uint8 and np.array_equal(back.images, imgs)


def test_idx_header_is_big_endian(tmp_path):
    write_idx(np.zeros((3, 28, 28), np.uint8), tmp_path / "x")
    raw = (tmp_path / "x").read_bytes()
    assert raw[:16] == bytes.fromhex("00000803" "00000003" "0000001c" "0000001c")
    assert len(raw) == 16 + 3 * 784


def test_idx_truncated(tmp_path):
    write_idx(np.zeros((4, 28, 28), np.uint8), tmp_path / "x")
    raw = (tmp_path / "x").read_bytes()
    (tmp_path / "short").write_bytes(raw[:-1])
    (tmp_path / "head").write_bytes(raw[:10])
    for name in ("short", "head"):
        with pytest.raises(DataFormatError):
            load_idx(tmp_path / name)


def test_idx_bad_magic(tmp_path):
    (tmp_path / "x").write_bytes(struct.pack(">IIII", 0x0803FFFF, 0, 28, 28))
    with pytest.raises(DataFormatError, match="magic"):
        load_idx(tmp_path / "x")


def test_idx_wrong_size_needs_flag(tmp_path):
    write_idx(np.zeros((2, 105, 105), np.uint8), tmp_path / "x")
    with pytest.raises(DataFormatError):
        load_idx(tmp_path / "x")
    assert load_idx(tmp_path / "x", allow_any_size=True).images.shape == (2, 105, 105)


def test_labels_round_trip(tmp_path):
    lab = np.arange(10, dtype=np.uint8)
    write_idx_labels(lab, tmp_path / "l.gz")
    assert np.array_equal(load_idx_labels(tmp_path / "l.gz"), lab)
    with gzip.open(tmp_path / "l.gz", "rb") as f:
        raw = f.read()
    (tmp_path / "bad").write_bytes(raw[:-2])
    with pytest.raises(DataFormatError):
        load_idx_labels(tmp_path / "bad")


@pytest.mark.skipif(not MNIST5K.exists(), reason="bundled subset missing")
def test_bundled_subset_counts():
    train, test = load_mnist_dir(MNIST5K)
    assert (len(train), len(test)) == (4000, 1000)
    assert train.images.shape[1:] == (28, 28) and train.split == "train" and test.split == "test"
    labels = load_idx_labels(MNIST5K / "train-labels-idx1-ubyte.gz")
    assert labels.size == 4000 and set(labels.tolist()) == set(range(10))


def test_mnist_dir_missing(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_mnist_dir(tmp_path)


def test_loader_is_deterministic(tmp_path):
    write_idx(np.random.default_rng(3).integers(0, 256, (5, 28, 28), dtype=np.uint8), tmp_path / "x")
    assert np.array_equal(load_idx(tmp_path / "x").images, load_idx(tmp_path / "x").images)


# -- image directories -------------------------------------------------------------


def glyph(rng, size=105):
    """A white sheet with a few dark pen strokes, like a scanned character."""
    from PIL import Image, ImageDraw

    im = Image.new("L", (size, size), 255)
    draw = ImageDraw.Draw(im)
    for _ in range(rng.integers(2, 5)):
        pts = [tuple(int(v) for v in rng.integers(15, size - 15, 2)) for _ in range(3)]
        draw.line(pts, fill=0, width=int(rng.integers(6, 10)))
    return im


def test_image_dir_empty(tmp_path):
    with pytest.raises(DataFormatError):
        load_image_dir(tmp_path)


def test_image_dir_single_glyph(tmp_path):
    glyph(np.random.default_rng(0)).save(tmp_path / "a.png")
    ds = load_image_dir(tmp_path)
    assert ds.images.shape == (1, 28, 28) and ds.images.dtype == np.uint8
    assert set(np.unique(ds.images)) <= {0, 255}


def test_image_dir_polarity_and_ink(tmp_path):
    rng = np.random.default_rng(1)
    sub = tmp_path / "alphabet" / "char01"
    sub.mkdir(parents=True)
    for k in range(20):
        glyph(rng).save(sub / f"{k:02d}.png")
    ds = load_image_dir(tmp_path)
    ink = ds.as_float().mean()
    assert len(ds) == 20 and 0.05 <= ink <= 0.5
    # the border is background, so it must come out dark after the flip
    assert ds.images[:, 0, :].max() == 0


# -- PGM ---------------------------------------------------------------------------


def test_pgm_header_and_pixels(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (28, 28), dtype=np.uint8)
    write_pgm(img, tmp_path / "a.pgm")
    raw = (tmp_path / "a.pgm").read_bytes()
    assert raw.startswith(b"P5\n28 28\n255\n") and len(raw) == 13 + 784
    assert np.array_equal(read_pgm(tmp_path / "a.pgm"), img)


def test_pgm_grid_size(tmp_path):
    imgs = np.random.default_rng(0).random((100, 28, 28))
    write_grid_pgm(imgs, 10, tmp_path / "g.pgm")
    grid = read_pgm(tmp_path / "g.pgm")
    assert grid.shape == (280, 280)
    assert np.array_equal(grid[28:56, 56:84], np.rint(imgs[12] * 255).astype(np.uint8))


def test_pgm_clamps(tmp_path):
    write_pgm(np.array([[-0.5, 0.0, 0.5, 1.0, 3.0, np.nan]]), tmp_path / "f.pgm")
    assert read_pgm(tmp_path / "f.pgm").tolist() == [[0, 0, 128, 255, 255, 0]]
    write_pgm(np.array([[-20, 300]]), tmp_path / "i.pgm")
    assert read_pgm(tmp_path / "i.pgm").tolist() == [[0, 255]]


def test_pgm_rejects_ascii(tmp_path):
    (tmp_path / "p2.pgm").write_bytes(b"P2\n1 1\n255\n0\n")
    with pytest.raises(DataFormatError):
        read_pgm(tmp_path / "p2.pgm")


# -- genome text -------------------------------------------------------------------


def grown(seed, input_dim=8, output_dim=2, linear=False):
    rng = np.random.default_rng(seed)
    g = new_minimal(input_dim, output_dim, rng, linear_input=linear)
    for _ in range(rng.integers(0, 6)):
        g = mutate_add_node(g, rng)
        g = mutate_add_edge(g, rng)
    return g


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), linear=st.booleans())
def test_genome_round_trip_bitwise(seed, linear):
    g = grown(seed, linear=linear)
    back = genome_from_text(genome_to_text(g))
    assert back.nodes == g.nodes and back.edges == g.edges
    assert back.weights().tobytes() == g.weights().tobytes()
    assert (back.input_dim, back.output_dim, back.n_mod, back.seed) == (g.input_dim, g.output_dim, g.n_mod, g.seed)


def test_genome_file_round_trip(tmp_path):
    g = new_fully_connected(4, 6, 5, 3)
    save_genome(g, tmp_path / "g.txt")
    assert load_genome(tmp_path / "g.txt").weights().tobytes() == g.weights().tobytes()


def test_genome_one_edge_per_line():
    g = new_fully_connected(8, 1, 4, 0)
    text = genome_to_text(g)
    assert text.splitlines()[0] == "DPPN1"
    assert sum(ln.startswith("edge ") for ln in text.splitlines()) == len(g.edges)


def test_genome_hand_edited_cycle():
    g = mutate_add_node(new_minimal(8, 1, 0), np.random.default_rng(0))
    hidden = g.nodes[1].id
    text = genome_to_text(g) + f"edge 1 {hidden} 0.5\n"
    with pytest.raises(DataFormatError, match="validation"):
        genome_from_text(text)


@pytest.mark.parametrize("text", ["", "DPPN0\n", "DPPN1\ninput_dim x\n", "DPPN1\nbogus 1\n",
                                  "DPPN1\ninput_dim 8\noutput_dim 1\nnode 0 input identity\n"
                                  "node 1 output identity\nedge 0 1 1.0\n"])
def test_genome_bad_text(text):
    with pytest.raises(DataFormatError):
        genome_from_text(text)


# -- metrics -----------------------------------------------------------------------


def metrics(n):
    m = RunMetrics()
    rng = np.random.default_rng(n)
    for t in range(1, n + 1):
        a, b = -rng.random(2)
        m.append(MetricsRow(t, max(a, b), max(a, b), min(a, b), int(rng.integers(10, 99)),
                            int(rng.integers(0, 8)), int(rng.integers(0, 8)), int(rng.integers(0, 2)),
                            wall_time=float(t)))
    return m


def test_metrics_header_only(tmp_path):
    write_metrics_csv(RunMetrics(), tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert len(lines) == 1 and lines[0].startswith("tournament,best_fitness")
    assert "wall_time" not in lines[0]


def test_metrics_round_trip(tmp_path):
    m = metrics(25)
    write_metrics_csv(m, tmp_path / "m.csv")
    assert len((tmp_path / "m.csv").read_text().splitlines()) == 26
    assert read_metrics_csv(tmp_path / "m.csv").rows == m.rows


def test_metrics_tournaments_increase():
    m = metrics(2)
    with pytest.raises(ValueError):
        m.append(MetricsRow(2, 0.0, 0.0, 0.0, 1, 0, 1, 0))
