"""Target networks whose parameters are generated by a DPPN.

Both autoencoders take their parameters as one flat vector, so a DPPN output
matrix can be copied in through a :class:`ParamLayout` and gradients can be
copied back out the same way.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

log = logging.getLogger(__name__)

BCE_CLAMP = 1e-7

FC_PARAMS_PAPER = 157684
CONV_PARAMS_PAPER = 202


# -- losses --------------------------------------------------------------------


def loss_mse(x, y) -> float:
    return float(np.mean((np.asarray(y) - np.asarray(x)) ** 2))


def loss_mse_grad(x, y) -> np.ndarray:
    """dMSE/dy for clean target ``x`` and prediction ``y``."""
    y = np.asarray(y, dtype=np.float64)
    return 2.0 * (y - x) / y.size


def loss_bce(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.clip(np.asarray(y, dtype=np.float64), BCE_CLAMP, 1.0 - BCE_CLAMP)
    return float(np.mean(-(x * np.log(y) + (1.0 - x) * np.log(1.0 - y))))


def loss_bce_grad(x, y) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    yc = np.clip(y, BCE_CLAMP, 1.0 - BCE_CLAMP)
    g = (yc - x) / (yc * (1.0 - yc)) / y.size
    return np.where((y > BCE_CLAMP) & (y < 1.0 - BCE_CLAMP), g, 0.0)


LOSSES = {"mse": (loss_mse, loss_mse_grad), "bce": (loss_bce, loss_bce_grad)}


def loss_value(kind: str, x, y) -> float:
    return LOSSES[kind][0](x, y)


def loss_grad(kind: str, x, y) -> np.ndarray:
    return LOSSES[kind][1](x, y)


# -- parameter layout ------------------------------------------------------------


@dataclass
class ParamLayout:
    """Substrate parameter ``i`` is read from DPPN output ``[rows[i], cols[i]]``."""

    rows: np.ndarray
    cols: np.ndarray
    n_rows: int
    n_outputs: int

    def __post_init__(self):
        flat = self.rows * self.n_outputs + self.cols
        if np.unique(flat).size != flat.size:
            raise ValueError("layout maps two parameters onto the same DPPN output")

    @property
    def n_used(self) -> int:
        return self.rows.size

    @property
    def n_discarded(self) -> int:
        return self.n_rows * self.n_outputs - self.n_used

    def gather(self, outputs: np.ndarray) -> np.ndarray:
        if outputs.shape != (self.n_rows, self.n_outputs):
            raise ValueError(f"DPPN output shape {outputs.shape} does not match layout")
        return outputs[self.rows, self.cols]

    def scatter_grad(self, d_params: np.ndarray) -> np.ndarray:
        d_out = np.zeros((self.n_rows, self.n_outputs))
        d_out[self.rows, self.cols] = d_params
        return d_out


def grid_coords(side: int) -> np.ndarray:
    """Evenly spaced coordinates in [-1, 1] along one axis."""
    if side == 1:
        return np.zeros(1)
    return np.linspace(-1.0, 1.0, side)


# -- fully connected autoencoder -----------------------------------------------------


@dataclass
class FCAutoencoder:
    """Sigmoid encoder/decoder; parameters ``[W_enc, b_hidden, W_dec, b_out]`` flattened row-major."""

    params: np.ndarray
    side: int = 28
    n_hidden: int = 100

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (self.n_params_for(self.side, self.n_hidden),):
            raise ValueError(f"expected {self.n_params_for(self.side, self.n_hidden)} parameters")

    @staticmethod
    def n_params_for(side: int, n_hidden: int) -> int:
        p = side * side
        return 2 * p * n_hidden + p + n_hidden

    @property
    def n_params(self) -> int:
        return self.params.size

    @property
    def n_pixels(self) -> int:
        return self.side * self.side

    def _split(self, vec):
        p, h = self.n_pixels, self.n_hidden
        i = 0
        w_enc = vec[i:i + h * p].reshape(h, p); i += h * p
        b_hid = vec[i:i + h]; i += h
        w_dec = vec[i:i + p * h].reshape(p, h); i += p * h
        b_out = vec[i:i + p]
        return w_enc, b_hid, w_dec, b_out

    @property
    def w_enc(self):
        return self._split(self.params)[0]

    @property
    def b_hidden(self):
        return self._split(self.params)[1]

    @property
    def w_dec(self):
        return self._split(self.params)[2]

    @property
    def b_out(self):
        return self._split(self.params)[3]

    def forward(self, x):
        """``x``: (B, side, side) or (B, side*side). Returns (reconstruction, tape)."""
        shape = np.shape(x)
        xf = np.asarray(x, dtype=np.float64).reshape(shape[0], -1)
        w_enc, b_hid, w_dec, b_out = self._split(self.params)
        h = expit(xf @ w_enc.T + b_hid)
        y = expit(h @ w_dec.T + b_out)
        return y.reshape(shape), (xf, h, y)

    def backward(self, tape, d_recon) -> np.ndarray:
        xf, h, y = tape
        dy = np.asarray(d_recon, dtype=np.float64).reshape(y.shape) * y * (1.0 - y)
        w_enc, b_hid, w_dec, b_out = self._split(self.params)
        d_w_dec = dy.T @ h
        d_b_out = dy.sum(axis=0)
        dh = (dy @ w_dec) * h * (1.0 - h)
        d_w_enc = dh.T @ xf
        d_b_hid = dh.sum(axis=0)
        return np.concatenate([d_w_enc.ravel(), d_b_hid, d_w_dec.ravel(), d_b_out])

    @classmethod
    def random(cls, rng, side=28, n_hidden=100):
        """Directly encoded initialisation (uniform Glorot range per layer)."""
        p = side * side
        lim = np.sqrt(6.0 / (p + n_hidden))
        vec = np.concatenate([
            rng.uniform(-lim, lim, n_hidden * p), np.zeros(n_hidden),
            rng.uniform(-lim, lim, p * n_hidden), np.zeros(p),
        ])
        return cls(vec, side, n_hidden)


def fc_layout(side: int = 28, hidden_side: int = 10):
    """Coordinate batch and layout for a 2-output DPPN encoding an :class:`FCAutoencoder`.

    Row vector: ``(x_in, y_in, x_out, y_out, D_in, D_out, layer, 1)``. Rows are
    in parameter order, so parameter ``i`` comes from row ``i``; output column
    0 serves the encoder layer and column 1 the decoder layer.
    """
    pix = _grid_points(side)          # (P, 2) row-major (y outer, x inner)
    hid = _grid_points(hidden_side)   # (H, 2)
    P, H = len(pix), len(hid)
    zero = np.zeros((1, 2))

    # weights enumerate the receiving neuron (outer) then the sending neuron (inner)
    enc_w = _pairs(src=pix, dst=hid, layer=-1.0)
    enc_b = _pairs(src=zero, dst=hid, layer=-1.0)
    dec_w = _pairs(src=hid, dst=pix, layer=1.0)
    dec_b = _pairs(src=zero, dst=pix, layer=1.0)
    coords = np.vstack([enc_w, enc_b, dec_w, dec_b])
    n = len(coords)
    n_enc = H * P + H
    cols = np.where(np.arange(n) < n_enc, 0, 1)
    layout = ParamLayout(np.arange(n), cols, n, 2)
    expected = FCAutoencoder.n_params_for(side, hidden_side * hidden_side)
    if n != expected:
        raise RuntimeError(f"fc layout has {n} rows, substrate needs {expected}")
    if (side, hidden_side) == (28, 10) and n != FC_PARAMS_PAPER:
        raise RuntimeError(f"fc layout has {n} rows, expected {FC_PARAMS_PAPER}")
    return coords, layout


def _grid_points(side: int) -> np.ndarray:
    g = grid_coords(side)
    yy, xx = np.meshgrid(g, g, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel()])


def _pairs(src, dst, layer):
    n = len(src) * len(dst)
    s = np.tile(src, (len(dst), 1))          # inner: sending neuron
    d = np.repeat(dst, len(src), axis=0)     # outer: receiving neuron
    return np.column_stack([
        s, d, np.hypot(s[:, 0], s[:, 1]), np.hypot(d[:, 0], d[:, 1]),
        np.full(n, layer), np.ones(n),
    ])


# -- convolutional autoencoder -------------------------------------------------------


@dataclass
class ConvAutoencoder:
    """Strided conv encoder and transposed-conv decoder, ReLU on both layers.

    Parameters ``[enc_kernels (C,k,k), enc_bias (C), dec_kernels (C,k,k), dec_bias (C)]``.
    The decoder is the adjoint of the encoder geometry, so it restores the
    input size; each channel's decoded map gets its own bias before the
    channels are summed.
    """

    params: np.ndarray
    side: int = 28
    kernel: int = 7
    stride: int = 2
    pad: int = 3
    channels: int = 2

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (self.n_params_for(self.kernel, self.channels),):
            raise ValueError(f"expected {self.n_params_for(self.kernel, self.channels)} parameters")
        if self.stride * (self.out_side - 1) + self.kernel > self.side + 2 * self.pad:
            raise ValueError("inconsistent convolution geometry")

    @staticmethod
    def n_params_for(kernel: int = 7, channels: int = 2) -> int:
        return 2 * channels * kernel * kernel + 2 * channels

    @property
    def n_params(self) -> int:
        return self.params.size

    @property
    def out_side(self) -> int:
        return (self.side + 2 * self.pad - self.kernel) // self.stride + 1

    def _split(self):
        C, k = self.channels, self.kernel
        kk = C * k * k
        v = self.params
        return (v[:kk].reshape(C, k, k), v[kk:kk + C],
                v[kk + C:2 * kk + C].reshape(C, k, k), v[2 * kk + C:])

    @property
    def enc_kernels(self):
        return self._split()[0]

    @property
    def dec_kernels(self):
        return self._split()[2]

    def _windows(self, padded):
        s, O = self.stride, self.out_side
        w = sliding_window_view(padded, (self.kernel, self.kernel), axis=(1, 2))
        return w[:, :s * (O - 1) + 1:s, :s * (O - 1) + 1:s]   # (B, O, O, k, k)

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        shape = x.shape
        x = x.reshape(-1, self.side, self.side)
        B, p, s, O, k = x.shape[0], self.pad, self.stride, self.out_side, self.kernel
        ek, eb, dk, db = self._split()
        xpad = np.pad(x, ((0, 0), (p, p), (p, p)))
        win = self._windows(xpad).reshape(B * O * O, k * k)
        h_pre = (win @ ek.reshape(self.channels, -1).T).reshape(B, O, O, self.channels) + eb
        h = np.maximum(h_pre, 0.0)
        # transposed convolution: scatter every hidden unit through its decoder kernel
        cols = h.reshape(-1, self.channels) @ dk.reshape(self.channels, -1)   # (B*O*O, k*k)
        cols = cols.reshape(B, O, O, k, k)
        big = np.zeros((B, self.side + 2 * p, self.side + 2 * p))
        span = s * (O - 1) + 1
        for ky in range(k):
            for kx in range(k):
                big[:, ky:ky + span:s, kx:kx + span:s] += cols[:, :, :, ky, kx]
        y_pre = big[:, p:p + self.side, p:p + self.side] + db.sum()
        y = np.maximum(y_pre, 0.0)
        return y.reshape(shape), (xpad, h_pre, h, y_pre)

    def backward(self, tape, d_recon) -> np.ndarray:
        xpad, h_pre, h, y_pre = tape
        B, p, k, C = xpad.shape[0], self.pad, self.kernel, self.channels
        O = self.out_side
        ek, eb, dk, db = self._split()
        dy = np.asarray(d_recon, dtype=np.float64).reshape(y_pre.shape) * (y_pre > 0)
        d_db = np.full(C, dy.sum())
        dpad = np.pad(dy, ((0, 0), (p, p), (p, p)))
        dwin = self._windows(dpad).reshape(B * O * O, k * k)
        hf = h.reshape(-1, C)
        d_dk = hf.T @ dwin
        dh = (dwin @ dk.reshape(C, -1).T).reshape(h.shape) * (h_pre > 0)
        d_eb = dh.reshape(-1, C).sum(axis=0)
        win = self._windows(xpad).reshape(B * O * O, k * k)
        d_ek = dh.reshape(-1, C).T @ win
        return np.concatenate([d_ek.ravel(), d_eb, d_dk.ravel(), d_db])


def conv_layout(kernel: int = 7, channels: int = 2):
    """``kernel**2`` rows of ``(x, y, r, 1)``; columns map to kernels, then biases.

    Columns ``0..C-1`` give encoder kernels, ``C..2C-1`` decoder kernels,
    column ``2C`` the encoder biases (rows ``0..C-1``) and column ``2C+1`` the
    decoder biases (rows ``0..C-1``).
    """
    pts = _grid_points(kernel)
    n = len(pts)
    coords = np.column_stack([pts, np.hypot(pts[:, 0], pts[:, 1]), np.ones(n)])
    r = np.arange(n)
    rows, cols = [], []
    for c in range(channels):
        rows.append(r); cols.append(np.full(n, c))
    rows.append(np.arange(channels)); cols.append(np.full(channels, 2 * channels))
    for c in range(channels):
        rows.append(r); cols.append(np.full(n, channels + c))
    rows.append(np.arange(channels)); cols.append(np.full(channels, 2 * channels + 1))
    layout = ParamLayout(np.concatenate(rows), np.concatenate(cols), n, 2 * channels + 2)
    expected = ConvAutoencoder.n_params_for(kernel, channels)
    if layout.n_used != expected:
        raise RuntimeError(f"conv layout fills {layout.n_used} slots, substrate needs {expected}")
    if (kernel, channels) == (7, 2):
        log.info("conv substrate has %d parameters; the published count is %d "
                 "(2 x 7x7 kernels per layer plus one bias per channel and layer gives %d)",
                 expected, CONV_PARAMS_PAPER, expected)
    return coords, layout
