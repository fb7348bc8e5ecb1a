"""Dilated causal temporal convolutional network with residual blocks.

Each block applies two dilated causal convolutions (dilation ``2**level``)
with ReLU and optional dropout, plus a residual connection (1x1 projection
when channel counts differ). Convolution weights optionally use weight
normalization. The receptive field of the stack is
``1 + 2*(kernel_size-1)*(2**levels - 1)``.
"""

from __future__ import annotations

import numpy as np

from ..seeding import rng_for
from .nn import dropout_mask, init_uniform, relu, relu_grad


def causal_conv(x: np.ndarray, W: np.ndarray, dilation: int):
    """Left-padded dilated conv; x (B, C_in, T), W (C_out, C_in, k)."""
    k = W.shape[2]
    T = x.shape[2]
    pad = (k - 1) * dilation
    xp = np.pad(x, ((0, 0), (0, 0), (pad, 0)))
    out = np.zeros((x.shape[0], W.shape[0], T))
    for j in range(k):
        out += np.einsum("oi,bit->bot", W[:, :, j], xp[:, :, j * dilation : j * dilation + T])
    return out, xp


def causal_conv_backward(d_out: np.ndarray, xp: np.ndarray, W: np.ndarray, dilation: int):
    k = W.shape[2]
    T = d_out.shape[2]
    pad = (k - 1) * dilation
    dW = np.zeros_like(W)
    dxp = np.zeros_like(xp)
    for j in range(k):
        seg = xp[:, :, j * dilation : j * dilation + T]
        dW[:, :, j] = np.einsum("bot,bit->oi", d_out, seg)
        dxp[:, :, j * dilation : j * dilation + T] += np.einsum(
            "oi,bot->bit", W[:, :, j], d_out
        )
    db = d_out.sum(axis=(0, 2))
    return dW, db, dxp[:, :, pad:]


def weight_norm_forward(v: np.ndarray, g: np.ndarray):
    norm = np.sqrt(np.sum(v * v, axis=(1, 2)))
    w = g[:, None, None] * v / norm[:, None, None]
    return w, (v, g, norm)


def weight_norm_backward(dw: np.ndarray, cache):
    v, g, norm = cache
    vhat = v / norm[:, None, None]
    dot = np.sum(dw * vhat, axis=(1, 2))
    dg = dot
    dv = (g / norm)[:, None, None] * (dw - vhat * dot[:, None, None])
    return dv, dg


class TCNNet:
    def __init__(
        self,
        n_channels: int,
        channels: int,
        kernel_size: int,
        levels: int,
        dropout: float,
        weight_norm: bool,
        seed: int,
    ):
        self.n_channels = n_channels
        self.channels = channels
        self.kernel_size = kernel_size
        self.levels = levels
        self.dropout = dropout
        self.weight_norm = weight_norm
        rng = rng_for(seed, "init")
        params: dict[str, np.ndarray] = {}
        for block in range(levels):
            c_in = n_channels if block == 0 else channels
            for conv, c_prev in (("c1", c_in), ("c2", channels)):
                v = init_uniform(rng, (channels, c_prev, kernel_size), c_prev * kernel_size)
                if weight_norm:
                    params[f"b{block}_{conv}_v"] = v
                    params[f"b{block}_{conv}_g"] = np.sqrt(np.sum(v * v, axis=(1, 2)))
                else:
                    params[f"b{block}_{conv}_W"] = v
                params[f"b{block}_{conv}_b"] = np.zeros(channels)
            if c_in != channels:
                params[f"b{block}_down_W"] = init_uniform(rng, (channels, c_in, 1), c_in)
                params[f"b{block}_down_b"] = np.zeros(channels)
        params["head_W"] = np.zeros((channels, 1))
        params["head_b"] = np.zeros(1)
        self.params = params

    @property
    def receptive_field(self) -> int:
        return 1 + 2 * (self.kernel_size - 1) * (2**self.levels - 1)

    def make_masks(self, rng: np.random.Generator, batch: int, timesteps: int):
        if self.dropout <= 0.0 or self.levels < 2:
            return None
        return [
            dropout_mask(rng, (batch, self.channels, timesteps), self.dropout)
            for _ in range(2 * self.levels)
        ]

    def _conv_weight(self, params, block: int, conv: str):
        if self.weight_norm:
            return weight_norm_forward(params[f"b{block}_{conv}_v"], params[f"b{block}_{conv}_g"])
        return params[f"b{block}_{conv}_W"], None

    def forward(self, params: dict, X: np.ndarray, masks=None):
        x = np.transpose(X, (0, 2, 1))  # (B, C, T)
        caches = []
        for block in range(self.levels):
            dil = 2**block
            w1, wn1 = self._conv_weight(params, block, "c1")
            z1, xp1 = causal_conv(x, w1, dil)
            z1 += params[f"b{block}_c1_b"][None, :, None]
            a1 = relu(z1)
            m1 = masks[2 * block] if masks is not None else None
            a1d = a1 * m1 if m1 is not None else a1
            w2, wn2 = self._conv_weight(params, block, "c2")
            z2, xp2 = causal_conv(a1d, w2, dil)
            z2 += params[f"b{block}_c2_b"][None, :, None]
            a2 = relu(z2)
            m2 = masks[2 * block + 1] if masks is not None else None
            a2d = a2 * m2 if m2 is not None else a2
            if f"b{block}_down_W" in params:
                res, xpd = causal_conv(x, params[f"b{block}_down_W"], 1)
                res += params[f"b{block}_down_b"][None, :, None]
            else:
                res, xpd = x, None
            caches.append((xp1, z1, m1, xp2, z2, m2, xpd, w1, wn1, w2, wn2))
            x = a2d + res
        preds = np.einsum("bct,c->bt", x, params["head_W"][:, 0]) + params["head_b"][0]
        return preds, (caches, x)

    def loss_value(self, params, X, Y, M, masks=None) -> float:
        preds, _ = self.forward(params, X, masks)
        return float(np.sum((preds - Y) ** 2 * M) / np.sum(M))

    def loss_and_grads(self, params, X, Y, M, masks=None):
        preds, (caches, feat) = self.forward(params, X, masks)
        err = (preds - Y) * M
        total = float(np.sum(M))
        loss = float(np.sum(err * (preds - Y)) / total)
        dpred = (2.0 / total) * err
        grads: dict[str, np.ndarray] = {
            "head_W": np.einsum("bct,bt->c", feat, dpred)[:, None],
            "head_b": np.array([dpred.sum()]),
        }
        dx = dpred[:, None, :] * params["head_W"][:, 0][None, :, None]
        for block in range(self.levels - 1, -1, -1):
            dil = 2**block
            xp1, z1, m1, xp2, z2, m2, xpd, w1, wn1, w2, wn2 = caches[block]
            da2d = dx
            d_res = dx
            da2 = da2d * m2 if m2 is not None else da2d
            dz2 = da2 * relu_grad(z2)
            dW2, db2, da1d = causal_conv_backward(dz2, xp2, w2, dil)
            da1 = da1d * m1 if m1 is not None else da1d
            dz1 = da1 * relu_grad(z1)
            dW1, db1, dx_main = causal_conv_backward(dz1, xp1, w1, dil)
            grads[f"b{block}_c1_b"] = db1
            grads[f"b{block}_c2_b"] = db2
            if self.weight_norm:
                dv1, dg1 = weight_norm_backward(dW1, wn1)
                dv2, dg2 = weight_norm_backward(dW2, wn2)
                grads[f"b{block}_c1_v"], grads[f"b{block}_c1_g"] = dv1, dg1
                grads[f"b{block}_c2_v"], grads[f"b{block}_c2_g"] = dv2, dg2
            else:
                grads[f"b{block}_c1_W"] = dW1
                grads[f"b{block}_c2_W"] = dW2
            if xpd is not None:
                dWd, dbd, dx_res = causal_conv_backward(
                    d_res, xpd, params[f"b{block}_down_W"], 1
                )
                grads[f"b{block}_down_W"] = dWd
                grads[f"b{block}_down_b"] = dbd
            else:
                dx_res = d_res
            dx = dx_main + dx_res
        return loss, grads
