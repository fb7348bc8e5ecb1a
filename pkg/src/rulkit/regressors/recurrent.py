"""GRU and LSTM stacks with hand-written backpropagation through time.

Layout: per-layer recurrent cell, optional layer normalization on each
layer's output sequence, dropout between layers, and a zero-initialized
linear head emitting one value per timestep. Losses are masked so padded
timesteps of shorter sequences contribute nothing.
"""

from __future__ import annotations

import numpy as np

from ..seeding import rng_for
from .nn import dropout_mask, init_uniform, layer_norm_backward, layer_norm_forward, sigmoid

_GRU_GATES = ("z", "r", "h")
_LSTM_GATES = ("i", "f", "o", "g")


class RecurrentNet:
    def __init__(
        self,
        cell: str,
        n_channels: int,
        hidden_size: int,
        num_layers: int,
        dropout: float,
        layer_norm: bool,
        seed: int,
    ):
        assert cell in ("gru", "lstm")
        self.cell = cell
        self.n_channels = n_channels
        self.hidden_size = hidden_size
        self.num_layers = num_layers
        self.dropout = dropout
        self.layer_norm = layer_norm
        rng = rng_for(seed, "init")
        params: dict[str, np.ndarray] = {}
        gates = _GRU_GATES if cell == "gru" else _LSTM_GATES
        for layer in range(num_layers):
            d_in = n_channels if layer == 0 else hidden_size
            for gate in gates:
                params[f"l{layer}_W{gate}"] = init_uniform(rng, (d_in, hidden_size), d_in)
                params[f"l{layer}_U{gate}"] = init_uniform(
                    rng, (hidden_size, hidden_size), hidden_size
                )
                bias = np.zeros(hidden_size)
                if cell == "lstm" and gate == "f":
                    bias += 1.0  # standard forget-gate bias
                params[f"l{layer}_b{gate}"] = bias
            if layer_norm:
                params[f"l{layer}_ln_g"] = np.ones(hidden_size)
                params[f"l{layer}_ln_b"] = np.zeros(hidden_size)
        params["head_W"] = np.zeros((hidden_size, 1))
        params["head_b"] = np.zeros(1)
        self.params = params

    # -- dropout masks ---------------------------------------------------------

    def make_masks(self, rng: np.random.Generator, batch: int, timesteps: int):
        if self.dropout <= 0.0 or self.num_layers < 2:
            return None
        return [
            dropout_mask(rng, (batch, timesteps, self.hidden_size), self.dropout)
            for _ in range(self.num_layers - 1)
        ]

    # -- cell forward/backward ---------------------------------------------------

    def _cell_forward(self, params, layer, X):
        B, T, _ = X.shape
        H = self.hidden_size
        p = {k: params[f"l{layer}_{k}"] for k in params_keys(self.cell)}
        h = np.zeros((B, H))
        outputs = np.empty((B, T, H))
        cache = []
        if self.cell == "gru":
            for t in range(T):
                x = X[:, t, :]
                z = sigmoid(x @ p["Wz"] + h @ p["Uz"] + p["bz"])
                r = sigmoid(x @ p["Wr"] + h @ p["Ur"] + p["br"])
                hc = np.tanh(x @ p["Wh"] + (r * h) @ p["Uh"] + p["bh"])
                h_new = (1.0 - z) * h + z * hc
                cache.append((x, h, z, r, hc))
                h = h_new
                outputs[:, t, :] = h
        else:
            c = np.zeros((B, H))
            for t in range(T):
                x = X[:, t, :]
                i = sigmoid(x @ p["Wi"] + h @ p["Ui"] + p["bi"])
                f = sigmoid(x @ p["Wf"] + h @ p["Uf"] + p["bf"])
                o = sigmoid(x @ p["Wo"] + h @ p["Uo"] + p["bo"])
                g = np.tanh(x @ p["Wg"] + h @ p["Ug"] + p["bg"])
                c_new = f * c + i * g
                tanh_c = np.tanh(c_new)
                h_new = o * tanh_c
                cache.append((x, h, c, i, f, o, g, tanh_c))
                h, c = h_new, c_new
                outputs[:, t, :] = h
        return outputs, cache

    def _cell_backward(self, params, layer, d_out, cache, grads):
        B, T, _ = d_out.shape
        p = {k: params[f"l{layer}_{k}"] for k in params_keys(self.cell)}
        acc = {k: np.zeros_like(v) for k, v in p.items()}
        d_in = np.empty((B, T, cache[0][0].shape[1]))
        dh = np.zeros((B, self.hidden_size))
        if self.cell == "gru":
            for t in range(T - 1, -1, -1):
                x, h_prev, z, r, hc = cache[t]
                d = d_out[:, t, :] + dh
                dz = d * (hc - h_prev)
                dhc = d * z
                dh_prev = d * (1.0 - z)
                dah = dhc * (1.0 - hc * hc)
                acc["Wh"] += x.T @ dah
                acc["Uh"] += (r * h_prev).T @ dah
                acc["bh"] += dah.sum(axis=0)
                drh = dah @ p["Uh"].T
                dr = drh * h_prev
                dh_prev = dh_prev + drh * r
                dar = dr * r * (1.0 - r)
                acc["Wr"] += x.T @ dar
                acc["Ur"] += h_prev.T @ dar
                acc["br"] += dar.sum(axis=0)
                daz = dz * z * (1.0 - z)
                acc["Wz"] += x.T @ daz
                acc["Uz"] += h_prev.T @ daz
                acc["bz"] += daz.sum(axis=0)
                dh = dh_prev + daz @ p["Uz"].T + dar @ p["Ur"].T
                d_in[:, t, :] = daz @ p["Wz"].T + dar @ p["Wr"].T + dah @ p["Wh"].T
        else:
            dc = np.zeros((B, self.hidden_size))
            for t in range(T - 1, -1, -1):
                x, h_prev, c_prev, i, f, o, g, tanh_c = cache[t]
                d = d_out[:, t, :] + dh
                do = d * tanh_c
                dc_total = dc + d * o * (1.0 - tanh_c * tanh_c)
                di = dc_total * g
                df = dc_total * c_prev
                dg = dc_total * i
                dc = dc_total * f
                dai = di * i * (1.0 - i)
                daf = df * f * (1.0 - f)
                dao = do * o * (1.0 - o)
                dag = dg * (1.0 - g * g)
                for gate, da in (("i", dai), ("f", daf), ("o", dao), ("g", dag)):
                    acc[f"W{gate}"] += x.T @ da
                    acc[f"U{gate}"] += h_prev.T @ da
                    acc[f"b{gate}"] += da.sum(axis=0)
                dh = dai @ p["Ui"].T + daf @ p["Uf"].T + dao @ p["Uo"].T + dag @ p["Ug"].T
                d_in[:, t, :] = (
                    dai @ p["Wi"].T + daf @ p["Wf"].T + dao @ p["Wo"].T + dag @ p["Wg"].T
                )
        for k, v in acc.items():
            grads[f"l{layer}_{k}"] = grads.get(f"l{layer}_{k}", 0.0) + v
        return d_in

    # -- full network -------------------------------------------------------------

    def forward(self, params: dict, X: np.ndarray, masks=None):
        h_seq = X
        caches = []
        for layer in range(self.num_layers):
            cell_out, cell_cache = self._cell_forward(params, layer, h_seq)
            if self.layer_norm:
                normed, ln_cache = layer_norm_forward(
                    cell_out, params[f"l{layer}_ln_g"], params[f"l{layer}_ln_b"]
                )
            else:
                normed, ln_cache = cell_out, None
            mask = masks[layer] if (masks is not None and layer < self.num_layers - 1) else None
            out = normed * mask if mask is not None else normed
            caches.append((cell_cache, ln_cache, mask))
            h_seq = out
        preds = np.einsum("bth,h->bt", h_seq, params["head_W"][:, 0]) + params["head_b"][0]
        return preds, (caches, h_seq)

    def loss_value(self, params, X, Y, M, masks=None) -> float:
        preds, _ = self.forward(params, X, masks)
        return float(np.sum((preds - Y) ** 2 * M) / np.sum(M))

    def loss_and_grads(self, params, X, Y, M, masks=None):
        preds, (caches, h_last) = self.forward(params, X, masks)
        diff = (preds - Y) * M
        total = float(np.sum(M))
        loss = float(np.sum(diff * (preds - Y)) / total)
        dpred = (2.0 / total) * diff
        grads: dict[str, np.ndarray] = {
            "head_W": np.einsum("bth,bt->h", h_last, dpred)[:, None],
            "head_b": np.array([dpred.sum()]),
        }
        d_seq = dpred[:, :, None] * params["head_W"][:, 0][None, None, :]
        for layer in range(self.num_layers - 1, -1, -1):
            cell_cache, ln_cache, mask = caches[layer]
            if mask is not None:
                d_seq = d_seq * mask
            if self.layer_norm:
                d_seq, dg, db = layer_norm_backward(d_seq, ln_cache)
                grads[f"l{layer}_ln_g"] = dg
                grads[f"l{layer}_ln_b"] = db
            d_seq = self._cell_backward(params, layer, d_seq, cell_cache, grads)
        return loss, grads


def params_keys(cell: str) -> list[str]:
    gates = _GRU_GATES if cell == "gru" else _LSTM_GATES
    return [f"{kind}{gate}" for gate in gates for kind in ("W", "U", "b")]
