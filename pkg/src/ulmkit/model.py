"""AWD-LSTM language model and the derived pooled-head text classifier.

Regularization sites follow the AWD-LSTM recipe: DropConnect on the
hidden-to-hidden matrices only (one mask per batch), variational dropout on
layer inputs/outputs (one mask per sequence, locked across time), and
row-wise embedding dropout. The decoder weight is the embedding matrix
itself (tying), so a single storage receives both gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .tensor import Rng, Tensor

PRESETS = {
    "full": dict(emb_dim=400, hid_dim=1152, n_layers=3),
    "tiny": dict(emb_dim=64, hid_dim=128, n_layers=3),
}
HEAD_HIDDEN = 50


@dataclass
class DropoutConfig:
    """Base dropout probabilities; ``multiplier`` scales all five sites."""

    p_emb: float = 0.02
    p_input: float = 0.25
    p_hidden: float = 0.15
    p_weight: float = 0.2
    p_output: float = 0.1
    p_head: float = 0.1
    multiplier: float = 1.0

    def scaled(self, site: str) -> float:
        p = getattr(self, site) * self.multiplier
        return min(max(p, 0.0), 1.0)

    def with_multiplier(self, m: float) -> "DropoutConfig":
        return replace(self, multiplier=m)


def variational_dropout(x: Tensor, p: float, rng: Rng, training: bool = True) -> Tensor:
    """Locked dropout: one (batch, feature) mask reused at every timestep."""
    if not training or p <= 0.0:
        return x
    b, _, f = x.shape
    mask = rng.keep_mask((b, 1, f), p)
    return T.mul(x, Tensor(mask))


def embedding_dropout(emb: Tensor, p: float, rng: Rng, training: bool = True) -> Tensor:
    """Drop whole vocabulary rows of the embedding matrix for one batch."""
    if not training or p <= 0.0:
        return emb
    mask = rng.keep_mask((emb.shape[0], 1), p)
    return T.mul(emb, Tensor(mask))


class LstmLayer:
    """One LSTM layer; gates packed [input, forget, cell, output]."""

    def __init__(self, input_size: int, hidden_size: int, rng: Rng, name: str):
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.name = name
        bound = 1.0 / math.sqrt(hidden_size)
        self.W_ih = T.param(rng.uniform((input_size, 4 * hidden_size), -bound, bound), f"{name}.W_ih")
        self.W_hh = T.param(rng.uniform((hidden_size, 4 * hidden_size), -bound, bound), f"{name}.W_hh")
        b = np.zeros(4 * hidden_size)
        b[hidden_size : 2 * hidden_size] = 1.0  # forget-gate bias
        self.b = T.param(b, f"{name}.b")

    def parameters(self) -> list[Tensor]:
        return [self.W_ih, self.W_hh, self.b]

    def forward(self, x: Tensor, state, w_hh: Tensor):
        """Run the layer over (batch, steps, input); returns outputs and state.

        ``w_hh`` is passed explicitly so a weight-dropped matrix (fixed for
        the whole sequence) can stand in for ``self.W_hh``.
        """
        b, s, _ = x.shape
        h, c = state
        hs = self.hidden_size
        outs = []
        for t in range(s):
            z = T.add(T.add(T.matmul(x[:, t, :], self.W_ih), T.matmul(h, w_hh)), self.b)
            i = T.sigmoid(z[:, 0 * hs : 1 * hs])
            f = T.sigmoid(z[:, 1 * hs : 2 * hs])
            g = T.tanh(z[:, 2 * hs : 3 * hs])
            o = T.sigmoid(z[:, 3 * hs : 4 * hs])
            c = T.add(T.mul(f, c), T.mul(i, g))
            h = T.mul(o, T.tanh(c))
            outs.append(T.reshape(h, (b, 1, hs)))
        return T.concat(outs, axis=1), (h, c)


def apply_weight_drop(layer: LstmLayer, p: float, rng: Rng, training: bool = True) -> Tensor:
    """DropConnect on the hidden->hidden matrix, one mask per batch.

    Survivors are scaled by 1/(1-p); eval mode is the identity. p=1 while
    training would sever the recurrence entirely and is rejected.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"weight-drop probability must be in [0, 1], got {p}")
    if not training or p == 0.0:
        return layer.W_hh
    if p >= 1.0:
        raise ValueError("weight-drop p=1 in training mode makes the recurrence degenerate")
    mask = rng.keep_mask(layer.W_hh.shape, p)
    return T.mul(layer.W_hh, Tensor(mask))


class AwdLstmLM:
    """Embedding + stacked LSTM + tied decoder with per-site dropout.

    The final LSTM layer outputs ``emb_dim`` so the decoder can share the
    embedding matrix. Layer groups (for gradual unfreezing) are one group
    per LSTM layer plus the embedding/decoder group on top.
    """

    def __init__(self, vocab_size: int, emb_dim: int, hid_dim: int, n_layers: int,
                 dropouts: DropoutConfig | None = None, seed: int = 0, preset: str = "custom"):
        self.vocab_size = vocab_size
        self.emb_dim = emb_dim
        self.hid_dim = hid_dim
        self.n_layers = n_layers
        self.dropouts = dropouts or DropoutConfig()
        self.preset = preset
        self.training = True
        self.rng = Rng(seed)
        init = self.rng.child("init")
        self.embedding = T.param(init.uniform((vocab_size, emb_dim), -0.1, 0.1), "embedding")
        self.layers = []
        for i in range(n_layers):
            in_size = emb_dim if i == 0 else hid_dim
            out_size = emb_dim if i == n_layers - 1 else hid_dim
            self.layers.append(LstmLayer(in_size, out_size, init, f"lstm{i}"))
        self.decoder_bias = T.param(np.zeros(vocab_size), "decoder_bias")
        self._drop_rng = self.rng.child("dropout")

    # -- modes ------------------------------------------------------------

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    # -- parameters -------------------------------------------------------

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = [("embedding", self.embedding)]
        for layer in self.layers:
            for p in layer.parameters():
                out.append((p.name, p))
        out.append(("decoder_bias", self.decoder_bias))
        return out

    def layer_groups(self) -> list[list[Tensor]]:
        groups = [layer.parameters() for layer in self.layers]
        groups.append([self.embedding, self.decoder_bias])
        return groups

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            if name not in state:
                raise KeyError(f"checkpoint missing parameter {name}")
            if state[name].shape != p.data.shape:
                raise ValueError(
                    f"parameter {name}: checkpoint shape {state[name].shape} != model shape {p.data.shape}"
                )
            p.data = state[name].astype(p.data.dtype).copy()

    def init_state(self, batch: int) -> list[tuple[np.ndarray, np.ndarray]]:
        state = []
        for layer in self.layers:
            z = np.zeros((batch, layer.hidden_size))
            state.append((z.copy(), z.copy()))
        return state

    # -- forward ----------------------------------------------------------

    def encode(self, ids: np.ndarray, state=None):
        """Run embedding + LSTM stack; returns (raw final outputs, dropped
        final outputs, detached new state)."""
        ids = np.asarray(ids)
        if ids.size and ids.max() >= self.vocab_size:
            raise IndexError(f"token id {ids.max()} out of range for vocab {self.vocab_size}")
        b, _ = ids.shape
        if state is None:
            state = self.init_state(b)
        d = self.dropouts
        rng = self._drop_rng
        emb_w = embedding_dropout(self.embedding, d.scaled("p_emb"), rng, self.training)
        x = embedding_lookup_3d(emb_w, ids)
        x = variational_dropout(x, d.scaled("p_input"), rng, self.training)
        new_state = []
        raw = x
        for i, layer in enumerate(self.layers):
            h0 = (Tensor(state[i][0]), Tensor(state[i][1]))
            w_hh = apply_weight_drop(layer, d.scaled("p_weight"), rng, self.training)
            raw, (h, c) = layer.forward(x, h0, w_hh)
            new_state.append((h.data.copy(), c.data.copy()))
            x = raw
            if i < self.n_layers - 1:
                x = variational_dropout(x, d.scaled("p_hidden"), rng, self.training)
        dropped = variational_dropout(raw, d.scaled("p_output"), rng, self.training)
        return raw, dropped, new_state

    def forward(self, ids: np.ndarray, state=None):
        """Next-token logits (batch, steps, vocab) plus carried state and the
        raw/dropped final-layer activations (for AR/TAR terms)."""
        raw, dropped, new_state = self.encode(ids, state)
        b, s, e = dropped.shape
        flat = T.reshape(dropped, (b * s, e))
        logits = T.add(T.matmul(flat, T.transpose(self.embedding)), self.decoder_bias)
        return T.reshape(logits, (b, s, self.vocab_size)), new_state, raw, dropped


def embedding_lookup_3d(weight: Tensor, ids: np.ndarray) -> Tensor:
    return T.embedding_lookup(weight, ids)


def concat_pool(hidden: Tensor, lengths) -> Tensor:
    """Classifier head input: [last valid hidden, max pool, mean pool]."""
    return T.concat(
        [T.last_step(hidden, lengths), T.max_over_time(hidden, lengths), T.mean_over_time(hidden, lengths)],
        axis=-1,
    )


class TextClassifier:
    """LM encoder + concat-pool head with layer groups for unfreezing.

    Groups, bottom to top: [embedding + first LSTM layer], each remaining
    LSTM layer, then the head. ``freeze_to(i)`` freezes all groups below i.
    """

    def __init__(self, encoder: AwdLstmLM, n_classes: int = 2, head_hidden: int = HEAD_HIDDEN,
                 seed: int = 0):
        self.encoder = encoder
        self.n_classes = n_classes
        self.head_hidden = head_hidden
        self.training = True
        rng = Rng(seed).child("head-init")
        in_w = 3 * encoder.emb_dim
        self.W1 = T.param(rng.uniform((in_w, head_hidden), -1 / math.sqrt(in_w), 1 / math.sqrt(in_w)), "head.W1")
        self.b1 = T.param(np.zeros(head_hidden), "head.b1")
        self.W2 = T.param(rng.uniform((head_hidden, n_classes), -1 / math.sqrt(head_hidden), 1 / math.sqrt(head_hidden)), "head.W2")
        self.b2 = T.param(np.zeros(n_classes), "head.b2")
        self._drop_rng = Rng(seed).child("head-dropout")

    def train(self):
        self.training = True
        self.encoder.train()
        return self

    def eval(self):
        self.training = False
        self.encoder.eval()
        return self

    def head_parameters(self) -> list[Tensor]:
        return [self.W1, self.b1, self.W2, self.b2]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = [(n, p) for n, p in self.encoder.named_parameters() if n != "decoder_bias"]
        out += [(p.name, p) for p in self.head_parameters()]
        return out

    def layer_groups(self) -> list[list[Tensor]]:
        enc = self.encoder
        groups = [[enc.embedding] + enc.layers[0].parameters()]
        groups += [layer.parameters() for layer in enc.layers[1:]]
        groups.append(self.head_parameters())
        return groups

    def freeze_to(self, group_index: int) -> None:
        """Freeze groups below group_index; freeze_to(0) unfreezes everything."""
        groups = self.layer_groups()
        if not 0 <= group_index < len(groups):
            raise IndexError(f"group index {group_index} out of range for {len(groups)} groups")
        for gi, group in enumerate(groups):
            for p in group:
                p.requires_grad = gi >= group_index
                if not p.requires_grad:
                    p.grad = None

    def trainable_groups(self) -> list[list[Tensor]]:
        return [g for g in self.layer_groups() if g[0].requires_grad]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            if name not in state:
                raise KeyError(f"checkpoint missing parameter {name}")
            if state[name].shape != p.data.shape:
                raise ValueError(
                    f"parameter {name}: checkpoint shape {state[name].shape} != model shape {p.data.shape}"
                )
            p.data = state[name].astype(p.data.dtype).copy()

    def forward(self, ids: np.ndarray, lengths) -> Tensor:
        ids = np.asarray(ids)
        lengths = np.asarray(lengths)
        if ids.ndim != 2 or ids.shape[0] == 0 or ids.shape[1] == 0:
            raise ValueError(f"classify: expected non-empty (batch, steps) ids, got {ids.shape}")
        if (lengths < 1).any():
            raise ValueError("classify: zero-length sequence")
        self.encoder.training = self.training
        raw, dropped, _ = self.encoder.encode(ids)
        pooled = concat_pool(dropped, lengths)
        hid = T.relu(T.add(T.matmul(pooled, self.W1), self.b1))
        if self.training:
            p = self.encoder.dropouts.scaled("p_head")
            if p > 0:
                hid = T.mul(hid, Tensor(self._drop_rng.keep_mask(hid.shape, p)))
        return T.add(T.matmul(hid, self.W2), self.b2)

    def classify(self, ids: np.ndarray, lengths) -> Tensor:
        """Logits (batch, n_classes); argmax is the predicted label."""
        return self.forward(ids, lengths)


def build_lm(vocab_size: int, preset: str = "tiny", dropout_multiplier: float = 1.0,
             seed: int = 0) -> AwdLstmLM:
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}, expected one of {sorted(PRESETS)}")
    sizes = PRESETS[preset]
    dropouts = DropoutConfig(multiplier=dropout_multiplier)
    return AwdLstmLM(vocab_size, dropouts=dropouts, seed=seed, preset=preset, **sizes)
