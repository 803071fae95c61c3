"""Differentiable binary anomaly classifiers over 24-step load profiles.

Two architectures: a single-layer LSTM (100 units) and a 5-block Transformer
encoder (width 160, 8 heads of 20, FFN 128, dense head 256), both ending in a
sigmoid unit that outputs the anomaly probability.  Training uses binary
focal loss and RMSprop with a step learning-rate schedule.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .seeding import rng_for

SEQ_LEN = 24


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    base_lr: float = 0.01
    lr_milestones: tuple[int, ...] = (50, 70, 90)
    lr_decay: float = 0.1
    rho: float = 0.9            # RMSprop mean-square decay
    eps_opt: float = 1e-7
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    seed: int = 0


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate for a 1-indexed global epoch under the step schedule."""
    passed = sum(1 for m in cfg.lr_milestones if epoch >= m)
    return cfg.base_lr * cfg.lr_decay ** passed


def _glorot(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _wrap_batch(x) -> Tensor:
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    if t.ndim != 2 or t.shape[1] != SEQ_LEN:
        raise ad.ShapeError(f"expected a batch of {SEQ_LEN}-step profiles, got shape {t.shape}")
    return t


def lstm_sequence(x: Tensor, wx: Tensor, wh: Tensor, b: Tensor,
                  hidden_size: int) -> Tensor:
    """Full LSTM recurrence over the sequence as one fused tape primitive.

    Runs backpropagation-through-time by hand instead of composing ~400
    elementary tape nodes; the analytic gradients are pinned against the
    finite-difference oracle in the test suite.  Gate order inside the fused
    kernels: input, forget, candidate, output.  Returns the final hidden
    state [batch, hidden].
    """
    x_np, wx_np, wh_np, b_np = x.data, wx.data, wh.data, b.data
    batch, steps = x_np.shape
    h_size = hidden_size

    zx = (x_np.reshape(batch * steps, 1) @ wx_np).reshape(batch, steps, 4 * h_size)
    h = np.zeros((batch, h_size))
    c = np.zeros((batch, h_size))
    saved = []
    for t in range(steps):
        z = zx[:, t, :] + h @ wh_np + b_np
        gi = ad._sigmoid_np(z[:, :h_size])
        gf = ad._sigmoid_np(z[:, h_size:2 * h_size])
        gg = np.tanh(z[:, 2 * h_size:3 * h_size])
        go = ad._sigmoid_np(z[:, 3 * h_size:])
        c_prev, h_prev = c, h
        c = gf * c_prev + gi * gg
        tc = np.tanh(c)
        h = go * tc
        saved.append((gi, gf, gg, go, c_prev, tc, h_prev))

    def bw(grad_h):
        d_wh = np.zeros_like(wh_np)
        d_b = np.zeros_like(b_np)
        d_zx = np.empty((batch, steps, 4 * h_size))
        dh = grad_h
        dc = np.zeros((batch, h_size))
        for t in range(steps - 1, -1, -1):
            gi, gf, gg, go, c_prev, tc, h_prev = saved[t]
            do = dh * tc
            dc = dc + dh * go * (1.0 - tc * tc)
            dz = np.concatenate([
                dc * gg * gi * (1.0 - gi),
                dc * c_prev * gf * (1.0 - gf),
                dc * gi * (1.0 - gg * gg),
                do * go * (1.0 - go),
            ], axis=1)
            d_wh += h_prev.T @ dz
            d_b += dz.sum(axis=0)
            d_zx[:, t, :] = dz
            dh = dz @ wh_np.T
            dc = dc * gf
        flat = d_zx.reshape(batch * steps, 4 * h_size)
        d_wx = x_np.reshape(batch * steps, 1).T @ flat
        d_x = (flat @ wx_np.T).reshape(batch, steps)
        return d_x, d_wx, d_wh, d_b

    return ad.custom_op(h, (x, wx, wh, b), bw)


class LstmClassifier:
    """Sequence-to-one LSTM: 24 scalar steps -> hidden state -> sigmoid unit."""

    name = "lstm"

    def __init__(self, seed: int = 0, hidden_size: int = 100):
        self.hidden_size = hidden_size
        rng = rng_for(seed, "init", "lstm")
        h = hidden_size
        self.params: dict[str, Tensor] = {
            "lstm.wx": Tensor(_glorot(rng, (1, 4 * h)), requires_grad=True),
            "lstm.wh": Tensor(_glorot(rng, (h, 4 * h)), requires_grad=True),
            "lstm.b": Tensor(np.zeros(4 * h), requires_grad=True),
            "head.w": Tensor(_glorot(rng, (h, 1)), requires_grad=True),
            "head.b": Tensor(np.zeros(1), requires_grad=True),
        }

    def forward(self, x) -> Tensor:
        xt = _wrap_batch(x)
        batch = xt.shape[0]
        p = self.params
        h = lstm_sequence(xt, p["lstm.wx"], p["lstm.wh"], p["lstm.b"], self.hidden_size)
        logits = ad.add(ad.matmul(h, p["head.w"]), p["head.b"])
        return ad.reshape(ad.sigmoid(logits), (batch,))

    def get_weights(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def set_weights(self, weights: dict[str, np.ndarray]) -> None:
        _assign_weights(self.params, weights)


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(dim // 2)[None, :]
    angles = pos / np.power(10000.0, 2.0 * i / dim)
    pe = np.zeros((length, dim))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe


class TransformerClassifier:
    """Post-norm Transformer encoder over embedded hourly readings.

    Scalar readings are linearly embedded to the model width, summed with a
    fixed sinusoidal positional code, passed through the encoder blocks,
    averaged over time, and classified by a ReLU dense layer plus sigmoid unit.
    """

    name = "transformer"

    def __init__(self, seed: int = 0, num_blocks: int = 5, d_model: int = 160,
                 num_heads: int = 8, ffn_hidden: int = 128, dense_hidden: int = 256):
        if d_model % num_heads:
            raise ValueError("d_model must divide evenly across heads")
        self.num_blocks = num_blocks
        self.d_model = d_model
        self.num_heads = num_heads
        self.head_dim = d_model // num_heads
        rng = rng_for(seed, "init", "transformer")
        d = d_model
        params: dict[str, Tensor] = {
            "emb.w": Tensor(_glorot(rng, (1, d)), requires_grad=True),
            "emb.b": Tensor(np.zeros(d), requires_grad=True),
        }
        for k in range(num_blocks):
            for proj in ("wq", "wk", "wv", "wo"):
                params[f"blk{k}.attn.{proj}"] = Tensor(_glorot(rng, (d, d)), requires_grad=True)
                params[f"blk{k}.attn.{proj[1]}b"] = Tensor(np.zeros(d), requires_grad=True)
            params[f"blk{k}.ln1.gamma"] = Tensor(np.ones(d), requires_grad=True)
            params[f"blk{k}.ln1.beta"] = Tensor(np.zeros(d), requires_grad=True)
            params[f"blk{k}.ffn.w1"] = Tensor(_glorot(rng, (d, ffn_hidden)), requires_grad=True)
            params[f"blk{k}.ffn.b1"] = Tensor(np.zeros(ffn_hidden), requires_grad=True)
            params[f"blk{k}.ffn.w2"] = Tensor(_glorot(rng, (ffn_hidden, d)), requires_grad=True)
            params[f"blk{k}.ffn.b2"] = Tensor(np.zeros(d), requires_grad=True)
            params[f"blk{k}.ln2.gamma"] = Tensor(np.ones(d), requires_grad=True)
            params[f"blk{k}.ln2.beta"] = Tensor(np.zeros(d), requires_grad=True)
        params["head.dense.w"] = Tensor(_glorot(rng, (d, dense_hidden)), requires_grad=True)
        params["head.dense.b"] = Tensor(np.zeros(dense_hidden), requires_grad=True)
        params["head.out.w"] = Tensor(_glorot(rng, (dense_hidden, 1)), requires_grad=True)
        params["head.out.b"] = Tensor(np.zeros(1), requires_grad=True)
        self.params = params
        self.pos_encoding = sinusoidal_positions(SEQ_LEN, d_model)
        self.last_attention: list[np.ndarray] = []

    def _layer_norm(self, t: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
        mu = ad.mean(t, axis=-1, keepdims=True)
        centered = ad.sub(t, ad.broadcast_to(mu, t.shape))
        var = ad.mean(ad.mul(centered, centered), axis=-1, keepdims=True)
        inv = ad.power(ad.add(var, Tensor(1e-6)), -0.5)
        normed = ad.mul(centered, ad.broadcast_to(inv, t.shape))
        return ad.add(ad.mul(normed, gamma), beta)

    def _attention(self, h: Tensor, k: int) -> Tensor:
        p = self.params
        batch = h.shape[0]
        nh, hd, d = self.num_heads, self.head_dim, self.d_model

        def heads(t: Tensor) -> Tensor:
            t = ad.reshape(t, (batch, SEQ_LEN, nh, hd))
            return ad.reshape(ad.transpose(t, (0, 2, 1, 3)), (batch * nh, SEQ_LEN, hd))

        q = heads(ad.add(ad.matmul(h, p[f"blk{k}.attn.wq"]), p[f"blk{k}.attn.qb"]))
        key = heads(ad.add(ad.matmul(h, p[f"blk{k}.attn.wk"]), p[f"blk{k}.attn.kb"]))
        v = heads(ad.add(ad.matmul(h, p[f"blk{k}.attn.wv"]), p[f"blk{k}.attn.vb"]))
        scores = ad.mul(ad.matmul(q, ad.transpose(key, (0, 2, 1))), Tensor(1.0 / np.sqrt(hd)))
        weights = ad.softmax(scores, axis=-1)
        self.last_attention.append(weights.data)
        ctx = ad.matmul(weights, v)
        ctx = ad.reshape(ctx, (batch, nh, SEQ_LEN, hd))
        merged = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (batch, SEQ_LEN, d))
        return ad.add(ad.matmul(merged, p[f"blk{k}.attn.wo"]), p[f"blk{k}.attn.ob"])

    def forward(self, x) -> Tensor:
        xt = _wrap_batch(x)
        batch = xt.shape[0]
        p = self.params
        d = self.d_model
        self.last_attention = []

        flat = ad.reshape(xt, (batch * SEQ_LEN, 1))
        emb = ad.add(ad.matmul(flat, p["emb.w"]), p["emb.b"])
        # conventional sqrt(d) embedding scale, so the reading is not drowned
        # out by the unit-magnitude positional code
        emb = ad.mul(emb, Tensor(np.sqrt(float(d))))
        h = ad.add(ad.reshape(emb, (batch, SEQ_LEN, d)), Tensor(self.pos_encoding))
        for k in range(self.num_blocks):
            attn = self._attention(h, k)
            h = self._layer_norm(ad.add(h, attn), p[f"blk{k}.ln1.gamma"], p[f"blk{k}.ln1.beta"])
            ff = ad.relu(ad.add(ad.matmul(h, p[f"blk{k}.ffn.w1"]), p[f"blk{k}.ffn.b1"]))
            ff = ad.add(ad.matmul(ff, p[f"blk{k}.ffn.w2"]), p[f"blk{k}.ffn.b2"])
            h = self._layer_norm(ad.add(h, ff), p[f"blk{k}.ln2.gamma"], p[f"blk{k}.ln2.beta"])
        pooled = ad.mean(h, axis=1)
        dense = ad.relu(ad.add(ad.matmul(pooled, p["head.dense.w"]), p["head.dense.b"]))
        logits = ad.add(ad.matmul(dense, p["head.out.w"]), p["head.out.b"])
        return ad.reshape(ad.sigmoid(logits), (batch,))

    def get_weights(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def set_weights(self, weights: dict[str, np.ndarray]) -> None:
        _assign_weights(self.params, weights)


MODEL_FACTORIES = {
    "lstm": LstmClassifier,
    "transformer": TransformerClassifier,
}


def make_model(name: str, seed: int = 0):
    try:
        return MODEL_FACTORIES[name](seed=seed)
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODEL_FACTORIES)}") from None


def _assign_weights(params: dict[str, Tensor], weights: dict[str, np.ndarray]) -> None:
    if set(params) != set(weights):
        missing = sorted(set(params) ^ set(weights))
        raise ValueError(f"weight map names do not match the model: {missing}")
    for name, tensor in params.items():
        arr = np.asarray(weights[name], dtype=np.float64)
        if arr.shape != tensor.data.shape:
            raise ValueError(f"weight {name}: shape {arr.shape} != expected {tensor.data.shape}")
        tensor.data = arr.copy()
        tensor.grad = None


# ---------------------------------------------------------------------------
# loss, optimizer, training

_P_EPS = 1e-12


def focal_loss(p: Tensor, y: np.ndarray, alpha: float = 0.25,
               gamma: float = 2.0) -> Tensor:
    """Mean binary focal loss -alpha_t * (1 - p_t)^gamma * log(p_t).

    ``p_t`` is the probability assigned to the true class and ``alpha_t`` is
    ``alpha`` for positives, ``1 - alpha`` for negatives.  Probabilities are
    clamped 1e-12 away from the 0/1 boundary before the log.
    """
    y = np.asarray(y, dtype=np.float64)
    if p.shape != y.shape:
        raise ad.ShapeError(f"focal loss: probabilities {p.shape} vs labels {y.shape}")
    if np.any((y != 0.0) & (y != 1.0)):
        raise ValueError("focal loss labels must be 0 or 1")
    if np.any(p.data < 0.0) or np.any(p.data > 1.0):
        raise ValueError("focal loss probabilities must lie in [0, 1]")
    yt = Tensor(y)
    pt = ad.add(ad.mul(p, yt), ad.mul(ad.sub(Tensor(1.0), p), Tensor(1.0 - y)))
    pt = ad.clip(pt, _P_EPS, 1.0 - _P_EPS)
    alpha_t = Tensor(alpha * y + (1.0 - alpha) * (1.0 - y))
    weight = ad.mul(alpha_t, ad.power(ad.sub(Tensor(1.0), pt), gamma))
    return ad.mean(ad.mul(Tensor(-1.0), ad.mul(weight, ad.log(pt))))


class RmsProp:
    """Per-parameter mean-square accumulator: v <- rho v + (1-rho) g^2."""

    def __init__(self, rho: float = 0.9, eps: float = 1e-7):
        self.rho = rho
        self.eps = eps
        self.state: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, Tensor], lr: float) -> None:
        for name, p in params.items():
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ValueError(f"{name}: gradient shape {g.shape} != parameter "
                                 f"shape {p.data.shape}")
            v = self.state.get(name)
            if v is None:
                v = np.zeros_like(p.data)
                self.state[name] = v
            v *= self.rho
            v += (1.0 - self.rho) * g * g
            p.data -= lr * g / (np.sqrt(v) + self.eps)


class NumericError(RuntimeError):
    """Training produced a non-finite loss."""


def train_local(model, x: np.ndarray, y: np.ndarray, cfg: TrainConfig, *,
                seed: int | None = None, epochs: int | None = None,
                epoch_offset: int = 0, optimizer: RmsProp | None = None) -> list[float]:
    """Mini-batch training; returns the mean loss of each epoch.

    ``epoch_offset`` shifts the learning-rate schedule so federated rounds
    advance the same global schedule as centralized epochs.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(x)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    seed = cfg.seed if seed is None else seed
    epochs = cfg.epochs if epochs is None else epochs
    opt = optimizer if optimizer is not None else RmsProp(cfg.rho, cfg.eps_opt)
    history = []
    for local_epoch in range(1, epochs + 1):
        global_epoch = epoch_offset + local_epoch
        lr = lr_at_epoch(cfg, global_epoch)
        perm = rng_for(seed, "shuffle", global_epoch).permutation(n)
        batch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            probs = model.forward(x[idx])
            loss = focal_loss(probs, y[idx], cfg.focal_alpha, cfg.focal_gamma)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"non-finite loss at epoch {global_epoch}")
            for p in model.params.values():
                p.grad = None
            ad.backward(loss)
            opt.step(model.params, lr)
            batch_losses.append(value)
        history.append(float(np.mean(batch_losses)))
    return history


def input_gradient(model, x: np.ndarray, y: np.ndarray, alpha: float = 0.25,
                   gamma: float = 2.0) -> np.ndarray:
    """Gradient of the focal loss w.r.t. the input batch; weights untouched."""
    x = np.asarray(x, dtype=np.float64)
    flags = {name: p.requires_grad for name, p in model.params.items()}
    for p in model.params.values():
        p.requires_grad = False
    try:
        xt = Tensor(x, requires_grad=True)
        loss = focal_loss(model.forward(xt), y, alpha, gamma)
        ad.backward(loss)
    finally:
        for name, p in model.params.items():
            p.requires_grad = flags[name]
    return xt.grad if xt.grad is not None else np.zeros_like(x)


def predict_proba(model, x: np.ndarray, batch_size: int = 512) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty(len(x))
    with ad.no_grad():
        for start in range(0, len(x), batch_size):
            out[start:start + batch_size] = model.forward(x[start:start + batch_size]).data
    return out


# ---------------------------------------------------------------------------
# weight checkpoints: named tensor map with a versioned binary header

_MAGIC = b"FMWT"
_VERSION = 1


def weights_to_bytes(weights: dict[str, np.ndarray]) -> bytes:
    chunks = [_MAGIC, struct.pack("<II", _VERSION, len(weights))]
    for name in sorted(weights):
        arr = np.ascontiguousarray(weights[name], dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    return b"".join(chunks)


def weights_from_bytes(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != _MAGIC:
        raise ValueError("not a weight checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    offset = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=offset).reshape(shape)
        offset += 8 * size
        out[name] = arr.astype(np.float64)
    return out


def save_weights(weights: dict[str, np.ndarray], path) -> None:
    with open(path, "wb") as fh:
        fh.write(weights_to_bytes(weights))


def load_weights(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return weights_from_bytes(fh.read())
