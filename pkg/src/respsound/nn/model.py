"""LSTM/BLSTM classifier: cell math, BPTT gradients, SGD, checkpoints.

The cell computes, per step, with z = [x_t, y_{t-1}]:

    i = sigmoid(W_i z + b_i)        f = sigmoid(W_f z + b_f)
    o = sigmoid(W_o z + b_o)        g = tanh(W_g z + b_g)
    c_t = f * c_{t-1} + i * g       y_t = o * tanh(c_t)

Biases default to zero so the default forward pass is the plain gated
recurrence. The bidirectional variant runs a second cell over the reversed
sequence and merges output t with reverse-output N-t+1 (concatenation by
default, elementwise sum optionally). A dense softmax head over the final
(or time-averaged) hidden output scores the eight diagnosis classes.

All gradients are hand-derived and validated against central finite
differences by :func:`grad_check`.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from ._lstm_py import sigmoid

__all__ = [
    "N_CLASSES",
    "sigmoid",
    "tanh_vec",
    "LstmParams",
    "LstmState",
    "StepCache",
    "DenseParams",
    "ModelParams",
    "Gradients",
    "init_lstm_params",
    "init_model",
    "lstm_cell_forward",
    "lstm_sequence_forward",
    "blstm_forward",
    "dense_softmax_forward",
    "cross_entropy",
    "model_forward",
    "model_loss",
    "model_backward",
    "loss_and_gradients",
    "grad_check",
    "sgd_step",
    "clip_gradients",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
]

N_CLASSES = 8
PROB_FLOOR = 1e-12


def tanh_vec(z):
    return np.tanh(np.asarray(z, dtype=np.float64))


@dataclass(frozen=True)
class LstmParams:
    """Gate weights of shape (H, D+H) acting on [x_t, y_{t-1}], plus biases."""

    w_i: np.ndarray
    w_f: np.ndarray
    w_o: np.ndarray
    w_g: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray
    b_g: np.ndarray

    def __post_init__(self):
        shapes = {m.shape for m in (self.w_i, self.w_f, self.w_o, self.w_g)}
        if len(shapes) != 1:
            raise ValueError(f"gate matrices must share one shape, got {shapes}")

    @property
    def hidden_size(self) -> int:
        return self.w_i.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w_i.shape[1] - self.w_i.shape[0]

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """(4H, D+H) weight block and (4H,) bias block in i,f,o,g order."""
        W = np.ascontiguousarray(np.vstack([self.w_i, self.w_f, self.w_o, self.w_g]))
        b = np.concatenate([self.b_i, self.b_f, self.b_o, self.b_g])
        return W, b

    @staticmethod
    def from_stacked(W: np.ndarray, b: np.ndarray) -> "LstmParams":
        H = W.shape[0] // 4
        return LstmParams(W[:H].copy(), W[H:2 * H].copy(),
                          W[2 * H:3 * H].copy(), W[3 * H:].copy(),
                          b[:H].copy(), b[H:2 * H].copy(),
                          b[2 * H:3 * H].copy(), b[3 * H:].copy())


@dataclass(frozen=True)
class LstmState:
    c: np.ndarray
    y: np.ndarray

    @staticmethod
    def zero(hidden_size: int) -> "LstmState":
        return LstmState(np.zeros(hidden_size), np.zeros(hidden_size))


@dataclass(frozen=True)
class StepCache:
    """Everything one forward step produced that the backward pass needs."""

    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray
    x: np.ndarray
    y_prev: np.ndarray
    c_prev: np.ndarray
    c: np.ndarray
    y: np.ndarray


@dataclass(frozen=True)
class DenseParams:
    w: np.ndarray  # (n_classes, H_out)
    b: np.ndarray  # (n_classes,)


@dataclass(frozen=True)
class ModelParams:
    mode: str  # "uni" | "bi"
    forward_cell: LstmParams
    backward_cell: LstmParams | None
    dense: DenseParams
    merge: str = "concat"  # "concat" | "sum", bi mode only
    pooling: str = "last"  # "last" | "mean"

    def __post_init__(self):
        if self.mode not in ("uni", "bi"):
            raise ValueError(f"mode must be 'uni' or 'bi', got {self.mode!r}")
        if self.mode == "bi":
            if self.backward_cell is None:
                raise ValueError("bidirectional mode requires backward params")
            if self.backward_cell.w_i.shape != self.forward_cell.w_i.shape:
                raise ValueError("forward/backward cells must be shaped alike")
        if self.merge not in ("concat", "sum"):
            raise ValueError(f"merge must be 'concat' or 'sum', got {self.merge!r}")
        if self.pooling not in ("last", "mean"):
            raise ValueError(f"pooling must be 'last' or 'mean', got {self.pooling!r}")
        expected = self.forward_cell.hidden_size
        if self.mode == "bi" and self.merge == "concat":
            expected *= 2
        if self.dense.w.shape[1] != expected:
            raise ValueError(
                f"dense input dim {self.dense.w.shape[1]} != merged dim {expected}")

    @property
    def hidden_size(self) -> int:
        return self.forward_cell.hidden_size

    @property
    def input_dim(self) -> int:
        return self.forward_cell.input_dim


@dataclass(frozen=True)
class Gradients:
    forward_cell: LstmParams
    backward_cell: LstmParams | None
    dense: DenseParams


def init_lstm_params(input_dim: int, hidden_size: int,
                     rng: np.random.Generator,
                     forget_bias: float = 0.0) -> LstmParams:
    """Scaled-uniform init in +-1/sqrt(D+H); biases zero (gates unsaturated)."""
    bound = 1.0 / np.sqrt(input_dim + hidden_size)
    def w():
        return rng.uniform(-bound, bound, size=(hidden_size, input_dim + hidden_size))
    return LstmParams(w(), w(), w(), w(),
                      np.zeros(hidden_size),
                      np.full(hidden_size, float(forget_bias)),
                      np.zeros(hidden_size), np.zeros(hidden_size))


def init_model(input_dim: int, hidden_size: int, mode: str = "uni",
               seed: int = 7, n_classes: int = N_CLASSES,
               merge: str = "concat", pooling: str = "last",
               forget_bias: float = 0.0) -> ModelParams:
    rng = np.random.default_rng(seed)
    fwd = init_lstm_params(input_dim, hidden_size, rng, forget_bias)
    bwd = None
    h_out = hidden_size
    if mode == "bi":
        bwd = init_lstm_params(input_dim, hidden_size, rng, forget_bias)
        if merge == "concat":
            h_out = 2 * hidden_size
    bound = 1.0 / np.sqrt(h_out)
    dense = DenseParams(rng.uniform(-bound, bound, size=(n_classes, h_out)),
                        np.zeros(n_classes))
    return ModelParams(mode, fwd, bwd, dense, merge=merge, pooling=pooling)


def lstm_cell_forward(p: LstmParams, x: np.ndarray,
                      prev: LstmState) -> tuple[LstmState, StepCache]:
    """One gated recurrence step; the direct reference for the kernels."""
    x = np.asarray(x, dtype=np.float64)
    z = np.concatenate([x, prev.y])
    i = sigmoid(p.w_i @ z + p.b_i)
    f = sigmoid(p.w_f @ z + p.b_f)
    o = sigmoid(p.w_o @ z + p.b_o)
    g = np.tanh(p.w_g @ z + p.b_g)
    c = f * prev.c + i * g
    y = o * np.tanh(c)
    state = LstmState(c, y)
    cache = StepCache(i, f, o, g, x, prev.y, prev.c, c, y)
    return state, cache


def _as_frames(xs) -> np.ndarray:
    frames = getattr(xs, "frames", xs)
    frames = np.ascontiguousarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise ValueError(f"need a nonempty (T, D) input, got shape {frames.shape}")
    return frames


@dataclass(frozen=True)
class SequenceCache:
    """Kernel outputs for one direction, kept for the backward pass."""

    xs: np.ndarray
    gates: np.ndarray
    cs: np.ndarray
    ys: np.ndarray

    def step(self, t: int) -> StepCache:
        H = self.cs.shape[1]
        g = self.gates[t]
        zero = np.zeros(H)
        return StepCache(g[:H], g[H:2 * H], g[2 * H:3 * H], g[3 * H:],
                         self.xs[t],
                         self.ys[t - 1] if t > 0 else zero,
                         self.cs[t - 1] if t > 0 else zero,
                         self.cs[t], self.ys[t])


def lstm_sequence_forward(p: LstmParams, xs) -> tuple[np.ndarray, SequenceCache]:
    """Left-to-right recurrence from zero state; returns (ys, cache)."""
    frames = _as_frames(xs)
    W, b = p.stacked()
    gates, cs, ys = kernels.lstm_forward(W, b, frames)
    return ys, SequenceCache(frames, gates, cs, ys)


def blstm_forward(p_fwd: LstmParams, p_bwd: LstmParams, xs,
                  merge: str = "concat") -> np.ndarray:
    """Merge forward output t with reversed-pass output N-t+1 (1-based)."""
    frames = _as_frames(xs)
    ys_f, _ = lstm_sequence_forward(p_fwd, frames)
    ys_b, _ = lstm_sequence_forward(p_bwd, frames[::-1])
    aligned_b = ys_b[::-1]
    if merge == "concat":
        return np.hstack([ys_f, aligned_b])
    if merge == "sum":
        return ys_f + aligned_b
    raise ValueError(f"unknown merge {merge!r}")


def dense_softmax_forward(d: DenseParams, h: np.ndarray) -> np.ndarray:
    logits = d.w @ h + d.b
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def cross_entropy(probs: np.ndarray, label: int) -> float:
    if not 0 <= label < len(probs):
        raise ValueError(f"label {label} outside [0, {len(probs)})")
    return float(-np.log(max(float(probs[label]), PROB_FLOOR)))


@dataclass(frozen=True)
class ModelCache:
    fwd: SequenceCache
    bwd: SequenceCache | None
    h: np.ndarray
    probs: np.ndarray


def model_forward(m: ModelParams, xs) -> tuple[np.ndarray, ModelCache]:
    """Full forward pass: recurrence(s) -> merge -> pool -> softmax."""
    frames = _as_frames(xs)
    ys_f, cache_f = lstm_sequence_forward(m.forward_cell, frames)
    cache_b = None
    if m.mode == "bi":
        ys_b, cache_b = lstm_sequence_forward(m.backward_cell, frames[::-1])
        aligned_b = ys_b[::-1]
        merged = (np.hstack([ys_f, aligned_b]) if m.merge == "concat"
                  else ys_f + aligned_b)
    else:
        merged = ys_f
    h = merged[-1] if m.pooling == "last" else merged.mean(axis=0)
    probs = dense_softmax_forward(m.dense, h)
    return probs, ModelCache(cache_f, cache_b, h, probs)


def model_loss(m: ModelParams, xs, label: int) -> float:
    probs, _ = model_forward(m, xs)
    return cross_entropy(probs, label)


def model_backward(m: ModelParams, cache: ModelCache, label: int) -> Gradients:
    """Exact gradients of the cross-entropy loss via BPTT."""
    probs = cache.probs
    if probs[label] <= PROB_FLOOR:
        # loss is clamped to -log(PROB_FLOOR); its gradient there is zero
        dlogits = np.zeros_like(probs)
    else:
        dlogits = probs.copy()
        dlogits[label] -= 1.0
    d_dense = DenseParams(np.outer(dlogits, cache.h), dlogits)
    dh = m.dense.w.T @ dlogits

    T = cache.fwd.xs.shape[0]
    H = m.hidden_size

    if m.mode == "bi" and m.merge == "concat":
        dh_f, dh_b = dh[:H], dh[H:]
    elif m.mode == "bi":
        dh_f = dh_b = dh
    else:
        dh_f, dh_b = dh, None

    def external_grads(dh_dir: np.ndarray, reverse_time: bool) -> np.ndarray:
        dys = np.zeros((T, H))
        if m.pooling == "last":
            # merged step T reads forward step T and reversed-pass step 1
            dys[0 if reverse_time else T - 1] = dh_dir
        else:
            dys[:] = dh_dir / T
        return dys

    def direction_grads(p: LstmParams, sc: SequenceCache,
                        dys: np.ndarray) -> LstmParams:
        W, _ = p.stacked()
        dW, db, _ = kernels.lstm_backward(W, sc.xs, sc.gates, sc.cs, sc.ys, dys)
        return LstmParams.from_stacked(dW, db)

    g_fwd = direction_grads(m.forward_cell, cache.fwd,
                            external_grads(dh_f, reverse_time=False))
    g_bwd = None
    if m.mode == "bi":
        g_bwd = direction_grads(m.backward_cell, cache.bwd,
                                external_grads(dh_b, reverse_time=True))
    return Gradients(g_fwd, g_bwd, d_dense)


def loss_and_gradients(m: ModelParams, xs, label: int
                       ) -> tuple[float, np.ndarray, Gradients]:
    probs, cache = model_forward(m, xs)
    return cross_entropy(probs, label), probs, model_backward(m, cache, label)


# ---------------------------------------------------------------------------
# flat parameter vector, in checkpoint block order

def _cell_arrays(p: LstmParams) -> list[np.ndarray]:
    return [p.w_i, p.w_f, p.w_o, p.w_g, p.b_i, p.b_f, p.b_o, p.b_g]


def _model_arrays(m: ModelParams | Gradients) -> list[np.ndarray]:
    arrays = _cell_arrays(m.forward_cell)
    if m.backward_cell is not None:
        arrays += _cell_arrays(m.backward_cell)
    return arrays + [m.dense.w, m.dense.b]


def params_to_vector(m: ModelParams | Gradients) -> np.ndarray:
    return np.concatenate([a.ravel() for a in _model_arrays(m)])


def vector_to_params(vec: np.ndarray, template: ModelParams) -> ModelParams:
    out: list[np.ndarray] = []
    pos = 0
    for a in _model_arrays(template):
        out.append(vec[pos:pos + a.size].reshape(a.shape).copy())
        pos += a.size
    if pos != vec.size:
        raise ValueError(f"vector of {vec.size} values, expected {pos}")

    def take_cell(block: list[np.ndarray]) -> LstmParams:
        return LstmParams(*block)

    fwd = take_cell(out[:8])
    rest = out[8:]
    bwd = None
    if template.backward_cell is not None:
        bwd = take_cell(rest[:8])
        rest = rest[8:]
    dense = DenseParams(rest[0], rest[1])
    return replace(template, forward_cell=fwd, backward_cell=bwd, dense=dense)


def _reference_loss(theta: np.ndarray, m: ModelParams, frames: np.ndarray,
                    label: int) -> np.longdouble:
    """Straight-line transliteration of the forward pass, any float dtype.

    This is the independent side of the gradient oracle: it shares no code
    with the kernels and is run in extended precision so central
    differences at eps = 1e-5 are not drowned by round-off.
    """
    arrays = []
    pos = 0
    for a in _model_arrays(m):
        arrays.append(theta[pos:pos + a.size].reshape(a.shape))
        pos += a.size
    cells = [arrays[:8]]
    rest = arrays[8:]
    if m.backward_cell is not None:
        cells.append(rest[:8])
        rest = rest[8:]
    dense_w, dense_b = rest

    def stable_sigmoid(z):
        out = np.empty_like(z)
        p = z >= 0
        out[p] = 1.0 / (1.0 + np.exp(-z[p]))
        e = np.exp(z[~p])
        out[~p] = e / (1.0 + e)
        return out

    def run(cell, xs):
        w_i, w_f, w_o, w_g, b_i, b_f, b_o, b_g = cell
        H = w_i.shape[0]
        y = np.zeros(H, dtype=theta.dtype)
        c = np.zeros(H, dtype=theta.dtype)
        ys = []
        for x in xs:
            z = np.concatenate([x, y])
            i = stable_sigmoid(w_i @ z + b_i)
            f = stable_sigmoid(w_f @ z + b_f)
            o = stable_sigmoid(w_o @ z + b_o)
            g = np.tanh(w_g @ z + b_g)
            c = f * c + i * g
            y = o * np.tanh(c)
            ys.append(y)
        return np.stack(ys)

    ys_f = run(cells[0], frames)
    if m.mode == "bi":
        ys_b = run(cells[1], frames[::-1])[::-1]
        merged = (np.hstack([ys_f, ys_b]) if m.merge == "concat"
                  else ys_f + ys_b)
    else:
        merged = ys_f
    h = merged[-1] if m.pooling == "last" else merged.mean(axis=0)
    logits = dense_w @ h + dense_b
    e = np.exp(logits - logits.max())
    p = e / e.sum()
    return -np.log(np.maximum(p[label], theta.dtype.type(PROB_FLOOR)))


def grad_check(m: ModelParams, xs, label: int, eps: float = 1e-5) -> float:
    """Max relative error of analytic vs central-difference gradients.

    The numeric side uses the extended-precision reference evaluator;
    relative error per scalar is |a-n| / max(|a|, |n|, 1e-8).
    """
    if not 0 < eps <= 1e-2:
        raise ValueError(f"eps must lie in (0, 1e-2], got {eps}")
    frames = _as_frames(xs)
    _, _, grads = loss_and_gradients(m, frames, label)
    analytic = params_to_vector(grads)
    theta = params_to_vector(m).astype(np.longdouble)
    frames_hp = frames.astype(np.longdouble)
    eps_hp = np.longdouble(eps)
    numeric = np.empty(theta.size, dtype=np.longdouble)
    for k in range(theta.size):
        saved = theta[k]
        theta[k] = saved + eps_hp
        lo_hi = _reference_loss(theta, m, frames_hp, label)
        theta[k] = saved - eps_hp
        lo_lo = _reference_loss(theta, m, frames_hp, label)
        theta[k] = saved
        numeric[k] = (lo_hi - lo_lo) / (2.0 * eps_hp)
    numeric = numeric.astype(np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def _map_cell(fn, *cells: LstmParams) -> LstmParams:
    return LstmParams(*[fn(*arrs) for arrs in
                        zip(*map(_cell_arrays, cells))])


def sgd_step(m: ModelParams, g: Gradients, lr: float) -> ModelParams:
    """theta <- theta - lr * grad; returns a new immutable snapshot."""
    if lr < 0:
        raise ValueError(f"learning rate must be nonnegative, got {lr}")
    step = lambda p, d: p - lr * d
    fwd = _map_cell(step, m.forward_cell, g.forward_cell)
    bwd = None
    if m.backward_cell is not None:
        bwd = _map_cell(step, m.backward_cell, g.backward_cell)
    dense = DenseParams(step(m.dense.w, g.dense.w), step(m.dense.b, g.dense.b))
    return replace(m, forward_cell=fwd, backward_cell=bwd, dense=dense)


def clip_gradients(g: Gradients, max_norm: float) -> Gradients:
    """Optional global max-norm clip."""
    flat = np.concatenate([a.ravel() for a in _model_arrays(g)])
    norm = float(np.linalg.norm(flat))
    if norm <= max_norm or norm == 0.0:
        return g
    scale = max_norm / norm
    shrink = lambda a: a * scale
    fwd = _map_cell(shrink, g.forward_cell)
    bwd = _map_cell(shrink, g.backward_cell) if g.backward_cell is not None else None
    dense = DenseParams(g.dense.w * scale, g.dense.b * scale)
    return Gradients(fwd, bwd, dense)


# ---------------------------------------------------------------------------
# checkpoint format: text header, then float64-LE blocks in the order
# W_i, W_f, W_o, W_g, b_i..b_g, backward set if present, dense W, dense b

CHECKPOINT_MAGIC = b"respsound-checkpoint v1\n"


class CheckpointError(ValueError):
    pass


def save_checkpoint(m: ModelParams, path, seed: int,
                    extra: dict[str, str] | None = None) -> None:
    lines = [
        f"mode={m.mode}",
        f"input_dim={m.input_dim}",
        f"hidden={m.hidden_size}",
        f"classes={m.dense.w.shape[0]}",
        f"seed={seed}",
        f"merge={m.merge}",
        f"pooling={m.pooling}",
    ]
    for key, value in (extra or {}).items():
        lines.append(f"{key}={value}")
    header = CHECKPOINT_MAGIC + "".join(f"{l}\n" for l in lines).encode()
    header += b"end-header\n"
    blob = params_to_vector(m).astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)


def load_checkpoint(path) -> tuple[ModelParams, dict[str, str]]:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a respsound checkpoint "
                              f"(or version mismatch)")
    head, sep, tail = data.partition(b"end-header\n")
    if not sep:
        raise CheckpointError(f"{path}: truncated header")
    meta = dict(line.split("=", 1)
                for line in head.decode().splitlines()[1:] if "=" in line)
    try:
        mode = meta["mode"]
        d = int(meta["input_dim"])
        h = int(meta["hidden"])
        n_classes = int(meta["classes"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad header field ({exc})") from exc
    template = init_model(d, h, mode=mode, n_classes=n_classes,
                          merge=meta.get("merge", "concat"),
                          pooling=meta.get("pooling", "last"))
    (declared,) = struct.unpack_from("<Q", tail, 0)
    blob = tail[8:]
    expected = params_to_vector(template).size * 8
    if declared != expected or len(blob) < declared:
        raise CheckpointError(
            f"{path}: parameter block holds {len(blob)} bytes, "
            f"declared {declared}, expected {expected}")
    vec = np.frombuffer(blob[:declared], dtype="<f8").copy()
    return vector_to_params(vec, template), meta
