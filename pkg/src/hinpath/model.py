"""Path encoder, path attention and preference predictor.

Each path ``(v_1, r_1, ..., r_{l-1}, v_l)`` is fed to a GRU one step per node,
with input ``[e_v; e_r]`` and the reserved END relation in the last slot.  The
final hidden state is the path embedding.  Embeddings of a pair's paths are
pooled with softmax attention and the pooled vector goes through a logistic
readout.

Everything is computed in batches: the paths of many examples are flattened,
grouped by length so each GRU step is one matrix product, and pooled back per
example with segment sums.  The single-example functions are batches of one.
The backward pass is written by hand and checked against finite differences
in the test suite.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import numerics as nx
from .errors import IndexOutOfBounds, StaleTrace
from .graph import END
from .numerics import ParamStore, sigmoid

GRU_GATES = ("z", "r", "h")


@dataclass(frozen=True)
class ModelConfig:
    num_entities: int
    num_relations: int
    d: int = 64
    h: int = 64
    k: int = 32

    def __post_init__(self):
        for name in ("d", "h", "k", "num_entities", "num_relations"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, h, k = cfg.d, cfg.h, cfg.k
    shapes = {"E_v": (cfg.num_entities, d), "E_r": (cfg.num_relations, d)}
    for g in GRU_GATES:
        shapes[f"W_{g}"] = (h, 2 * d)
    for g in GRU_GATES:
        shapes[f"U_{g}"] = (h, h)
    for g in GRU_GATES:
        shapes[f"b_{g}"] = (h,)
    shapes.update({"W_a": (k, h), "w": (k,), "w_z": (h,), "b": (1,)})
    return shapes


def init_params(cfg: ModelConfig, seed=0) -> ParamStore:
    """Xavier-uniform weights, zero biases, drawn in a fixed order from ``seed``."""
    rng = nx.make_rng(seed)
    store = ParamStore()
    for name, shape in param_shapes(cfg).items():
        if name.startswith("b"):
            store.add(name, np.zeros(shape))
        elif len(shape) == 1:
            store.add(name, nx.xavier_init(shape[0], 1, rng).reshape(shape))
        else:
            store.add(name, nx.xavier_init(*shape, rng))
    return store


def zero_params(cfg: ModelConfig) -> ParamStore:
    store = ParamStore()
    for name, shape in param_shapes(cfg).items():
        store.add(name, np.zeros(shape))
    return store


def config_of(params: ParamStore) -> ModelConfig:
    ne, d = params["E_v"].shape
    nr = params["E_r"].shape[0]
    k, h = params["W_a"].shape
    return ModelConfig(num_entities=ne, num_relations=nr, d=d, h=h, k=k)


# ---------------------------------------------------------------------------
# batch layout


@dataclass
class _Group:
    """All paths of one length inside a batch."""

    index: np.ndarray  # positions in the flat path list
    nodes: np.ndarray  # (n, l)
    rels: np.ndarray  # (n, l), END in the last column
    steps: list | None = None  # per step: (x, h_prev, z, r, c, h)


class PathBatch:
    """Flattened paths of many examples, ordered by example."""

    def __init__(self, path_lists: Sequence[Sequence]):
        self.n_examples = len(path_lists)
        seg, seqs = [], []
        for e, paths in enumerate(path_lists):
            for p in paths:
                seg.append(e)
                seqs.append(p)
        self.segment = np.asarray(seg, dtype=np.int64)
        self.n_paths = len(seqs)
        self.counts = np.bincount(self.segment, minlength=self.n_examples) if seqs else np.zeros(self.n_examples, np.int64)
        by_len: dict[int, list[int]] = {}
        for j, p in enumerate(seqs):
            by_len.setdefault(len(p.nodes), []).append(j)
        self.groups: list[_Group] = []
        for length in sorted(by_len):
            idx = by_len[length]
            nodes = np.array([seqs[j].nodes for j in idx], dtype=np.int64).reshape(len(idx), length)
            rels = np.full((len(idx), length), END, dtype=np.int64)
            if length > 1:
                rels[:, :-1] = np.array([seqs[j].relations for j in idx], dtype=np.int64).reshape(len(idx), length - 1)
            self.groups.append(_Group(np.asarray(idx, dtype=np.int64), nodes, rels))


class ForwardTrace:
    """Activations of one batched forward pass, kept for backward."""

    def __init__(self, batch: PathBatch, version: int):
        self.batch = batch
        self.version = version
        self.p = None  # (P, h) path embeddings
        self.u = None  # (P, k) tanh(W_a p)
        self.logits_att = None  # (P,)
        self.weights = None  # (P,)
        self.z = None  # (B, h)
        self.logit = None  # (B,)
        self.y_hat = None  # (B,)

    def example_slice(self, e: int) -> slice:
        start = int(self.batch.counts[:e].sum())
        return slice(start, start + int(self.batch.counts[e]))

    def attention(self, e: int = 0) -> np.ndarray:
        return self.weights[self.example_slice(e)]

    def path_embeddings(self, e: int = 0) -> np.ndarray:
        return self.p[self.example_slice(e)]

    def gates(self, path_index: int) -> list[dict]:
        """Per-step ``z``, ``r``, candidate and hidden state for one flat path."""
        for g in self.batch.groups:
            hit = np.nonzero(g.index == path_index)[0]
            if hit.size:
                row = int(hit[0])
                return [
                    {"z": z[row], "r": r[row], "h_tilde": c[row], "h": hn[row]}
                    for (_, _, z, r, c, hn) in g.steps
                ]
        raise IndexError(path_index)


def _check_bounds(params: ParamStore, batch: PathBatch) -> None:
    ne = params["E_v"].shape[0]
    nr = params["E_r"].shape[0]
    for g in batch.groups:
        if g.nodes.size and (g.nodes.min() < 0 or g.nodes.max() >= ne):
            raise IndexOutOfBounds(f"node id outside embedding table of {ne} rows")
        if g.rels.size and (g.rels.min() < 0 or g.rels.max() >= nr):
            raise IndexOutOfBounds(f"relation id outside embedding table of {nr} rows")


def _gru_forward(params: ParamStore, group: _Group) -> np.ndarray:
    Ev, Er = params["E_v"], params["E_r"]
    Wz, Wr, Wh = params["W_z"], params["W_r"], params["W_h"]
    Uz, Ur, Uh = params["U_z"], params["U_r"], params["U_h"]
    bz, br, bh = params["b_z"], params["b_r"], params["b_h"]
    n, length = group.nodes.shape
    h_prev = np.zeros((n, Uz.shape[0]))
    steps = []
    for t in range(length):
        x = np.concatenate([Ev[group.nodes[:, t]], Er[group.rels[:, t]]], axis=1)
        z = sigmoid(x @ Wz.T + h_prev @ Uz.T + bz)
        r = sigmoid(x @ Wr.T + h_prev @ Ur.T + br)
        c = np.tanh(x @ Wh.T + (r * h_prev) @ Uh.T + bh)
        h = (1.0 - z) * h_prev + z * c
        steps.append((x, h_prev, z, r, c, h))
        h_prev = h
    group.steps = steps
    return h_prev


def _segment_softmax(s: np.ndarray, seg: np.ndarray, n: int) -> np.ndarray:
    top = np.full(n, -np.inf)
    np.maximum.at(top, seg, s)
    e = np.exp(s - top[seg])
    den = np.zeros(n)
    np.add.at(den, seg, e)
    return e / den[seg]


def _segment_sum(rows: np.ndarray, seg: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n,) + rows.shape[1:])
    np.add.at(out, seg, rows)
    return out


def forward(params: ParamStore, path_lists: Sequence[Sequence] | PathBatch) -> ForwardTrace:
    """Score every example of a batch; an example with no paths pools to zero."""
    batch = path_lists if isinstance(path_lists, PathBatch) else PathBatch(path_lists)
    _check_bounds(params, batch)
    h = params["U_z"].shape[0]
    trace = ForwardTrace(batch, params.version)
    p = np.zeros((batch.n_paths, h))
    for g in batch.groups:
        p[g.index] = _gru_forward(params, g)
    seg = batch.segment
    u = np.tanh(p @ params["W_a"].T)
    s = u @ params["w"]
    a = _segment_softmax(s, seg, batch.n_examples)
    z = _segment_sum(a[:, None] * p, seg, batch.n_examples)
    logit = z @ params["w_z"] + params["b"][0]
    trace.p, trace.u, trace.logits_att, trace.weights = p, u, s, a
    trace.z, trace.logit, trace.y_hat = z, logit, sigmoid(logit)
    return trace


def _gru_backward(params: ParamStore, group: _Group, dh: np.ndarray, d_ev: np.ndarray, d_er: np.ndarray) -> None:
    G = params.grads
    Wz, Wr, Wh = params["W_z"], params["W_r"], params["W_h"]
    Uz, Ur, Uh = params["U_z"], params["U_r"], params["U_h"]
    d = params["E_v"].shape[1]
    for t in range(len(group.steps) - 1, -1, -1):
        x, h_prev, z, r, c, _ = group.steps[t]
        dz = dh * (c - h_prev)
        dc = dh * z
        dh_prev = dh * (1.0 - z)

        da_c = nx.tanh_backward(c, dc)
        rh = r * h_prev
        G["W_h"] += da_c.T @ x
        G["U_h"] += da_c.T @ rh
        G["b_h"] += da_c.sum(axis=0)
        d_rh = da_c @ Uh
        dr = d_rh * h_prev
        dh_prev += d_rh * r

        da_z = nx.sigmoid_backward(z, dz)
        G["W_z"] += da_z.T @ x
        G["U_z"] += da_z.T @ h_prev
        G["b_z"] += da_z.sum(axis=0)

        da_r = nx.sigmoid_backward(r, dr)
        G["W_r"] += da_r.T @ x
        G["U_r"] += da_r.T @ h_prev
        G["b_r"] += da_r.sum(axis=0)

        dh_prev += da_z @ Uz + da_r @ Ur
        dx = da_c @ Wh + da_z @ Wz + da_r @ Wr
        np.add.at(d_ev, group.nodes[:, t], dx[:, :d])
        np.add.at(d_er, group.rels[:, t], dx[:, d:])
        dh = dh_prev


def backward(trace: ForwardTrace, labels, params: ParamStore, weights=None) -> np.ndarray:
    """Accumulate gradients of ``sum_e weights[e] * BCE(example e)`` into ``params.grads``.

    Returns the per-example loss-to-logit gradients (already weighted).
    """
    if trace.version != params.version:
        raise StaleTrace("parameters changed since this trace was computed")
    batch = trace.batch
    y = np.asarray(labels, dtype=float).reshape(batch.n_examples)
    c = np.ones(batch.n_examples) if weights is None else np.asarray(weights, dtype=float).reshape(batch.n_examples)
    G = params.grads
    dlogit = (trace.y_hat - y) * c
    G["b"] += dlogit.sum()
    G["w_z"] += dlogit @ trace.z
    if batch.n_paths == 0:
        return dlogit

    seg = batch.segment
    p, u, a = trace.p, trace.u, trace.weights
    dz = dlogit[:, None] * params["w_z"][None, :]
    dz_p = dz[seg]
    dp = a[:, None] * dz_p
    da = np.einsum("ij,ij->i", dz_p, p)
    mean_da = np.zeros(batch.n_examples)
    np.add.at(mean_da, seg, a * da)
    ds = a * (da - mean_da[seg])
    G["w"] += ds @ u
    dpre = nx.tanh_backward(u, ds[:, None] * params["w"][None, :])
    G["W_a"] += dpre.T @ p
    dp += dpre @ params["W_a"]

    d_ev, d_er = G["E_v"], G["E_r"]
    for g in batch.groups:
        _gru_backward(params, g, dp[g.index], d_ev, d_er)
    return dlogit


# ---------------------------------------------------------------------------
# single-example API


def encode_path(params: ParamStore, path) -> tuple[np.ndarray, list[dict]]:
    """Final GRU hidden state of one path and its per-step gate activations."""
    batch = PathBatch([[path]])
    _check_bounds(params, batch)
    g = batch.groups[0]
    h = _gru_forward(params, g)[0]
    steps = [{"z": z[0], "r": r[0], "h_tilde": c[0], "h": hn[0]} for (_, _, z, r, c, hn) in g.steps]
    return h, steps


def attend_and_fuse(params: ParamStore, path_embeddings) -> tuple[np.ndarray, np.ndarray]:
    P = np.asarray(path_embeddings, dtype=float)
    if P.ndim != 2 or P.shape[0] < 1:
        raise ValueError("need at least one path embedding")
    a = attention_weights(attention_logits(params, P))
    return a @ P, a


def attention_weights(logits) -> np.ndarray:
    """Max-subtracted softmax over the logits of one path set."""
    s = np.asarray(logits, dtype=float).reshape(-1)
    return _segment_softmax(s, np.zeros(len(s), dtype=np.int64), 1)


def attention_logits(params: ParamStore, path_embeddings) -> np.ndarray:
    return np.tanh(np.asarray(path_embeddings, dtype=float) @ params["W_a"].T) @ params["w"]


def predict_logit(params: ParamStore, z_ui) -> float:
    return float(nx.matvec(params["w_z"][None, :], np.asarray(z_ui, dtype=float))[0] + params["b"][0])


def predict(params: ParamStore, z_ui) -> float:
    return sigmoid(predict_logit(params, z_ui))


def bce_loss(logit, y):
    """Stable binary cross-entropy on a pre-sigmoid logit; returns (loss, dloss/dlogit)."""
    logit = np.asarray(logit, dtype=float)
    y = np.asarray(y, dtype=float)
    loss = np.maximum(logit, 0.0) - logit * y + np.log1p(np.exp(-np.abs(logit)))
    grad = sigmoid(logit) - y
    if loss.ndim == 0:
        return float(loss), float(grad)
    return loss, grad


def score_pair(params: ParamStore, g, u: int, i: int, path_set) -> tuple[float, ForwardTrace]:
    """Preference score of one pair through its selected paths."""
    paths = list(path_set.paths if hasattr(path_set, "paths") else path_set)
    trace = forward(params, [paths])
    return float(trace.y_hat[0]), trace


def example_loss(params: ParamStore, paths, y) -> float:
    trace = forward(params, [list(paths)])
    return bce_loss(trace.logit[0], y)[0]
