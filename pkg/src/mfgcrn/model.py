"""Multi-feature graph convolutional recurrent network.

Pipeline for one batch of closeness/period/trend windows:

* spatio-temporal embedding ``SE + f_TE(TE)`` added to ``f_in(X)`` per step;
* one learned adjacency per areal feature from sentinel attention;
* three multi-graph GRU encoders (closeness, period, trend) sharing the graphs;
* per-area softmax fusion of the three final states, projected to channels.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from . import numerics as nx
from .data import TE_DIM, Batch
from .errors import ConfigError, ContractError, DimensionError
from .numerics import ParameterStore, Tensor

UNITS = ("c", "p", "q")


@dataclass
class ModelConfig:
    n_areas: int
    n_channels: int = 2
    D: int = 64
    feature_names: list = field(default_factory=list)
    feature_widths: list = field(default_factory=list)
    L_c: int = 6
    L_p: int = 7
    L_q: int = 3
    use_proximity: bool = True
    use_identity: bool = True
    chronological: bool = True
    zero_sentinel: bool = False
    fused: bool = True

    def __post_init__(self):
        problems = []
        if len(self.feature_names) != len(self.feature_widths):
            problems.append("feature_names and feature_widths differ in length")
        if any(w < 1 for w in self.feature_widths):
            problems.append("every feature width must be >= 1")
        if self.D < 1:
            problems.append("D must be >= 1")
        if self.n_areas < 1 or self.n_channels < 1:
            problems.append("n_areas and n_channels must be >= 1")
        if self.K < 1:
            problems.append("graph count K = identity + proximity + features must be >= 1")
        if problems:
            raise ConfigError(problems)

    @property
    def K_N(self) -> int:
        return len(self.feature_names)

    @property
    def K(self) -> int:
        return int(self.use_identity) + int(self.use_proximity) + self.K_N

    def lengths(self):
        return {"c": self.L_c, "p": self.L_p, "q": self.L_q}

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# ----------------------------------------------------------------------------
# parameters


def _glorot(rng, shape, fan_in, fan_out):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


def _add_mlp(store, rng, prefix, n_in, n_hidden, n_out):
    store.add(f"{prefix}.w1", _glorot(rng, (n_in, n_hidden), n_in, n_hidden))
    store.add(f"{prefix}.b1", np.zeros(n_hidden))
    store.add(f"{prefix}.w2", _glorot(rng, (n_hidden, n_out), n_hidden, n_out))
    store.add(f"{prefix}.b2", np.zeros(n_out))


def init_parameters(cfg: ModelConfig, seed: int = 0, dtype=np.float64) -> ParameterStore:
    """Glorot-uniform weights, zero biases, N(0, 0.01^2) spatial embedding."""
    rng = np.random.default_rng(seed)
    D, N, C, K = cfg.D, cfg.n_areas, cfg.n_channels, cfg.K
    s = ParameterStore(dtype)
    s.add("se", rng.normal(0.0, 0.01, size=(N, D)))
    _add_mlp(s, rng, "f_te", TE_DIM, D, D)
    for u in UNITS:
        _add_mlp(s, rng, f"f_in.{u}", C, D, D)
    for name, V in zip(cfg.feature_names, cfg.feature_widths):
        s.add(f"attn.{name}.w1", _glorot(rng, (D, V), V, D))
        s.add(f"attn.{name}.w2", _glorot(rng, (D, V), V, D))
        _add_mlp(s, rng, f"sent.{name}", V + D, D, 1)
    for u in UNITS:
        for gate in ("r", "u", "c"):
            s.add(f"enc.{u}.w_{gate}", _glorot(rng, (K, 2 * D, D), 2 * D, D))
        for gate in ("r", "u", "c"):
            s.add(f"enc.{u}.b_{gate}", np.zeros(D))
    for u in UNITS:
        s.add(f"fusion.w_{u}", _glorot(rng, (1, D), D, 1))
    _add_mlp(s, rng, "f_fusion", D, D, C)
    return s


class Params:
    """Read-only view producing tape leaves (``track=True``) or constants."""

    def __init__(self, store: ParameterStore, track: bool = True):
        self.store = store
        self.track = track

    def __getitem__(self, path) -> Tensor:
        if self.track:
            return self.store.tensor(path)
        return nx.Tensor(self.store.value(path), requires_grad=False)

    def mlp(self, prefix):
        return tuple(self[f"{prefix}.{k}"] for k in ("w1", "b1", "w2", "b2"))


def two_layer(x, w1, b1, w2, b2) -> Tensor:
    """Linear -> ReLU -> Linear."""
    return nx.matmul(nx.relu(nx.matmul(x, w1) + b1), w2) + b2


# ----------------------------------------------------------------------------
# embeddings


def spatio_temporal_embedding(te, se, f_te) -> Tensor:
    """``SE + f_TE(TE)``. ``te`` is (..., 36); output (..., N, D).

    A single encoding of shape (36,) gives an (N, D) embedding.
    """
    te = nx.as_tensor(te)
    if te.shape[-1] != TE_DIM:
        raise DimensionError(f"temporal encoding must have length {TE_DIM}, got {te.shape[-1]}")
    if te.ndim == 1:
        return se + two_layer(nx.reshape(te, (1, TE_DIM)), *f_te)
    v = two_layer(te, *f_te)
    v = nx.reshape(v, v.shape[:-1] + (1, v.shape[-1]))
    return se + v


def embed_input(x, ste, f_in) -> Tensor:
    """``f_in(X) + STE`` with ``x`` (..., N, C) and ``ste`` (..., N, D)."""
    return two_layer(x, *f_in) + ste


# ----------------------------------------------------------------------------
# sentinel attention


def attention_scores(features, w1, w2, D: int) -> Tensor:
    f = nx.as_tensor(features)
    u1 = nx.relu(nx.matmul(f, nx.transpose(w1)))
    u2 = nx.relu(nx.matmul(f, nx.transpose(w2)))
    return nx.scale(nx.matmul(u1, nx.transpose(u2)), 1.0 / math.sqrt(D))


def sentinel_values(features, se, f_sent) -> Tensor:
    """Non-negative per-area sentinel, shape (N, 1)."""
    return nx.relu(two_layer(nx.concat([nx.as_tensor(features), se]), *f_sent))


def sentinel_attention(features, se, w1, w2, f_sent, zero_sentinel: bool = False):
    """Learned adjacency from one areal feature. Returns (A (N, N), S (N, 1))."""
    D = se.shape[-1]
    e = attention_scores(features, w1, w2, D)
    s = sentinel_values(features, se, f_sent)
    if zero_sentinel:
        return nx.row_softmax(e), s
    return nx.sentinel_normalize(e, s), s


# ----------------------------------------------------------------------------
# recurrent cell


def mfgcgru_step_reference(x, h, graphs, w_r, w_u, w_c, b_r, b_u, b_c) -> Tensor:
    """Composite-op multi-graph GRU step (one tape node per primitive)."""
    x, h, graphs = nx.as_tensor(x), nx.as_tensor(h), nx.as_tensor(graphs)
    K = graphs.shape[0]
    if w_r.shape[0] != K:
        raise ContractError(f"{K} graphs but parameters for {w_r.shape[0]}")
    inv_k = 1.0 / K
    z = nx.concat([x, h])
    pre_r = pre_u = None
    props = [nx.matmul(nx.take(graphs, k), z) for k in range(K)]
    for k, p in enumerate(props):
        tr = nx.matmul(p, nx.take(w_r, k))
        tu = nx.matmul(p, nx.take(w_u, k))
        pre_r = tr if pre_r is None else pre_r + tr
        pre_u = tu if pre_u is None else pre_u + tu
    r = nx.sigmoid(nx.scale(pre_r, inv_k) + b_r)
    u = nx.sigmoid(nx.scale(pre_u, inv_k) + b_u)
    z2 = nx.concat([x, r * h])
    pre_c = None
    for k in range(K):
        tc = nx.matmul(nx.matmul(nx.take(graphs, k), z2), nx.take(w_c, k))
        pre_c = tc if pre_c is None else pre_c + tc
    c = nx.tanh(nx.scale(pre_c, inv_k) + b_c)
    return u * h + (1.0 - u) * c


def _cell_node(x, h, graphs, w_r, w_u, w_c, b_r, b_u, b_c, fixed_graphs: int = 0) -> Tensor:
    """One tape node for the fused kernel; ``x``/``h`` are node-major (N, B, D).

    The first ``fixed_graphs`` graph slots are constants, so their gradient
    product is skipped (reported as zeros).
    """
    args = [nx.as_tensor(a) for a in (x, h, graphs, w_r, w_u, w_c, b_r, b_u, b_c)]
    K = args[2].shape[0]
    if args[3].shape[0] != K:
        raise ContractError(f"{K} graphs but parameters for {args[3].shape[0]}")
    vals = [np.ascontiguousarray(a.value) for a in args]
    out, cache = kernels.cell_forward(*vals)

    def backward(g):
        return kernels.cell_backward(np.ascontiguousarray(g), cache, fixed_graphs)

    return nx.node(out, args, backward)


def _to_node_major(t: Tensor) -> Tensor:
    # (B, N, D) -> (N, B, D); unbatched (N, D) -> (N, 1, D)
    if t.ndim == 2:
        return nx.reshape(t, (t.shape[0], 1, t.shape[1]))
    return nx.permute(t, (1, 0, 2))


def _from_node_major(t: Tensor, batched: bool) -> Tensor:
    if not batched:
        return nx.reshape(t, (t.shape[0], t.shape[2]))
    return nx.permute(t, (1, 0, 2))


def mfgcgru_step_fused(x, h, graphs, w_r, w_u, w_c, b_r, b_u, b_c) -> Tensor:
    """Same step as a single tape node backed by :mod:`mfgcrn.kernels`."""
    x, h = nx.as_tensor(x), nx.as_tensor(h)
    batched = x.ndim == 3
    out = _cell_node(_to_node_major(x), _to_node_major(h), graphs, w_r, w_u, w_c, b_r, b_u, b_c)
    return _from_node_major(out, batched)


def mfgcgru_step(x, h, graphs, w_r, w_u, w_c, b_r, b_u, b_c, fused: bool = True) -> Tensor:
    fn = mfgcgru_step_fused if fused else mfgcgru_step_reference
    return fn(x, h, graphs, w_r, w_u, w_c, b_r, b_u, b_c)


def encode_sequence(inputs, graphs, weights, fused: bool = True, fixed_graphs: int = 0) -> Tensor:
    """Fold the cell over ``inputs`` (oldest first) from a zero state.

    Inputs are (B, N, D) or (N, D); the fused path keeps the state node-major
    between steps.
    """
    if not inputs:
        raise ContractError("cannot encode an empty sequence")
    first = nx.as_tensor(inputs[0])
    D = weights[0].shape[-1]
    h0 = np.zeros(first.shape[:-1] + (D,), dtype=first.value.dtype)
    if not fused:
        h = nx.as_tensor(h0)
        for x in inputs:
            h = mfgcgru_step_reference(x, h, graphs, *weights)
        return h
    batched = first.ndim == 3
    h = _to_node_major(nx.as_tensor(h0))
    for x in inputs:
        h = _cell_node(_to_node_major(nx.as_tensor(x)), h, graphs, *weights, fixed_graphs=fixed_graphs)
    return _from_node_major(h, batched)


# ----------------------------------------------------------------------------
# fusion and loss


def weighted_fusion(hs, ws, f_fusion):
    """Per-area softmax over the encoder states, then ``f_fusion``.

    ``hs``/``ws`` are sequences of three states (..., N, D) and (1, D) weights.
    Returns (prediction (..., N, C), alpha (..., N, 3)).
    """
    scores = nx.concat([nx.matmul(h, nx.transpose(w)) for h, w in zip(hs, ws)])
    alpha = nx.row_softmax(scores)
    fused = None
    for m, h in enumerate(hs):
        a = nx.take(alpha, m, axis=alpha.ndim - 1)
        term = nx.reshape(a, a.shape + (1,)) * h
        fused = term if fused is None else fused + term
    return two_layer(fused, *f_fusion), alpha


def l1_loss(pred, target) -> Tensor:
    return nx.mean(nx.absolute(nx.sub(pred, target)))


# ----------------------------------------------------------------------------
# the model


class STMFGCRN:
    """Bundles config, parameters, normalised areal features and static graphs."""

    def __init__(self, cfg: ModelConfig, store: ParameterStore | None = None, features=None,
                 proximity=None, seed: int = 0):
        self.cfg = cfg
        self.store = store if store is not None else init_parameters(cfg, seed)
        features = features or {}
        missing = [n for n in cfg.feature_names if n not in features]
        if missing:
            raise ConfigError([f"no matrix supplied for feature {n!r}" for n in missing])
        self.features = {}
        for n, w in zip(cfg.feature_names, cfg.feature_widths):
            f = np.asarray(features[n], dtype=self.store.dtype)
            if f.shape != (cfg.n_areas, w):
                raise DimensionError(f"feature {n}: expected {(cfg.n_areas, w)}, got {f.shape}")
            self.features[n] = f
        if cfg.use_proximity:
            if proximity is None:
                raise ConfigError("use_proximity is set but no proximity matrix was given")
            proximity = np.asarray(proximity, dtype=self.store.dtype)
            if proximity.shape != (cfg.n_areas, cfg.n_areas):
                raise DimensionError(f"proximity matrix {proximity.shape} for {cfg.n_areas} areas")
        self.proximity = proximity

    def params(self, track=True) -> Params:
        return Params(self.store, track)

    def learned_graphs(self, P: Params | None = None):
        """[(A_k, S_k)] for each areal feature."""
        P = P or self.params(False)
        se = P["se"]
        return [
            sentinel_attention(self.features[n], se, P[f"attn.{n}.w1"], P[f"attn.{n}.w2"],
                               P.mlp(f"sent.{n}"), self.cfg.zero_sentinel)
            for n in self.cfg.feature_names
        ]

    def graph_stack(self, P: Params) -> Tensor:
        n, dt = self.cfg.n_areas, self.store.dtype
        mats = []
        if self.cfg.use_identity:
            mats.append(nx.as_tensor(np.eye(n, dtype=dt)))
        if self.cfg.use_proximity:
            mats.append(nx.as_tensor(self.proximity))
        mats.extend(a for a, _ in self.learned_graphs(P))
        return nx.stack(mats)

    def forward(self, batch: Batch, track: bool = True, return_alpha: bool = False):
        cfg, P = self.cfg, self.params(track)
        dt = self.store.dtype
        graphs = self.graph_stack(P)
        se, f_te = P["se"], P.mlp("f_te")
        windows = {"c": (batch.xc, batch.tec), "p": (batch.xp, batch.tep), "q": (batch.xq, batch.teq)}
        states = []
        for u in UNITS:
            x, te = windows[u]
            ste = spatio_temporal_embedding(te.astype(dt), se, f_te)  # B, L, N, D
            xe = embed_input(nx.as_tensor(x.astype(dt)), ste, P.mlp(f"f_in.{u}"))
            L = xe.shape[1]
            order = range(L - 1, -1, -1) if cfg.chronological else range(L)
            inputs = [nx.take(xe, l, axis=1) for l in order]
            weights = tuple(P[f"enc.{u}.{k}"] for k in ("w_r", "w_u", "w_c", "b_r", "b_u", "b_c"))
            states.append(encode_sequence(inputs, graphs, weights, fused=cfg.fused,
                                          fixed_graphs=int(cfg.use_identity) + int(cfg.use_proximity)))
        pred, alpha = weighted_fusion(states, [P[f"fusion.w_{u}"] for u in UNITS], P.mlp("f_fusion"))
        return (pred, alpha) if return_alpha else pred

    def loss(self, batch: Batch, track: bool = True) -> Tensor:
        return l1_loss(self.forward(batch, track), batch.target.astype(self.store.dtype))

    def predict(self, batch: Batch) -> np.ndarray:
        return self.forward(batch, track=False).value
