"""Two-layer graph convolutional scorer with a composite ranking loss.

Forward pass (``A`` is the symmetrically normalized adjacency with
self-loops)::

    H1 = LN(relu(A (X W1 + b1)); g1, s1) + X P
    Z  = LN(relu(A (H1 W2 + b2)); g2, s2)
    logit = Z wh + bh

Gradients are written out by hand and trained with full-batch Adam.
"""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .simnet import SimilarityGraph

__all__ = [
    "HIDDEN",
    "EMBED",
    "PARAM_NAMES",
    "LossWeights",
    "GcnDivergenceError",
    "SingletonContrastWarning",
    "normalized_adjacency",
    "init_params",
    "forward",
    "loss_total",
    "loss_and_grad",
    "contrast_partners",
    "train",
    "TrainResult",
    "save_params",
    "load_params",
]

HIDDEN = 64
EMBED = 32
LN_EPS = 1e-5
NORM_EPS = 1e-12
PARAM_NAMES = ("W1", "b1", "g1", "s1", "P", "W2", "b2", "g2", "s2", "wh", "bh")
_MAGIC = b"subdyve-gcn 1\n"


class GcnDivergenceError(FloatingPointError):
    def __init__(self, epoch: int, terms: dict):
        super().__init__(f"non-finite loss at epoch {epoch}: {terms}")
        self.epoch = epoch
        self.terms = terms


class SingletonContrastWarning(UserWarning):
    """The contrastive term needs at least two held-out actives."""


@dataclass
class LossWeights:
    lambda_rank: float = 0.3
    lambda_contrast: float = 0.6
    margin: float = 0.5
    gamma_np: float = 5.0
    temperature: float = 0.5
    lr: float = 8e-4
    weight_decay: float = 1.57e-5
    # which BCE term carries PW = #neg / (#pos + eps)
    pos_weight_on: str = "positive"
    pw_eps: float = 1e-8

    def __post_init__(self):
        for name in ("lambda_rank", "lambda_contrast"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.pos_weight_on not in ("negative", "positive"):
            raise ValueError("pos_weight_on must be 'negative' or 'positive'")


def normalized_adjacency(graph: SimilarityGraph | sp.spmatrix) -> sp.csr_matrix:
    """``D^-1/2 (A + I) D^-1/2`` over edge weights."""
    A = graph.adjacency() if isinstance(graph, SimilarityGraph) else sp.csr_matrix(graph)
    A = (A + sp.identity(A.shape[0], format="csr")).tocsr()
    deg = np.asarray(A.sum(axis=1)).ravel()
    d = 1.0 / np.sqrt(deg)
    return (sp.diags(d) @ A @ sp.diags(d)).tocsr()


def _glorot(rng, fan_in, fan_out):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


def init_params(in_dim: int, seed: int = 0, hidden: int = HIDDEN, embed: int = EMBED) -> dict[str, np.ndarray]:
    rng = np.random.default_rng([seed, 0x6C])
    return {
        "W1": _glorot(rng, in_dim, hidden),
        "b1": np.zeros(hidden),
        "g1": np.ones(hidden),
        "s1": np.zeros(hidden),
        "P": _glorot(rng, in_dim, hidden),
        "W2": _glorot(rng, hidden, embed),
        "b2": np.zeros(embed),
        "g2": np.ones(embed),
        "s2": np.zeros(embed),
        "wh": _glorot(rng, embed, 1).ravel(),
        "bh": np.zeros(1),
    }


def _layer_norm(x, g, s):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + s, (xhat, inv)


def _layer_norm_back(dy, g, cache):
    xhat, inv = cache
    D = xhat.shape[1]
    dxhat = dy * g
    dx = inv / D * (D * dxhat - dxhat.sum(1, keepdims=True) - xhat * (dxhat * xhat).sum(1, keepdims=True))
    return dx, (dy * xhat).sum(0), dy.sum(0)


def _forward(params, X, A):
    if X.shape[1] != params["W1"].shape[0]:
        raise ValueError(f"feature width {X.shape[1]} != model input width {params['W1'].shape[0]}")
    A1 = A @ (X @ params["W1"] + params["b1"])
    R1 = np.maximum(A1, 0.0)
    N1, ln1 = _layer_norm(R1, params["g1"], params["s1"])
    H1 = N1 + X @ params["P"]
    A2 = A @ (H1 @ params["W2"] + params["b2"])
    R2 = np.maximum(A2, 0.0)
    Z, ln2 = _layer_norm(R2, params["g2"], params["s2"])
    logits = Z @ params["wh"] + params["bh"][0]
    return logits, Z, (A1, ln1, H1, A2, ln2)


def forward(params, X, A) -> tuple[np.ndarray, np.ndarray]:
    """Per-node logits and embeddings. ``A`` is a normalized adjacency
    (see :func:`normalized_adjacency`) or a :class:`SimilarityGraph`."""
    if isinstance(A, SimilarityGraph):
        A = normalized_adjacency(A)
    logits, Z, _ = _forward(params, np.asarray(X, dtype=np.float64), A)
    return logits, Z


def contrast_partners(fps, s2) -> dict[int, int]:
    """For each held-out active, its most fingerprint-similar other member
    (cosine; ties to the lower index)."""
    s2 = sorted(int(i) for i in s2)
    if len(s2) < 2:
        return {}
    F = np.asarray(fps, dtype=np.float64)[s2]
    norms = np.linalg.norm(F, axis=1, keepdims=True)
    Fn = np.divide(F, norms, out=np.zeros_like(F), where=norms > 0)
    S = Fn @ Fn.T
    np.fill_diagonal(S, -np.inf)
    return {a: s2[int(np.argmax(S[k]))] for k, a in enumerate(s2)}


def _sigmoid(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def _loss_terms(logits, Z, labels, np_scores, weights: LossWeights, partners, need_grad: bool, include=None):
    """Loss terms and, optionally, their gradients w.r.t. logits and embeddings.

    Nodes with ``include`` False (known actives that are not targets) take
    no part in the BCE and ranking terms.
    """
    y = np.asarray(labels, dtype=bool)
    inc = np.ones(len(y), dtype=bool) if include is None else np.asarray(include, dtype=bool) | y
    n = int(inc.sum())
    npos, nneg = int(y.sum()), int((inc & ~y).sum())
    if npos == 0 or nneg == 0:
        raise ValueError("need at least one positive and one negative node")

    # weighted BCE
    node_w = 1.0 + weights.gamma_np * np.asarray(np_scores, dtype=np.float64)
    pw = nneg / (npos + weights.pw_eps)
    cpos, cneg = (1.0, pw) if weights.pos_weight_on == "negative" else (pw, 1.0)
    per = np.where(y, -cpos * _log_sigmoid(logits), -cneg * _log_sigmoid(-logits)) * inc
    bce = float((node_w * per).sum() / n)

    # pairwise hinge
    pos_idx, neg_idx = np.flatnonzero(y), np.flatnonzero(inc & ~y)
    gap = weights.margin - (logits[pos_idx][:, None] - logits[neg_idx][None, :])
    n_pairs = gap.size
    rank = float(np.maximum(gap, 0.0).sum() / n_pairs)

    # InfoNCE over held-out actives on L2-normalized embeddings
    contrast = 0.0
    anchors = sorted(partners)
    if anchors:
        idx = np.array(anchors)
        E = Z[idx]
        nrm = np.sqrt((E * E).sum(1, keepdims=True) + NORM_EPS)
        En = E / nrm
        S = En @ En.T / weights.temperature
        np.fill_diagonal(S, -np.inf)
        logZ = np.logaddexp.reduce(S, axis=1)
        pos_col = np.array([anchors.index(partners[a]) for a in anchors])
        k = len(anchors)
        contrast = float(np.mean(logZ - S[np.arange(k), pos_col]))

    terms = {"bce": bce, "rank": rank, "contrast": contrast}
    lr_, lc = weights.lambda_rank, weights.lambda_contrast
    terms["total"] = (1.0 - lr_) * bce + lr_ * rank + lc * contrast
    if not need_grad:
        return terms, None, None

    sig = _sigmoid(logits)
    d_per = np.where(y, -cpos * (1.0 - sig), cneg * sig) * inc
    dlogits = (1.0 - lr_) * node_w * d_per / n
    active = (gap > 0).astype(np.float64) * (lr_ / n_pairs)
    np.add.at(dlogits, pos_idx, -active.sum(1))
    np.add.at(dlogits, neg_idx, active.sum(0))

    dZ = np.zeros_like(Z)
    if anchors and lc != 0.0:
        soft = np.exp(S - logZ[:, None])
        soft[np.arange(k), pos_col] -= 1.0
        soft *= lc / k
        dS = soft / weights.temperature
        dEn = dS @ En + dS.T @ En
        dE = dEn / nrm - E * (E * dEn).sum(1, keepdims=True) / nrm**3
        dZ[idx] += dE
    return terms, dlogits, dZ


def loss_total(
    logits, embeddings, labels, np_scores, weights: LossWeights | None = None, fps=None, include=None
) -> dict[str, float]:
    """Composite loss with its breakdown: keys ``bce``, ``rank``, ``contrast``, ``total``."""
    weights = weights or LossWeights()
    partners = _partners_or_warn(fps, labels)
    terms, _, _ = _loss_terms(
        np.asarray(logits, float), np.asarray(embeddings, float), labels, np_scores, weights, partners, False, include
    )
    return terms


def _partners_or_warn(fps, labels):
    s2 = np.flatnonzero(np.asarray(labels, dtype=bool))
    if len(s2) < 2:
        warnings.warn("a single held-out active: contrastive term set to 0", SingletonContrastWarning, stacklevel=3)
        return {}
    if fps is None:
        raise ValueError("fingerprints are required to pick contrastive partners")
    return contrast_partners(fps, s2)


def loss_and_grad(params, X, A, labels, np_scores, weights: LossWeights, partners, include=None) -> tuple[dict, dict]:
    """Loss breakdown and exact gradients for every parameter tensor."""
    logits, Z, (A1, ln1, H1, A2, ln2) = _forward(params, X, A)
    terms, dlogits, dZ = _loss_terms(logits, Z, labels, np_scores, weights, partners, True, include)
    g = {}
    g["wh"] = Z.T @ dlogits
    g["bh"] = np.array([dlogits.sum()])
    dZ = dZ + np.outer(dlogits, params["wh"])
    dR2, g["g2"], g["s2"] = _layer_norm_back(dZ, params["g2"], ln2)
    dU2 = A.T @ (dR2 * (A2 > 0))
    g["W2"] = H1.T @ dU2
    g["b2"] = dU2.sum(0)
    dH1 = dU2 @ params["W2"].T
    g["P"] = X.T @ dH1
    dR1, g["g1"], g["s1"] = _layer_norm_back(dH1, params["g1"], ln1)
    dU1 = A.T @ (dR1 * (A1 > 0))
    g["W1"] = X.T @ dU1
    g["b1"] = dU1.sum(0)
    return terms, g


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    logits: np.ndarray
    embeddings: np.ndarray
    history: list[float] = field(default_factory=list)


def train(
    params,
    X,
    graph,
    labels,
    np_scores,
    fps=None,
    weights: LossWeights | None = None,
    epochs: int = 50,
    include=None,
) -> TrainResult:
    """Full-batch Adam with L2 weight decay added to the gradient.

    ``params`` is not modified; the result holds a trained copy. ``history``
    records the loss before each update. ``include`` masks nodes out of the
    BCE and ranking terms (see :func:`loss_total`).
    """
    weights = weights or LossWeights()
    X = np.asarray(X, dtype=np.float64)
    A = normalized_adjacency(graph) if isinstance(graph, SimilarityGraph) else graph
    partners = _partners_or_warn(fps, labels)
    p = {k: v.copy() for k, v in params.items()}
    m = {k: np.zeros_like(v) for k, v in p.items()}
    v = {k: np.zeros_like(v) for k, v in p.items()}
    b1, b2, eps = 0.9, 0.999, 1e-8
    history = []
    for t in range(1, epochs + 1):
        terms, grads = loss_and_grad(p, X, A, labels, np_scores, weights, partners, include)
        if not np.isfinite(terms["total"]):
            raise GcnDivergenceError(t, terms)
        history.append(terms["total"])
        for k in PARAM_NAMES:
            gk = grads[k] + weights.weight_decay * p[k]
            m[k] = b1 * m[k] + (1 - b1) * gk
            v[k] = b2 * v[k] + (1 - b2) * gk * gk
            mhat = m[k] / (1 - b1**t)
            vhat = v[k] / (1 - b2**t)
            p[k] = p[k] - weights.lr * mhat / (np.sqrt(vhat) + eps)
    logits, Z, _ = _forward(p, X, A)
    return TrainResult(p, logits, Z, history)


def save_params(path, params) -> None:
    """Versioned text header (name and shape per tensor) then little-endian float64 data."""
    buf = io.BytesIO()
    buf.write(_MAGIC)
    for k in PARAM_NAMES:
        shape = " ".join(str(s) for s in params[k].shape)
        buf.write(f"{k} {shape}\n".encode())
    buf.write(b"end\n")
    for k in PARAM_NAMES:
        buf.write(np.ascontiguousarray(params[k], dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_params(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.readline() != _MAGIC:
            raise ValueError(f"{path}: not a parameter checkpoint (bad header)")
        shapes = []
        while True:
            line = fh.readline().decode().strip()
            if line == "end":
                break
            if not line:
                raise ValueError(f"{path}: truncated header")
            name, *dims = line.split()
            shapes.append((name, tuple(int(d) for d in dims)))
        out = {}
        for name, shape in shapes:
            count = int(np.prod(shape))
            data = np.frombuffer(fh.read(8 * count), dtype="<f8")
            if data.size != count:
                raise ValueError(f"{path}: truncated payload for {name}")
            out[name] = data.reshape(shape).astype(np.float64)
    return out
