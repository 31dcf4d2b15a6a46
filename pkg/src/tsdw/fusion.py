"""Dynamic-weight three-way decision fusion over the three streams.

A pair (query, gallery) is routed through a three-layer decision tree.
Layer 1 scores facial reliability: high confidence keeps only the face
stream, low confidence drops the face entirely, and the middle band
defers to layer 2. Layer 2 picks one of three gating networks (face
with global, face with head-limb, or all three); layer 3, reached when
the face is unreliable or absent, picks global only, head-limb only,
or a head-limb/global gate. Thresholds are trainable in (0, 1) with
alpha > beta guaranteed by construction.

Hard mode branches discretely and is used at inference; soft mode
replaces each branch indicator with a tempered sigmoid so that the
fused distance is differentiable in every network parameter and every
threshold. The final distance for a pair is the weight-vector dot
product with the per-stream cosine distances.

If either face vector of a pair is (near) zero, facial confidence is
exactly 0 and the network is bypassed, which in hard mode always routes
to layer 3 (beta > 0), so absent faces contribute zero face weight.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, softmax

from .distance import DistanceMatrix, pairwise_cosine
from .errors import ConfigError, DimensionError
from .nn import DenseNet, Tape, backward, dense_net, forward
from .store import EmbeddingRecord, EmbeddingSet
from .validation import EPS_ZERO

NET_NAMES = (
    "confidence_f",
    "confidence_lg1",
    "confidence_lg2",
    "gating_fg",
    "gating_fl",
    "gating_all",
    "gating_lg",
)

# which stream encodings feed each network, in concatenation order
_NET_PARTS = {
    "confidence_f": ("f",),
    "confidence_lg1": ("l", "g"),
    "confidence_lg2": ("l", "g"),
    "gating_fg": ("f", "g"),
    "gating_fl": ("f", "l"),
    "gating_all": ("f", "l", "g"),
    "gating_lg": ("l", "g"),
}

_GATING_ARITY = {"gating_fg": 2, "gating_fl": 2, "gating_all": 3, "gating_lg": 2}

# columns of the weight vector each gating head writes to
_GATING_COLS = {
    "gating_fg": (0, 2),
    "gating_fl": (0, 1),
    "gating_all": (0, 1, 2),
    "gating_lg": (1, 2),
}

BRANCH_LABELS = (
    "face-only",
    "face-global",
    "face-limb",
    "all-fusion",
    "global-only",
    "limb-only",
    "limb-global",
)

_CONF_KEYS = ("face", "lg1", "lg2")


@dataclass(frozen=True)
class WeightVector:
    w_f: float
    w_l: float
    w_g: float

    def as_array(self) -> np.ndarray:
        return np.array([self.w_f, self.w_l, self.w_g])


@dataclass
class Thresholds:
    """Accept/reject boundaries per decision layer, alpha > beta by construction.

    Stored as unconstrained scalars: alpha = sigmoid(raw_alpha) and
    beta = alpha * sigmoid(raw_beta), so 0 < beta < alpha < 1 holds at
    every optimizer step without projection. Layer order: face, lg1, lg2.
    """

    raw_alpha: np.ndarray
    raw_beta: np.ndarray

    def __post_init__(self):
        self.raw_alpha = np.asarray(self.raw_alpha, dtype=np.float64)
        self.raw_beta = np.asarray(self.raw_beta, dtype=np.float64)
        if self.raw_alpha.shape != (3,) or self.raw_beta.shape != (3,):
            raise DimensionError("thresholds need one (alpha, beta) pair per layer")

    @property
    def alpha(self) -> np.ndarray:
        return expit(self.raw_alpha)

    @property
    def beta(self) -> np.ndarray:
        return self.alpha * expit(self.raw_beta)

    @classmethod
    def from_values(cls, alpha, beta) -> "Thresholds":
        alpha = np.asarray(alpha, dtype=np.float64)
        beta = np.asarray(beta, dtype=np.float64)
        if np.any(alpha <= 0) or np.any(alpha >= 1) or np.any(beta <= 0) or np.any(beta >= alpha):
            raise ConfigError("need 0 < beta < alpha < 1 per layer")
        raw_alpha = np.log(alpha / (1.0 - alpha))
        ratio = beta / alpha
        raw_beta = np.log(ratio / (1.0 - ratio))
        return cls(raw_alpha, raw_beta)

    def raw_grads(self, d_alpha: np.ndarray, d_beta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Chain gradients on (alpha, beta) back to the raw scalars."""
        a = self.alpha
        sb = expit(self.raw_beta)
        d_raw_a = (d_alpha + d_beta * sb) * a * (1.0 - a)
        d_raw_b = d_beta * a * sb * (1.0 - sb)
        return d_raw_a, d_raw_b


@dataclass
class DwtParams:
    """Three confidence networks, four gating networks, trainable thresholds."""

    nets: dict[str, DenseNet]
    thresholds: Thresholds
    branch_temperature: float
    dims: tuple[int, int, int]
    projections: dict[str, np.ndarray | None] = field(default_factory=dict)

    def __post_init__(self):
        missing = [n for n in NET_NAMES if n not in self.nets]
        if missing:
            raise ConfigError(f"missing networks: {missing}")
        for name in ("confidence_f", "confidence_lg1", "confidence_lg2"):
            if self.nets[name].output_dim != 1:
                raise ConfigError(f"{name} must emit one logit")
        for name, arity in _GATING_ARITY.items():
            if self.nets[name].output_dim != arity:
                raise ConfigError(f"{name} must emit {arity} logits")
        if self.branch_temperature <= 0:
            raise ConfigError("branch_temperature must be positive")
        self.projections = {name: self.projections.get(name) for name in NET_NAMES}

    def trainable(self) -> list[np.ndarray]:
        """Live parameter arrays: net weights/biases in net order, then raw thresholds."""
        out: list[np.ndarray] = []
        for name in NET_NAMES:
            out.extend(self.nets[name].parameters())
        out.append(self.thresholds.raw_alpha)
        out.append(self.thresholds.raw_beta)
        return out


def _encoding_dims(dims) -> dict[str, int]:
    df, dl, dg = dims
    return {"f": 2 * df, "l": 2 * dl, "g": 2 * dg}


def init_dwt_params(dims, seed: int = 0, hidden_dim: int = 64, branch_temperature: float = 0.1,
                    alpha_init: float = 0.7, beta_init: float = 0.3,
                    projection_limit: int = 4096, projection_dim: int = 512) -> DwtParams:
    """Deterministic fresh parameters for embedding dims (D_f, D_l, D_g).

    Networks whose concatenated pair encoding exceeds ``projection_limit``
    inputs get a fixed seeded random projection down to ``projection_dim``;
    the projection is stored with the parameters and never trained.
    """
    rng = np.random.default_rng(seed)
    enc = _encoding_dims(dims)
    nets: dict[str, DenseNet] = {}
    projections: dict[str, np.ndarray | None] = {}
    for name in NET_NAMES:
        raw_in = sum(enc[p] for p in _NET_PARTS[name])
        if raw_in > projection_limit:
            projections[name] = rng.normal(0.0, 1.0 / np.sqrt(projection_dim),
                                           size=(projection_dim, raw_in))
            net_in = projection_dim
        else:
            projections[name] = None
            net_in = raw_in
        out_dim = _GATING_ARITY.get(name, 1)
        nets[name] = dense_net([net_in, hidden_dim, out_dim], rng)
    thresholds = Thresholds.from_values([alpha_init] * 3, [beta_init] * 3)
    return DwtParams(nets=nets, thresholds=thresholds,
                     branch_temperature=branch_temperature, dims=tuple(dims),
                     projections=projections)


# ---------------------------------------------------------------------------
# pair encodings
# ---------------------------------------------------------------------------

def encode_pairs(q_rows: np.ndarray, g_rows: np.ndarray) -> np.ndarray:
    """Symmetric pair encoding [q*g ; |q-g|] over row-aligned unit vectors."""
    if q_rows.shape != g_rows.shape:
        raise DimensionError(f"pair shapes {q_rows.shape} and {g_rows.shape} differ")
    return np.concatenate([q_rows * g_rows, np.abs(q_rows - g_rows)], axis=1)


def encode_pairs_backward(d_enc: np.ndarray, q_rows: np.ndarray,
                          g_rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split an encoding gradient into gradients on the two vector rows."""
    d = q_rows.shape[1]
    d_prod = d_enc[:, :d]
    d_diff = d_enc[:, d:]
    sign = np.sign(q_rows - g_rows)
    dq = d_prod * g_rows + d_diff * sign
    dg = d_prod * q_rows - d_diff * sign
    return dq, dg


def _normalize_rows(mat: np.ndarray) -> np.ndarray:
    mat = np.asarray(mat, dtype=np.float64)
    norms = np.linalg.norm(mat, axis=1)
    safe = np.where(norms < EPS_ZERO, 1.0, norms)
    return mat / safe[:, None]


def _record_vectors(params: DwtParams, rec: EmbeddingRecord) -> dict[str, np.ndarray]:
    if rec.dims() != tuple(params.dims):
        raise DimensionError(f"record dims {rec.dims()} != params dims {params.dims}")
    return {
        "f": _normalize_rows(rec.face[None, :]),
        "l": _normalize_rows(rec.head_limb[None, :]),
        "g": _normalize_rows(rec.global_feat[None, :]),
    }


def _pair_encodings(params: DwtParams, q: EmbeddingRecord, g: EmbeddingRecord):
    qv = _record_vectors(params, q)
    gv = _record_vectors(params, g)
    enc = {k: encode_pairs(qv[k], gv[k]) for k in ("f", "l", "g")}
    face_ok = np.array([q.face_present and g.face_present])
    return enc, face_ok


def _net_input(params: DwtParams, name: str, enc: dict[str, np.ndarray]) -> np.ndarray:
    x = np.concatenate([enc[p] for p in _NET_PARTS[name]], axis=1)
    proj = params.projections.get(name)
    if proj is not None:
        x = x @ proj.T
    return x


# ---------------------------------------------------------------------------
# confidences
# ---------------------------------------------------------------------------

def _confidences(params: DwtParams, enc, face_ok, conf_override=None, with_tapes=False):
    """C_f, C_lg1, C_lg2 for a batch; absent faces force C_f to exactly 0."""
    n = face_ok.shape[0]
    conf = np.empty((n, 3))
    tapes: dict[str, Tape] = {}
    for j, (key, name) in enumerate(zip(_CONF_KEYS, ("confidence_f", "confidence_lg1", "confidence_lg2"))):
        out, tape = forward(params.nets[name], _net_input(params, name, enc))
        conf[:, j] = expit(out[:, 0])
        if with_tapes:
            tapes[name] = tape
    conf[~face_ok, 0] = 0.0
    overridden = [False, False, False]
    if conf_override:
        for j, key in enumerate(_CONF_KEYS):
            if key in conf_override:
                conf[:, j] = np.broadcast_to(np.asarray(conf_override[key], dtype=np.float64), (n,))
                overridden[j] = True
    return conf, tapes, tuple(overridden)


def face_confidence(params: DwtParams, q: EmbeddingRecord, g: EmbeddingRecord) -> float:
    """Facial reliability in [0, 1]; exactly 0.0 when either face is absent."""
    if not (q.face_present and g.face_present):
        return 0.0
    enc, face_ok = _pair_encodings(params, q, g)
    out, _ = forward(params.nets["confidence_f"], _net_input(params, "confidence_f", enc))
    return float(expit(out[0, 0]))


def lg_confidence(params: DwtParams, layer: str, q: EmbeddingRecord, g: EmbeddingRecord) -> float:
    """Head-limb/global agreement score for the second or third decision layer."""
    name = {"second": "confidence_lg1", "third": "confidence_lg2"}.get(layer)
    if name is None:
        raise ConfigError(f"layer must be 'second' or 'third', got {layer!r}")
    enc, _ = _pair_encodings(params, q, g)
    out, _ = forward(params.nets[name], _net_input(params, name, enc))
    return float(expit(out[0, 0]))


def gating_weights(params: DwtParams, name: str, q: EmbeddingRecord, g: EmbeddingRecord) -> np.ndarray:
    """Softmax weights of one gating head, embedded in the 3-stream layout."""
    if name not in _GATING_ARITY:
        raise ConfigError(f"unknown gating head {name!r}")
    enc, _ = _pair_encodings(params, q, g)
    logits, _ = forward(params.nets[name], _net_input(params, name, enc))
    probs = softmax(logits, axis=1)
    w = np.zeros(3)
    w[list(_GATING_COLS[name])] = probs[0]
    return w


def _gating_all(params: DwtParams, enc, with_tapes=False):
    """Softmax outputs of every gating head for a batch, embedded to 3 columns."""
    n = enc["l"].shape[0]
    embedded: dict[str, np.ndarray] = {}
    raw: dict[str, np.ndarray] = {}
    tapes: dict[str, Tape] = {}
    for name in _GATING_ARITY:
        logits, tape = forward(params.nets[name], _net_input(params, name, enc))
        probs = softmax(logits, axis=1)
        w = np.zeros((n, 3))
        w[:, list(_GATING_COLS[name])] = probs
        embedded[name] = w
        raw[name] = probs
        if with_tapes:
            tapes[name] = tape
    return embedded, raw, tapes


# ---------------------------------------------------------------------------
# hard decision (inference path)
# ---------------------------------------------------------------------------

def _net_input_rows(params: DwtParams, name: str, enc, rows: np.ndarray) -> np.ndarray:
    x = np.concatenate([enc[p][rows] for p in _NET_PARTS[name]], axis=1)
    proj = params.projections.get(name)
    if proj is not None:
        x = x @ proj.T
    return x


def _confidence_rows(params: DwtParams, name: str, enc, rows: np.ndarray) -> np.ndarray:
    out, _ = forward(params.nets[name], _net_input_rows(params, name, enc, rows))
    return expit(out[:, 0])


def decide_hard_batch(params: DwtParams, enc, face_ok, conf_override=None):
    """Exact discrete branching for a batch of pairs.

    Returns (weights (n, 3), branch indices (n,) into BRANCH_LABELS).
    Equality with a threshold falls to the middle branch: accept and
    reject comparisons are strict. Networks run only on the rows whose
    branch consults them.
    """
    n = face_ok.shape[0]
    over = conf_override or {}
    alpha = params.thresholds.alpha
    beta = params.thresholds.beta

    if "face" in over:
        c_f = np.broadcast_to(np.asarray(over["face"], dtype=np.float64), (n,)).copy()
    else:
        c_f = np.zeros(n)
        rows = np.flatnonzero(face_ok)
        if rows.size:
            c_f[rows] = _confidence_rows(params, "confidence_f", enc, rows)

    weights = np.zeros((n, 3))
    branch = np.zeros(n, dtype=np.int64)

    accept1 = c_f > alpha[0]
    reject1 = c_f < beta[0]
    middle1 = ~accept1 & ~reject1
    weights[accept1, 0] = 1.0
    branch[accept1] = 0

    def _layer_conf(key: str, name: str, sel: np.ndarray) -> np.ndarray:
        values = np.zeros(n)
        if key in over:
            values[sel] = np.broadcast_to(
                np.asarray(over[key], dtype=np.float64), (n,))[sel]
        else:
            rows = np.flatnonzero(sel)
            if rows.size:
                values[rows] = _confidence_rows(params, name, enc, rows)
        return values

    def _gate_rows(name: str, sel: np.ndarray) -> None:
        rows = np.flatnonzero(sel)
        if not rows.size:
            return
        logits, _ = forward(params.nets[name], _net_input_rows(params, name, enc, rows))
        probs = softmax(logits, axis=1)
        for col, p in zip(_GATING_COLS[name], probs.T):
            weights[rows, col] = p

    c_1 = _layer_conf("lg1", "confidence_lg1", middle1)
    acc2 = middle1 & (c_1 > alpha[1])
    rej2 = middle1 & (c_1 < beta[1])
    mid2 = middle1 & ~(c_1 > alpha[1]) & ~(c_1 < beta[1])
    _gate_rows("gating_fg", acc2)
    branch[acc2] = 1
    _gate_rows("gating_fl", rej2)
    branch[rej2] = 2
    _gate_rows("gating_all", mid2)
    branch[mid2] = 3

    c_2 = _layer_conf("lg2", "confidence_lg2", reject1)
    acc3 = reject1 & (c_2 > alpha[2])
    rej3 = reject1 & (c_2 < beta[2])
    mid3 = reject1 & ~(c_2 > alpha[2]) & ~(c_2 < beta[2])
    weights[acc3, 2] = 1.0
    branch[acc3] = 4
    weights[rej3, 1] = 1.0
    branch[rej3] = 5
    _gate_rows("gating_lg", mid3)
    branch[mid3] = 6

    return weights, branch


def decide_hard(params: DwtParams, q: EmbeddingRecord, g: EmbeddingRecord,
                conf_override=None) -> tuple[WeightVector, str]:
    """Route one pair through the decision tree; returns weights and branch label."""
    enc, face_ok = _pair_encodings(params, q, g)
    weights, branch = decide_hard_batch(params, enc, face_ok, conf_override)
    w = weights[0]
    return WeightVector(float(w[0]), float(w[1]), float(w[2])), BRANCH_LABELS[branch[0]]


# ---------------------------------------------------------------------------
# soft decision (training path)
# ---------------------------------------------------------------------------

@dataclass
class SoftTape:
    enc: dict[str, np.ndarray]
    face_ok: np.ndarray
    conf: np.ndarray            # (n, 3) post-bypass confidences
    overridden: tuple[bool, bool, bool]
    conf_tapes: dict[str, Tape]
    gate_tapes: dict[str, Tape]
    gates3: dict[str, np.ndarray]   # gating outputs embedded to 3 columns
    gates_raw: dict[str, np.ndarray]
    branch_a: np.ndarray        # (n, 3) accept sigmoids per layer
    branch_r: np.ndarray        # (n, 3) reject sigmoids
    branch_m: np.ndarray        # (n, 3) clamped middle mass
    branch_z: np.ndarray        # (n, 3) normalizers
    probs: np.ndarray           # (n, 3, 3) [layer, (acc, rej, mid)]
    mix2: np.ndarray            # (n, 3)
    mix3: np.ndarray            # (n, 3)
    weights: np.ndarray         # (n, 3)


@dataclass
class DwtGrads:
    """Gradients aligned with DwtParams.trainable(); encoding grads for adapters."""

    nets: dict[str, list[tuple[np.ndarray, np.ndarray]]]
    raw_alpha: np.ndarray
    raw_beta: np.ndarray
    enc: dict[str, np.ndarray]

    def flat(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for name in NET_NAMES:
            for dw, db in self.nets[name]:
                out.append(dw)
                out.append(db)
        out.append(self.raw_alpha)
        out.append(self.raw_beta)
        return out


def _branch_probs(conf_col: np.ndarray, alpha: float, beta: float, temp: float):
    """Tempered accept/reject/middle probabilities for one layer."""
    a = expit((conf_col - alpha) / temp)
    r = expit((beta - conf_col) / temp)
    m = np.maximum(1.0 - a - r, 0.0)
    z = a + r + m
    probs = np.stack([a / z, r / z, m / z], axis=1)
    return a, r, m, z, probs


def decide_soft_batch(params: DwtParams, enc, face_ok, conf_override=None,
                      temperature: float | None = None) -> tuple[np.ndarray, SoftTape]:
    """Differentiable relaxation: probability-weighted mixture of the 7 leaves."""
    temp = params.branch_temperature if temperature is None else temperature
    if temp <= 0:
        raise ConfigError("branch temperature must be positive")
    conf, conf_tapes, overridden = _confidences(params, enc, face_ok, conf_override, with_tapes=True)
    alpha = params.thresholds.alpha
    beta = params.thresholds.beta
    gates3, gates_raw, gate_tapes = _gating_all(params, enc, with_tapes=True)
    n = conf.shape[0]

    branch_a = np.empty((n, 3))
    branch_r = np.empty((n, 3))
    branch_m = np.empty((n, 3))
    branch_z = np.empty((n, 3))
    probs = np.empty((n, 3, 3))
    for layer in range(3):
        a, r, m, z, p = _branch_probs(conf[:, layer], alpha[layer], beta[layer], temp)
        branch_a[:, layer] = a
        branch_r[:, layer] = r
        branch_m[:, layer] = m
        branch_z[:, layer] = z
        probs[:, layer] = p

    e_face = np.array([1.0, 0.0, 0.0])
    e_limb = np.array([0.0, 1.0, 0.0])
    e_glob = np.array([0.0, 0.0, 1.0])

    p2 = probs[:, 1]
    mix2 = (p2[:, 0:1] * gates3["gating_fg"]
            + p2[:, 1:2] * gates3["gating_fl"]
            + p2[:, 2:3] * gates3["gating_all"])
    p3 = probs[:, 2]
    mix3 = (p3[:, 0:1] * e_glob
            + p3[:, 1:2] * e_limb
            + p3[:, 2:3] * gates3["gating_lg"])
    p1 = probs[:, 0]
    weights = p1[:, 0:1] * e_face + p1[:, 2:3] * mix2 + p1[:, 1:2] * mix3

    tape = SoftTape(enc=enc, face_ok=face_ok, conf=conf, overridden=overridden,
                    conf_tapes=conf_tapes, gate_tapes=gate_tapes, gates3=gates3,
                    gates_raw=gates_raw, branch_a=branch_a, branch_r=branch_r,
                    branch_m=branch_m, branch_z=branch_z, probs=probs,
                    mix2=mix2, mix3=mix3, weights=weights)
    return weights, tape


def _layer_prob_backward(d_probs: np.ndarray, tape: SoftTape, layer: int):
    """Gradient of [acc, rej, mid] probabilities back to (a, r) for one layer."""
    p = tape.probs[:, layer]
    z = tape.branch_z[:, layer]
    inner = (d_probs * p).sum(axis=1)
    d_n = (d_probs - inner[:, None]) / z[:, None]
    gate = tape.branch_m[:, layer] > 0.0
    d_a = d_n[:, 0] - np.where(gate, d_n[:, 2], 0.0)
    d_r = d_n[:, 1] - np.where(gate, d_n[:, 2], 0.0)
    return d_a, d_r


def decide_soft_backward(params: DwtParams, tape: SoftTape, grad_w: np.ndarray,
                         temperature: float | None = None,
                         want_encoding_grads: bool = False) -> DwtGrads:
    """Backpropagate a gradient on the soft weights into every trainable block."""
    temp = params.branch_temperature if temperature is None else temperature
    n = grad_w.shape[0]
    p1 = tape.probs[:, 0]

    e_limb = np.array([0.0, 1.0, 0.0])
    e_glob = np.array([0.0, 0.0, 1.0])

    # top-level mixture
    d_p1 = np.stack([
        grad_w[:, 0],
        (grad_w * tape.mix3).sum(axis=1),
        (grad_w * tape.mix2).sum(axis=1),
    ], axis=1)
    d_mix2 = p1[:, 2:3] * grad_w
    d_mix3 = p1[:, 1:2] * grad_w

    p2 = tape.probs[:, 1]
    d_p2 = np.stack([
        (d_mix2 * tape.gates3["gating_fg"]).sum(axis=1),
        (d_mix2 * tape.gates3["gating_fl"]).sum(axis=1),
        (d_mix2 * tape.gates3["gating_all"]).sum(axis=1),
    ], axis=1)
    p3 = tape.probs[:, 2]
    d_p3 = np.stack([
        (d_mix3 * e_glob[None, :]).sum(axis=1),
        (d_mix3 * e_limb[None, :]).sum(axis=1),
        (d_mix3 * tape.gates3["gating_lg"]).sum(axis=1),
    ], axis=1)

    d_gate3 = {
        "gating_fg": p2[:, 0:1] * d_mix2,
        "gating_fl": p2[:, 1:2] * d_mix2,
        "gating_all": p2[:, 2:3] * d_mix2,
        "gating_lg": p3[:, 2:3] * d_mix3,
    }

    enc_grads = {key: np.zeros_like(tape.enc[key]) for key in ("f", "l", "g")}
    net_grads: dict[str, list[tuple[np.ndarray, np.ndarray]]] = {}

    def _accumulate_input(name: str, d_input: np.ndarray) -> None:
        proj = params.projections.get(name)
        if proj is not None:
            d_input = d_input @ proj
        offset = 0
        for part in _NET_PARTS[name]:
            width = tape.enc[part].shape[1]
            enc_grads[part] += d_input[:, offset:offset + width]
            offset += width

    # gating heads: softmax backward then net backward
    for name in _GATING_ARITY:
        cols = list(_GATING_COLS[name])
        d_soft = d_gate3[name][:, cols]
        s = tape.gates_raw[name]
        d_logits = s * (d_soft - (d_soft * s).sum(axis=1, keepdims=True))
        grads, d_input = backward(params.nets[name], tape.gate_tapes[name], d_logits)
        net_grads[name] = grads
        if want_encoding_grads:
            _accumulate_input(name, d_input)

    # layer probabilities -> confidences and thresholds
    d_alpha = np.zeros(3)
    d_beta = np.zeros(3)
    d_conf = np.empty((n, 3))
    for layer, d_pl in enumerate((d_p1, d_p2, d_p3)):
        d_a, d_r = _layer_prob_backward(d_pl, tape, layer)
        a = tape.branch_a[:, layer]
        r = tape.branch_r[:, layer]
        da_du = a * (1.0 - a) / temp
        dr_du = r * (1.0 - r) / temp
        d_conf[:, layer] = d_a * da_du - d_r * dr_du
        d_alpha[layer] = -(d_a * da_du).sum()
        d_beta[layer] = (d_r * dr_du).sum()

    # confidences -> confidence nets (respecting bypass and overrides)
    for j, name in enumerate(("confidence_f", "confidence_lg1", "confidence_lg2")):
        c = tape.conf[:, j]
        d_logit = d_conf[:, j] * c * (1.0 - c)
        if tape.overridden[j]:
            d_logit = np.zeros_like(d_logit)
        elif j == 0:
            d_logit = np.where(tape.face_ok, d_logit, 0.0)
        grads, d_input = backward(params.nets[name], tape.conf_tapes[name], d_logit[:, None])
        net_grads[name] = grads
        if want_encoding_grads:
            _accumulate_input(name, d_input)

    d_raw_a, d_raw_b = params.thresholds.raw_grads(d_alpha, d_beta)
    return DwtGrads(nets=net_grads, raw_alpha=d_raw_a, raw_beta=d_raw_b, enc=enc_grads)


def decide_soft(params: DwtParams, q: EmbeddingRecord, g: EmbeddingRecord,
                conf_override=None, temperature: float | None = None) -> WeightVector:
    """Differentiable weights for one pair (forward only)."""
    enc, face_ok = _pair_encodings(params, q, g)
    weights, _ = decide_soft_batch(params, enc, face_ok, conf_override, temperature)
    w = weights[0]
    return WeightVector(float(w[0]), float(w[1]), float(w[2]))


# ---------------------------------------------------------------------------
# distance fusion
# ---------------------------------------------------------------------------

def fuse_distance(weights, d_f: float, d_l: float, d_g: float) -> float:
    """Convex combination of the per-stream distances."""
    w = weights.as_array() if isinstance(weights, WeightVector) else np.asarray(weights, dtype=np.float64)
    if w.shape != (3,):
        raise DimensionError(f"expected 3 weights, got shape {w.shape}")
    return float(w[0] * d_f + w[1] * d_l + w[2] * d_g)


def _set_streams(params: DwtParams, eset: EmbeddingSet):
    if tuple(eset.dims) != tuple(params.dims):
        raise DimensionError(f"set dims {eset.dims} != params dims {params.dims}")
    return {
        "f": _normalize_rows(eset.stream("face")),
        "l": _normalize_rows(eset.stream("head_limb")),
        "g": _normalize_rows(eset.stream("global")),
    }


def fused_matrix(params: DwtParams, query: EmbeddingSet, gallery: EmbeddingSet,
                 mode: str = "hard", conf_override=None, temperature: float | None = None,
                 max_pairs: int = 16384) -> DistanceMatrix:
    """Entrywise decide + fuse over all query x gallery pairs."""
    if mode not in ("hard", "soft"):
        raise ConfigError(f"mode must be 'hard' or 'soft', got {mode!r}")
    if tuple(query.dims) != tuple(gallery.dims):
        raise DimensionError(f"query dims {query.dims} != gallery dims {gallery.dims}")
    qs = _set_streams(params, query)
    gs = _set_streams(params, gallery)
    q_face_ok = query.face_present
    g_face_ok = gallery.face_present

    nq, ng = len(query), len(gallery)
    out = np.zeros((nq, ng))
    if nq == 0 or ng == 0:
        return DistanceMatrix(out, "fused")

    dist = {k: pairwise_cosine(qs[k], gs[k]) for k in ("f", "l", "g")}

    chunk = max(1, max_pairs // ng)
    for start in range(0, nq, chunk):
        stop = min(nq, start + chunk)
        rows = stop - start
        enc = {}
        for k in ("f", "l", "g"):
            q_rep = np.repeat(qs[k][start:stop], ng, axis=0)
            g_rep = np.tile(gs[k], (rows, 1))
            enc[k] = encode_pairs(q_rep, g_rep)
        face_ok = (np.repeat(q_face_ok[start:stop], ng) & np.tile(g_face_ok, rows))
        if mode == "hard":
            weights, _ = decide_hard_batch(params, enc, face_ok, conf_override)
        else:
            weights, _ = decide_soft_batch(params, enc, face_ok, conf_override, temperature)
        fused = (weights[:, 0] * dist["f"][start:stop].ravel()
                 + weights[:, 1] * dist["l"][start:stop].ravel()
                 + weights[:, 2] * dist["g"][start:stop].ravel())
        out[start:stop] = fused.reshape(rows, ng)
    return DistanceMatrix(np.clip(out, 0.0, 2.0), "fused")


def soft_fused_pair(params: DwtParams, q: EmbeddingRecord, g: EmbeddingRecord,
                    conf_override=None) -> tuple[float, DwtGrads]:
    """Soft-mode fused distance of one pair plus gradients for every trainable block."""
    enc, face_ok = _pair_encodings(params, q, g)
    qv = _record_vectors(params, q)
    gv = _record_vectors(params, g)
    dists = np.array([
        1.0 if np.linalg.norm(qv[k]) < EPS_ZERO or np.linalg.norm(gv[k]) < EPS_ZERO
        else float(np.clip(1.0 - qv[k][0] @ gv[k][0], 0.0, 2.0))
        for k in ("f", "l", "g")
    ])
    weights, tape = decide_soft_batch(params, enc, face_ok, conf_override)
    value = float(weights[0] @ dists)
    grads = decide_soft_backward(params, tape, dists[None, :])
    return value, grads


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

def save_dwt_checkpoint(path, params: DwtParams, meta: dict | None = None,
                        adapters: dict[str, np.ndarray] | None = None) -> None:
    """Persist parameters; thresholds go into the manifest as raw scalars."""
    from .nn import save_checkpoint

    blocks: dict[str, np.ndarray] = {}
    arch: dict[str, list] = {}
    for name in NET_NAMES:
        net = params.nets[name]
        arch[name] = [[layer.weights.shape[0], layer.activation] for layer in net.layers]
        for k, layer in enumerate(net.layers):
            blocks[f"{name}/layer{k}/weights"] = layer.weights
            blocks[f"{name}/layer{k}/bias"] = layer.bias
        proj = params.projections.get(name)
        if proj is not None:
            blocks[f"{name}/projection"] = proj
    if adapters:
        for stream, mat in adapters.items():
            blocks[f"adapter/{stream}"] = mat
    full_meta = {
        "dims": list(params.dims),
        "branch_temperature": params.branch_temperature,
        "raw_alpha": params.thresholds.raw_alpha.tolist(),
        "raw_beta": params.thresholds.raw_beta.tolist(),
        "arch": arch,
        "adapters": sorted(adapters) if adapters else [],
    }
    full_meta.update(meta or {})
    save_checkpoint(path, blocks, full_meta)


def load_dwt_checkpoint(path) -> tuple[DwtParams, dict, dict[str, np.ndarray] | None]:
    from .nn import Layer, load_checkpoint

    blocks, meta = load_checkpoint(path)
    nets: dict[str, DenseNet] = {}
    projections: dict[str, np.ndarray | None] = {}
    for name in NET_NAMES:
        layers = []
        for k, (out_dim, activation) in enumerate(meta["arch"][name]):
            weights = blocks[f"{name}/layer{k}/weights"]
            bias = blocks[f"{name}/layer{k}/bias"]
            if weights.shape[0] != out_dim or bias.shape != (out_dim,):
                raise ConfigError(f"{name} layer {k}: blob shape disagrees with manifest")
            layers.append(Layer(weights, bias, activation))
        nets[name] = DenseNet(layers)
        projections[name] = blocks.get(f"{name}/projection")
    thresholds = Thresholds(np.array(meta["raw_alpha"]), np.array(meta["raw_beta"]))
    params = DwtParams(nets=nets, thresholds=thresholds,
                       branch_temperature=float(meta["branch_temperature"]),
                       dims=tuple(meta["dims"]), projections=projections)
    adapters = {s: blocks[f"adapter/{s}"] for s in meta.get("adapters", [])} or None
    return params, meta, adapters
