"""The carryover classifier: recurrent streams, attention, decoder, gradients.

Three independently parameterized recurrent streams encode the current user
turn, the context user turns and the context system turns. Each candidate
slot is scored from the combined context vector, the current dialog-act
embedding, the candidate slot encoding and a recency encoding, through a
tanh hidden layer and a binary softmax.

Everything is float64 numpy; the backward pass is written by hand and is
checked against central finite differences in the test suite.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .candidates import CandidateConfig, CandidateSlot, generate_candidates
from .data import Dialog, SchemaCatalog, Slot, tokenize
from .embeddings import EmbeddingTable, LabelEmbeddings, embed_phrase
from .errors import ConfigError

STREAM_NAMES = ("cur_u", "ctx_u", "ctx_v")

CHECKPOINT_MAGIC = "SLOTCARRY-CKPT 1"


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions and switches; derived sizes are properties."""

    embedding_dim: int
    hidden_dim: int = 128
    decoder_hidden_dim: int = 256
    window: int = 2
    distance_dim: int | None = None  # defaults to distance_classes
    use_word_attention: bool = False
    use_stream_attention: bool = False
    share_stream_params: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("embedding_dim", "hidden_dim", "decoder_hidden_dim", "window"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    @property
    def act_dim(self) -> int:
        return self.embedding_dim

    @property
    def slot_dim(self) -> int:
        return 2 * self.embedding_dim

    @property
    def distance_classes(self) -> int:
        return 2 * self.window

    @property
    def recency_dim(self) -> int:
        return self.distance_classes if self.distance_dim is None else self.distance_dim

    @property
    def z_dim(self) -> int:
        return self.hidden_dim + self.act_dim + self.slot_dim + self.recency_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)


def stream_param_keys(config: ModelConfig, stream: str) -> tuple[str, str, str]:
    suffix = "all" if config.share_stream_params else stream
    return (f"wx_{suffix}", f"wh_{suffix}", f"b_{suffix}")


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical parameter-name ordering; checkpoints serialize in this order."""
    h, e = config.hidden_dim, config.embedding_dim
    shapes: dict[str, tuple[int, ...]] = {}
    suffixes = ("all",) if config.share_stream_params else STREAM_NAMES
    for suffix in suffixes:
        shapes[f"wx_{suffix}"] = (4 * h, e)
        shapes[f"wh_{suffix}"] = (4 * h, h)
        shapes[f"b_{suffix}"] = (4 * h,)
    shapes["w_word"] = (h, config.slot_dim)
    shapes["w_stream"] = (h, config.slot_dim)
    shapes["w_dist"] = (config.recency_dim, config.distance_classes)
    shapes["b_dist"] = (config.recency_dim,)
    shapes["w_hidden"] = (config.decoder_hidden_dim, config.z_dim)
    shapes["b_hidden"] = (config.decoder_hidden_dim,)
    shapes["w_out"] = (2, config.decoder_hidden_dim)
    shapes["b_out"] = (2,)
    return shapes


@dataclass
class CarryoverModel:
    """Parameter container; immutable during inference, mutated by training."""

    config: ModelConfig
    params: dict[str, np.ndarray]

    @classmethod
    def initialize(cls, config: ModelConfig) -> "CarryoverModel":
        """Uniform [-0.1, 0.1] init under the config seed; forget-gate bias 1.0."""
        rng = np.random.default_rng(config.seed)
        params: dict[str, np.ndarray] = {}
        h = config.hidden_dim
        for name, shape in param_shapes(config).items():
            params[name] = rng.uniform(-0.1, 0.1, size=shape)
            if name.startswith("b_") and name.split("_", 1)[1] in ("all",) + STREAM_NAMES:
                params[name][h:2 * h] = 1.0
        return cls(config=config, params=params)

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(arr) for name, arr in self.params.items()}

    def copy_params(self) -> dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self.params.items()}


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - np.max(x)
    e = np.exp(shifted)
    return e / e.sum()


def recurrent_step(
    wx: np.ndarray,
    wh: np.ndarray,
    b: np.ndarray,
    x: np.ndarray,
    state: tuple[np.ndarray, np.ndarray],
) -> tuple[np.ndarray, np.ndarray, dict]:
    """One gated recurrent cell step.

    Gate rows are packed [input; forget; candidate; output]. Returns the new
    (h, c) plus the gate activations needed by the backward pass.
    """
    h_prev, c_prev = state
    hid = h_prev.shape[0]
    pre = wx @ x + wh @ h_prev + b
    i = _sigmoid(pre[:hid])
    f = _sigmoid(pre[hid:2 * hid])
    g = np.tanh(pre[2 * hid:3 * hid])
    o = _sigmoid(pre[3 * hid:])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    cache = {"x": x, "h_prev": h_prev, "c_prev": c_prev, "i": i, "f": f, "g": g, "o": o, "c": c}
    return h, c, cache


@dataclass
class EncodedStream:
    """Hidden sequence, final state and step caches for one stream."""

    inputs: np.ndarray  # (T, E)
    hidden: np.ndarray  # (T, H)
    final_h: np.ndarray
    final_c: np.ndarray
    caches: list[dict]

    @property
    def length(self) -> int:
        return self.hidden.shape[0]


def run_stream(
    wx: np.ndarray,
    wh: np.ndarray,
    b: np.ndarray,
    inputs: np.ndarray,
    state: tuple[np.ndarray, np.ndarray] | None = None,
) -> EncodedStream:
    """Run the cell over a (T, E) input sequence from the given state.

    Statefulness means feeding an utterance's final state into the next
    utterance, which is arithmetically identical to running the
    concatenated sequence in one call.
    """
    hid = wh.shape[1]
    if state is None:
        state = (np.zeros(hid), np.zeros(hid))
    h, c = state
    hidden = np.zeros((inputs.shape[0], hid))
    caches: list[dict] = []
    for step in range(inputs.shape[0]):
        h, c, cache = recurrent_step(wx, wh, b, inputs[step], (h, c))
        hidden[step] = h
        caches.append(cache)
    return EncodedStream(inputs=inputs, hidden=hidden, final_h=h, final_c=c, caches=caches)


@dataclass
class EncodedContext:
    """The three encoded streams for one (dialog, current turn) pair."""

    current_user: EncodedStream
    context_user: EncodedStream
    context_system: EncodedStream

    def by_name(self, name: str) -> EncodedStream:
        return {
            "cur_u": self.current_user,
            "ctx_u": self.context_user,
            "ctx_v": self.context_system,
        }[name]


def _embed_tokens(table: EmbeddingTable, tokens: Sequence[str]) -> np.ndarray:
    if not tokens:
        return np.zeros((0, table.dim))
    return np.stack([table.lookup(tok) for tok in tokens])


def encode_streams(
    model: CarryoverModel, table: EmbeddingTable, dialog: Dialog, t: int
) -> EncodedContext:
    """Encode current turn plus the windowed user/system context streams.

    Context streams chain statefully across their turns in chronological
    order; the current-user stream starts from the zero state. Empty context
    yields an empty sequence with zero final states.
    """
    if not dialog.turns[t].is_user:
        raise ConfigError(f"dialog {dialog.dialog_id}: turn {t} is not a user turn")
    window = model.config.window
    user_turns = [turn for turn in dialog.turns[:t] if turn.is_user][-window:]
    system_turns = [turn for turn in dialog.turns[:t] if not turn.is_user][-window:]

    def concat_tokens(turns) -> list[str]:
        tokens: list[str] = []
        for turn in turns:
            tokens.extend(turn.tokens)
        return tokens

    streams = {}
    for name, tokens in (
        ("cur_u", list(dialog.turns[t].tokens)),
        ("ctx_u", concat_tokens(user_turns)),
        ("ctx_v", concat_tokens(system_turns)),
    ):
        wx, wh, b = (model.params[k] for k in stream_param_keys(model.config, name))
        streams[name] = run_stream(wx, wh, b, _embed_tokens(table, tokens))
    return EncodedContext(
        current_user=streams["cur_u"],
        context_user=streams["ctx_u"],
        context_system=streams["ctx_v"],
    )


def encode_slot(
    labels: LabelEmbeddings, table: EmbeddingTable, cand: CandidateSlot
) -> np.ndarray:
    """Concatenate the mapped key's label embedding with the value embedding."""
    key_vec = labels.key_vector(cand.mapped_key)
    if key_vec is None:
        raise ConfigError(f"no label embedding for slot key {cand.mapped_key!r}")
    value_vec = embed_phrase(table, tokenize(cand.value))
    return np.concatenate([key_vec, value_vec])


def encode_act(labels: LabelEmbeddings, act: str, dim: int) -> np.ndarray:
    """Label embedding of the current dialog act; zero vector when unseen."""
    vec = labels.act_vector(act)
    return np.zeros(dim) if vec is None else vec


def encode_distance(model: CarryoverModel, distance: int) -> np.ndarray:
    """Affine map of the one-hot turn offset, clamped to the class count."""
    h_d, _ = _encode_distance_cached(model, distance)
    return h_d


def _distance_index(config: ModelConfig, distance: int) -> int:
    if distance < 1:
        raise ValueError("candidate distance must be >= 1")
    return min(distance, config.distance_classes) - 1


def _encode_distance_cached(model: CarryoverModel, distance: int) -> tuple[np.ndarray, int]:
    idx = _distance_index(model.config, distance)
    h_d = model.params["w_dist"][:, idx] + model.params["b_dist"]
    return h_d, idx


def word_attention(
    model: CarryoverModel, hidden: np.ndarray, slot_vec: np.ndarray
) -> tuple[np.ndarray, dict | None]:
    """Slot-conditioned attention over one stream's hidden states.

    Empty streams contribute a zero context vector.
    """
    hid = model.config.hidden_dim
    if hidden.shape[0] == 0:
        return np.zeros(hid), None
    proj = model.params["w_word"] @ slot_vec
    scores = hidden @ proj
    alphas = softmax(scores)
    context = alphas @ hidden
    return context, {"proj": proj, "scores": scores, "alphas": alphas}


def stream_attention(
    model: CarryoverModel, stream_vectors: np.ndarray, slot_vec: np.ndarray
) -> tuple[np.ndarray, dict]:
    """Slot-conditioned attention over the three per-stream context vectors."""
    proj = model.params["w_stream"] @ slot_vec
    scores = stream_vectors @ proj
    alphas = softmax(scores)
    combined = alphas @ stream_vectors
    return combined, {"proj": proj, "scores": scores, "alphas": alphas}


def combine_context(
    model: CarryoverModel, encoded: EncodedContext, slot_vec: np.ndarray
) -> tuple[np.ndarray, dict]:
    """Combine the three streams into one context vector.

    Word attention off: the sum of final states. Word attention on: sum of
    the per-stream attention vectors, or stream attention over them when
    that flag is on too.
    """
    config = model.config
    streams = [encoded.by_name(name) for name in STREAM_NAMES]
    if not config.use_word_attention:
        h_c = streams[0].final_h + streams[1].final_h + streams[2].final_h
        return h_c, {"mode": "sum_finals"}
    word_caches = []
    cvecs = np.zeros((3, config.hidden_dim))
    for k, stream in enumerate(streams):
        cvec, cache = word_attention(model, stream.hidden, slot_vec)
        cvecs[k] = cvec
        word_caches.append(cache)
    if not config.use_stream_attention:
        return cvecs.sum(axis=0), {"mode": "sum_word", "word": word_caches, "cvecs": cvecs}
    h_c, stream_cache = stream_attention(model, cvecs, slot_vec)
    return h_c, {
        "mode": "stream",
        "word": word_caches,
        "cvecs": cvecs,
        "stream": stream_cache,
    }


def score_candidate(
    model: CarryoverModel,
    encoded: EncodedContext,
    act_vec: np.ndarray,
    slot_vec: np.ndarray,
    distance: int,
) -> tuple[np.ndarray, dict]:
    """Probability pair (P(no carry), P(carry)) for one candidate."""
    h_c, combine_cache = combine_context(model, encoded, slot_vec)
    h_d, dist_idx = _encode_distance_cached(model, distance)
    z = np.concatenate([h_c, act_vec, slot_vec, h_d])
    hidden = np.tanh(model.params["w_hidden"] @ z + model.params["b_hidden"])
    logits = model.params["w_out"] @ hidden + model.params["b_out"]
    probs = softmax(logits)
    cache = {
        "combine": combine_cache,
        "dist_idx": dist_idx,
        "slot_vec": slot_vec,
        "z": z,
        "hidden": hidden,
        "probs": probs,
    }
    return probs, cache


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------


def _softmax_backward(alphas: np.ndarray, dalphas: np.ndarray) -> np.ndarray:
    return alphas * (dalphas - float(alphas @ dalphas))


def _stream_backward(
    model: CarryoverModel,
    name: str,
    stream: EncodedStream,
    dh_seq: np.ndarray,
    grads: dict[str, np.ndarray],
) -> None:
    """Backpropagate through time over one stream; input grads are discarded."""
    if stream.length == 0:
        return
    wx_key, wh_key, b_key = stream_param_keys(model.config, name)
    wh = model.params[wh_key]
    hid = model.config.hidden_dim
    dh_next = np.zeros(hid)
    dc_next = np.zeros(hid)
    d_wx = grads[wx_key]
    d_wh = grads[wh_key]
    d_b = grads[b_key]
    for step in range(stream.length - 1, -1, -1):
        cache = stream.caches[step]
        i, f, g, o, c = cache["i"], cache["f"], cache["g"], cache["o"], cache["c"]
        tanh_c = np.tanh(c)
        dh = dh_seq[step] + dh_next
        d_o = dh * tanh_c
        dc = dh * o * (1.0 - tanh_c * tanh_c) + dc_next
        d_i = dc * g
        d_f = dc * cache["c_prev"]
        d_g = dc * i
        dpre = np.concatenate([
            d_i * i * (1.0 - i),
            d_f * f * (1.0 - f),
            d_g * (1.0 - g * g),
            d_o * o * (1.0 - o),
        ])
        d_wx += np.outer(dpre, cache["x"])
        d_wh += np.outer(dpre, cache["h_prev"])
        d_b += dpre
        dh_next = wh.T @ dpre
        dc_next = dc * f
    # initial-state gradients are dropped: streams start from the zero state


def _word_attention_backward(
    model: CarryoverModel,
    stream: EncodedStream,
    cache: dict | None,
    slot_vec: np.ndarray,
    dcontext: np.ndarray,
    grads: dict[str, np.ndarray],
) -> np.ndarray | None:
    if cache is None:
        return None
    hidden = stream.hidden
    alphas = cache["alphas"]
    dalphas = hidden @ dcontext
    dh_seq = np.outer(alphas, dcontext)
    dscores = _softmax_backward(alphas, dalphas)
    dh_seq += np.outer(dscores, cache["proj"])
    dproj = hidden.T @ dscores
    grads["w_word"] += np.outer(dproj, slot_vec)
    return dh_seq


def _combine_backward(
    model: CarryoverModel,
    encoded: EncodedContext,
    combine_cache: dict,
    slot_vec: np.ndarray,
    dh_c: np.ndarray,
    grads: dict[str, np.ndarray],
) -> None:
    mode = combine_cache["mode"]
    streams = [(name, encoded.by_name(name)) for name in STREAM_NAMES]
    if mode == "sum_finals":
        for name, stream in streams:
            if stream.length == 0:
                continue
            dh_seq = np.zeros_like(stream.hidden)
            dh_seq[-1] = dh_c
            _stream_backward(model, name, stream, dh_seq, grads)
        return
    if mode == "sum_word":
        dcontexts = [dh_c, dh_c, dh_c]
    else:
        cvecs = combine_cache["cvecs"]
        scache = combine_cache["stream"]
        alphas = scache["alphas"]
        dalphas = cvecs @ dh_c
        d_cvecs = np.outer(alphas, dh_c)
        dscores = _softmax_backward(alphas, dalphas)
        d_cvecs += np.outer(dscores, scache["proj"])
        dproj = cvecs.T @ dscores
        grads["w_stream"] += np.outer(dproj, slot_vec)
        dcontexts = [d_cvecs[0], d_cvecs[1], d_cvecs[2]]
    for (name, stream), wcache, dcontext in zip(streams, combine_cache["word"], dcontexts):
        dh_seq = _word_attention_backward(model, stream, wcache, slot_vec, dcontext, grads)
        if dh_seq is not None:
            _stream_backward(model, name, stream, dh_seq, grads)


def backward_candidate(
    model: CarryoverModel,
    encoded: EncodedContext,
    cache: dict,
    dlogits: np.ndarray,
    grads: dict[str, np.ndarray],
) -> None:
    """Accumulate parameter gradients for one scored candidate.

    `dlogits` is the upstream gradient at the decoder logits, e.g.
    weight * (probs - onehot(label)) for the weighted cross-entropy loss.
    """
    hidden = cache["hidden"]
    grads["w_out"] += np.outer(dlogits, hidden)
    grads["b_out"] += dlogits
    dhidden = model.params["w_out"].T @ dlogits
    dpre = dhidden * (1.0 - hidden * hidden)
    grads["w_hidden"] += np.outer(dpre, cache["z"])
    grads["b_hidden"] += dpre
    dz = model.params["w_hidden"].T @ dpre
    hid = model.config.hidden_dim
    dh_c = dz[:hid]
    dh_d = dz[hid + model.config.act_dim + model.config.slot_dim:]
    grads["w_dist"][:, cache["dist_idx"]] += dh_d
    grads["b_dist"] += dh_d
    _combine_backward(model, encoded, cache["combine"], cache["slot_vec"], dh_c, grads)


# ---------------------------------------------------------------------------
# Turn-level prediction
# ---------------------------------------------------------------------------


def predict_turn(
    model: CarryoverModel,
    labels: LabelEmbeddings,
    table: EmbeddingTable,
    dialog: Dialog,
    t: int,
    catalog: SchemaCatalog,
    config: CandidateConfig,
    tau: float,
) -> set[Slot]:
    """Score every candidate independently; keep those with P(carry) > tau.

    Output is deduplicated on (key, lowercased value).
    """
    cands = generate_candidates(dialog, t, labels, catalog, config)
    if not cands:
        return set()
    encoded = encode_streams(model, table, dialog, t)
    act_vec = encode_act(labels, dialog.turns[t].act, model.config.act_dim)
    slot_vec_cache: dict[tuple[str, str], np.ndarray] = {}
    carried: dict[tuple[str, str], Slot] = {}
    for cand in cands:
        svkey = (cand.mapped_key, cand.value)
        slot_vec = slot_vec_cache.get(svkey)
        if slot_vec is None:
            slot_vec = encode_slot(labels, table, cand)
            slot_vec_cache[svkey] = slot_vec
        probs, _ = score_candidate(model, encoded, act_vec, slot_vec, cand.distance)
        if probs[1] > tau:
            dedup = (cand.mapped_key, cand.value.lower())
            carried.setdefault(dedup, Slot(cand.mapped_key, cand.value))
    return set(carried.values())


# ---------------------------------------------------------------------------
# Checkpoint IO
# ---------------------------------------------------------------------------


def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def save_checkpoint(
    model: CarryoverModel,
    path: str | Path,
    label_embeddings_sha256: str | None = None,
    candidate_config: CandidateConfig | None = None,
    catalog: SchemaCatalog | None = None,
) -> None:
    """Versioned container: JSON header + raw little-endian float64 tensors.

    Arrays are stored C-contiguous, in the header's `arrays` order (the
    canonical parameter order). Writing is bit-deterministic.
    """
    header = {
        "format_version": 1,
        "byte_order": "little",
        "dtype": "float64",
        "model_config": model.config.to_dict(),
        "candidate_config": asdict(candidate_config) if candidate_config else None,
        "schema_catalog": catalog.to_dict() if catalog else None,
        "label_embeddings_sha256": label_embeddings_sha256,
        "arrays": [
            {"name": name, "shape": list(model.params[name].shape)}
            for name in param_shapes(model.config)
        ],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(f"{CHECKPOINT_MAGIC}\n".encode("ascii"))
        fh.write(f"{len(header_bytes)}\n".encode("ascii"))
        fh.write(header_bytes)
        for entry in header["arrays"]:
            arr = np.ascontiguousarray(model.params[entry["name"]], dtype="<f8")
            fh.write(arr.tobytes(order="C"))


def load_checkpoint(path: str | Path) -> tuple[CarryoverModel, dict]:
    """Load a checkpoint; returns the model plus the header extras."""
    with open(path, "rb") as fh:
        magic = fh.readline().decode("ascii").rstrip("\n")
        if magic != CHECKPOINT_MAGIC:
            raise ConfigError(f"{path}: not a checkpoint file (magic {magic!r})")
        header_len = int(fh.readline().decode("ascii").strip())
        header = json.loads(fh.read(header_len).decode("utf-8"))
        config = ModelConfig.from_dict(header["model_config"])
        params: dict[str, np.ndarray] = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise ConfigError(f"{path}: truncated tensor {entry['name']!r}")
            params[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    expected = param_shapes(config)
    if set(params) != set(expected) or any(params[k].shape != expected[k] for k in expected):
        raise ConfigError(f"{path}: tensor shapes do not match the stored config")
    extras = {
        "candidate_config": (
            CandidateConfig(**header["candidate_config"]) if header["candidate_config"] else None
        ),
        "schema_catalog": (
            SchemaCatalog.from_dict(header["schema_catalog"])
            if header["schema_catalog"]
            else None
        ),
        "label_embeddings_sha256": header["label_embeddings_sha256"],
    }
    return CarryoverModel(config=config, params=params), extras
