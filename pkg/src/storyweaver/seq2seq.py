"""Sequence-to-sequence reply generator: GRU encoder/decoder in plain numpy.

The dialogue window is flattened into one id sequence (turns joined by a
separator token), run through a single-layer GRU encoder; the decoder GRU
starts from the final encoder hidden state and greedily emits tokens until
end-of-sequence or a hard cap. Training is teacher-forced cross-entropy
with SGD and global-norm gradient clipping; every gradient path
(projection, both GRUs, shared embeddings) is exercised by
``gradient_check`` against central differences.

GRU step, with x the input embedding and h the carried hidden state:

    z = sigmoid(Wz x + Uz h + bz)          update gate
    r = sigmoid(Wr x + Ur h + br)          reset gate
    c = tanh(Wc x + Uc (r * h) + bc)       candidate
    h' = (1 - z) * h + z * c
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dialogue import DialogueState, Proposal, Source
from .encoding import tokenize

PAD, BOS, EOS, UNK, SEP = 0, 1, 2, 3, 4
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>", "<sep>")

MAX_CONTEXT_IDS = 64
MAX_DECODE_LEN = 20
GRAD_CLIP = 5.0
INIT_SCALE = 0.08

DEFAULT_EMBED_DIM = 16
DEFAULT_HIDDEN_DIM = 32
DEFAULT_VOCAB_SIZE = 2000


@dataclass(frozen=True)
class Vocab:
    """Token <-> id bijection; ids contiguous from 0, reserved ids first."""

    id_to_token: tuple[str, ...]
    token_to_id: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        mapping = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(mapping) != len(self.id_to_token):
            raise ValueError("vocab tokens must be unique")
        if self.id_to_token[: len(RESERVED)] != RESERVED:
            raise ValueError("reserved tokens must occupy ids 0..4")
        object.__setattr__(self, "token_to_id", mapping)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)


def build_vocab(corpus: list[str], max_size: int = DEFAULT_VOCAB_SIZE) -> Vocab:
    """Reserved tokens, then corpus tokens by descending frequency.

    Frequency ties break lexicographically; ``max_size`` caps the total
    vocabulary including the 5 reserved ids.
    """
    if max_size < len(RESERVED):
        raise ValueError(f"max_size must be >= {len(RESERVED)}")
    freq: dict[str, int] = {}
    for utterance in corpus:
        for tok in tokenize(utterance):
            freq[tok] = freq.get(tok, 0) + 1
    ranked = sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))
    keep = [tok for tok, _ in ranked[: max_size - len(RESERVED)]]
    return Vocab(id_to_token=RESERVED + tuple(keep))


def encode_context(state: DialogueState, vocab: Vocab) -> list[int]:
    """Windowed turns as ids, consecutive turns joined by SEP, last 64 kept."""
    from .dialogue import window  # local import keeps module load cheap

    ids: list[int] = []
    for turn in window(state):
        if ids:
            ids.append(SEP)
        ids.extend(vocab.id_of(tok) for tok in tokenize(turn.text))
    return ids[-MAX_CONTEXT_IDS:]


@dataclass
class GRUParams:
    """One GRU's weights: update (z), reset (r), candidate (c) gates."""

    Wz: np.ndarray
    Uz: np.ndarray
    bz: np.ndarray
    Wr: np.ndarray
    Ur: np.ndarray
    br: np.ndarray
    Wc: np.ndarray
    Uc: np.ndarray
    bc: np.ndarray


def _init_gru(rng: np.random.RandomState, embed_dim: int, hidden_dim: int) -> GRUParams:
    def u(*shape: int) -> np.ndarray:
        return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)

    return GRUParams(
        Wz=u(hidden_dim, embed_dim), Uz=u(hidden_dim, hidden_dim), bz=u(hidden_dim),
        Wr=u(hidden_dim, embed_dim), Ur=u(hidden_dim, hidden_dim), br=u(hidden_dim),
        Wc=u(hidden_dim, embed_dim), Uc=u(hidden_dim, hidden_dim), bc=u(hidden_dim),
    )


@dataclass
class Seq2SeqModel:
    embed: np.ndarray  # (V, E), shared by encoder and decoder inputs
    encoder: GRUParams
    decoder: GRUParams
    Wout: np.ndarray  # (H, V)
    bout: np.ndarray  # (V,)
    seed: int

    @property
    def vocab_size(self) -> int:
        return self.embed.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.embed.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.Wout.shape[0]

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        """(name, array) pairs in the declared serialization order."""
        out = [("embed", self.embed)]
        for prefix, gru in (("enc", self.encoder), ("dec", self.decoder)):
            for gate in ("Wz", "Uz", "bz", "Wr", "Ur", "br", "Wc", "Uc", "bc"):
                out.append((f"{prefix}.{gate}", getattr(gru, gate)))
        out.append(("Wout", self.Wout))
        out.append(("bout", self.bout))
        return out


def init_model(
    vocab_size: int,
    embed_dim: int = DEFAULT_EMBED_DIM,
    hidden_dim: int = DEFAULT_HIDDEN_DIM,
    seed: int = 0,
) -> Seq2SeqModel:
    """Uniform(-0.08, 0.08) init; the same seed reproduces every entry."""
    rng = np.random.RandomState(seed)
    return Seq2SeqModel(
        embed=rng.uniform(-INIT_SCALE, INIT_SCALE, size=(vocab_size, embed_dim)),
        encoder=_init_gru(rng, embed_dim, hidden_dim),
        decoder=_init_gru(rng, embed_dim, hidden_dim),
        Wout=rng.uniform(-INIT_SCALE, INIT_SCALE, size=(hidden_dim, vocab_size)),
        bout=rng.uniform(-INIT_SCALE, INIT_SCALE, size=vocab_size),
        seed=seed,
    )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    ex = np.exp(shifted)
    return ex / ex.sum()


def _gru_step(p: GRUParams, x: np.ndarray, h: np.ndarray) -> tuple[np.ndarray, tuple]:
    z = _sigmoid(p.Wz @ x + p.Uz @ h + p.bz)
    r = _sigmoid(p.Wr @ x + p.Ur @ h + p.br)
    c = np.tanh(p.Wc @ x + p.Uc @ (r * h) + p.bc)
    h_new = (1.0 - z) * h + z * c
    return h_new, (x, h, z, r, c)


def _gru_step_backward(
    p: GRUParams, grads: dict[str, np.ndarray], prefix: str, cache: tuple, dh_new: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Backprop one step; returns (dx, dh_prev)."""
    x, h, z, r, c = cache
    dz = dh_new * (c - h)
    dc = dh_new * z
    dh = dh_new * (1.0 - z)

    da_c = dc * (1.0 - c * c)
    grads[f"{prefix}.Wc"] += np.outer(da_c, x)
    grads[f"{prefix}.Uc"] += np.outer(da_c, r * h)
    grads[f"{prefix}.bc"] += da_c
    d_rh = p.Uc.T @ da_c
    dr = d_rh * h
    dh += d_rh * r

    da_r = dr * r * (1.0 - r)
    grads[f"{prefix}.Wr"] += np.outer(da_r, x)
    grads[f"{prefix}.Ur"] += np.outer(da_r, h)
    grads[f"{prefix}.br"] += da_r
    dh += p.Ur.T @ da_r

    da_z = dz * z * (1.0 - z)
    grads[f"{prefix}.Wz"] += np.outer(da_z, x)
    grads[f"{prefix}.Uz"] += np.outer(da_z, h)
    grads[f"{prefix}.bz"] += da_z
    dh += p.Uz.T @ da_z

    dx = p.Wc.T @ da_c + p.Wr.T @ da_r + p.Wz.T @ da_z
    return dx, dh


def _encode(model: Seq2SeqModel, context_ids: list[int]) -> tuple[np.ndarray, list[tuple]]:
    h = np.zeros(model.hidden_dim)
    caches = []
    for tok_id in context_ids:
        h, cache = _gru_step(model.encoder, model.embed[tok_id], h)
        caches.append(cache)
    return h, caches


def forward_decode(model: Seq2SeqModel, context_ids: list[int]) -> tuple[list[int], float]:
    """Greedy decode; returns emitted ids (no BOS/EOS) and mean log-prob.

    Argmax ties go to the lowest token id (the all-zero-parameter model
    therefore emits PAD forever, up to the cap). With nothing emitted the
    mean log-prob is defined as 0.0; propose_context turns that case into
    the fixed fallback anyway.
    """
    ids = context_ids if context_ids else [BOS]
    h, _ = _encode(model, ids)
    emitted: list[int] = []
    logprobs: list[float] = []
    tok = BOS
    while len(emitted) < MAX_DECODE_LEN:
        h, _ = _gru_step(model.decoder, model.embed[tok], h)
        probs = _softmax(h @ model.Wout + model.bout)
        tok = int(np.argmax(probs))
        if tok == EOS:
            break
        emitted.append(tok)
        logprobs.append(math.log(max(probs[tok], 1e-300)))
    mean_lp = sum(logprobs) / len(logprobs) if logprobs else 0.0
    return emitted, mean_lp


def _forward_backward(
    model: Seq2SeqModel, context_ids: list[int], target_ids: list[int]
) -> tuple[float, dict[str, np.ndarray]]:
    """Teacher-forced loss and analytic gradients for every parameter."""
    ctx = context_ids if context_ids else [BOS]
    h_enc, enc_caches = _encode(model, ctx)

    dec_inputs = [BOS] + list(target_ids)
    labels = list(target_ids) + [EOS]
    n_steps = len(labels)

    h = h_enc
    dec_caches = []
    step_probs = []
    loss = 0.0
    for t in range(n_steps):
        h, cache = _gru_step(model.decoder, model.embed[dec_inputs[t]], h)
        probs = _softmax(h @ model.Wout + model.bout)
        loss -= math.log(max(probs[labels[t]], 1e-300))
        dec_caches.append(cache)
        step_probs.append(probs)
        # h after this step feeds the next one; cache holds the pre-step h
    loss /= n_steps

    grads = {name: np.zeros_like(arr) for name, arr in model.parameters()}
    dh = np.zeros(model.hidden_dim)
    for t in range(n_steps - 1, -1, -1):
        dlogits = step_probs[t].copy()
        dlogits[labels[t]] -= 1.0
        dlogits /= n_steps
        h_t = (1.0 - dec_caches[t][2]) * dec_caches[t][1] + dec_caches[t][2] * dec_caches[t][4]
        grads["Wout"] += np.outer(h_t, dlogits)
        grads["bout"] += dlogits
        dh = dh + model.Wout @ dlogits
        dx, dh = _gru_step_backward(model.decoder, grads, "dec", dec_caches[t], dh)
        grads["embed"][dec_inputs[t]] += dx

    for t in range(len(ctx) - 1, -1, -1):
        dx, dh = _gru_step_backward(model.encoder, grads, "enc", enc_caches[t], dh)
        grads["embed"][ctx[t]] += dx

    return loss, grads


def train_step(
    model: Seq2SeqModel, context_ids: list[int], target_ids: list[int], lr: float
) -> float:
    """One SGD step; clips the global gradient norm at 5.0.

    Returns the pre-update loss. lr=0 is a legal no-op (loss still
    computed, parameters untouched bit-for-bit).
    """
    if not target_ids:
        raise ValueError("target_ids must be non-empty")
    if lr < 0:
        raise ValueError("lr must be >= 0")
    loss, grads = _forward_backward(model, context_ids, target_ids)
    if lr == 0.0:
        return loss
    total_sq = sum(float((g * g).sum()) for g in grads.values())
    norm = math.sqrt(total_sq)
    scale = GRAD_CLIP / norm if norm > GRAD_CLIP else 1.0
    for name, arr in model.parameters():
        arr -= lr * scale * grads[name]
    return loss


def loss_only(model: Seq2SeqModel, context_ids: list[int], target_ids: list[int]) -> float:
    loss, _ = _forward_backward(model, context_ids, target_ids)
    return loss


def gradient_check(
    model: Seq2SeqModel,
    context_ids: list[int],
    target_ids: list[int],
    h: float = 1e-4,
    max_checks: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks every scalar parameter unless ``max_checks`` caps the count, in
    which case a seeded sample (at least 200 when available) is used.
    rel = |ga - gn| / max(1e-8, |ga| + |gn|).
    """
    _, analytic = _forward_backward(model, context_ids, target_ids)
    coords = [
        (name, idx)
        for name, arr in model.parameters()
        for idx in np.ndindex(arr.shape)
    ]
    if max_checks is not None and len(coords) > max_checks:
        rng = np.random.RandomState(seed)
        size = min(len(coords), max(200, max_checks))
        picks = rng.choice(len(coords), size=size, replace=False)
        coords = [coords[i] for i in picks]
    arrays = dict(model.parameters())
    worst = 0.0
    for name, idx in coords:
        arr = arrays[name]
        orig = arr[idx]
        arr[idx] = orig + h
        loss_plus = loss_only(model, context_ids, target_ids)
        arr[idx] = orig - h
        loss_minus = loss_only(model, context_ids, target_ids)
        arr[idx] = orig
        gn = (loss_plus - loss_minus) / (2.0 * h)
        ga = analytic[name][idx]
        rel = abs(ga - gn) / max(1e-8, abs(ga) + abs(gn))
        worst = max(worst, rel)
    return worst


def propose_context(model: Seq2SeqModel, vocab: Vocab, state: DialogueState) -> Proposal:
    """Decode a reply for the current window; never fails.

    Certainty is exp(mean log-prob) clamped to [0,1]; an empty or all
    PAD/UNK decode becomes the fixed low-certainty filler "hmm".
    """
    ids, mean_lp = forward_decode(model, encode_context(state, vocab))
    if not ids or all(i in (PAD, UNK) for i in ids):
        return Proposal(source=Source.CONTEXT, text="hmm", certainty=0.0)
    text = " ".join(vocab.id_to_token[i] for i in ids)
    certainty = min(1.0, max(0.0, math.exp(mean_lp)))
    return Proposal(source=Source.CONTEXT, text=text, certainty=certainty)


def training_pairs(
    dialogues: list[list[str]], vocab: Vocab, context_window: int = 4
) -> list[tuple[list[int], list[int]]]:
    """(context_ids, target_ids) for every adjacent pair in the dialogues.

    The context is the windowed utterances before the target, encoded the
    same way live states are; targets with no in-vocab tokens are skipped.
    """
    from .dialogue import from_utterances

    pairs = []
    for utterances in dialogues:
        for t in range(1, len(utterances)):
            state = from_utterances(utterances[:t], context_window=context_window)
            target = [vocab.id_of(tok) for tok in tokenize(utterances[t])]
            if target:
                pairs.append((encode_context(state, vocab), target))
    return pairs


# --- persistence -------------------------------------------------------------
#
# One file: a JSON header line (shapes, seed, vocab in id order), then all
# parameters as little-endian float64 in the declared field order.

def save_model(model: Seq2SeqModel, vocab: Vocab, path: str | Path) -> None:
    header = {
        "vocab": list(vocab.id_to_token),
        "embed_dim": model.embed_dim,
        "hidden_dim": model.hidden_dim,
        "seed": model.seed,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for _, arr in model.parameters():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path: str | Path) -> tuple[Seq2SeqModel, Vocab]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        vocab = Vocab(id_to_token=tuple(header["vocab"]))
        model = init_model(
            vocab_size=len(vocab),
            embed_dim=header["embed_dim"],
            hidden_dim=header["hidden_dim"],
            seed=header["seed"],
        )
        for _, arr in model.parameters():
            buf = fh.read(arr.size * 8)
            if len(buf) != arr.size * 8:
                raise ValueError(f"model file {path} truncated")
            arr[...] = np.frombuffer(buf, dtype="<f8").reshape(arr.shape)
    return model, vocab
