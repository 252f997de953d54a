"""The TIES classifier: feature assembly, three sequence encoders, attention,
pooling, scoring head, and checkpoint round-trip.

Per timestep the input row is [source embedding | target embedding | action
embedding | log-scaled time gap, misc...]. Source/target embeddings are
frozen lookups baked into the example; action embeddings are trainable, so
the encoder re-gathers them from the live table on every forward pass.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ties.errors import (
    CheckpointError,
    CheckpointIntegrityError,
    CheckpointVersionError,
    ConfigError,
    DataError,
    EncoderKindError,
    ShapeError,
    VocabularyError,
)
from ties.data_io import InteractionRecord
from ties.graph_embed import EmbeddingTable
from ties.nn import (
    MLP,
    Attention,
    BiLSTM,
    ConvStack,
    Module,
    Parameter,
    Tensor,
    concat_cols,
    dropout,
    gather_rows,
    pool_rows,
    sigmoid,
)

ENCODER_KINDS = ("rnn", "cnn", "deepset")
POOLING_KINDS = ("mean", "max", "sum")

CHECKPOINT_VERSION = 1
_MANIFEST_NAME = "manifest.json"
_WEIGHTS_NAME = "weights.bin"

_SCORE_CLAMP = 1e-15


class ActionVocab:
    """Ordered action names; index 0 is the padding action, never in real data."""

    PAD = "<pad>"

    def __init__(self, names: Sequence[str]):
        names = list(names)
        if not names or names[0] != self.PAD:
            raise ConfigError("action vocabulary must reserve index 0 for the pad action")
        if len(set(names)) != len(names):
            raise ConfigError("action vocabulary has duplicate names")
        self.names = names
        self._index = {name: i for i, name in enumerate(names)}

    @classmethod
    def build(cls, actions) -> "ActionVocab":
        return cls([cls.PAD] + sorted(set(actions)))

    def __len__(self) -> int:
        return len(self.names)

    def index_of(self, action: str) -> int:
        i = self._index.get(action)
        if i is None or i == 0:
            raise VocabularyError(f"action {action!r} is not in the vocabulary")
        return i


@dataclass(frozen=True)
class FeatureSpec:
    """Widths of the per-step input slices; misc slot 0 is always the time gap."""
    d_src: int
    d_tgt: int
    d_act: int
    misc_keys: tuple[str, ...] = ()

    def __post_init__(self):
        if self.d_src < 0 or self.d_tgt < 0:
            raise ConfigError("embedding widths must be >= 0")
        if self.d_act < 1:
            raise ConfigError("action embedding width must be >= 1")

    @property
    def misc_dims(self) -> int:
        return 1 + len(self.misc_keys)

    @property
    def d(self) -> int:
        return self.d_src + self.d_tgt + self.d_act + self.misc_dims


@dataclass
class SequenceExample:
    """A cropped, left-padded, feature-assembled sequence ready for encoding.

    ``features`` rows at padded positions are all-zero and masked out;
    ``action_ids`` holds 0 there. The action-embedding columns are a snapshot;
    the encoder refreshes them from the trainable table.
    """
    features: np.ndarray
    mask: np.ndarray
    action_ids: np.ndarray
    source_id: str
    label: int | None = None
    unknown_entity_count: int = 0


@dataclass
class TiesOutput:
    score: float
    embedding: np.ndarray


def delta_t(ts_curr: int, ts_prev: int) -> float:
    """log(1 + seconds elapsed); a negative gap is a data error."""
    gap = ts_curr - ts_prev
    if gap < 0:
        raise DataError(f"timestamps out of order: {ts_curr} before {ts_prev}")
    return float(np.log1p(gap))


def assemble_features(interactions: Sequence[InteractionRecord],
                      spec: FeatureSpec,
                      vocab: ActionVocab,
                      src_table: EmbeddingTable | None,
                      tgt_table: EmbeddingTable | None,
                      action_values: np.ndarray,
                      max_len: int,
                      label: int | None = None) -> SequenceExample:
    """Build one example: crop to the last ``max_len`` steps, left-pad shorter.

    Unknown actions raise; unknown source/target ids fall back to zero vectors
    and are counted. Time gaps are computed on the full sequence before
    cropping, so the first retained step keeps its true gap.
    """
    if not interactions:
        raise DataError("cannot assemble an empty interaction sequence")
    source_id = interactions[0].source_id
    for rec in interactions:
        if rec.source_id != source_id:
            raise DataError(f"mixed source ids in one sequence: "
                            f"{source_id!r} vs {rec.source_id!r}")
    if max_len < 1:
        raise ConfigError(f"max_len must be >= 1, got {max_len}")
    if src_table is not None and spec.d_src and src_table.dim != spec.d_src:
        raise ShapeError(f"source table dim {src_table.dim} != spec d_src {spec.d_src}")
    if tgt_table is not None and spec.d_tgt and tgt_table.dim != spec.d_tgt:
        raise ShapeError(f"target table dim {tgt_table.dim} != spec d_tgt {spec.d_tgt}")

    deltas = [0.0]
    for prev, curr in zip(interactions[:-1], interactions[1:]):
        deltas.append(delta_t(curr.ts, prev.ts))

    kept = list(interactions)
    if len(kept) > max_len:
        kept = kept[-max_len:]
        deltas = deltas[-max_len:]
    t_len = max_len
    pad = t_len - len(kept)

    unknown_ids: set[str] = set()

    def entity_vec(table: EmbeddingTable | None, entity_id: str, width: int) -> np.ndarray:
        if width == 0:
            return np.empty(0)
        if not entity_id:
            return np.zeros(width)  # explicit null target, not a warning
        vec = table.get(entity_id) if table is not None else None
        if vec is None:
            unknown_ids.add(entity_id)
            return np.zeros(width)
        return vec

    src_vec = entity_vec(src_table, source_id, spec.d_src)

    features = np.zeros((t_len, spec.d))
    mask = np.zeros(t_len, dtype=bool)
    action_ids = np.zeros(t_len, dtype=np.intp)
    for i, (rec, dt) in enumerate(zip(kept, deltas)):
        row = pad + i
        aid = vocab.index_of(rec.action)
        misc = [dt] + [(rec.misc or {}).get(k, 0.0) for k in spec.misc_keys]
        features[row] = np.concatenate([
            src_vec,
            entity_vec(tgt_table, rec.target_id, spec.d_tgt),
            action_values[aid],
            np.asarray(misc),
        ])
        mask[row] = True
        action_ids[row] = aid

    return SequenceExample(features=features, mask=mask, action_ids=action_ids,
                           source_id=source_id, label=label,
                           unknown_entity_count=len(unknown_ids))


def with_extra_padding(ex: SequenceExample, extra: int) -> SequenceExample:
    """Prepend ``extra`` all-zero masked rows (padding-neutrality probes)."""
    d = ex.features.shape[1]
    return SequenceExample(
        features=np.vstack([np.zeros((extra, d)), ex.features]),
        mask=np.concatenate([np.zeros(extra, dtype=bool), ex.mask]),
        action_ids=np.concatenate([np.zeros(extra, dtype=np.intp), ex.action_ids]),
        source_id=ex.source_id,
        label=ex.label,
        unknown_entity_count=ex.unknown_entity_count,
    )


@dataclass
class ModelConfig:
    encoder: str
    feature: FeatureSpec
    actions: tuple[str, ...]  # full vocabulary, pad first
    hidden: int = 64
    pooling: str = "mean"
    max_len: int = 512
    cnn_layers: int = 2
    cnn_width: int = 5
    rnn_layers: int = 1
    head_hidden: int = 64

    def __post_init__(self):
        if self.encoder not in ENCODER_KINDS:
            raise ConfigError(
                f"unknown encoder {self.encoder!r}; expected one of {', '.join(ENCODER_KINDS)}")
        if self.pooling not in POOLING_KINDS:
            raise ConfigError(
                f"unknown pooling {self.pooling!r}; expected one of {', '.join(POOLING_KINDS)}")
        if self.hidden < 1:
            raise ConfigError(f"hidden size must be >= 1, got {self.hidden}")
        self.actions = tuple(self.actions)

    def to_dict(self) -> dict:
        return {
            "encoder": self.encoder,
            "d_src": self.feature.d_src,
            "d_tgt": self.feature.d_tgt,
            "d_act": self.feature.d_act,
            "misc_keys": list(self.feature.misc_keys),
            "actions": list(self.actions),
            "hidden": self.hidden,
            "pooling": self.pooling,
            "max_len": self.max_len,
            "cnn_layers": self.cnn_layers,
            "cnn_width": self.cnn_width,
            "rnn_layers": self.rnn_layers,
            "head_hidden": self.head_hidden,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(
            encoder=data["encoder"],
            feature=FeatureSpec(d_src=data["d_src"], d_tgt=data["d_tgt"],
                                d_act=data["d_act"],
                                misc_keys=tuple(data["misc_keys"])),
            actions=tuple(data["actions"]),
            hidden=data["hidden"],
            pooling=data["pooling"],
            max_len=data["max_len"],
            cnn_layers=data["cnn_layers"],
            cnn_width=data["cnn_width"],
            rnn_layers=data["rnn_layers"],
            head_hidden=data["head_hidden"],
        )


class TiesModel(Module):
    """All trainable parameters of one encoder configuration.

    A trained model is immutable at inference time and safe to share; training
    mutates parameters single-writer.
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        d, h = config.feature.d, config.hidden
        self.action_table = Parameter(
            rng.uniform(-0.05, 0.05, size=(len(config.actions), config.feature.d_act)))
        self.action_table.value[0, :] = 0.0  # pad action stays zero
        self.action_table.frozen_rows = (0,)
        if config.encoder == "deepset":
            self.phi = MLP([d, h, h], rng)
            self.rho = MLP([h, h, h], rng)
        elif config.encoder == "rnn":
            self.bilstm = BiLSTM(d, h, config.rnn_layers, rng)
            self.attn = Attention(h, rng)
        else:
            self.conv = ConvStack(d, h, config.cnn_layers, config.cnn_width, rng)
            self.attn = Attention(h, rng)
        self.head = MLP([h, config.head_hidden, 1], rng)
        self.src_table: EmbeddingTable | None = None
        self.tgt_table: EmbeddingTable | None = None

    @property
    def vocab(self) -> ActionVocab:
        return ActionVocab(list(self.config.actions))

    def attach_tables(self, src_table: EmbeddingTable | None,
                      tgt_table: EmbeddingTable | None) -> None:
        self.src_table = src_table
        self.tgt_table = tgt_table

    def load_parameters_from(self, other: "TiesModel") -> None:
        """Warm start: copy parameter values from a compatible model."""
        if other.config.encoder != self.config.encoder:
            raise EncoderKindError(
                f"warm-start checkpoint is {other.config.encoder!r}, "
                f"this model is {self.config.encoder!r}")
        mine = dict(self.named_parameters())
        theirs = dict(other.named_parameters())
        if mine.keys() != theirs.keys():
            raise ConfigError("warm-start checkpoint has a different parameter set")
        for name, p in mine.items():
            if p.shape != theirs[name].shape:
                raise ConfigError(
                    f"warm-start shape mismatch for {name}: "
                    f"{theirs[name].shape} vs {p.shape}")
            p.value[:] = theirs[name].value


def model_init(config: ModelConfig, rng_seed: int) -> TiesModel:
    """Fresh model: weights uniform +-1/sqrt(fan_in), action rows +-0.05."""
    return TiesModel(config, np.random.default_rng(rng_seed))


def encode_graph(model: TiesModel, ex: SequenceExample, training: bool = False,
                 rng: np.random.Generator | None = None,
                 dropout_p: float = 0.0) -> tuple[Tensor, Tensor]:
    """Forward pass returning (probability node, embedding node).

    RNN/CNN: H = encoder(X), Z = attention(H), z = pool(Z), all over unmasked
    rows. DeepSet: z = rho(sum over unmasked of phi(x_t)), no attention or
    pooling stage. Dropout hits the input rows, and the attention output on
    the RNN/CNN paths, only when training.
    """
    spec = model.config.feature
    if ex.features.ndim != 2 or ex.features.shape[1] != spec.d:
        raise ShapeError(
            f"example features {ex.features.shape} do not match input width {spec.d}")
    off_act = spec.d_src + spec.d_tgt
    parts: list[Tensor] = []
    if off_act:
        parts.append(Tensor(ex.features[:, :off_act]))
    parts.append(gather_rows(model.action_table, ex.action_ids))
    parts.append(Tensor(ex.features[:, off_act + spec.d_act:]))
    x = concat_cols(parts)
    x = dropout(x, dropout_p, training, rng)
    if model.config.encoder == "deepset":
        summed = pool_rows(model.phi.forward(x), ex.mask, "sum")
        z = model.rho.forward(summed)
    else:
        if model.config.encoder == "rnn":
            hidden = model.bilstm.forward(x, ex.mask)
        else:
            hidden = model.conv.forward(x)
        attended = model.attn.forward(hidden, ex.mask)
        attended = dropout(attended, dropout_p, training, rng)
        z = pool_rows(attended, ex.mask, model.config.pooling)
    prob = sigmoid(model.head.forward(z))
    return prob, z


def encode(model: TiesModel, ex: SequenceExample, training: bool = False,
           rng: np.random.Generator | None = None,
           dropout_p: float = 0.0) -> TiesOutput:
    prob, z = encode_graph(model, ex, training=training, rng=rng, dropout_p=dropout_p)
    score = min(max(prob.item(), _SCORE_CLAMP), 1.0 - _SCORE_CLAMP)
    return TiesOutput(score=score, embedding=z.value[0].copy())


def build_examples(sequences: Mapping[str, Sequence[InteractionRecord]],
                   labels: Mapping[str, int] | None,
                   model: TiesModel) -> list[SequenceExample]:
    """Assemble one example per source, in sorted source-id order."""
    vocab = model.vocab
    spec = model.config.feature
    out = []
    for sid in sorted(sequences):
        out.append(assemble_features(
            sequences[sid], spec, vocab, model.src_table, model.tgt_table,
            model.action_table.value, model.config.max_len,
            label=None if labels is None else labels[sid]))
    return out


# ---------------------------------------------------------------------------
# checkpointing


def _model_tensors(model: TiesModel) -> list[tuple[str, np.ndarray]]:
    tensors: list[tuple[str, np.ndarray]] = [
        (name, p.value) for name, p in model.named_parameters()]
    if model.src_table is not None:
        tensors.append(("src_table.vectors", model.src_table.vectors))
    if model.tgt_table is not None:
        tensors.append(("tgt_table.vectors", model.tgt_table.vectors))
    return tensors


def save_model(model: TiesModel, path) -> None:
    """Write ``manifest.json`` + ``weights.bin`` into the directory ``path``.

    The blob is raw little-endian float64, tensors concatenated in manifest
    order, with a SHA-256 checksum recorded so corruption is detected on load.
    """
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    tensors = _model_tensors(model)
    blob = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in tensors)
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "tensors": [{"name": n, "rows": int(a.shape[0]), "cols": int(a.shape[1])}
                    for n, a in tensors],
        "frozen_rows": {name: list(p.frozen_rows)
                        for name, p in model.named_parameters() if p.frozen_rows},
        "src_ids": None if model.src_table is None else model.src_table.ids,
        "tgt_ids": None if model.tgt_table is None else model.tgt_table.ids,
        "checksum_sha256": hashlib.sha256(blob).hexdigest(),
    }
    (out / _WEIGHTS_NAME).write_bytes(blob)
    with open(out / _MANIFEST_NAME, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_model(path, expect_kind: str | None = None) -> TiesModel:
    src = Path(path)
    manifest_path = src / _MANIFEST_NAME
    if not manifest_path.exists():
        raise CheckpointError(f"no checkpoint manifest at {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"unreadable checkpoint manifest: {exc}") from exc
    version = manifest.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format version {version!r}, this build reads {CHECKPOINT_VERSION}")
    config = ModelConfig.from_dict(manifest["config"])
    if expect_kind is not None and config.encoder != expect_kind:
        raise EncoderKindError(
            f"checkpoint encoder is {config.encoder!r} but {expect_kind!r} was requested")

    blob = (src / _WEIGHTS_NAME).read_bytes()
    if hashlib.sha256(blob).hexdigest() != manifest["checksum_sha256"]:
        raise CheckpointIntegrityError(f"checksum mismatch in {src / _WEIGHTS_NAME}")
    expected = sum(t["rows"] * t["cols"] for t in manifest["tensors"]) * 8
    if len(blob) != expected:
        raise CheckpointIntegrityError(
            f"weights blob is {len(blob)} bytes, manifest expects {expected}")

    model = TiesModel(config, np.random.default_rng(0))
    params = dict(model.named_parameters())
    fills: dict[str, np.ndarray] = {}
    offset = 0
    for entry in manifest["tensors"]:
        rows, cols = entry["rows"], entry["cols"]
        size = rows * cols * 8
        arr = np.frombuffer(blob[offset:offset + size], dtype="<f8").reshape(rows, cols)
        offset += size
        fills[entry["name"]] = arr.astype(np.float64)
    for name, p in params.items():
        if name not in fills:
            raise CheckpointError(f"checkpoint is missing tensor {name!r}")
        if fills[name].shape != p.shape:
            raise CheckpointError(
                f"tensor {name!r} has shape {fills[name].shape}, model expects {p.shape}")
        p.value[:] = fills[name]
        p.frozen_rows = tuple(manifest.get("frozen_rows", {}).get(name, ()))
    src_table = None
    if manifest.get("src_ids") is not None:
        src_table = EmbeddingTable(manifest["src_ids"], fills["src_table.vectors"])
    tgt_table = None
    if manifest.get("tgt_ids") is not None:
        tgt_table = EmbeddingTable(manifest["tgt_ids"], fills["tgt_table.vectors"])
    model.attach_tables(src_table, tgt_table)
    return model
