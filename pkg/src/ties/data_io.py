"""Interaction-log ingestion, labels, the synthetic generator, and PCA export.

File formats (all UTF-8, tab-separated, '#' comment lines ignored):

* interaction log: ``source<TAB>target_or_-<TAB>action<TAB>ts_seconds`` with
  optional trailing ``key=value`` float pairs;
* labels: ``source_id<TAB>label`` with label in {0, 1};
* 2-D projection: ``id<TAB>x<TAB>y<TAB>label``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ties.errors import ConfigError, DataError, ParseError
from ties.graph_embed import EmbeddingTable, GraphEmbeddings

_NULL_TARGET = "-"


@dataclass
class InteractionRecord:
    """One (source, target, action, timestamp) event; target may be empty."""
    source_id: str
    target_id: str
    action: str
    ts: int
    misc: dict[str, float] | None = None


@dataclass
class ParseResult:
    records: list[InteractionRecord]
    issues: list[tuple[int, str]]  # (line number, message) per malformed line


@dataclass
class LabeledDataset:
    sequences: dict[str, list[InteractionRecord]]
    labels: dict[str, int]
    dropped_unlabeled_sources: int = 0
    dropped_unlabeled_records: int = 0
    dropped_labels_without_records: int = 0

    def record_count(self) -> int:
        return sum(len(seq) for seq in self.sequences.values())


# ---------------------------------------------------------------------------
# parsing / serialization


def _parse_line(line: str) -> InteractionRecord:
    parts = line.split("\t")
    if len(parts) < 4:
        raise ValueError(f"expected at least 4 tab-separated fields, got {len(parts)}")
    source_id, target_id, action, ts_text = parts[:4]
    if not source_id:
        raise ValueError("empty source id")
    if not action:
        raise ValueError("empty action")
    try:
        ts = int(ts_text)
    except ValueError:
        raise ValueError(f"bad timestamp {ts_text!r}") from None
    if ts < 0:
        raise ValueError(f"negative timestamp {ts}")
    misc: dict[str, float] | None = None
    if len(parts) > 4:
        misc = {}
        for pair in parts[4:]:
            key, sep, val = pair.partition("=")
            if not sep or not key:
                raise ValueError(f"bad misc pair {pair!r}")
            try:
                misc[key] = float(val)
            except ValueError:
                raise ValueError(f"bad misc value in {pair!r}") from None
    return InteractionRecord(
        source_id=source_id,
        target_id="" if target_id == _NULL_TARGET else target_id,
        action=action,
        ts=ts,
        misc=misc,
    )


def parse_interactions(path) -> ParseResult:
    """Parse an interaction log; malformed lines are reported, not fatal.

    More than 10% malformed data lines is treated as a corrupt file and
    raises. An empty file parses to an empty record list.
    """
    records: list[InteractionRecord] = []
    issues: list[tuple[int, str]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            try:
                records.append(_parse_line(line))
            except ValueError as exc:
                issues.append((lineno, str(exc)))
    total = len(records) + len(issues)
    if total and len(issues) > 0.1 * total:
        raise DataError(
            f"{path}: {len(issues)} of {total} lines malformed (>10%); "
            f"first: line {issues[0][0]}: {issues[0][1]}")
    return ParseResult(records=records, issues=issues)


def serialize_interactions(records: Sequence[InteractionRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            parts = [rec.source_id, rec.target_id or _NULL_TARGET, rec.action, str(rec.ts)]
            if rec.misc:
                parts.extend(f"{k}={rec.misc[k]:.17g}" for k in sorted(rec.misc))
            fh.write("\t".join(parts) + "\n")


def read_labels(path) -> dict[str, int]:
    """Labels TSV; a duplicated id must carry the same label everywhere."""
    labels: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or parts[1] not in ("0", "1"):
                raise ParseError(
                    f"{path}: line {lineno}: expected 'id<TAB>0|1'", line_number=lineno)
            label = int(parts[1])
            prev = labels.get(parts[0])
            if prev is not None and prev != label:
                raise DataError(
                    f"{path}: line {lineno}: conflicting labels for {parts[0]!r}")
            labels[parts[0]] = label
    return labels


def write_labels(labels: Mapping[str, int], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sid in labels:
            fh.write(f"{sid}\t{labels[sid]}\n")


def group_records(records: Sequence[InteractionRecord]) -> dict[str, list[InteractionRecord]]:
    """Group by source id, each group stably sorted by timestamp."""
    groups: dict[str, list[InteractionRecord]] = {}
    for rec in records:
        groups.setdefault(rec.source_id, []).append(rec)
    for seq in groups.values():
        seq.sort(key=lambda r: r.ts)  # stable: ties keep input order
    return groups


def build_dataset(records: Sequence[InteractionRecord], labels) -> LabeledDataset:
    """Join records with labels; anything dropped is counted, never silent."""
    if not isinstance(labels, Mapping):
        labels = read_labels(labels)
    groups = group_records(records)
    sequences: dict[str, list[InteractionRecord]] = {}
    kept_labels: dict[str, int] = {}
    dropped_sources = 0
    dropped_records = 0
    for sid, seq in groups.items():
        if sid in labels:
            sequences[sid] = seq
            kept_labels[sid] = labels[sid]
        else:
            dropped_sources += 1
            dropped_records += len(seq)
    dropped_labels = sum(1 for sid in labels if sid not in groups)
    return LabeledDataset(
        sequences=sequences,
        labels=kept_labels,
        dropped_unlabeled_sources=dropped_sources,
        dropped_unlabeled_records=dropped_records,
        dropped_labels_without_records=dropped_labels,
    )


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the synthetic population.

    Bad actors skew to the last three actions of the vocabulary, draw targets
    from a small shared farm, and interact ``bad_burst_factor`` times faster.
    Entity embeddings come from two Gaussian clusters whose centers move
    together as ``cluster_overlap`` goes from 0 (well separated) to 1 (same).
    """
    n_normal: int
    n_bad: int
    action_count: int = 12
    mean_seq_len: int = 30
    bad_burst_factor: float = 10.0
    bad_target_pool: int = 20
    seed: int = 0
    normal_target_pool: int = 500
    embed_dim: int = 16
    cluster_overlap: float = 0.5

    def __post_init__(self):
        if self.n_normal < 1 or self.n_bad < 1:
            raise ConfigError("need at least one normal and one bad source")
        if self.bad_burst_factor <= 1.0:
            raise ConfigError(f"bad_burst_factor must be > 1, got {self.bad_burst_factor}")
        if self.action_count < 4:
            raise ConfigError("need at least 4 actions (3 are reserved for abuse)")
        if self.bad_target_pool < 1 or self.normal_target_pool < 1:
            raise ConfigError("target pools must be non-empty")
        if not (0.0 <= self.cluster_overlap <= 1.0):
            raise ConfigError(f"cluster_overlap must be in [0, 1], got {self.cluster_overlap}")
        if self.embed_dim < 2:
            raise ConfigError(f"embed_dim must be >= 2, got {self.embed_dim}")


_MEAN_GAP_SECONDS = 3600.0
_EPOCH_START = 1_600_000_000


def generate_synthetic(cfg: SynthConfig) -> tuple[LabeledDataset, GraphEmbeddings]:
    """Deterministic synthetic population with a measurable bad-actor signature."""
    rng = np.random.default_rng(cfg.seed)
    actions = [f"act{k:02d}" for k in range(cfg.action_count)]
    abuse_actions = actions[-3:]

    decay = np.exp(-3.0 * np.arange(cfg.action_count) / cfg.action_count)
    normal_probs = decay / decay.sum()
    bad_probs = 0.2 * normal_probs
    for a in abuse_actions:
        bad_probs[actions.index(a)] += 0.8 / 3.0

    normal_targets = [f"t{i:05d}" for i in range(cfg.normal_target_pool)]
    farm_targets = [f"farm{i:03d}" for i in range(cfg.bad_target_pool)]

    sequences: dict[str, list[InteractionRecord]] = {}
    labels: dict[str, int] = {}

    def make_sequence(sid: str, bad: bool) -> None:
        length = max(1, int(rng.poisson(cfg.mean_seq_len)))
        scale = _MEAN_GAP_SECONDS / cfg.bad_burst_factor if bad else _MEAN_GAP_SECONDS
        ts = int(rng.integers(_EPOCH_START, _EPOCH_START + 7 * 86400))
        probs = bad_probs if bad else normal_probs
        pool = farm_targets if bad else normal_targets
        seq = []
        for _ in range(length):
            ts += int(round(rng.exponential(scale)))
            action = actions[int(rng.choice(cfg.action_count, p=probs))]
            target = pool[int(rng.integers(len(pool)))]
            seq.append(InteractionRecord(source_id=sid, target_id=target,
                                         action=action, ts=ts))
        sequences[sid] = seq
        labels[sid] = int(bad)

    normal_ids = [f"n{i:05d}" for i in range(cfg.n_normal)]
    bad_ids = [f"b{i:05d}" for i in range(cfg.n_bad)]
    for sid in normal_ids:
        make_sequence(sid, bad=False)
    for sid in bad_ids:
        make_sequence(sid, bad=True)

    # Two Gaussian clusters: centers 6*(1 - overlap) apart along a random axis.
    direction = rng.standard_normal(cfg.embed_dim)
    direction /= np.linalg.norm(direction)
    separation = 6.0 * (1.0 - cfg.cluster_overlap)
    center_normal = -0.5 * separation * direction
    center_bad = 0.5 * separation * direction

    ids: list[str] = []
    vecs: list[np.ndarray] = []
    for sid in normal_ids + normal_targets:
        ids.append(sid)
        vecs.append(center_normal + rng.standard_normal(cfg.embed_dim))
    for sid in bad_ids + farm_targets:
        ids.append(sid)
        vecs.append(center_bad + rng.standard_normal(cfg.embed_dim))

    node_table = EmbeddingTable(ids, np.vstack(vecs))
    relation_table = EmbeddingTable(["interacts"],
                                    rng.standard_normal((1, cfg.embed_dim)))
    embeddings = GraphEmbeddings(node_table=node_table, relation_table=relation_table,
                                 dim=cfg.embed_dim)
    dataset = LabeledDataset(sequences=sequences, labels=labels)
    return dataset, embeddings


def write_dataset_files(dataset: LabeledDataset, out_dir) -> tuple[Path, Path]:
    """Write interactions.tsv and labels.tsv under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    interactions_path = out / "interactions.tsv"
    labels_path = out / "labels.tsv"
    all_records = [rec for sid in dataset.sequences for rec in dataset.sequences[sid]]
    serialize_interactions(all_records, interactions_path)
    write_labels(dataset.labels, labels_path)
    return interactions_path, labels_path


# ---------------------------------------------------------------------------
# 2-D projection export


def _power_iteration(cov: np.ndarray, start: np.ndarray,
                     orthogonal_to: np.ndarray | None = None,
                     iterations: int = 1000, tol: float = 1e-13) -> np.ndarray | None:
    """Dominant eigenvector of ``cov`` (optionally within a subspace), or None
    if the operator is numerically zero there."""
    v = start.copy()
    if orthogonal_to is not None:
        v -= (v @ orthogonal_to) * orthogonal_to
    norm = np.linalg.norm(v)
    if norm == 0:
        return None
    v /= norm
    for _ in range(iterations):
        w = cov @ v
        if orthogonal_to is not None:
            w -= (w @ orthogonal_to) * orthogonal_to
        norm = np.linalg.norm(w)
        if norm < 1e-12:
            return None
        w /= norm
        if np.linalg.norm(w - v) < tol or np.linalg.norm(w + v) < tol:
            v = w
            break
        v = w
    return v


def pca_project_2d(points: np.ndarray) -> np.ndarray:
    """Mean-centered projection onto the top-2 principal axes (power iteration)."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 3 or points.shape[1] < 2:
        raise ConfigError(
            f"projection needs >= 3 points of dim >= 2, got shape {points.shape}")
    centered = points - points.mean(axis=0)
    scale = float(np.abs(centered).max())
    if scale == 0.0:
        raise DataError("projection input is rank-0 (all points identical)")
    cov = centered.T @ centered / points.shape[0]
    rng = np.random.default_rng(0)
    v1 = _power_iteration(cov, rng.standard_normal(points.shape[1]))
    if v1 is None:
        raise DataError("projection input is rank-0 (zero covariance)")
    lam1 = float(v1 @ cov @ v1)
    deflated = cov - lam1 * np.outer(v1, v1)
    v2 = _power_iteration(deflated, rng.standard_normal(points.shape[1]),
                          orthogonal_to=v1)
    if v2 is None:
        # rank-1 data: any unit vector orthogonal to v1 completes the basis
        basis = np.eye(points.shape[1])
        candidates = basis - np.outer(basis @ v1, v1)
        v2 = candidates[int(np.argmax(np.linalg.norm(candidates, axis=1)))]
        v2 /= np.linalg.norm(v2)
    return centered @ np.column_stack([v1, v2])


def export_pca_projection(embeddings: Mapping[str, np.ndarray],
                          labels: Mapping[str, int], path) -> np.ndarray:
    """Project embeddings to 2-D and write ``id<TAB>x<TAB>y<TAB>label`` rows.

    Every id must be labeled; returns the projected coordinates in id order.
    """
    ids = list(embeddings.keys())
    for eid in ids:
        if eid not in labels:
            raise DataError(f"no label for projected id {eid!r}")
    points = np.vstack([np.asarray(embeddings[eid], dtype=np.float64).reshape(-1)
                        for eid in ids])
    coords = pca_project_2d(points)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for eid, (x, y) in zip(ids, coords):
            fh.write(f"{eid}\t{x:.17g}\t{y:.17g}\t{labels[eid]}\n")
    return coords
