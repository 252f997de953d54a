"""Shared builders for the test suite: tiny models, random examples, and the
constructed datasets behind the separability and complementary-signal checks."""

from __future__ import annotations

import numpy as np

from ties.data_io import InteractionRecord
from ties.model import (
    ActionVocab,
    FeatureSpec,
    ModelConfig,
    SequenceExample,
    TiesModel,
    assemble_features,
    model_init,
)

TINY_ACTIONS = ("<pad>", "alpha", "beta", "gamma", "delta", "epsilon")


def tiny_config(encoder: str, d_src: int = 2, d_tgt: int = 2, d_act: int = 1,
                hidden: int = 4, max_len: int = 4, **overrides) -> ModelConfig:
    feature = FeatureSpec(d_src=d_src, d_tgt=d_tgt, d_act=d_act)
    defaults = dict(hidden=hidden, max_len=max_len, head_hidden=5,
                    cnn_layers=2, cnn_width=3, rnn_layers=1)
    defaults.update(overrides)
    return ModelConfig(encoder=encoder, feature=feature, actions=TINY_ACTIONS,
                       **defaults)


def tiny_model(encoder: str, seed: int = 0, **overrides) -> TiesModel:
    return model_init(tiny_config(encoder, **overrides), seed)


def random_example(model: TiesModel, rng: np.random.Generator,
                   n_real: int | None = None, t_len: int | None = None,
                   label: int | None = None) -> SequenceExample:
    """Left-padded example with random real rows and random action ids."""
    spec = model.config.feature
    t_len = model.config.max_len if t_len is None else t_len
    if n_real is None:
        n_real = int(rng.integers(1, t_len + 1))
    features = np.zeros((t_len, spec.d))
    features[t_len - n_real:] = rng.standard_normal((n_real, spec.d))
    mask = np.zeros(t_len, dtype=bool)
    mask[t_len - n_real:] = True
    action_ids = np.zeros(t_len, dtype=np.intp)
    action_ids[t_len - n_real:] = rng.integers(1, len(model.config.actions), n_real)
    return SequenceExample(features=features, mask=mask, action_ids=action_ids,
                           source_id="probe", label=label)


def permute_real_steps(ex: SequenceExample, rng: np.random.Generator) -> SequenceExample:
    """Shuffle the unmasked rows in place among themselves."""
    idx = np.flatnonzero(ex.mask)
    perm = rng.permutation(len(idx))
    features = ex.features.copy()
    action_ids = ex.action_ids.copy()
    features[idx] = ex.features[idx][perm]
    action_ids[idx] = ex.action_ids[idx][perm]
    return SequenceExample(features=features, mask=ex.mask.copy(),
                           action_ids=action_ids, source_id=ex.source_id,
                           label=ex.label)


def separable_examples(model: TiesModel, n: int = 200, seed: int = 0,
                       frac_pos: float = 0.25) -> list[SequenceExample]:
    """Linearly separable sequences: positives use one action, negatives another."""
    rng = np.random.default_rng(seed)
    vocab = model.vocab
    spec = model.config.feature
    out = []
    for i in range(n):
        label = int(i < frac_pos * n)
        action = "beta" if label else "alpha"
        records = []
        ts = 1_600_000_000 + i
        for _ in range(int(rng.integers(3, model.config.max_len + 1))):
            ts += int(rng.integers(1, 1000))
            records.append(InteractionRecord(f"s{i:04d}", "", action, ts))
        out.append(assemble_features(records, spec, vocab, None, None,
                                     model.action_table.value,
                                     model.config.max_len, label=label))
    return out


def make_complementary(n_sources: int = 500, frac_bad: float = 0.2,
                       frac_group_a: float = 0.6, seed: int = 0):
    """Population where an external baseline and the sequence signal split the work.

    Group A bad actors are only visible to the baseline score (they behave
    exactly like normal accounts); group B bad actors are only visible
    behaviorally (abuse-action skew and burst timing) while the baseline is
    noise there. Returns (sequences, labels, baseline_scores).
    """
    rng = np.random.default_rng(seed)
    benign = ["browse", "comment", "like", "post", "share"]
    abuse = ["mass_invite", "mass_message", "mass_post"]
    sequences: dict[str, list[InteractionRecord]] = {}
    labels: dict[str, int] = {}
    baseline: dict[str, float] = {}
    n_bad = int(frac_bad * n_sources)
    flags = np.array([1] * n_bad + [0] * (n_sources - n_bad))
    rng.shuffle(flags)
    group_a = rng.random(n_sources) < frac_group_a
    for i in range(n_sources):
        sid = f"s{i:05d}"
        bad = int(flags[i])
        in_a = bool(group_a[i])
        labels[sid] = bad
        behaves_bad = bad and not in_a
        ts = int(rng.integers(1_600_000_000, 1_600_086_400))
        seq = []
        for _ in range(int(rng.integers(8, 20))):
            if behaves_bad:
                ts += int(rng.exponential(300)) + 1
                action = (abuse[int(rng.integers(3))] if rng.random() < 0.8
                          else benign[int(rng.integers(5))])
            else:
                ts += int(rng.exponential(3600)) + 1
                action = benign[int(rng.integers(5))]
            seq.append(InteractionRecord(sid, "", action, ts))
        sequences[sid] = seq
        if in_a:
            base = 0.9 * bad + 0.05 + 0.04 * rng.random()
        else:
            base = 0.45 + 0.1 * rng.random()
        baseline[sid] = float(min(max(base, 0.0), 1.0))
    return sequences, labels, baseline


def complementary_examples(sequences, labels, vocab: ActionVocab,
                           spec: FeatureSpec, max_len: int):
    placeholder = np.zeros((len(vocab), spec.d_act))
    return [assemble_features(sequences[sid], spec, vocab, None, None,
                              placeholder, max_len, label=labels[sid])
            for sid in sorted(sequences)]
