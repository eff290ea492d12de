"""Adversarial training of the reward estimator against the mask policy.

Each batch alternates one reward step and one policy step.  The reward step
moves the estimator to score expert masked matrices (gold-presence masks over
the model's own candidates) above policy-sampled ones; the policy step is a
score-function update whose advantage is the reward minus the mask
log-probability minus a moving baseline.  Rollout helpers here are the single
implementation of the round-by-round data flow, shared verbatim by offline
evaluation and the network service so the two can never disagree.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import (
    LabelSet,
    MultiRoundSample,
    corpus_label_set,
    corpus_vocab,
    sentence_accuracy,
    slot_f1,
)
from .encoders import EncoderParams, encode_feedback, encode_query, init_encoder_params
from .numerics import (
    AdamState,
    GradTape,
    NumericsError,
    Tensor,
    adam_step,
    add,
    assert_all_finite,
    mul,
)
from .policy import (
    MaskState,
    PolicyParams,
    SampleMode,
    initial_mask_state,
    init_policy_params,
    mask_candidates,
    policy_step,
)
from .reward import RewardParams, init_reward_params, reward
from .slot_table import SlotFillingTable, update_table
from .tagger import (
    SlotCandidateMatrix,
    TaggerParams,
    build_slot_candidates,
    decode_tags,
    init_tagger_params,
    sequence_nll,
    token_embeddings,
)


class TrainerError(Exception):
    pass


class CheckpointError(TrainerError):
    pass


@dataclass
class TrainConfig:
    """Hyperparameters for training and model construction.

    `alpha` and `lam` are accepted and echoed into checkpoints for config
    parity but no update law consumes them.  `reward_lr`/`policy_lr` default
    to `learning_rate` when unset.
    """

    learning_rate: float = 1e-5
    batch_size: int = 8
    epochs: int = 5
    baseline_decay: float = 0.99
    seed: int = 0
    alpha: float = 0.5
    lam: float = 1.0
    k_labels: int = 8
    m_embed: int = 200
    enc_hidden: int = 24
    tagger_hidden: int = 24
    attn_dim: int | None = None
    policy_g_hidden: int = 16
    policy_lstm_hidden: int = 16
    reward_hidden: int = 16
    tagger_pretrain_epochs: int = 2
    tagger_lr: float = 0.05
    reward_lr: float | None = None
    policy_lr: float | None = None
    freeze_tagger: bool = True
    train_encoders: bool = True
    max_rounds: int = 4
    eval_subset: int = 50

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise TrainerError("learning_rate must be positive")
        if self.batch_size < 1:
            raise TrainerError("batch_size must be >= 1")


@dataclass
class SluModel:
    config: TrainConfig
    label_set: LabelSet
    vocab: dict[str, int]
    enc_query: EncoderParams
    enc_feedback: EncoderParams
    tagger: TaggerParams
    policy: PolicyParams
    reward: RewardParams


def init_model(
    label_set: LabelSet, vocab: dict[str, int], config: TrainConfig, rng: np.random.Generator
) -> SluModel:
    m, k = config.m_embed, label_set.k
    return SluModel(
        config=config,
        label_set=label_set,
        vocab=dict(vocab),
        enc_query=init_encoder_params(vocab, m, config.enc_hidden, rng, config.attn_dim),
        enc_feedback=init_encoder_params(vocab, m, config.enc_hidden, rng, config.attn_dim),
        tagger=init_tagger_params(vocab, label_set, m, config.tagger_hidden, rng, config.attn_dim),
        policy=init_policy_params(
            m, k, config.policy_g_hidden, config.policy_lstm_hidden, rng
        ),
        reward=init_reward_params(m, k, config.reward_hidden, rng),
    )


def model_named_tensors(model: SluModel) -> dict[str, Tensor]:
    out: dict[str, Tensor] = {}
    out.update(model.enc_query.named("enc_q"))
    out.update(model.enc_feedback.named("enc_f"))
    out.update(model.tagger.named("tagger"))
    out.update(model.policy.named("policy"))
    out.update(model.reward.named("reward"))
    return out


def _load_all_named(model: SluModel, tensors: dict[str, Tensor]) -> None:
    model.enc_query.load_named("enc_q", tensors)
    model.enc_feedback.load_named("enc_f", tensors)
    model.tagger.load_named("tagger", tensors)
    model.policy.load_named("policy", tensors)
    model.reward.load_named("reward", tensors)


@dataclass
class TrainerState:
    adam_reward: AdamState
    adam_policy: AdamState
    adam_tagger: AdamState
    baseline: float = 0.0
    epoch: int = 0
    step: int = 0
    seed: int = 0


def make_trainer_state(config: TrainConfig) -> TrainerState:
    return TrainerState(
        adam_reward=AdamState(lr=config.reward_lr or config.learning_rate),
        adam_policy=AdamState(lr=config.policy_lr or config.learning_rate),
        adam_tagger=AdamState(lr=config.tagger_lr),
        seed=config.seed,
    )


# ---------------------------------------------------------------------------
# Rollouts (shared by training, evaluation, and the service)


@dataclass
class RoundTrace:
    """Everything one round produced, for training, display, or replay."""

    round_index: int
    tagged_tokens: tuple[str, ...]
    decoded_tags: tuple[str, ...]
    candidates: SlotCandidateMatrix
    mask: np.ndarray
    masked_matrix: np.ndarray
    c_feedback: np.ndarray
    log_prob: Tensor | None  # None for the opening query round
    table: SlotFillingTable


@dataclass
class RolloutState:
    query_tokens: tuple[str, ...]
    c_query: Tensor
    mask_state: MaskState
    table: SlotFillingTable
    round_index: int


def _tag_candidates(model: SluModel, tokens: Sequence[str]) -> tuple[SlotCandidateMatrix, tuple]:
    decoded = decode_tags(tokens, model.tagger)
    emb = token_embeddings(tokens, model.tagger)
    return build_slot_candidates(tokens, decoded, emb, model.label_set), tuple(decoded)


def start_rollout(model: SluModel, query_tokens: Sequence[str]) -> tuple[RolloutState, RoundTrace]:
    """Open a session: encode the query, parse it, keep every tagged slot.

    The opening round has no feedback, so no policy step runs; the mask is
    the presence indicator over candidate rows (keep everything the tagger
    found), which also seeds the recurrent mask state for round 1.
    """
    tokens = tuple(query_tokens)
    if not tokens:
        raise TrainerError("query must contain at least one token")
    c_q = encode_query(tokens, model.enc_query)
    candidates, decoded = _tag_candidates(model, tokens)
    presence = np.any(candidates.matrix != 0.0, axis=1).astype(np.int8)
    masked = mask_candidates(candidates.matrix, presence)
    table = update_table(SlotFillingTable.empty(model.label_set), masked, candidates, 0)
    mask_state = initial_mask_state(presence, model.config.policy_lstm_hidden)
    state = RolloutState(tokens, c_q, mask_state, table, 0)
    trace = RoundTrace(
        0, tokens, decoded, candidates, presence, masked.matrix,
        np.zeros(model.config.m_embed), None, table,
    )
    return state, trace


def feedback_rollout(
    model: SluModel,
    state: RolloutState,
    feedback_tokens: Sequence[str],
    mode: SampleMode,
    rng: np.random.Generator | None = None,
) -> tuple[RolloutState, RoundTrace]:
    """Advance one feedback round: encode, re-tag query+feedback, mask, update."""
    fb = tuple(feedback_tokens)
    if not fb:
        raise TrainerError("feedback must contain at least one token")
    t = state.round_index + 1
    c_f = encode_feedback(fb, t, model.enc_feedback)
    tokens = state.query_tokens + fb
    candidates, decoded = _tag_candidates(model, tokens)
    new_mask_state, log_prob = policy_step(
        state.c_query, c_f, state.mask_state, model.policy, mode, rng
    )
    masked = mask_candidates(candidates.matrix, new_mask_state.mask)
    table = update_table(state.table, masked, candidates, t)
    new_state = RolloutState(state.query_tokens, state.c_query, new_mask_state, table, t)
    trace = RoundTrace(
        t, tokens, decoded, candidates, new_mask_state.mask.copy(), masked.matrix,
        c_f.data.copy(), log_prob, table,
    )
    return new_state, trace


def gold_presence_mask(gold_table: Mapping[str, str], label_set: LabelSet) -> np.ndarray:
    """Expert mask: keep exactly the labels filled in the gold table."""
    return np.array([1 if l in gold_table else 0 for l in label_set.labels], dtype=np.int8)


# ---------------------------------------------------------------------------
# Gradient steps


def _mean_reward_with_grads(
    batch: Sequence[tuple[np.ndarray, np.ndarray]], params: RewardParams
) -> tuple[float, dict[str, np.ndarray]]:
    named = params.named("reward")
    names = list(named.keys())
    with GradTape() as tape:
        total = reward(batch[0][0], batch[0][1], params)
        for m, c_f in batch[1:]:
            total = add(total, reward(m, c_f, params))
        mean = mul(total, Tensor(1.0 / len(batch)))
    grads = tape.gradients(mean, [named[n] for n in names])
    return float(mean.data), dict(zip(names, grads))


def reward_objective_grads(
    expert_batch: Sequence[tuple[np.ndarray, np.ndarray]],
    policy_batch: Sequence[tuple[np.ndarray, np.ndarray]],
    params: RewardParams,
) -> tuple[dict[str, np.ndarray], float, float]:
    """Gradient of (mean expert reward − mean policy reward) w.r.t. θ.

    Each expectation is a separate tape over the same code path, so identical
    batches produce bitwise-identical per-term gradients and the difference
    is exactly zero.
    """
    if not expert_batch or not policy_batch:
        raise TrainerError("reward step requires non-empty expert and policy batches")
    mean_e, grads_e = _mean_reward_with_grads(expert_batch, params)
    mean_p, grads_p = _mean_reward_with_grads(policy_batch, params)
    diff = {n: grads_e[n] - grads_p[n] for n in grads_e}
    return diff, mean_e, mean_p


def reward_grad_step(
    expert_batch: Sequence[tuple[np.ndarray, np.ndarray]],
    policy_batch: Sequence[tuple[np.ndarray, np.ndarray]],
    params: RewardParams,
    adam: AdamState,
) -> dict[str, float]:
    """One ascent step on (mean expert reward − mean policy reward)."""
    diff, mean_e, mean_p = reward_objective_grads(expert_batch, policy_batch, params)
    named = params.named("reward")
    # Adam minimizes, so feed the descent direction of the negated objective.
    adam_step(adam, named, {n: -g for n, g in diff.items()})
    params.load_named("reward", named)
    return {"mean_expert_reward": mean_e, "mean_policy_reward": mean_p}


@dataclass
class Episode:
    """One (sample, round) policy decision with everything its update needs."""

    episode_id: str
    log_prob: Tensor
    masked_matrix: np.ndarray
    expert_matrix: np.ndarray
    c_feedback: np.ndarray
    reward_value: float = 0.0


def policy_grad_step(
    episodes: Sequence[Episode],
    tape: GradTape,
    params: dict[str, Tensor],
    adam: AdamState,
    baseline: float,
    decay: float,
) -> tuple[float, dict[str, float]]:
    """Score-function ascent on the policy (and jointly trained encoders).

    Advantage per episode is reward − log-prob − baseline, held constant in
    the loss; the baseline then absorbs the batch mean of reward − log-prob
    via an exponential moving average.  Returns the new baseline.
    """
    if not episodes:
        raise TrainerError("policy step requires at least one episode")
    n = len(episodes)
    advantages = []
    signals = []
    for ep in episodes:
        lp = float(ep.log_prob.data)
        a = ep.reward_value - lp - baseline
        if not np.isfinite(a):
            raise NumericsError(f"non-finite advantage in episode {ep.episode_id}")
        advantages.append(a)
        signals.append(ep.reward_value - lp)
    names = list(params.keys())
    with tape:
        # Ascent on mean(A * log pi) == descent on its negation.
        loss = mul(Tensor(-advantages[0] / n), episodes[0].log_prob)
        for a, ep in zip(advantages[1:], episodes[1:]):
            loss = add(loss, mul(Tensor(-a / n), ep.log_prob))
    grads = tape.gradients(loss, [params[nm] for nm in names])
    adam_step(adam, params, dict(zip(names, grads)))
    new_baseline = decay * baseline + (1.0 - decay) * float(np.mean(signals))
    return new_baseline, {"mean_advantage": float(np.mean(advantages))}


# ---------------------------------------------------------------------------
# Tagger pretraining


def _tagging_pairs(samples: Sequence[MultiRoundSample]) -> list[tuple[tuple, tuple]]:
    """Supervised sequences: each origin alone plus origin+feedback concatenations."""
    pairs = []
    for s in samples:
        pairs.append((s.origin.tokens, s.origin.tags))
        for r in s.rounds:
            pairs.append(
                (s.origin.tokens + r.text.tokens, s.origin.tags + r.text.tags)
            )
    return pairs


def pretrain_tagger(
    model: SluModel,
    samples: Sequence[MultiRoundSample],
    epochs: int,
    adam: AdamState,
    rng: np.random.Generator,
) -> list[float]:
    """Per-sequence cross-entropy steps; returns the mean loss per epoch."""
    pairs = _tagging_pairs(samples)
    losses = []
    for _ in range(epochs):
        order = rng.permutation(len(pairs))
        total = 0.0
        for i in order:
            tokens, tags = pairs[int(i)]
            named = model.tagger.named("tagger")
            names = list(named.keys())
            with GradTape() as tape:
                loss = sequence_nll(tokens, tags, model.tagger)
            grads = tape.gradients(loss, [named[n] for n in names])
            adam_step(adam, named, dict(zip(names, grads)))
            model.tagger.load_named("tagger", named)
            total += float(loss.data)
        losses.append(total / max(1, len(pairs)))
    return losses


# ---------------------------------------------------------------------------
# Evaluation


@dataclass
class RoundMetrics:
    round_index: int
    precision: float
    recall: float
    f1: float
    sentence_accuracy: float


@dataclass
class EvalReport:
    per_round: list[RoundMetrics]
    n_scored: int
    skipped: int

    def f1_at(self, round_index: int) -> float:
        return self.per_round[round_index].f1


def evaluate(
    model: SluModel,
    samples: Sequence[MultiRoundSample],
    rounds: int,
    use_feedback: bool = True,
) -> EvalReport:
    """Score per-round tables against the cumulative gold tables.

    Samples with fewer feedback rounds than requested are skipped (counted in
    the report) so every column covers the same sample set.  With
    `use_feedback` off, the opening parse is frozen and scored against each
    round's gold — the no-feedback baseline.
    """
    if not 0 <= rounds <= 4:
        raise TrainerError(f"rounds must be 0..4, got {rounds}")
    eligible = [s for s in samples if len(s.rounds) >= rounds]
    skipped = len(samples) - len(eligible)
    if not eligible:
        raise TrainerError("no sample has enough feedback rounds to evaluate")
    predictions: list[list[dict]] = [[] for _ in range(rounds + 1)]
    golds: list[list[dict]] = [[] for _ in range(rounds + 1)]
    for s in eligible:
        state, _ = start_rollout(model, s.origin.tokens)
        predictions[0].append(state.table.values_by_label())
        golds[0].append(dict(s.gold_tables[0]))
        for t in range(1, rounds + 1):
            if use_feedback:
                state, _ = feedback_rollout(
                    model, state, s.rounds[t - 1].text.tokens, SampleMode.GREEDY
                )
                predictions[t].append(state.table.values_by_label())
            else:
                predictions[t].append(predictions[0][-1])
            golds[t].append(dict(s.gold_tables[t]))
    per_round = []
    for t in range(rounds + 1):
        p, r, f1 = slot_f1(predictions[t], golds[t])
        acc = sentence_accuracy(predictions[t], golds[t])
        per_round.append(RoundMetrics(t, p, r, f1, acc))
    return EvalReport(per_round, len(eligible), skipped)


# ---------------------------------------------------------------------------
# Training loop


def train(
    samples: Sequence[MultiRoundSample],
    config: TrainConfig,
    eval_samples: Sequence[MultiRoundSample] | None = None,
    metrics_path: str | Path | None = None,
    model: SluModel | None = None,
) -> tuple[SluModel, TrainerState, list[dict]]:
    """Pretrain the tagger, then alternate reward and policy steps per batch.

    Returns the model, the trainer state, and one metrics record per epoch.
    Deterministic: a fixed seed and corpus reproduce every parameter bitwise.
    """
    if not samples:
        raise TrainerError("training corpus is empty")
    ss = np.random.SeedSequence(config.seed)
    rng_init, rng_pre, rng_order, rng_sample = [
        np.random.default_rng(c) for c in ss.spawn(4)
    ]
    if model is None:
        label_set = corpus_label_set(samples)
        vocab = corpus_vocab(samples)
        if label_set.k != config.k_labels:
            config = _replace_k(config, label_set.k)
        model = init_model(label_set, vocab, config, rng_init)
    state = make_trainer_state(config)
    metrics: list[dict] = []

    if config.epochs > 0 and config.tagger_pretrain_epochs > 0:
        pre_losses = pretrain_tagger(
            model, samples, config.tagger_pretrain_epochs, state.adam_tagger, rng_pre
        )
    else:
        pre_losses = []

    eval_set = list(eval_samples) if eval_samples else list(samples)[: config.eval_subset]
    sink = open(metrics_path, "w", encoding="utf-8") if metrics_path else None
    try:
        for epoch in range(config.epochs):
            order = rng_order.permutation(len(samples))
            epoch_expert, epoch_policy, n_batches = 0.0, 0.0, 0
            for lo in range(0, len(order), config.batch_size):
                batch_idx = [int(i) for i in order[lo : lo + config.batch_size]]
                diag = _train_batch(model, state, samples, batch_idx, config, rng_sample)
                epoch_expert += diag["mean_expert_reward"]
                epoch_policy += diag["mean_policy_reward"]
                n_batches += 1
                state.step += 1
                try:
                    assert_all_finite(model_named_tensors(model), f"(epoch {epoch}, step {state.step})")
                except NumericsError as exc:
                    raise TrainerError(
                        f"training diverged: {exc}; config={asdict(config)}"
                    ) from exc
            state.epoch = epoch + 1
            report = evaluate(model, eval_set, rounds=1, use_feedback=True)
            record = {
                "epoch": epoch,
                "pretrain_loss": pre_losses[-1] if pre_losses else None,
                "mean_expert_reward": epoch_expert / max(1, n_batches),
                "mean_policy_reward": epoch_policy / max(1, n_batches),
                "baseline": state.baseline,
                "f1_per_round": [m.f1 for m in report.per_round],
                "sentence_acc_per_round": [m.sentence_accuracy for m in report.per_round],
            }
            metrics.append(record)
            if sink:
                sink.write(json.dumps(record, sort_keys=True) + "\n")
                sink.flush()
    finally:
        if sink:
            sink.close()
    return model, state, metrics


def _replace_k(config: TrainConfig, k: int) -> TrainConfig:
    cfg = asdict(config)
    cfg["k_labels"] = k
    return TrainConfig(**cfg)


def _train_batch(
    model: SluModel,
    state: TrainerState,
    samples: Sequence[MultiRoundSample],
    batch_idx: Sequence[int],
    config: TrainConfig,
    rng: np.random.Generator,
) -> dict[str, float]:
    episodes: list[Episode] = []
    tape = GradTape()
    with tape:
        for si in batch_idx:
            sample = samples[si]
            roll, _ = start_rollout(model, sample.origin.tokens)
            for t, fb in enumerate(sample.rounds, start=1):
                roll, trace = feedback_rollout(
                    model, roll, fb.text.tokens, SampleMode.SAMPLE, rng
                )
                expert = mask_candidates(
                    trace.candidates.matrix,
                    gold_presence_mask(sample.gold_tables[t], model.label_set),
                )
                episodes.append(
                    Episode(
                        episode_id=f"sample{si}/round{t}",
                        log_prob=trace.log_prob,
                        masked_matrix=trace.masked_matrix,
                        expert_matrix=expert.matrix,
                        c_feedback=trace.c_feedback,
                    )
                )
    diag = reward_grad_step(
        [(e.expert_matrix, e.c_feedback) for e in episodes],
        [(e.masked_matrix, e.c_feedback) for e in episodes],
        model.reward,
        state.adam_reward,
    )
    for e in episodes:
        e.reward_value = float(reward(e.masked_matrix, e.c_feedback, model.reward).data)
    beta = model.policy.named("policy")
    if config.train_encoders:
        beta.update(model.enc_query.named("enc_q"))
        beta.update(model.enc_feedback.named("enc_f"))
    state.baseline, _ = policy_grad_step(
        episodes, tape, beta, state.adam_policy, state.baseline, config.baseline_decay
    )
    model.policy.load_named("policy", beta)
    if config.train_encoders:
        model.enc_query.load_named("enc_q", beta)
        model.enc_feedback.load_named("enc_f", beta)
    if not config.freeze_tagger:
        _tagger_refresh(model, state, samples, batch_idx)
    return diag


def _tagger_refresh(model, state, samples, batch_idx) -> None:
    # Optional non-frozen mode: keep supervised steps flowing during the
    # adversarial phase, one pass over the batch's sequences.
    for si in batch_idx:
        s = samples[si]
        for tokens, tags in _tagging_pairs([s]):
            named = model.tagger.named("tagger")
            names = list(named.keys())
            with GradTape() as tape:
                loss = sequence_nll(tokens, tags, model.tagger)
            grads = tape.gradients(loss, [named[n] for n in names])
            adam_step(state.adam_tagger, named, dict(zip(names, grads)))
            model.tagger.load_named("tagger", named)


# ---------------------------------------------------------------------------
# Checkpoints

_MAGIC = b"SLUCKPT1"


def save_checkpoint(path: str | Path, model: SluModel, meta: dict | None = None) -> None:
    """Versioned binary container; identical models serialize byte-identically.

    Layout: 8-byte magic, little-endian u32 header length, canonical JSON
    header (version, config echo, labels, vocab, tensor name/shape manifest,
    meta), then raw little-endian float64 payloads in manifest order.
    """
    tensors = model_named_tensors(model)
    names = sorted(tensors)
    header = {
        "version": 1,
        "config": asdict(model.config),
        "labels": list(model.label_set.labels),
        "vocab": model.vocab,
        "tensors": [{"name": n, "shape": list(tensors[n].shape)} for n in names],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(tensors[n].data, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[SluModel, dict]:
    raw = Path(path).read_bytes()
    if raw[: len(_MAGIC)] != _MAGIC:
        raise CheckpointError(f"{path}: not a model checkpoint (bad magic)")
    (hlen,) = struct.unpack_from("<I", raw, len(_MAGIC))
    start = len(_MAGIC) + 4
    try:
        header = json.loads(raw[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    if header.get("version") != 1:
        raise CheckpointError(f"{path}: unsupported version {header.get('version')!r}")
    config = TrainConfig(**header["config"])
    label_set = LabelSet(header["labels"])
    vocab = {k: int(v) for k, v in header["vocab"].items()}
    model = init_model(label_set, vocab, config, np.random.default_rng(0))
    tensors: dict[str, Tensor] = {}
    off = start + hlen
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape)
        tensors[entry["name"]] = Tensor(arr.astype(np.float64))
        off += count * 8
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    _load_all_named(model, tensors)
    return model, header.get("meta", {})
