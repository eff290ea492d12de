"""IOB tagger and the slot candidate matrix."""

import numpy as np
import pytest

from multislu.corpus import IobValidationError, LabelSet, validate_iob
from multislu.numerics import Tensor, grad_check, tsum
from multislu.tagger import (
    SlotSpan,
    TaggerInputError,
    build_slot_candidates,
    decode_tags,
    init_tagger_params,
    sequence_nll,
    tag_tokens,
    take_cols,
    token_embeddings,
)

VOCAB = {
    w: i
    for i, w in enumerate(
        ["<unk>", "flights", "from", "boston", "to", "denver", "round", "trip"]
    )
}
LABELS = LabelSet(["fromloc", "toloc", "flight_type"])


@pytest.fixture
def params():
    return init_tagger_params(
        VOCAB, LABELS, m=5, hidden=4, rng=np.random.default_rng(8), attn_dim=3
    )


class TestTagDistributions:
    def test_rows_are_distributions(self, params):
        probs = tag_tokens(["flights", "from", "boston", "to", "denver"], params)
        assert probs.shape == (5, len(LABELS.iob_tags()))
        assert np.all(probs >= 0.0)
        assert np.max(np.abs(probs.sum(axis=1) - 1.0)) < 1e-9

    def test_zeroed_output_layer_gives_uniform(self, params):
        params.out_w = Tensor(np.zeros_like(params.out_w.data))
        params.out_b = Tensor(np.zeros_like(params.out_b.data))
        probs = tag_tokens(["flights", "from"], params)
        n_tags = len(LABELS.iob_tags())
        assert np.max(np.abs(probs - 1.0 / n_tags)) < 1e-12

    def test_deterministic(self, params):
        tokens = ["from", "boston", "to", "denver"]
        assert np.array_equal(tag_tokens(tokens, params), tag_tokens(tokens, params))


class TestDecode:
    def test_output_is_always_valid_iob(self, params):
        rng = np.random.default_rng(0)
        words = list(VOCAB)
        for _ in range(25):
            tokens = [words[i] for i in rng.integers(0, len(words), size=rng.integers(1, 9))]
            assert validate_iob(decode_tags(tokens, params), LABELS) == []

    def test_orphan_continuation_repaired_to_begin(self, params):
        # Bias the output layer so argmax is I-fromloc everywhere: the first
        # position must be rewritten to B-fromloc, the rest may continue.
        i_idx = LABELS.iob_tags().index("I-fromloc")
        b = np.zeros_like(params.out_b.data)
        b[i_idx] = 50.0
        params.out_w = Tensor(np.zeros_like(params.out_w.data))
        params.out_b = Tensor(b)
        tags = decode_tags(["flights", "from", "boston"], params)
        assert tags == ["B-fromloc", "I-fromloc", "I-fromloc"]


class TestSequenceNll:
    def test_matches_probabilities(self, params):
        tokens = ["flights", "from", "boston"]
        gold = ["O", "O", "B-fromloc"]
        probs = tag_tokens(tokens, params)
        alphabet = LABELS.iob_tags()
        manual = -np.mean(
            [np.log(probs[i, alphabet.index(t)]) for i, t in enumerate(gold)]
        )
        assert sequence_nll(tokens, gold, params).item() == pytest.approx(manual, abs=1e-12)

    def test_length_mismatch_rejected(self, params):
        with pytest.raises(TaggerInputError):
            sequence_nll(["flights"], ["O", "O"], params)

    def test_take_cols_values_and_gradient(self, rng):
        m = Tensor(rng.normal(size=(3, 4)))
        cols = [2, 0, 3]
        out = take_cols(m, cols)
        assert np.array_equal(out.data, m.data[np.arange(3), cols])
        res = grad_check(lambda p: tsum(take_cols(p["m"], cols)), {"m": m})
        assert res.max_rel_err < 1e-6


class TestCandidateMatrix:
    def test_mean_pooling_matches_manual(self):
        emb = np.arange(20, dtype=np.float64).reshape(5, 4)
        tokens = ["from", "boston", "to", "round", "trip"]
        tags = ["O", "B-fromloc", "O", "B-flight_type", "I-flight_type"]
        cand = build_slot_candidates(tokens, tags, emb, LABELS)
        assert np.array_equal(cand.matrix[LABELS.index("fromloc")], emb[1])
        assert np.array_equal(
            cand.matrix[LABELS.index("flight_type")], emb[3:5].mean(axis=0)
        )

    def test_absent_labels_keep_exact_zero_rows(self):
        emb = np.ones((2, 4))
        cand = build_slot_candidates(["from", "boston"], ["O", "B-fromloc"], emb, LABELS)
        assert np.all(cand.matrix[LABELS.index("toloc")] == 0.0)
        assert np.all(cand.matrix[LABELS.index("flight_type")] == 0.0)
        assert "toloc" not in cand.provenance

    def test_repeated_label_pools_all_spans_and_last_value_wins(self):
        emb = np.arange(12, dtype=np.float64).reshape(3, 4)
        tokens = ["boston", "then", "denver"]
        tags = ["B-toloc", "O", "B-toloc"]
        cand = build_slot_candidates(tokens, tags, emb, LABELS)
        assert np.array_equal(
            cand.matrix[LABELS.index("toloc")], emb[[0, 2]].mean(axis=0)
        )
        assert cand.value_for("toloc") == "denver"
        assert cand.provenance["toloc"] == [
            SlotSpan(0, 1, "boston"),
            SlotSpan(2, 3, "denver"),
        ]

    def test_labels_outside_the_set_are_skipped(self):
        emb = np.ones((2, 4))
        cand = build_slot_candidates(["x", "y"], ["B-meal", "O"], emb, LABELS)
        assert np.all(cand.matrix == 0.0)
        assert cand.provenance == {}

    def test_invalid_iob_rejected(self):
        with pytest.raises(IobValidationError):
            build_slot_candidates(["x"], ["I-toloc"], np.ones((1, 4)), LABELS)

    def test_shape_mismatches_rejected(self):
        with pytest.raises(TaggerInputError):
            build_slot_candidates(["x", "y"], ["O"], np.ones((2, 4)), LABELS)
        with pytest.raises(TaggerInputError):
            build_slot_candidates(["x"], ["O"], np.ones((2, 4)), LABELS)


class TestTokenEmbeddings:
    def test_returns_embedding_rows(self, params):
        emb = token_embeddings(["flights", "boston"], params)
        assert np.array_equal(emb[0], params.embedding.data[VOCAB["flights"]])
        assert np.array_equal(emb[1], params.embedding.data[VOCAB["boston"]])

    def test_result_is_a_private_copy(self, params):
        emb = token_embeddings(["flights"], params)
        emb[0, 0] = 1e9
        assert params.embedding.data[VOCAB["flights"], 0] != 1e9

    def test_unknown_token_maps_to_unk_row(self, params):
        emb = token_embeddings(["zzz"], params)
        assert np.array_equal(emb[0], params.embedding.data[VOCAB["<unk>"]])


class TestNamedParams:
    def test_named_load_round_trip(self, params):
        tensors = params.named("tagger")
        clone = init_tagger_params(
            VOCAB, LABELS, m=5, hidden=4, rng=np.random.default_rng(77), attn_dim=3
        )
        clone.load_named("tagger", {k: Tensor(v.data) for k, v in tensors.items()})
        tokens = ["from", "boston"]
        assert np.array_equal(tag_tokens(tokens, clone), tag_tokens(tokens, params))
