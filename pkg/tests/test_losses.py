import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from losslab.errors import (
    InvalidConfig,
    InvalidEpsilon,
    InvalidMargin,
    NoNegatives,
    NoPositives,
)
from losslab.geometry import ClassWeightMatrix, EmbeddingBatch, similarity_matrix
from losslab.losses import (
    MarginConfig,
    PairSet,
    cosine_softmax_loss,
    derive_unified_scale,
    extract_pairs,
    mixface_loss,
    n_pair_loss,
    sn_pair_loss,
    sn_pair_loss_softmax_form,
    softmax_loss,
)
from losslab.losses import _pair_softmax_terms


def random_batch(rng, n=8, d=4, c=3):
    return (
        EmbeddingBatch(rng.standard_normal((n, d)), rng.integers(0, c, n)),
        ClassWeightMatrix(rng.standard_normal((c, d))),
    )


class TestSoftmaxLoss:
    def test_uniform_logits_give_log_c(self):
        # x orthogonal to every weight row -> all logits zero -> log(4)
        batch = EmbeddingBatch(np.array([[1.0, 0.0, 0.0]]), np.array([0]))
        weights = ClassWeightMatrix(
            np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 1.0], [0.0, -1.0, 1.0]])
        )
        assert softmax_loss(batch, weights) == pytest.approx(math.log(4.0), abs=1e-12)

    def test_two_class_scalar(self):
        # target logit 5, other 0 -> log(1 + e^-5)
        batch = EmbeddingBatch(np.array([[5.0, 0.0]]), np.array([0]))
        weights = ClassWeightMatrix(np.array([[1.0, 0.0], [0.0, 1.0]]))
        assert softmax_loss(batch, weights) == pytest.approx(0.006715348489118068, rel=1e-12)

    def test_duplicate_samples_mean(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(4)
        weights = ClassWeightMatrix(rng.standard_normal((3, 4)))
        one = softmax_loss(EmbeddingBatch(x[None, :], np.array([1])), weights)
        two = softmax_loss(EmbeddingBatch(np.stack([x, x]), np.array([1, 1])), weights)
        assert two == pytest.approx(one, abs=1e-15)


class TestCosineSoftmaxLoss:
    def test_margin_zero_reduction(self):
        rng = np.random.default_rng(1)
        batch, weights = random_batch(rng)
        base = cosine_softmax_loss(batch, weights, 16.0, 0.0, "none")
        for kind in ("additive_cosine", "additive_angle"):
            assert cosine_softmax_loss(batch, weights, 16.0, 0.0, kind) == pytest.approx(
                base, abs=1e-9
            )

    def test_separated_two_class_scalar(self):
        # cos(target)=1, cos(other)=0, s=16 -> log(1 + e^-16)
        batch = EmbeddingBatch(np.array([[2.0, 0.0]]), np.array([0]))
        weights = ClassWeightMatrix(np.array([[3.0, 0.0], [0.0, 1.0]]))
        loss = cosine_softmax_loss(batch, weights, 16.0, 0.0, "none")
        assert loss == pytest.approx(1.1253516838717682e-07, rel=1e-9)

    def test_angle_margin_through_clamp(self):
        # cos(target)=1 clamps; oracle: log(1 + exp(-16 cos(acos(1-1e-7)+0.25)))
        batch = EmbeddingBatch(np.array([[2.0, 0.0]]), np.array([0]))
        weights = ClassWeightMatrix(np.array([[3.0, 0.0], [0.0, 1.0]]))
        loss = cosine_softmax_loss(batch, weights, 16.0, 0.25, "additive_angle")
        assert loss == pytest.approx(1.8538575674591466e-07, rel=1e-9)

    def test_angle_margin_domain(self):
        rng = np.random.default_rng(2)
        batch, weights = random_batch(rng)
        with pytest.raises(InvalidMargin):
            cosine_softmax_loss(batch, weights, 16.0, math.pi / 2, "additive_angle")

    def test_margin_monotonicity(self):
        from losslab.geometry import cosine_matrix, safe_arccos

        # embeddings near their class weights so every target angle is < pi/2
        rng = np.random.default_rng(3)
        w = rng.standard_normal((4, 5))
        labels = rng.integers(0, 4, 6)
        x = w[labels] + 0.2 * rng.standard_normal((6, 5))
        batch, weights = EmbeddingBatch(x, labels), ClassWeightMatrix(w)
        target = cosine_matrix(batch, weights)[np.arange(batch.n), batch.labels]
        max_theta = float(np.max(safe_arccos(target)))
        assert max_theta < math.pi / 2
        margins = np.linspace(0.0, math.pi / 2 - max_theta - 1e-6, 12)
        vals = [cosine_softmax_loss(batch, weights, 16.0, m, "additive_angle") for m in margins]
        assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))

    def test_permutation_invariance(self):
        rng = np.random.default_rng(4)
        batch, weights = random_batch(rng, n=10)
        perm = rng.permutation(10)
        shuffled = EmbeddingBatch(batch.vectors[perm], batch.labels[perm])
        for kind in ("none", "additive_cosine", "additive_angle"):
            a = cosine_softmax_loss(batch, weights, 16.0, 0.2, kind)
            b = cosine_softmax_loss(shuffled, weights, 16.0, 0.2, kind)
            assert b == pytest.approx(a, abs=1e-12)


class TestExtractPairs:
    def test_three_sample_enumeration(self):
        rng = np.random.default_rng(5)
        batch = EmbeddingBatch(rng.standard_normal((3, 4)), np.array([0, 0, 1]))
        sim = similarity_matrix(batch)
        pairs = extract_pairs(sim, batch.labels)
        assert pairs.k == 1 and pairs.l == 2
        assert pairs.positives[0] == sim.values[0, 1]
        np.testing.assert_array_equal(np.sort(pairs.negatives), np.sort(sim.values[[0, 1], [2, 2]]))

    def test_all_same_labels(self):
        rng = np.random.default_rng(6)
        batch = EmbeddingBatch(rng.standard_normal((4, 3)), np.zeros(4, dtype=int))
        pairs = extract_pairs(similarity_matrix(batch), batch.labels)
        assert pairs.k == 6 and pairs.l == 0

    def test_all_distinct_labels(self):
        rng = np.random.default_rng(7)
        batch = EmbeddingBatch(rng.standard_normal((5, 3)), np.arange(5))
        pairs = extract_pairs(similarity_matrix(batch), batch.labels)
        assert pairs.k == 0 and pairs.l == 10

    def test_count_identity(self):
        rng = np.random.default_rng(8)
        for n in (2, 5, 9):
            batch = EmbeddingBatch(rng.standard_normal((n, 4)), rng.integers(0, 3, n))
            pairs = extract_pairs(similarity_matrix(batch), batch.labels)
            assert pairs.k + pairs.l == n * (n - 1) // 2


class TestSnPairLoss:
    def test_single_pair_scalar(self):
        # K=1, L=1, cos_p=1, cos_n=0, s2=1 -> log(1 + e^-1)
        pairs = PairSet(np.array([1.0]), np.array([0.0]))
        assert sn_pair_loss(pairs, 1.0) == pytest.approx(0.31326168751822286, rel=1e-12)

    def test_indistinguishable_pair_is_log2(self):
        for s2 in (0.5, 1.0, 16.0, 64.0):
            pairs = PairSet(np.array([0.3]), np.array([0.3]))
            assert sn_pair_loss(pairs, s2) == pytest.approx(math.log(2.0), rel=1e-12)

    def test_empty_sides_rejected(self):
        with pytest.raises(NoPositives):
            sn_pair_loss(PairSet(np.array([]), np.array([0.1])), 16.0)
        with pytest.raises(NoNegatives):
            sn_pair_loss(PairSet(np.array([0.1]), np.array([])), 16.0)

    def test_two_forms_agree_against_naive_oracle(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            k, l = rng.integers(1, 8), rng.integers(1, 12)
            pairs = PairSet(rng.uniform(-1, 1, k), rng.uniform(-1, 1, l))
            s2 = rng.uniform(0.5, 40.0)
            # naive double loop, written from the definition
            total = 0.0
            for p in pairs.positives:
                inner = sum(math.exp(s2 * n - s2 * p) for n in pairs.negatives)
                total += math.log(1.0 + inner)
            naive = total / k
            assert sn_pair_loss(pairs, s2) == pytest.approx(naive, rel=1e-12)
            assert sn_pair_loss_softmax_form(pairs, s2) == pytest.approx(naive, rel=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(
        st.lists(st.floats(-1, 1), min_size=1, max_size=10),
        st.lists(st.floats(-1, 1), min_size=1, max_size=20),
        st.floats(0.1, 64.0),
    )
    def test_two_form_identity_property(self, pos, neg, s2):
        pairs = PairSet(np.array(pos), np.array(neg))
        a = sn_pair_loss(pairs, s2)
        b = sn_pair_loss_softmax_form(pairs, s2)
        assert abs(a - b) < 1e-9

    def test_rescaling_invariance(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((8, 5))
        labels = rng.integers(0, 3, 8)
        scales = rng.uniform(0.2, 30.0, 8)[:, None]
        a = EmbeddingBatch(x, labels)
        b = EmbeddingBatch(x * scales, labels)
        la = sn_pair_loss(extract_pairs(similarity_matrix(a), labels), 16.0)
        lb = sn_pair_loss(extract_pairs(similarity_matrix(b), labels), 16.0)
        assert abs(la - lb) < 1e-9


class TestNPairLoss:
    def test_pair_term_scalar(self):
        # functional form: positive product 1, negative product 0 -> log(1+e^-1)
        terms = _pair_softmax_terms(np.array([1.0]), np.array([0.0]))
        assert terms[0] == pytest.approx(0.31326168751822286, rel=1e-12)

    def test_equal_products_exceed_log2(self):
        # one positive, two negatives all at the same product value
        batch = EmbeddingBatch(
            np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 0.0]]), np.array([0, 0, 1])
        )
        # products: pos (0,1)=1; negs (0,2)=(1,2)=0 -> log(1 + 2 e^-1)
        assert n_pair_loss(batch) == pytest.approx(math.log(1.0 + 2.0 * math.exp(-1.0)), rel=1e-12)

    def test_positive_equals_negative_is_log2(self):
        batch = EmbeddingBatch(
            np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]), np.array([0, 0, 1])
        )
        # products: pos (0,1)=0; negs (0,2)=0, (1,2)=1 -> not log2; build a cleaner case
        pairs = _pair_softmax_terms(np.array([0.7]), np.array([0.7]))
        assert pairs[0] == pytest.approx(math.log(2.0), rel=1e-12)

    def test_scaling_changes_npair_not_snpair(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((6, 4))
        labels = np.array([0, 0, 1, 1, 2, 2])
        a = EmbeddingBatch(x, labels)
        b = EmbeddingBatch(2.0 * x, labels)
        assert n_pair_loss(a) != pytest.approx(n_pair_loss(b), abs=1e-6)
        sa = sn_pair_loss(extract_pairs(similarity_matrix(a), labels), 16.0)
        sb = sn_pair_loss(extract_pairs(similarity_matrix(b), labels), 16.0)
        assert abs(sa - sb) < 1e-9

    def test_no_pairs_errors(self):
        rng = np.random.default_rng(12)
        with pytest.raises(NoNegatives):
            n_pair_loss(EmbeddingBatch(rng.standard_normal((3, 4)), np.zeros(3, dtype=int)))
        with pytest.raises(NoPositives):
            n_pair_loss(EmbeddingBatch(rng.standard_normal((3, 4)), np.arange(3)))


class TestMixFace:
    def test_sum_of_parts_bit_identical(self):
        rng = np.random.default_rng(13)
        batch, weights = random_batch(rng, n=10, d=6, c=4)
        cfg = MarginConfig(s1=16.0, s2=16.0, m=0.25)
        arc = cosine_softmax_loss(batch, weights, cfg.s1, cfg.m, "additive_angle")
        sn = sn_pair_loss(extract_pairs(similarity_matrix(batch), batch.labels), cfg.s2)
        assert mixface_loss(batch, weights, cfg) == arc + sn

    def test_all_positive_batch_errors(self):
        rng = np.random.default_rng(14)
        batch = EmbeddingBatch(rng.standard_normal((4, 5)), np.zeros(4, dtype=int))
        weights = ClassWeightMatrix(rng.standard_normal((3, 5)))
        with pytest.raises(NoNegatives):
            mixface_loss(batch, weights, MarginConfig())

    def test_matches_independent_reimplementation(self):
        # from-scratch oracle: explicit loops, margin via plain math calls
        rng = np.random.default_rng(42)
        n, c, d = 8, 3, 4
        x = rng.standard_normal((n, d))
        labels = rng.integers(0, c, n)
        w = rng.standard_normal((c, d))
        s1 = s2 = 16.0
        m = 0.25
        delta = 1e-7

        def cos(u, v):
            return float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))

        arc_total = 0.0
        for i in range(n):
            logits = []
            for j in range(c):
                cij = max(-1.0, min(1.0, cos(x[i], w[j])))
                if j == labels[i]:
                    theta = math.acos(max(-1.0 + delta, min(1.0 - delta, cij)))
                    logits.append(s1 * math.cos(theta + m))
                else:
                    logits.append(s1 * cij)
            target = logits[labels[i]]
            arc_total += math.log(sum(math.exp(z - target) for z in logits))
        arc_oracle = arc_total / n

        pos, neg = [], []
        for i in range(n):
            for j in range(i + 1, n):
                (pos if labels[i] == labels[j] else neg).append(
                    max(-1.0, min(1.0, cos(x[i], x[j])))
                )
        sn_total = 0.0
        for p in pos:
            sn_total += math.log(1.0 + sum(math.exp(s2 * q - s2 * p) for q in neg))
        sn_oracle = sn_total / len(pos)

        batch = EmbeddingBatch(x, labels)
        weights = ClassWeightMatrix(w)
        got = mixface_loss(batch, weights, MarginConfig(s1=s1, s2=s2, m=m))
        assert got == pytest.approx(arc_oracle + sn_oracle, rel=1e-10)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(15)
        batch, weights = random_batch(rng, n=9, d=5, c=3)
        perm = rng.permutation(9)
        shuffled = EmbeddingBatch(batch.vectors[perm], batch.labels[perm])
        cfg = MarginConfig()
        assert mixface_loss(shuffled, weights, cfg) == pytest.approx(
            mixface_loss(batch, weights, cfg), abs=1e-12
        )


class TestDeriveUnifiedScale:
    def test_reference_operating_point(self):
        scale = derive_unified_scale(1e-2, 370, 130816, 0.25)
        assert scale.derived_s1 == pytest.approx(10.84, abs=0.01)
        assert scale.derived_s2 == pytest.approx(16.37, abs=0.01)

    def test_tiny_epsilon(self):
        scale = derive_unified_scale(1e-22, 370, 130816, 0.25)
        assert scale.derived_s2 == pytest.approx(62.43, abs=0.01)
        # exact evaluation of the closed form; see the acceptance notes on 58.38
        assert scale.derived_s1 == pytest.approx(58.382644, abs=1e-4)

    def test_degenerate_point_is_zero(self):
        scale = derive_unified_scale(0.5, 2, 1, 0.0)
        assert scale.derived_s1 == pytest.approx(0.0, abs=1e-12)
        assert scale.derived_s2 == pytest.approx(0.0, abs=1e-12)

    def test_domain_errors(self):
        with pytest.raises(InvalidEpsilon):
            derive_unified_scale(0.51, 370, 130816, 0.25)
        with pytest.raises(InvalidEpsilon):
            derive_unified_scale(0.0, 370, 130816, 0.25)
        with pytest.raises(InvalidMargin):
            derive_unified_scale(1e-2, 370, 130816, math.pi / 2)
        with pytest.raises(InvalidConfig):
            derive_unified_scale(1e-2, 1, 130816, 0.25)
        with pytest.raises(InvalidConfig):
            derive_unified_scale(1e-2, 370, 0.5, 0.25)

    @settings(max_examples=80, deadline=None)
    @given(
        st.floats(1e-30, 0.499),
        st.integers(2, 100_000),
        st.integers(1, 10_000_000),
        st.floats(0.0, 1.5),
    )
    def test_round_trip_property(self, eps, c, l, m):
        scale = derive_unified_scale(eps, c, l, m)
        e1, e2 = scale.round_trip_errors()
        assert max(e1, e2) < 1e-9
