"""Token uniformization, variant selection, and sample assembly."""

from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccmt.errors import ValidationError
from ccmt.model import CCMTConfig
from ccmt.tokens import (
    Modality,
    ModalityTokens,
    SampleRecord,
    assemble,
    mix_seed,
    select_variant,
    uniformize,
)


def id_tokens(n, modality=Modality.TEXT_ORIGINAL, class_index=0):
    """Rows identifiable by their first column value."""
    tokens = np.zeros((n, 2))
    tokens[:, 0] = np.arange(n)
    if modality == Modality.AUDIO:
        class_index = None
    return ModalityTokens(modality_id=modality, tokens=tokens, class_index=class_index)


class TestModalityTokens:
    def test_text_requires_class_token(self):
        with pytest.raises(ValidationError, match="class token"):
            ModalityTokens(Modality.TEXT_ORIGINAL, np.zeros((3, 2)), None)

    def test_audio_rejects_class_token(self):
        with pytest.raises(ValidationError, match="AUDIO"):
            ModalityTokens(Modality.AUDIO, np.zeros((3, 2)), 0)

    def test_class_index_in_range(self):
        with pytest.raises(ValidationError):
            ModalityTokens(Modality.TEXT_ORIGINAL, np.zeros((3, 2)), 3)

    def test_needs_rows(self):
        with pytest.raises(ValidationError):
            ModalityTokens(Modality.AUDIO, np.zeros((0, 2)), None)


class TestUniformize:
    def test_identity_when_equal_no_class(self):
        m = id_tokens(5, Modality.AUDIO)
        out = uniformize(m, 5, rng_seed=0)
        assert np.array_equal(out, m.tokens)

    def test_duplication_keeps_class_at_row0(self):
        m = id_tokens(3, class_index=0)
        out = uniformize(m, 5, rng_seed=1)
        assert out.shape == (5, 2)
        assert out[0, 0] == 0
        assert set(out[:, 0]).issubset({0.0, 1.0, 2.0})

    def test_class_moved_to_row0_from_middle(self):
        m = id_tokens(6, class_index=4)
        out = uniformize(m, 4, rng_seed=3)
        assert out[0, 0] == 4
        rest = out[1:, 0]
        assert np.array_equal(rest, np.sort(rest))  # ascending original order
        assert 4 not in rest

    def test_sample_without_replacement(self):
        m = id_tokens(10, class_index=2)
        out = uniformize(m, 6, rng_seed=5)
        ids = out[:, 0].astype(int)
        assert len(set(ids)) == 6  # no duplicates when n > k

    def test_deterministic(self):
        m = id_tokens(50, class_index=7)
        a = uniformize(m, 10, rng_seed=9)
        b = uniformize(m, 10, rng_seed=9)
        assert np.array_equal(a, b)

    def test_seed_changes_selection(self):
        m = id_tokens(50, class_index=7)
        a = uniformize(m, 10, rng_seed=1)
        b = uniformize(m, 10, rng_seed=2)
        assert not np.array_equal(a, b)

    def test_k_validation(self):
        with pytest.raises(ValidationError):
            uniformize(id_tokens(3), 0, rng_seed=0)

    def test_output_dtype_is_float64(self):
        m = ModalityTokens(Modality.AUDIO, np.ones((4, 2), dtype=np.float32), None)
        assert uniformize(m, 4, rng_seed=0).dtype == np.float64

    def test_monte_carlo_uniformity(self):
        # Small-scale analog of the acceptance check: inclusion probability
        # of each non-class row is (k-1)/(n-1).
        n, k, trials = 50, 10, 4000
        m = id_tokens(n, class_index=0)
        counts = Counter()
        for t in range(trials):
            out = uniformize(m, k, rng_seed=t)
            assert out[0, 0] == 0
            counts.update(out[1:, 0].astype(int).tolist())
        target = (k - 1) / (n - 1)
        freqs = np.array([counts[i] / trials for i in range(1, n)])
        assert np.abs(freqs - target).max() < 0.03

    @given(
        n=st.integers(1, 40),
        k=st.integers(1, 40),
        has_class=st.booleans(),
        seed=st.integers(0, 2**32 - 1),
    )
    @settings(max_examples=60)
    def test_properties(self, n, k, has_class, seed):
        if has_class:
            ci = seed % n
            m = ModalityTokens(Modality.TEXT_ORIGINAL, id_tokens(n).tokens, ci)
        else:
            m = ModalityTokens(Modality.AUDIO, id_tokens(n).tokens, None)
        out = uniformize(m, k, rng_seed=seed)
        assert out.shape == (k, 2)
        # every output row is one of the input rows (duplication never invents)
        assert set(out[:, 0].astype(int)).issubset(set(range(n)))
        if has_class:
            assert out[0, 0] == m.class_index
        if n >= k and not has_class:
            assert len(set(out[:, 0].astype(int))) == k


class TestSelectVariant:
    def variants(self, n=3):
        return [id_tokens(4 + i, Modality.AUDIO) for i in range(n)]

    def test_single_variant_any_mode(self):
        vs = self.variants(1)
        assert select_variant(vs, "random", 0) is vs[0]
        assert select_variant(vs, 0, 0) is vs[0]

    def test_fixed_deterministic(self):
        vs = self.variants()
        assert select_variant(vs, 1, 123) is select_variant(vs, 1, 456)

    def test_fixed_out_of_range(self):
        with pytest.raises(ValidationError):
            select_variant(self.variants(), 3, 0)

    def test_empty(self):
        with pytest.raises(ValidationError):
            select_variant([], "random", 0)

    def test_random_uniform(self):
        vs = self.variants(3)
        counts = Counter()
        for t in range(9000):
            chosen = select_variant(vs, "random", t)
            counts[next(i for i, v in enumerate(vs) if v is chosen)] += 1
        for i in range(3):
            assert abs(counts[i] - 3000) <= 150


def make_record(sample_id=0, label=1, n_by_modality=(12, 9, 15), variants=1, d=4, seed=0):
    rng = np.random.default_rng(seed)
    modalities = {}
    for m, n in zip(Modality, n_by_modality):
        vs = []
        for _ in range(variants):
            ci = None if m == Modality.AUDIO else int(rng.integers(0, n))
            vs.append(ModalityTokens(m, rng.normal(size=(n, d)), ci))
        modalities[m] = vs
    return SampleRecord(sample_id=sample_id, label=label, modalities=modalities)


class TestAssemble:
    cfg = CCMTConfig(num_classes=2, k=6, d=4, d_h=4, heads=1, l1=1, l2=1)

    def test_eval_deterministic(self):
        rec = make_record()
        a = assemble(rec, self.cfg, rng_seed=5, eval_mode=True)
        b = assemble(rec, self.cfg, rng_seed=5, eval_mode=True)
        for x, y in zip(a.matrices(), b.matrices()):
            assert np.array_equal(x, y)

    def test_shapes(self):
        out = assemble(make_record(), self.cfg, rng_seed=0, eval_mode=False)
        for mat in out.matrices():
            assert mat.shape == (6, 4)
        assert out.label == 1
        assert out.sample_id == 0

    def test_missing_modality_named(self):
        rec = make_record()
        del rec.modalities[Modality.AUDIO]
        with pytest.raises(ValidationError, match="AUDIO"):
            assemble(rec, self.cfg, rng_seed=0, eval_mode=False)

    def test_epoch_reseeding_changes_rows(self):
        rec = make_record(n_by_modality=(40, 40, 40))
        a = assemble(rec, self.cfg, rng_seed=mix_seed(0, 0), eval_mode=False)
        b = assemble(rec, self.cfg, rng_seed=mix_seed(0, 1), eval_mode=False)
        assert not np.array_equal(a.text_original, b.text_original)

    def test_eval_uses_variant_zero(self):
        rec = make_record(variants=3)
        out = assemble(rec, self.cfg, rng_seed=99, eval_mode=True)
        expected = assemble(
            SampleRecord(
                rec.sample_id,
                rec.label,
                {m: [rec.modalities[m][0]] for m in Modality},
            ),
            self.cfg,
            rng_seed=99,
            eval_mode=True,
        )
        for x, y in zip(out.matrices(), expected.matrices()):
            assert np.array_equal(x, y)

    def test_training_variant_selection_varies(self):
        rec = make_record(variants=3, n_by_modality=(6, 6, 6))
        seen = set()
        for s in range(30):
            out = assemble(rec, self.cfg, rng_seed=s, eval_mode=False)
            seen.add(out.text_original.tobytes())
        assert len(seen) > 1

    def test_class_token_always_row0(self):
        rec = make_record(n_by_modality=(20, 3, 8))
        out = assemble(rec, self.cfg, rng_seed=4, eval_mode=False)
        for m in (Modality.TEXT_ORIGINAL, Modality.TEXT_TRANSLATED):
            mt = rec.modalities[m][0]
            class_row = mt.tokens[mt.class_index]
            assert np.allclose(out.matrix(m)[0], class_row)


class TestMixSeed:
    def test_deterministic(self):
        assert mix_seed(1, 2, 3) == mix_seed(1, 2, 3)

    def test_order_sensitive(self):
        assert mix_seed(1, 2) != mix_seed(2, 1)

    def test_distinct_parts_differ(self):
        seeds = {mix_seed(i, j) for i in range(20) for j in range(20)}
        assert len(seeds) == 400

    def test_64_bit_range(self):
        s = mix_seed(2**63, 2**64 - 1, 0)
        assert 0 <= s < 2**64
