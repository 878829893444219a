"""Model forward contracts: shapes, masking, determinism, checkpoints, grads."""

import numpy as np
import pytest

from xmodal_kws import model as mdl
from xmodal_kws.checkpoint import load_checkpoint, save_checkpoint
from xmodal_kws.dsp import MelSpectrogram
from xmodal_kws.embeddings import EmbeddingLayerTag, synth_pseudo_embedding
from xmodal_kws.errors import InvalidArgumentError, ShapeError, ValidationError
from xmodal_kws.numerics import bce_loss, grad_check


@pytest.fixture(scope="module")
def model512():
    return mdl.KwsModel(mdl.ModelConfig(text_input_width=512, rng_seed=11))


@pytest.fixture(scope="module")
def model80():
    return mdl.KwsModel(mdl.ModelConfig(text_input_width=80, rng_seed=12))


def mel_of(n_frames, seed=0):
    rng = np.random.default_rng(seed)
    return MelSpectrogram(values=rng.standard_normal((n_frames, 80)))


def emb_of(keyword, tag=EmbeddingLayerTag.E3, seed=5):
    return synth_pseudo_embedding(keyword, tag, seed)


class TestShapes:
    def test_text_encode_five_chars(self, model512):
        out = mdl.text_encode(emb_of("abcde"), model512)
        assert out.matrix.shape == (128, 5)

    def test_text_encode_e7_width(self, model80):
        out = mdl.text_encode(emb_of("on", EmbeddingLayerTag.E7), model80)
        assert out.matrix.shape == (128, 10)  # frame-aligned: 5 rows per char

    def test_width_mismatch_rejected(self, model512):
        with pytest.raises(ShapeError, match="width"):
            mdl.text_encode(emb_of("on", EmbeddingLayerTag.E7), model512)

    def test_audio_encode_halves_time(self, model512):
        out = mdl.audio_encode(mel_of(98), model512)
        assert out.matrix.shape == (128, 49)

    def test_audio_encode_single_frame(self, model512):
        assert mdl.audio_encode(mel_of(1), model512).matrix.shape == (128, 1)

    @pytest.mark.parametrize("n", [1, 2, 3, 7, 10, 55])
    def test_audio_time_is_ceil(self, model512, n):
        assert mdl.audio_encode(mel_of(n), model512).matrix.shape == (128, -(-n // 2))

    def test_score_in_unit_interval(self, model512):
        s = mdl.score_pair(mel_of(10), emb_of("one"), model512)
        assert 0.0 <= s <= 1.0


class TestAttention:
    def test_weights_rows_sum_to_one(self, model512):
        t = mdl.text_encode(emb_of("abc"), model512)
        a = mdl.audio_encode(mel_of(12, 1), model512)
        context, weights = mdl.cross_attend(t, a, model512)
        assert context.shape == (3, 128)
        assert weights.shape == (3, 6)
        np.testing.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-12)
        assert (weights >= 0.0).all()

    def test_masked_audio_positions_get_zero_weight(self, model512):
        from xmodal_kws.numerics import Tensor

        text = Tensor(np.random.default_rng(0).standard_normal((1, 3, 128)))
        audio = Tensor(np.random.default_rng(1).standard_normal((1, 6, 128)))
        mask = np.array([[True, True, True, True, False, False]])
        _, weights = mdl.cross_attend_batch(model512, text, audio, mask)
        assert (weights.data[0][:, 4:] == 0.0).all()
        np.testing.assert_allclose(weights.data[0].sum(axis=1), 1.0, atol=1e-12)

    def test_fully_masked_audio_rejected(self, model512):
        from xmodal_kws.numerics import Tensor

        text = Tensor(np.zeros((1, 2, 128)))
        audio = Tensor(np.zeros((1, 3, 128)))
        with pytest.raises(InvalidArgumentError):
            mdl.cross_attend_batch(model512, text, audio, np.zeros((1, 3), dtype=bool))


class TestDiscriminator:
    def test_zero_parameters_give_half(self):
        model = mdl.KwsModel(mdl.ModelConfig(rng_seed=0))
        for _, p in model._params.items():
            p.tensor.data = np.zeros_like(p.tensor.data)
        assert mdl.discriminate(np.random.default_rng(2).standard_normal((4, 128)), model) == 0.5

    def test_probability_range(self, model512):
        rows = np.random.default_rng(3).standard_normal((6, 128)) * 3.0
        assert 0.0 < mdl.discriminate(rows, model512) < 1.0


class TestDeterminismAndMasking:
    def test_eval_scores_deterministic(self, model512):
        mel, e = mel_of(20, 4), emb_of("tone")
        assert mdl.score_pair(mel, e, model512) == mdl.score_pair(mel, e, model512)

    def test_seed_changes_model(self):
        a = mdl.KwsModel(mdl.ModelConfig(rng_seed=1))
        b = mdl.KwsModel(mdl.ModelConfig(rng_seed=2))
        mel, e = mel_of(8, 5), emb_of("on")
        assert mdl.score_pair(mel, e, a) != mdl.score_pair(mel, e, b)

    def test_same_seed_same_model(self):
        a = mdl.KwsModel(mdl.ModelConfig(rng_seed=3))
        b = mdl.KwsModel(mdl.ModelConfig(rng_seed=3))
        mel, e = mel_of(8, 6), emb_of("on")
        assert mdl.score_pair(mel, e, a) == mdl.score_pair(mel, e, b)

    def test_right_padding_leaves_score_nearly_unchanged(self, model512):
        mel, e = mel_of(11, 7), emb_of("note")
        base = mdl.score_pair(mel, e, model512)

        mel_pad = np.zeros((1, 17, 80))
        mel_pad[0, :11] = mel.values
        mel_mask = np.arange(17)[None, :] < 11
        emb_pad = np.zeros((1, 7, 512))
        emb_pad[0, :4] = e.values
        text_mask = np.arange(7)[None, :] < 4
        padded = mdl.score_batch(model512, mel_pad, mel_mask, emb_pad, text_mask)
        assert abs(float(padded.data[0]) - base) < 1e-9

    def test_scores_invariant_to_batch_grouping(self, model512):
        # each example's eval score must not depend on what it is batched
        # with: grouping only changes the padded extent, a pure no-op
        items = [(mel_of(n, seed), emb_of(kw)) for n, seed, kw in
                 [(9, 21, "on"), (24, 22, "note"), (17, 23, "no one"),
                  (31, 24, "ten"), (12, 25, "tone")]]
        singles = [mdl.score_pair(m, e, model512) for m, e in items]

        def as_batch(subset):
            n_max = max(m.values.shape[0] for m, _ in subset)
            m_max = max(e.values.shape[0] for _, e in subset)
            mel = np.zeros((len(subset), n_max, 80))
            emb = np.zeros((len(subset), m_max, 512))
            mel_mask = np.zeros((len(subset), n_max), dtype=bool)
            text_mask = np.zeros((len(subset), m_max), dtype=bool)
            for i, (mm, ee) in enumerate(subset):
                mel[i, : mm.values.shape[0]] = mm.values
                mel_mask[i, : mm.values.shape[0]] = True
                emb[i, : ee.values.shape[0]] = ee.values
                text_mask[i, : ee.values.shape[0]] = True
            return mdl.score_batch(model512, mel, mel_mask, emb, text_mask).data

        whole = as_batch(items)
        split = np.concatenate([as_batch(items[:2]), as_batch(items[2:])])
        np.testing.assert_allclose(whole, singles, atol=1e-9)
        np.testing.assert_allclose(split, singles, atol=1e-9)

    def test_train_mode_single_example_hits_batchnorm_guard(self, model512):
        with pytest.raises(InvalidArgumentError):
            mdl.score_pair(mel_of(6, 8), emb_of("on"), model512, mode="train",
                           rng=np.random.default_rng(0))

    def test_train_mode_requires_rng(self, model512):
        with pytest.raises(InvalidArgumentError, match="rng"):
            mdl.score_pair(mel_of(6, 9), emb_of("on"), model512, mode="train")


class TestCheckpoint:
    def test_round_trip_scores_bitwise(self, tmp_path, model512):
        mel, e = mel_of(14, 10), emb_of("ten")
        before = mdl.score_pair(mel, e, model512)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model512, path)
        loaded = load_checkpoint(path)
        assert mdl.score_pair(mel, e, loaded) == before

    def test_arch_mismatch_names_constant(self, tmp_path, model80):
        path = tmp_path / "m80.ckpt"
        save_checkpoint(model80, path)
        with pytest.raises(ValidationError, match="text_input_width"):
            load_checkpoint(path, expect_arch={"text_input_width": 512})

    def test_truncated_rejected(self, tmp_path, model80):
        path = tmp_path / "t.ckpt"
        save_checkpoint(model80, path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        from xmodal_kws.errors import FormatError

        with pytest.raises(FormatError, match="truncated"):
            load_checkpoint(path)

    def test_running_stats_preserved(self, tmp_path):
        model = mdl.KwsModel(mdl.ModelConfig(rng_seed=21))
        model.bn1.running_mean = np.random.default_rng(22).standard_normal(32)
        path = tmp_path / "rs.ckpt"
        save_checkpoint(model, path)
        np.testing.assert_array_equal(load_checkpoint(path).bn1.running_mean,
                                      model.bn1.running_mean)


class TestComposedGradients:
    def test_sampled_coordinates_match_fd(self):
        model = mdl.KwsModel(mdl.ModelConfig(text_input_width=512, rng_seed=31))
        mel, e = mel_of(4, 30), emb_of("abc")

        def forward():
            return bce_loss(
                mdl.score_pair_graph(mel, e, model, mode="eval"), np.asarray(1.0)
            )

        report = grad_check(forward, model.parameters(), max_coords_per_tensor=2,
                            rng_seed=0)
        assert report.passed, sorted(report.per_param.items(), key=lambda kv: -kv[1])[:5]
