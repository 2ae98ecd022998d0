"""Encoder, receptive-field block, decoder, ablations, checkpoints."""

import numpy as np
import pytest

from fusionbank.errors import ConfigurationError, ContractError, DimensionError
from fusionbank.network import (
    AblationFlags,
    Encoder,
    EncoderConfig,
    ReceptiveFieldBlock,
    SaliencyModel,
    load_checkpoint,
    save_checkpoint,
)
from fusionbank.tensor import Tensor

from oracles import rfb_oracle

TINY = EncoderConfig(input_size=32, channels=(2, 3, 4, 5), decoder_width=4)


def images(rng, b=1, size=32):
    return (Tensor(rng.uniform(size=(b, 3, size, size))),
            Tensor(rng.uniform(size=(b, 3, size, size))))


class TestEncoder:
    def test_level_extents_follow_strides(self):
        cfg = EncoderConfig(input_size=64)
        enc = Encoder(cfg, np.random.default_rng(0))
        rgb, aux = images(np.random.default_rng(1), size=64)
        feats = enc(rgb, aux)
        assert [feats[i].f_r.shape[2] for i in (2, 3, 4, 5)] == [16, 8, 4, 2]
        assert [feats[i].f_r.shape[1] for i in (2, 3, 4, 5)] == [16, 32, 64, 128]

    def test_identical_streams_give_identical_features(self):
        enc = Encoder(TINY, np.random.default_rng(2))
        for (name_r, p_r), (name_a, p_a) in zip(enc.rgb.named_parameters(),
                                                enc.aux.named_parameters()):
            p_a.data = p_r.data.copy()
        rng = np.random.default_rng(3)
        rgb = Tensor(rng.uniform(size=(1, 3, 32, 32)))
        feats = enc(rgb, Tensor(rgb.data.copy()))
        for i in (2, 3, 4, 5):
            np.testing.assert_array_equal(feats[i].f_r.data, feats[i].f_aux.data)

    def test_zero_input_zero_bias_gives_zero_features(self):
        enc = Encoder(TINY, np.random.default_rng(4))  # biases init to zero
        zero = Tensor(np.zeros((1, 3, 32, 32)))
        feats = enc(zero, Tensor(np.zeros((1, 3, 32, 32))))
        for i in (2, 3, 4, 5):
            assert np.all(feats[i].f_cat.data == 0.0)

    def test_wrong_input_size_rejected(self):
        enc = Encoder(TINY, np.random.default_rng(5))
        rgb, aux = images(np.random.default_rng(6), size=64)
        with pytest.raises(DimensionError):
            enc(rgb, aux)

    def test_input_size_must_divide_32(self):
        with pytest.raises(ConfigurationError):
            EncoderConfig(input_size=48)


class TestReceptiveFieldBlock:
    def test_zero_input_gives_zero_output(self):
        rfb = ReceptiveFieldBlock(4, 3, np.random.default_rng(7))
        out = rfb(Tensor(np.zeros((1, 4, 6, 6))))
        assert np.all(out.data == 0.0)

    def test_output_shape(self):
        rfb = ReceptiveFieldBlock(6, 5, np.random.default_rng(8))
        out = rfb(Tensor(np.random.default_rng(9).uniform(size=(2, 6, 8, 8))))
        assert out.shape == (2, 5, 8, 8)

    def test_matches_composed_oracle(self):
        rfb = ReceptiveFieldBlock(4, 3, np.random.default_rng(10))
        x = np.random.default_rng(11).uniform(-1, 1, size=(1, 4, 6, 6))
        params = {
            name: (getattr(rfb, name).conv.weights.data, getattr(rfb, name).conv.bias.data)
            for name in ("branch1", "branch3_1", "branch3_3", "branch3_5")
        }
        params["project"] = (rfb.project.weights.data, rfb.project.bias.data)
        params["shortcut"] = (rfb.shortcut.weights.data, rfb.shortcut.bias.data)
        want = rfb_oracle(x, params)
        np.testing.assert_allclose(rfb(Tensor(x)).data, want, atol=1e-12)


class TestModel:
    def test_zero_parameters_emit_uniform_half_maps(self):
        model = SaliencyModel(TINY, None, AblationFlags())
        rgb, aux = images(np.random.default_rng(12))
        outputs = model(rgb, aux)
        for s in (outputs.s2, outputs.s3, outputs.s4, outputs.s5):
            assert s.shape == (1, 1, 32, 32)
            assert np.all(s.data == 0.5)

    def test_maps_strictly_inside_unit_interval(self):
        model = SaliencyModel(TINY, np.random.default_rng(13), AblationFlags())
        rgb, aux = images(np.random.default_rng(14))
        outputs = model(rgb, aux)
        for s in (outputs.s2, outputs.s3, outputs.s4, outputs.s5):
            assert np.all(s.data > 0) and np.all(s.data < 1)

    def test_deterministic_replay(self):
        out = []
        for _ in range(2):
            model = SaliencyModel(TINY, np.random.default_rng(15), AblationFlags())
            rgb, aux = images(np.random.default_rng(16))
            out.append(model(rgb, aux).s2.data)
        np.testing.assert_array_equal(out[0], out[1])

    def test_no_iigm_feeds_bank_outputs_to_decoder_bit_exactly(self):
        rng_model = np.random.default_rng(17)
        model = SaliencyModel(TINY, rng_model, AblationFlags(no_iigm=True))
        rgb, aux = images(np.random.default_rng(18))
        fbs, _ = model.bank_outputs(rgb, aux)
        outputs = model(rgb, aux)
        want = model.decoder({i: fbs[i] for i in (2, 3, 4, 5)})
        np.testing.assert_array_equal(outputs.s2.data, want.s2.data)

    def test_no_afb_uses_plain_concatenation_widths(self):
        model = SaliencyModel(TINY, np.random.default_rng(19), AblationFlags(no_afb=True))
        assert model.bank_widths == {2: 4, 3: 6, 4: 8, 5: 10}
        assert model.module_parameter_counts()["banks"] == 0
        rgb, aux = images(np.random.default_rng(20))
        assert model(rgb, aux).s2.shape == (1, 1, 32, 32)

    def test_scheme_subset_narrows_widths(self):
        model = SaliencyModel(TINY, np.random.default_rng(21),
                              AblationFlags(schemes=("li", "td")))
        assert model.bank_widths == {2: 4, 3: 6, 4: 8, 5: 10}

    def test_contradictory_flags_rejected(self):
        with pytest.raises(ConfigurationError):
            AblationFlags(no_afb=True, no_aem=True)
        with pytest.raises(ConfigurationError):
            AblationFlags(no_afb=True, schemes=("cb",))
        with pytest.raises(ConfigurationError):
            AblationFlags(schemes=())

    def test_no_aem_removes_ensemble_parameters(self):
        full = SaliencyModel(TINY, np.random.default_rng(22), AblationFlags())
        lean = SaliencyModel(TINY, np.random.default_rng(22), AblationFlags(no_aem=True))
        names_full = {n for n, _ in full.named_parameters()}
        names_lean = {n for n, _ in lean.named_parameters()}
        assert any("aem" in n for n in names_full)
        assert not any("aem" in n for n in names_lean)


class TestCheckpointContainer:
    def test_roundtrip_preserves_values_and_manifest(self, tmp_path):
        model = SaliencyModel(TINY, np.random.default_rng(23), AblationFlags())
        path = tmp_path / "model.ckpt"
        manifest = {"input_size": "32", "note": "test"}
        save_checkpoint(path, model.state(), manifest)
        params, loaded_manifest = load_checkpoint(path)
        assert loaded_manifest["note"] == "test"
        state = model.state()
        assert set(params) == set(state)
        for name in state:
            np.testing.assert_array_equal(params[name], state[name])

    def test_load_state_shape_mismatch(self, tmp_path):
        model = SaliencyModel(TINY, np.random.default_rng(24), AblationFlags())
        state = model.state()
        key = next(iter(state))
        state[key] = np.zeros((1, 2, 3))
        with pytest.raises(ConfigurationError, match="shape"):
            model.load_state(state)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(ConfigurationError, match="magic"):
            load_checkpoint(path)

    def test_missing_level_rejected_by_decoder(self):
        model = SaliencyModel(TINY, np.random.default_rng(25), AblationFlags())
        rgb, aux = images(np.random.default_rng(26))
        fbs, _ = model.bank_outputs(rgb, aux)
        del fbs[3]
        with pytest.raises(ContractError):
            model.decoder(fbs)
