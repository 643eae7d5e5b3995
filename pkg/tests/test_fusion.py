import numpy as np
import pytest

from pedfusion import fusion
from pedfusion.fusion import DESK, LADDER, TINY, ConfigurationError, VariantSpec, build, parameter_count


def linear(n_in, n_out):
    return n_in * n_out + n_out


def conv(c_in, c_out, k):
    return c_out * c_in * k**3 + c_out


def expected_count(variant):
    # hand audit of the layer table
    v = VariantSpec.from_name(variant)
    width_in = 3 + (36 if v.use_pose else 0)
    n = linear(width_in, 128) + 2 * linear(128, 128)
    n += 3 * 128 * 128  # temporal attention
    n += linear(128, 64) + linear(64, 2)
    if v.use_local:
        channels = {"local": 3, "semantic": 8, "flow": 2}
        n += sum(conv(channels[m], 16, 1) for m in v.modalities())
        n += conv(16, 16, 3) + conv(16, 32, 3) + conv(32, 64, 3) + conv(64, 128, 3)
        n += 3 * 128 * 128  # outer refine
    if v.use_global:
        n += 3 * 128 * 128
    if v.use_motion:
        n += 3 * 128 * 128
    return n


@pytest.mark.parametrize("variant", LADDER)
def test_parameter_counts(variant):
    assert parameter_count(fusion.FusionModel(VariantSpec.from_name(variant))) == expected_count(variant)


def test_full_desk_count_frozen():
    assert parameter_count(build("BLGPM")) == 540_850


def test_b_has_no_conv_parameters():
    names = [n for n, _ in build("B").named_parameters()]
    assert not any(n.startswith("encoder") for n in names)


class TestVariantSpec:
    def test_names_and_labels(self):
        assert [VariantSpec.from_name(v).label for v in LADDER] == ["B", "B+L", "B+L+G", "B+L+G+P", "B+L+G+P+M"]
        assert VariantSpec.from_name("b+l") == fusion.PRESETS["BL"]

    def test_unknown(self):
        with pytest.raises(ConfigurationError):
            VariantSpec.from_name("BM")

    def test_non_preset_flags_rejected(self):
        with pytest.raises(ConfigurationError):
            fusion.FusionModel(VariantSpec(use_pose=True))


class TestForward:
    def test_full_feature_shapes(self, tiny_samples):
        model = build("BLGPM", TINY)
        f = model.features(tiny_samples[0])
        assert f["f_H"].shape == (128, 3)
        assert f["fused"].shape == (128,)
        for key in ("f_a", "f_cl", "f_cg", "f_env", "f_co", "f_mot"):
            assert f[key].shape == (128,)

    def test_fused_is_gap_of_f_h(self, tiny_samples):
        f = build("BLGPM", TINY).features(tiny_samples[0])
        np.testing.assert_allclose(f["fused"].data, f["f_H"].data.mean(axis=1), rtol=1e-6)

    @pytest.mark.parametrize("variant,rows", [("BL", 2), ("BLG", 2), ("BLGP", 2), ("BLGPM", 3)])
    def test_outer_stack_height(self, tiny_samples, variant, rows):
        assert build(variant, TINY).features(tiny_samples[0])["f_H"].shape == (128, rows)

    def test_outputs_are_probabilities(self, tiny_samples):
        out = build("BLGPM", TINY)(tiny_samples).data
        assert out.shape == (len(tiny_samples), 2)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, rtol=1e-6)

    def test_b_ignores_image_modalities(self, tiny_samples, rng):
        model = build("B", TINY)
        base = model(tiny_samples).data
        noisy = []
        for s in tiny_samples:
            t = s.copy()
            t.local = rng.uniform(0, 1, t.local.shape).astype(np.float32)
            t.semantic = np.zeros_like(t.semantic)
            t.flow = rng.normal(0, 5, t.flow.shape).astype(np.float32)
            t.pose = rng.uniform(0, 1, t.pose.shape).astype(np.float32)
            noisy.append(t)
        np.testing.assert_array_equal(base, model(noisy).data)

    def test_eval_mode_is_deterministic(self, tiny_samples):
        model = build("BLGPM", TINY)
        np.testing.assert_array_equal(model(tiny_samples).data, model(tiny_samples).data)

    def test_missing_modality(self, tiny_samples):
        s = tiny_samples[0].copy()
        s.flow = None
        with pytest.raises(ConfigurationError, match="optical flow"):
            build("BLGPM", TINY)([s])

    def test_empty_batch(self):
        with pytest.raises(ConfigurationError):
            build("B")([])


class TestInit:
    def test_same_seed_same_weights(self):
        a, b = build("BLG", seed=5), build("BLG", seed=5)
        for (n1, p1), (n2, p2) in zip(a.named_parameters(), b.named_parameters()):
            assert n1 == n2
            np.testing.assert_array_equal(p1.data, p2.data)

    def test_glorot_bounds_and_zero_bias(self):
        model = build("BLGPM", seed=1)
        for name, p in model.named_parameters():
            if p.fan_in is None:
                assert not p.data.any(), name
            else:
                assert np.abs(p.data).max() <= np.sqrt(6.0 / (p.fan_in + p.fan_out))

    def test_zero_init_is_symmetric(self, tiny_samples):
        model = fusion.init_params(fusion.FusionModel(fusion.PRESETS["BLGPM"], TINY), scheme="zeros")
        np.testing.assert_array_equal(model(tiny_samples).data, 0.5)

    def test_unknown_scheme(self):
        with pytest.raises(ConfigurationError):
            fusion.init_params(fusion.FusionModel(fusion.PRESETS["B"], DESK), scheme="he")
