import numpy as np
import pytest

from pedfusion import nn
from pedfusion import tensor as T
from pedfusion.fusion import build
from pedfusion.tensor import ContractError, DimensionError, Tensor


def glorot(module, seed=0):
    rng = np.random.default_rng(seed)
    for _, p in module.named_parameters():
        if p.fan_in is not None:
            lim = np.sqrt(6.0 / (p.fan_in + p.fan_out))
            p.data[...] = rng.uniform(-lim, lim, p.shape)
        else:
            p.data[...] = rng.uniform(-0.1, 0.1, p.shape)
    return module


def test_linear_vector_and_matrix_inputs():
    lin = glorot(nn.Linear(3, 2, np.float64))
    v = np.array([0.5, -1.0, 2.0])
    one = lin(Tensor(v)).data
    many = lin(Tensor(np.stack([v, v]))).data
    np.testing.assert_allclose(one, v @ lin.weight.data + lin.bias.data)
    np.testing.assert_allclose(many[1], one)
    with pytest.raises(DimensionError):
        lin(Tensor(np.ones(4)))


def test_mlp_is_three_layers():
    mlp = nn.MlpEmbedder(39)
    assert len(mlp.layers) == 3
    assert mlp.in_width == 39
    assert all(layer.weight.fc for layer in mlp.layers)


class TestEncoder:
    def make(self):
        return glorot(nn.ConvEncoder(["local", "semantic", "flow"], np.float64))

    def inputs(self, rng):
        return {m: rng.uniform(0, 1, (c, 2, 8, 8)) for m, c in nn.MODALITY_CHANNELS.items()}

    def test_output_width(self, rng):
        enc = self.make()
        for m, x in self.inputs(rng).items():
            assert enc(Tensor(x), m).shape == (128,)

    def test_wrong_channels(self, rng):
        with pytest.raises(nn.ModalityError):
            self.make()(Tensor(np.ones((3, 2, 8, 8))), "semantic")
        with pytest.raises(nn.ModalityError):
            nn.ConvEncoder(["local"])(Tensor(np.ones((2, 2, 8, 8))), "flow")

    def test_stem_perturbation_is_local(self, rng):
        enc = self.make()
        xs = self.inputs(rng)
        before = {m: enc(Tensor(x), m).data.copy() for m, x in xs.items()}
        enc.stems["local"].weight.data += 0.05
        after = {m: enc(Tensor(x), m).data for m, x in xs.items()}
        assert not np.array_equal(before["local"], after["local"])
        np.testing.assert_array_equal(before["semantic"], after["semantic"])
        np.testing.assert_array_equal(before["flow"], after["flow"])

    def test_trunk_perturbation_reaches_every_modality(self, rng):
        enc = self.make()
        xs = self.inputs(rng)
        before = {m: enc(Tensor(x), m).data.copy() for m, x in xs.items()}
        enc.trunk[0].weight.data += 0.05
        for m, x in xs.items():
            assert not np.array_equal(before[m], enc(Tensor(x), m).data)

    def test_trunk_gradient_is_sum_of_modalities(self, rng):
        enc = self.make()
        xs = self.inputs(rng)
        probe = Tensor(rng.uniform(-1, 1, 128))
        trunk = [p for name, p in enc.named_parameters() if name.startswith("trunk")]
        separate = []
        for m, x in xs.items():
            for p in trunk:
                p.grad = None
            T.backward(T.sum_(T.mul(enc(Tensor(x), m), probe)), params=trunk)
            separate.append([p.grad.copy() for p in trunk])
        for p in trunk:
            p.grad = None
        total = T.add(T.add(*[T.sum_(T.mul(enc(Tensor(x), m), probe)) for m, x in list(xs.items())[:2]]),
                      T.sum_(T.mul(enc(Tensor(xs["flow"]), "flow"), probe)))
        T.backward(total, params=trunk)
        for i, p in enumerate(trunk):
            np.testing.assert_allclose(p.grad, sum(s[i] for s in separate), rtol=1e-6, atol=1e-12)


class TestAttention:
    def test_reduce_is_permutation_invariant(self, rng):
        att = glorot(nn.AttentionModule("reduce", width=8, dtype=np.float64))
        X = rng.normal(size=(5, 8))
        perm = rng.permutation(5)
        np.testing.assert_allclose(att(Tensor(X)).data, att(Tensor(X[perm])).data, atol=1e-12)

    def test_refine_is_permutation_equivariant(self, rng):
        att = glorot(nn.AttentionModule("refine", width=8, dtype=np.float64))
        X = rng.normal(size=(3, 8))
        perm = rng.permutation(3)
        np.testing.assert_allclose(att(Tensor(X)).data[perm], att(Tensor(X[perm])).data, atol=1e-12)

    def test_weights_are_row_stochastic(self, rng):
        att = glorot(nn.AttentionModule("refine", width=8, dtype=np.float64))
        A = att.weights(Tensor(rng.normal(size=(4, 8)))).data
        assert A.shape == (4, 4)
        np.testing.assert_allclose(A.sum(axis=1), 1.0)

    def test_zero_weights_give_residual_plus_mean(self, rng):
        # with Wq = Wk = 0 the attention is uniform, so refine(X) = X + mean-row(X Wv)
        att = nn.AttentionModule("refine", width=4, dtype=np.float64)
        att.wv.data[...] = np.eye(4)
        X = rng.normal(size=(3, 4))
        np.testing.assert_allclose(att(Tensor(X)).data, X + X.mean(axis=0), atol=1e-12)

    def test_bad_mode_and_shape(self):
        with pytest.raises(ValueError):
            nn.AttentionModule("sum")
        with pytest.raises(DimensionError):
            nn.AttentionModule("reduce", width=4).weights(Tensor(np.ones((2, 5))))


class TestLoss:
    def test_values(self):
        probs = Tensor(np.array([[0.8, 0.2], [0.3, 0.7]]))
        # label 1 (crossing) reads column 0
        got = nn.cross_entropy(probs, [1, 1]).data
        assert got == pytest.approx(-(np.log(0.8) + np.log(0.3)) / 2)
        assert nn.cross_entropy(probs, [0, 0]).data == pytest.approx(-(np.log(0.2) + np.log(0.7)) / 2)

    def test_clamped_at_zero_probability(self):
        assert nn.cross_entropy(Tensor(np.array([[0.0, 1.0]])), [1]).data == pytest.approx(-np.log(1e-12))

    def test_rejects_bad_labels(self):
        with pytest.raises(ContractError):
            nn.cross_entropy(Tensor(np.array([[0.5, 0.5]])), [2])
        with pytest.raises(DimensionError):
            nn.cross_entropy(Tensor(np.array([[0.5, 0.5]])), [1, 0])


def test_head_is_symmetric_at_zero():
    head = nn.ClassifierHead()
    np.testing.assert_array_equal(head(Tensor(np.ones(128, dtype=np.float32))).data, [0.5, 0.5])


def test_fc_tags_cover_mlp_and_head_only():
    model = build("BLGPM")
    tagged = {name for name, p in model.named_parameters() if p.fc}
    assert tagged == {f"mlp.layers.{i}.weight" for i in range(3)} | {"head.fc1.weight", "head.fc2.weight"}
