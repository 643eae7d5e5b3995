import numpy as np
import pytest

from pedfusion import cli, fusion
from pedfusion import tensor as T
from pedfusion.checkpoint import load_checkpoint, save_checkpoint
from pedfusion.config import ConfigurationError, RunConfig, parse_config
from pedfusion.data import load_sample, write_sample


def tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture
def tiny_cfg(tmp_path):
    f = tmp_path / "tiny.cfg"
    f.write_text("# tiny geometry\nn_frames = 2\nlocal_size=8\nglobal_size=8\n")
    return str(f)


@pytest.fixture
def dataset(tmp_path, tiny_cfg):
    out = tmp_path / "data"
    assert cli.main(["generate", "--out", str(out), "--n", "10", "--seed", "1", "--config", tiny_cfg]) == 0
    return out


class TestConfig:
    def test_parse_and_override(self, tiny_cfg):
        cfg = parse_config("lr = 0.01\naugment=yes\nvariant=BL\n")
        assert cfg.lr == 0.01 and cfg.augment is True and cfg.variant == "BL"
        args = cli.build_parser().parse_args(["train", "--config", tiny_cfg, "--lr", "0.5", "--epochs", "3"])
        cfg = cli.resolve_config(args)
        assert (cfg.n_frames, cfg.lr, cfg.epochs, cfg.batch) == (2, 0.5, 3, 2)

    def test_text_round_trip(self):
        cfg = RunConfig(variant="BLG", lr=3e-4, augment=True, out="x")
        assert parse_config(cfg.to_text()) == cfg

    @pytest.mark.parametrize("text", ["lr=abc\n", "bogus=1\n", "epochs\n", "augment=maybe\n"])
    def test_bad_files(self, text):
        with pytest.raises(ConfigurationError):
            parse_config(text)

    def test_validation(self):
        with pytest.raises(ConfigurationError):
            RunConfig(dropout=1.0).validate()
        with pytest.raises(ConfigurationError):
            RunConfig(variant="BQ").validate()

    def test_scales(self):
        assert RunConfig().full().lr == 5e-7
        assert RunConfig(n_frames=16).desk().n_frames == 4


class TestGenerate:
    def test_empty(self, tmp_path, capsys):
        assert cli.main(["generate", "--out", str(tmp_path / "d"), "--n", "0", "--seed", "0"]) == 0
        assert (tmp_path / "d" / "manifest.jsonl").read_text() == ""
        assert "manifest=" in capsys.readouterr().out

    def test_negative_n_is_usage_error(self, tmp_path, capsys):
        assert cli.main(["generate", "--out", str(tmp_path), "--n", "-5"]) == 2
        assert "usage:" in capsys.readouterr().err

    def test_n_required(self, tmp_path):
        assert cli.main(["generate", "--out", str(tmp_path)]) == 2

    def test_deterministic(self, tmp_path, tiny_cfg):
        for name in ("a", "b"):
            cli.main(["generate", "--out", str(tmp_path / name), "--n", "4", "--seed", "2", "--config", tiny_cfg])
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")

    def test_unwritable(self, tmp_path, tiny_cfg):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert cli.main(["generate", "--out", str(blocker / "d"), "--n", "2", "--config", tiny_cfg]) == 3

    def test_prints_balance(self, dataset, capsys):
        cli.main(["generate", "--out", str(dataset.parent / "again"), "--n", "4", "--desk"])
        out = capsys.readouterr().out
        assert "positive=" in out and "positive_fraction=" in out


class TestTrain:
    def run(self, dataset, out, *extra):
        return cli.main(["train", "--data", str(dataset), "--out", str(out), "--epochs", "2", *extra])

    def test_outputs(self, dataset, tmp_path, capsys):
        assert self.run(dataset, tmp_path / "r", "--variant", "BLG") == 0
        log = (tmp_path / "r" / "train.log").read_text().splitlines()
        assert log[0].startswith("epoch=1 loss=") and "train_auc=" in log[0]
        assert log[-1].startswith("final split=test n=2 auc=")
        assert (tmp_path / "r" / "checkpoints" / "epoch_002.ckpt").is_file()
        cfg = (tmp_path / "r" / "config.txt").read_text()
        assert "variant=BLG" in cfg and "n_frames=2" in cfg
        assert "epoch=2" in capsys.readouterr().out

    def test_lr_zero_keeps_initial_weights(self, dataset, tmp_path):
        assert self.run(dataset, tmp_path / "r", "--lr", "0", "--seed", "3") == 0
        model, _ = load_checkpoint(tmp_path / "r" / "final.ckpt")
        init = fusion.build("BLGPM", fusion.TINY, seed=3)
        for (n, p), (_, q) in zip(model.named_parameters(), init.named_parameters()):
            assert p.data.tobytes() == q.data.tobytes(), n

    def test_deterministic(self, dataset, tmp_path):
        self.run(dataset, tmp_path / "a", "--augment")
        self.run(dataset, tmp_path / "b", "--augment")
        a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
        assert {k: v for k, v in a.items() if k != "config.txt"} == {k: v for k, v in b.items() if k != "config.txt"}

    def test_does_not_touch_dataset(self, dataset, tmp_path):
        before = tree_bytes(dataset)
        self.run(dataset, tmp_path / "r", "--augment")
        assert tree_bytes(dataset) == before

    def test_missing_data(self, tmp_path):
        assert self.run(tmp_path / "none", tmp_path / "r") == 3

    def test_numeric_abort(self, dataset, tmp_path, capsys):
        assert self.run(dataset, tmp_path / "r", "--lr", "1e38") == 4
        assert "numeric abort" in capsys.readouterr().err

    def test_bad_variant(self, dataset, tmp_path):
        assert self.run(dataset, tmp_path / "r", "--variant", "BX") == 2


class TestEvalPredict:
    def test_eval(self, dataset, tmp_path, capsys):
        cli.main(["train", "--data", str(dataset), "--out", str(tmp_path / "r"), "--epochs", "1", "--variant", "B"])
        capsys.readouterr()
        ckpt = str(tmp_path / "r" / "final.ckpt")
        assert cli.main(["eval", "--checkpoint", ckpt, "--data", str(dataset)]) == 0
        out = capsys.readouterr().out.strip()
        assert out.startswith("variant=B split=test n=2 auc=")

    def test_symmetric_checkpoint_predicts_half(self, dataset, tmp_path, capsys):
        model = fusion.init_params(fusion.FusionModel(fusion.PRESETS["BLGPM"], fusion.TINY), scheme="zeros")
        save_checkpoint(model, tmp_path / "zero.ckpt")
        args = ["predict", "--checkpoint", str(tmp_path / "zero.ckpt"), "--sample", str(dataset / "samples/00000")]
        assert cli.main(args) == 0
        first = capsys.readouterr().out
        assert first.startswith("p_crossing=0.500000 p_not_crossing=0.500000 label=")
        cli.main(args)
        assert capsys.readouterr().out == first

    def test_modality_mismatch(self, dataset, tmp_path):
        save_checkpoint(fusion.build("BLGPM", fusion.TINY), tmp_path / "m.ckpt")
        s = load_sample(dataset / "samples/00000")
        s.flow = None
        write_sample(s, tmp_path / "noflow")
        assert cli.main(["predict", "--checkpoint", str(tmp_path / "m.ckpt"), "--sample", str(tmp_path / "noflow")]) == 2

    def test_dims_mismatch(self, dataset, tmp_path):
        save_checkpoint(fusion.build("BL", fusion.DESK), tmp_path / "m.ckpt")
        sample = str(dataset / "samples/00000")
        assert cli.main(["predict", "--checkpoint", str(tmp_path / "m.ckpt"), "--sample", sample]) == 2

    def test_corrupt_checkpoint(self, dataset, tmp_path):
        (tmp_path / "bad.ckpt").write_bytes(b"PIPCKPT1" + b"\0" * 20)
        sample = str(dataset / "samples/00000")
        assert cli.main(["predict", "--checkpoint", str(tmp_path / "bad.ckpt"), "--sample", sample]) == 3


class TestAblate:
    def test_single_variant(self, dataset, tmp_path, capsys):
        args = ["ablate", "--data", str(dataset), "--out", str(tmp_path / "ab"), "--epochs", "1", "--variants", "B"]
        assert cli.main(args) == 0
        table = (tmp_path / "ab" / "ablation.tsv").read_text().splitlines()
        assert table[0] == "variant\tAUC\tF1"
        assert len(table) == 2 and table[1].startswith("B\t")

    def test_ladder_order(self, dataset, tmp_path):
        args = ["ablate", "--data", str(dataset), "--out", str(tmp_path / "ab"), "--epochs", "1",
                "--variants", "BLGPM,B,BL"]
        assert cli.main(args) == 0
        rows = (tmp_path / "ab" / "ablation.tsv").read_text().splitlines()[1:]
        assert [r.split("\t")[0] for r in rows] == ["B", "B+L", "B+L+G+P+M"]

    def test_unknown_variant(self, dataset, tmp_path):
        assert cli.main(["ablate", "--data", str(dataset), "--variants", "B,Q"]) == 2


class TestGradcheck:
    def test_passes(self, capsys):
        assert cli.main(["gradcheck"]) == 0
        out = capsys.readouterr().out
        for op in ("conv3d", "max_pool3d", "softmax", "dropout", "matmul", "model_BLGPM"):
            assert f"op={op} " in out

    def test_broken_backward_is_named(self, monkeypatch, capsys):
        def bad_relu(a):
            mask = a.data > 0
            return T._node(np.where(mask, a.data, 0), (a,), lambda g: (0.5 * g * mask,), "relu")

        monkeypatch.setattr(T, "relu", bad_relu)
        assert cli.main(["gradcheck"]) == 5
        err = capsys.readouterr().err
        assert "op=relu" in err
        assert "element=" in err
