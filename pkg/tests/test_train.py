import numpy as np
import pytest

import gradeshi as g
from conftest import tiny_arch
from gradeshi.checkpoint import instantiate, read_checkpoint, restore_adam
from gradeshi.errors import (CheckpointFormatError, CheckpointIntegrityError,
                             ConfigError, DataError, NumericError, TransferError)
from gradeshi.tensor import Tensor


def snapshot(net):
    return {k: v.data.copy() for k, v in net.named_params().items()}


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """A small trained mobilenet with checkpoint on disk, shared across tests."""
    from synthglyphs import write_tree

    root = tmp_path_factory.mktemp("traintree")
    manifest_path = write_tree(root, ["vowel", "vowel", "numeric", "numeric"], 10, 16, seed=21)
    manifest = g.load_manifest(manifest_path)
    index = g.scan_dataset(root, manifest)
    examples = g.load_examples(index, 16)
    net = g.build(tiny_arch(4, 16, "mini-mobilenet"), seed=2)
    adam = g.Adam()
    history = g.train(net, examples, examples,
                      g.TrainConfig(epochs=2, batch_size=8, seed=2), optimizer=adam)
    ck_path = tmp_path_factory.mktemp("ck") / "model.ckpt"
    g.save_checkpoint(net, ck_path, manifest, build_seed=2, optimizer=adam)
    return {"net": net, "adam": adam, "history": history, "examples": examples,
            "index": index, "manifest": manifest, "ck_path": ck_path}


class TestTrainLoop:
    def test_history_length_matches_epochs(self, tiny_examples):
        index, examples = tiny_examples
        net = g.build(tiny_arch(), seed=5)
        history = g.train(net, examples, examples, g.TrainConfig(epochs=3, batch_size=8, seed=5))
        assert [r.epoch for r in history] == [1, 2, 3]
        assert all(0.0 <= r.train_acc <= 1.0 and 0.0 <= r.val_acc <= 1.0 for r in history)

    def test_bit_identical_reruns(self, tiny_examples, tmp_path):
        index, examples = tiny_examples
        csvs = []
        for run in range(2):
            net = g.build(tiny_arch(), seed=6)
            history = g.train(net, examples, examples,
                              g.TrainConfig(epochs=2, batch_size=8, seed=6))
            path = tmp_path / f"metrics{run}.csv"
            g.export_metrics(history, path)
            csvs.append(path.read_bytes())
        assert csvs[0] == csvs[1]

    def test_class_count_mismatch(self, tiny_examples):
        _, examples = tiny_examples
        net = g.build(tiny_arch(classes=7), seed=0)
        with pytest.raises(ConfigError):
            g.train(net, examples, examples, g.TrainConfig(epochs=1))

    def test_non_finite_loss_aborts_with_coordinates(self, tiny_examples):
        _, examples = tiny_examples
        net = g.build(tiny_arch(), seed=1)
        dense = net.layers[net.index_of("head.dense2")]
        poisoned = dense.params["weights"].data.copy()
        poisoned[0, 0, 0, 0] = np.inf
        dense.params["weights"] = Tensor._wrap(poisoned)
        with np.errstate(invalid="ignore"):
            with pytest.raises(NumericError, match=r"epoch 1, batch 0"):
                g.train(net, examples, examples, g.TrainConfig(epochs=1, batch_size=8))

    def test_bad_config(self):
        with pytest.raises(ConfigError):
            g.TrainConfig(epochs=0)
        with pytest.raises(ConfigError):
            g.TrainConfig(epochs=1, batch_size=0)


class TestEvaluate:
    def test_partition_independence(self, trained):
        m1 = g.evaluate(trained["net"], trained["examples"], batch_size=1)
        m32 = g.evaluate(trained["net"], trained["examples"], batch_size=32)
        assert m1.accuracy == m32.accuracy
        assert abs(m1.loss - m32.loss) <= 1e-6
        assert m1.sample_count == len(trained["examples"])

    def test_eval_mode_purity(self, trained):
        before = snapshot(trained["net"])
        g.evaluate(trained["net"], trained["examples"], batch_size=4)
        after = snapshot(trained["net"])
        assert before.keys() == after.keys()
        for k in before:
            assert np.array_equal(before[k], after[k]), k

    def test_untrained_zero_head_picks_class_zero(self, tiny_examples):
        _, examples = tiny_examples
        net = g.build(tiny_arch(), seed=3)
        head = net.layers[net.index_of("head.dense2")]
        head.params["weights"] = Tensor.zeros(head.params["weights"].shape)
        metrics = g.evaluate(net, examples, batch_size=8)
        class0_freq = float((examples.class_ids == 0).mean())
        assert metrics.accuracy == class0_freq

    def test_empty_set_rejected(self, trained):
        empty = g.ExampleSet(np.zeros((0, 16, 16, 1), np.float32),
                             np.zeros((0, 4), np.float32),
                             np.zeros(0, np.int64), ())
        with pytest.raises(DataError):
            g.evaluate(trained["net"], empty)

    def test_per_category_breakdown(self, trained):
        by_cat = g.evaluate_by_category(trained["net"], trained["examples"],
                                        trained["index"], batch_size=8)
        assert set(by_cat) == {"vowel", "numeric"}
        assert by_cat["vowel"].sample_count == 20
        overall = g.evaluate(trained["net"], trained["examples"], batch_size=8)
        weighted = sum(m.accuracy * m.sample_count for m in by_cat.values())
        assert abs(weighted / 40 - overall.accuracy) <= 1e-9


class TestCheckpoint:
    def test_roundtrip_forward_is_bitwise(self, trained, tmp_path):
        net = trained["net"]
        x = Tensor.uniform((16, 16, 16, 1), 0, 1, seed=17)
        before = net.forward(x, training=False)
        loaded = g.load_checkpoint(trained["ck_path"])
        after = loaded.forward(x, training=False)
        assert np.array_equal(before.data, after.data)

    def test_corrupt_magic_rejected(self, trained, tmp_path):
        raw = bytearray(trained["ck_path"].read_bytes())
        raw[:4] = b"XXXX"
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(raw)
        with pytest.raises(CheckpointFormatError):
            g.read_checkpoint(bad)

    def test_truncated_rejected(self, trained, tmp_path):
        raw = trained["ck_path"].read_bytes()
        bad = tmp_path / "trunc.ckpt"
        bad.write_bytes(raw[: len(raw) - 7])
        with pytest.raises(CheckpointIntegrityError):
            g.read_checkpoint(bad)

    def test_trailing_bytes_rejected(self, trained, tmp_path):
        bad = tmp_path / "extra.ckpt"
        bad.write_bytes(trained["ck_path"].read_bytes() + b"\x00")
        with pytest.raises(CheckpointIntegrityError):
            g.read_checkpoint(bad)

    def test_optimizer_state_roundtrip(self, trained):
        ck = read_checkpoint(trained["ck_path"])
        net = instantiate(ck)
        adam = restore_adam(net, ck)
        src = trained["adam"]
        assert len(adam.states) == len(src.states)
        for key, st in src.states.items():
            got = adam.states[key]
            assert got.t == st.t
            assert np.array_equal(got.m, st.m)
            assert np.array_equal(got.v, st.v)

    def test_classify_from_file_matches_in_memory(self, trained):
        ck = read_checkpoint(trained["ck_path"])
        net = instantiate(ck)
        path = trained["index"].entries[0].path
        from_file = g.load_image(path, ck.image_size, invert=ck.invert)
        in_memory = Tensor._wrap(trained["examples"].images[:1])
        pf = net.forward(from_file, training=False)
        pm = net.forward(in_memory, training=False)
        assert np.array_equal(pf.data, pm.data)


class TestTransfer:
    def test_trunk_copied_head_fresh(self, trained):
        ck = read_checkpoint(trained["ck_path"])
        net = g.transfer(ck, new_class_count=4, freeze_prefix=len(ck.arch.widths()),
                         granularity="block", head_seed=777)
        for i, layer, pname, value in net.param_items():
            full = f"{layer.name}.{pname}"
            if i < net.head_start:
                assert np.array_equal(value.data, ck.tensors[full].data), full
        head = net.layers[net.index_of("head.dense2")]
        assert not np.array_equal(head.params["weights"].data,
                                  ck.tensors["head.dense2.weights"].data)

    def test_fully_frozen_trunk_only_head_moves(self, trained):
        ck = read_checkpoint(trained["ck_path"])
        blocks = len(instantiate(ck).block_units)
        net = g.transfer(ck, 4, freeze_prefix=blocks, granularity="block", head_seed=5)
        before = snapshot(net)
        examples = trained["examples"]
        g.train(net, examples, examples, g.TrainConfig(epochs=1, batch_size=8, seed=5))
        after = snapshot(net)
        for k in before:
            if k.startswith("head."):
                continue
            assert np.array_equal(before[k], after[k]), k
        assert not np.array_equal(before["head.dense2.weights"], after["head.dense2.weights"])

    def test_missing_trunk_tensor(self, trained):
        ck = read_checkpoint(trained["ck_path"])
        del ck.tensors["stem.conv.weights"]
        with pytest.raises(TransferError, match="stem.conv.weights"):
            g.transfer(ck, 4, 0)

    def test_shape_mismatch_names_tensor(self, trained):
        ck = read_checkpoint(trained["ck_path"])
        ck.tensors["stem.conv.weights"] = Tensor.zeros((5, 5, 1, 6))
        with pytest.raises(TransferError, match="stem.conv.weights"):
            g.transfer(ck, 4, 0)

    def test_head_reinitialized_even_for_same_classes(self, trained):
        ck = read_checkpoint(trained["ck_path"])
        a = g.transfer(ck, 4, 0, head_seed=1)
        b = g.transfer(ck, 4, 0, head_seed=2)
        assert not np.array_equal(a.layers[a.index_of("head.dense2")].params["weights"].data,
                                  b.layers[b.index_of("head.dense2")].params["weights"].data)


class TestExportMetrics:
    def test_line_count_and_columns(self, trained, tmp_path):
        path = tmp_path / "metrics.csv"
        g.export_metrics(trained["history"], path)
        lines = path.read_text().splitlines()
        assert len(lines) == 1 + len(trained["history"])
        assert lines[0] == "epoch,train_loss,train_acc,val_loss,val_acc"

    def test_values_roundtrip(self, trained, tmp_path):
        path = tmp_path / "metrics.csv"
        g.export_metrics(trained["history"], path)
        rows = g.read_metrics_csv(path)
        for row, rec in zip(rows, trained["history"]):
            assert row["epoch"] == rec.epoch
            assert abs(row["train_loss"] - rec.train_loss) <= 1e-6
            assert abs(row["val_acc"] - rec.val_acc) <= 1e-6

    def test_empty_history_rejected(self, tmp_path):
        with pytest.raises(DataError):
            g.export_metrics([], tmp_path / "metrics.csv")
