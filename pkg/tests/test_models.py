import json

import numpy as np
import pytest

from strfsed.models import (
    ARCHITECTURES, ModelConfig, TrainConfig, build_model, canonical_name, evaluate, load_checkpoint,
    param_count, pool_targets, save_checkpoint, train,
)
from strfsed.data import SynthSpec, dataset_from_corpus, synth_corpus

TOY_COUNTS = {
    "baseline": 73747, "strfnet": 78347, "tb_baseline": 119971, "tb_strfnet": 129747,
    "fdy_crnn": 175447, "strf_fdynet": 180047, "tb_strf_fdynet1": 231447,
    "tb_strf_fdynet2": 231447, "tb_strf_fdynet3": 333147,
}


def toy(arch, **kw):
    return build_model(ModelConfig.from_preset("toy", arch, **kw))


def tiny(arch, **kw):
    """Width-1 network on 4 mel bins, small enough to count by hand."""
    cfg = dict(architecture=arch, n_classes=1, n_mels=4, conv_widths=(1,) * 6, pool_plan=((1, 1),) * 6,
               gru_hidden=1, dense_hidden=1, lift_channels=1, strf_axes=(7, 6, 0.2, 1 / 24),
               strf_scales=(0.25, 8.0, 1), strf_rates=(0.3, 2.4, 1))
    cfg.update(kw)
    return build_model(ModelConfig(**cfg))


def test_canonical_names():
    assert canonical_name("tb-strf-fdynet3") == "tb_strf_fdynet3"
    with pytest.raises(ValueError, match="tb-strfnet"):
        canonical_name("resnet")


def test_layer_kinds_single_branch_fdy():
    kinds = toy("strf_fdynet").layer_kinds(compute_only=True)
    assert kinds == ["strfconv", "conv2d"] + ["fdyconv"] * 5 + ["bigru"] * 2 + ["dense"] * 2


def test_layer_kinds_baseline_full():
    kinds = toy("baseline").layer_kinds()
    block = ["conv2d", "batchnorm", "relu", "maxpool2d"]
    assert kinds == block * 6 + ["to_sequence", "bigru", "bigru", "dense", "relu", "dense", "sigmoid"]


@pytest.mark.parametrize("arch", sorted(ARCHITECTURES))
def test_concat_only_for_two_branch(arch):
    model = toy(arch)
    kinds = model.layer_kinds()
    assert kinds.count("concat") == (1 if len(ARCHITECTURES[arch]) == 2 else 0)
    assert kinds.index("concat") < kinds.index("bigru") if "concat" in kinds else True


def test_two_branch_front_layers():
    m = toy("tb_strf_fdynet1")
    assert m.layer_kinds(branch=0, compute_only=True) == ["strfconv"] + ["conv2d"] * 6
    assert m.layer_kinds(branch=1, compute_only=True) == ["conv2d", "conv2d"] + ["fdyconv"] * 5


def test_toy_parameter_counts_and_ordering():
    counts = {a: param_count(toy(a)) for a in ARCHITECTURES}
    assert counts == TOY_COUNTS
    assert counts["baseline"] < counts["strfnet"]
    assert counts["tb_baseline"] < counts["tb_strfnet"] < counts["tb_strf_fdynet1"] < counts["tb_strf_fdynet3"]


def test_hand_counted_tiny_networks():
    # 6 x (conv 9+1, bn 2) + bigru(4,1) 2x21 + bigru(2,1) 2x15 + dense 3 + dense 2
    assert param_count(tiny("baseline")) == 72 + 42 + 30 + 3 + 2
    # one scale-rate pair adds 2, and the first conv then sees 2 channels (+9)
    assert param_count(tiny("strfnet")) == 149 + 2 + 9
    named = tiny("strfnet").named_params()
    assert list(named)[:2] == ["branch0.0.log_scale", "branch0.0.log_rate"]
    assert sum(v.size for v in named.values()) == 160


def test_named_param_order_is_stable():
    a, b = list(toy("tb_strfnet").named_params()), list(toy("tb_strfnet").named_params())
    assert a == b and a[0].startswith("branch0.") and a[-1].startswith("head.")
    assert any(n.startswith("branch1.") for n in a)


def test_outputs_are_probabilities():
    rng = np.random.default_rng(0)
    for arch in ARCHITECTURES:
        out = toy(arch).forward(rng.random((2, 12, 64)))
        assert out.shape == (2, 12, 3)
        assert np.all(out >= 0) and np.all(out <= 1) and np.all(np.isfinite(out))


def test_same_seed_same_model_different_arch_differs():
    x = np.random.default_rng(1).random((1, 10, 64))
    assert np.array_equal(toy("tb_strfnet").forward(x), toy("tb_strfnet").forward(x))
    assert not np.allclose(toy("tb_baseline").forward(x), toy("tb_strfnet").forward(x))
    assert not np.array_equal(toy("baseline", seed=1).forward(x), toy("baseline").forward(x))


def test_input_validation():
    m = toy("baseline")
    with pytest.raises(ValueError, match="mel bins"):
        m.forward(np.zeros((1, 10, 40)))
    with pytest.raises(ValueError):
        m.forward(np.zeros((10, 64)))
    pooled = toy("baseline", pool_plan=((2, 2),) + ((1, 2),) * 4 + ((1, 1),))
    with pytest.raises(ValueError, match="shorter"):
        pooled.forward(np.zeros((1, 1, 64)))


@pytest.mark.parametrize("kw", [dict(n_classes=0), dict(pool_plan=((1, 2),) * 5),
                                dict(pool_plan=((1, 2),) * 6 + ((0, 1),)), dict(pool_plan=((1, 4),) * 6),
                                dict(architecture="nope")])
def test_config_errors(kw):
    with pytest.raises(ValueError):
        ModelConfig(**kw)


def test_config_round_trip_and_unknown_fields():
    cfg = ModelConfig.from_preset("toy", "fdy-crnn", seed=3)
    assert ModelConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(ValueError, match="unknown"):
        ModelConfig.from_dict({"widths": 3})
    with pytest.raises(ValueError):
        ModelConfig.from_preset("huge", "baseline")
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)


def test_pool_targets():
    y = np.array([[0, 1], [1, 0], [0, 0], [0.5, 0]], dtype=float)
    assert pool_targets(y, 2).tolist() == [[1, 1], [0.5, 0]]
    assert pool_targets(y, 1) is y


def test_training_reduces_loss_and_is_deterministic():
    corpus = synth_corpus(SynthSpec(n_clips=2, clip_seconds=6, events_per_clip=(1, 1), seed=3))
    ds = dataset_from_corpus(corpus)
    ex = [(ds.features[n], ds.targets(n)) for n in ds.names()]
    cfg = TrainConfig(epochs=15, batch_size=2)
    r1 = train(toy("baseline"), ex, cfg)
    r2 = train(toy("baseline"), ex, cfg)
    assert r1.loss_trace == r2.loss_trace
    assert np.isfinite(r1.loss_trace[0]) and r1.loss_trace[-1] < r1.loss_trace[0]
    with pytest.raises(ValueError):
        train(toy("baseline"), [], cfg)


def test_evaluate_class_mismatch():
    ds = dataset_from_corpus(synth_corpus(SynthSpec(n_clips=1, clip_seconds=6, events_per_clip=(1, 1))))
    with pytest.raises(ValueError, match="classes"):
        evaluate(toy("baseline", n_classes=5), ds, ds.names())


def test_checkpoint_round_trip_bit_exact(tmp_path):
    model = toy("tb_strf_fdynet3")
    x = np.random.default_rng(2).random((1, 10, 64))
    # move the batchnorm running statistics away from their initial values
    model.forward(x, training=True)
    manifest = save_checkpoint(model, tmp_path / "m", extra={"fold": 0})
    back = load_checkpoint(tmp_path / "m.json")
    for name, v in {**model.named_params(), **model.named_buffers()}.items():
        w = {**back.named_params(), **back.named_buffers()}[name]
        assert v.dtype == w.dtype and np.array_equal(v, w)
    assert np.array_equal(model.forward(x), back.forward(x))
    assert sum(e["nbytes"] for e in manifest["entries"]) == (tmp_path / "m.bin").stat().st_size
    assert all(e["dtype"] == "<f4" for e in manifest["entries"])


def test_checkpoint_corruption_errors(tmp_path):
    save_checkpoint(toy("baseline"), tmp_path / "m")
    blob = (tmp_path / "m.bin").read_bytes()
    (tmp_path / "m.bin").write_bytes(blob[:-4])
    with pytest.raises(ValueError, match="bytes"):
        load_checkpoint(tmp_path / "m")
    (tmp_path / "m.bin").write_bytes(blob)
    doc = json.loads((tmp_path / "m.json").read_text())
    doc["architecture"] = "transformer"
    (tmp_path / "m.json").write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="architecture"):
        load_checkpoint(tmp_path / "m")
    doc["architecture"] = "baseline"
    doc["format"] = "other"
    (tmp_path / "m.json").write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="manifest"):
        load_checkpoint(tmp_path / "m")
