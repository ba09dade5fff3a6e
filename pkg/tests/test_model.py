import json

import numpy as np
import pytest

from risurconv.cloud import PointCloud, apply_rotation, random_rotation
from risurconv.model import config as C
from risurconv.model.data import load_dataset, save_dataset, synth_dataset
from risurconv.model.network import (
    DegenerateCloudError,
    build_classifier,
    cloud_geometry,
    predict_logits,
    softmax_probabilities,
)
from risurconv.model.train import (
    GRIDS,
    ablation_sweep,
    accuracy,
    evaluate_protocol,
    protocol_name,
    protocol_sweep,
    train,
)
from risurconv.nn import functional as F
from risurconv.sampling import knn_bruteforce


def tiny_config(**kw):
    specs = [(64, 6, 8), (32, 6, 12), (16, 6, 16), (1, None, 24)]
    base = dict(layer_specs=specs, fc_widths=(16,), num_classes=3, encoder_heads=4)
    base.update(kw)
    return C.ClassifierConfig(**base)


@pytest.fixture(scope="module")
def tiny_data():
    return synth_dataset(("sphere", "box", "torus"), per_class=4, seed=3, n_points=96)


# ---------------------------------------------------------------- config


def test_config_rejects_unknown_keys():
    d = C.toy_preset().to_dict()
    d["dropout"] = 0.5
    with pytest.raises(C.ConfigError, match="dropout"):
        C.ClassifierConfig.from_dict(d)
    with pytest.raises(C.ConfigError):
        C.TrainConfig.from_dict({"lr": 0.1, "momentum": 0.9})


@pytest.mark.parametrize("change", [
    {"layer_specs": [(64, 8, 8), (64, 8, 16)]},
    {"layer_specs": [(64, 8, 16), (32, 8, 16)]},
    {"layer_specs": [(64, 2, 8)]},
    {"risp_variant": "nope"},
    {"surfaces": 5},
    {"encoder_heads": 5},
])
def test_config_invariants(change):
    with pytest.raises(C.ConfigError):
        C.toy_preset().replace(**change)


def test_train_config_invariants():
    with pytest.raises(C.ConfigError):
        C.TrainConfig(epochs=0)
    with pytest.raises(C.ConfigError):
        C.TrainConfig(lr=-1.0)
    with pytest.raises(C.ConfigError):
        C.TrainConfig(rotation_mode_train="x")


def test_config_json_round_trip(tmp_path):
    cfg = C.paper_preset(sa_flags={"sa1": False})
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    back = C.load_config(path, C.ClassifierConfig)
    assert back == cfg
    assert C.config_hash(back) == C.config_hash(cfg)
    assert C.config_hash(cfg) != C.config_hash(cfg.replace(surfaces=3))


def test_load_config_reports_bad_json(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{")
    with pytest.raises(C.ConfigError):
        C.load_config(path, C.TrainConfig)


# ---------------------------------------------------------------- network structure


def test_paper_preset_shapes():
    cloud = synth_dataset(("sphere",), per_class=1, n_points=1024)[0]
    net = build_classifier(C.paper_preset())
    rows = net.layer_shapes(cloud_geometry(cloud, net.cfg))
    assert [(d, n) for _, d, n in rows] == [
        (32, 1024), (64, 512), (128, 256), (256, 128), (512, 1), (512, 1), (256, 1), (128, 1), (40, 1)]
    assert [name for name, _, _ in rows][4:6] == ["RISurConv", "Transformer Encoder"]
    assert net.encoder.head_width == 64


def test_toy_preset_logit_width():
    net = build_classifier(C.toy_preset(num_classes=4))
    cloud = synth_dataset(("box",), per_class=1, n_points=256)[0]
    assert predict_logits(net, [cloud]).shape == (1, 4)


def test_no_attention_variant_is_structurally_bare():
    net = build_classifier(C.toy_preset(sa_flags={"sa1": False, "sa2": False, "encoder": False}))
    assert net.encoder is None
    assert all(c.sa1 is None and c.sa2 is None for c in net.convs)
    full = build_classifier(C.toy_preset())
    assert len(full.parameters()) > len(net.parameters())


def test_global_layer_sees_every_other_point(tiny_data):
    geom = cloud_geometry(tiny_data[0], tiny_config())
    last = geom.layers[-1]
    assert last.neighbors.shape == (1, 15)
    assert sorted(last.neighbors[0].tolist() + last.reference.tolist()) == list(range(16))


def test_feature_gather_follows_geometry(tiny_data):
    cloud = tiny_data[5]
    geom = cloud_geometry(cloud, tiny_config())
    for lower, upper in zip(geom.layers[:-1], geom.layers[1:]):
        coords = cloud.points[lower.source]            # layer-l reference coordinates
        want = knn_bruteforce(coords, upper.reference, upper.neighbors.shape[1])
        np.testing.assert_array_equal(upper.neighbors, want)
        # slot j of layer l+1 carries the feature computed at this input point
        np.testing.assert_array_equal(lower.source[upper.neighbors], lower.source[want])
        np.testing.assert_array_equal(upper.source, lower.source[upper.reference])


def test_gathered_features_are_parent_outputs(tiny_data):
    net = build_classifier(tiny_config())
    net.eval()
    geom = cloud_geometry(tiny_data[0], net.cfg)
    _, trace = net.forward([geom], return_trace=True)
    f1 = trace[0].data[0]                      # [N1, C1]
    nbr = geom.layers[1].neighbors
    g = F.gather(trace[0], nbr[None]).data[0]  # [N2, K2, C1]
    for r in range(nbr.shape[0]):
        for j in range(nbr.shape[1]):
            np.testing.assert_array_equal(g[r, j], f1[nbr[r, j]])


def test_degenerate_cloud_is_reported():
    cloud = PointCloud(np.repeat(np.eye(3), 30, axis=0), np.repeat(np.eye(3), 30, axis=0))
    with pytest.raises(DegenerateCloudError):
        cloud_geometry(cloud, tiny_config())


def test_cloud_without_normals_is_estimated(tiny_data):
    bare = PointCloud(tiny_data[0].points)
    geom = cloud_geometry(bare, tiny_config())
    assert np.all(np.isfinite(geom.layers[0].features))


# ---------------------------------------------------------------- invariance


def test_logits_rotation_invariant(tiny_data):
    net = build_classifier(tiny_config(), seed=1)
    clouds = tiny_data[:6]
    base = predict_logits(net, clouds)
    for s in range(5):
        r = random_rotation("so3", s)
        moved = predict_logits(net, [apply_rotation(c, r) for c in clouds])
        assert np.max(np.abs(moved - base)) < 1e-4
        np.testing.assert_array_equal(moved.argmax(1), base.argmax(1))


def test_logits_permutation_invariant(tiny_data):
    net = build_classifier(tiny_config(), seed=2)
    clouds = tiny_data[:6]
    base = predict_logits(net, clouds)
    rng = np.random.default_rng(0)
    shuffled = [c.permuted(rng.permutation(len(c))) for c in clouds]
    assert np.max(np.abs(predict_logits(net, shuffled) - base)) < 1e-4


def test_softmax_probabilities():
    p = softmax_probabilities(np.array([[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]]))
    np.testing.assert_allclose(p.sum(1), 1.0)
    np.testing.assert_allclose(p[1], 1 / 3)


# ---------------------------------------------------------------- data


def test_noise_free_sphere_is_exact():
    (c,) = synth_dataset(("sphere",), per_class=1, noise_sigma=0.0, seed=4, n_points=500)
    r = np.linalg.norm(c.points, axis=1)
    assert np.ptp(r) < 1e-9
    assert 0.8 <= r[0] <= 1.2
    np.testing.assert_allclose(c.normals, c.points / r[:, None], atol=1e-9)


def test_dataset_counts_and_labels():
    d = synth_dataset(per_class=50, n_points=16)
    assert len(d) == 250
    assert np.bincount([c.label for c in d]).tolist() == [50] * 5


def test_dataset_is_deterministic():
    a = synth_dataset(per_class=2, n_points=32, seed=9)
    b = synth_dataset(per_class=2, n_points=32, seed=9)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.points, y.points)
        np.testing.assert_array_equal(x.normals, y.normals)


@pytest.mark.parametrize("name", ["box", "cylinder", "cone", "torus"])
def test_analytic_normals_are_unit(name):
    (c,) = synth_dataset((name,), per_class=1, noise_sigma=0.0, n_points=400)
    np.testing.assert_allclose(np.linalg.norm(c.normals, axis=1), 1.0, atol=1e-12)


def test_dataset_directory_round_trip(tmp_path):
    d = synth_dataset(per_class=1, n_points=20)
    save_dataset(d, tmp_path)
    back = load_dataset(tmp_path)
    assert [c.label for c in back] == [c.label for c in d]
    np.testing.assert_allclose(back[3].points, d[3].points, rtol=1e-12)


# ---------------------------------------------------------------- training and protocols


def test_zero_learning_rate_keeps_weights(tiny_data):
    net = build_classifier(tiny_config())
    before = [p.data.copy() for p in net.parameters()]
    train(net, tiny_data, C.TrainConfig(lr=0.0, epochs=1, batch_size=4))
    for a, p in zip(before, net.parameters()):
        np.testing.assert_array_equal(a, p.data)


def test_first_step_reduces_loss(tiny_data):
    net = build_classifier(tiny_config(), seed=0)
    net.train()
    geoms = [cloud_geometry(c, net.cfg) for c in tiny_data]
    y = np.array([c.label for c in tiny_data])
    from risurconv import nn

    opt = nn.Adam(net.parameters(), lr=1e-3)
    loss0 = F.cross_entropy(net(geoms), y)
    opt.zero_grad()
    loss0.backward()
    opt.step()
    loss1 = F.cross_entropy(net(geoms), y)
    assert float(loss1.data) < float(loss0.data)


def test_training_is_reproducible(tiny_data):
    cfg = C.TrainConfig(epochs=2, batch_size=4, seed=5)
    h1 = train(build_classifier(tiny_config(), seed=1), tiny_data, cfg)[1]
    h2 = train(build_classifier(tiny_config(), seed=1), tiny_data, cfg)[1]
    strip = lambda h: [{k: v for k, v in r.items() if k != "seconds"} for r in h]  # noqa: E731
    assert strip(h1) == strip(h2)
    assert set(h1[0]) >= {"epoch", "loss", "accuracy", "mode", "config_hash", "seed"}


def test_training_validates_labels(tiny_data):
    net = build_classifier(tiny_config(num_classes=2))
    with pytest.raises(ValueError):
        train(net, tiny_data, C.TrainConfig(epochs=1))


def test_protocol_names():
    assert protocol_name("zso3") == "z/so3"
    assert protocol_name("SO3/SO3") == "so3/so3"
    with pytest.raises(ValueError):
        protocol_name("xy")


def test_untrained_network_is_near_chance():
    data = synth_dataset(per_class=40, n_points=96, seed=11)
    accs = []
    for seed in range(3):
        net = build_classifier(tiny_config(num_classes=5), seed=seed)
        accs.append(accuracy(net, data))
    # an untrained net may collapse to one class, which still scores 1/5
    p, n = 0.2, len(data)
    assert abs(np.mean(accs) - p) < 3 * np.sqrt(p * (1 - p) / (n * 3)) + 0.1


def test_single_cloud_accuracy_is_binary(tiny_data):
    net = build_classifier(tiny_config())
    assert evaluate_protocol(net, tiny_data[:1], "z/so3") in (0.0, 1.0)


def test_protocol_sweep_consistency(tiny_data):
    net = build_classifier(tiny_config(), seed=3)
    report = protocol_sweep(net, tiny_data, resamples=2)
    assert report["std"] < 1e-9   # an invariant network scores identically under every rotation draw
    assert set(report) == {"z/z", "so3/so3", "z/so3", "std"}


def test_ablation_grid_sizes():
    assert len(GRIDS["risp"]) == 5
    assert len(GRIDS["surfaces"]) == 4
    assert len(GRIDS["attention"]) == 5


def test_ablation_report_rows(tiny_data):
    base = tiny_config()
    rows = ablation_sweep(base, tiny_data[:6], tiny_data[6:], C.TrainConfig(epochs=1, batch_size=3),
                          grids=("surfaces",))
    assert [r["row"] for r in rows] == ["1", "2", "3", "4"]
    for r in rows:
        assert {"config_hash", "accuracy", "seed", "table", "row"} <= set(r)
    assert len({r["config_hash"] for r in rows}) == 4


def test_ablation_row_filter_shares_cache(tiny_data):
    base = tiny_config()
    rows = ablation_sweep(base, tiny_data[:6], tiny_data[6:], C.TrainConfig(epochs=1, batch_size=3),
                          grids=("surfaces", "attention"), rows={"surfaces": ["2"], "attention": ["A", "E"]})
    assert [(r["table"], r["row"]) for r in rows] == [("surfaces", "2"), ("attention", "A"), ("attention", "E")]
    # the default configuration appears in both grids and is trained once
    assert rows[0]["config_hash"] == rows[1]["config_hash"]
    assert rows[0]["accuracy"] == rows[1]["accuracy"]
