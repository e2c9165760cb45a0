import numpy as np
import pytest

from gradcheck import numeric_grad, rel_err
from hbdr import layers as L
from hbdr.dataio import LabeledDataset, stratified_split
from hbdr.filters import gabor_bank, gaussian_bank
from hbdr.tensor import make_rng
from hbdr.training import (ConfigError, ConvNet, NetworkConfig, TrainReport, build_network,
                           confusion_matrix, evaluate, feature_shapes, param_breakdown, param_count,
                           parse_config, predict_labels, sgd_step, train)

SMALL = dict(image_size=10, kernel=3, c1_maps=2, c2_maps=4, f1_units=6, n_classes=3)


def synthetic_dataset(per_class=8, size=32, n_classes=10, seed=0):
    """Each class is a bright horizontal line at its own row, plus noise."""
    g = np.random.default_rng(seed)
    labels = np.repeat(np.arange(n_classes), per_class)
    images = g.random((labels.size, 1, size, size)).astype(np.float32) * 0.2
    for i, c in enumerate(labels):
        images[i, 0, int(c * size / n_classes), :] = 1.0
    return LabeledDataset(images, labels)


# ------------------------------------------------------------------ architecture

def test_table1_parameter_count():
    net = build_network(NetworkConfig())
    assert param_breakdown(net) == {"c1": 832, "s1": 0, "c2": 53_248, "s2": 0,
                                    "f1": 519_168, "f2": 3_130}
    assert param_count(net) == 576_378


def test_single_fc_layer_count_and_empty_network():
    class Head:
        def params(self):
            layer = L.FcLayer(np.zeros((10, 312)), np.zeros(10))
            return {"w": layer.weights, "b": layer.bias}

    assert param_count(Head()) == 3_130
    assert param_count(None) == 0


def test_table1_shape_ladder():
    cfg = NetworkConfig()
    net = build_network(cfg)
    shapes = net.trace_shapes(np.zeros((1, 32, 32), np.float32))
    expected = [(32, 28, 28), (32, 14, 14), (64, 10, 10), (64, 5, 5), (312,), (10,)]
    assert [tuple(s) for s in shapes] == expected
    assert [tuple(s) for s in feature_shapes(cfg)] == expected


def test_gabor_variant_routes_bank_to_c1():
    net = build_network(NetworkConfig(variant="cnn-gabor"))
    np.testing.assert_array_equal(net.c1.kernels, gabor_bank(32, 5).astype(np.float32))


def test_gaussian_variant_routes_bank_to_c1():
    net = build_network(NetworkConfig(variant="cnn-gaussian", seed=4))
    bank = gaussian_bank(32, 5, 0.1, make_rng(4, "init"))
    np.testing.assert_array_equal(net.c1.kernels, bank.astype(np.float32))


def test_init_is_centered_and_scaled():
    cfg = NetworkConfig()
    net = build_network(cfg)
    np.testing.assert_allclose(net.c2.kernels.mean(axis=(1, 2, 3)), 0, atol=1e-6)
    np.testing.assert_allclose(net.f1.weights.mean(axis=1), 0, atol=1e-6)
    assert net.c2.kernels.std() == pytest.approx(8 / np.sqrt(800), rel=0.02)
    assert net.f2.weights.std() == pytest.approx(1 / np.sqrt(312), rel=0.1)
    plain = build_network(NetworkConfig(init_gain=1.0, center_init=False))
    assert plain.c2.kernels.std() == pytest.approx(1 / np.sqrt(800), rel=0.02)


def test_inconsistent_f1_is_rejected():
    net = build_network(NetworkConfig())
    bad = L.FcLayer(np.zeros((312, 1599), np.float32), np.zeros(312, np.float32))
    with pytest.raises(ValueError, match="F1"):
        ConvNet(net.c1, net.c2, bad, net.f2)


def test_unpoolable_geometry_is_rejected():
    with pytest.raises(ValueError):
        NetworkConfig(image_size=8, kernel=3)


def test_dbn_is_not_built_here():
    with pytest.raises(ValueError):
        build_network(NetworkConfig(variant="dbn"))


# ------------------------------------------------------------------ end-to-end gradients

def _random_small_net(seed):
    g = np.random.default_rng(seed)
    variant = str(g.choice(["cnn-gaussian", "cnn-gaussian-dropout"]))
    loss = str(g.choice(["xent", "mse"]))
    cfg = NetworkConfig(variant=variant, loss=loss, seed=seed, **SMALL)
    net = build_network(cfg, dtype=np.float64)
    for p in net.params().values():
        p += g.normal(0, 0.5, p.shape)
    x = g.random((int(g.integers(1, 4)), 1, 10, 10))
    y = g.integers(0, 3, x.shape[0])
    return net, x, y


def test_shrunk_cnn_gradients_match_finite_differences():
    worst = 0.0
    for seed in range(100):
        net, x, y = _random_small_net(seed)
        # a fresh generator per call replays the same dropout masks
        f = lambda: net.loss_and_grads(x, y, make_rng(seed, "dropout"))[0]
        _, grads = net.loss_and_grads(x, y, make_rng(seed, "dropout"))
        for name, p in net.params().items():
            worst = max(worst, rel_err(grads[name], numeric_grad(f, p)))
    assert worst <= 1e-4


# ------------------------------------------------------------------ sgd

def test_sgd_step_by_hand():
    params = {"a": np.array([1.0, -2.0]), "b": np.array([3.0])}
    sgd_step(params, {"a": np.array([0.5, 0.5]), "b": np.array([10.0])}, 0.1, frozen=("b",))
    np.testing.assert_allclose(params["a"], [0.95, -2.05])
    np.testing.assert_array_equal(params["b"], [3.0])
    sgd_step(params, {"a": np.array([9.0, 9.0])}, 0.0)
    np.testing.assert_allclose(params["a"], [0.95, -2.05])


def test_sgd_step_reduces_quadratic():
    a = np.diag([1.0, 4.0])
    x = {"x": np.array([1.0, 1.0])}
    f = lambda v: 0.5 * v @ a @ v
    before = f(x["x"])
    sgd_step(x, {"x": a @ x["x"]}, 0.1)
    assert f(x["x"]) < before


# ------------------------------------------------------------------ evaluation

class Fixed:
    def __init__(self, probs):
        self.probs = probs

    def predict_proba(self, x):
        idx = x[:, 0, 0, 0].astype(int)
        return self.probs[idx]


def test_perfect_predictor():
    labels = np.repeat(np.arange(10), 5)
    images = np.zeros((50, 1, 2, 2))
    images[:, 0, 0, 0] = np.arange(50)
    acc, cm = evaluate(Fixed(np.eye(10)[labels]), images, labels)
    assert acc == 1.0
    np.testing.assert_array_equal(cm, 5 * np.eye(10))


def test_random_predictor_is_near_chance():
    labels = np.repeat(np.arange(10), 100)
    images = np.zeros((1000, 1, 2, 2))
    images[:, 0, 0, 0] = np.arange(1000)
    probs = np.random.default_rng(0).random((1000, 10))
    acc, cm = evaluate(Fixed(probs), images, labels)
    assert abs(acc - 0.1) <= 0.03
    assert cm.sum() == 1000
    np.testing.assert_array_equal(cm.sum(axis=1), 100)
    assert acc == np.trace(cm) / cm.sum()


def test_confusion_rows_are_true_class():
    cm = confusion_matrix([0, 0, 1], [1, 0, 1], 3)
    np.testing.assert_array_equal(cm, [[1, 1, 0], [0, 1, 0], [0, 0, 0]])


def test_evaluate_empty_split():
    with pytest.raises(ValueError):
        evaluate(Fixed(np.eye(10)), np.zeros((0, 1, 2, 2)), np.zeros(0, int))


# ------------------------------------------------------------------ training loop

def small_setup(variant="cnn-gaussian", **kw):
    cfg = NetworkConfig(variant=variant, **{**SMALL, "n_classes": 10}, **kw)
    ds = stratified_split(synthetic_dataset(size=10), 6, seed=cfg.seed)
    return cfg, ds


def test_train_zero_lr_keeps_parameters():
    cfg, ds = small_setup(lr=0.0, epochs=3)
    net = build_network(cfg)
    before = {k: v.copy() for k, v in net.params().items()}
    rep = train(net, ds, cfg)
    for k, v in net.params().items():
        np.testing.assert_array_equal(v, before[k])
    assert len(rep.test_accuracy) == 3


def test_one_epoch_smoke_at_full_size():
    cfg = NetworkConfig(epochs=1)
    ds = stratified_split(synthetic_dataset(per_class=6), 5, seed=1)
    rep = train(build_network(cfg), ds, cfg)
    assert len(rep.test_accuracy) == 1
    assert np.isfinite(rep.train_loss[0])
    np.testing.assert_array_equal(rep.confusion.sum(axis=1), 1)


def test_same_seed_gives_identical_reports():
    reports = []
    for _ in range(2):
        cfg, ds = small_setup("cnn-gaussian-dropout", epochs=2)
        net = build_network(cfg)
        reports.append((train(net, ds, cfg), net))
    (r1, n1), (r2, n2) = reports
    assert r1.train_loss == r2.train_loss and r1.test_accuracy == r2.test_accuracy
    for k in n1.params():
        assert n1.params()[k].tobytes() == n2.params()[k].tobytes()


def test_dropout_variant_with_keep_prob_one_matches_plain_cnn():
    runs = []
    for variant in ("cnn", "cnn-dropout"):
        cfg, ds = small_setup(variant, epochs=2, keep_prob=1.0)
        runs.append(train(build_network(cfg), ds, cfg))
    assert runs[0].train_loss == runs[1].train_loss
    assert runs[0].test_accuracy == runs[1].test_accuracy


def test_each_epoch_visits_the_training_set_once():
    cfg, ds = small_setup(epochs=3, batch_size=7)
    ds.images[:, 0, 0, 0] = np.arange(len(ds))
    seen = []

    class Recorder:
        frozen = ()

        def params(self):
            return {}

        def loss_and_grads(self, x, y, rng=None):
            seen.extend(x[:, 0, 0, 0].astype(int).tolist())
            return 0.0, {}

        def predict_proba(self, x):
            return np.tile(np.eye(10)[0], (x.shape[0], 1))

    train(Recorder(), ds, cfg)
    n = len(ds.train_idx)
    epochs = [seen[e * n:(e + 1) * n] for e in range(3)]
    for e in epochs:
        assert sorted(e) == ds.train_idx.tolist()
    assert epochs[0] != epochs[1]
    assert epochs[0] == make_rng(cfg.seed, "shuffle").permutation(ds.train_idx).tolist()


def test_training_learns_synthetic_lines():
    cfg = NetworkConfig(variant="cnn-gaussian", image_size=16, c1_maps=4, c2_maps=8, f1_units=20,
                        epochs=40, lr=0.5)
    ds = stratified_split(synthetic_dataset(per_class=20, size=16), 15, seed=1)
    rep = train(build_network(cfg), ds, cfg)
    assert rep.final_accuracy >= 0.9
    assert rep.train_loss[-1] < rep.train_loss[0]


def test_save_best_restores_best_epoch():
    cfg, ds = small_setup(epochs=6, lr=0.5)
    net = build_network(cfg)
    rep = train(net, ds, cfg, save_best=True)
    assert rep.best_epoch == int(np.argmax(rep.test_accuracy)) + 1
    acc, _ = evaluate(net, ds.images[ds.test_idx], ds.labels[ds.test_idx])
    assert acc == rep.best_accuracy


def test_train_requires_split():
    cfg, ds = small_setup()
    with pytest.raises(ValueError):
        train(build_network(cfg), ds.subset(np.arange(10)), cfg)


def test_report_csv(tmp_path):
    rep = TrainReport([0.5, 0.25], [0.75, 0.875], [1.0, 2.0], np.eye(2, dtype=int), [(4, 1, 0)])
    rep.write_csv(tmp_path)
    assert (tmp_path / "report.csv").read_text() == \
        "epoch,train_loss,test_accuracy\n1,0.5,0.75\n2,0.25,0.875\n"
    assert (tmp_path / "confusion.csv").read_text() == "1,0\n0,1\n"
    assert (tmp_path / "misclassified.csv").read_text() == "index,true,predicted\n4,1,0\n"


# ------------------------------------------------------------------ config

def test_config_text_round_trip():
    cfg = NetworkConfig(variant="cnn-gabor", epochs=3, keep_prob=0.8, dbn_hidden=(50, 20),
                        binarize=0.5, freeze_c1=True)
    assert parse_config(cfg.to_text()) == cfg


def test_keep_prob_defaults_follow_variant():
    assert NetworkConfig(variant="cnn-gabor-dropout").keep_prob == 0.5
    assert NetworkConfig(variant="cnn-gabor").keep_prob == 1.0


def test_parse_config_errors_name_the_line():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config("epochs = 3\nlearning_speed = 4\n")
    with pytest.raises(ConfigError, match="line 1"):
        parse_config("epochs three\n")
    with pytest.raises(ConfigError, match="line 1"):
        parse_config("epochs = three\n")
    with pytest.raises(ConfigError):
        parse_config("variant = cnn-magic\n")


def test_parse_config_comments_dashes_and_overrides():
    cfg = parse_config("# comment\nbatch-size = 20  # trailing\nepochs = 4\n", {"epochs": 9, "lr": None})
    assert cfg.batch_size == 20 and cfg.epochs == 9 and cfg.lr == 0.1


def test_parallel_prediction_matches_serial():
    net = build_network(NetworkConfig(variant="cnn-gabor"))
    x = np.random.default_rng(0).random((130, 1, 32, 32)).astype(np.float32)
    serial = predict_labels(net, x, batch_size=20)
    np.testing.assert_array_equal(predict_labels(net, x, batch_size=20, workers=4), serial)
