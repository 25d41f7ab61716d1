import numpy as np
import pytest

from ocusim.checkpoint import (
    load_network,
    load_ocu_model,
    read_checkpoint,
    save_network,
    save_ocu_model,
    write_checkpoint,
)
from ocusim.networks import build_classifier, build_denoiser, calibrate_optical_layers
from ocusim.optics import OcuGeometry, OcuModel


def small_geometry():
    return OcuGeometry(metaunits_per_layer=6, num_inputs=9, num_layers=3)


class TestOcuCheckpoint:
    def test_round_trip_values(self, tmp_path):
        geom = small_geometry()
        model = OcuModel.random_init(geom, np.random.default_rng(0))
        model.detection_gain = 2.4387e-61
        path = tmp_path / "unit.ckpt"
        save_ocu_model(path, model, {"seed": 7, "epochs": 40})
        loaded, meta = load_ocu_model(path)
        assert np.array_equal(loaded.phases, model.phases)
        assert loaded.detection_gain == model.detection_gain
        assert loaded.geometry.wavelength == geom.wavelength
        assert np.array_equal(loaded.geometry.input_positions, geom.input_positions)
        assert meta["seed"] == "7"

    def test_save_load_save_is_byte_identical(self, tmp_path):
        geom = small_geometry()
        model = OcuModel.random_init(geom, np.random.default_rng(1))
        model.detection_gain = 1.7e-55
        first = tmp_path / "a.ckpt"
        second = tmp_path / "b.ckpt"
        save_ocu_model(first, model, {"seed": 1})
        loaded, meta = load_ocu_model(first)
        save_ocu_model(second, loaded, {"seed": meta["seed"]})
        assert first.read_bytes() == second.read_bytes()

    def test_rejects_wrong_kind(self, tmp_path):
        path = tmp_path / "x.ckpt"
        write_checkpoint(path, "mystery", {}, None, {})
        with pytest.raises(ValueError, match="kind|expected"):
            load_ocu_model(path)

    def test_rejects_unknown_version(self, tmp_path):
        path = tmp_path / "x.ckpt"
        path.write_text("ocusim-checkpoint 99\nkind = ocu\n")
        with pytest.raises(ValueError, match="version"):
            read_checkpoint(path)

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "x.ckpt"
        path.write_text("something else\n")
        with pytest.raises(ValueError):
            read_checkpoint(path)


class TestNetworkCheckpoint:
    def test_classifier_round_trip(self, tmp_path):
        geom = small_geometry()
        topo = {"kernels": 2, "channels": 1, "image_size": 8, "n_classes": 3,
                "seed": 4, "optical": "true", "hidden": "16 8", "pool": "mean"}
        net = build_classifier(geom, 2, 1, 8, 3, seed=4, hidden=(16, 8))
        x = np.random.default_rng(2).random((4, 1, 8, 8))
        calibrate_optical_layers(net, x)
        before = net.forward(x)
        path = tmp_path / "clf.ckpt"
        save_network(path, net, "classifier", geom, topo, {"seed": 4})
        loaded, kind, topo2, _ = load_network(path)
        assert kind == "classifier"
        assert topo2["kernels"] == "2"
        assert np.array_equal(loaded.forward(x), before)

    def test_denoiser_round_trip_with_bn_stats(self, tmp_path):
        geom = small_geometry()
        topo = {"input_kernels": 2, "middle_kernels": 2, "middle_layers": 1,
                "in_channels": 1, "seed": 5, "optical": "true"}
        net = build_denoiser(geom, 2, 2, seed=5)
        x = np.random.default_rng(3).random((4, 1, 10, 10))
        calibrate_optical_layers(net, x)
        net.forward(x, training=True)  # move the BN running stats
        before = net.forward(x, training=False)
        path = tmp_path / "dn.ckpt"
        save_network(path, net, "denoiser", geom, topo)
        loaded, kind, _, _ = load_network(path)
        assert kind == "denoiser"
        assert np.array_equal(loaded.forward(x, training=False), before)

    def test_electrical_round_trip(self, tmp_path):
        geom = small_geometry()
        topo = {"kernels": 2, "channels": 1, "image_size": 8, "n_classes": 2,
                "seed": 6, "optical": "false", "hidden": "8", "pool": "max"}
        net = build_classifier(geom, 2, 1, 8, 2, seed=6, optical=False,
                               hidden=(8,), pool_mode="max")
        x = np.random.default_rng(4).random((2, 1, 8, 8))
        before = net.forward(x)
        path = tmp_path / "e.ckpt"
        save_network(path, net, "classifier", geom, topo)
        loaded, _, _, _ = load_network(path)
        assert np.array_equal(loaded.forward(x), before)
