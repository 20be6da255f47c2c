import hashlib

import numpy as np
import pytest
import scipy.sparse as sp

from latib.container import ContainerError, read_manifest, write_arrays, read_arrays
from latib.datamodel import (
    CONFIG_KEYS, ConfigError, DatasetError, HyperParams, NoisyDataset, PhaseSchedule, RunConfig,
    TransitionMatrix, build_config, check_label_distributions, dump_config, load_config, load_dataset,
    one_hot, parse_config, save_config, save_dataset,
)
from latib.harness.data import generate_blobs, generate_sbm_graph


def _hash(ds):
    h = hashlib.sha256()
    for arr in (ds.features, ds.labels, ds.true_labels, ds.noise_mask, ds.train_mask, ds.val_mask, ds.test_mask):
        h.update(arr.tobytes())
    return h.hexdigest()


def test_one_hot_rows_are_distributions():
    y = one_hot([2, 0, 1], 3)
    check_label_distributions(y, 3)
    assert y.argmax(1).tolist() == [2, 0, 1]


def test_label_distribution_checks():
    with pytest.raises(DatasetError):
        check_label_distributions(np.array([[0.5, 0.6]]))
    with pytest.raises(DatasetError):
        check_label_distributions(np.array([[1.2, -0.2]]))
    check_label_distributions(np.array([[0.5, 0.5 + 5e-10]]))


def test_dataset_is_read_only():
    ds = generate_blobs(seed=0)
    with pytest.raises(ValueError):
        ds.labels[0, 0] = 0.0


def test_dataset_rejects_overlapping_splits():
    n = 4
    m = np.ones(n, bool)
    with pytest.raises(DatasetError, match="disjoint"):
        NoisyDataset(np.zeros((n, 2)), one_hot([0, 1, 0, 1], 2), np.array([0, 1, 0, 1]), np.zeros(n, bool),
                     m, m, np.zeros(n, bool), 2)


def test_dataset_rejects_bad_true_labels():
    with pytest.raises(DatasetError, match="class range"):
        NoisyDataset(np.zeros((2, 2)), one_hot([0, 1], 2), np.array([0, 2]), np.zeros(2, bool),
                     np.ones(2, bool), np.zeros(2, bool), np.zeros(2, bool), 2)


def test_empty_dataset_round_trip(tmp_path):
    ds = NoisyDataset(np.zeros((0, 3)), np.zeros((0, 2)), np.zeros(0, int), np.zeros(0, bool),
                      np.zeros(0, bool), np.zeros(0, bool), np.zeros(0, bool), 2)
    save_dataset(ds, tmp_path / "empty.latib")
    back = load_dataset(tmp_path / "empty.latib")
    assert len(back) == 0 and back == ds


def test_blob_round_trip_bit_exact(tmp_path):
    ds = generate_blobs(4, 8, 2000, 8.0, seed=3)
    save_dataset(ds, tmp_path / "b.latib")
    back = load_dataset(tmp_path / "b.latib")
    assert back == ds
    assert _hash(back) == _hash(ds)
    assert back.features.dtype == np.float64 and back.true_labels.dtype == np.int64


def test_graph_round_trip(tmp_path):
    ds = generate_sbm_graph(seed=1)
    save_dataset(ds, tmp_path / "g.latib")
    back = load_dataset(tmp_path / "g.latib")
    assert back == ds
    assert (back.adjacency != ds.adjacency).nnz == 0


def test_truncated_array_names_the_array(tmp_path):
    ds = generate_blobs(seed=0)
    path = tmp_path / "t.latib"
    save_dataset(ds, path)
    data = path.read_bytes()
    path.write_bytes(data[:-100])
    with pytest.raises(ContainerError, match="split_masks"):
        load_dataset(path)


def test_corrupted_block_fails_checksum(tmp_path):
    path = tmp_path / "c.latib"
    write_arrays(path, {"a": np.arange(10.0)})
    data = bytearray(path.read_bytes())
    data[-3] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(ContainerError, match="checksum"):
        read_arrays(path)


def test_manifest_lists_names_shapes_types(tmp_path):
    path = tmp_path / "m.latib"
    write_arrays(path, {"x": np.zeros((2, 3), np.float32), "y": np.arange(4)}, {"k": 1})
    man = read_manifest(path)
    assert [(a["name"], a["shape"], a["dtype"]) for a in man["arrays"]] == [("x", [2, 3], "<f4"), ("y", [4], "<i8")]
    assert man["meta"] == {"k": 1}


def test_not_a_container(tmp_path):
    path = tmp_path / "junk"
    path.write_bytes(b"hello")
    with pytest.raises(ContainerError):
        read_arrays(path)


def test_feature_count_mismatch_detected(tmp_path):
    ds = generate_blobs(seed=0)
    arrays, meta = read_arrays(_save(ds, tmp_path / "a"))
    meta["num_examples"] = 5
    write_arrays(tmp_path / "b", arrays, meta)
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "b")


def _save(ds, path):
    save_dataset(ds, path)
    return path


# ---------------------------------------------------------------------------
# transition matrices and configuration

def test_transition_matrix_validation():
    with pytest.raises(ValueError):
        TransitionMatrix(np.array([[0.9, 0.2], [0.0, 1.0]]), "symmetric", 0.1)


def test_config_with_documented_values_is_valid():
    cfg = parse_config("beta = 0.001\ngamma = 0.01\ndelta = 0.3\n")
    assert (cfg.params.beta, cfg.params.gamma, cfg.params.delta) == (0.001, 0.01, 0.3)


def test_delta_zero_rejected():
    with pytest.raises(ConfigError, match=r"delta must be in \(0,1\]"):
        parse_config("delta = 0\n")


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="bogus"):
        parse_config("bogus = 1\n")


def test_bad_type_names_key():
    with pytest.raises(ConfigError, match="ema_period"):
        parse_config("ema_period = 2.5\n")


def test_confidence_bounds_straddle_half():
    with pytest.raises(ConfigError, match="0.5"):
        HyperParams(conf_hi=0.4)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "none.cfg")


def test_comments_and_defaults_echoed(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# header\nbeta = 0.002   # inline\nmode = vector\nepochs_warmup = 3\n")
    params, schedule, meta = load_config(path)
    assert params.beta == 0.002 and schedule.epochs_warmup == 3
    assert params.lambda_smooth == HyperParams().lambda_smooth
    assert "lambda_smooth" in meta["defaulted"] and "beta" not in meta["defaulted"]


def test_config_round_trip(tmp_path):
    cfg = parse_config("beta = 0.1\ntau = 0.75\nseed = 7\n")
    save_config(cfg, tmp_path / "c.cfg")
    back = load_config(tmp_path / "c.cfg")
    assert back == cfg
    assert dump_config(back) == dump_config(cfg)
    assert set(cfg.as_dict()) == set(CONFIG_KEYS)


def test_schedule_invariants():
    s = PhaseSchedule(2, 3, 4)
    assert s.total == 9
    assert [s.phase_of(e) for e in (1, 2, 3, 5, 6, 9)] == ["warmup"] * 2 + ["injection"] * 2 + ["robust"] * 2
    with pytest.raises(ConfigError):
        PhaseSchedule(0, 1, 1)


def test_with_replaces_nested_keys():
    cfg = RunConfig().with_(lr=0.01, epochs_robust=0, mode="graph")
    assert cfg.settings.lr == 0.01 and cfg.schedule.epochs_robust == 0 and cfg.mode == "graph"
    with pytest.raises(ConfigError):
        RunConfig().with_(nonsense=1)
    assert build_config({"seed": "3"}).seed == 3
