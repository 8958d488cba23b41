import json

import numpy as np
import pytest

from layerhess.local_hessian import all_local_hessians, all_neuron_block_hessians
from layerhess.network import FunctionalBlock, Network
from layerhess.numerics import sym_eigenvalues
from layerhess.snapshot import (INFINITE, SCHEMA_VERSION, Snapshot, SnapshotError,
                                StreamFormatError, capture, decode_real, encode_real,
                                read_header, read_stream, summary_of, validate, write_stream)
from layerhess.spectral import series_summary
from layerhess.training import CROSS_ENTROPY, backprop

from conftest import random_block

META = {"run_id": "r", "variant": "sure", "dataset": "toy", "task": "classification"}
SCORES = {"Accuracy": 0.5, "Precision": 0.5, "Recall": 0.5, "F1": 0.5, "AUC": 0.5,
          "train_loss": 0.7}


def snap_of(net, x, iteration=0, cap=2048, wide=False, scores=SCORES, meta=META):
    x = np.atleast_2d(x)
    _, grads = backprop(net, x, np.zeros(x.shape[0], dtype=int), CROSS_ENTROPY)
    hs = all_neuron_block_hessians(net, x[0]) if wide else all_local_hessians(net, x[0])
    return capture(net, grads, hs, scores, iteration, meta, hessian_store_cap=cap)


def small_net(rng, acts=("tanh", "sigmoid")):
    return Network([random_block(rng, 4, 3, acts[0]), random_block(rng, 2, 4, acts[1])])


def test_real_encoding():
    assert encode_real(float("inf")) == INFINITE and decode_real(INFINITE) == float("inf")
    assert encode_real(float("-inf")) is None and decode_real(None) == float("-inf")
    assert encode_real(2.5) == 2.5


def test_identity_layers_have_zero_hessian():
    rng = np.random.default_rng(0)
    net = Network([random_block(rng, 3, 2, "identity"), random_block(rng, 2, 3, "identity")])
    s = snap_of(net, rng.normal(size=(5, 2)))
    for i in range(2):
        rec = s.layer(i)
        assert all(e == 0 for e in rec["hessian_eigens"])
        assert rec["hessian_rank"] == 0 and rec["hessian_singular"]
        assert rec["hessian_condition"] == INFINITE
        assert rec["hessian_near_zero_fraction"] == 1.0
        assert rec["hessian_log_abs_det"] is None


def test_eigens_recomputable_from_stored_hessian(rng):
    s = snap_of(small_net(rng), rng.normal(size=(3, 3)))
    for i in range(2):
        rec = s.layer(i)
        h = np.array(rec["hessian"])
        np.testing.assert_allclose(sym_eigenvalues(h, method="jacobi"), rec["hessian_eigens"], atol=1e-10)
        assert rec["hessian_trace"] == pytest.approx(np.trace(h), abs=1e-12)


def test_wide_layer_elides_dense_hessian(rng):
    net = small_net(rng)
    s = snap_of(net, rng.normal(size=(3, 3)), cap=10, wide=True)
    assert s.layer(0)["hessian"] is None and s.layer(0)["hessian_spectral"] is None
    assert len(s.layer(0)["hessian_eigens"]) == 16
    full = snap_of(net, rng.normal(size=(3, 3)), cap=10_000)
    assert full.layer(1)["hessian"] is not None


def test_scores_pass_through(rng):
    s = snap_of(small_net(rng), rng.normal(size=(2, 3)))
    assert s.scores == SCORES


def test_mismatched_inputs(rng):
    net = small_net(rng)
    x = rng.normal(size=(1, 3))
    with pytest.raises(SnapshotError):
        capture(net, [np.zeros(16)], all_local_hessians(net, x[0]), SCORES, 0, META)
    with pytest.raises(SnapshotError):
        capture(net, [np.zeros(3), np.zeros(10)], all_local_hessians(net, x[0]), SCORES, 0, META)


def test_empty_stream_is_header_only(tmp_path):
    p = write_stream([], tmp_path / "e.jsonl")
    lines = p.read_text().splitlines()
    assert len(lines) == 1
    assert json.loads(lines[0])["schema_version"] == SCHEMA_VERSION
    assert read_stream(p) == [] and validate(p) == []


def test_round_trip_bit_exact(tmp_path, rng):
    net = small_net(rng, ("relu", "tanh"))
    snaps = [snap_of(net, rng.normal(size=(4, 3)), iteration=i) for i in range(3)]
    p = write_stream(snaps, tmp_path / "s.jsonl")
    back = read_stream(p)
    assert [b.to_dict() for b in back] == [s.to_dict() for s in snaps]
    w = np.array(back[1].layer(0)["weights"]).reshape(4, 3)
    assert np.array_equal(w, net.blocks[0].weights)
    q = write_stream(back, tmp_path / "t.jsonl")
    assert p.read_bytes() == q.read_bytes()


def test_order_preserved_for_many_snapshots(tmp_path):
    net = Network([FunctionalBlock(np.ones((1, 1)), np.zeros(1), "tanh")])
    base = snap_of(net, [[0.3]])
    snaps = [Snapshot.from_dict({**base.to_dict(), "iteration": i}) for i in range(100)]
    p = write_stream(snaps, tmp_path / "o.jsonl")
    assert [s.iteration for s in read_stream(p)] == list(range(100))
    assert validate(p) == []


def test_summaries_recomputable(rng):
    s = snap_of(small_net(rng), rng.normal(size=(3, 3)))
    for i in range(2):
        rec = s.layer(i)
        for name in ("weights", "gradient", "bias", "bias_gradient", "hessian_eigens"):
            stored = summary_of(rec, name)
            fresh = series_summary(rec[name])
            for attr in ("mean", "std", "min", "max"):
                assert abs(getattr(stored, attr) - getattr(fresh, attr)) <= 1e-12
            assert stored.counts == fresh.counts
            np.testing.assert_allclose(stored.welch, fresh.welch, atol=1e-12)


@pytest.fixture
def stream(tmp_path):
    rng = np.random.default_rng(3)
    net = small_net(rng)
    snaps = [snap_of(net, rng.normal(size=(3, 3)), iteration=i * 10) for i in range(3)]
    return write_stream(snaps, tmp_path / "v.jsonl")


def _rewrite(path, line_no, mutate):
    lines = path.read_text().splitlines()
    obj = json.loads(lines[line_no - 1])
    mutate(obj)
    lines[line_no - 1] = json.dumps(obj)
    path.write_text("\n".join(lines) + "\n")


def test_valid_stream(stream):
    assert validate(stream) == []


@pytest.mark.parametrize("mutate, field", [
    (lambda o: o["layers"]["layer.1"].pop("hessian_rank"), "layer.1.hessian_rank"),
    (lambda o: o.update(iteration=0), "iteration"),
    (lambda o: o["layers"]["layer.0"].update(hessian_rank=99), "layer.0.hessian_rank"),
    (lambda o: o["layers"]["layer.0"].update(hessian_condition=0.5), "layer.0.hessian_condition"),
    (lambda o: o["layers"]["layer.0"]["hessian_eigens"].reverse(), "layer.0.hessian_eigens"),
    (lambda o: o["layers"]["layer.0"].update(weights=[1.0]), "layer.0.weights"),
    (lambda o: o.update(variant="medium"), "variant"),
    (lambda o: o["scores"].pop("AUC"), "scores.AUC"),
    (lambda o: o["layers"].pop("layer.0"), "layers"),
])
def test_corruptions_reported(stream, mutate, field):
    _rewrite(stream, 3, mutate)
    found = validate(stream)
    assert found and all(v.line == 3 for v in found)
    assert field in {v.field for v in found}


def test_malformed_line_abort_or_skip(stream):
    lines = stream.read_text().splitlines()
    lines[2] = "{not json"
    stream.write_text("\n".join(lines) + "\n")
    with pytest.raises(StreamFormatError) as info:
        read_stream(stream)
    assert info.value.line == 3
    assert [s.iteration for s in read_stream(stream, skip_malformed=True)] == [0, 20]
    assert validate(stream)[0].line == 3


def test_version_mismatch(stream):
    lines = stream.read_text().splitlines()
    lines[0] = lines[0].replace(SCHEMA_VERSION, "9.9")
    stream.write_text("\n".join(lines) + "\n")
    with pytest.raises(StreamFormatError, match="schema version"):
        read_header(stream)
    assert validate(stream)[0].field == "header"


def test_empty_file_and_missing_header(tmp_path):
    p = tmp_path / "z.jsonl"
    p.write_text("")
    with pytest.raises(StreamFormatError):
        read_stream(p)
    p.write_text('{"run_id": "x"}\n')
    with pytest.raises(StreamFormatError):
        read_header(p)
