import sys
from pathlib import Path

import numpy as np
import pytest

from dropbench.attribution import oracle_attribution
from dropbench.autodiff import save_checkpoint
from dropbench.classifier import predict_probabilities
from dropbench.corruption import CorruptionPlan, run_corruption
from dropbench.errors import ConfigurationError, ScorerError
from dropbench.scorer import ExternalScorer, InProcessScorer

HELPER = str(Path(__file__).parent / "helpers" / "pyscorer.py")


def _stub(*args, timeout=20.0):
    return ExternalScorer([sys.executable, HELPER, *args], timeout=timeout)


# ---------------------------------------------------------------------------
# built-in path
# ---------------------------------------------------------------------------

def test_inprocess_matches_predict_probabilities(fixture_model, fixture_splits):
    batch = np.stack([s.values for s in fixture_splits.test[:10]])
    scorer = InProcessScorer(fixture_model.graph)
    a = scorer.score_batch(batch)
    b = predict_probabilities(fixture_model.graph, batch)
    assert a.tobytes() == b.tobytes()


def test_inprocess_capabilities(fixture_model):
    caps = InProcessScorer(fixture_model.graph, expects_t=128).capabilities
    assert caps["class_count"] == 2
    assert caps["expects_m"] == 4
    assert caps["expects_t"] == 128


# ---------------------------------------------------------------------------
# external protocol
# ---------------------------------------------------------------------------

def test_uniform_stub_handshake_and_scores():
    with _stub("--classes", "2", "--m", "2", "--t", "8") as scorer:
        assert scorer.capabilities == {"class_count": 2, "expects_m": 2, "expects_t": 8}
        scores = scorer.score_batch(np.zeros((5, 2, 8)))
        np.testing.assert_allclose(scores, 0.5)


def test_uniform_stub_yields_zero_drops(fixture_splits):
    samples = fixture_splits.test[:6]
    maps = {s.sample_id: oracle_attribution(s) for s in samples}
    with _stub("--classes", "2", "--m", "4", "--t", "128") as scorer:
        result = run_corruption(scorer, samples, maps,
                                CorruptionPlan("top", (0.25, 0.75), seed=0))
    assert all(abs(r.drop) <= 1e-12 for r in result.records)


def test_checkpoint_stub_round_trip_parity(fixture_model, fixture_splits, tmp_path):
    path = tmp_path / "model.json"
    save_checkpoint(fixture_model.graph, path)
    batch = np.stack([s.values for s in fixture_splits.test[:16]])
    direct = predict_probabilities(fixture_model.graph, batch)
    with _stub("--mode", "checkpoint", "--checkpoint", str(path)) as scorer:
        via_wire = scorer.score_batch(batch)
    assert np.max(np.abs(via_wire - direct)) <= 1e-6


def test_request_order_does_not_matter():
    with _stub("--classes", "3", "--m", "1", "--t", "4") as scorer:
        a = np.arange(12, dtype=float).reshape(3, 1, 4)
        first = scorer.score_batch(a)
        second = scorer.score_batch(a[::-1].copy())
        np.testing.assert_array_equal(first, second[::-1])


def test_dim_validation_reports_both_values():
    with _stub("--classes", "2", "--m", "4", "--t", "100") as scorer:
        with pytest.raises(ConfigurationError, match="100.*500|500.*100"):
            scorer.validate_dims(m=4, t=500)


def test_matching_dims_accepted():
    with _stub("--classes", "2", "--m", "4", "--t", "500") as scorer:
        scorer.validate_dims(m=4, t=500, class_count=2)


def test_missing_handshake_times_out():
    with pytest.raises(ScorerError, match="respond"):
        ExternalScorer([sys.executable, HELPER, "--mode", "silent"], timeout=1.5)


def test_malformed_line_is_scorer_error():
    with _stub("--mode", "malformed") as scorer:
        with pytest.raises(ScorerError, match="malformed"):
            scorer.score_batch(np.zeros((2, 4, 128)))


def test_wrong_id_is_scorer_error():
    with _stub("--mode", "wrong-id") as scorer:
        with pytest.raises(ScorerError, match="id"):
            scorer.score_batch(np.zeros((2, 4, 128)))


def test_process_exit_is_scorer_error():
    with _stub("--mode", "crash") as scorer:
        with pytest.raises(ScorerError, match="exited"):
            scorer.score_batch(np.zeros((2, 4, 128)))


def test_error_record_is_scorer_error():
    with _stub("--mode", "error-line") as scorer:
        with pytest.raises(ScorerError, match="simulated failure"):
            scorer.score_batch(np.zeros((2, 4, 128)))


def test_unlaunchable_command():
    with pytest.raises(ScorerError, match="could not start"):
        ExternalScorer(["/nonexistent/binary"])


def test_bad_probability_sums_rejected():
    # inline stub returning scores that sum to 0.8
    code = (
        "import sys, json\n"
        "for line in sys.stdin:\n"
        "    req = json.loads(line)\n"
        "    if 'hello' in req:\n"
        "        print(json.dumps({'class_count': 2, 'expects_m': None,"
        " 'expects_t': None}), flush=True)\n"
        "        continue\n"
        "    print(json.dumps({'id': req['id'],"
        " 'scores': [[0.5, 0.3]] * len(req['batch'])}), flush=True)\n"
    )
    with ExternalScorer([sys.executable, "-c", code], timeout=10.0) as scorer:
        with pytest.raises(ScorerError, match="sum to 1"):
            scorer.score_batch(np.zeros((2, 1, 4)))
