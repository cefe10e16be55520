"""Unit tests for report emission and the command-line interface."""
import numpy as np
import pytest

from qpursuit.embedding_store import (
    EmbeddingDataset,
    SynthSpec,
    load_dataset,
    save_dataset,
    synth_gaussian_mixture,
)
from qpursuit.pursuit_nets import PursuitModel
from qpursuit.query_dictionary import init_random
from qpursuit.report_cli import (
    AccuracyCurve,
    ExplanationTrace,
    accuracy_curve,
    cli_main,
    emit_reports,
    explanation_trace,
    random_instance,
)


def _data(c=3, d=12, per_class=30, seed=0):
    return synth_gaussian_mixture(SynthSpec(
        num_classes=c, dim=d, samples_per_class=per_class,
        center_separation=20.0, within_cluster_std=1.0, seed=seed))


def _model(data, n=6, seed=0):
    return PursuitModel(init_random(n, data.dim, seed), data.num_classes,
                        hidden=(16, 16), seed=seed + 1)


# -- dataclasses and reports ------------------------------------------------------

def test_curve_validates_range():
    with pytest.raises(ValueError):
        AccuracyCurve([0.5, 1.2])


def test_trace_validates_distinct_indices_and_posteriors():
    post = np.array([0.5, 0.5])
    with pytest.raises(ValueError, match="distinct"):
        ExplanationTrace([(0, 1, post), (0, -1, post)], prediction=0)
    with pytest.raises(ValueError, match="sum"):
        ExplanationTrace([(0, 1, np.array([0.9, 0.3]))], prediction=0)


def test_accuracy_curve_length_and_budget_check():
    data = _data()
    model = _model(data)
    curve = accuracy_curve(model, data, budget=3)
    assert len(curve.accuracies) == 3
    with pytest.raises(ValueError, match="budget"):
        accuracy_curve(model, data, budget=7)


def test_explanation_trace_structure():
    data = _data()
    model = _model(data)
    trace = explanation_trace(model, data.embeddings[0].astype(np.float64),
                              budget=4)
    assert len(trace.steps) <= 4
    for idx, ans, post in trace.steps:
        assert 0 <= idx < 6 and ans in (-1, 1)
        assert post.sum() == pytest.approx(1.0, abs=1e-9)
    assert 0 <= trace.prediction < 3


def test_explanation_trace_stops_at_loose_entropy_threshold():
    data = _data()
    model = _model(data)
    trace = explanation_trace(model, data.embeddings[0].astype(np.float64),
                              budget=4, entropy_threshold=10.0)
    assert trace.steps == []


def test_emit_reports_names_and_byte_identical_reemission(tmp_path):
    curve = AccuracyCurve([0.5, 0.75], dataset_tag="toy", model_tag="m", seed=3)
    trace = ExplanationTrace([(1, -1, np.array([0.25, 0.75]))],
                             prediction=1, sample_id=7)
    matrices = {"cc": np.array([[0.1, 0.9], [0.4, 0.6]])}
    first = emit_reports([curve], [trace], matrices, tmp_path)
    names = {p.name for p in first}
    assert names == {"curve_toy_m_s3.csv", "curve_toy_m_s3.svg",
                     "trace_sample7.csv", "matrix_cc.csv"}
    blobs = {p.name: p.read_bytes() for p in first}
    second = emit_reports([curve], [trace], matrices, tmp_path)
    assert {p.name: p.read_bytes() for p in second} == blobs
    text = (tmp_path / "curve_toy_m_s3.csv").read_text()
    assert text == "k,accuracy\n1,0.500000\n2,0.750000\n"


def test_random_instance_is_valid():
    inst = random_instance(3, 4, np.random.default_rng(0))
    assert inst.table.shape == (8, 4)
    assert inst.table.sum() == pytest.approx(1.0, abs=1e-12)


# -- CLI ---------------------------------------------------------------------------

_FAST = ["--phase-epochs", "2,1,1,1", "--dict-size", "6", "--budget", "3"]


def test_cli_synth_train_evaluate_explain_pipeline(tmp_path, capsys):
    out = tmp_path / "out"
    rc = cli_main(["synth-data", "--out", str(out), "--classes", "3",
                   "--dim", "12", "--samples-per-class", "30", "--seed", "1"])
    assert rc == 0
    data_path = out / "synth.embd"
    assert data_path.exists()

    rc = cli_main(["train", "--data", str(data_path), "--out", str(out),
                   "--seed", "2", *_FAST])
    assert rc == 0
    assert (out / "trainlog.csv").exists()
    assert (out / "model.prms").exists()

    rc = cli_main(["evaluate", "--data", str(data_path),
                   "--checkpoint", str(out / "model.prms"),
                   "--out", str(out), "--seed", "2", *_FAST])
    assert rc == 0
    assert list(out.glob("curve_*.csv"))

    rc = cli_main(["explain", "--data", str(data_path),
                   "--checkpoint", str(out / "model.prms"),
                   "--out", str(out), "--seed", "2", "--samples", "2", *_FAST])
    assert rc == 0
    assert (out / "trace_sample0.csv").exists()
    assert (out / "matrix_class_conditionals.csv").exists()
    capsys.readouterr()


def test_cli_train_joint_variant(tmp_path, capsys):
    out = tmp_path / "out"
    cli_main(["synth-data", "--out", str(out), "--classes", "2", "--dim", "8",
              "--samples-per-class", "20", "--seed", "0"])
    rc = cli_main(["train", "--data", str(out / "synth.embd"), "--out",
                   str(out), "--joint", *_FAST])
    assert rc == 0
    capsys.readouterr()


def test_cli_oracle_check(tmp_path, capsys):
    rc = cli_main(["oracle-check", "--out", str(tmp_path), "--n", "4",
                   "--classes", "3", "--trials", "50"])
    assert rc == 0
    assert "agreement" in capsys.readouterr().out


def test_cli_export_baseline_answers(tmp_path, capsys):
    out = tmp_path / "out"
    data = _data()
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(data, out / "data.embd")
    rng = np.random.default_rng(3)
    vecs = rng.standard_normal((4, data.dim)).astype(np.float32)
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    concepts = EmbeddingDataset(vecs, np.zeros(4, dtype=np.uint32),
                                num_classes=2,
                                concept_names=["a", "b", "c", "d"])
    save_dataset(concepts, out / "concepts.embd")
    rc = cli_main(["export-baseline-answers", "--data", str(out / "data.embd"),
                   "--concepts", str(out / "concepts.embd"),
                   "--out", str(out)])
    assert rc == 0
    assert (out / "matrix_soft_answers.csv").exists()
    assert (out / "matrix_hard_answers.csv").exists()
    capsys.readouterr()


def test_cli_reports_errors_with_nonzero_exit(tmp_path, capsys):
    rc = cli_main(["train", "--data", str(tmp_path / "missing.embd"),
                   "--out", str(tmp_path)])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_cli_train_config_file(tmp_path, capsys):
    out = tmp_path / "out"
    cli_main(["synth-data", "--out", str(out), "--classes", "2", "--dim", "8",
              "--samples-per-class", "20", "--seed", "0"])
    cfg = tmp_path / "plan.cfg"
    cfg.write_text("dict_size = 5\nbudget = 2\nwarmup_epochs = 1\n"
                   "querier_random_epochs = 1\nquerier_biased_epochs = 1\n"
                   "dictionary_epochs = 1\nhidden_width = 16\nbatch_size = 16\n")
    rc = cli_main(["train", "--data", str(out / "synth.embd"),
                   "--out", str(out), "--config", str(cfg)])
    assert rc == 0
    capsys.readouterr()
