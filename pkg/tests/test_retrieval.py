import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsevox.errors import DataError
from sparsevox.retrieval import (EmbeddingSet, average_precision, evaluate,
                                 interpolated_precision, rank,
                                 read_embeddings_csv, select_queries_per_class,
                                 write_embeddings_csv, write_metrics_json,
                                 write_pr_csv)

from reference import ap_oracle, evaluate_oracle, pr11_oracle, rank_oracle


def test_rank_identical_vector_first(rng):
    corpus = rng.normal(size=(10, 4))
    order = rank(corpus[3], corpus)
    assert order[0] == 3


def test_rank_antipodal():
    v = np.array([1.0, 2.0, -1.0])
    corpus = np.vstack([v, -v])
    order = rank(v, corpus)
    assert list(order) == [0, 1]
    from sparsevox.retrieval import cosine_distances
    d = cosine_distances(v, corpus)
    np.testing.assert_allclose(d, [0.0, 2.0], atol=1e-12)


def test_rank_matches_brute_force(rng):
    for _ in range(20):
        corpus = rng.normal(size=(10, 5))
        q = rng.normal(size=5)
        np.testing.assert_array_equal(rank(q, corpus),
                                      rank_oracle(q, corpus))


def test_rank_rejects_zero_norm_query():
    with pytest.raises(ValueError):
        rank(np.zeros(3), np.eye(3))


def test_rank_scale_invariant(rng):
    corpus = rng.normal(size=(8, 4))
    q = rng.normal(size=4)
    base = rank(q, corpus)
    scaled = corpus * rng.uniform(0.1, 10.0, size=(8, 1))
    np.testing.assert_array_equal(base, rank(3.0 * q, scaled))


def test_rank_l2_metric(rng):
    corpus = rng.normal(size=(10, 4))
    q = rng.normal(size=4)
    np.testing.assert_array_equal(rank(q, corpus, metric="l2"),
                                  rank_oracle(q, corpus, metric="l2"))


# -- average precision -----------------------------------------------------------

def test_ap_relevant_at_ranks_one_and_three():
    ap = average_precision(["a", "b", "a", "b"], "a")
    assert ap == pytest.approx((1.0 + 2.0 / 3.0) / 2.0)


def test_ap_perfect_ranking():
    assert average_precision(["a", "a", "b", "b"], "a") == 1.0


def test_ap_single_relevant_last():
    n = 7
    labels = ["b"] * (n - 1) + ["a"]
    assert average_precision(labels, "a") == pytest.approx(1.0 / n)


def test_ap_no_relevant_is_none():
    assert average_precision(["b", "b"], "a") is None


@settings(max_examples=100)
@given(st.lists(st.sampled_from(["a", "b"]), min_size=1, max_size=12))
def test_ap_matches_oracle(labels):
    got = average_precision(labels, "a")
    want = ap_oracle(labels, "a")
    if want is None:
        assert got is None
    else:
        assert got == pytest.approx(want, abs=1e-12)


def test_ap_adjacent_transposition_monotonicity(rng):
    # moving a relevant item up one rank never decreases AP
    for _ in range(50):
        labels = list(rng.choice(["a", "b"], size=8))
        if "a" not in labels:
            labels[3] = "a"
        base = average_precision(labels, "a")
        for i in range(1, len(labels)):
            if labels[i] == "a" and labels[i - 1] == "b":
                swapped = labels.copy()
                swapped[i - 1], swapped[i] = swapped[i], swapped[i - 1]
                assert average_precision(swapped, "a") >= base
                break


@settings(max_examples=100)
@given(st.lists(st.sampled_from(["a", "b"]), min_size=1, max_size=12))
def test_pr11_matches_oracle(labels):
    got = interpolated_precision(labels, "a")
    want = pr11_oracle(labels, "a")
    if want is None:
        assert got is None
    else:
        np.testing.assert_allclose(got, want, atol=1e-12)


# -- evaluate ----------------------------------------------------------------------

def _random_embedding_set(rng, n=8, d=4, classes=2):
    vectors = rng.normal(size=(n, d))
    labels = np.array([f"c{i % classes}" for i in range(n)])
    ids = [f"s{i}" for i in range(n)]
    return EmbeddingSet(ids, vectors, labels)


def test_evaluate_perfect_separation():
    # two tight clusters, far apart in angle
    a = np.array([[1.0, 0.01], [1.0, -0.01], [1.0, 0.02]])
    b = np.array([[0.01, 1.0], [-0.01, 1.0], [0.02, 1.0]])
    emb = EmbeddingSet([f"s{i}" for i in range(6)], np.vstack([a, b]),
                       np.array(["a"] * 3 + ["b"] * 3))
    result = evaluate(emb)
    assert result.map == 1.0
    assert result.n_skipped == 0


def test_evaluate_matches_brute_force_exactly(rng):
    for n in range(3, 9):
        for trial in range(8):
            emb = _random_embedding_set(rng, n=n)
            result = evaluate(emb)
            oracle = evaluate_oracle(emb.vectors, list(emb.labels),
                                     list(range(n)))
            assert result.map == oracle["map"]
            assert result.auc == oracle["auc"]
            assert result.per_query_ap == oracle["aps"]
            np.testing.assert_array_equal(result.pr_curve[:, 1],
                                          oracle["curve"])


def test_evaluate_monte_carlo_random_labels():
    rng = np.random.default_rng(2718)
    n = 200
    vectors = rng.normal(size=(n, 16))
    labels = np.array(["a", "b"] * (n // 2))
    emb = EmbeddingSet([f"s{i}" for i in range(n)], vectors, labels)
    result = evaluate(emb)
    assert result.map == pytest.approx(0.5, abs=0.05)


def test_evaluate_excludes_query_from_candidates():
    # one member of class "a" alone: its queries find no relevant candidates
    vectors = np.array([[1.0, 0], [0, 1], [0.9, 0.1]])
    emb = EmbeddingSet(["q", "x", "y"], vectors,
                       np.array(["a", "b", "b"]))
    result = evaluate(emb)
    assert result.n_skipped == 1
    assert result.n_queries == 2


def test_evaluate_drops_zero_norm_rows():
    vectors = np.array([[1.0, 0], [0, 1], [0.0, 0.0], [0.8, 0.1], [0.1, 0.9]])
    labels = np.array(["a", "b", "a", "a", "b"])
    emb = EmbeddingSet([f"s{i}" for i in range(5)], vectors, labels)
    result = evaluate(emb)
    assert result.n_skipped == 1          # the zero-norm query
    assert result.n_queries == 4


def test_evaluate_empty_query_set():
    emb = _random_embedding_set(np.random.default_rng(0))
    with pytest.raises(ValueError):
        evaluate(emb, query_indices=[])


def test_select_queries_per_class_caps_with_warning(caplog):
    labels = np.array(["a"] * 3 + ["b"] * 10)
    rng = np.random.default_rng(1)
    with caplog.at_level("WARNING"):
        picked = select_queries_per_class(labels, 5, rng)
    assert (labels[picked] == "a").sum() == 3
    assert (labels[picked] == "b").sum() == 5
    assert any("capping" in r.message for r in caplog.records)


# -- file formats --------------------------------------------------------------------

def test_embeddings_csv_round_trip(tmp_path, rng):
    vectors = rng.normal(size=(5, 192)).astype(np.float32)
    ids = [f"mesh_{i}.off" for i in range(5)]
    labels = ["chair", "table", "chair", "sofa", "sofa"]
    path = tmp_path / "emb.csv"
    write_embeddings_csv(path, ids, labels, vectors)
    back = read_embeddings_csv(path)
    assert back.ids == ids
    assert list(back.labels) == labels
    # repr round-trip: parsed doubles equal the written float32 values exactly
    np.testing.assert_array_equal(back.vectors,
                                  vectors.astype(np.float64))


def test_embeddings_csv_rejects_bad_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("foo,bar\n1,2\n")
    with pytest.raises(DataError):
        read_embeddings_csv(p)


def test_embeddings_csv_rejects_ragged_rows(tmp_path):
    p = tmp_path / "ragged.csv"
    p.write_text("id,label,v0,v1\nx,a,1.0\n")
    with pytest.raises(DataError, match="line 2"):
        read_embeddings_csv(p)


def test_metrics_and_pr_outputs(tmp_path, rng):
    emb = _random_embedding_set(rng, n=8)
    result = evaluate(emb)
    mpath = tmp_path / "metrics.json"
    write_metrics_json(mpath, result)
    data = json.loads(mpath.read_text())
    assert set(data) == {"map", "auc", "n_queries", "n_skipped"}
    assert 0.0 <= data["map"] <= 1.0
    ppath = tmp_path / "pr.csv"
    write_pr_csv(ppath, result.pr_curve)
    lines = ppath.read_text().splitlines()
    assert lines[0] == "recall,precision"
    assert len(lines) == 12
