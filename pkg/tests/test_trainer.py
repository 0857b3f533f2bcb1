import numpy as np
import pytest

from sparsevox.dataset import scan_corpus
from sparsevox.errors import DataError, DivergenceError
from sparsevox.grid import SparseGrid, merge_batch
from sparsevox.losses import triplet_loss_backward
from sparsevox.network import build, default_spec, load_checkpoint
from sparsevox.synthetic import write_toy_corpus
from sparsevox.trainer import (TrainConfig, train_classification,
                               train_triplet)

from reference import assert_close_rel, central_difference

TOY_CHANNELS = (8, 12, 16, 24)


def toy_cfg(**overrides):
    base = dict(task="classify", epochs=3, batch_size=45, resolution=10,
                pad_to=14, augment=False, seed=5, val_fraction=0.1,
                val_interval=2, lr0=0.002, momentum=0.99, lr_decay=0.985)
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("trainer_corpus")
    write_toy_corpus(root, classes=("sphere", "cube"), n_train=6, n_test=2,
                     seed=1)
    corpus = scan_corpus(root)
    return corpus.subset(corpus.split_indices("train"))


def micro_classify_spec(n_classes=2):
    return default_spec(n_classes=n_classes, input_spatial=14,
                        linear_channels=(4, 6, 8))


def test_lr_zero_leaves_parameters_unchanged(small_corpus):
    spec = micro_classify_spec()
    net = build(spec, seed=2)
    before = [p.copy() for p in net.parameters()]
    cfg = toy_cfg(lr0=0.0, epochs=1)
    train_classification(small_corpus, spec, cfg, net=net)
    for b, a in zip(before, net.parameters()):
        np.testing.assert_array_equal(b, a)


def test_classification_loss_decreases(small_corpus):
    spec = micro_classify_spec()
    cfg = toy_cfg(epochs=8)
    result = train_classification(small_corpus, spec, cfg)
    losses = [r["loss"] for r in result.history if r.get("split") == "train"]
    assert losses[-1] < losses[0]


def test_classification_logs_schema(small_corpus, tmp_path):
    import json
    spec = micro_classify_spec()
    log_path = tmp_path / "metrics.jsonl"
    cfg = toy_cfg(epochs=2)
    train_classification(small_corpus, spec, cfg, log_path=log_path)
    records = [json.loads(line) for line in log_path.read_text().splitlines()]
    assert records
    for rec in records:
        assert {"epoch", "step", "lr"} <= set(rec)
    assert any("acc" in rec for rec in records)


def test_resume_continues_lr_schedule(small_corpus, tmp_path):
    spec = micro_classify_spec()
    ckpt = tmp_path / "net.ckpt"
    cfg = toy_cfg(epochs=2)
    train_classification(small_corpus, spec, cfg, ckpt_path=ckpt)
    net, meta = load_checkpoint(ckpt, expect_spec=spec)
    assert meta["epoch"] == "1"
    cfg2 = toy_cfg(epochs=4)
    cfg2.start_epoch = int(meta["epoch"]) + 1
    result = train_classification(small_corpus, spec, cfg2, net=net)
    epochs = sorted({r["epoch"] for r in result.history})
    assert epochs == [2, 3]
    lrs = {r["epoch"]: r["lr"] for r in result.history}
    assert lrs[2] == pytest.approx(0.002 * 0.985 ** 2, rel=1e-12)
    assert lrs[3] == pytest.approx(0.002 * 0.985 ** 3, rel=1e-12)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_guard(small_corpus):
    spec = micro_classify_spec()
    cfg = toy_cfg(epochs=10, lr0=1e12, momentum=0.99)
    with pytest.raises(DivergenceError):
        train_classification(small_corpus, spec, cfg)


def test_classification_requires_head(small_corpus):
    spec = default_spec(input_spatial=14, linear_channels=(4, 6, 8))
    with pytest.raises(ValueError):
        train_classification(small_corpus, spec, toy_cfg())


def test_triplet_requires_two_classes(tmp_path):
    root = tmp_path / "onecls"
    write_toy_corpus(root, classes=("sphere",), n_train=4, n_test=1, seed=2)
    corpus = scan_corpus(root)
    train = corpus.subset(corpus.split_indices("train"))
    spec = default_spec(input_spatial=14, linear_channels=(4, 6, 8))
    with pytest.raises(DataError):
        train_triplet(train, spec, toy_cfg(task="triplet"))


def test_triplet_identical_embeddings_stationary(tmp_path):
    """Duplicated mesh across classes: every triplet has loss 0 at margin 0."""
    from sparsevox.synthetic import cube_mesh, write_off
    root = tmp_path / "same"
    mesh = cube_mesh(half=0.4, center=(0.5, 0.5, 0.5))
    for cls in ("a", "b"):
        for split, count in (("train", 3), ("test", 1)):
            d = root / cls / split
            d.mkdir(parents=True)
            for i in range(count):
                write_off(mesh, d / f"{cls}_{i}.off")
    corpus = scan_corpus(root)
    train = corpus.subset(corpus.split_indices("train"))
    spec = default_spec(input_spatial=14, linear_channels=(4, 6, 8))
    net = build(spec, seed=6)
    before = [p.copy() for p in net.parameters()]
    cfg = toy_cfg(task="triplet", margin=0.0, epochs=1, val_fraction=0.0)
    result = train_triplet(train, spec, cfg, net=net)
    train_recs = [r for r in result.history if r.get("split") == "train"]
    assert train_recs[-1]["loss"] == 0.0
    assert train_recs[-1]["satisfied"] == 1.0
    for b, a in zip(before, net.parameters()):
        np.testing.assert_array_equal(b, a)


def test_triplet_run_logs_satisfied_fraction(small_corpus):
    spec = default_spec(input_spatial=14, linear_channels=(4, 6, 8))
    # hold out 2 per class so validation retrieval has relevant candidates
    cfg = toy_cfg(task="triplet", epochs=3, margin=0.2, val_fraction=0.25)
    result = train_triplet(small_corpus, spec, cfg)
    fracs = [r["satisfied"] for r in result.history if "satisfied" in r]
    assert len(fracs) == 3
    assert all(0.0 <= f <= 1.0 for f in fracs)
    assert any("map" in r for r in result.history)


def test_triplet_gradient_flow_matches_fd(rng):
    """Summed-role gradients through the shared network match central FD."""
    spec = default_spec(input_spatial=14, linear_channels=(4, 6, 8))
    net = build(spec, seed=7).astype(np.float64)
    grids = []
    for _ in range(3):
        g = SparseGrid(14, 1, dtype=np.float64)
        for _ in range(6):
            g.set_site((0, int(rng.integers(14)), int(rng.integers(14)),
                        int(rng.integers(14))), [float(rng.normal()) + 1.5])
        grids.append(g)
    batch = merge_batch(grids)
    margin = 2.0  # keeps the hinge active for any embedding configuration

    def loss_fn():
        emb = net.embed(batch)
        return triplet_loss_backward(emb[0], emb[1], emb[2], margin)[0]

    emb = net.embed(batch)
    loss, g_a, g_p, g_n = triplet_loss_backward(emb[0], emb[1], emb[2], margin)
    assert loss > 0
    upstream = np.vstack([g_a, g_p, g_n])
    net.zero_grad()
    net.backward_from_embedding(upstream)
    for param, grad in zip(net.parameters(), net.gradients()):
        fd = central_difference(loss_fn, param, eps=1e-5)
        assert_close_rel(grad, fd, rtol=1e-3)


def test_deterministic_history_given_seed(small_corpus):
    spec = micro_classify_spec()
    runs = []
    for _ in range(2):
        cfg = toy_cfg(epochs=2)
        result = train_classification(small_corpus, spec, cfg)
        runs.append(result.history)
    assert runs[0] == runs[1]
