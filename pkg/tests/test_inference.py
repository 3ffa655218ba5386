import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from visa.data import DatasetConfig, generate_dataset
from visa.evaluate import COLUMNS, evaluate_protocol, read_csv, write_csv
from visa.indices import LeakageError
from visa.inference import sliding_window_infer, window_starts
from visa.metrics import ConfusionMatrix, metrics


def constant_model(values):
    values = np.asarray(values, dtype=np.float32)

    def fn(tiles):
        n, _, h, w = tiles.shape
        return np.broadcast_to(values[None, :, None, None], (n, 3, h, w)).copy()

    return fn


def test_window_starts():
    assert window_starts(384, 256, 128) == [0, 128]
    assert window_starts(256, 256, 128) == [0]
    assert window_starts(300, 256, 128) == [0, 44]
    assert window_starts(512, 256, 128) == [0, 128, 256]


def test_coverage_pattern_384():
    res = sliding_window_infer(constant_model([0.0, 1.0, 0.0]), np.zeros((5, 384, 384), np.float32), 256, 128)
    cov = res.coverage
    assert cov[128:256, 128:256].min() == cov[128:256, 128:256].max() == 4
    assert cov[0, 0] == cov[383, 383] == 1
    assert cov[0, 200] == 2 and cov[200, 0] == 2
    # hand tiling: strips of 128 covered (1, 2, 1) times along each axis
    per_axis = np.repeat([1, 2, 1], 128)
    np.testing.assert_array_equal(cov, np.outer(per_axis, per_axis))


@given(st.sampled_from([(256, 256), (384, 384), (300, 520), (512, 260)]), st.sampled_from([64, 128, 256]))
@settings(max_examples=12, deadline=None)
def test_constant_logits_bit_exact(shape, stride):
    logits = np.array([0.1, 2.7, -1.3], dtype=np.float32)
    image = np.zeros((5,) + shape, np.float32)
    res = sliding_window_infer(constant_model(logits), image, 256, stride)
    single = constant_model(logits)(image[None, :, :256, :256])[0]
    assert res.logits.tobytes() == np.broadcast_to(single[:, :1, :1], res.logits.shape).tobytes()
    assert np.all(res.labels == 1)


def test_single_window_equals_direct_forward():
    rng = np.random.default_rng(0)
    weights = rng.normal(size=(3, 5)).astype(np.float32)

    def model(tiles):
        return np.einsum("kc,nchw->nkhw", weights, tiles).astype(np.float32)

    image = rng.normal(size=(5, 256, 256)).astype(np.float32)
    res = sliding_window_infer(model, image, 256, 128)
    np.testing.assert_array_equal(res.logits, model(image[None])[0])
    assert not res.padded


def test_pixelwise_model_is_stride_invariant():
    rng = np.random.default_rng(1)
    weights = rng.normal(size=(3, 5))

    def model(tiles):
        return np.einsum("kc,nchw->nkhw", weights, tiles)

    image = rng.normal(size=(5, 320, 384))
    a = sliding_window_infer(model, image, 128, 64)
    np.testing.assert_allclose(a.logits, model(image[None])[0], rtol=1e-5, atol=1e-5)


def test_argmax_ties_prefer_lowest_index():
    res = sliding_window_infer(constant_model([1.0, 1.0, 0.0]), np.zeros((5, 64, 64)), 64, 32)
    assert np.all(res.labels == 0)
    np.testing.assert_allclose(res.confidence, np.exp(1) / (2 * np.exp(1) + 1), rtol=1e-6)


def test_small_image_is_padded_and_flagged():
    seen = []

    def model(tiles):
        seen.append(tiles.shape)
        return np.zeros((tiles.shape[0], 3) + tiles.shape[2:])

    res = sliding_window_infer(model, np.ones((5, 40, 50)), 64, 32)
    assert res.padded and seen == [(1, 5, 64, 64)]
    assert res.labels.shape == (40, 50) and res.coverage.max() == 1


def test_bad_stride_rejected():
    with pytest.raises(ValueError):
        sliding_window_infer(constant_model([0, 0, 0]), np.zeros((5, 64, 64)), 64, 65)


# --- protocol evaluation ----------------------------------------------------


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("eval")
    return generate_dataset(root, DatasetConfig(seed=5, patch_size=16, blocks_per_stratum=3), force=True)


def oracle_labeler(dataset):
    def label(image, block_id):
        mask = dataset.block(block_id)[1].copy()
        mask[mask == 255] = 0
        return mask

    return label


def test_perfect_oracle_scores_one(dataset):
    _, rows = evaluate_protocol(oracle_labeler(dataset), dataset.manifest, dataset, replicates=200, seed=0)
    assert rows[-1]["year"] == "all"
    assert len(rows) == 9  # eight strata plus the pooled row
    for row in rows:
        assert row["iou_other"] == row["iou_crop"] == 1.0
        assert row["iou_weed"] in (0.0, 1.0)  # 0 only where a stratum has no weeds at all
        assert row["kappa"] == 1.0 and row["oa"] == 1.0


def test_constant_model_oa_is_class_frequency(dataset):
    results, rows = evaluate_protocol(lambda img, bid: np.ones(img.shape[1:], np.uint8), dataset.manifest, dataset, 100, 0)
    pooled = sum((r.cm for r in results), ConfusionMatrix())
    freq = pooled.counts[1].sum() / pooled.total
    assert rows[-1]["oa"] == pytest.approx(freq, abs=1e-12)
    assert rows[-1]["kappa"] == pytest.approx(0.0, abs=1e-12)


def test_csv_schema(dataset, tmp_path):
    _, rows = evaluate_protocol(oracle_labeler(dataset), dataset.manifest, dataset, 50, 0)
    write_csv(rows, tmp_path / "m.csv")
    back = read_csv(tmp_path / "m.csv")
    assert tuple(back[0].keys()) == COLUMNS
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == ",".join(COLUMNS)
    assert float(back[-1]["miou"]) == pytest.approx(rows[-1]["miou"], abs=1e-6)


def test_leaky_manifest_refused(dataset):
    m = dataset.split("cross_plot")
    m.entries.append((m.blocks("train")[0], "test"))
    with pytest.raises(LeakageError):
        evaluate_protocol(oracle_labeler(dataset), m, dataset, 10, 0)


def test_metrics_of_block_results_match_pooled(dataset):
    results, rows = evaluate_protocol(lambda img, bid: (img[4] > 0.3).astype(np.uint8), dataset.manifest, dataset, 50, 0)
    pooled = sum((r.cm for r in results), ConfusionMatrix())
    assert rows[-1]["miou"] == metrics(pooled).miou
