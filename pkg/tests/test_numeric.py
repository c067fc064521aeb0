import numpy as np
import pytest

from lipcert.numeric import RandomSource, bernoulli_mask, matvec, norms, sort_desc, top_k, topk_rows, worker_count


def test_sort_desc_stable_ties():
    s, perm = sort_desc([1.0, 3.0, 3.0, 2.0])
    assert s.tolist() == [3.0, 3.0, 2.0, 1.0]
    assert perm.tolist() == [1, 2, 3, 0]


def test_sort_desc_rejects_nan():
    with pytest.raises(ValueError):
        sort_desc([1.0, np.nan])


def test_top_k_matches_sort():
    rng = np.random.default_rng(0)
    for _ in range(200):
        x = rng.integers(0, 5, rng.integers(1, 12)).astype(float)
        k = int(rng.integers(1, x.size + 1))
        v, idx = top_k(x, k)
        s, perm = sort_desc(x)
        assert np.array_equal(v, s[:k])
        assert np.array_equal(idx, perm[:k])


def test_top_k_bad_k():
    with pytest.raises(ValueError):
        top_k([1.0, 2.0], 3)
    with pytest.raises(ValueError):
        top_k([1.0, 2.0], 0)


def test_topk_rows():
    a = np.random.default_rng(1).normal(size=(4, 3, 9))
    assert np.allclose(topk_rows(a, 4), -np.sort(-a, axis=-1)[..., :4])
    assert np.allclose(topk_rows(a, 20), -np.sort(-a, axis=-1))


def test_random_source_addressing():
    r = RandomSource(7)
    a = r.stream(3, 11).random(5)
    assert np.array_equal(a, RandomSource(7).stream(3, 11).random(5))
    assert not np.array_equal(a, r.stream(3, 12).random(5))
    assert not np.array_equal(a, r.stream(3, 11, purpose=1).random(5))
    assert not np.array_equal(a, RandomSource(8).stream(3, 11).random(5))


def test_bernoulli_mask_rate():
    r = RandomSource(0)
    m = np.concatenate([bernoulli_mask(r, 100, 0.7, sample=s) for s in range(200)])
    assert abs(m.mean() - 0.7) < 0.02
    with pytest.raises(ValueError):
        bernoulli_mask(r, 3, 1.5)


def test_norms_and_matvec():
    assert norms([3.0, -4.0]) == (7.0, 4.0)
    assert norms([]) == (0.0, 0.0)
    assert np.allclose(matvec(np.eye(2), [1.0, 2.0]), [1.0, 2.0])
    with pytest.raises(ValueError):
        matvec(np.eye(2), [1.0, 2.0, 3.0])


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("LIPCERT_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("LIPCERT_THREADS", "junk")
    assert worker_count() >= 1
