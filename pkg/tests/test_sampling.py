import numpy as np
import pytest
from scipy.stats import chisquare

from src.models import Dataset, TaskSpec
from src.sampling import TaskSampler, derive_seed, sample_batch, task_weights, total_steps


def tiny_datasets():
    datasets = {}
    for task_id, n in (("A", 16), ("B", 81)):
        spec = TaskSpec(task_id=task_id, kind="classification")
        x = np.arange(n * 2, dtype=float).reshape(n, 2)
        y = np.arange(n) % 2
        datasets[task_id] = Dataset(spec=spec, train_x=x, train_y=y, dev_x=x[:1], dev_y=y[:1])
    return datasets


def test_task_weights_closed_form():
    np.testing.assert_allclose(task_weights([16, 81], 0.75), [8 / 35, 27 / 35])
    np.testing.assert_allclose(task_weights([16, 81], 1.0), [16 / 97, 81 / 97])
    np.testing.assert_allclose(task_weights([16, 81, 3], 0.0), [1 / 3, 1 / 3, 1 / 3])


@pytest.mark.parametrize("sizes,exponent", [([], 0.75), ([10, 0], 0.75), ([10], -0.5)])
def test_task_weights_errors(sizes, exponent):
    with pytest.raises(ValueError):
        task_weights(sizes, exponent)


def test_empirical_task_frequencies():
    sampler = TaskSampler(["A", "B"], [16, 81], exponent=0.75, seed=123)
    draws = sampler.draw_tasks(100_000)
    counts = np.bincount(draws, minlength=2)
    freq = counts / counts.sum()
    expected = np.array([8 / 35, 27 / 35])
    assert np.abs(freq - expected).sum() < 0.01
    assert chisquare(counts, expected * counts.sum()).pvalue > 0.001


def test_exponent_endpoints():
    proportional = np.bincount(TaskSampler(["A", "B"], [16, 81], 1.0, seed=5).draw_tasks(50_000), minlength=2)
    assert proportional[0] / 50_000 == pytest.approx(16 / 97, abs=0.01)
    uniform = np.bincount(TaskSampler(["A", "B"], [16, 81], 0.0, seed=5).draw_tasks(50_000), minlength=2)
    assert uniform[0] / 50_000 == pytest.approx(0.5, abs=0.01)


def test_batches_are_deterministic_in_seed():
    datasets = tiny_datasets()
    a = TaskSampler.for_datasets(datasets, ["A", "B"], 0.75, seed=9)
    b = TaskSampler.for_datasets(datasets, ["A", "B"], 0.75, seed=9)
    c = TaskSampler.for_datasets(datasets, ["A", "B"], 0.75, seed=10)
    batch_a = [(e.task_id, e.index) for e in sample_batch(a, datasets, 64)]
    batch_b = [(e.task_id, e.index) for e in sample_batch(b, datasets, 64)]
    batch_c = [(e.task_id, e.index) for e in sample_batch(c, datasets, 64)]
    assert batch_a == batch_b
    assert batch_a != batch_c


def test_examples_come_from_their_train_row():
    datasets = tiny_datasets()
    sampler = TaskSampler.for_datasets(datasets, ["A", "B"], 0.75, seed=1)
    for example in sampler.sample_batch(datasets, 200):
        ds = datasets[example.task_id]
        assert 0 <= example.index < len(ds.train_x)
        np.testing.assert_array_equal(example.x, ds.train_x[example.index])
        assert example.y == ds.train_y[example.index]


def test_batch_size_must_be_positive():
    datasets = tiny_datasets()
    sampler = TaskSampler.for_datasets(datasets, ["A", "B"], 0.75, seed=1)
    with pytest.raises(ValueError):
        sampler.sample_batch(datasets, 0)
    with pytest.raises(ValueError):
        TaskSampler(["A"], [1, 2])


def test_total_steps():
    assert total_steps([16, 81], batch_size=32, epochs=1) == 4
    assert total_steps([16, 81], batch_size=32, epochs=3) == 10
    assert total_steps([64], batch_size=32, epochs=2) == 4
    assert total_steps([5], batch_size=32, epochs=0) == 0
    with pytest.raises(ValueError):
        total_steps([5], batch_size=0, epochs=1)


def test_derive_seed_is_stable_and_label_sensitive():
    assert derive_seed(3, "init") == derive_seed(3, "init")
    assert derive_seed(3, "init") != derive_seed(3, "batches")
    assert derive_seed(3, "init") != derive_seed(4, "init")
    assert derive_seed(3, "task", "A") != derive_seed(3, "task", "B")
    assert 0 <= derive_seed(2**40, "x") < 2**63
