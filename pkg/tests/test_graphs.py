import math

import numpy as np

from mfgcrn.graphs import distance_matrix, dump_matrix, gaussian_kernel, gaussian_proximity, identity_graph


def test_distance_examples():
    d = distance_matrix([[0, 0], [3, 4]])
    assert d[0, 1] == 5.0 and d[1, 0] == 5.0 and np.all(np.diag(d) == 0)
    eq = distance_matrix([[0.0, 0.0], [0.0, 1.0]], "latlon")[0, 1]
    assert abs(eq - 111_195) / 111_195 <= 0.005


def test_distance_symmetric_zero_diagonal(rng):
    for kind, scale in (("xy", 5000), ("latlon", 1)):
        d = distance_matrix(rng.uniform(0, scale, (7, 2)), kind)
        assert np.array_equal(d, d.T) and np.all(np.diag(d) == 0) and np.all(d >= 0)


def test_three_areas_on_a_line():
    # hand evaluation: sigma is the population std of the nine entries
    entries = [0, 1000, 2000, 1000, 0, 1000, 2000, 1000, 0]
    mean = sum(entries) / 9
    sigma = math.sqrt(sum((e - mean) ** 2 for e in entries) / 9)
    k = [[math.exp(-((entries[3 * i + j] / sigma) ** 2)) for j in range(3)] for i in range(3)]
    expected = np.array([[v / sum(row) for v in row] for row in k])
    got = gaussian_proximity(distance_matrix([[0, 0], [1000, 0], [2000, 0]])).matrix
    assert np.abs(got - expected).max() <= 1e-12


def test_rows_stochastic_and_monotone(rng):
    for _ in range(50):
        n = int(rng.integers(2, 30))
        d = distance_matrix(rng.uniform(0, 10_000, (n, 2)))
        a = gaussian_proximity(d).matrix
        assert np.abs(a.sum(1) - 1).max() <= 1e-9
        k = gaussian_kernel(d)
        for i in range(n):
            order = np.argsort(d[i], kind="stable")
            assert np.all(np.diff(k[i, order]) <= 0)


def test_degenerate_cases():
    assert np.array_equal(gaussian_proximity(np.zeros((1, 1))).matrix, [[1.0]])
    d = np.full((4, 4), 10.0)
    np.fill_diagonal(d, 0)
    a = gaussian_proximity(d).matrix
    off = a[~np.eye(4, dtype=bool)]
    assert np.allclose(off, off[0], atol=1e-15, rtol=0)
    assert np.array_equal(identity_graph(3).matrix, np.eye(3))


def test_sigma_switch_changes_kernel():
    d = distance_matrix([[0, 0], [1000, 0], [2000, 0]])
    assert not np.allclose(gaussian_kernel(d, True), gaussian_kernel(d, False))


def test_dump_matrix(tmp_path):
    dump_matrix(tmp_path / "g.csv", np.eye(2), ["a", "b"])
    assert (tmp_path / "g.csv").read_text().splitlines() == ["area_id,a,b", "a,1.0,0.0", "b,0.0,1.0"]
