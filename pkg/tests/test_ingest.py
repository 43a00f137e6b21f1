import numpy as np
import pytest

from spoutar.ingest import IngestError, IngestSpec, ingest, log_diff, write_matrix_csv


def write(tmp_path, text, name="in.csv"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_log_diff_hand_values():
    v = np.array([[1.0, np.e, np.e**3]])
    np.testing.assert_allclose(log_diff(v, ["a"], ["0", "1", "2"]), [[1.0, 2.0]])
    with pytest.raises(IngestError, match=r"'b'.*time index 1"):
        log_diff(np.array([[1.0, 2.0], [1.0, 0.0]]), ["a", "b"], ["t0", "t1"])
    with pytest.raises(IngestError, match="positive"):
        log_diff(np.array([[1.0, -2.0]]), ["a"], ["0", "1"])


def test_index_split_with_log_diff_shapes(tmp_path):
    # 2 variables x 6 time points, split 3/3, log-diff after split -> 2 x 2 each
    rows = "a,b\n" + "\n".join(f"{t + 1},{2 * (t + 1)}" for t in range(6))
    res = ingest(IngestSpec(write(tmp_path, rows), split="3", preprocess="log-diff"))
    assert res.data.y1.shape == (2, 2) and res.data.y2.shape == (2, 2)
    np.testing.assert_allclose(res.data.y1[0], np.log([2 / 1, 3 / 2]))
    np.testing.assert_allclose(res.data.y2[1], np.log([10 / 8, 12 / 10]))
    assert res.names == ["a", "b"]


def test_orientations_agree(tmp_path):
    y = np.arange(1.0, 13.0).reshape(3, 4)
    by_time = "x,y,z\n" + "\n".join(",".join(map(str, y[:, t])) for t in range(4))
    by_var = "name,t0,t1,t2,t3\n" + "\n".join(f"{n}," + ",".join(map(str, y[i])) for i, n in enumerate("xyz"))
    a = ingest(IngestSpec(write(tmp_path, by_time, "a.csv")))
    b = ingest(IngestSpec(write(tmp_path, by_var, "b.csv"), orientation="rows-are-variables"))
    assert np.array_equal(a.data.y1, y) and np.array_equal(b.data.y1, y)
    assert a.names == b.names == ["x", "y", "z"] and not a.data.paired


def test_date_split(tmp_path):
    text = "date,v\n2020-01-01,1\n2020-02-01,2\n2020-03-01,3\n2021-01-01,4\n2021-02-01,5\n"
    res = ingest(IngestSpec(write(tmp_path, text), date_column="date",
                            split="2020-01-01:2020-12-31,2021-01-01:2021-12-31"))
    assert res.data.y1.tolist() == [[1, 2, 3]] and res.data.y2.tolist() == [[4, 5]]
    assert res.time_labels[1] == ["2021-01-01", "2021-02-01"]


def test_error_messages_carry_line_numbers(tmp_path):
    with pytest.raises(IngestError, match="line 3.*ragged"):
        ingest(IngestSpec(write(tmp_path, "a,b\n1,2\n3\n")))
    with pytest.raises(IngestError, match="line 2, column 2"):
        ingest(IngestSpec(write(tmp_path, "a,b\n1,x\n")))
    with pytest.raises(IngestError, match="split"):
        ingest(IngestSpec(write(tmp_path, "a\n1\n2\n"), split="9"))
    with pytest.raises(IngestError, match="period 1"):
        ingest(IngestSpec(write(tmp_path, "a\n1\n2\n3\n"), split="1"), min_length=1)
    with pytest.raises(IngestError):
        IngestSpec("x", orientation="sideways")


def test_standardize_pools_periods(tmp_path):
    rng = np.random.default_rng(0)
    y = rng.normal(3, 2, (2, 10))
    text = "a,b\n" + "\n".join(f"{float(y[0, t])!r},{float(y[1, t])!r}" for t in range(10))
    res = ingest(IngestSpec(write(tmp_path, text), split="4", standardize=True))
    pooled = np.hstack([res.data.y1, res.data.y2])
    np.testing.assert_allclose(pooled.mean(axis=1), 0, atol=1e-12)
    np.testing.assert_allclose(pooled.std(axis=1), 1)


def test_write_then_read_roundtrip(tmp_path, rng):
    y = rng.standard_normal((3, 7))
    path = tmp_path / "m.csv"
    write_matrix_csv(path, y, ["a", "b", "c"], labels=[str(t) for t in range(7)])
    res = ingest(IngestSpec(str(path), date_column="time"))
    assert np.array_equal(res.data.y1, y)
