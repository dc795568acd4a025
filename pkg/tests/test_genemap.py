import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jointgt.core import DegenerateResponseError, ResponseVector, center_response, single_set_stat, CovariateSet
from jointgt.genemap import (
    CovariateWindowSpec,
    DataMatrix,
    IngestError,
    align_samples,
    build_window_sets,
    methylation_logit,
    read_annotation,
    read_matrix,
    residual_projector,
    residualize_confounders,
    write_annotation,
    write_matrix,
)


def annotated(prefix, chroms, positions, n_samples=4, seed=0, samples=None):
    ids = [f"{prefix}{i}" for i in range(len(positions))]
    ann = pd.DataFrame({"chromosome": chroms, "arm": "p", "position": positions},
                       index=pd.Index(ids, name="feature_id"))
    values = np.random.default_rng(seed).standard_normal((n_samples, len(ids)))
    samples = samples or [f"s{k}" for k in range(n_samples)]
    return DataMatrix(values, samples, ids, ann)


def test_window_boundary_example():
    genes = annotated("g", ["1"], [1_500_000])
    cn = annotated("cn", ["1", "1"], [400_000, 600_000])
    sets = build_window_sets(genes, cn, CovariateWindowSpec("CN", 1_000_000))
    assert sets["g0"].feature_ids == ("cn1",)


def test_window_boundary_inclusive():
    genes = annotated("g", ["1"], [100])
    cn = annotated("cn", ["1", "1"], [150, 151])
    assert build_window_sets(genes, cn, CovariateWindowSpec("CN", 50))["g0"].feature_ids == ("cn0",)


def test_window_requires_same_chromosome():
    genes = annotated("g", ["1", "2"], [1000, 1000])
    cn = annotated("cn", ["2", "2"], [1000, 1001])
    sets = build_window_sets(genes, cn, CovariateWindowSpec("CN", 10_000_000))
    assert "g0" not in sets
    assert sets.excluded == ["g0"]
    assert sets["g1"].feature_ids == ("cn0", "cn1")


def test_window_spec_validation():
    with pytest.raises(ValueError):
        CovariateWindowSpec("CN", 0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["1", "2", "X"]), st.integers(0, 5000)), min_size=1, max_size=15),
       st.lists(st.tuples(st.sampled_from(["1", "2", "X"]), st.integers(0, 5000)), min_size=1, max_size=25),
       st.integers(1, 3000))
def test_windows_match_double_loop(genes, probes, half):
    g = annotated("g", [c for c, _ in genes], [p for _, p in genes])
    c = annotated("c", [c for c, _ in probes], [p for _, p in probes])
    sets = build_window_sets(g, c, CovariateWindowSpec("CN", half))
    for gid, (gc, gp) in zip(g.feature_ids, genes):
        expected = tuple(cid for cid, (cc, cp) in zip(c.feature_ids, probes) if cc == gc and abs(cp - gp) <= half)
        if expected:
            assert sets[gid].feature_ids == expected
        else:
            assert gid in sets.excluded and gid not in sets
    again = build_window_sets(g, c, CovariateWindowSpec("CN", half))
    assert {k: tuple(v) for k, v in again.indices.items()} == {k: tuple(v) for k, v in sets.indices.items()}


def test_windows_align_sample_order():
    genes = annotated("g", ["1"], [0], samples=["a", "b", "c", "d"])
    cn = annotated("cn", ["1"], [0], samples=["d", "c", "b", "a"], seed=4)
    sets = build_window_sets(genes, cn, CovariateWindowSpec("CN", 1))
    np.testing.assert_array_equal(sets["g0"].matrix[:, 0], cn.values[::-1, 0])


def test_sample_mismatch_lists_difference():
    a = annotated("g", ["1"], [0], samples=["a", "b", "c", "d"])
    b = annotated("c", ["1"], [0], samples=["a", "b", "c", "e"])
    with pytest.raises(IngestError, match=r"\['d', 'e'\]"):
        build_window_sets(a, b, CovariateWindowSpec("CN", 1))
    with pytest.raises(IngestError):
        align_samples(a, b)


def test_matrix_round_trip(tmp_path):
    m = annotated("g", ["1", "1", "2"], [5, 10, 7], n_samples=5)
    m.values[1, 2] = np.nan
    write_matrix(m, tmp_path / "m.tsv")
    write_annotation(m.annotation, tmp_path / "a.tsv")
    back = read_matrix(tmp_path / "m.tsv").with_annotation(read_annotation(tmp_path / "a.tsv"))
    assert back.sample_ids == m.sample_ids and back.feature_ids == m.feature_ids
    np.testing.assert_allclose(back.values, m.values, rtol=1e-9, equal_nan=True)
    assert back.annotation["position"].tolist() == [5, 10, 7]
    assert "NA" in (tmp_path / "m.tsv").read_text()


def test_non_numeric_entry_reports_line(tmp_path):
    (tmp_path / "m.tsv").write_text("feature_id\ts1\ts2\ng1\t1.0\t2.0\ng2\t3.0\toops\n")
    with pytest.raises(IngestError, match="line 3"):
        read_matrix(tmp_path / "m.tsv")


def test_annotation_validation(tmp_path):
    (tmp_path / "a.tsv").write_text("feature_id\tchromosome\tposition\ng1\t1\t5\n")
    with pytest.raises(IngestError, match="arm"):
        read_annotation(tmp_path / "a.tsv")
    (tmp_path / "b.tsv").write_text("feature_id\tchromosome\tarm\tposition\ng1\t1\tp\t5\ng2\t1\tq\t-3\n")
    with pytest.raises(IngestError, match="line 3"):
        read_annotation(tmp_path / "b.tsv")


def test_missing_annotation_for_feature():
    m = annotated("g", ["1", "1"], [0, 1])
    with pytest.raises(IngestError, match="lack annotation"):
        m.with_annotation(m.annotation.iloc[:1])


# ---- methylation transform

def test_logit_examples():
    assert methylation_logit(2.0, 2.0) == 0.0
    assert methylation_logit(3.0, 1.0) == pytest.approx(math.log(3.0), abs=1e-12)
    hi = methylation_logit(5.0, 0.0)
    assert math.isfinite(hi) and hi == pytest.approx(math.log(0.999 / 0.001))
    assert math.isnan(methylation_logit(0.0, 0.0))


def test_logit_vectorized_and_validation():
    out = methylation_logit(np.array([1.0, 0.0]), np.array([1.0, 0.0]))
    assert out[0] == 0.0 and np.isnan(out[1])
    with pytest.raises(ValueError):
        methylation_logit(-1.0, 2.0)


# ---- confounders

def test_no_confounders_is_centering():
    y = ResponseVector(np.array([1.0, 4.0, 2.0, 7.0]))
    np.testing.assert_allclose(residualize_confounders(y).values, center_response(y).values)


def test_residuals_orthogonal_to_confounders():
    rng = np.random.default_rng(1)
    y = ResponseVector(rng.standard_normal(30))
    conf = rng.standard_normal((30, 2))
    r = residualize_confounders(y, conf).values
    assert abs(r @ conf[:, 0]) <= 1e-10
    assert abs(r @ conf[:, 1]) <= 1e-10
    assert abs(r.sum()) <= 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(5, 40), st.integers(0, 3), st.integers(0, 2**32 - 1))
def test_residualization_idempotent(n, c, seed):
    rng = np.random.default_rng(seed)
    y = ResponseVector(rng.standard_normal(n))
    conf = rng.standard_normal((n, min(c, n - 3)))
    once = residualize_confounders(y, conf)
    twice = residualize_confounders(once, conf)
    np.testing.assert_allclose(twice.values, once.values, atol=1e-10)
    proj = residual_projector(n, conf)
    np.testing.assert_allclose(proj @ y.values, once.values, atol=1e-10)


def test_perfect_fit_leads_to_degenerate_response():
    conf = np.arange(8.0)[:, None]
    y = ResponseVector(3.0 * conf[:, 0] + 2.0)
    r = residualize_confounders(y, conf)
    assert not r.values.any()
    with pytest.raises(DegenerateResponseError):
        single_set_stat(r, CovariateSet(np.random.default_rng(0).standard_normal((8, 2))))


def test_collinear_confounders_named():
    rng = np.random.default_rng(2)
    a = rng.standard_normal(10)
    conf = np.column_stack([a, 2 * a, rng.standard_normal(10)])
    with pytest.raises(ValueError, match="age2"):
        residualize_confounders(ResponseVector(rng.standard_normal(10)), conf, ["age", "age2", "batch"])
    with pytest.raises(ValueError, match="intercept"):
        residualize_confounders(ResponseVector(rng.standard_normal(10)), np.ones((10, 1)))
