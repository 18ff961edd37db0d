"""Canonical JSON, dense stores, persistence, and result comparison."""

import json
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_store, scalar_varlist, square_study, tiny_varlist

from mcgrid import (CacheInvalidError, RawFallback, ResultStore, SeedSpec,
                    SubJobRecord, VarList, VarSpec, assemble, canonical_json,
                    do_res_equal, load, maybe_read, run_study, save,
                    study_fingerprint)
from mcgrid.results import ErrorInfo, _parse_value


class TestCanonicalJson:
    def test_plain_document(self):
        doc = {"b": 1, "a": [1.5, "x", None, True]}
        text = canonical_json(doc)
        assert json.loads(text) == {"b": 1, "a": [1.5, "x", None, True]}

    def test_byte_stability(self):
        doc = {"z": [0.1, 0.2, 0.30000000000000004], "nested": {"k": [1, 2]}}
        assert canonical_json(doc) == canonical_json(json.loads(canonical_json(doc)))

    def test_nonfinite_floats_become_tagged_strings(self):
        text = canonical_json({"v": [math.nan, math.inf, -math.inf]})
        assert '"NaN"' in text and '"Inf"' in text and '"-Inf"' in text
        json.loads(text)  # stays valid JSON

    @given(st.floats(allow_nan=False, allow_infinity=False))
    @settings(max_examples=200, deadline=None)
    def test_float_roundtrip_exact(self, x):
        text = canonical_json({"v": x})
        assert json.loads(text)["v"] == x

    def test_seventeen_digit_floats_roundtrip(self):
        for x in (0.1, 1/3, 2**-52, 1e300, -1.2345678901234567e-8):
            assert json.loads(canonical_json(x)) == x

    def test_parse_value_restores_nonfinite(self):
        vals = _parse_value(["NaN", "Inf", "-Inf", 1.5])
        assert math.isnan(vals[0]) and vals[1] == math.inf and vals[2] == -math.inf


class TestAssemble:
    def test_records_land_at_row_plus_ngrid_times_rep(self):
        vl = scalar_varlist(n_sim=2)  # 3 grid rows
        recs = [SubJobRecord(value=float(i), error=None, warnings=(),
                             time_ms=1.0, seed=None) for i in range(6)]
        store = assemble(vl, recs, rep_first=True, seed_spec=SeedSpec.seq(),
                         keep_seed=False, created="t")
        # virtual rep-first: linear = row*2 + rep-1 ; storage: row + 3*(rep-1)
        assert store.record(0, 1).value == 0.0
        assert store.record(0, 2).value == 1.0
        assert store.record(1, 1).value == 2.0
        assert store.record(2, 2).value == 5.0

    def test_row_first_virtual_order(self):
        vl = scalar_varlist(n_sim=2)
        recs = [SubJobRecord(value=float(i), error=None, warnings=(),
                             time_ms=1.0, seed=None) for i in range(6)]
        store = assemble(vl, recs, rep_first=False, seed_spec=SeedSpec.seq(),
                         keep_seed=False, created="t")
        # virtual row-first: linear = (rep-1)*3 + row
        assert store.record(0, 1).value == 0.0
        assert store.record(1, 1).value == 1.0
        assert store.record(0, 2).value == 3.0

    def test_shape_mismatch_falls_back_to_raw(self):
        vl = scalar_varlist(n_sim=1)
        recs = [SubJobRecord(value=np.array([1.0, 2.0]), error=None, warnings=(),
                             time_ms=0.0, seed=None)]
        recs += [SubJobRecord(value=1.0, error=None, warnings=(), time_ms=0.0,
                              seed=None)] * 2
        res = assemble(vl, recs, True, SeedSpec.seq(), False, "t")
        assert isinstance(res, RawFallback)
        assert "shape" in res.diagnostic
        assert len(res.records) == 3

    def test_error_records_do_not_trigger_fallback(self):
        vl = scalar_varlist(n_sim=1)
        recs = [SubJobRecord(value=None, error=ErrorInfo("x", "study"),
                             warnings=(), time_ms=0.0, seed=None)]
        recs += [SubJobRecord(value=2.0, error=None, warnings=(), time_ms=0.0,
                              seed=None)] * 2
        assert isinstance(assemble(vl, recs, True, SeedSpec.seq(), False, "t"),
                          ResultStore)

    def test_wrong_record_count_rejected(self):
        with pytest.raises(ValueError):
            assemble(scalar_varlist(2), [], True, SeedSpec.seq(), False, "t")


class TestFingerprint:
    def test_stable_across_calls(self):
        vl = tiny_varlist()
        f1 = study_fingerprint(vl, True, SeedSpec.seq())
        f2 = study_fingerprint(vl, True, SeedSpec.seq())
        assert f1 == f2 and len(f1) == 16

    def test_sensitive_to_every_input(self):
        vl = tiny_varlist()
        base = study_fingerprint(vl, True, SeedSpec.seq())
        assert study_fingerprint(vl, False, SeedSpec.seq()) != base
        assert study_fingerprint(vl, True, SeedSpec.none_reseed()) != base
        assert study_fingerprint(vl.with_n_sim(5), True, SeedSpec.seq()) != base


class TestPersistence:
    def test_roundtrip_full_fidelity_randomized(self, tmp_path):
        rng = random.Random(20260819)
        for case in range(25):
            res = random_store(rng)
            path = tmp_path / f"s{case}.json"
            save(res, path)
            back = load(path)
            assert type(back) is type(res)
            cmp = do_res_equal(res, back)
            assert cmp, cmp.report
            # fields the comparison deliberately ignores must survive too
            for a, b in zip(res.records, back.records):
                assert a.time_ms == b.time_ms or (
                    math.isnan(a.time_ms) and math.isnan(b.time_ms))
            assert back.meta.created == res.meta.created
            assert back.meta.fingerprint == res.meta.fingerprint

    def test_raw_fallback_roundtrip(self, tmp_path):
        rng = random.Random(7)
        res = random_store(rng, force_kind="raw")
        assert isinstance(res, RawFallback)
        path = tmp_path / "raw.json"
        save(res, path)
        back = load(path)
        assert isinstance(back, RawFallback)
        assert back.diagnostic == res.diagnostic
        assert do_res_equal(res, back)

    def test_file_bytes_are_stable(self, tmp_path):
        res = random_store(random.Random(3))
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save(res, p1)
        save(res, p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert p1.read_bytes().endswith(b"\n")

    def test_maybe_read_absent_returns_none(self, tmp_path):
        assert maybe_read(tmp_path / "missing.json", "0" * 16) is None

    def test_maybe_read_fingerprint_mismatch_raises(self, tmp_path):
        res = random_store(random.Random(5))
        path = tmp_path / "s.json"
        save(res, path)
        with pytest.raises(CacheInvalidError):
            maybe_read(path, "f" * 16)

    def test_maybe_read_match_sets_from_cache(self, tmp_path):
        res = random_store(random.Random(6))
        path = tmp_path / "s.json"
        save(res, path)
        back = maybe_read(path, res.meta.fingerprint)
        assert back is not None and back.from_cache
        assert not res.from_cache

    def test_run_study_cache_cycle(self, tmp_path):
        path = tmp_path / "cache.json"
        vl = scalar_varlist(2)
        r1 = run_study(vl, square_study, cache_path=path)
        assert not r1.from_cache
        r2 = run_study(vl, square_study, cache_path=path)
        assert r2.from_cache
        assert do_res_equal(r1, r2)
        with pytest.raises(CacheInvalidError):
            run_study(vl.with_n_sim(3), square_study, cache_path=path)


class TestComparison:
    def _pair(self):
        rng = random.Random(11)
        res = random_store(rng)
        path_doc = json.loads(canonical_json_of(res))
        return res, path_doc

    def test_time_and_created_ignored(self):
        vl = scalar_varlist(1)
        mk = lambda t: assemble(vl, [SubJobRecord(value=float(i), error=None,
                                                  warnings=(), time_ms=t, seed=None)
                                     for i in range(3)],
                                True, SeedSpec.seq(), False, created=f"T{t}")
        assert do_res_equal(mk(1.0), mk(99.0))

    def test_value_difference_reported_with_cell(self):
        vl = scalar_varlist(1)

        def mk(v):
            recs = [SubJobRecord(value=float(i), error=None, warnings=(),
                                 time_ms=0.0, seed=None) for i in (0, 1, 2)]
            recs[1] = SubJobRecord(value=v, error=None, warnings=(),
                                   time_ms=0.0, seed=None)
            return assemble(vl, recs, True, SeedSpec.seq(), False, "t")

        cmp = do_res_equal(mk(1.0), mk(1.5))
        assert not cmp
        assert "value" in cmp.report
        assert "1.5" in cmp.report and "x" in cmp.report

    def test_nan_values_compare_equal(self):
        vl = scalar_varlist(1)
        mk = lambda: assemble(vl, [SubJobRecord(value=math.nan, error=None,
                                                warnings=(), time_ms=0.0, seed=None)
                                   for _ in range(3)],
                              True, SeedSpec.seq(), False, "t")
        assert do_res_equal(mk(), mk())

    def test_warning_order_matters(self):
        vl = scalar_varlist(1)

        def mk(order):
            recs = [SubJobRecord(value=1.0, error=None, warnings=order,
                                 time_ms=0.0, seed=None) for _ in range(3)]
            return assemble(vl, recs, True, SeedSpec.seq(), False, "t")

        assert do_res_equal(mk(("a", "b")), mk(("a", "b")))
        cmp = do_res_equal(mk(("a", "b")), mk(("b", "a")))
        assert not cmp and "warning" in cmp.report

    def test_error_vs_value_difference(self):
        vl = scalar_varlist(1)

        def mk(err):
            rec = (SubJobRecord(value=None, error=ErrorInfo("bad", "study"),
                                warnings=(), time_ms=0.0, seed=None) if err else
                   SubJobRecord(value=1.0, error=None, warnings=(), time_ms=0.0,
                                seed=None))
            recs = [rec] + [SubJobRecord(value=1.0, error=None, warnings=(),
                                         time_ms=0.0, seed=None)] * 2
            return assemble(vl, recs, True, SeedSpec.seq(), False, "t")

        cmp = do_res_equal(mk(True), mk(False))
        assert not cmp and "error" in cmp.report

    def test_fingerprint_difference_caught(self):
        vl = scalar_varlist(1)
        recs = lambda: [SubJobRecord(value=float(i), error=None, warnings=(),
                                     time_ms=0.0, seed=None) for i in range(3)]
        a = assemble(vl, recs(), True, SeedSpec.seq(), False, "t")
        b = assemble(vl, recs(), True, SeedSpec.none_reseed(), False, "t")
        cmp = do_res_equal(a, b)
        assert not cmp and "fingerprint" in cmp.report


def canonical_json_of(res):
    from mcgrid.results import _store_doc
    return canonical_json(_store_doc(res))
