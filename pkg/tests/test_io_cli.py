import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracnls.blowup import sweep_workers
from fracnls.cli import (
    EXIT_DIVERGED,
    EXIT_INVALID,
    EXIT_OK,
    ConfigError,
    build_config,
    dispatch,
    parse_config,
)
from fracnls.io import (
    FORMAT_VERSION,
    FieldFormatError,
    NonFiniteError,
    config_hash,
    dumps,
    read_field,
    read_field_with_header,
    write_field,
    write_report,
)
from fracnls.spectral import Field, make_grid

MINIMAL = """
[problem]
d = 1
s = 0.5
alpha = "critical"
a = "0.9*a_star"
"""

SWEEP = """
[problem]
d = 1
s = 0.5
alpha = "critical"

[grid]
N = 512
L = 16

[potential]
kind = "periodic_power"
kappa = 1.0
p = 2.0

[sweep]
schedule = [2, 3]
"""

CSV_COLUMNS = ("a,beta_a,eps_a,energy,kinetic,potential_integral,nonlinear,x_a_0,z_a_0,"
               "profile_l2_dist,profile_hs_dist,grid_N,grid_L,converged")


def _doc(**sections):
    doc = {"problem": {"d": 1, "s": 0.5, "alpha": "critical", "a": 1.0}}
    for name, body in sections.items():
        doc.setdefault(name, {}).update(body)
    return doc


class TestFieldFile:
    @pytest.mark.parametrize("complex_", [False, True])
    @pytest.mark.parametrize("d,n", [(1, 64), (2, 64)])
    def test_round_trip_bit_exact(self, tmp_path, rng, complex_, d, n):
        g = make_grid(d, n, 8.0)
        vals = rng.standard_normal(g.shape)
        if complex_:
            vals = vals + 1j * rng.standard_normal(g.shape)
        path = write_field(tmp_path / "u.field", Field(g, vals), s_used=0.3)
        back, head = read_field_with_header(path)
        assert back.grid.shape == g.shape and back.grid.length == g.length
        assert back.values.dtype == vals.dtype
        assert back.values.tobytes() == vals.tobytes()
        assert head["s_used"] == 0.3

    def test_rewrite_is_byte_identical(self, tmp_path, rng):
        g = make_grid(1, 128, 4.0)
        u = Field(g, rng.standard_normal(g.shape))
        a = write_field(tmp_path / "a.field", u).read_bytes()
        b = write_field(tmp_path / "b.field", read_field(tmp_path / "a.field")).read_bytes()
        assert a == b

    def _header_and_payload(self, tmp_path, rng):
        g = make_grid(1, 64, 4.0)
        path = write_field(tmp_path / "u.field", Field(g, rng.standard_normal(g.shape)))
        raw = path.read_bytes()
        cut = raw.index(b"\n")
        return path, json.loads(raw[:cut]), raw[cut + 1 :]

    def test_version_mismatch(self, tmp_path, rng):
        path, head, payload = self._header_and_payload(tmp_path, rng)
        head["format_version"] = FORMAT_VERSION + 1
        path.write_bytes(json.dumps(head).encode() + b"\n" + payload)
        with pytest.raises(FieldFormatError, match="version"):
            read_field(path)

    @pytest.mark.parametrize("cut", [1, 8, 100])
    def test_truncated_payload(self, tmp_path, rng, cut):
        path, head, payload = self._header_and_payload(tmp_path, rng)
        path.write_bytes(json.dumps(head).encode() + b"\n" + payload[:-cut])
        with pytest.raises(FieldFormatError, match="payload"):
            read_field(path)

    def test_not_a_field(self, tmp_path):
        path = tmp_path / "x.field"
        path.write_bytes(b'{"format": "npy"}\n')
        with pytest.raises(FieldFormatError):
            read_field(path)

    def test_no_header(self, tmp_path):
        path = tmp_path / "x.field"
        path.write_bytes(b"\x00\x01\x02")
        with pytest.raises(FieldFormatError, match="header"):
            read_field(path)


class TestReports:
    def test_sorted_and_indented(self):
        text = dumps({"b": 1, "a": {"d": 2.5, "c": np.float64(1.0)}})
        assert text.index('"a"') < text.index('"b"')
        assert text.index('"c"') < text.index('"d"')
        assert text.endswith("\n") and "\n  " in text

    @pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
    def test_non_finite_rejected(self, bad):
        with pytest.raises(NonFiniteError, match="x.y"):
            dumps({"x": {"y": [1.0, bad]}})

    def test_numpy_values_converted(self):
        doc = json.loads(dumps({"v": np.arange(3.0), "n": np.int64(4), "ok": np.bool_(True)}))
        assert doc == {"v": [0.0, 1.0, 2.0], "n": 4, "ok": True}

    def test_envelope(self, tmp_path):
        path = write_report(tmp_path / "r.json", {"value": 1.5}, {"k": 1})
        doc = json.loads(path.read_text())
        assert doc["payload"] == {"value": 1.5}
        assert doc["config_hash"] == config_hash({"k": 1})
        assert "wall_time" not in doc
        assert {"tool_version", "provenance"} <= set(doc)

    def test_wall_time_on_request(self, tmp_path):
        doc = json.loads(write_report(tmp_path / "r.json", {}, {}, wall_time=0.25).read_text())
        assert doc["wall_time"] == 0.25


class TestConfigHash:
    @settings(max_examples=50, deadline=None)
    @given(st.dictionaries(st.text(min_size=1, max_size=6), st.integers() | st.floats(allow_nan=False, allow_infinity=False),
                           min_size=1, max_size=8))
    def test_key_order_irrelevant(self, doc):
        assert config_hash(doc) == config_hash(dict(reversed(list(doc.items()))))

    def test_nested_order_irrelevant(self):
        a = {"grid": {"N": 64, "L": 8.0}, "problem": {"s": 0.5, "d": 1}}
        b = {"problem": {"d": 1, "s": 0.5}, "grid": {"L": 8.0, "N": 64}}
        assert config_hash(a) == config_hash(b)

    def test_semantic_change(self):
        base = build_config(_doc()).semantic_dict()
        other = build_config(_doc(grid={"N": 2048})).semantic_dict()
        assert config_hash(base) != config_hash(other)

    def test_output_directory_not_semantic(self):
        a = build_config(_doc(output={"directory": "x"})).semantic_dict()
        b = build_config(_doc(output={"directory": "y"})).semantic_dict()
        assert config_hash(a) == config_hash(b)


class TestParseConfig:
    def test_minimal_critical(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text(MINIMAL)
        cfg = parse_config(path)
        assert cfg.alpha == 2.0
        assert cfg.alpha_is_critical
        assert cfg.mass_expr == "0.9*a_star"

    @pytest.mark.parametrize("d,n", [(1, 4096), (2, 512)])
    def test_grid_defaults(self, d, n):
        doc = _doc()
        doc["problem"]["d"] = d
        cfg = build_config(doc)
        assert cfg.grid.n == n and cfg.grid.length == 128.0

    def test_well_exponent_at_threshold(self):
        with pytest.raises(ConfigError, match=r"\(V3\)"):
            build_config(_doc(potential={"kind": "periodic_power", "p": 3.0}))

    def test_alpha_beyond_sobolev(self):
        doc = _doc()
        doc["problem"].update(d=2, s=0.5, alpha=2.5)
        with pytest.raises(ConfigError, match="Sobolev"):
            build_config(doc)

    def test_non_integer_period(self):
        with pytest.raises(ConfigError, match="period"):
            build_config(_doc(grid={"L": 7.5}, potential={"kind": "periodic_power"}))

    @pytest.mark.parametrize("section,key,value,where", [
        ("grid", "N", 1000, "[grid].N"),
        ("grid", "N", 32, "[grid].N"),
        ("grid", "L", -1.0, "[grid].L"),
        ("problem", "s", 1.0, "[problem].s"),
        ("problem", "d", 3, "[problem].d"),
        ("problem", "a", -1.0, "[problem].a"),
        ("output", "formats", ["png"], "[output].formats"),
    ])
    def test_violation_names_key(self, section, key, value, where):
        doc = _doc()
        doc.setdefault(section, {})[key] = value
        with pytest.raises(ConfigError) as exc:
            build_config(doc)
        assert where in str(exc.value)

    def test_a_star_needs_critical(self):
        doc = _doc()
        doc["problem"].update(alpha=1.0, a="0.5*a_star")
        with pytest.raises(ConfigError, match="critical"):
            build_config(doc)

    @pytest.mark.parametrize("sched", [[], [3, 2], [2, 2]])
    def test_bad_schedule(self, sched):
        with pytest.raises(ConfigError, match="schedule"):
            build_config(_doc(sweep={"schedule": sched}))

    def test_unknown_section(self):
        doc = _doc()
        doc["plot"] = {}
        with pytest.raises(ConfigError, match=r"\[plot\]"):
            build_config(doc)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="no such file"):
            parse_config(tmp_path / "none.toml")

    def test_toml_syntax_error(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("[problem\nd = 1\n")
        with pytest.raises(ConfigError, match="bad.toml"):
            parse_config(path)


class TestDispatch:
    def test_unknown_subcommand(self, capsys):
        assert dispatch(["bogus"]) == EXIT_INVALID
        assert "usage" in capsys.readouterr().err

    def test_no_subcommand(self, capsys):
        assert dispatch([]) == EXIT_INVALID
        assert "usage" in capsys.readouterr().err

    def test_invalid_config_exit(self, tmp_path, capsys):
        path = tmp_path / "run.toml"
        path.write_text(MINIMAL.replace('alpha = "critical"', "alpha = 9.0"))
        assert dispatch(["minimize", "--config", str(path)]) == EXIT_INVALID
        assert "alpha" in capsys.readouterr().err

    def test_groundstate_then_check(self, tmp_path):
        q, rep = tmp_path / "q.field", tmp_path / "g.json"
        code = dispatch(["groundstate", "--d", "1", "--s", "0.5", "--alpha", "2", "--N", "1024", "--L", "64",
                         "--out", str(q), "--report", str(rep)])
        assert code == EXIT_OK
        doc = json.loads(rep.read_text())
        assert doc["payload"]["solve"]["converged"]
        assert doc["payload"]["mass"] == pytest.approx(2.4693, abs=0.01)
        assert read_field(q).grid.n == 1024

        chk = tmp_path / "c.json"
        assert dispatch(["check", "pohozaev", str(q), "--report", str(chk)]) == EXIT_OK
        payload = json.loads(chk.read_text())["payload"]
        assert {"r1", "r2"} <= set(payload["pohozaev"])
        assert payload["pohozaev"]["r1"] < 0.01

    def test_check_without_s(self, tmp_path):
        g = make_grid(1, 64, 8.0)
        path = write_field(tmp_path / "u.field", Field(g, np.exp(-g.x1d ** 2)))
        assert dispatch(["check", "energy", str(path)]) == EXIT_INVALID

    def test_check_corrupt_file(self, tmp_path):
        path = tmp_path / "u.field"
        path.write_bytes(b"garbage")
        assert dispatch(["check", "all", str(path), "--s", "0.5"]) == EXIT_INVALID

    def test_flags_override_file(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text(MINIMAL + "\n[grid]\nN = 256\nL = 16\n")
        rep = tmp_path / "s.json"
        assert dispatch(["spectrum", "--config", str(path), "--N", "128", "--potential", "periodic_power",
                         "--report", str(rep)]) == EXIT_OK
        cfg = json.loads(rep.read_text())["config"]
        assert cfg["grid"]["n"] == 128 and cfg["grid"]["length"] == 16.0
        assert cfg["potential"]["kind"] == "periodic_power"

    def test_spectrum_gap(self, tmp_path):
        rep = tmp_path / "s.json"
        code = dispatch(["spectrum", "--d", "1", "--s", "0.5", "--N", "256", "--L", "8", "--potential", "periodic_power",
                         "--report", str(rep)])
        assert code == EXIT_OK
        v2 = json.loads(rep.read_text())["payload"]["v2"]
        assert v2["holds"] and v2["margin"] > 0

    def test_minimize_divergence_exit(self, tmp_path):
        rep = tmp_path / "m.json"
        code = dispatch(["minimize", "--d", "1", "--s", "0.5", "--alpha", "3", "--a", "10", "--N", "1024", "--L", "32",
                         "--report", str(rep)])
        assert code == EXIT_DIVERGED
        assert "diverged" in json.loads(rep.read_text())["payload"]["verdict"]

    def test_minimize_subcritical(self, tmp_path):
        rep = tmp_path / "m.json"
        code = dispatch(["minimize", "--d", "1", "--s", "0.5", "--alpha", "1", "--a", "1", "--N", "1024", "--L", "64",
                         "--report", str(rep)])
        assert code == EXIT_OK
        assert json.loads(rep.read_text())["payload"]["solve"]["energy"]["total"] < 0

    def test_witness(self, tmp_path):
        rep = tmp_path / "w.json"
        code = dispatch(["witness", "--d", "1", "--s", "0.5", "--alpha", "3", "--a", "10", "--N", "4096", "--L", "64",
                         "--report", str(rep)])
        assert code == EXIT_OK
        assert json.loads(rep.read_text())["payload"]["verdict"] == "unbounded-below"

    def test_sweep_outputs(self, tmp_path):
        path = tmp_path / "sweep.toml"
        path.write_text(SWEEP)
        out = tmp_path / "out"
        assert dispatch(["sweep", "--config", str(path), "--out", str(out)]) == EXIT_OK
        lines = (out / "sweep.csv").read_text().splitlines()
        assert lines[0] == CSV_COLUMNS
        assert len(lines) == 3
        summary = json.loads((out / "summary.json").read_text())
        assert {"slope_energy", "slope_kinetic", "lambda0_predicted", "lambda0_fitted", "profile_dists"} <= set(summary["payload"])
        assert summary["config"]["problem"]["schedule"] == [2, 3]

    def test_sweep_needs_critical(self, tmp_path):
        path = tmp_path / "sweep.toml"
        path.write_text(SWEEP.replace('alpha = "critical"', "alpha = 1.0"))
        assert dispatch(["sweep", "--config", str(path), "--out", str(tmp_path)]) == EXIT_INVALID


class TestDeterminism:
    def test_sweep_byte_identical(self, tmp_path):
        path = tmp_path / "sweep.toml"
        path.write_text(SWEEP)
        outs = []
        for tag in ("a", "b"):
            assert dispatch(["sweep", "--config", str(path), "--out", str(tmp_path / tag)]) == EXIT_OK
            outs.append(((tmp_path / tag / "sweep.csv").read_bytes(), (tmp_path / tag / "summary.json").read_bytes()))
        assert outs[0] == outs[1]

    def test_groundstate_byte_identical(self, tmp_path):
        blobs = []
        for tag in ("a", "b"):
            q, rep = tmp_path / f"{tag}.field", tmp_path / f"{tag}.json"
            dispatch(["groundstate", "--d", "1", "--s", "0.5", "--alpha", "1", "--N", "512", "--L", "64",
                      "--out", str(q), "--report", str(rep)])
            blobs.append((q.read_bytes(), rep.read_text().replace(str(q), "")))
        assert blobs[0] == blobs[1]

    def test_timing_only_on_request(self, tmp_path):
        rep = tmp_path / "t.json"
        dispatch(["groundstate", "--d", "1", "--s", "0.5", "--alpha", "1", "--N", "256", "--L", "32",
                  "--timing", "--report", str(rep)])
        assert json.loads(rep.read_text())["wall_time"] >= 0


class TestThreads:
    @pytest.mark.parametrize("value,expected", [(None, 1), ("4", 4), ("0", 1)])
    def test_env_cap(self, monkeypatch, value, expected):
        if value is None:
            monkeypatch.delenv("FNLS_THREADS", raising=False)
        else:
            monkeypatch.setenv("FNLS_THREADS", value)
        assert sweep_workers() == expected
