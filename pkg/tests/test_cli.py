import hashlib

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gclab.cli import (
    ConfigError,
    ExperimentConfig,
    SCHEMA,
    field_dump,
    fmt,
    main,
    parse_complex,
    parse_config,
    read_field,
)

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


def run(tmp_path, command, config="", *extra):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text(config)
    return main([command, "--config", str(cfg), "--out", str(tmp_path / "out"), *extra])


@given(finite, finite)
def test_complex_literal_roundtrip(a, b):
    z = complex(a, b)
    assert parse_complex(fmt(z)) == z


@pytest.mark.parametrize("text,val", [("1", 1), ("-2.5i", -2.5j), ("1e-3-4i", 1e-3 - 4j), ("i", 1j)])
def test_complex_literals(text, val):
    assert parse_complex(text) == val


@pytest.mark.parametrize("bad", ["", "1+2j", "1 + 2i", "abc"])
def test_complex_literal_rejects(bad):
    with pytest.raises(ValueError):
        parse_complex(bad)


@given(
    st.integers(0, 8),
    st.floats(1e-3, 10),
    st.floats(0.05, 0.95),
    st.lists(st.tuples(finite, finite), min_size=3, max_size=3),
    st.integers(0, 2**31),
)
def test_canonical_form_is_fixed_point(r, t0, ratio, coeffs, seed):
    text = (
        f"mesh.refinement = {r}\nschedule.t0 = {t0!r}\nschedule.ratio = {ratio!r}\nseed = {seed}\n"
        "beta.coefficients = " + ",".join(fmt(complex(a, b)) for a, b in coeffs) + "\n"
    )
    cfg = parse_config(text)
    again = parse_config(cfg.canonical())
    assert again.canonical() == cfg.canonical() and again.hash() == cfg.hash()
    assert again.values == cfg.values


def test_defaults_cover_schema():
    cfg = parse_config("")
    assert set(cfg.values) == set(SCHEMA)
    assert cfg.beta_key is None
    assert len(cfg.schedule()) == 15


@pytest.mark.parametrize(
    "text,key",
    [
        ("nonsense = 1", "nonsense"),
        ("seed = 1\nseed = 2", "seed"),
        ("mesh.refinement = 9", "mesh.refinement"),
        ("schedule.ratio = 1.5", "schedule"),
        ("blowup.radii = 0.3,0.6", "blowup.radii"),
        ("beta.kodaira_at = nowhere", "beta.kodaira_at"),
        ("beta.kodaira_at = 2", "beta.kodaira_at"),
        ("beta.random = 1\nbeta.kodaira_at = center", "beta"),
        ("solver.damping = 2", "solver"),
        ("curve.coeffs = 1,2,x", "curve.coeffs"),
    ],
)
def test_config_errors_name_the_field(text, key):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.key == key and f"'{key}'" in str(info.value)


def test_config_error_exit_code(tmp_path, capsys):
    assert run(tmp_path, "mesh", "mesh.refinement = -1\n") == 2
    assert "mesh.refinement" in capsys.readouterr().err


def test_bad_curve_exit_code(tmp_path, capsys):
    assert run(tmp_path, "curve-info", "curve.coeffs = 0,0,1,1\n") == 2
    assert "curve.coeffs" in capsys.readouterr().err


def test_curve_info_bolza(tmp_path, capsys):
    assert run(tmp_path, "curve-info") == 0
    out = capsys.readouterr().out
    assert out.startswith("genus 2, dim C2 = 3, 6 Weierstrass points")
    assert (tmp_path / "out" / "curve_info.txt").read_text() == out


def test_curve_info_genus3(tmp_path, capsys):
    assert run(tmp_path, "curve-info", "curve.coeffs = -1,0,0,0,0,0,0,1\n") == 0
    assert capsys.readouterr().out.startswith("genus 3, dim C2 = 6, 8 Weierstrass points")


def test_mesh_deterministic(tmp_path, capsys):
    assert run(tmp_path, "mesh", "mesh.refinement = 1\n") == 0
    out = capsys.readouterr().out
    assert "triangles: 32" in out and "euler characteristic: -2" in out
    first = (tmp_path / "out" / "mesh.txt").read_bytes()
    assert run(tmp_path, "mesh", "mesh.refinement = 1\n") == 0
    assert (tmp_path / "out" / "mesh.txt").read_bytes() == first


def test_corrupt_identification_exit_code(tmp_path, capsys):
    assert run(tmp_path, "mesh", "mesh.refinement = 1\n") == 0
    p = tmp_path / "out" / "mesh.txt"
    lines = p.read_text().splitlines()
    i = next(n for n, l in enumerate(lines) if l.startswith("IDENT ")) + 1
    v, rep, k = lines[i].split()
    lines[i] = f"{v} {rep} {(int(k) + 1) % 8}"
    p.write_text("\n".join(lines) + "\n")
    capsys.readouterr()
    assert run(tmp_path, "continue", f"mesh.refinement = 1\nmesh.file = {p}\nschedule.steps = 1\n") == 3
    assert "identification" in capsys.readouterr().err


def test_field_roundtrip(tmp_path):
    vals = np.array([1 + 2j, -0.5, 3e-17j])
    p = tmp_path / "f.txt"
    p.write_text(field_dump("eta", vals, (1, 0)))
    assert np.array_equal(read_field(p), vals)


def test_continue_trivial_class(tmp_path, capsys):
    cfg = "mesh.refinement = 2\nbeta.coefficients = 0,0,0\nschedule.steps = 4\n"
    assert run(tmp_path, "continue", cfg) == 0
    from gclab.cli import read_trace

    tr = read_trace(tmp_path / "out" / "trace.txt")
    assert np.allclose(tr.column("d_t"), np.log(1 / tr.column("t")), atol=1e-10)
    assert np.all(tr.column("rho") == 0)
    first = (tmp_path / "out" / "trace.txt").read_bytes()
    assert run(tmp_path, "continue", cfg) == 0
    assert (tmp_path / "out" / "trace.txt").read_bytes() == first


def test_continue_and_blowup(tmp_path, capsys):
    cfg = "mesh.refinement = 2\nbeta.random = 3\nschedule.steps = 6\n"
    assert run(tmp_path, "blowup", cfg) == 0
    out = tmp_path / "out"
    rep = (out / "blowup_report.txt").read_text()
    for section in ("PEAKS", "MASSES", "PATTERNS", "ORTHOGONALITY", "VERDICT"):
        assert section in rep.splitlines()
    assert (out / "plot_max_xi.dat").read_text().count("\n") == 7
    assert sorted(p.name for p in out.glob("u_*.txt")) == ["u_004.txt", "u_005.txt", "u_006.txt"]


def test_sigma_generic_and_member(tmp_path, capsys):
    assert run(tmp_path, "sigma", "sigma.covector = 1,0,1\nsigma.grid = 16\n") == 0
    out = capsys.readouterr().out
    assert "verdict: generic (outside Sigma)" in out and "classification=generic" in out
    assert run(tmp_path, "sigma", "sigma.covector = 1,2,4\nsigma.grid = 16\n") == 0
    out = capsys.readouterr().out
    assert "verdict: in Sigma" in out


def test_sigma_requires_covector(tmp_path):
    assert run(tmp_path, "sigma") == 2
    assert run(tmp_path, "sigma", "sigma.covector = 0,0,0\n") == 2
    assert run(tmp_path, "sigma", "sigma.covector = 1,2\n") == 2


def test_sigma_budget_partial(tmp_path, capsys):
    assert run(tmp_path, "sigma", "sigma.covector = 1,0,1\nsigma.max_evals = 20\n") == 0
    assert "partial report" in capsys.readouterr().out


def test_manifest_lists_every_output(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    assert run(tmp_path, "mesh", "mesh.refinement = 0\n") == 0
    assert run(tmp_path, "curve-info") == 0
    out = tmp_path / "out"
    lines = (out / "manifest.txt").read_text().splitlines()
    runs = [l for l in lines if l.startswith("run ")]
    assert len(runs) == 2 and all("timestamp=1700000000" in l for l in runs)
    files = dict(l.split()[1:3] for l in lines if l.startswith("file "))
    assert set(files) == {"mesh.txt", "curve_info.txt"}
    for name, h in files.items():
        assert h == "sha256=" + hashlib.sha256((out / name).read_bytes()).hexdigest()


def test_seed_override_changes_hash(tmp_path):
    a = parse_config("")
    b = ExperimentConfig(dict(a.values, seed=5))
    assert a.hash() != b.hash()
