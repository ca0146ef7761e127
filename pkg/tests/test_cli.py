import dataclasses
import json

import numpy as np
import pytest

from z2ent.cli import EXIT_BUDGET, EXIT_OK, EXIT_USAGE, run
from z2ent.config import ConfigError, RunConfig
from z2ent.lattice import LatticeGeometry, cut_torus_map
from z2ent.pauli import PauliString
from z2ent.pipelines import read_archive, run_verify

SMALL = ["--set", "geometry={kind: cut_torus, nx_a: 2, nx_b: 2, ny: 2}"]


def test_default_verify_passes(tmp_path, capsys):
    assert run(["verify", "--out", str(tmp_path)]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["ok"]
    meta = json.loads((tmp_path / "metadata.json").read_text())
    assert meta["summary"]["n_fail"] == 0
    lines = (tmp_path / "verify.csv").read_text().splitlines()
    assert lines[0].startswith("# z2ent") and "config=" in lines[0]


def test_corrupted_map_fails(tmp_path):
    m = cut_torus_map(2, 2, 2)
    links = dict(m.link_images)
    k = next(iter(links))
    img = links[k]
    links[k] = PauliString(img.n, 0, img.x | img.z, 0)
    bad = dataclasses.replace(m, link_images=links)
    cfg = RunConfig.from_dict({"geometries": [{"kind": "cut_torus", "nx_a": 2, "nx_b": 2, "ny": 2}]})
    name = LatticeGeometry.cut_torus(2, 2, 2).describe()
    rep = run_verify(cfg, tmp_path, maps={name: bad})
    assert not rep.ok
    assert any(e["check"] == "canonical_map" and e["status"] == "fail" for e in rep.entries)


def test_empty_geometry_list_is_usage_error(tmp_path):
    assert run(["verify", "--out", str(tmp_path), "--set", "geometries=[]"]) == EXIT_USAGE


def test_unknown_key_rejected(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("epsilon: 0.2\nbogus_key: 1\n")
    assert run(["ground-es", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"analysis": {"nope": 1}})


def test_bad_flag_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        run(["verify", "--no-such-flag"])
    assert exc.value.code == EXIT_USAGE


def test_budget_exceeded(tmp_path):
    args = ["quench", "--out", str(tmp_path), "--budget-gb", "1e-6", *SMALL]
    assert run(args) == EXIT_BUDGET


def test_random_eigenstate_beyond_dense_limit(tmp_path):
    args = ["quench", "--out", str(tmp_path), "--set", "geometry={kind: cut_torus, nx_a: 3, nx_b: 3, ny: 3}"]
    assert run(args) == EXIT_BUDGET


def _strip_meta(path):
    meta = json.loads(path.read_text())
    meta.pop("timestamp")
    meta["config"].pop("output")
    return meta


def test_outputs_bit_identical(tmp_path, capsys):
    args = ["quench", *SMALL, "--seed", "7", "--set", "quench.times={stop: 4, num: 9}"]
    for d in ("a", "b"):
        assert run([*args, "--out", str(tmp_path / d)]) == EXIT_OK
    capsys.readouterr()
    for name in ("timeseries.csv", "spectra.csv", "ratio_histogram.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert _strip_meta(tmp_path / "a" / "metadata.json") == _strip_meta(tmp_path / "b" / "metadata.json")


def test_quench_archive_roundtrip(tmp_path, capsys):
    assert run(["quench", *SMALL, "--set", "quench.mode=electric_product", "--set", "quench.times=[0, 1, 2]",
                "--out", str(tmp_path)]) == EXIT_OK
    capsys.readouterr()
    arch = read_archive(tmp_path)
    assert [t for t, _ in arch] == [0.0, 1.0, 2.0]
    for _, p in arch:
        assert p.sum() == pytest.approx(1.0, abs=1e-10)
        assert np.all(np.diff(p) <= 0)


def test_ground_es_electric_free_point(tmp_path, capsys):
    assert run(["ground-es", *SMALL, "--set", "epsilons=[0.0]", "--out", str(tmp_path)]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    rank = summary[0]["schmidt_rank"]
    assert summary[0]["entropy"] == pytest.approx(np.log(rank), abs=1e-9)


def test_scan_record(tmp_path, capsys):
    assert run(["scan", *SMALL, "--set", "epsilons=[0.05, 0.1, 0.15, 0.2]", "--out", str(tmp_path)]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["epsilon_c"] > 0
    assert (tmp_path / "critical.csv").exists()


def test_scaling_fit_requires_archive(tmp_path):
    assert run(["scaling-fit", "--out", str(tmp_path)]) == EXIT_USAGE
