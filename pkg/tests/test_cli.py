import json
import math

import numpy as np
import pytest

from nmk_sim import cli
from nmk_sim.errors import SchemaViolation


def _base_doc(**overrides):
    doc = {
        "mode": "simulate",
        "system": {
            "n": 1, "d": 2,
            "hamiltonian": [{"support": [0], "matrix": "sigma_z", "scale": 0.5}],
            "jumps": [{"support": [0], "matrix": "sigma_x", "bath": 0}],
            "initial": {"basis_state": 0},
        },
        "baths": [{"kernel": {"kind": "lorentzian_sum",
                              "terms": [{"alpha": 1.0, "omega": 0.0,
                                         "gamma": 1.0}]}}],
        "mollifier": {"epsilon": 0.05},
        "cutoff_omega": 3.0,
        "modes": 4,
        "particle_cap": 1,
        "t_final": 0.5,
        "out_step": 0.25,
    }
    doc.update(overrides)
    return doc


def _write(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


# -- schema validation ------------------------------------------------------------

def test_missing_section_is_exit_two(tmp_path, capsys):
    path = _write(tmp_path, {"mode": "simulate"})
    code = cli.main(["simulate", "--config", path, "--out", str(tmp_path / "o")])
    assert code == 2
    assert "required property" in capsys.readouterr().err


def test_field_path_in_diagnostic(tmp_path, capsys):
    doc = _base_doc()
    doc["modes"] = -3
    path = _write(tmp_path, doc)
    code = cli.main(["simulate", "--config", path, "--out", str(tmp_path / "o")])
    assert code == 2
    assert "modes" in capsys.readouterr().err


def test_unknown_field_rejected(tmp_path):
    doc = _base_doc(extra_knob=1)
    with pytest.raises(SchemaViolation):
        cli.ExperimentConfig.from_document(doc)


def test_bath_index_out_of_range(tmp_path):
    doc = _base_doc()
    doc["system"]["jumps"][0]["bath"] = 3
    with pytest.raises(SchemaViolation):
        cli.ExperimentConfig.from_document(doc)


def test_malformed_json_is_exit_two(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    code = cli.main(["simulate", "--config", str(path),
                     "--out", str(tmp_path / "o")])
    assert code == 2
    assert "line" in capsys.readouterr().err


def test_numerical_failure_is_exit_three(tmp_path, capsys):
    doc = _base_doc()
    doc["baths"][0]["kernel"] = {
        "kind": "tabulated",
        "grid": {"start": -5.0, "stop": 5.0, "values": [0.0] * 65},
    }
    path = _write(tmp_path, doc)
    code = cli.main(["simulate", "--config", path, "--out", str(tmp_path / "o")])
    assert code == 3
    assert "numerical failure" in capsys.readouterr().err


# -- chain-map ---------------------------------------------------------------------

def test_chain_map_flat_kernel_matches_legendre(tmp_path):
    doc = _base_doc(mode="chain-map", cutoff_omega=1.0, modes=4)
    doc["baths"][0]["kernel"] = {
        "kind": "tabulated",
        "grid": {"start": -2.0, "stop": 2.0, "values": [1.0] * 129},
    }
    doc["mollifier"] = {"epsilon": 1e-4}
    doc["regularization"] = {"omega_max": 3.0, "n_points": 4097}
    path = _write(tmp_path, doc)
    out = tmp_path / "out"
    assert cli.main(["chain-map", "--config", path, "--out", str(out)]) == 0
    chains = json.loads((out / "chain.json").read_text())
    onsite = np.array(chains[0]["onsite"])
    hopping = np.array(chains[0]["hopping"])
    alphas = np.arange(1, 4)
    assert np.max(np.abs(onsite)) < 1e-8
    assert np.max(np.abs(hopping - alphas / np.sqrt(4.0 * alphas**2 - 1))) < 1e-6


# -- simulate ----------------------------------------------------------------------

def test_zero_coupling_matches_closed_system(tmp_path):
    doc = _base_doc()
    doc["system"]["jumps"][0]["scale"] = 0.0
    doc["system"]["initial"] = {"amplitudes": {"re": [0.6, 0.8]}}
    path = _write(tmp_path, doc)
    out = tmp_path / "out"
    assert cli.main(["simulate", "--config", path, "--out", str(out)]) == 0
    rows = (out / "trajectory.csv").read_text().strip().split("\n")
    header = rows[0].split(",")
    idx = {h: i for i, h in enumerate(header)}
    for row in rows[1:]:
        vals = row.split(",")
        t = float(vals[idx["t"]])
        # rho_ee is constant under sigma_z alone
        assert float(vals[idx["rho_0_0_re"]]) == pytest.approx(0.36, abs=1e-10)
        # coherence precesses at the sigma_z splitting
        expected = 0.48 * complex(math.cos(t), -math.sin(t))
        got = complex(float(vals[idx["rho_0_1_re"]]),
                      float(vals[idx["rho_0_1_im"]]))
        assert got == pytest.approx(expected, abs=1e-10)


def test_csv_is_byte_reproducible(tmp_path):
    path = _write(tmp_path, _base_doc())
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert cli.main(["simulate", "--config", path, "--out", str(out1)]) == 0
    assert cli.main(["simulate", "--config", path, "--out", str(out2)]) == 0
    assert (out1 / "trajectory.csv").read_bytes() == \
        (out2 / "trajectory.csv").read_bytes()


def test_seventeen_digit_floats(tmp_path):
    path = _write(tmp_path, _base_doc())
    out = tmp_path / "out"
    cli.main(["simulate", "--config", path, "--out", str(out)])
    rows = (out / "trajectory.csv").read_text().strip().split("\n")
    cell = rows[1].split(",")[1]
    assert float(cell) == float(format(float(cell), ".17g"))


# -- certify ------------------------------------------------------------------------

def test_certify_budget_dominates_gaps(tmp_path):
    path = _write(tmp_path, _base_doc(mode="certify"))
    out = tmp_path / "out"
    assert cli.main(["certify", "--config", path, "--out", str(out)]) == 0
    budget = json.loads((out / "budget.json").read_text())
    assert budget["total"] == pytest.approx(
        sum(budget[k] for k in ("regularization", "cutoff", "chain",
                                "truncation", "initialization")))
    rows = (out / "report.csv").read_text().strip().split("\n")[1:]
    for row in rows:
        kind, certified, measured = row.split(",")
        if kind != "total":
            assert float(certified) >= float(measured) - 1e-12
    total_row = rows[-1].split(",")
    assert float(total_row[1]) >= float(total_row[2])


def test_single_photon_environment(tmp_path):
    doc = _base_doc()
    doc["baths"][0]["initial"] = {
        "type": "single_photon",
        "wavepacket": {"center": 0.0, "width": 0.5},
    }
    path = _write(tmp_path, doc)
    out = tmp_path / "out"
    assert cli.main(["simulate", "--config", path, "--out", str(out)]) == 0
    rows = (out / "trajectory.csv").read_text().strip().split("\n")
    header = rows[0].split(",")
    first = rows[1].split(",")
    mu1 = float(first[header.index("mu1_0")])
    assert mu1 == pytest.approx(1.0, abs=1e-10)  # one photon prepared


def test_certify_single_photon_state_constants(tmp_path):
    doc = _base_doc(mode="certify", t_final=0.25)
    doc["baths"][0]["initial"] = {
        "type": "single_photon",
        "wavepacket": {"center": 0.0, "width": 0.5},
    }
    path = _write(tmp_path, doc)
    out = tmp_path / "out"
    assert cli.main(["certify", "--config", path, "--out", str(out)]) == 0
    budget = json.loads((out / "budget.json").read_text())
    # photon states carry nonzero regularization-slope constants
    assert budget["regularization"] > 0.0
    assert budget["initialization"] >= 0.0


def test_certify_coherent_state_unsupported(tmp_path, capsys):
    doc = _base_doc(mode="certify", t_final=0.25, particle_cap=3)
    doc["baths"][0]["initial"] = {
        "type": "coherent",
        "displacements": {"re": [0.2, 0.0, 0.0, 0.0]},
    }
    path = _write(tmp_path, doc)
    code = cli.main(["certify", "--config", path, "--out",
                     str(tmp_path / "o")])
    assert code == 3
    assert "numerical failure" in capsys.readouterr().err


# -- compare-oracle -----------------------------------------------------------------

def test_compare_oracle_report(tmp_path):
    doc = _base_doc(mode="compare-oracle")
    doc["oracle"] = {"star_modes": 24}
    path = _write(tmp_path, doc)
    out = tmp_path / "out"
    assert cli.main(["compare-oracle", "--config", path, "--out", str(out)]) == 0
    rows = (out / "report.csv").read_text().strip().split("\n")
    assert rows[0] == "t,trace_distance"
    dists = [float(r.split(",")[1]) for r in rows[1:]]
    assert all(d < 5e-3 for d in dists)
    oracle_rows = (out / "oracle-trajectory.csv").read_text().strip().split("\n")
    assert oracle_rows[1].split(",")[-1] == "1"  # oracle flag column


# -- sweep --------------------------------------------------------------------------

def test_sweep_grid_rows(tmp_path):
    doc = _base_doc(mode="sweep")
    doc["sweep"] = {"particle_cap": [1, 2], "modes": [4, 6]}
    path = _write(tmp_path, doc)
    out = tmp_path / "out"
    assert cli.main(["sweep", "--config", path, "--out", str(out),
                     "--jobs", "2"]) == 0
    rows = (out / "sweep.csv").read_text().strip().split("\n")
    assert len(rows) == 1 + 4
    header = rows[0].split(",")
    assert "cert_total" in header and "meas_truncation" in header
    # certified columns dominate measured ones on every row
    idx = {h: i for i, h in enumerate(header)}
    for row in rows[1:]:
        vals = row.split(",")
        for kind in ("truncation", "cutoff", "chain"):
            assert float(vals[idx[f"cert_{kind}"]]) >= \
                float(vals[idx[f"meas_{kind}"]]) - 1e-12


def test_sweep_without_axes_rejected(tmp_path, capsys):
    path = _write(tmp_path, _base_doc())
    code = cli.main(["sweep", "--config", path, "--out", str(tmp_path / "o")])
    assert code == 2
