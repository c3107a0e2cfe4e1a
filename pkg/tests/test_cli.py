import json

import numpy as np
import pytest

from crossover import (
    CrossoverDesign,
    design_to_text,
    full_sequence_set,
    random_consistent_table,
    realize_dataset,
    sample_assignment,
)
from crossover.cli import (
    EXIT_NOT_IDENTIFIABLE,
    EXIT_OK,
    EXIT_PARSE,
    main,
    parse_dataset,
    parse_estimand_request,
)

SCOPE2 = full_sequence_set(2)


def dataset_csv(dataset) -> str:
    lines = ["unit,sequence," + ",".join(f"y{t}" for t in range(1, dataset.design.horizon + 1))]
    for i, z in enumerate(dataset.assignments):
        values = ",".join(repr(float(v)) for v in dataset.outcomes[i])
        lines.append(f"u{i},{z},{values}")
    return "\n".join(lines) + "\n"


def table_csv(table) -> str:
    lines = ["unit,sequence," + ",".join(f"y{t}" for t in range(1, table.horizon + 1))]
    for z in table.scope:
        for i in range(table.n_units):
            values = ",".join(repr(float(v)) for v in table.outcomes[z][i])
            lines.append(f"u{i:03d},{z},{values}")
    return "\n".join(lines) + "\n"


def simulated_dataset(seed=0, counts=(5, 5, 5, 5)):
    design = CrossoverDesign(2, dict(zip(("AA", "AB", "BA", "BB"), counts)))
    table = random_consistent_table(2, "b", 1, design.n_units, seed=seed)
    return realize_dataset(table, sample_assignment(design, seed))


class TestParseDataset:
    def test_two_row_file(self):
        text = "unit,sequence,y1,y2\n1,AB,0.5,1.5\n2,BA,0.25,0.75\n"
        dataset, design = parse_dataset(text)
        assert dataset.n_units == 2
        assert design.count("AB") == 1

    def test_bad_symbol_names_row(self):
        text = "unit,sequence,y1,y2\n1,AB,0,1\n2,AC,0,1\n"
        with pytest.raises(ValueError, match="row 3"):
            parse_dataset(text)

    def test_ragged_row_named(self):
        text = "unit,sequence,y1,y2\n1,AB,0\n"
        with pytest.raises(ValueError, match="row 2"):
            parse_dataset(text)

    def test_non_numeric_outcome_named(self):
        text = "unit,sequence,y1,y2\n1,AB,x,1\n"
        with pytest.raises(ValueError, match="row 2"):
            parse_dataset(text)

    def test_count_mismatch_against_design(self):
        design = CrossoverDesign(2, {"AB": 2, "BA": 1})
        text = "unit,sequence,y1,y2\n1,AB,0,1\n2,BA,0,1\n3,BA,0,1\n"
        with pytest.raises(ValueError, match="counts"):
            parse_dataset(text, design)

    def test_binary_outcomes_accepted(self):
        text = "unit,sequence,y1,y2\n1,AB,0,1\n2,BA,1,0\n"
        dataset, _ = parse_dataset(text)
        assert set(np.unique(dataset.outcomes)) <= {0.0, 1.0}


class TestEstimandGrammar:
    def test_tau_request(self):
        spec = parse_estimand_request("tau t=2 history=A", SCOPE2)
        assert spec.labels == ("tau_2(A)",)

    def test_carry_request(self):
        spec = parse_estimand_request("carry t=2 k=1 suffix=B", SCOPE2)
        assert spec.labels == ("tau_2^1(B)",)

    def test_marginal_request(self):
        spec = parse_estimand_request(
            "marginal of [tau t=2 history=A | tau t=2 history=B] weights=0.5,0.5", SCOPE2
        )
        assert np.allclose(spec.weight("AA")[0], [0, 0.5])
        assert np.allclose(spec.weight("BB")[0], [0, -0.5])

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            parse_estimand_request("ratio t=2", SCOPE2)


class TestIdentifyCommand:
    def test_rank_deficient_design_exits_nonzero(self, tmp_path, capsys):
        design_file = tmp_path / "design.txt"
        design_file.write_text("T 2\nAB 4\nBA 4\n")
        code = main(["identify", "--design", str(design_file), "--scenario", "a"])
        out = capsys.readouterr().out
        assert code == EXIT_NOT_IDENTIFIABLE
        assert "not identifiable" in out
        assert "rank 6 of 8" in out

    def test_identifiable_design_lists_witnesses(self, tmp_path, capsys):
        design_file = tmp_path / "design.txt"
        design_file.write_text("T 2\nAB 4\nBA 4\n")
        code = main(["identify", "--design", str(design_file), "--scenario", "b", "--k", "1"])
        out = capsys.readouterr().out
        assert code == EXIT_OK
        assert "identifiable (rank 8 of 8)" in out
        assert "AA 2 yes" in out

    def test_restriction_dump_is_auditable_csv(self, tmp_path, capsys):
        design_file = tmp_path / "design.txt"
        design_file.write_text("T 2\nAB 4\nBA 4\n")
        dump = tmp_path / "restriction.csv"
        code = main(
            [
                "identify",
                "--design",
                str(design_file),
                "--scenario",
                "b",
                "--k",
                "1",
                "--dump-restriction",
                str(dump),
            ]
        )
        capsys.readouterr()
        assert code == EXIT_OK
        lines = dump.read_text().strip().splitlines()
        assert lines[0].startswith("g_1_AA,g_2_AA,g_1_AB")
        matrix = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
        assert matrix.shape == (4, 8)
        assert np.linalg.matrix_rank(matrix) == 4


class TestFitCommand:
    def test_fit_report_structure(self, tmp_path):
        dataset = simulated_dataset(seed=3)
        data_file = tmp_path / "data.csv"
        data_file.write_text(dataset_csv(dataset))
        out_file = tmp_path / "report.json"
        code = main(
            [
                "fit",
                "--data",
                str(data_file),
                "--scenario",
                "b",
                "--k",
                "1",
                "--out",
                str(out_file),
            ]
        )
        assert code == EXIT_OK
        report = json.loads(out_file.read_text())
        assert report["rank"]["identifiable"] is True
        assert len(report["coefficients"]) == 8
        labels = [row["label"] for row in report["estimands"]]
        assert labels[0] == "tau_1"
        for row in report["estimands"]:
            assert row["ci_lower"] <= row["point"] <= row["ci_upper"]

    def test_fit_is_deterministic(self, tmp_path):
        dataset = simulated_dataset(seed=4)
        data_file = tmp_path / "data.csv"
        data_file.write_text(dataset_csv(dataset))
        first = tmp_path / "a.json"
        second = tmp_path / "b.json"
        for out in (first, second):
            assert (
                main(["fit", "--data", str(data_file), "--scenario", "c", "--k", "1", "--out", str(out)])
                == EXIT_OK
            )
        assert first.read_text() == second.read_text()

    def test_three_period_fit_reports_requested_rows(self, tmp_path):
        design = CrossoverDesign(3, {"AAB": 4, "ABA": 4, "BAA": 4})
        table = random_consistent_table(3, "b", 1, 12, seed=9)
        dataset = realize_dataset(table, sample_assignment(design, 2))
        data_file = tmp_path / "data3.csv"
        data_file.write_text(dataset_csv(dataset))
        out_file = tmp_path / "report3.json"
        code = main(
            [
                "fit",
                "--data",
                str(data_file),
                "--scenario",
                "b",
                "--k",
                "1",
                "--estimand",
                "tau t=1",
                "--estimand",
                "tau t=2 history=A",
                "--estimand",
                "tau t=3 history=AA",
                "--out",
                str(out_file),
            ]
        )
        assert code == EXIT_OK
        report = json.loads(out_file.read_text())
        assert [row["label"] for row in report["estimands"]] == [
            "tau_1",
            "tau_2(A)",
            "tau_3(AA)",
        ]

    def test_closed_form_engine(self, tmp_path):
        dataset = simulated_dataset(seed=6)
        data_file = tmp_path / "data.csv"
        data_file.write_text(dataset_csv(dataset))
        out_file = tmp_path / "closed.json"
        code = main(
            [
                "fit",
                "--data",
                str(data_file),
                "--scenario",
                "b",
                "--k",
                "1",
                "--engine",
                "closed-form",
                "--out",
                str(out_file),
            ]
        )
        assert code == EXIT_OK
        report = json.loads(out_file.read_text())
        assert report["engine"] == "closed-form"
        assert {row["label"] for row in report["estimands"]} == {"tau_1", "tau_2"}

    def test_unidentifiable_fit_exits_three(self, tmp_path):
        design = CrossoverDesign(2, {"AB": 5, "BA": 5})
        table = random_consistent_table(2, "a", 1, 10, seed=5)
        dataset = realize_dataset(table, sample_assignment(design, 1))
        data_file = tmp_path / "data.csv"
        data_file.write_text(dataset_csv(dataset))
        code = main(["fit", "--data", str(data_file), "--scenario", "a"])
        assert code == EXIT_NOT_IDENTIFIABLE

    def test_parse_failure_exits_two(self, tmp_path):
        data_file = tmp_path / "data.csv"
        data_file.write_text("unit,sequence,y1,y2\n1,AC,0,1\n")
        code = main(["fit", "--data", str(data_file), "--scenario", "b", "--k", "1"])
        assert code == EXIT_PARSE


class TestSimulateCommand:
    def test_simulate_round_trip(self, tmp_path):
        config = {
            "design": {"T": 2, "counts": {"AB": 10, "BA": 10}},
            "scenario": "b",
            "k": 1,
            "replications": 12,
            "seed": 5,
            "generator": {"kind": "constant_effect", "seed": 7},
        }
        config_file = tmp_path / "study.json"
        config_file.write_text(json.dumps(config))
        out_file = tmp_path / "mc.json"
        csv_file = tmp_path / "bias.csv"
        code = main(
            [
                "simulate",
                "--config",
                str(config_file),
                "--out",
                str(out_file),
                "--bias-csv",
                str(csv_file),
            ]
        )
        assert code == EXIT_OK
        report = json.loads(out_file.read_text())
        assert report["replications"] == 12
        assert len(report["estimands"]) == 5
        lines = csv_file.read_text().strip().splitlines()
        assert len(lines) == 1 + 12 * 5


class TestAuditCommand:
    def test_audit_exact_unbiasedness(self, tmp_path):
        design = CrossoverDesign(2, {"AB": 2, "BA": 2})
        design_file = tmp_path / "design.txt"
        design_file.write_text(design_to_text(design))
        table = random_consistent_table(2, "b", 1, 4, seed=17)
        table_file = tmp_path / "table.csv"
        table_file.write_text(table_csv(table))
        out_file = tmp_path / "audit.json"
        code = main(
            [
                "audit",
                "--table",
                str(table_file),
                "--design",
                str(design_file),
                "--scenario",
                "b",
                "--k",
                "1",
                "--out",
                str(out_file),
            ]
        )
        assert code == EXIT_OK
        report = json.loads(out_file.read_text())
        assert report["n_assignments"] == 6
        for row in report["estimands"]:
            assert row["exact_mean"] == pytest.approx(row["formula_mean"], abs=1e-9)
            assert row["exact_variance"] == pytest.approx(row["formula_variance"], abs=1e-9)


class TestRoundTrip:
    def test_simulator_written_data_reingests_identically(self, tmp_path):
        dataset = simulated_dataset(seed=11)
        text = dataset_csv(dataset)
        reparsed, _ = parse_dataset(text, dataset.design)
        assert reparsed.assignments == dataset.assignments
        assert np.array_equal(reparsed.outcomes, dataset.outcomes)
