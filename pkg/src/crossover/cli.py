"""Command-line front end.

Subcommands
-----------
identify   rank verdict and per-mean identification table for a design
fit        restricted weighted least squares fit of a dataset
simulate   Monte Carlo study over complete randomizations of one table
audit      exact enumeration of the randomization distribution

Design files are plain text: a ``T <horizon>`` line then ``<sequence>
<count>`` lines.  Datasets are CSV with header ``unit,sequence,y1,...,yT``.
Potential-outcome tables for ``audit`` use the same CSV layout with one
row per (unit, sequence) pair covering the whole scope.

Estimand requests (the ``--estimand`` flag, repeatable):

    tau t=<period> [history=<word>]
    carry t=<period> k=<order> [prefix=<word>] [suffix=<word>]
    marginal of [<request> | <request> ...] [weights=<w1,w2,...>]

Words are over {A, B}; omitted history/prefix/suffix default to empty.
Exit codes: 0 success, 2 parse/config failure, 3 identifiability failure,
4 conditioning failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import re
import sys
from pathlib import Path

import numpy as np

from . import twoperiod
from .constraints import assemble
from .errors import ConditioningError, NotIdentifiableError
from .estimands import (
    EstimandSpec,
    PotentialOutcomeTable,
    carryover_effect,
    instantaneous_effect,
    marginal_effect,
    stack,
)
from .identification import (
    is_identifiable,
    mean_derivation_time_invariant,
    mean_witness_carryover,
    mean_witness_no_anticipation,
)
from .rwls import (
    ObservedDataset,
    WeightModel,
    estimate,
    feasible_rwls,
)
from .sequences import (
    CrossoverDesign,
    as_sequence,
    design_from_text,
)
from .simulator import (
    ScenarioGenerator,
    emit_bias_distribution,
    exact_randomization_audit,
    run_monte_carlo,
    standard_two_period_specs,
)

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_NOT_IDENTIFIABLE = 3
EXIT_CONDITIONING = 4


def parse_dataset(text: str, design: CrossoverDesign | None = None):
    """Parse a dataset CSV; returns (dataset, design).

    When no design is given, the counts are tallied from the data and the
    horizon from the header.  Malformed rows raise ValueError naming the
    1-based row number (header is row 1).
    """
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ValueError("row 1: empty file") from None
    header = [h.strip() for h in header]
    if len(header) < 3 or header[0] != "unit" or header[1] != "sequence":
        raise ValueError(f"row 1: header must be unit,sequence,y1,...,yT, got {header}")
    horizon = len(header) - 2
    expected = [f"y{t}" for t in range(1, horizon + 1)]
    if header[2:] != expected:
        raise ValueError(f"row 1: outcome columns must be {expected}, got {header[2:]}")
    if design is not None and design.horizon != horizon:
        raise ValueError(
            f"row 1: data has {horizon} periods but the design has {design.horizon}"
        )
    assignments = []
    rows = []
    for rownum, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise ValueError(f"row {rownum}: expected {len(header)} fields, got {len(row)}")
        try:
            z = as_sequence(row[1].strip())
        except ValueError as exc:
            raise ValueError(f"row {rownum}: {exc}") from exc
        if len(z) != horizon:
            raise ValueError(f"row {rownum}: sequence {z} has length {len(z)}, expected {horizon}")
        try:
            y = [float(cell) for cell in row[2:]]
        except ValueError:
            raise ValueError(f"row {rownum}: non-numeric outcome in {row[2:]}") from None
        assignments.append(z)
        rows.append(y)
    if not rows:
        raise ValueError("row 2: no data rows")
    if design is None:
        counts: dict = {}
        for z in assignments:
            counts[z] = counts.get(z, 0) + 1
        design = CrossoverDesign(horizon, counts)
    else:
        tally: dict = {}
        for z in assignments:
            tally[z] = tally.get(z, 0) + 1
        if tally != design.counts:
            raise ValueError(
                f"per-sequence counts in the data {tally} do not match the design "
                f"{design.counts}"
            )
    dataset = ObservedDataset(design, tuple(assignments), np.array(rows))
    return dataset, design


def parse_table(text: str, design: CrossoverDesign) -> PotentialOutcomeTable:
    """Parse a potential-outcome table CSV covering the design scope."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    horizon = len(header) - 2
    if horizon != design.horizon:
        raise ValueError(f"table has {horizon} periods, design has {design.horizon}")
    per_seq: dict = {z: {} for z in design.scope}
    for rownum, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        unit = row[0].strip()
        try:
            z = as_sequence(row[1].strip())
            values = [float(cell) for cell in row[2:]]
        except ValueError as exc:
            raise ValueError(f"row {rownum}: {exc}") from exc
        if z not in per_seq:
            raise ValueError(f"row {rownum}: sequence {z} outside the design scope")
        per_seq[z][unit] = values
    units = None
    for z, mapping in per_seq.items():
        keys = sorted(mapping, key=lambda u: (len(u), u))
        if units is None:
            units = keys
        elif keys != units:
            raise ValueError(f"sequence {z} does not cover the same units as the others")
    outcomes = {z: np.array([per_seq[z][u] for u in units]) for z in per_seq}
    return PotentialOutcomeTable(design.horizon, outcomes)


_MARGINAL = re.compile(r"^marginal\s+of\s*\[(?P<body>.+)\]\s*(?:weights=(?P<weights>[\d.,eE+\-]+))?$")


def _parse_simple_request(text: str, scope) -> EstimandSpec:
    fields = text.split()
    if not fields:
        raise ValueError("empty estimand request")
    kind, options = fields[0], fields[1:]
    parsed: dict[str, str] = {}
    for option in options:
        if "=" not in option:
            raise ValueError(f"malformed option {option!r} in {text!r}")
        key, value = option.split("=", 1)
        parsed[key] = value
    if kind == "tau":
        period = int(parsed.pop("t"))
        history = parsed.pop("history", "")
        if parsed:
            raise ValueError(f"unknown options {sorted(parsed)} in {text!r}")
        return instantaneous_effect(period, history, scope)
    if kind == "carry":
        period = int(parsed.pop("t"))
        order = int(parsed.pop("k"))
        prefix = parsed.pop("prefix", "")
        suffix = parsed.pop("suffix", "")
        if parsed:
            raise ValueError(f"unknown options {sorted(parsed)} in {text!r}")
        return carryover_effect(period, order, prefix, suffix, scope)
    raise ValueError(f"unknown estimand kind {kind!r} in {text!r}")


def parse_estimand_request(text: str, scope) -> EstimandSpec:
    """Parse one ``--estimand`` request into a spec."""
    text = text.strip()
    match = _MARGINAL.match(text)
    if match:
        parts = [part.strip() for part in match.group("body").split("|")]
        specs = [_parse_simple_request(part, scope) for part in parts]
        weights = None
        if match.group("weights"):
            weights = [float(w) for w in match.group("weights").split(",")]
        return marginal_effect(specs, weights)
    return _parse_simple_request(text, scope)


def _json_out(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _load_weight_model(spec: str, design: CrossoverDesign) -> str | WeightModel:
    if spec in ("sample", "pooled"):
        return spec
    if spec.startswith("file:"):
        payload = json.loads(Path(spec[5:]).read_text())
        matrices = {as_sequence(z): np.array(m, dtype=float) for z, m in payload.items()}
        return WeightModel(matrices, "user")
    raise ValueError(f"--weights must be sample, pooled, or file:PATH, got {spec!r}")


def _cmd_identify(args) -> int:
    design = design_from_text(Path(args.design).read_text())
    restriction = assemble(args.scenario, design.horizon, design.scope, args.k)
    if args.dump_restriction:
        header = ",".join(f"g_{t}_{z}" for t, z in restriction.layout.labels())
        rows = [header]
        rows.extend(
            ",".join(repr(float(v)) for v in row) for row in restriction.matrix
        )
        Path(args.dump_restriction).write_text("\n".join(rows) + "\n")
    check = is_identifiable(design, restriction)
    lines = [f"global rank condition: {check}"]
    lines.append("sequence period verdict how")
    order = args.k if args.k is not None else 1
    for z in design.scope:
        for t in range(1, design.horizon + 1):
            if args.scenario == "a":
                witness = mean_witness_no_anticipation(z, t, design)
                how = f"group {witness}" if witness else "-"
                verdict = "yes" if witness else "no"
            elif args.scenario == "b":
                witness = mean_witness_carryover(z, t, order, design)
                how = f"group {witness}" if witness else "-"
                verdict = "yes" if witness else "no"
            else:
                derivation = mean_derivation_time_invariant(z, t, order, design)
                how = derivation.describe() if derivation else "-"
                verdict = "yes" if derivation else "no"
            lines.append(f"{z} {t} {verdict} {how}")
    report = "\n".join(lines)
    print(report)
    if args.out:
        Path(args.out).write_text(report + "\n")
    return EXIT_OK if check.identifiable else EXIT_NOT_IDENTIFIABLE


def _closed_form_report(dataset: ObservedDataset, scenario: str, level: float) -> list[dict]:
    from scipy import stats as spstats

    summary = twoperiod.TwoPeriodSummary.from_dataset(dataset)
    groups = set(str(z) for z in dataset.design.observed)
    if groups == set(twoperiod.FOUR_SEQ):
        if scenario == "a":
            points = twoperiod.blue_4seq_scenario_a(summary)
        elif scenario == "b":
            points = twoperiod.blue_4seq_scenario_b(summary)
        else:
            points = {"tau": twoperiod.blue_4seq_scenario_c(summary).value}
    elif groups == set(twoperiod.TWO_SEQ):
        if scenario == "a":
            points = {"tau_1": twoperiod.blue_2seq_scenario_a(summary).tau_1}
        elif scenario == "b":
            points = twoperiod.blue_2seq_scenario_b(summary)
        else:
            points = {"tau": twoperiod.blue_2seq_scenario_c(summary).value}
    else:
        raise ValueError("closed-form engine supports the AA/AB/BA/BB and AB/BA designs")
    variances = twoperiod.conservative_variances(summary, scenario)
    z_crit = float(spstats.norm.ppf(0.5 + level / 2.0))
    rows = []
    for label, point in points.items():
        var = variances.get(label)
        se = float(np.sqrt(var)) if var is not None else None
        rows.append(
            {
                "label": label,
                "point": float(point),
                "se": se,
                "ci_lower": float(point - z_crit * se) if se is not None else None,
                "ci_upper": float(point + z_crit * se) if se is not None else None,
            }
        )
    return rows


def _cmd_fit(args) -> int:
    design = None
    if args.design:
        design = design_from_text(Path(args.design).read_text())
    dataset, design = parse_dataset(Path(args.data).read_text(), design)
    restriction = assemble(args.scenario, design.horizon, design.scope, args.k)
    check = is_identifiable(design, restriction)
    if not check.identifiable:
        print(f"not identifiable: {check}", file=sys.stderr)
        return EXIT_NOT_IDENTIFIABLE
    if args.engine == "closed-form":
        if design.horizon != 2:
            print("closed-form engine requires a two-period design", file=sys.stderr)
            return EXIT_PARSE
        rows = _closed_form_report(dataset, args.scenario, args.level)
        payload = {
            "engine": "closed-form",
            "scenario": args.scenario,
            "carryover_order": args.k,
            "level": args.level,
            "design": {"horizon": design.horizon, "counts": {str(z): n for z, n in design.counts.items()}},
            "estimands": rows,
            "note": "conservative variances; --estimand requests are ignored by this engine",
        }
        _json_out(payload, args.out)
        return EXIT_OK
    if args.estimand:
        specs = [parse_estimand_request(req, design.scope) for req in args.estimand]
    elif design.horizon == 2:
        specs = standard_two_period_specs(design.scope)
    else:
        print("specify at least one --estimand for designs with more than two periods", file=sys.stderr)
        return EXIT_PARSE
    weights = _load_weight_model(args.weights, design)
    fit = feasible_rwls(dataset, args.scenario, args.k, weights, restriction)
    stacked = stack(specs)
    result = estimate(fit, stacked, args.level)
    layout = fit.layout
    payload = {
        "engine": "rwls",
        "scenario": args.scenario,
        "carryover_order": args.k,
        "level": args.level,
        "design": {"horizon": design.horizon, "counts": {str(z): n for z, n in design.counts.items()}},
        "rank": {"identifiable": check.identifiable, "rank": check.rank, "dimension": check.dimension},
        "coefficients": [
            {"period": t, "sequence": str(z), "estimate": float(fit.gamma[layout.column(t, z)])}
            for t, z in layout.labels()
        ],
        "estimands": [
            {
                "label": label,
                "point": float(result.point[i]),
                "se": float(result.std_errors[i]),
                "ci_lower": float(result.ci_lower[i]),
                "ci_upper": float(result.ci_upper[i]),
            }
            for i, label in enumerate(result.labels)
        ],
        "wald": {
            "statistic": result.wald_statistic,
            "df": result.wald_df,
            "pvalue": result.wald_pvalue,
        },
        "weights": {
            "provenance": fit.weight_model.provenance,
            "repaired": [str(z) for z in fit.weight_model.repaired],
        },
        "condition_number": fit.condition_number,
        "restriction_residual": fit.restriction_residual,
        "warnings": list(fit.warnings),
    }
    _json_out(payload, args.out)
    return EXIT_OK


def _cmd_simulate(args) -> int:
    config = json.loads(Path(args.config).read_text())
    design = CrossoverDesign(
        int(config["design"]["T"]),
        {as_sequence(z): int(n) for z, n in config["design"]["counts"].items()},
    )
    gen_cfg = dict(config.get("generator", {}))
    generator = ScenarioGenerator(
        kind=gen_cfg.get("kind", "gaussian_model"),
        scenario=config.get("scenario", gen_cfg.get("scenario", "b")),
        carryover_order=int(config.get("k", gen_cfg.get("carryover_order", 1))),
        seed=int(gen_cfg.get("seed", config.get("seed", 0))),
        beta1=tuple(gen_cfg.get("beta1", (0.0, 0.0, 1.0, 1.0))),
        beta2=tuple(gen_cfg.get("beta2", (0.0, 1.0, 0.0, 1.0))),
        rho=float(gen_cfg.get("rho", 0.3)),
        tau1=float(gen_cfg.get("tau1", 1.0)),
        tau2=float(gen_cfg.get("tau2", 1.0)),
        carry_a=float(gen_cfg.get("carry_a", 0.0)),
        carry_b=float(gen_cfg.get("carry_b", 0.0)),
    )
    requests = config.get("estimands")
    if requests:
        specs = [parse_estimand_request(req, design.scope) for req in requests]
    else:
        specs = standard_two_period_specs(design.scope)
    replications = args.reps if args.reps is not None else int(config.get("replications", 10_000))
    seed = args.seed if args.seed is not None else int(config.get("seed", 0))
    report = run_monte_carlo(
        generator,
        design,
        specs,
        replications=replications,
        weight_choice=config.get("weights", "sample"),
        level=float(config.get("level", 0.95)),
        seed=seed,
    )
    _json_out(report.to_dict(), args.out)
    if args.bias_csv:
        Path(args.bias_csv).write_text(emit_bias_distribution(report))
    return EXIT_OK


def _cmd_audit(args) -> int:
    design = design_from_text(Path(args.design).read_text())
    table = parse_table(Path(args.table).read_text(), design)
    if args.estimand:
        specs = [parse_estimand_request(req, design.scope) for req in args.estimand]
    elif design.horizon == 2:
        specs = standard_two_period_specs(design.scope)
    else:
        print("specify at least one --estimand", file=sys.stderr)
        return EXIT_PARSE
    weights: str | WeightModel = "oracle"
    if args.weights and args.weights != "oracle":
        weights = _load_weight_model(args.weights, design)
    result = exact_randomization_audit(
        table, design, specs, weights, args.scenario, args.k
    )
    payload = {
        "scenario": args.scenario,
        "carryover_order": args.k,
        "n_assignments": result.n_assignments,
        "estimands": [
            {
                "label": label,
                "exact_mean": float(result.exact_mean[i]),
                "exact_variance": float(result.exact_covariance[i, i]),
                "formula_mean": float(result.formula_mean[i]),
                "formula_variance": float(result.formula_covariance[i, i]),
            }
            for i, label in enumerate(result.labels)
        ],
    }
    _json_out(payload, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossover",
        description="design-based analysis of crossover experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, need_scenario=True):
        if need_scenario:
            p.add_argument("--scenario", choices=["a", "b", "c"], required=True)
            p.add_argument("--k", type=int, default=None, help="carryover order for scenarios b and c")
        p.add_argument("--out", default=None, help="write the JSON report here instead of stdout")

    p_identify = sub.add_parser("identify", help="rank verdict and per-mean identification table")
    p_identify.add_argument("--design", required=True)
    p_identify.add_argument(
        "--dump-restriction", default=None, help="write the assembled restriction matrix as CSV"
    )
    add_common(p_identify)
    p_identify.set_defaults(func=_cmd_identify)

    p_fit = sub.add_parser("fit", help="restricted weighted least squares fit")
    p_fit.add_argument("--data", required=True)
    p_fit.add_argument("--design", default=None)
    p_fit.add_argument("--estimand", action="append", default=[])
    p_fit.add_argument("--weights", default="sample", help="sample | pooled | file:PATH")
    p_fit.add_argument("--level", type=float, default=0.95)
    p_fit.add_argument("--engine", choices=["auto", "rwls", "closed-form"], default="auto")
    add_common(p_fit)
    p_fit.set_defaults(func=_cmd_fit)

    p_sim = sub.add_parser("simulate", help="Monte Carlo study from a JSON config")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--bias-csv", default=None, help="write per-replication bias rows here")
    p_sim.add_argument("--reps", type=int, default=None, help="override the configured replications")
    p_sim.add_argument("--seed", type=int, default=None, help="override the configured seed")
    p_sim.add_argument("--out", default=None)
    p_sim.set_defaults(func=_cmd_simulate)

    p_audit = sub.add_parser("audit", help="exact enumeration of the randomization distribution")
    p_audit.add_argument("--table", required=True)
    p_audit.add_argument("--design", required=True)
    p_audit.add_argument("--estimand", action="append", default=[])
    p_audit.add_argument("--weights", default="oracle", help="oracle | file:PATH")
    add_common(p_audit)
    p_audit.set_defaults(func=_cmd_audit)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NotIdentifiableError as exc:
        print(f"not identifiable: {exc}", file=sys.stderr)
        return EXIT_NOT_IDENTIFIABLE
    except ConditioningError as exc:
        print(f"conditioning failure: {exc}", file=sys.stderr)
        return EXIT_CONDITIONING
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
