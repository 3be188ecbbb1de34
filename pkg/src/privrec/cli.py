"""Command-line entry point: ``privrec {obfuscate,simulate,experiment}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path


from . import config as cfgmod
from .cta import intra_cluster_distortion, obfuscate
from .dataset import (FormatOptions, RatingMatrix, SplitSpec, default_catalog, dump_jester,
                      load_item_meta, load_jester, synthetic)
from .evaluation import (Fig7Config, Fig56Config, clear_cf_oracle, run_fig3, run_fig4, run_fig7,
                         run_fig56, vi)
from .protocol import SimulationConfig, audit_transcript, run_simulation

log = logging.getLogger("privrec")

EXPERIMENTS = ("fig3", "fig4", "fig56", "fig7")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def load_dataset(cfg: dict) -> tuple[RatingMatrix, list]:
    ds = cfg["dataset"]
    rr = tuple(float(x) for x in ds["rating_range"])
    if ds["path"] is not None:
        opts = FormatOptions(float(ds["sentinel"]), ds["delimiter"], rr)
        m = load_jester(ds["path"], opts)
    else:
        syn = ds["synthetic"]
        m = synthetic(syn["n_users"], syn["n_items"], mode=syn["mode"], n_groups=syn["n_groups"],
                      density=float(syn["density"]), noise=float(syn["noise"]), seed=syn["seed"],
                      rating_range=rr)
    catalog = load_item_meta(ds["items"]) if ds["items"] else default_catalog(m.n_items)
    if len(catalog) != m.n_items:
        raise cfgmod.ConfigError("dataset.items", f"{len(catalog)} items listed, matrix has {m.n_items}")
    return m, catalog


def _write_config(cfg: dict, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.yaml").write_text(cfgmod.dump(cfg))


def cmd_obfuscate(cfg: dict) -> int:
    out = Path(cfg["output_dir"])
    m, _ = load_dataset(cfg)
    plan = cfgmod.build_plan(cfg["plan"])
    _write_config(cfg, out)
    dense = m.filled(0.0)
    prof = obfuscate(dense, plan, cfg["obfuscate"]["trust"], cfg["obfuscate"]["d"])
    obf = m.with_values(prof.matrix)
    opts = FormatOptions(float(cfg["dataset"]["sentinel"]), cfg["dataset"]["delimiter"])
    dump_jester(obf, out / "obfuscated.csv", opts)
    (out / "obfuscated.sidecar.json").write_text(json.dumps(prof.sidecar(), sort_keys=True, indent=1) + "\n")
    distortion = intra_cluster_distortion(dense, prof)
    info = vi(dense[m.mask], prof.matrix[m.mask], rating_range=m.rating_range)
    print(f"obfuscated {m.n_users}x{m.n_items} with d={prof.d_requested}: "
          f"mean intra-cluster distance error {distortion:.4f}, VI {info:.4f} bits")
    return EXIT_OK


def simulation_config(cfg: dict, m: RatingMatrix, catalog) -> SimulationConfig:
    s = cfg["simulate"]
    target = s["target"]
    if target >= m.n_users:
        raise cfgmod.ConfigError("simulate.target", f"row {target} outside 0..{m.n_users - 1}")
    others = [u for u in range(m.n_users) if u != target]
    parts = s["participants"]
    if parts is None:
        rows = others
    elif isinstance(parts, int):
        rows = others[:parts]
    else:
        rows = list(parts)
        bad = [u for u in rows if not 0 <= u < m.n_users or u == target]
        if bad:
            raise cfgmod.ConfigError("simulate.participants", f"invalid rows {bad}")
    return SimulationConfig(
        m, target, rows, plan=cfgmod.build_plan(s["plan"]), catalog=catalog, requested=s["requested"],
        fold_width=s["fold_width"], theta=float(s["theta"]), group_size=s["group_size"],
        target_key_bits=s["target_key_bits"], mediator_key_bits=s["mediator_key_bits"],
        weight_scale=s["weight_scale"], fp_scale=s["fp_scale"], seed=cfg["seed"], route=s["route"],
        cutoff=float(s["cutoff"]), trust_states=s["trust_states"], min_shared=s["min_shared"])


def correctness_check(result, sim: SimulationConfig) -> list[str]:
    """Compare decrypted predictions against the plaintext CF oracle."""
    view = result.clear
    tol = 2.0 / sim.weight_scale + 2.0 / sim.fp_scale
    problems = [f"decode failure: {msg}" for msg in result.failures.values()]
    for q, p in sorted(result.predictions.items()):
        o = clear_cf_oracle(view.matrix, view.target_row, view.trusts, view.theta, q)
        if o is None or abs(o - p) > tol:
            problems.append(f"item {q}: protocol {p!r} vs oracle {o!r}")
    return problems


def cmd_simulate(cfg: dict) -> int:
    out = Path(cfg["output_dir"])
    m, catalog = load_dataset(cfg)
    sim = simulation_config(cfg, m, catalog)
    _write_config(cfg, out)
    result = run_simulation(sim)
    audit = audit_transcript(result)
    problems = correctness_check(result, sim)
    (out / "referrals.csv").write_text(result.referrals_csv())
    (out / "transcript.jsonl").write_text(result.transcript.to_jsonl(audit=sim.audit))
    verdict = {
        "audit": "PASS" if audit.passed else "FAIL",
        "violations": audit.violations,
        "route": sim.route,
        "correctness": "PASS" if not problems else "DISCREPANCY",
        "discrepancies": problems,
        "notices": result.notices,
    }
    (out / "audit.json").write_text(json.dumps(verdict, sort_keys=True, indent=1) + "\n")
    for notice in result.notices:
        print(f"notice: {notice}")
    if not result.referrals:
        print("notice: empty referral list")
    print(f"{len(result.referrals)} referrals, {len(result.transcript.messages)} messages, "
          f"audit {verdict['audit']}, correctness {verdict['correctness']}")
    if problems:
        print(f"warning: {len(problems)} predictions disagree with the plaintext oracle "
              f"(route {sim.route})", file=sys.stderr)
    return EXIT_OK if audit.passed else EXIT_FAIL


def _write_report(report, out: Path) -> None:
    rows = report.rows()
    with open(out / f"{report.experiment}.csv", "w", newline="") as fh:
        if rows:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    (out / f"{report.experiment}.json").write_text(json.dumps(report.summary(), sort_keys=True, indent=1) + "\n")


def run_experiment(name: str, cfg: dict):
    ex = cfg["experiment"][name]
    seed = cfg["seed"]
    if name == "fig3":
        return run_fig3(ex["key_bits"], ex["record_count"], seed, ex["repeats"])
    if name == "fig4":
        return run_fig4(ex["records"], ex["key_bits"], seed)
    m, _ = load_dataset(cfg)
    spec = SplitSpec(float(ex["train_fraction"]), ex["holdout"], seed)
    if name == "fig56":
        base = Fig56Config()
        L = m.n_items
        plan = replace(base.plan, L=L, trust_intervals=((0.0, 1.0, L),), rng_seed=seed)
        fc = Fig56Config(tuple(ex["d_sweep"]), plan, spec, ex["trust_states"], float(ex["theta"]))
        return run_fig56(m, fc)
    fc = Fig7Config(tuple(float(f) for f in ex["fractions"]), spec, ex["n_targets"], ex["superpeers"],
                    float(ex["theta"]), ex["target_key_bits"], ex["mediator_key_bits"], seed)
    return run_fig7(m, fc)


def cmd_experiment(cfg: dict, which: str) -> int:
    out = Path(cfg["output_dir"])
    _write_config(cfg, out)
    names = EXPERIMENTS if which == "all" else (which,)
    ok = True
    for name in names:
        report = run_experiment(name, cfg)
        _write_report(report, out)
        for key, verdict in report.assertions.items():
            print(f"{name}: {key} {verdict}")
        ok &= report.passed
    return EXIT_OK if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="privrec", description="Privacy-preserving recommendation toolkit")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, text in (("obfuscate", "obfuscate a rating matrix"),
                       ("simulate", "run the secure recommendation protocol"),
                       ("experiment", "run evaluation suites")):
        p = sub.add_parser(name, help=text)
        if name == "experiment":
            p.add_argument("which", choices=EXPERIMENTS + ("all",))
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--seed", type=int, help="master seed (overrides seed)")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        raw = cfgmod.load(args.config) if args.config else {}
        cfg = cfgmod.resolve(raw, args.seed, args.out)
        if args.command == "obfuscate":
            return cmd_obfuscate(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        return cmd_experiment(cfg, args.which)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
