"""``rcmdp`` command line: solve, audit, demo, rollout and oracle reports.

Exit codes: 0 success, 2 invalid input, 3 infeasible threshold, 4 oracle
enumeration too large.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from pathlib import Path

from .consistency import AuditReport, audit, audit_constant_threshold, demo_avar, demo_variance, rollout
from .dp import Solution, compute_feasibility_bounds, solve
from .errors import Infeasible, RcmdpError, ScenarioError, StateUnknown, TooLarge
from .mdp import HistoryPolicy
from .oracle import brute_force_opt
from .policy import RiskToGoMap, evaluate_plan, extract_policy, martingale_check, risk_to_go_from_policy
from .report import Report
from .risk import eval_dynamic_risk
from .scenario import Scenario, load_scenario
from .staircase import TOL

log = logging.getLogger("rcmdp")

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_TOO_LARGE = 0, 2, 3, 4
DEMOS = ("variance", "avar", "squander")


def _r0(scen: Scenario, override: float | None) -> float:
    """Command-line threshold, else the scenario's, else the unconstrained cap."""
    if override is not None:
        return override
    if scen.r0 is not None:
        return scen.r0
    return compute_feasibility_bounds(scen.mdp, scen.risk).cap(0, scen.mdp.initial_state)


def _scenario_fields(rep: Report, scen: Scenario, r0: float) -> None:
    mdp = scen.mdp
    rep.fields("scenario").add("name", scen.name or "-").add("horizon", mdp.horizon) \
        .add("states", len(mdp.states)).add("initial state", mdp.initial_state) \
        .add("risk", scen.risk.label()).add("r0", r0)


def _rtg_table(rep: Report, title: str, rtg: RiskToGoMap, tail_risk: dict | None = None) -> None:
    cols = ["history", "stage", "threshold", "action"] + (["tail risk"] if tail_risk is not None else [])
    tab = rep.table(title, cols)
    for node in sorted(rtg.nodes.values(), key=lambda n: (n.history.stage, n.history.entries)):
        row = [str(node.history), node.history.stage, node.threshold, node.action]
        if tail_risk is not None:
            row.append(tail_risk.get(node.history.entries))
        tab.add(*row)


def _audit_summary(rep: Report, title: str, result: AuditReport) -> None:
    bad = result.inconsistent()
    rep.fields(title).add("nodes audited", len(result.nodes)).add("consistent", result.overall) \
        .add("inconsistent at", ", ".join(n.history for n in bad) if bad else None)


def _audit_table(rep: Report, title: str, result: AuditReport) -> None:
    tab = rep.table(title, ["history", "stage", "threshold", "planned", "re-solved", "tail value",
                            "plan value", "plan risk", "consistent"])
    for n in result.nodes:
        tab.add(n.history, n.stage, n.threshold, n.action_planned, ",".join(sorted(n.actions_resolved)) or None,
                n.tail_resolve_value, n.planned_tail_value, n.planned_tail_risk, n.consistent)


def _tail_risks(mdp, spec, policy: HistoryPolicy, rtg: RiskToGoMap) -> dict:
    out = {}
    for entries, node in rtg.nodes.items():
        h = node.history
        out[entries] = eval_dynamic_risk(mdp, spec, policy, h.state, h.stage, entries)
    return out


def _reference_sections(rep: Report, scen: Scenario, sol: Solution, oracle_value: float | None) -> None:
    ref = scen.reference
    if ref is None:
        return
    if abs(ref.r0 - sol.r0) > TOL:
        rep.note(f"reference result is stated for r0 = {ref.r0:.9g}; not compared at r0 = {sol.r0:.9g}")
        return
    mdp, spec = scen.mdp, scen.risk
    pol = HistoryPolicy.markov(mdp, dict(ref.policy), name="reference")
    sec = rep.fields("reference")
    sec.add("published value", ref.value).add("solver value", sol.value)
    if oracle_value is not None:
        sec.add("oracle value", oracle_value)
    try:
        rtg = risk_to_go_from_policy(mdp, spec, pol, sol.r0, sol.x0)
    except RcmdpError as exc:
        sec.add("reference plan feasible", False)
        rep.note(f"reference plan: {exc}")
        return
    j, risk = evaluate_plan(mdp, spec, rtg)
    sec.add("reference plan", ", ".join(f"{x}:{u}" for x, u in sorted(ref.policy.items())))
    sec.add("reference plan cost", j).add("reference plan risk", risk).add("reference plan feasible", True)
    best = oracle_value if oracle_value is not None else sol.value
    sec.add("published matches optimum", abs(ref.value - best) <= TOL)
    if abs(ref.value - best) > TOL:
        rep.note(f"discrepancy: published value {ref.value:.9g} differs from the computed optimum {best:.9g}; "
                 f"the published plan attains {j:.9g} with risk {risk:.9g}, the optimum is verified by the oracle")
    _rtg_table(rep, "reference plan risk-to-go", rtg, _tail_risks(mdp, spec, pol, rtg))
    rep.fields("reference plan martingale").add("max deviation", martingale_check(mdp, spec, pol, rtg))


def cmd_solve(args) -> Report:
    scen = load_scenario(args.scenario)
    mdp, spec = scen.mdp, scen.risk
    r0 = _r0(scen, args.r0)
    rep = Report(f"solve {args.scenario}")
    _scenario_fields(rep, scen, r0)
    t0 = time.perf_counter()
    sol = solve(mdp, spec, r0)
    log.info("backward induction: %.3fs", time.perf_counter() - t0)
    x0 = sol.x0
    rep.fields("feasibility").add("risk floor", sol.bounds.floor(0, x0)).add("risk cap", sol.bounds.cap(0, x0))
    policy, rtg = extract_policy(sol)
    j, risk = evaluate_plan(mdp, spec, rtg)
    rep.fields("solution").add("value", sol.value).add("plan cost", j).add("plan risk", risk) \
        .add("value matches plan cost", abs(sol.value - j) <= TOL)
    vf = rep.table(f"value function at stage 0, state {x0}", ["threshold from", "value"])
    for b, v in sol.value_function(0, x0).pairs():
        vf.add(b, v)
    _rtg_table(rep, "policy and threshold updates", rtg)

    hist = rtg.history_policy()
    thm = risk_to_go_from_policy(mdp, spec, hist, r0, x0)
    _rtg_table(rep, "risk-to-go from plan tail risks", thm, _tail_risks(mdp, spec, hist, thm))
    rep.fields("martingale").add("solver thresholds", martingale_check(mdp, spec, policy, rtg)) \
        .add("tail-risk thresholds", martingale_check(mdp, spec, hist, thm))

    _audit_summary(rep, "audit", audit(mdp, spec, sol, policy, rtg, args.audit_all_breakpoints))

    oracle_value = None
    if args.oracle:
        t0 = time.perf_counter()
        res = brute_force_opt(mdp, spec, x0, r0)
        log.info("oracle: %.3fs", time.perf_counter() - t0)
        oracle_value = res.value
        rep.fields("oracle").add("policies enumerated", res.count).add("oracle value", res.value) \
            .add("solver value", sol.value).add("match", abs(res.value - sol.value) <= TOL) \
            .add("minimizers", " | ".join(p.name for p in res.minimizers))
    _reference_sections(rep, scen, sol, oracle_value)
    return rep


def cmd_audit(args) -> Report:
    scen = load_scenario(args.scenario)
    mdp, spec = scen.mdp, scen.risk
    r0 = _r0(scen, args.r0)
    rep = Report(f"audit {args.scenario}")
    _scenario_fields(rep, scen, r0)
    sol = solve(mdp, spec, r0)
    policy, rtg = extract_policy(sol)
    result = audit(mdp, spec, sol, policy, rtg, args.audit_all_breakpoints)
    _audit_summary(rep, "audit", result)
    _audit_table(rep, "audit nodes", result)
    if args.baseline:
        base = audit_constant_threshold(mdp, spec, r0)
        _audit_summary(rep, "constant-threshold audit", base)
        _audit_table(rep, "constant-threshold audit nodes", base)
    return rep


def _demo_variance(args) -> Report:
    r0 = 10.0 if args.r0 is None else args.r0
    demo = demo_variance(r0)
    rep = Report(f"demo variance --r0 {r0:.9g}")
    rep.fields("setting").add("constraint", "variance of total cost <= r0").add("r0", r0)
    tab = rep.table("policies", ["policy", "action at s1", "expected cost", "mean", "variance", "feasible"])
    for row in demo.rows:
        tab.add(*row)
    rep.fields("verdict").add("selected", demo.selected).add("seeks to incur losses", demo.seeks_losses)
    if demo.selected:
        rep.note(f"{demo.selected} selected; seeks to incur losses: {'yes' if demo.seeks_losses else 'no'}")
    else:
        rep.note("no policy meets the variance bound")
    return rep


def _demo_avar(args) -> Report:
    r0 = 0.0 if args.r0 is None else args.r0
    demo = demo_avar(r0=r0)
    rep = Report(f"demo avar --r0 {r0:.9g}")
    tab = rep.table("outcomes", ["leaf", "probability", "total constraint cost"])
    for row in demo.outcomes:
        tab.add(*row)
    rep.fields("static AVaR of total cost").add("alpha", demo.alpha).add("r0", r0) \
        .add("root", demo.root_avar).add("from s1", demo.stage1_avar["s1"]) \
        .add("from s2", demo.stage1_avar["s2"]).add("nested CVaR from root", demo.nested_root)
    rep.fields("verdict").add("root feasible", demo.root_feasible) \
        .add("every stage-1 tail acceptable", demo.stage1_acceptable)
    if not demo.root_feasible and demo.stage1_acceptable:
        rep.note("rejected at the root although every stage-1 tail is acceptable: static AVaR is time-inconsistent")
    return rep


def _demo_squander(args) -> Report:
    scen = load_scenario("squander_save")
    mdp, spec = scen.mdp, scen.risk
    r0 = _r0(scen, args.r0)
    rep = Report(f"demo squander --r0 {r0:.9g}")
    sol = solve(mdp, spec, r0)
    policy, rtg = extract_policy(sol)
    solver = audit(mdp, spec, sol, policy, rtg)
    base = audit_constant_threshold(mdp, spec, r0)
    _audit_summary(rep, "solver audit", solver)
    _audit_summary(rep, "constant-threshold audit", base)
    by_hist = {n.history: n for n in base.nodes}
    tab = rep.table("side by side", ["history", "solver threshold", "solver action", "solver consistent",
                                     "constant threshold", "planned", "re-solved", "constant consistent"])
    seen = set()
    for n in solver.nodes:
        b = by_hist.get(n.history)
        seen.add(n.history)
        tab.add(n.history, n.threshold, n.action_planned, n.consistent,
                *(_baseline_cells(b)))
    for b in base.nodes:
        if b.history not in seen:
            tab.add(b.history, None, None, None, *_baseline_cells(b))
    for b in base.inconsistent():
        rep.note(f"constant threshold inconsistent at {b.history}: planned {b.action_planned} at stage 0, "
                 f"re-solving at stage {b.stage} picks {','.join(sorted(b.actions_resolved)) or 'nothing'}")
    if solver.overall:
        rep.note(f"solver plan consistent at all {len(solver.nodes)} reachable decision nodes")
    return rep


def _baseline_cells(b):
    if b is None:
        return (None, None, None, None)
    return (b.threshold, b.action_planned, ",".join(sorted(b.actions_resolved)) or None, b.consistent)


def cmd_demo(args) -> Report:
    return {"variance": _demo_variance, "avar": _demo_avar, "squander": _demo_squander}[args.name](args)


def cmd_rollout(args) -> Report:
    scen = load_scenario(args.scenario)
    mdp, spec = scen.mdp, scen.risk
    r0 = _r0(scen, args.r0)
    if args.n < 1:
        raise ScenarioError("--n must be at least 1")
    sol = solve(mdp, spec, r0)
    policy, rtg = extract_policy(sol)
    j, risk = evaluate_plan(mdp, spec, rtg)
    t0 = time.perf_counter()
    res = rollout(mdp, policy, rtg, sol.x0, r0, args.n, args.seed, sol.bounds.floor)
    log.info("rollout: %.3fs", time.perf_counter() - t0)
    rep = Report(f"rollout {args.scenario} --n {args.n} --seed {args.seed}")
    _scenario_fields(rep, scen, r0)
    sec = rep.fields("rollout").add("samples", res.n_samples).add("seed", res.seed) \
        .add("mean cost", res.mean_cost).add("analytic cost", j) \
        .add("mean constraint cost", res.mean_constraint).add("plan risk", risk) \
        .add("standard error", res.stderr_constraint) \
        .add("min floor slack", res.min_floor_slack).add("min final threshold", res.min_terminal_threshold) \
        .add("floor violations", res.violations).add("threshold mismatches", res.rtg_mismatches)
    if spec.label().startswith("expectation") and res.n_samples > 1:
        sec.add("within 3 standard errors", abs(res.mean_constraint - risk) <= 3 * res.stderr_constraint + TOL)
    shown = min(res.n_samples, args.show)
    tab = rep.table(f"first {shown} trajectories", ["sample", "path (state@threshold)"])
    for i in range(shown):
        tab.add(i, " > ".join(f"{x}@{r:.9g}" for x, r in res.trajectory(i)))
    return rep


def cmd_oracle(args) -> Report:
    scen = load_scenario(args.scenario)
    mdp, spec = scen.mdp, scen.risk
    r0 = _r0(scen, args.r0)
    rep = Report(f"oracle {args.scenario}")
    _scenario_fields(rep, scen, r0)
    res = brute_force_opt(mdp, spec, None, r0, with_table=True)
    rep.fields("oracle").add("policies enumerated", res.count).add("risk floor", res.risk_floor) \
        .add("value", res.value).add("optimal first actions", ",".join(sorted(res.first_actions)))
    tab = rep.table("minimizers", ["policy"])
    for p in res.minimizers:
        tab.add(p.name)
    if res.table is not None:
        tab = rep.table("all policies", ["policy", "cost", "risk", "feasible"])
        for name, cost, risk in res.table:
            tab.add(name, cost, risk, risk <= r0 + TOL)
    else:
        rep.note(f"policy table omitted: {res.count} policies")
    return rep


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rcmdp", description="Risk-constrained finite-horizon MDP solver.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log timings to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario=True):
        if scenario:
            p.add_argument("scenario", help="scenario file, or a shipped fixture (e.g. fixtures/squander_save)")
        p.add_argument("--r0", type=float, default=None, help="risk threshold (overrides the scenario)")
        p.add_argument("--out", type=Path, default=None, help="also write the report here")
        p.add_argument("--format", choices=("text", "structured"), default="text")
        return p

    p = common(sub.add_parser("solve", help="solve and report plan, risk-to-go and audit"))
    p.add_argument("--oracle", action="store_true", help="compare with brute-force enumeration")
    p.add_argument("--audit-all-breakpoints", action="store_true")
    p.set_defaults(run=cmd_solve)

    p = common(sub.add_parser("audit", help="time-consistency audit of the solver plan"))
    p.add_argument("--audit-all-breakpoints", action="store_true")
    p.add_argument("--baseline", action="store_true", help="also audit the constant-threshold plan")
    p.set_defaults(run=cmd_audit)

    p = common(sub.add_parser("demo", help="built-in demonstrations"), scenario=False)
    p.add_argument("name", choices=DEMOS)
    p.set_defaults(run=cmd_demo)

    p = common(sub.add_parser("rollout", help="Monte Carlo rollout of the solver plan"))
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--show", type=int, default=5, help="trajectories to print")
    p.set_defaults(run=cmd_rollout)

    p = common(sub.add_parser("oracle", help="brute-force optimum over history-dependent policies"))
    p.set_defaults(run=cmd_oracle)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(name)s: %(message)s")
    if args.r0 is not None and not math.isfinite(args.r0):
        print("error: --r0 must be finite", file=sys.stderr)
        return EXIT_INVALID
    try:
        rep = args.run(args)
    except Infeasible as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except TooLarge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TOO_LARGE
    except (ScenarioError, StateUnknown, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    text = rep.render(args.format)
    sys.stdout.write(text)
    if args.out is not None:
        args.out.write_text(text, encoding="utf-8")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
