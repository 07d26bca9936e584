"""Scenario-driven command line for the game-compression pipeline.

Commands
--------
build     construct a pipeline stage and report its shape
eval      honest / classical values of the named games
seesaw    alternating optimization over a verifier's honest-form game
rigidity  perturbation sweep of the (n, k) measurement game
spectra   eigenvalue tables (stabilizer sum, certificate terms)
pipeline  full chain: verifier -> honest game -> extended -> final
compose   closed-form outer soundness bound

A scenario is ``COMMAND [TARGET] [key=value ...]`` on the command line,
or the same fields in a JSON file passed with ``--scenario`` (explicit
command-line values win).  ``key=value`` parameters are parsed as JSON
fragments where possible (``deltas=[0.02,0.1]``, ``p=0.5``), otherwise
kept as strings (``policy=sampled``).  Verifier circuits come from the
bundled fixtures (``verifier=toy-complete``, ``verifier=toy-impossible``)
or from a text file in the format of :func:`circuits.parse_verifier`.

Reports are emitted as versioned JSON (sorted keys, shortest-roundtrip
floats: byte-stable for fixed inputs and seeds) or as flat CSV; the
rigidity sweep CSV uses the header ``delta,epsilon,dis_max,overlap``.
Wall-clock timings are printed to stdout only so emitted files stay
reproducible.  All randomness is derived from the single ``--seed``
through per-subsystem splitmix64 children.

Exit status: 0 when every asserted row passes, 1 when any fails, 2 for
usage errors, unreadable inputs, or resource-guard violations.
"""

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _seeds, circuits, compression, games, pauli, rigidity
from .config import ATOL, ResourceGuardError

log = logging.getLogger(__name__)

SCHEMA = "proofgames-report/1"
MANIFEST_SCHEMA = "proofgames-manifest/1"
COMMANDS = ("build", "eval", "seesaw", "rigidity", "spectra", "pipeline", "compose")


@dataclass
class Scenario:
    command: str
    target: str | None
    params: dict
    seed: int = 0
    tol: float = ATOL
    fmt: str = "json"
    out: str | None = None

    def echo(self) -> dict:
        return {
            "command": self.command,
            "target": self.target,
            "params": dict(self.params),
            "seed": self.seed,
            "tol": self.tol,
        }


@dataclass
class RunReport:
    scenario: dict
    inputs: dict = field(default_factory=dict)
    results: list = field(default_factory=list)
    flags: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    sweep: list | None = None
    manifest: dict | None = None

    def passed(self) -> bool:
        return all(row["pass"] is not False for row in self.results)


def _py(x):
    """Plain-Python view of a numpy scalar / sequence for serialization."""
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_py(v) for v in x]
    return x


def _row(name: str, value, tol: float | None = None, ok: bool | None = None) -> dict:
    return {"name": name, "value": _py(value), "tolerance": tol, "pass": ok}


def _check(name: str, value: float, expect: float, tol: float) -> dict:
    return _row(name, value, tol, bool(abs(value - expect) <= tol))


def _git_blob_sha1(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\x00" % len(data) + data).hexdigest()


def _child(scn: Scenario, label: str) -> int:
    return _seeds.child_seed(scn.seed, label)


def _load_verifier(scn: Scenario, report: RunReport) -> circuits.VerifierSpec:
    name = str(scn.params.get("verifier", "toy-complete"))
    if name == "toy-complete":
        spec = circuits.toy_complete_verifier()
    elif name == "toy-impossible":
        spec = circuits.toy_impossible_verifier()
    else:
        text = Path(name).read_text()
        report.inputs[name] = _git_blob_sha1(text.encode())
        return circuits.parse_verifier(text)
    canon = circuits.format_verifier(spec).encode()
    report.inputs[f"verifier:{name}"] = _git_blob_sha1(canon)
    return spec


def _build_extended(scn: Scenario, report: RunReport, spec):
    layout = compression.build_extended_game(
        spec,
        k=scn.params.get("k"),
        policy=str(scn.params.get("policy", "sampled")),
        n_sequences=int(scn.params.get("n_sequences", 3)),
        seed=_child(scn, "extended"),
    )
    report.flags.update(layout.flags)
    return layout


def _build_final(scn: Scenario, report: RunReport, layout):
    final = compression.build_final_game(
        layout,
        k=scn.params.get("final_k"),
        n_ms_questions=int(scn.params.get("n_ms_questions", 64)),
        seed=_child(scn, "final"),
    )
    report.flags.update(final.flags)
    return final


# ---------------------------------------------------------------------------
# command handlers
# ---------------------------------------------------------------------------


def _cmd_build(scn: Scenario, report: RunReport) -> None:
    target = scn.target or "honest"
    spec = _load_verifier(scn, report)
    if target == "honest":
        game = compression.build_honest_game(spec)
        try:
            game.validate(atol=min(scn.tol, 1e-9))
            ok = True
        except ValueError:
            ok = False
        report.results += [
            _row("n_players", game.n_players),
            _row("n_questions", len(game.questions)),
            _row("referee_dim", game.referee_dim),
            _row("turns", spec.turns),
            _row("validates", int(ok), None, ok),
        ]
        report.flags.update({k: str(v) for k, v in game.flags.items() if k != "check_slices"})
    elif target == "extended":
        layout = _build_extended(scn, report, spec)
        report.results += [
            _row("n_clock", layout.n_clock),
            _row("q_s", layout.q_s),
            _row("n_prime", layout.n_prime),
            _row("n_x", layout.n_x),
            _row("n_segments", len(layout.segments)),
            _row("n_constraint_sets", len(layout.cons_sets)),
        ]
    elif target == "final":
        layout = _build_extended(scn, report, spec)
        final = _build_final(scn, report, layout)
        report.results += [
            _row("n_ref", final.n_ref),
            _row("k", final.k),
            _row("k_required", final.k_required),
            _row("n_players", final.n_players),
            _row("n_ms_questions", len(final.ms_questions)),
            _row("n_sim_checks", len(final.sim_checks)),
        ]
    else:
        raise ValueError(f"unknown build target {target!r}")


def _cmd_eval(scn: Scenario, report: RunReport) -> None:
    target = scn.target or "stabilizer-honest"
    if target == "stabilizer-honest":
        game = rigidity.build_stabilizer_game()
        v = games.value(game, rigidity.honest_stabilizer_strategy())
        report.results.append(_check("value", v, 1.0, scn.tol))
    elif target == "stabilizer-classical":
        cv = games.classical_value(rigidity.build_stabilizer_game())
        report.results.append(_row("classical_value", cv, 1e-3, bool(cv < 1.0 - 1e-3)))
    elif target == "ms-honest":
        n = int(scn.params.get("n", 2))
        k = int(scn.params.get("k", 2))
        game = rigidity.build_ms_game(n, k)
        v = games.value(game, rigidity.honest_ms_strategy(game, n))
        report.results.append(_check("value", v, 1.0, scn.tol))
    elif target == "map":
        spec = _load_verifier(scn, report)
        mv = circuits.protocol_value(spec, circuits.honest_strategy(spec))
        report.results.append(_row("map", mv))
    elif target == "honest-game":
        spec = _load_verifier(scn, report)
        game = compression.build_honest_game(spec)
        strat = compression.honest_history_strategy(spec, game=game)
        v = games.value(game, strat)
        mv = circuits.protocol_value(spec, circuits.honest_strategy(spec))
        predicted = 1.0 - (1.0 - mv) / (5.0 * (spec.turns + 1))
        report.results += [
            _row("map", mv),
            _row("predicted", predicted),
            _row("value", v, scn.tol, bool(abs(v - predicted) <= scn.tol)),
        ]
    elif target == "extended":
        spec = _load_verifier(scn, report)
        layout = _build_extended(scn, report, spec)
        vals = compression.extended_values(layout)
        for key in ("clock", "propagation", "initialization", "constraint", "output"):
            report.results.append(_row(key, vals[key]))
        report.results += [
            _row("p0", vals["p0"]),
            _row("total", vals["total"], scn.tol, bool(vals["total"] <= 1.0 + scn.tol)),
        ]
    elif target == "final":
        spec = _load_verifier(scn, report)
        layout = _build_extended(scn, report, spec)
        final = _build_final(scn, report, layout)
        fv = compression.final_honest_values(final)
        report.results += [
            _check("ms", fv["ms"], 1.0, scn.tol),
            _row("simulation_total", fv["simulation"]["total"]),
            _row("total", fv["total"], scn.tol, bool(fv["total"] <= 1.0 + scn.tol)),
        ]
    else:
        raise ValueError(f"unknown eval target {target!r}")


def _cmd_seesaw(scn: Scenario, report: RunReport) -> None:
    spec = _load_verifier(scn, report)
    game = compression.build_honest_game(spec)
    p_dim = int(scn.params.get("p_dim", 1))
    dims = tuple(2 ** (1 + spec.q_m) * p_dim for _ in range(spec.r))
    restarts = int(scn.params.get("restarts", 8))
    iters = int(scn.params.get("iters", 500))
    best = -np.inf
    for j in range(restarts):
        t0 = time.perf_counter()
        v, _strat = games.seesaw(
            game, dims, seed=_child(scn, f"restart-{j}"), iters=iters, restarts=1
        )
        report.timings[f"restart_{j}_s"] = time.perf_counter() - t0
        report.results.append(_row(f"restart_{j}", v))
        best = max(best, v)
    report.results += [
        _row("best", best),
        _row("player_dim", dims[0]),
        _row("iters", iters),
    ]


def _cmd_rigidity(scn: Scenario, report: RunReport) -> None:
    n = int(scn.params.get("n", 2))
    k = int(scn.params.get("k", 2))
    deltas = scn.params.get("deltas", [0.02, 0.05, 0.1, 0.2])
    game = rigidity.build_ms_game(n, k)
    rows = rigidity.rigidity_report(game, n, deltas, seed=_child(scn, "rigidity"))
    report.sweep = [dataclasses.asdict(r) for r in rows]
    dis = [r.dis_max for r in rows]
    monotone = all(a <= b + 1e-12 for a, b in zip(dis, dis[1:]))
    fitted = max(
        (r.dis_max / np.sqrt(r.epsilon) for r in rows if r.epsilon > 0), default=0.0
    )
    report.results += [
        _row("n_deltas", len(rows)),
        _row("dis_max_monotone", int(monotone), None, bool(monotone)),
        _row("fitted_C", float(fitted)),
    ]


def _cmd_spectra(scn: Scenario, report: RunReport) -> None:
    target = scn.target or "xi-sum"
    if target == "xi-sum":
        code = pauli.eight_qubit_code()
        total = sum(pauli.to_matrix(p) for p in pauli.xz_stabilizer_subset(code))
        w = np.linalg.eigvalsh(total)
        top = np.abs(w - 32.0) < 1e-6
        mult = int(top.sum())
        max_other = float(w[~top].max())
        for val, count in sorted(
            zip(*np.unique(np.round(w, 6), return_counts=True))
        ):
            report.results.append(_row(f"multiplicity[{val:g}]", int(count)))
        report.results += [
            _row("eigenvalue_32_multiplicity", mult, None, mult == 4),
            _row("max_other_eigenvalue", max_other, 1e-9, bool(max_other <= 1e-9)),
        ]
    elif target == "hamiltonian":
        kind = scn.params.get("kind")
        if kind is None:
            raise ValueError("spectra hamiltonian needs kind=clock|in|propv|propp")
        spec = _load_verifier(scn, report)
        _h, rep = compression.build_hamiltonian(spec, str(kind))
        for key, val in sorted(rep.items()):
            if isinstance(val, (int, float, np.generic)):
                report.results.append(_row(key, val))
    else:
        raise ValueError(f"unknown spectra target {target!r}")


def _cmd_pipeline(scn: Scenario, report: RunReport) -> None:
    spec = _load_verifier(scn, report)
    mv = circuits.protocol_value(spec, circuits.honest_strategy(spec))
    complete = abs(mv - 1.0) <= scn.tol

    t0 = time.perf_counter()
    game = compression.build_honest_game(spec)
    strat = compression.honest_history_strategy(spec, game=game)
    v_honest = games.value(game, strat)
    report.timings["honest_s"] = time.perf_counter() - t0
    predicted = 1.0 - (1.0 - mv) / (5.0 * (spec.turns + 1))

    t0 = time.perf_counter()
    layout = _build_extended(scn, report, spec)
    ext = compression.extended_values(layout)
    report.timings["extended_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    final = _build_final(scn, report, layout)
    fv = compression.final_honest_values(final)
    report.timings["final_s"] = time.perf_counter() - t0

    report.results += [
        _row("map", mv),
        _check("honest_game_value", v_honest, predicted, scn.tol),
        _row("extended_total", ext["total"], scn.tol, _pass_if(complete, ext["total"], scn.tol)),
        _check("final_ms", fv["ms"], 1.0, scn.tol),
        _row("final_total", fv["total"], scn.tol, _pass_if(complete, fv["total"], scn.tol)),
        _row("n_ref", final.n_ref),
        _row("n_players", final.n_players),
    ]
    if scn.out is not None:
        report.manifest = _manifest(scn, report, spec, layout, final)


def _pass_if(complete: bool, value: float, tol: float) -> bool | None:
    """Completeness assertion only when the verifier accepts with certainty."""
    if not complete:
        return None
    return bool(abs(value - 1.0) <= tol)


def _manifest(scn: Scenario, report: RunReport, spec, layout, final) -> dict:
    def stage_hash(summary: dict) -> str:
        return _git_blob_sha1(json.dumps(summary, sort_keys=True).encode())

    stages = {
        "honest": {"turns": spec.turns, "n_players": spec.r},
        "extended": {
            "n_clock": layout.n_clock,
            "q_s": layout.q_s,
            "n_prime": layout.n_prime,
            "segments": [list(map(int, s)) for s in layout.segments],
        },
        "final": {
            "n_ref": final.n_ref,
            "k": final.k,
            "n_players": final.n_players,
            "n_ms_questions": len(final.ms_questions),
            "n_sim_checks": len(final.sim_checks),
        },
    }
    return {
        "schema": MANIFEST_SCHEMA,
        "scenario": scn.echo(),
        "inputs": dict(report.inputs),
        "stages": {name: {**s, "hash": stage_hash(s)} for name, s in stages.items()},
    }


def _cmd_compose(scn: Scenario, report: RunReport) -> None:
    missing = [key for key in ("p", "s", "h", "kappa") if key not in scn.params]
    if missing:
        raise ValueError(f"compose needs parameters {missing}")
    v = compression.soundness_compose(
        float(scn.params["p"]),
        float(scn.params["s"]),
        float(scn.params["h"]),
        float(scn.params["kappa"]),
    )
    report.results.append(_row("value", v))


_HANDLERS = {
    "build": _cmd_build,
    "eval": _cmd_eval,
    "seesaw": _cmd_seesaw,
    "rigidity": _cmd_rigidity,
    "spectra": _cmd_spectra,
    "pipeline": _cmd_pipeline,
    "compose": _cmd_compose,
}


def run_scenario(scn: Scenario) -> RunReport:
    """Dispatch a scenario to its module operations.

    Deterministic given the scenario seed; raises ValueError (bad target or
    parameters) and ResourceGuardError (dense-size guards) for exit code 2.
    """
    report = RunReport(scenario=scn.echo())
    start = time.perf_counter()
    _HANDLERS[scn.command](scn, report)
    report.timings["total_s"] = time.perf_counter() - start
    return report


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------


def emit_report(report: RunReport, fmt: str = "json", out: str | None = None):
    """Serialize a report; byte-stable for fixed inputs and seeds.

    Timings are deliberately left out of the serialized payload (they go to
    stdout) so repeated runs of one scenario produce identical files.
    Returns ``(text, path)`` where path is None without ``out``.
    """
    if fmt == "json":
        payload = {
            "schema": SCHEMA,
            "scenario": report.scenario,
            "inputs": report.inputs,
            "results": report.results,
            "flags": report.flags,
        }
        if report.sweep is not None:
            payload["sweep"] = report.sweep
        text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    elif fmt == "csv":
        if report.sweep is not None:
            lines = ["delta,epsilon,dis_max,overlap"]
            for r in report.sweep:
                lines.append(
                    f"{r['delta']!r},{r['epsilon']!r},{r['dis_max']!r},{r['overlap']!r}"
                )
        else:
            lines = ["name,value,tolerance,pass"]
            for row in report.results:
                tol = "" if row["tolerance"] is None else repr(row["tolerance"])
                ok = "" if row["pass"] is None else str(row["pass"]).lower()
                lines.append(f"{row['name']},{row['value']!r},{tol},{ok}")
        text = "\n".join(lines) + "\n"
    else:
        raise ValueError(f"unknown format {fmt!r}")

    path = None
    if out is not None:
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / f"report.{fmt}"
        path.write_text(text)
        if report.manifest is not None:
            manifest_path = out_dir / "manifest.json"
            manifest_path.write_text(
                json.dumps(report.manifest, sort_keys=True, indent=2) + "\n"
            )
    return text, path


def _coerce(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _scenario_from_args(args) -> Scenario:
    file_fields: dict = {}
    if args.scenario is not None:
        file_fields = json.loads(Path(args.scenario).read_text())
        if not isinstance(file_fields, dict):
            raise ValueError("scenario file must hold a JSON object")

    params = dict(file_fields.pop("params", {}))
    command = file_fields.pop("command", None)
    target = file_fields.pop("target", None)
    seed = file_fields.pop("seed", 0)
    tol = file_fields.pop("tol", ATOL)
    fmt = file_fields.pop("format", "json")
    out = file_fields.pop("out", None)
    params.update(file_fields)  # remaining top-level keys are parameters

    if args.command is not None:
        command = args.command
    seen_bare = False
    for tok in args.rest:
        if "=" in tok:
            key, _, raw = tok.partition("=")
            params[key] = _coerce(raw)
        elif not seen_bare:
            target = tok
            seen_bare = True
        else:
            raise ValueError(f"unexpected positional argument {tok!r}")
    if args.seed is not None:
        seed = args.seed
    if args.tol is not None:
        tol = args.tol
    if args.fmt is not None:
        fmt = args.fmt
    if args.out is not None:
        out = args.out

    if command not in COMMANDS:
        raise ValueError(f"command must be one of {', '.join(COMMANDS)}; got {command!r}")
    return Scenario(
        command=command,
        target=target,
        params=params,
        seed=int(seed),
        tol=float(tol),
        fmt=str(fmt),
        out=out,
    )


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="proofgames",
        description="Build and exercise the interactive-proof compression pipeline.",
    )
    parser.add_argument("command", nargs="?", help=f"one of: {', '.join(COMMANDS)}")
    parser.add_argument(
        "rest", nargs="*", metavar="TARGET|key=value", help="target name and parameters"
    )
    parser.add_argument("--scenario", metavar="FILE", help="JSON scenario file")
    parser.add_argument("--out", metavar="DIR", help="directory for report files")
    parser.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    parser.add_argument("--format", dest="fmt", choices=("json", "csv"), default=None)
    parser.add_argument("--tol", type=float, default=None, help="assertion tolerance")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    try:
        scn = _scenario_from_args(args)
        report = run_scenario(scn)
        text, path = emit_report(report, scn.fmt, scn.out)
    except (ValueError, OSError, KeyError, ResourceGuardError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    for row in report.results:
        state = "  --" if row["pass"] is None else ("PASS" if row["pass"] else "FAIL")
        tol = "" if row["tolerance"] is None else f"  (tol {row['tolerance']:g})"
        print(f"{state}  {row['name']} = {row['value']}{tol}")
    for name, seconds in report.timings.items():
        print(f"      {name} = {seconds:.3f}")
    if path is not None:
        print(f"wrote {path}")
    elif args.verbose:
        print(text, end="")
    return 0 if report.passed() else 1


if __name__ == "__main__":
    sys.exit(main())
