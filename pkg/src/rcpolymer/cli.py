"""Command-line entry point.

Usage:
    python -m src.rcpolymer.cli gen --n 20 --delta 5 --seed 1 --out g.json
    python -m src.rcpolymer.cli check --graph k6 --delta-small 0.2
    python -m src.rcpolymer.cli count --graph g.json --q 1e6 --beta 6 --eps 0.1
    python -m src.rcpolymer.cli phase --q 1e8 --delta 5 --m 4 --solve-bc

Defaults come from conf/base/parameters.yml; flags override them and the
resolved values are echoed in the provenance header of every output.
"""

import argparse
import json
import logging
import os
import sys
from contextlib import ExitStack, contextmanager
from typing import Any, Callable, Dict, Iterable, List, Optional

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel

from . import __version__
from .cluster_expansion import kp_check, truncated_log_xi
from .dynamics import KERNELS, Start, escape_experiment, run_chain
from .engine import log_z_tilde, sample_potts_many, sample_rc_many
from .exact import phase_fractions, z_potts_exact, z_rc_exact
from .graph import class_check, graph_to_json, load_graph, load_named_graph, random_regular
from .phase import (
    alpha_bound,
    alpha_k,
    beta_c_first_order,
    beta_c_solve,
    phase_grid,
    sample_W,
)
from .polymers import polymer_arena
from .utils import BudgetExceededError, CapExceededError, init_logging, load_parameters, make_rng

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_ABORTED = 3


class RunConfig(BaseModel):
    """Everything needed to reproduce a run; echoed into its output."""

    subcommand: str
    graph: Optional[str] = None
    params: Dict[str, Any] = {}
    seed: Optional[int] = None
    output: Optional[str] = None
    format: str = "json"
    version: str = __version__

    def provenance(self) -> Dict[str, Any]:
        return self.model_dump()


# ----------------------------- Output ----------------------------- #

@contextmanager
def _open_output(path: Optional[str]):
    if path is None:
        yield sys.stdout
        return
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        yield f


def _jsonable(payload: Any) -> Any:
    if isinstance(payload, BaseModel):
        return json.loads(payload.model_dump_json())
    return payload


def write_json(payload: Any, config: RunConfig, path: Optional[str] = None, float_format: str = "%.15g") -> None:
    """JSON object with a provenance key; with --format csv, one flattened row instead."""
    if config.format == "csv":
        write_csv(pd.json_normalize(_jsonable(payload)), config, path, float_format)
        return
    body = {"provenance": config.provenance()}
    body.update(_jsonable(payload))
    with _open_output(path) as out:
        out.write(json.dumps(body, sort_keys=False))
        out.write("\n")


def _comment_header(config: RunConfig) -> str:
    return f"# provenance: {json.dumps(config.provenance(), sort_keys=True)}\n"


def write_csv(frame: pd.DataFrame, config: RunConfig, path: Optional[str], float_format: str) -> None:
    with _open_output(path) as out:
        out.write(_comment_header(config))
        frame.to_csv(out, index=False, float_format=float_format, lineterminator="\n")


def write_lines(lines: Iterable[str], config: RunConfig, path: Optional[str], header: Optional[str] = None) -> None:
    with _open_output(path) as out:
        out.write(header if header is not None else _comment_header(config))
        for line in lines:
            out.write(line)
            out.write("\n")


# ----------------------------- Argument helpers ----------------------------- #

def beta_grid(text: str) -> List[float]:
    """'a:b:steps' -> steps evenly spaced values from a to b inclusive."""
    try:
        a, b, steps = text.split(":")
        a, b, steps = float(a), float(b), int(steps)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a:b:steps, got {text!r}")
    if steps < 1:
        raise argparse.ArgumentTypeError(f"steps must be at least 1, got {steps}")
    return np.linspace(a, b, steps).tolist()


def resolve_graph(value: str):
    """A path to a graph JSON file, or a name from the catalog."""
    if os.path.exists(value):
        return load_graph(value)
    try:
        return load_named_graph(value)
    except KeyError as e:
        raise ValueError(f"{value!r} is neither a graph file nor a catalog name ({e})") from e


def _config(args: argparse.Namespace) -> RunConfig:
    params = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command", "graph", "seed", "out", "format")}
    return RunConfig(
        subcommand=args.command,
        graph=getattr(args, "graph", None),
        params=params,
        seed=getattr(args, "seed", None),
        output=getattr(args, "out", None),
        format=getattr(args, "format", "json"),
    )


# ----------------------------- Subcommands ----------------------------- #

def cmd_gen(args, params) -> int:
    g = random_regular(args.n, args.delta, seed=args.seed, max_attempts=params["graph"]["rejection_budget"])
    body = json.loads(graph_to_json(g))
    body["provenance"] = _config(args).provenance()
    with _open_output(args.out) as out:
        out.write(json.dumps(body))
        out.write("\n")
    logger.info(f"generated {g}")
    return EXIT_OK


def cmd_check(args, params) -> int:
    g = resolve_graph(args.graph)
    p = params["graph"]
    report = class_check(
        g,
        args.delta_small,
        t_half=args.t_half,
        t_small=args.t_small,
        exact_cap=p["exact_cap"],
        small_set_cap=p["small_set_cap"],
    )
    write_json(report, _config(args), args.out)
    return EXIT_OK


def cmd_exact(args, params) -> int:
    g = resolve_graph(args.graph)
    p = params["exact"]
    result = z_rc_exact(g, args.q, args.beta, eta=args.eta, boundary=args.boundary, cap=p["rc_edge_cap"])
    body = _jsonable(result)
    body["phase_fractions"] = phase_fractions(result)
    if args.potts:
        body["log_z_potts"] = z_potts_exact(g, int(args.q), args.beta, cap=p["potts_state_cap"])
    write_json(body, _config(args), args.out)
    return EXIT_OK


def cmd_polymers(args, params) -> int:
    g = resolve_graph(args.graph)
    arena = polymer_arena(g, args.model, args.m)
    config = _config(args)
    header = json.dumps({"provenance": config.provenance()}) + "\n"
    write_lines((json.dumps(r) for r in arena.records(args.q, args.beta)), config, args.out, header=header)
    logger.info(f"dumped {len(arena)} {args.model} polymers with at most {args.m} edges")
    return EXIT_OK


def cmd_expansion(args, params) -> int:
    g = resolve_graph(args.graph)
    p = params["cluster_expansion"]
    arena = polymer_arena(g, args.model, max(args.m - 1, 0))
    series = truncated_log_xi(arena, args.q, args.beta, args.m, model=args.model, budget=p["budget"],
                              n_jobs=args.threads)
    body = _jsonable(series)
    if args.kp:
        body["kp"] = _jsonable(kp_check(g, args.q, args.beta, args.model, m=max(args.m - 1, 0), arena=arena))
    write_json(body, _config(args), args.out)
    return EXIT_OK


def _count(g, args, params):
    return log_z_tilde(
        g,
        args.q,
        args.beta,
        epsilon=args.eps,
        m=args.m,
        force=args.force,
        delta_small=args.delta_small,
        budget=params["cluster_expansion"]["budget"],
        dis_cap=params["polymers"]["dis_cap"],
        ord_cap=params["polymers"]["ord_cap"],
        brute_force_cap=params["exact"]["rc_edge_cap"],
        exact_cap=params["graph"]["exact_cap"],
        small_set_cap=params["graph"]["small_set_cap"],
    )


def cmd_count(args, params) -> int:
    g = resolve_graph(args.graph)
    write_json(_count(g, args, params), _config(args), args.out)
    return EXIT_OK


def cmd_sample(args, params) -> int:
    g = resolve_graph(args.graph)
    rng = make_rng(args.seed)
    report = _count(g, args, params)
    kwargs = dict(
        thin=args.thin,
        c=params["engine"]["sampler_c"],
        report=report,
        distribution_cap=params["exact"]["distribution_edge_cap"],
        eta=params["exact"]["eta"],
    )
    if args.potts:
        colorings = sample_potts_many(g, int(args.q), args.beta, args.eps, rng, args.samples, **kwargs)
        lines = (json.dumps(c.tolist()) for c in colorings)
    else:
        batch = sample_rc_many(g, args.q, args.beta, args.eps, rng, args.samples, **kwargs)
        lines = (a.to_hex() for a in batch.configs)
    write_lines(list(lines), _config(args), args.out)
    return EXIT_OK


def cmd_dynamics(args, params) -> int:
    g = resolve_graph(args.graph)
    start = Start(args.start.upper())
    if args.escape:
        report = escape_experiment(g, args.q, args.beta, args.kernel, start, args.trials, args.steps,
                                   eta=args.eta, seed=args.seed, n_jobs=args.threads)
        write_json(report, _config(args), args.out)
        return EXIT_OK
    frames = Parallel(n_jobs=args.threads)(
        delayed(run_chain)(g, args.q, args.beta, args.kernel, start, args.steps, make_rng(args.seed, t),
                           args.record_every, args.eta, t)
        for t in range(args.trials)
    )
    write_csv(pd.concat(frames, ignore_index=True), _config(args), args.out, params["cli"]["float_format"])
    return EXIT_OK


def cmd_phase(args, params) -> int:
    config = _config(args)
    if args.beta_grid is not None:
        frame = phase_grid(args.q, args.delta, args.m, args.beta_grid)
        write_csv(frame, config, args.out, params["cli"]["float_format"])
        return EXIT_OK
    if args.solve_bc:
        body = _jsonable(beta_c_solve(args.q, args.delta, args.m, tol=params["phase"]["bisection_tol"]))
        body["beta_c_first_order"] = beta_c_first_order(args.q, args.delta)
        write_json(body, config, args.out)
        return EXIT_OK
    if args.beta is None:
        raise ValueError("--alpha-k and --sample-w need --beta")
    if args.alpha_k is not None:
        k = args.alpha_k
        body = {
            "k": k,
            "alpha_dis": alpha_k("dis", k, args.q, args.beta, args.delta, args.m),
            "alpha_ord": alpha_k("ord", k, args.q, args.beta, args.delta, args.m),
            "bound": alpha_bound(k, args.q, args.delta),
        }
        write_json(body, config, args.out)
        return EXIT_OK
    sample = sample_W(args.model, args.q, args.beta, args.delta, args.m, args.k_max, args.sample_w,
                      make_rng(args.seed))
    ratio = sample.q_ratio
    body = {
        "draws": args.sample_w,
        "k_values": sample.k_values.tolist(),
        "alpha_dis": sample.alpha_dis.tolist(),
        "alpha_ord": sample.alpha_ord.tolist(),
        "mean_w": float(np.mean(sample.w)),
        "std_w": float(np.std(sample.w)),
        "mean_q_over_q": float(np.mean(ratio)),
        "q_over_q_quantiles": dict(zip(["p05", "p50", "p95"], np.quantile(ratio, [0.05, 0.5, 0.95]).tolist())),
    }
    write_json(body, config, args.out)
    return EXIT_OK


# ----------------------------- Sweeps ----------------------------- #

SWEEP_COLUMNS = [
    "q", "beta", "log_ztilde", "log_zdis_hat", "log_zord_hat", "regime", "m", "m_required", "status",
    "log_z_exact", "abs_err",
]


def _point_key(q: float, beta: float) -> str:
    return f"{q!r}:{beta!r}"


def sweep_point(g, q: float, beta: float, args, params) -> Dict[str, Any]:
    """One sweep row; failures become a row with an ERROR status instead of aborting the sweep."""
    row: Dict[str, Any] = {c: None for c in SWEEP_COLUMNS}
    row.update(q=q, beta=beta)
    try:
        point = argparse.Namespace(**{**vars(args), "q": q, "beta": beta})
        report = _count(g, point, params)
        row.update(
            log_ztilde=report.log_ztilde,
            log_zdis_hat=report.log_zdis_hat,
            log_zord_hat=report.log_zord_hat,
            regime=report.regime.value,
            m=report.m,
            m_required=report.m_required,
            status="|".join(report.status),
        )
        if args.with_exact:
            exact = z_rc_exact(g, q, beta, cap=params["exact"]["rc_edge_cap"])
            row.update(log_z_exact=exact.log_z, abs_err=abs(report.log_ztilde - exact.log_z))
    except (ValueError, RuntimeError) as e:
        logger.warning(f"sweep point q={q}, beta={beta} failed: {e}")
        row["status"] = f"ERROR: {e}"
    return row


def _read_manifest(path: Optional[str]) -> Dict[str, Dict[str, Any]]:
    done: Dict[str, Dict[str, Any]] = {}
    if path is None or not os.path.exists(path):
        return done
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            try:
                entry = json.loads(line)
            except json.JSONDecodeError:
                # Torn last line from an interrupted write.
                continue
            done[entry["key"]] = entry["row"]
    return done


def _ends_with_newline(path: str) -> bool:
    with open(path, "rb") as f:
        f.seek(0, os.SEEK_END)
        if f.tell() == 0:
            return True
        f.seek(-1, os.SEEK_END)
        return f.read(1) == b"\n"


def run_sweep(args, params, point_fn: Callable = sweep_point) -> pd.DataFrame:
    """Cross product of the q and beta grids, in input order, resuming from the manifest."""
    g = resolve_graph(args.graph)
    points = [(q, beta) for q in args.q_grid for beta in args.beta_grid]
    done = _read_manifest(args.manifest)
    todo = [(q, b) for q, b in points if _point_key(q, b) not in done]
    logger.info(f"sweep: {len(points)} points, {len(points) - len(todo)} already in the manifest")
    rows = Parallel(n_jobs=args.threads, return_as="generator")(
        delayed(point_fn)(g, q, b, args, params) for q, b in todo
    )
    with ExitStack() as stack:
        manifest = None
        if args.manifest is not None and todo:
            torn = os.path.exists(args.manifest) and not _ends_with_newline(args.manifest)
            manifest = stack.enter_context(open(args.manifest, "a", encoding="utf-8", newline="\n"))
            if torn:
                manifest.write("\n")
        # Rows come back in input order; each one is on disk before the next is awaited.
        for (q, b), row in zip(todo, rows):
            done[_point_key(q, b)] = row
            if manifest is not None:
                manifest.write(json.dumps({"key": _point_key(q, b), "row": row}) + "\n")
                manifest.flush()
    frame = pd.DataFrame([done[_point_key(q, b)] for q, b in points], columns=SWEEP_COLUMNS)
    return frame


def cmd_sweep(args, params) -> int:
    frame = run_sweep(args, params)
    write_csv(frame, _config(args), args.out, params["cli"]["float_format"])
    return EXIT_OK


# ----------------------------- Parser ----------------------------- #

def build_parser(params: Dict) -> argparse.ArgumentParser:
    cli, engine = params["cli"], params["engine"]
    parser = argparse.ArgumentParser(prog="rcpolymer", description="Random-cluster polymer expansions on expanders")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=None, help="Output file (default: stdout)")
    common.add_argument("--format", choices=["json", "csv"], default="json", help="Output format where both apply")
    common.add_argument("--threads", type=int, default=cli["threads"], help="Workers (-1: all cores)")
    common.add_argument("--seed", type=int, default=0, help="Seed for every stochastic step")

    with_graph = argparse.ArgumentParser(add_help=False)
    with_graph.add_argument("--graph", required=True, help="Graph JSON file or catalog name")

    model_params = argparse.ArgumentParser(add_help=False)
    model_params.add_argument("--q", type=float, required=True, help="Cluster weight")
    model_params.add_argument("--beta", type=float, required=True, help="Inverse temperature")

    counting = argparse.ArgumentParser(add_help=False)
    counting.add_argument("--eps", type=float, default=engine["epsilon"], help="Target relative error")
    counting.add_argument("--m", type=int, default=None, help="Truncation override")
    counting.add_argument("--force", action="store_true", default=engine["force"], help="Skip the class_check gate")
    counting.add_argument("--delta-small", type=float, default=params["graph"]["delta_small"])

    p = sub.add_parser("gen", parents=[common], help="Random regular graph (configuration model)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--delta", type=int, required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("check", parents=[common, with_graph], help="Expansion class check")
    p.add_argument("--delta-small", type=float, default=params["graph"]["delta_small"])
    p.add_argument("--t-half", type=float, default=params["graph"]["t_half"])
    p.add_argument("--t-small", type=float, default=params["graph"]["t_small"])
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("exact", parents=[common, with_graph, model_params], help="Brute-force partition function")
    p.add_argument("--eta", type=float, default=params["exact"]["eta"])
    p.add_argument("--boundary", choices=["free", "wired"], default="free")
    p.add_argument("--potts", action="store_true", help="Also enumerate the Potts partition function")
    p.set_defaults(func=cmd_exact)

    p = sub.add_parser("polymers", parents=[common, with_graph, model_params], help="Dump polymers as JSON lines")
    p.add_argument("--model", choices=["dis", "ord"], required=True)
    p.add_argument("--m", type=int, required=True, help="Maximum polymer size in edges")
    p.set_defaults(func=cmd_polymers)

    p = sub.add_parser("expansion", parents=[common, with_graph, model_params], help="Truncated cluster expansion")
    p.add_argument("--model", choices=["dis", "ord"], required=True)
    p.add_argument("--m", type=int, required=True, help="Clusters of total size < m")
    p.add_argument("--kp", action="store_true", help="Attach the truncated Kotecky-Preiss audit")
    p.set_defaults(func=cmd_expansion)

    p = sub.add_parser("count", parents=[common, with_graph, model_params, counting], help="Approximate log Z")
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("sample", parents=[common, with_graph, model_params, counting], help="Approximate samples")
    p.add_argument("--samples", type=int, default=1)
    p.add_argument("--thin", type=int, default=None, help="Chain steps between samples of one phase")
    p.add_argument("--potts", action="store_true", help="Emit Potts colorings via Edwards-Sokal")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("dynamics", parents=[common, with_graph, model_params], help="Markov chain trajectories")
    p.add_argument("--kernel", choices=KERNELS, required=True)
    p.add_argument("--start", choices=["empty", "full"], required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--record-every", type=int, default=1)
    p.add_argument("--eta", type=float, default=params["exact"]["eta"])
    p.add_argument("--escape", action="store_true", help="Emit the escape summary instead of trajectories")
    p.set_defaults(func=cmd_dynamics)

    p = sub.add_parser("phase", parents=[common], help="Tree free energies and the critical point")
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--delta", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--model", choices=["dis", "ord", "both"], default="both")
    p.add_argument("--k-max", type=int, default=params["phase"]["k_max"])
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--beta-grid", type=beta_grid, default=None, help="a:b:steps")
    mode.add_argument("--solve-bc", action="store_true")
    mode.add_argument("--alpha-k", type=int, default=None)
    mode.add_argument("--sample-w", type=int, default=None, help="Number of draws")
    p.set_defaults(func=cmd_phase)

    p = sub.add_parser("sweep", parents=[common, with_graph, counting], help="Grid of count runs as CSV")
    p.add_argument("--q-grid", type=float, nargs="+", required=True)
    p.add_argument("--beta-grid", type=beta_grid, required=True, help="a:b:steps")
    p.add_argument("--manifest", default=None, help="JSON-lines manifest of finished points")
    p.add_argument("--with-exact", action="store_true", help="Add the brute-force log Z column")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    params = load_parameters()
    parser = build_parser(params)
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    init_logging()
    try:
        return args.func(args, params)
    except (CapExceededError, BudgetExceededError) as e:
        logger.error(f"{args.command} aborted: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ABORTED
    except ValueError as e:
        logger.error(f"{args.command} rejected input: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    raise SystemExit(main())
