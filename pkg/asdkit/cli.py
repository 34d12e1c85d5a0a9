"""
Command-line front end.

Every subcommand reads one experiment configuration, writes its CSV
outputs plus a manifest.json into the output directory and returns an
exit code: 0 ok, 2 configuration error, 3 runtime error, 4 failed
`compare --assert`.
"""

import argparse
import json
import logging
import os
import sys
from contextlib import contextmanager

from . import __version__
from .bounds import (BoundInputs, concentration_bound, coupling_rate, depth_tail, gw_moment_probe,
                     ode_distance_bound, poisson_offspring, sample_truncated_tree, topological_bound, write_tree)
from .config import check_required, load_config, resolve_threads
from .csvio import (BASIN_FIELDS, BOUND_FIELDS, COMPARE_FIELDS, COMPARE_SUMMARY_FIELDS,
                    COUPLE_FIELDS, DEPTH_FIELDS, GW_FIELDS, ODE_FIELDS, STATIONARY_FIELDS,
                    SUMMARY_FIELDS, TRAJECTORY_FIELDS, compare_files, write_rows)
from .dynamics import make_kernel
from .errors import (AsdError, ConfigError, InvalidDistribution, InvalidPayoff, InvalidSpec, StateMismatch,
                     TreeBudgetExceeded)
from .graph import (GraphRecipe, InitialStateRule, LabelSet, extract_statistics, read_statistics,
                    write_edge_list, write_id_mapping, write_label_map, write_statistics)
from .meanfield import (MeanFieldSystem, OdeConfig, find_stationary, initial_state_from_rule,
                        integrate_label_independent, map_basins)
from .simulate import SimConfig, estimate_neighborhood_moments, graph_seed, run_ensemble
from .utils import make_rng

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_ASSERT = 4


class Context:
    """Resolved configuration and output location for one subcommand."""

    def __init__(self, command, args, cfg):
        self.command = command
        self.args = args
        self.cfg = cfg
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.out is not None:
            cfg["output"]["dir"] = args.out
        self.seed = cfg["seed"]
        self.out = cfg["output"]["dir"]
        self.threads = resolve_threads(args.threads, cfg)
        self.progress = args.progress
        self.outputs = {}

    def path(self, name):
        return os.path.join(self.out, name)

    def write(self, name, fieldnames, rows):
        path = self.path(name)
        count = write_rows(path, fieldnames, rows)
        self.outputs[name] = count
        print(f"Successfully wrote {count} rows to {path}")
        return count

    def note(self, name, count, what="rows"):
        self.outputs[name] = count
        print(f"Successfully wrote {count} {what} to {self.path(name)}")

    def write_manifest(self):
        manifest = {
            "command": self.command,
            "seed": self.seed,
            "version": __version__,
            "threads": self.threads,
            "outputs": self.outputs,
            "config": self.cfg,
        }
        with open(self.path("manifest.json"), 'w', encoding='utf-8') as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
            f.write("\n")


# ---------------------------------------------------------------------------
# builders

# Raised by constructors on bad parameter values; these come from the config.
PARAMETER_ERRORS = (InvalidSpec, InvalidPayoff, InvalidDistribution, StateMismatch)


@contextmanager
def config_values(section):
    """Re-raise parameter validation errors as ConfigError naming the section."""
    try:
        yield
    except PARAMETER_ERRORS as e:
        raise ConfigError(f"{section}: {e}") from e


def graph_recipe(cfg):
    check_required(cfg, "graph")
    return GraphRecipe(cfg["graph"]["generator"], dict(cfg["graph"]["params"]))


def build_graph(ctx):
    recipe = graph_recipe(ctx.cfg)
    with config_values("graph"):
        g = recipe.build(graph_seed(ctx.seed))
    logger.info("Built %s", g)
    return g


def limit_statistics(cfg):
    recipe = graph_recipe(cfg)
    with config_values("graph"):
        return recipe.limit_statistics()


def statistics(ctx):
    """Statistics file if given, else closed form, else those of the sampled graph."""
    path = ctx.cfg["graph"]["statistics"]
    if path:
        return read_statistics(path)
    stats = limit_statistics(ctx.cfg)
    if stats is None:
        stats = extract_statistics(build_graph(ctx))
    return stats


def graph_size(ctx):
    n = ctx.cfg["bounds"]["n"] or ctx.cfg["graph"]["params"].get("n")
    if n is None and "community_sizes" in ctx.cfg["graph"]["params"]:
        n = sum(ctx.cfg["graph"]["params"]["community_sizes"])
    if n is None:
        n = build_graph(ctx).n
    return int(n)


def kernel_for(cfg, labels):
    check_required(cfg, "dynamics")
    with config_values("dynamics"):
        return make_kernel(cfg["dynamics"]["kernel"], cfg["dynamics"]["params"], tuple(labels))


def _string_keys(mapping):
    """YAML reads state -1 or label 0 as ints; labels and states are strings."""
    return {str(k): (_string_keys(v) if isinstance(v, dict) else v) for k, v in mapping.items()}


def initial_rule(cfg, kernel, labels, g=None):
    init = cfg["initial"]
    states = tuple(kernel.states)
    if init["file"]:
        if g is None:
            raise ConfigError("'initial.file' needs one fixed graph (sim.fresh_graph must be false)")
        return InitialStateRule.from_file(states, init["file"], g)
    fractions = _string_keys(init["fractions"] or {states[0]: 1.0})
    for key in fractions:
        if str(key) not in states and str(key) not in labels:
            raise ConfigError(f"'initial.fractions' key {key!r} is neither a state nor a label")
    with config_values("initial"):
        return InitialStateRule.fraction_per_class(states, fractions, tuple(labels), exact=init["exact"])


def sim_config(cfg, seed):
    s = cfg["sim"]
    with config_values("sim"):
        return SimConfig(horizon=s["horizon"], dt=s["dt"], runs=s["runs"], seed=seed, gamma=s["gamma"],
                         granularity=s["granularity"], fresh_graph=s["fresh_graph"],
                         fresh_seeds=s["fresh_seeds"]).validate()


def ode_config(cfg, seed):
    o = cfg["ode"]
    with config_values("ode"):
        return OdeConfig(h=o["h"], horizon=o["horizon"], phi_mode=o["phi_mode"], mc_samples=o["mc_samples"],
                         budget=o["budget"], degree_threshold=o["degree_threshold"], seed=seed,
                         gamma=cfg["sim"]["gamma"], truncation=o["truncation"]).validate()


def _ode_inputs(ctx):
    stats = statistics(ctx)
    kernel = kernel_for(ctx.cfg, stats.labels)
    g = build_graph(ctx) if ctx.cfg["initial"]["file"] else None
    rule = initial_rule(ctx.cfg, kernel, stats.labels, g)
    p_s = rule.p_s_given_a(g) if g is not None else _broadcast(rule, stats.labels)
    return stats, kernel, p_s


def _broadcast(rule, labels):
    if len(rule.fractions) == 1 and len(labels) > 1:
        return rule.fractions.repeat(len(labels), axis=0)
    return rule.fractions


# ---------------------------------------------------------------------------
# subcommands

def cmd_generate(ctx):
    g = build_graph(ctx)
    ctx.note("graph.edges", write_edge_list(g, ctx.path("graph.edges")), "edges")
    ctx.note("labels.txt", write_label_map(g, ctx.path("labels.txt")), "labels")
    if ctx.cfg["graph"]["write_ids"]:
        ctx.note("ids.txt", write_id_mapping(g, ctx.path("ids.txt")), "ids")
    rule = None
    if ctx.cfg["initial"]["fractions"] or ctx.cfg["initial"]["file"]:
        rule = initial_rule(ctx.cfg, kernel_for(ctx.cfg, g.labels), g.labels, g)
    stats = extract_statistics(g, rule)
    write_statistics(stats, ctx.path("statistics.json"))
    ctx.note("statistics.json", len(stats.p), "cells")
    logger.info("Edge classes:\n%s", g.edge_class_counts())
    return EXIT_OK


def cmd_simulate(ctx):
    cfg = ctx.cfg
    sc = sim_config(cfg, ctx.seed)
    recipe = graph_recipe(cfg)
    source = recipe if sc.fresh_graph else build_graph(ctx)
    labels = source.labels if not sc.fresh_graph else _recipe_labels(ctx, recipe)
    kernel = kernel_for(cfg, labels)
    rule = initial_rule(cfg, kernel, labels, None if sc.fresh_graph else source)
    keep = cfg["output"]["trajectories"] or sc.runs == 1
    summary, samples = run_ensemble(source, kernel, rule, sc, workers=ctx.threads,
                                    progress=ctx.progress, keep_samples=keep)
    if samples:
        ctx.write("trajectory.csv", TRAJECTORY_FIELDS, (row for s in samples for row in s.rows()))
    if sc.runs > 1:
        ctx.write("summary.csv", SUMMARY_FIELDS, summary.rows())
    for c, cls in enumerate(summary.classes):
        final = ", ".join(f"{x}={summary.mean[-1, c, i]:.4f}" for i, x in enumerate(summary.states))
        logger.info("t=%g class %s: %s", summary.times[-1], cls, final)
    return EXIT_OK


def _recipe_labels(ctx, recipe):
    stats = limit_statistics(ctx.cfg)
    if stats is not None:
        return stats.labels
    p = recipe.params
    if "labels" in p and p["labels"]:
        return LabelSet(tuple(p["labels"]))
    return build_graph(ctx).labels


def cmd_ode(ctx):
    stats, kernel, p_s = _ode_inputs(ctx)
    oc = ode_config(ctx.cfg, ctx.seed)
    if ctx.cfg["ode"]["label_independent"]:
        # degree-independent start: one state law shared by every label
        law = (stats.p_a()[:, None] * p_s).sum(axis=0)
        times, zs, ys = integrate_label_independent(law, law, stats, kernel, oc)
        ctx.write("ode.csv", ODE_FIELDS, _scalar_rows(times, zs, ys, kernel.states))
        return EXIT_OK
    system = MeanFieldSystem(stats, kernel, oc)
    traj = system.integrate(initial_state_from_rule(stats, p_s))
    ctx.write("ode.csv", ODE_FIELDS, traj.rows(ctx.cfg["output"]["every"]))
    if traj.renormalized_steps:
        logger.warning("%d steps were renormalised onto the simplex", traj.renormalized_steps)
    return EXIT_OK


def _scalar_rows(times, zs, ys, states):
    for j, t in enumerate(times.tolist()):
        for w, state in enumerate(states):
            yield {"t": round(t, 10), "kind": "zeta_all", "state": state, "class": "all", "parent": "",
                   "value": float(zs[j, w])}
            yield {"t": round(t, 10), "kind": "y_all", "state": state, "class": "all", "parent": "",
                   "value": float(ys[j, w])}


def _stationary(ctx):
    stats = statistics(ctx)
    kernel = kernel_for(ctx.cfg, stats.labels)
    s = ctx.cfg["stationary"]
    system = MeanFieldSystem(stats, kernel, ode_config(ctx.cfg, ctx.seed))
    report = find_stationary(system, resolution=s["resolution"], tol=s["tol"], alpha=s["alpha"],
                             max_iter=s["max_iter"], newton_iter=s["newton_iter"], dedup=s["dedup"],
                             eig_tol=s["eig_tol"], max_seeds=s["max_seeds"])
    ctx.write("stationary.csv", STATIONARY_FIELDS, report.rows())
    logger.info("%d stationary points (%d stable), %d of %d seeds failed",
                len(report.points), len(report.stable()), report.failures, report.seeds)
    return system, report


def cmd_stationary(ctx):
    _stationary(ctx)
    return EXIT_OK


def cmd_basins(ctx):
    system, report = _stationary(ctx)
    b = ctx.cfg["basins"]
    basins = map_basins(system, None, report, resolution=b["resolution"], horizon=b["horizon"],
                        face=tuple(b["face"]), tol=b["tol"])
    ctx.write("basins.csv", BASIN_FIELDS, basins.rows())
    return EXIT_OK


def _bound_topological(ctx, t):
    opts = ctx.cfg["bounds"]["topological"]
    stats = statistics(ctx)
    report = topological_bound(stats, graph_size(ctx), t, "optimize", trials=opts["trials"],
                               seed=ctx.seed, form=opts["form"], conservative=opts["conservative"],
                               confidence=opts["confidence"])
    ctx.write("topological.csv", BOUND_FIELDS, report.rows())
    logger.info("Topological bound %.6g (dominant: %s)", report.value, report.dominant)
    for i in range(ctx.cfg["output"]["trees"]):
        try:
            tree = sample_truncated_tree(stats, t, rng=make_rng(ctx.seed, "tree-dump", i))
        except TreeBudgetExceeded as e:
            logger.warning("%s; dumping the partial tree", e)
            tree = e.partial
        name = f"tree_{i}.txt"
        write_tree(tree, ctx.path(name))
        ctx.note(name, tree.node_count, "tree nodes")


def _bound_concentration(ctx, t):
    opts = ctx.cfg["bounds"]["concentration"]
    g = build_graph(ctx)
    s = opts["s"]
    moments = estimate_neighborhood_moments(g, t, powers=(s,), trials=opts["trials"], seed=ctx.seed,
                                            weighting="in-degree", progress=ctx.progress)
    params = BoundInputs(n=g.n, t=t, eta=opts["eta"], epsilon=opts["epsilon"], s=s, x=opts["x"],
                         mean_degree=extract_statistics(g).mean_degree())
    report = concentration_bound(params, moments[s][0])
    ctx.write("concentration.csv", BOUND_FIELDS, report.rows())
    logger.info("Concentration bound %.6g (dominant: %s)", report.value, report.dominant)


def _bound_ode_distance(ctx, t):
    opts = ctx.cfg["bounds"]["ode_distance"]
    g = build_graph(ctx)
    stats_n = extract_statistics(g)
    if opts["limit_statistics"]:
        limit = read_statistics(opts["limit_statistics"])
    else:
        limit = limit_statistics(ctx.cfg)
    if limit is None:
        raise ConfigError("'bounds.ode_distance.limit_statistics' is needed for this generator")
    bound = ode_distance_bound(stats_n, limit, opts["zeta_gap"], opts["y_gap"], L=opts["L"], M=opts["M"],
                               delta=opts["delta"], m=opts["m"], kernel=kernel_for(ctx.cfg, limit.labels),
                               samples=opts["samples"], seed=ctx.seed)
    ctx.write("ode_distance.csv", BOUND_FIELDS, bound.rows())


def _bound_gw(ctx, t):
    opts = ctx.cfg["bounds"]["gw"]
    offspring = opts["offspring"] or poisson_offspring(opts["mean"])
    probe = gw_moment_probe(offspring, opts["depth"], s=opts["moment"], trials=opts["trials"], seed=ctx.seed)
    ctx.write("gw.csv", GW_FIELDS, probe.csv_rows())


def _bound_depth(ctx, t):
    rows = []
    for h in range(1, ctx.cfg["bounds"]["depth"]["max_depth"] + 1):
        exact, bound = depth_tail(t, h)
        rows.append({"depth": h, "exact": exact, "bound": bound})
    ctx.write("depth.csv", DEPTH_FIELDS, rows)


BOUND_COMMANDS = {
    "topological": _bound_topological,
    "concentration": _bound_concentration,
    "ode_distance": _bound_ode_distance,
    "gw": _bound_gw,
    "depth": _bound_depth,
}


def cmd_bounds(ctx):
    t = ctx.cfg["bounds"]["t"]
    for kind in ctx.cfg["bounds"]["kinds"]:
        BOUND_COMMANDS[kind](ctx, t)
    return EXIT_OK


def cmd_couple(ctx):
    c = ctx.cfg["couple"]
    if ctx.cfg["graph"]["generator"] == "edge_list":
        source = build_graph(ctx)
    else:
        source = statistics(ctx)
    rows = coupling_rate(source, c["n_values"], c["t"], traces=c["traces"], seed=ctx.seed,
                         with_bound=c["with_bound"], tail_trials=c["tail_trials"],
                         confidence=c["confidence"], progress=ctx.progress)
    ctx.write("couple.csv", COUPLE_FIELDS, rows)
    return EXIT_OK


def cmd_compare(ctx):
    c = ctx.cfg["compare"]
    first = ctx.args.first or c["first"]
    second = ctx.args.second or c["second"]
    if not first or not second:
        raise ConfigError("compare needs two CSV files (arguments or 'compare.first'/'compare.second')")
    result = compare_files(first, second)
    ctx.write("compare.csv", COMPARE_FIELDS, result.rows())
    ctx.write("compare_summary.csv", COMPARE_SUMMARY_FIELDS, result.summary_rows())
    for (cls, state), sup in sorted(result.sup.items()):
        print(f"  class {cls} state {state}: sup gap {sup:.6g}")
    tol = ctx.args.assert_tol if ctx.args.assert_tol is not None else c["assert_tol"]
    if tol is not None and result.max_gap > tol:
        print(f"Error: sup gap {result.max_gap:.6g} exceeds {tol:g}", file=sys.stderr)
        return EXIT_ASSERT
    return EXIT_OK


COMMANDS = {
    "generate": (cmd_generate, "Sample a graph; write edge list, labels and statistics"),
    "simulate": (cmd_simulate, "Run the stochastic dynamics; write trajectories"),
    "ode": (cmd_ode, "Integrate the mean-field ODE"),
    "stationary": (cmd_stationary, "Find and classify mean-field fixed points"),
    "basins": (cmd_basins, "Map basins of attraction of stable fixed points"),
    "bounds": (cmd_bounds, "Evaluate approximation bounds"),
    "couple": (cmd_couple, "Measure graph/tree coupling failure rates against n"),
    "compare": (cmd_compare, "Gap between two trajectory/ODE CSV files"),
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='Experiment config (YAML or JSON)')
    common.add_argument('--seed', type=int, help='Master seed (overrides config)')
    common.add_argument('--out', help='Output directory (overrides output.dir)')
    common.add_argument('--threads', type=int, help='Worker processes')
    common.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                        help='Override a config value, e.g. sim.runs=20')
    common.add_argument('-v', '--verbose', action='store_true', help='Debug logging')
    common.add_argument('--progress', action='store_true', help='Show progress bars')

    parser = argparse.ArgumentParser(prog='asdtool', description='Asynchronous semi-anonymous dynamics toolkit')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    sub = parser.add_subparsers(dest='command', required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name == "compare":
            p.add_argument('first', nargs='?', help='Reference CSV (gaps are first - second)')
            p.add_argument('second', nargs='?', help='CSV compared against the first')
            p.add_argument('--assert', dest='assert_tol', type=float, metavar='TOL',
                           help='Exit 4 when any sup gap exceeds TOL')
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT,
                        stream=sys.stderr)
    handler, _ = COMMANDS[args.command]
    try:
        cfg = load_config(args.config, args.set)
        ctx = Context(args.command, args, cfg)
        os.makedirs(ctx.out, exist_ok=True)
        code = handler(ctx)
        ctx.write_manifest()
        return code
    except ConfigError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (AsdError, OSError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
