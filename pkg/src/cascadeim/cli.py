"""Command-line entry point: ``cascadeim <subcommand> [options]``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import bench
from .diffusion import DiffusionParams, estimate_spread, fit_exposure_response, simulate_cascade
from .graph import (
    DegradationSpec,
    assign_indegree_weights,
    common_neighbor_ratio,
    degrade,
    load_edge_list,
    load_features,
    save_edge_list,
)
from .serialize import (
    load_embeddings,
    load_tensors,
    read_kv,
    read_seeds,
    save_embeddings,
    save_tensors,
    write_kv,
    write_seeds,
)
from .views import ViewConfig, compute_view_metrics

logger = logging.getLogger("cascadeim")


# -- shared option groups -------------------------------------------------------------

def _global_options(p, suppress):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="key=value file supplying option defaults")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS if suppress else 0)
    p.add_argument("--out-dir", default=argparse.SUPPRESS if suppress else ".")
    p.add_argument("-v", "--verbose", action="store_true",
                   default=argparse.SUPPRESS if suppress else False)


def _graph_options(p, required=True):
    p.add_argument("--graph", required=required, help="edge list: 'src dst [weight]' per line")
    p.add_argument("--format", default="whitespace-pairs", choices=["whitespace-pairs", "csv"])
    p.add_argument("--features", help="feature file, one whitespace-separated row per node")
    p.add_argument("--undirected", action="store_true", help="treat each line as both arcs")
    p.add_argument("--keep-weights", action="store_true",
                   help="use file weights instead of 1/in-degree")


def _diffusion_options(p):
    p.add_argument("--gamma", type=float, help="common-neighbour ratio (default: from graph)")
    p.add_argument("--omega", type=float, default=1.0)
    p.add_argument("--max-rounds", type=int)
    p.add_argument("--sigmoid", choices=["on", "off"], default="on")


def _view_options(p):
    p.add_argument("--pr", type=float, default=0.2, help="edge drop rate")
    p.add_argument("--pm", type=float, default=0.2, help="feature mask rate")
    p.add_argument("--k", type=int, help="terminal / source count")
    p.add_argument("--j", type=int, default=4, help="Gramian horizon")
    p.add_argument("--mc-rounds", type=int, default=200)


def build_parser():
    ap = argparse.ArgumentParser(prog="cascadeim", description=__doc__)
    _global_options(ap, suppress=False)
    sub = ap.add_subparsers(dest="command", required=True)

    def cmd(name, **kw):
        sp = sub.add_parser(name, **kw)
        _global_options(sp, suppress=True)
        return sp

    sp = cmd("degrade", help="drop edges and mask features at random")
    _graph_options(sp)
    sp.add_argument("--edge-drop", type=float, default=0.5)
    sp.add_argument("--feature-mask", type=float, default=0.5)
    sp.add_argument("--out", default="degraded.txt")

    sp = cmd("fit", help="fit the exposure-response curve to (x, beta) samples")
    sp.add_argument("--input", required=True, help="CSV of x,beta rows")
    sp.add_argument("--gamma", type=float, required=True)
    sp.add_argument("--out")

    sp = cmd("augment", help="build one SBV or CGV view")
    _graph_options(sp)
    _diffusion_options(sp)
    _view_options(sp)
    sp.add_argument("--view", choices=["sbv", "cgv"], required=True)
    sp.add_argument("--out", default="view.txt")
    sp.add_argument("--backbone-out", help="also write the Steiner backbone edge list")

    sur = cmd("surrogate", help="train or apply the metric surrogate")
    ss = sur.add_subparsers(dest="action", required=True)
    st = ss.add_parser("train")
    _global_options(st, suppress=True)
    _graph_options(st)
    _diffusion_options(st)
    _view_options(st)
    st.add_argument("--labels", help="CSV kind,u,v,value (kind H or C); default: exact labels")
    st.add_argument("--epochs", type=int, default=4000)
    st.add_argument("--lr", type=float, default=5e-3)
    st.add_argument("--layers", type=int, default=4)
    st.add_argument("--dim", type=int, default=32)
    st.add_argument("--hidden", type=int, default=64)
    st.add_argument("--out", default="surrogate.params")
    spd = ss.add_parser("predict")
    _global_options(spd, suppress=True)
    _graph_options(spd)
    spd.add_argument("--params", required=True)
    spd.add_argument("--pairs", help="file of 'u v' label pairs; default every arc")
    spd.add_argument("--out", default="pred.csv")

    g = cmd("gcl", help="contrastive embedding training")
    gs = g.add_subparsers(dest="action", required=True)
    gt = gs.add_parser("train")
    _global_options(gt, suppress=True)
    _graph_options(gt)
    _diffusion_options(gt)
    _view_options(gt)
    gt.add_argument("--epochs", type=int, default=100)
    gt.add_argument("--lr", type=float, default=1e-3)
    gt.add_argument("--tau", type=float, default=0.5)
    gt.add_argument("--out", default="emb.csv")
    gt.add_argument("--params-out", help="encoder tensor dump (default: <out>.params)")

    pol = cmd("policy", help="train the Q-network or select seeds with it")
    ps = pol.add_subparsers(dest="action", required=True)
    pt = ps.add_parser("train")
    _global_options(pt, suppress=True)
    _graph_options(pt)
    _diffusion_options(pt)
    pt.add_argument("--emb", required=True)
    pt.add_argument("--budget", type=int, required=True)
    pt.add_argument("--episodes", type=int, default=200)
    pt.add_argument("--rollouts", type=int, default=64)
    pt.add_argument("--candidates", type=int, help="restrict actions to the top-M degree nodes")
    pt.add_argument("--eval-every", type=int,
                    help="score the greedy policy every N episodes and keep the best network")
    pt.add_argument("--out", default="q.params")
    pl = ps.add_parser("select")
    _global_options(pl, suppress=True)
    _graph_options(pl)
    pl.add_argument("--emb", required=True)
    pl.add_argument("--qparams", required=True)
    pl.add_argument("--budget", type=int, required=True)
    pl.add_argument("--out", default="seeds.txt")

    ev = cmd("evaluate", help="compare seed-selection methods over budgets")
    _graph_options(ev)
    _diffusion_options(ev)
    _view_options(ev)
    ev.add_argument("--dataset", help="name in the CSV (default: graph file stem)")
    ev.add_argument("--methods", default=",".join(bench.METHODS))
    ev.add_argument("--budgets", default="10,20,30,40,50")
    ev.add_argument("--rollouts", type=int, default=1000, help="evaluation rollouts")
    ev.add_argument("--seeds", default="0", help="comma-separated run seeds")
    ev.add_argument("--edge-drop", type=float, default=0.5)
    ev.add_argument("--feature-mask", type=float, default=0.5)
    ev.add_argument("--gcl-epochs", type=int, default=100)
    ev.add_argument("--episodes", type=int, default=50)
    ev.add_argument("--train-rollouts", type=int, default=256)
    ev.add_argument("--candidates", type=int, default=100,
                    help="policy action pool: top-M nodes by degree (0 = all nodes)")
    ev.add_argument("--eval-every", type=int, default=10,
                    help="policy checkpoint evaluation cadence in episodes (0 = off)")
    ev.add_argument("--no-timing", action="store_true", help="write wall_time_s as 0")
    ev.add_argument("--out", default="results.csv")
    ev.add_argument("--plot", default="results.svg")

    vz = cmd("viz", help="DOT export of one cascade, or SVG of a results CSV")
    _graph_options(vz, required=False)
    _diffusion_options(vz)
    vz.add_argument("--seeds", dest="seeds_file", help="seed labels, one per line")
    vz.add_argument("--table", help="results CSV to plot instead of a cascade")
    vz.add_argument("--out", default="cascade.dot")

    sd = cmd("spread", help="Monte-Carlo spread of a seed set")
    _graph_options(sd)
    _diffusion_options(sd)
    sd.add_argument("--seeds", dest="seeds_file", required=True, help="seed labels, one per line")
    sd.add_argument("--rollouts", type=int, default=1000)
    sd.add_argument("--out", help="CSV path (default: stdout)")
    return ap


# -- helpers ------------------------------------------------------------------------

def _subparsers(parser):
    for a in parser._actions:
        if isinstance(a, argparse._SubParsersAction):
            for sp in a.choices.values():
                yield sp
                yield from _subparsers(sp)


def _apply_config(parser, path):
    """Install ``key=value`` entries as defaults of every parser that knows the key."""
    values = read_kv(path)
    used = set()
    for p in [parser, *_subparsers(parser)]:
        for a in p._actions:
            if a.dest in values and a.dest not in ("help", "config"):
                raw = values[a.dest]
                if isinstance(a, argparse._StoreTrueAction):
                    val = raw.lower() in ("1", "true", "yes", "on")
                else:
                    val = a.type(raw) if a.type else raw
                p.set_defaults(**{a.dest: val})
                used.add(a.dest)
    unknown = set(values) - used
    if unknown:
        raise SystemExit(f"error: unknown config key(s) in {path}: {sorted(unknown)}")


def _out(args, name):
    p = Path(name)
    return p if p.is_absolute() else Path(args.out_dir) / p


def _load_graph(args):
    directed = not args.undirected
    g = load_edge_list(args.graph, args.format, directed=directed)
    if args.features:
        g = g.with_features(load_features(args.features, g.node_count))
    return g if args.keep_weights else assign_indegree_weights(g)


def _params(args, g):
    gamma = args.gamma if args.gamma is not None else common_neighbor_ratio(g)
    return DiffusionParams(gamma=gamma, omega=args.omega, max_rounds=args.max_rounds,
                           apply_sigmoid=args.sigmoid == "on")


def _view_config(args):
    return ViewConfig(p_r=args.pr, p_m=args.pm, k=args.k, J=args.j, rounds=args.mc_rounds)


def _write_features(path, x):
    with open(path, "w", encoding="utf-8") as fh:
        for row in np.asarray(x, dtype=np.float64):
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


# -- subcommands ----------------------------------------------------------------------

def run_degrade(args):
    g = _load_graph(args)
    spec = DegradationSpec(args.edge_drop, args.feature_mask, args.seed)
    d = degrade(g, spec)
    out = _out(args, args.out)
    save_edge_list(d, out)
    _write_features(str(out) + ".features", d.features)
    print(f"{d.edge_count} arcs kept of {g.edge_count} -> {out}")


def run_fit(args):
    with open(args.input, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]
    samples = np.array([[float(r[0]), float(r[1])] for r in rows])
    res = fit_exposure_response(samples, args.gamma)
    text = write_kv(None, {"alpha": res.alpha, "omega": res.omega, "residual": res.residual})
    if args.out:
        write_kv(_out(args, args.out), {"alpha": res.alpha, "omega": res.omega,
                                        "residual": res.residual})
    sys.stdout.write(text)


def _is_number(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def run_augment(args):
    g = bench.model_features(_load_graph(args))
    cfg = _view_config(args)
    metrics = compute_view_metrics(g, _params(args, g), cfg, args.seed)
    view = metrics.sbv(g, cfg, args.seed) if args.view == "sbv" else metrics.cgv(g, cfg, args.seed)
    out = _out(args, args.out)
    save_edge_list(view.graph, out)
    with open(str(out) + ".mask", "w", encoding="utf-8") as fh:
        fh.write("# feature dimension mask (1 kept, 0 masked)\n")
        fh.write(" ".join(str(int(b)) for b in view.feature_mask) + "\n")
        fh.write("# rows the mask applies to\n")
        fh.write(" ".join(g.label_of(v) for v in view.masked_rows) + "\n")
    if args.backbone_out:
        with open(_out(args, args.backbone_out), "w", encoding="utf-8") as fh:
            for a, b in metrics.backbone.edges:
                fh.write(f"{g.label_of(a)} {g.label_of(b)}\n")
    print(f"{args.view} view with {view.graph.edge_count} arcs -> {out}")


def _surrogate_meta(model, p):
    return {"dim": model.dim, "layers": model.layers, "hidden": model.hidden,
            "h_mean": model.scalers_[0].mean, "h_std": model.scalers_[0].std,
            "c_mean": model.scalers_[1].mean, "c_std": model.scalers_[1].std,
            "gamma": p.gamma, "omega": float(np.asarray(p.omega).mean()),
            "sigmoid": bool(p.apply_sigmoid), "seed": model.random_state}


def _read_labels(path, g, params, cfg, seed):
    from .surrogate import GraphTensors, RegressionDataset

    pairs, h, nodes, c = [], [], [], []
    with open(path, encoding="utf-8", newline="") as fh:
        for r in csv.DictReader(fh):
            if r["kind"] == "H":
                pairs.append((g.node_of(r["u"]), g.node_of(r["v"])))
                h.append(float(r["value"]))
            elif r["kind"] == "C":
                nodes.append(g.node_of(r["u"]))
                c.append(float(r["value"]))
    rng = np.random.default_rng(seed)
    return RegressionDataset(graph=g, gt=GraphTensors.from_graph(g, params),
                             pairs=np.array(pairs, dtype=np.int64).reshape(-1, 2),
                             h_labels=np.array(h), nodes=np.array(nodes, dtype=np.int64),
                             c_labels=np.array(c), pair_train=rng.random(len(h)) >= 0.2,
                             node_train=rng.random(len(c)) >= 0.2, init_seed=seed)


def run_surrogate(args):
    from .surrogate import MetricSurrogate, _Scaler

    g = _load_graph(args)
    if args.action == "train":
        p = _params(args, g)
        cfg = _view_config(args)
        model = MetricSurrogate(dim=args.dim, layers=args.layers, hidden=args.hidden,
                                epochs=args.epochs, lr=args.lr, view_config=cfg,
                                resample_init=False, random_state=args.seed)
        datasets = None
        if args.labels:
            datasets = [_read_labels(args.labels, g, p, cfg, args.seed)]
        model.fit(g, p, datasets=datasets)
        tensors = {k: v.numpy() for k, v in model.net_.state_dict().items()}
        save_tensors(_out(args, args.out), tensors, _surrogate_meta(model, p))
        print(f"surrogate trained ({args.epochs} epochs) -> {_out(args, args.out)}")
        return
    tensors, meta = load_tensors(args.params)
    model = MetricSurrogate(dim=meta["dim"], layers=meta["layers"], hidden=meta["hidden"],
                            resample_init=False, random_state=meta["seed"])
    from .surrogate import SurrogateNet

    model.net_ = SurrogateNet(meta["dim"], meta["layers"], meta["hidden"], seed=meta["seed"])
    model.net_.load_state_dict({k: torch.as_tensor(v) for k, v in tensors.items()})
    hs, cs = _Scaler([]), _Scaler([])
    hs.mean, hs.std, cs.mean, cs.std = meta["h_mean"], meta["h_std"], meta["c_mean"], meta["c_std"]
    model.scalers_ = (hs, cs)
    model.params_ = DiffusionParams(gamma=meta["gamma"], omega=meta["omega"],
                                    apply_sigmoid=meta["sigmoid"])
    if args.pairs:
        with open(args.pairs, encoding="utf-8") as fh:
            pairs = np.array([[g.node_of(t) for t in line.split()[:2]]
                              for line in fh if line.strip() and not line.startswith("#")],
                             dtype=np.int64).reshape(-1, 2)
    else:
        pairs = np.column_stack([g.src, g.dst])
    embs = model._embed(g)
    h = model.predict_entropy(g, pairs, embs)
    c = model.predict_controllability(g, embs)
    with open(_out(args, args.out), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["u", "v", "H_hat", "C_hat"])
        for (u, v), hv in zip(pairs, h):
            w.writerow([g.label_of(u), g.label_of(v), repr(float(hv)), repr(float(c[u]))])
    print(f"{len(pairs)} predictions -> {_out(args, args.out)}")


def run_gcl(args):
    from .gcl import ContrastiveEncoder

    g = bench.model_features(_load_graph(args))
    enc = ContrastiveEncoder(epochs=args.epochs, lr=args.lr, tau=args.tau,
                             view_config=_view_config(args), diffusion_params=_params(args, g),
                             random_state=args.seed)
    Z = enc.fit_transform(g)
    out = _out(args, args.out)
    save_embeddings(out, Z, [g.label_of(v) for v in range(g.node_count)])
    params = args.params_out or (str(args.out) + ".params")
    save_tensors(_out(args, params), {k: v.numpy() for k, v in enc.encoder_.state_dict().items()},
                 {"widths": list(enc.widths), "in_dim": g.feature_dim, "tau": args.tau})
    print(f"embeddings {Z.shape} -> {out}")


def run_policy(args):
    from .policy import DDQNSeedSelector, QNet, candidate_pool, select_seeds

    g = _load_graph(args)
    Z = load_embeddings(args.emb, g)
    if args.action == "train":
        sel = DDQNSeedSelector(budget=args.budget, episodes=args.episodes, rollouts=args.rollouts,
                               candidate_limit=args.candidates, eval_every=args.eval_every,
                               diffusion_params=_params(args, g), random_state=args.seed)
        sel.fit(Z, g)
        save_tensors(_out(args, args.out),
                     {k: v.numpy() for k, v in sel.net_.state_dict().items()},
                     {"dim": int(Z.shape[1]), "hidden": sel.hidden,
                      "candidates": args.candidates})
        print(f"policy trained ({args.episodes} episodes) -> {_out(args, args.out)}")
        return
    tensors, meta = load_tensors(args.qparams)
    net = QNet(meta["dim"], meta["hidden"])
    net.load_state_dict({k: torch.as_tensor(v) for k, v in tensors.items()})
    pool = candidate_pool(g, meta.get("candidates"))
    seeds = select_seeds(g, Z, net, args.budget, pool)
    write_seeds(_out(args, args.out), seeds, g)
    print(f"{len(seeds)} seeds -> {_out(args, args.out)}")


def run_evaluate(args):
    g = _load_graph(args)
    pipe = bench.PipelineConfig(gcl_epochs=args.gcl_epochs, view=_view_config(args),
                                episodes=args.episodes, rollouts=args.train_rollouts,
                                candidate_limit=args.candidates or None,
                                eval_every=args.eval_every or None)
    cfg = bench.RunConfig(
        dataset=args.dataset or Path(args.graph).stem,
        degradation=DegradationSpec(args.edge_drop, args.feature_mask, args.seed),
        methods=tuple(m.strip() for m in args.methods.split(",") if m.strip()),
        budgets=tuple(int(b) for b in args.budgets.split(",")),
        eval_rollouts=args.rollouts,
        seeds=tuple(int(s) for s in args.seeds.split(",")),
        diffusion=lambda dg: _params(args, dg),
        pipeline=pipe, record_time=not args.no_timing)
    table = bench.evaluate(cfg, g)
    bench.export_table(table, _out(args, args.out))
    bench.export_plot(bench.series_from_table(table), _out(args, args.plot), title=cfg.dataset)
    sys.stdout.write(bench.export_table(table))


def run_viz(args):
    if args.table:
        with open(args.table, encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh))
        table = bench.ResultTable(rows=[{"method": r["method"], "budget": int(r["budget"]),
                                         "mean_spread": float(r["mean_spread"]),
                                         "std_error": float(r["std_error"])} for r in rows])
        out = _out(args, args.out if args.out != "cascade.dot" else "results.svg")
        bench.export_plot(bench.series_from_table(table), out, title=Path(args.table).stem)
        print(f"plot -> {out}")
        return
    if not args.graph or not args.seeds_file:
        raise SystemExit("error: viz needs --graph and --seeds (or --table)")
    g = _load_graph(args)
    seeds = read_seeds(args.seeds_file, g)
    trace = simulate_cascade(g, seeds, _params(args, g), args.seed)
    out = _out(args, args.out)
    bench.export_cascade(g, trace, seeds, out)
    print(f"cascade with {trace.size} active nodes -> {out}")


def run_spread(args):
    g = _load_graph(args)
    seeds = read_seeds(args.seeds_file, g)
    est = estimate_spread(g, seeds, _params(args, g), args.rollouts, args.seed)
    text = f"mean,std_error\n{est.mean!r},{est.std_error!r}\n"
    if args.out:
        with open(_out(args, args.out), "w", encoding="utf-8") as fh:
            fh.write(text)
    sys.stdout.write(text)


COMMANDS = {
    "degrade": run_degrade,
    "fit": run_fit,
    "augment": run_augment,
    "surrogate": run_surrogate,
    "gcl": run_gcl,
    "policy": run_policy,
    "evaluate": run_evaluate,
    "viz": run_viz,
    "spread": run_spread,
}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        _apply_config(parser, known.config)
    args = parser.parse_args(argv)
    for name, default in (("seed", 0), ("out_dir", "."), ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    Path(args.out_dir).mkdir(parents=True, exist_ok=True)
    torch.manual_seed(args.seed)
    try:
        COMMANDS[args.command](args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
