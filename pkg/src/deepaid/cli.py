"""Operator command line: generate data, train detectors, detect,
interpret, evaluate, attack, manage the distiller, launch the service.

Exit codes: 0 success, 1 validation/usage error, 2 runtime failure.
Artifacts read and write the canonical document formats of the data hub;
identical flags, seed and inputs reproduce identical output bytes.
"""

from __future__ import annotations

import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import datahub
from .datahub import (load_artifact_file, save_artifact, save_artifact_file,
                      save_graph, save_sequences, save_tabular)
from .detectors import (ReconstructionDetector, SequencePredictor, GraphDetector,
                        train_graph_embedding, train_reconstruction,
                        train_sequence_predictor)
from .distiller import Distiller, StateSpace, map_to_states
from .errors import DeepAIDError
from .evalkit import (AttackConfig, EvalReport, benchmark_runtime,
                      distance_attacks, jaccard_similarity, lfr_budget_curve,
                      optimization_attack)
from .interp_tabular import (InterpretationSet, TabularInterpConfig,
                             interpret_tabular)


@click.group()
def cli():
    """Anomaly-interpretation toolkit."""


# ------------------------------------------------------------------ synth


@cli.group()
def synth():
    """Generate synthetic benchmarks (pure functions of the seed)."""


@synth.command("tabular")
@click.option("--seed", type=int, required=True)
@click.option("--dims", type=int, default=100, show_default=True)
@click.option("--normal", "n_normal", type=int, default=5000, show_default=True)
@click.option("--classes", type=int, default=5, show_default=True)
@click.option("--per-class", type=int, default=100, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def synth_tabular_cmd(seed, dims, n_normal, classes, per_class, out):
    bench = datahub.synth_tabular(seed, dims, n_normal, classes,
                                  anomalies_per_class=per_class)
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    save_tabular(outdir / "normal.csv", bench.feature_names, bench.normal_rows)
    for cname in sorted(bench.anomalies):
        save_tabular(outdir / f"anomalies_{cname}.csv", bench.feature_names,
                     bench.anomalies[cname])
    save_artifact_file(bench, outdir / "benchmark.json")
    click.echo(f"wrote tabular benchmark to {outdir}")


@synth.command("sequences")
@click.option("--seed", type=int, required=True)
@click.option("--keys", "n_keys", type=int, default=14, show_default=True)
@click.option("--window", type=int, default=8, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def synth_sequences_cmd(seed, n_keys, window, out):
    bench = datahub.synth_sequences(seed, n_keys=n_keys, window=window)
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    save_sequences(outdir / "train.txt", bench.train_sequences)
    save_sequences(outdir / "final_corrupted.txt", bench.final_corrupted)
    save_sequences(outdir / "prefix_corrupted.txt", bench.prefix_corrupted)
    save_artifact_file(bench, outdir / "benchmark.json")
    click.echo(f"wrote sequence benchmark to {outdir}")


@synth.command("graph")
@click.option("--seed", type=int, required=True)
@click.option("--nodes", type=int, default=30, show_default=True)
@click.option("--communities", type=int, default=2, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def synth_graph_cmd(seed, nodes, communities, out):
    bench = datahub.synth_graph(seed, communities=communities, nodes=nodes)
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    save_graph(outdir / "edges.tsv", bench.edges)
    save_artifact_file(bench, outdir / "benchmark.json")
    click.echo(f"wrote graph benchmark to {outdir}")


# ------------------------------------------------------------------ train


@cli.group()
def train():
    """Train a detector and persist it as a model document."""


@train.command("recon")
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--layers", default="32,8,32", show_default=True)
@click.option("--epochs", type=int, default=60, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--quantile", type=float, default=0.995, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def train_recon(data, layers, epochs, seed, quantile, out):
    names, rows, norm = datahub.load_tabular(data)
    layer_sizes = [int(s) for s in layers.split(",") if s]
    det = train_reconstruction(norm.apply(rows), layer_sizes, epochs, seed,
                               quantile=quantile, norm=norm, feature_names=names)
    save_artifact_file(det, out)
    click.echo(f"threshold={det.threshold:.6g} -> {out}")


@train.command("seq")
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--keys", "n_keys", type=int, required=True)
@click.option("--window", type=int, required=True)
@click.option("--epochs", type=int, default=30, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--hidden", type=int, default=32, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def train_seq(data, n_keys, window, epochs, seed, hidden, out):
    seqs = datahub.load_sequences(data)
    pred = train_sequence_predictor(seqs, n_keys, window, epochs, seed,
                                    hidden=hidden)
    save_artifact_file(pred, out)
    click.echo(f"threshold={pred.threshold:.6g} -> {out}")


@train.command("graph")
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--dim", type=int, default=8, show_default=True)
@click.option("--walk-length", type=int, default=20, show_default=True)
@click.option("--walks-per-node", type=int, default=20, show_default=True)
@click.option("--window", type=int, default=4, show_default=True)
@click.option("--epochs", type=int, default=15, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def train_graph(data, dim, walk_length, walks_per_node, window, epochs, seed, out):
    edges = datahub.load_graph(data)
    det = train_graph_embedding(edges, dim, walk_length, walks_per_node,
                                window, epochs, seed)
    save_artifact_file(det, out)
    click.echo(f"threshold={det.threshold:.6g} nodes={len(det.node_names)} -> {out}")


# ------------------------------------------------------------------ detect


@cli.command("detect")
@click.option("--model", type=click.Path(exists=True), required=True)
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), default=None)
@click.option("--json", "as_json", is_flag=True)
def detect(model, data, out, as_json):
    """Score inputs; list which are flagged anomalous."""
    det = load_artifact_file(model)
    results = []
    if isinstance(det, ReconstructionDetector):
        _, rows, _ = datahub.load_tabular(data)
        rows = det.norm.apply(rows)
        for i, x in enumerate(rows):
            err, flag = det.score(x)
            results.append({"index": i, "score": err, "anomaly": bool(flag)})
    elif isinstance(det, SequencePredictor):
        for i, w in enumerate(datahub.load_sequences(data)):
            p, flag = det.score_window(w)
            results.append({"index": i, "score": p, "anomaly": bool(flag)})
    elif isinstance(det, GraphDetector):
        for i, (a, b) in enumerate(datahub.load_graph(data)):
            err, flag = det.score_link(a, b)
            results.append({"index": i, "score": err, "anomaly": bool(flag)})
    else:
        raise DeepAIDError(f"model {type(det).__name__} cannot score data files")
    doc = {"threshold": float(det.threshold), "results": results,
           "flagged": sum(r["anomaly"] for r in results)}
    text = json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    if as_json or not out:
        click.echo(text, nl=False)
    else:
        click.echo(f"flagged {doc['flagged']} / {len(results)}")


# ---------------------------------------------------------------- interpret


def _interp_config(k, sigma_n, max_iter, steps, eps):
    return TabularInterpConfig(k=k, sigma_n=sigma_n, max_iter=max_iter,
                               steps_per_iter=steps, eps=eps)


@cli.command("interpret")
@click.option("--model", type=click.Path(exists=True), required=True)
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--k", type=int, default=10, show_default=True)
@click.option("--sigma-n", type=float, default=0.0, show_default=True)
@click.option("--max-iter", type=int, default=20, show_default=True)
@click.option("--steps", type=int, default=8, show_default=True)
@click.option("--eps", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def interpret_cmd(model, data, k, sigma_n, max_iter, steps, eps, seed, workers, out):
    """Search normal references for every anomalous row of a feature CSV."""
    det = load_artifact_file(model)
    if not isinstance(det, ReconstructionDetector):
        raise DeepAIDError("interpret expects a reconstruction detector model")
    names, rows, _ = datahub.load_tabular(data)
    rows = det.norm.apply(rows)
    cfg = _interp_config(k, sigma_n, max_iter, steps, eps)
    flagged = [x for x in rows if det.score(x)[1]]
    skipped = len(rows) - len(flagged)
    if skipped:
        click.echo(f"skipping {skipped} rows the detector scores normal", err=True)

    def run(x):
        return interpret_tabular(x, det, cfg, seed=seed)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            items = list(pool.map(run, flagged))
    else:
        items = [run(x) for x in flagged]
    save_artifact_file(InterpretationSet(items, det.feature_names), out)
    click.echo(f"interpreted {len(items)} anomalies -> {out}")


# ----------------------------------------------------------------- evaluate


@cli.command("evaluate")
@click.option("--model", type=click.Path(exists=True), required=True)
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--interpretations", type=click.Path(exists=True), default=None)
@click.option("--metric", type=click.Choice(["lfr", "stability", "runtime", "all"]),
              default="all", show_default=True)
@click.option("--budget-sweep", is_flag=True)
@click.option("--k", type=int, default=10, show_default=True)
@click.option("--json", "as_json", is_flag=True)
@click.option("--out", type=click.Path(), default=None)
def evaluate(model, data, interpretations, metric, budget_sweep, k, as_json, out):
    """Emit the metric report for interpretations of a set of anomalies."""
    det = load_artifact_file(model)
    _, rows, _ = datahub.load_tabular(data)
    rows = det.norm.apply(rows)
    anomalies = [x for x in rows if det.score(x)[1]]
    if not anomalies:
        raise DeepAIDError("no anomalous rows to evaluate")
    cfg = TabularInterpConfig(k=k)
    if interpretations:
        iset = load_artifact_file(interpretations)
        interps = iset.items
        if len(interps) != len(anomalies):
            raise DeepAIDError(
                f"{len(interps)} interpretations vs {len(anomalies)} anomalies")
    else:
        interps = [interpret_tabular(x, det, cfg) for x in anomalies]

    report = EvalReport()
    if metric in ("lfr", "all"):
        budgets = sorted({1, max(1, k // 2), k}) if not budget_sweep else \
            sorted({1, 2, 3, 5, k // 2, k} | {k})
        report.lfr_curve = lfr_budget_curve(anomalies, interps, det, budgets)
    if metric in ("stability", "all"):
        second = [interpret_tabular(x, det, cfg) for x in anomalies]
        js = [jaccard_similarity(a, b) for a, b in zip(interps, second)]
        report.mean_jaccard = float(np.mean(js))
    if metric in ("runtime", "all"):
        report.runtime = benchmark_runtime(
            lambda x: interpret_tabular(x, det, cfg), anomalies)
    text = save_artifact(report)
    if out:
        Path(out).write_text(text, encoding="utf-8")
    click.echo(text if as_json else report.table(), nl=not as_json)


# ------------------------------------------------------------------- attack


@cli.command("attack")
@click.option("--model", type=click.Path(exists=True), required=True)
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--kind", type=click.Choice(["opt", "l0", "l2"]), required=True)
@click.option("--delta", type=float, default=0.2, show_default=True)
@click.option("--sigma", type=float, default=0.01, show_default=True)
@click.option("--k", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def attack(model, data, kind, delta, sigma, k, seed, out):
    """Perturb anomalies and report interpretation stability under attack."""
    det = load_artifact_file(model)
    names, rows, _ = datahub.load_tabular(data)
    rows = det.norm.apply(rows)
    anomalies = [x for x in rows if det.score(x)[1]]
    cfg = TabularInterpConfig(k=k)
    acfg = AttackConfig(delta_a=delta, sigma=sigma)
    js, failed = [], 0
    perturbed = []
    for x in anomalies:
        base = interpret_tabular(x, det, cfg)
        if kind == "opt":
            xt, ok = optimization_attack(x, det, cfg, acfg)
            if not ok:
                failed += 1
                continue
        else:
            res = distance_attacks(x, base, acfg, seed=seed)
            xt = res.l0 if kind == "l0" else res.l2
            if not det.score(xt)[1]:
                failed += 1
                continue
        after = interpret_tabular(xt, det, cfg)
        a_dims = set(base.dims)
        b_dims = set(after.dims)
        if kind == "l2":
            a_dims.discard(res.l2_dim)
            b_dims.discard(res.l2_dim)
        js.append(jaccard_similarity(a_dims, b_dims))
        perturbed.append(xt.tolist())
    doc = {"kind": kind, "mean_jaccard": float(np.mean(js)) if js else None,
           "attacked": len(js), "failed": failed, "perturbed": perturbed}
    Path(out).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n",
                         encoding="utf-8")
    click.echo(f"{kind}: mean Jaccard {doc['mean_jaccard']} "
               f"({len(js)} attacked, {failed} failed) -> {out}")


# ------------------------------------------------------------------ distill


@cli.group()
def distill():
    """Manage the feedback distiller."""


def _load_distiller(path, dims, intervals):
    if path and Path(path).exists():
        return load_artifact_file(path)
    if dims is None:
        raise DeepAIDError("new distiller needs --dims")
    return Distiller(StateSpace(intervals, dims))


@distill.command("update")
@click.option("--distiller", "dist_path", type=click.Path(), required=True)
@click.option("--interpretations", type=click.Path(exists=True), required=True)
@click.option("--label", required=True)
@click.option("--dims", type=int, default=None)
@click.option("--intervals", type=int, default=20, show_default=True)
def distill_update(dist_path, interpretations, label, dims, intervals):
    iset = load_artifact_file(interpretations)
    if dims is None and iset.items:
        dims = len(iset.items[0].anomaly)
    dist = _load_distiller(dist_path, dims, intervals)
    for interp in iset.items:
        dist.add_feedback(interp, label)
    save_artifact_file(dist, dist_path)
    click.echo(f"added {len(iset.items)} rules with label {label!r} -> {dist_path}")


@distill.command("test")
@click.option("--distiller", "dist_path", type=click.Path(exists=True), required=True)
@click.option("--interpretations", type=click.Path(exists=True), required=True)
@click.option("--json", "as_json", is_flag=True)
def distill_test(dist_path, interpretations, as_json):
    dist = load_artifact_file(dist_path)
    iset = load_artifact_file(interpretations)
    out = []
    for i, interp in enumerate(iset.items):
        states = map_to_states(interp, dist.space)
        decision, probs = dist.match(states)
        out.append({"index": i, "decision": decision,
                    "probabilities": {k: float(v) for k, v in sorted(probs.items())}})
    text = json.dumps({"matches": out}, sort_keys=True, separators=(",", ":"))
    if as_json:
        click.echo(text)
    else:
        for row in out:
            click.echo(f"{row['index']:4d}  {row['decision']}")


@distill.command("export")
@click.option("--distiller", "dist_path", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), default=None)
def distill_export(dist_path, out):
    text = save_artifact(load_artifact_file(dist_path))
    if out:
        Path(out).write_text(text, encoding="utf-8")
        click.echo(f"exported -> {out}")
    else:
        click.echo(text, nl=False)


@distill.command("import")
@click.option("--source", "src", type=click.Path(exists=True), required=True)
@click.option("--distiller", "dist_path", type=click.Path(), required=True)
def distill_import(src, dist_path):
    dist = load_artifact_file(src)
    if not isinstance(dist, Distiller):
        raise DeepAIDError("source is not a distiller document")
    save_artifact_file(dist, dist_path)
    click.echo(f"imported {src} -> {dist_path}")


# -------------------------------------------------------------------- serve


@cli.command("serve")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def serve_cmd(config_path):
    """Run the HTTP service (config file or DEEPAID_CONFIG)."""
    from .service import ServiceConfig, serve
    path = config_path or os.environ.get("DEEPAID_CONFIG")
    if not path:
        raise DeepAIDError("pass --config or set DEEPAID_CONFIG")
    serve(ServiceConfig.from_file(path))


@cli.command("bench")
@click.option("--size", type=int, default=100, show_default=True)
@click.option("--repeats", type=int, default=2000, show_default=True)
def bench(size, repeats):
    """Compare the numba and numpy kernel backends."""
    from .kernels.bench import run_bench
    run_bench(size, repeats)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as e:
        return int(e.exit_code)
    except click.UsageError as e:
        e.show(file=sys.stderr)
        return 1
    except click.ClickException as e:
        e.show(file=sys.stderr)
        return 1
    except DeepAIDError as e:
        click.echo(f"error: {e}", err=True)
        return 1
    except Exception as e:  # runtime failure
        click.echo(f"runtime failure: {e}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
