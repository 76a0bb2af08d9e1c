"""Command-line batch driver.

Subcommands mirror the analysis stages: forward, patterns, stats,
rdm {build,rank,corr,mds}, subsets, train-heads, cam, render. Every
documented toolkit error exits with its own nonzero status code; see
errors.py for the mapping. REPSCOPE_THREADS caps worker threads for the
per-image forward stage (default: available cores).
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import cam as cam_mod
from . import net as net_mod
from . import patterns as patterns_mod
from . import rdm as rdm_mod
from . import render as render_mod
from . import stats as stats_mod
from . import tensorio
from .errors import EmptyScope, MissingHead, RepscopeError


def thread_cap() -> int:
    env = os.environ.get("REPSCOPE_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _cmd_forward(args) -> int:
    spec = net_mod.load_network_spec(args.net)
    manifest = tensorio.load_manifest(args.manifest, validate_tensors=True)
    base = os.path.dirname(os.fspath(args.manifest))
    records = [r for r in manifest.records if args.split in ("all", r.split)]
    os.makedirs(args.out, exist_ok=True)

    def run_one(record):
        tp = record.tensor_path
        full = tp if os.path.isabs(tp) else os.path.join(base, tp)
        image = tensorio.read_tensor(full)
        trace = net_mod.forward(spec, image, image_id=record.image_id)
        return net_mod.save_trace(trace, args.out)

    with ThreadPoolExecutor(max_workers=thread_cap()) as pool:
        per_image = list(pool.map(run_one, records))
    rows = [row for chunk in per_image for row in chunk]
    net_mod.write_trace_index(rows, args.out)
    print(f"forward: {len(records)} images, {len(spec.tap_points)} taps -> {args.out}")
    return 0


def _cmd_patterns(args) -> int:
    manifest = tensorio.load_manifest(args.manifest)
    traces = net_mod.load_traces(args.traces)
    mode = patterns_mod.TOP_FRACTION_MEAN if args.mode == "top" else patterns_mod.SCALED_MEAN
    cfg = patterns_mod.AnalysisConfig(
        fraction=args.fraction, fraction_mode=mode, strict_threshold=not args.non_strict
    )
    vectors = patterns_mod.build_response_vectors(traces, cfg)
    thresholds = patterns_mod.class_thresholds(vectors, manifest)
    pats = patterns_mod.build_patterns(vectors, thresholds, manifest, cfg)

    os.makedirs(args.out, exist_ok=True)
    layers: list[str] = []
    for v in vectors:
        if v.layer_name not in layers:
            layers.append(v.layer_name)
    for layer in layers:
        vrows = sorted((v for v in vectors if v.layer_name == layer), key=lambda v: v.image_id)
        prow = {p.image_id: p for p in pats if p.layer_name == layer}
        labels = [(v.image_id, manifest.class_of(v.image_id)) for v in vrows]
        vmat = np.stack([v.values for v in vrows])
        pmat = np.stack([prow[v.image_id].values for v in vrows])
        patterns_mod.save_layer_matrix(labels, vmat, os.path.join(args.out, f"responses_{layer}"))
        patterns_mod.save_layer_matrix(labels, pmat, os.path.join(args.out, f"patterns_{layer}"))
    patterns_mod.save_thresholds(thresholds, os.path.join(args.out, "thresholds.tsv"))
    render_mod.write_table(
        [(l,) for l in layers], os.path.join(args.out, "layers.tsv"), header=["layer_name"]
    )
    print(f"patterns: {len(vectors)} vectors over {len(layers)} layers -> {args.out}")
    return 0


def _load_patterns_dir(patterns_dir: str, layer: str) -> list[patterns_mod.ActivityPattern]:
    stem = os.path.join(patterns_dir, f"patterns_{layer}")
    if not os.path.exists(f"{stem}.rstf"):
        raise EmptyScope(f"no stored patterns for layer {layer!r} in {patterns_dir}")
    rows, matrix = patterns_mod.load_layer_matrix(stem)
    tmap = {
        (t.class_id, t.layer_name): t.t
        for t in patterns_mod.load_thresholds(os.path.join(patterns_dir, "thresholds.tsv"))
    }
    out = []
    for (image_id, class_id), values in zip(rows, matrix):
        out.append(
            patterns_mod.ActivityPattern(
                image_id, layer, class_id, tmap[(class_id, layer)], values.astype(np.float64)
            )
        )
    return out


def _load_vectors_dir(patterns_dir: str, layer: str) -> list[patterns_mod.ResponseVector]:
    stem = os.path.join(patterns_dir, f"responses_{layer}")
    if not os.path.exists(f"{stem}.rstf"):
        raise EmptyScope(f"no stored responses for layer {layer!r} in {patterns_dir}")
    rows, matrix = patterns_mod.load_layer_matrix(stem)
    return [
        patterns_mod.ResponseVector(image_id, layer, values.astype(np.float64))
        for (image_id, _), values in zip(rows, matrix)
    ]


def _emit_histogram(hist: stats_mod.Histogram, out: str | None) -> None:
    rows = hist.rows()
    header = ["bin_lo", "bin_hi", "count", "ratio"]
    if out:
        render_mod.write_table(rows, out, header)
    else:
        print("\t".join(header))
        for row in rows:
            print("\t".join(str(x) for x in row))


def _cmd_stats(args) -> int:
    scope = args.class_id
    if args.per_image:
        pats = _load_patterns_dir(args.patterns, args.layer)
        hist = stats_mod.activated_per_image(pats, args.layer, scope)
    elif args.per_neuron:
        pats = _load_patterns_dir(args.patterns, args.layer)
        hist = stats_mod.images_per_neuron(pats, args.layer, scope)
    else:
        if scope is None:
            raise EmptyScope("--neuron requires --class")
        if not args.manifest:
            raise EmptyScope("--neuron requires --manifest for class membership")
        manifest = tensorio.load_manifest(args.manifest)
        vectors = _load_vectors_dir(args.patterns, args.layer)
        hist = stats_mod.neuron_response_histogram(
            vectors, args.neuron, scope, args.layer, manifest, n_bins=args.bins
        )
    _emit_histogram(hist, args.out)
    return 0


def _cmd_rdm_build(args) -> int:
    pats = _load_patterns_dir(args.patterns, args.layer)
    if args.subset:
        subset = tensorio.load_manifest(args.subset)
        by_id = {p.image_id: p for p in pats}
        pats = [by_id[r.image_id] for r in subset.records]
    r = rdm_mod.build_rdm(pats)
    rdm_mod.save_rdm(r, args.out)
    if r.degeneracies:
        print(f"rdm: {len(r.degeneracies)} degenerate pairs assigned d=1", file=sys.stderr)
    print(f"rdm build: {r.n}x{r.n} -> {args.out}")
    return 0


def _cmd_rdm_rank(args) -> int:
    r = rdm_mod.load_rdm(args.input)
    rdm_mod.save_rdm(rdm_mod.rank_transform(r), args.out)
    print(f"rdm rank: {r.n}x{r.n} -> {args.out}")
    return 0


def _cmd_rdm_corr(args) -> int:
    a = rdm_mod.load_rdm(args.a)
    b = rdm_mod.load_rdm(args.b)
    print(f"{rdm_mod.rdm_correlation(a, b, args.method)!r}")
    return 0


def _cmd_rdm_mds(args) -> int:
    rdms = [rdm_mod.load_rdm(p) for p in args.rdms]
    labels = [os.path.splitext(os.path.basename(p))[0] for p in args.rdms]
    D = rdm_mod.rdm_distance_matrix(rdms, args.method)
    emb = rdm_mod.classical_mds(D, dim=args.dim, labels=labels)
    rows = [(lab, *(repr(float(c)) for c in coords)) for lab, coords in zip(labels, emb.coords)]
    header = ["label"] + [f"dim{i}" for i in range(args.dim)]
    render_mod.write_table(rows, args.out, header)
    render_mod.write_table(
        [(i, repr(float(v))) for i, v in enumerate(emb.eigenvalues)],
        f"{args.out}.eigs.tsv",
        header=["index", "eigenvalue"],
    )
    fit = rdm_mod.mds_fit_correlation(D, emb, args.method)
    print(f"mds: {len(rdms)} RDMs embedded in {args.dim}-D, fit correlation {fit:.6f}")
    return 0


def _cmd_subsets(args) -> int:
    manifest = tensorio.load_manifest(args.manifest)
    confidences: dict[str, float] = {}
    with open(args.confidences, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#") or line.startswith("image_id\t"):
                continue
            image_id, conf = line.split("\t")
            confidences[image_id] = float(conf)
    subsets = rdm_mod.build_subsets(
        manifest, confidences, args.groups, args.per_group, args.allow_short
    )
    os.makedirs(args.out, exist_ok=True)
    for s in subsets:
        records = [manifest.record(i) for i in s.members]
        path = os.path.join(args.out, f"subset_{s.subset_index:02d}.tsv")
        tensorio.save_manifest(tensorio.DatasetManifest(records), path)
    print(f"subsets: {len(subsets)} subsets of {len(subsets[0].members)} -> {args.out}")
    return 0


def _cmd_train_heads(args) -> int:
    manifest = tensorio.load_manifest(args.manifest)
    traces = net_mod.load_traces(args.traces)
    order = {t.image_id: t for t in traces}
    ordered = [order[r.image_id] for r in manifest.records if r.image_id in order]
    if not ordered:
        raise EmptyScope("no traces match the manifest")
    layers = args.layer or list(ordered[0].taps.keys())
    cfg = cam_mod.TrainConfig(
        learning_rate=args.lr, l2=args.l2, max_iters=args.max_iters, grad_tol=args.grad_tol
    )
    os.makedirs(args.out, exist_ok=True)
    labels = np.array([manifest.class_of(t.image_id) for t in ordered])
    for layer in layers:
        feats = np.stack([net_mod.gap(t.taps[layer]) for t in ordered]).astype(np.float64)
        head = cam_mod.train_gap_head(
            feats, labels, cfg, layer_name=layer, n_classes=manifest.n_classes
        )
        cam_mod.save_head(head, args.out)
        m = head.train_meta
        print(
            f"train-heads: {layer} iters={m.iterations} loss={m.final_loss:.6f} "
            f"grad={m.final_grad_norm:.2e}"
        )
    return 0


def _cmd_cam(args) -> int:
    manifest = tensorio.load_manifest(args.manifest)
    traces = net_mod.load_traces(args.traces)

    if args.table_out:
        layers = list(traces[0].taps.keys())
        heads = {l: cam_mod.load_head(args.heads, l) for l in layers}
        rows = cam_mod.per_layer_predictions(traces, heads, manifest, k=args.topk)
        render_mod.write_table(
            [
                (r.image_id, r.layer_name, r.rank, r.class_id, repr(r.probability), int(r.correct))
                for r in rows
            ],
            args.table_out,
            header=["image_id", "layer", "rank", "class_id", "probability", "correct"],
        )
        print(f"cam: prediction table ({len(rows)} rows) -> {args.table_out}")
        return 0

    if args.confidences_out:
        if not args.layer:
            raise MissingHead("--confidences-out requires --layer")
        head = cam_mod.load_head(args.heads, args.layer)
        conf = cam_mod.top1_confidences(traces, head, args.layer, manifest)
        render_mod.write_table(
            [(i, repr(c)) for i, c in sorted(conf.items())],
            args.confidences_out,
            header=["image_id", "confidence"],
        )
        print(f"cam: confidences at {args.layer} -> {args.confidences_out}")
        return 0

    if not args.image or not args.layer:
        raise EmptyScope("single-image mode requires --image and --layer")
    trace = next((t for t in traces if t.image_id == args.image), None)
    if trace is None or args.layer not in trace.taps:
        raise EmptyScope(f"no trace for image {args.image!r} at layer {args.layer!r}")
    head = cam_mod.load_head(args.heads, args.layer)
    fmap = trace.taps[args.layer]
    preds = cam_mod.predict(head, net_mod.gap(fmap), k=args.topk)
    true_class = manifest.class_of(args.image)
    names = manifest.class_names()
    for rank, (class_id, prob) in enumerate(preds, start=1):
        flag = "correct" if class_id == true_class else ""
        print(f"top{rank}\t{class_id}\t{names.get(class_id, '?')}\t{prob:.6f}\t{flag}")

    target = args.class_id if args.class_id is not None else true_class
    cmap = cam_mod.cam_map(fmap, head, target, image_id=args.image)
    if args.overlay:
        rec = manifest.record(args.image)
        base = os.path.dirname(os.fspath(args.manifest))
        tp = rec.tensor_path
        img = tensorio.read_tensor(tp if os.path.isabs(tp) else os.path.join(base, tp))
        if img.ndim == 3 and img.shape[0] == 1:
            img = np.repeat(img, 3, axis=0)
        render_mod.overlay_cam(img, cmap.grid, args.overlay, alpha=args.alpha)
        print(f"cam: overlay for class {target} -> {args.overlay}")
    return 0


def _cmd_render_heatmap(args) -> int:
    m = tensorio.read_tensor(args.input)
    render_mod.render_heatmap(m, args.out, zoom=args.zoom)
    print(f"render: {m.shape[0]}x{m.shape[1]} heatmap -> {args.out}")
    return 0


def _cmd_render_overlay(args) -> int:
    img = tensorio.read_tensor(args.image)
    if img.ndim == 3 and img.shape[0] == 1:
        img = np.repeat(img, 3, axis=0)
    grid = tensorio.read_tensor(args.cam)
    render_mod.overlay_cam(img, grid, args.out, alpha=args.alpha)
    print(f"render: overlay -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="repscope", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    fw = sub.add_parser("forward", help="run the network over a manifest, capturing taps")
    fw.add_argument("--net", required=True)
    fw.add_argument("--manifest", required=True)
    fw.add_argument("--out", required=True)
    fw.add_argument("--split", default="all", choices=["all", "train", "val", "test"])
    fw.set_defaults(func=_cmd_forward)

    pa = sub.add_parser("patterns", help="response vectors, thresholds, activity patterns")
    pa.add_argument("--traces", required=True)
    pa.add_argument("--manifest", required=True)
    pa.add_argument("--out", required=True)
    pa.add_argument("--fraction", type=float, default=0.8)
    pa.add_argument("--mode", default="top", choices=["top", "scaled"])
    pa.add_argument("--non-strict", action="store_true")
    pa.set_defaults(func=_cmd_patterns)

    st = sub.add_parser("stats", help="selectivity/sparsity histograms")
    st.add_argument("--patterns", required=True)
    st.add_argument("--layer", required=True)
    mode = st.add_mutually_exclusive_group(required=True)
    mode.add_argument("--per-image", action="store_true")
    mode.add_argument("--per-neuron", action="store_true")
    mode.add_argument("--neuron", type=int)
    st.add_argument("--class", dest="class_id", type=int)
    st.add_argument("--manifest")
    st.add_argument("--bins", type=int, default=50)
    st.add_argument("--out")
    st.set_defaults(func=_cmd_stats)

    rd = sub.add_parser("rdm", help="dissimilarity matrices and their geometry")
    rsub = rd.add_subparsers(dest="rdm_command", required=True)

    rb = rsub.add_parser("build")
    rb.add_argument("--patterns", required=True)
    rb.add_argument("--layer", required=True)
    rb.add_argument("--out", required=True)
    rb.add_argument("--subset")
    rb.set_defaults(func=_cmd_rdm_build)

    rr = rsub.add_parser("rank")
    rr.add_argument("--in", dest="input", required=True)
    rr.add_argument("--out", required=True)
    rr.set_defaults(func=_cmd_rdm_rank)

    rc = rsub.add_parser("corr")
    rc.add_argument("--a", required=True)
    rc.add_argument("--b", required=True)
    rc.add_argument("--method", default="pearson", choices=["pearson", "spearman"])
    rc.set_defaults(func=_cmd_rdm_corr)

    rm = rsub.add_parser("mds")
    rm.add_argument("rdms", nargs="+")
    rm.add_argument("--out", required=True)
    rm.add_argument("--dim", type=int, default=2)
    rm.add_argument("--method", default="pearson", choices=["pearson", "spearman"])
    rm.set_defaults(func=_cmd_rdm_mds)

    su = sub.add_parser("subsets", help="accuracy-sorted subset manifests")
    su.add_argument("--manifest", required=True)
    su.add_argument("--confidences", required=True)
    su.add_argument("--out", required=True)
    su.add_argument("--groups", type=int, default=12)
    su.add_argument("--per-group", type=int, default=12)
    su.add_argument("--allow-short", action="store_true")
    su.set_defaults(func=_cmd_subsets)

    th = sub.add_parser("train-heads", help="fit per-layer GAP classifier heads")
    th.add_argument("--traces", required=True)
    th.add_argument("--manifest", required=True)
    th.add_argument("--out", required=True)
    th.add_argument("--layer", action="append")
    th.add_argument("--lr", type=float, default=0.1)
    th.add_argument("--l2", type=float, default=1e-4)
    th.add_argument("--max-iters", type=int, default=5000)
    th.add_argument("--grad-tol", type=float, default=1e-6)
    th.set_defaults(func=_cmd_train_heads)

    cm = sub.add_parser("cam", help="per-layer predictions and class activation maps")
    cm.add_argument("--traces", required=True)
    cm.add_argument("--manifest", required=True)
    cm.add_argument("--heads", required=True)
    cm.add_argument("--image")
    cm.add_argument("--layer")
    cm.add_argument("--class", dest="class_id", type=int)
    cm.add_argument("--topk", type=int, default=5)
    cm.add_argument("--overlay")
    cm.add_argument("--alpha", type=float, default=0.5)
    cm.add_argument("--table-out")
    cm.add_argument("--confidences-out")
    cm.set_defaults(func=_cmd_cam)

    re = sub.add_parser("render", help="heatmaps and overlays as P6 PPM")
    resub = re.add_subparsers(dest="render_command", required=True)

    rh = resub.add_parser("heatmap")
    rh.add_argument("--in", dest="input", required=True)
    rh.add_argument("--out", required=True)
    rh.add_argument("--zoom", type=int, default=1)
    rh.set_defaults(func=_cmd_render_heatmap)

    ro = resub.add_parser("overlay")
    ro.add_argument("--image", required=True)
    ro.add_argument("--cam", required=True)
    ro.add_argument("--out", required=True)
    ro.add_argument("--alpha", type=float, default=0.5)
    ro.set_defaults(func=_cmd_render_overlay)

    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except RepscopeError as exc:
        print(f"repscope: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
