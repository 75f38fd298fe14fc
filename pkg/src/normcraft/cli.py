"""``normcraft`` command line: generate, relabel, estimate, train, evaluate, report.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

import argparse
import csv
import hashlib
import logging
import shlex
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import DENSITY_MODES, SHAPES, BenchSpec, gen_shape
from .errors import NormcraftError, NumericalError, StructuralError
from .metrics import cnd_relabel, evaluate
from .parallel import default_jobs
from .pointcloud import load_cloud, load_normals, load_pidx, save_cloud, save_normals, sibling

log = logging.getLogger("normcraft")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def fmt(v):
    """9 significant digits, ``.`` decimal separator."""
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.9g}"


def _provenance(argv, config_hash=None):
    lines = [f"# normcraft {__version__}", f"# flags: {shlex.join(argv)}"]
    lines.append(f"# config_sha256: {config_hash or 'none'}")
    return lines


def _write_csv(path, comments, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for c in comments:
            fh.write(c + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_csv(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    if not rows:
        raise StructuralError(f"{path}: empty CSV")
    return rows[0], rows[1:]


# ------------------------------------------------------------------ commands


def cmd_gen_bench(args, argv):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, shape in enumerate(args.shapes):
        spec = BenchSpec(shape, args.n_points, args.sigma, args.density, args.seed + i)
        clean, noisy = gen_shape(spec)
        save_cloud(clean, out / f"{clean.name}.xyz")
        save_cloud(noisy, out / f"{noisy.name}.xyz")
        log.info("wrote %s and %s", clean.name, noisy.name)
    return EXIT_OK


def cmd_relabel(args, argv):
    noisy, clean = load_cloud(args.noisy), load_cloud(args.clean)
    if clean.normals is None:
        raise StructuralError(f"{args.clean}: needs a sibling .normals file")
    out = Path(args.out) if args.out else sibling(args.noisy, ".cnd.normals")
    save_normals(out, cnd_relabel(noisy, clean))
    return EXIT_OK


def cmd_estimate(args, argv):
    cloud = load_cloud(args.input)
    queries = load_pidx(args.pidx) if args.pidx else None
    if args.method in ("pca", "jet"):
        from .classical import estimate_normals

        normals = estimate_normals(cloud, args.method, k=args.k, order=args.order, weighted=args.weighted,
                                   queries=queries, jobs=args.jobs)
    else:
        if not args.ckpt:
            raise UsageError("estimate --method cmgnet needs --ckpt")
        from .cmgnet import load_checkpoint, predict_normals

        normals = predict_normals(cloud, load_checkpoint(args.ckpt), queries=queries, jobs=args.jobs)
    if not np.all(np.isfinite(normals)):
        raise NumericalError("estimator produced non-finite normals")
    save_normals(args.out, normals)
    return EXIT_OK


def _training_pairs(data_dir):
    pairs = []
    for noisy_path in sorted(Path(data_dir).glob("*_noisy.xyz")):
        clean_path = noisy_path.with_name(noisy_path.name.replace("_noisy.xyz", "_clean.xyz"))
        if not clean_path.exists():
            raise FileNotFoundError(clean_path)
        pairs.append((load_cloud(noisy_path), load_cloud(clean_path)))
    if not pairs:
        raise StructuralError(f"{data_dir}: no *_noisy.xyz / *_clean.xyz pairs")
    return pairs


def cmd_train(args, argv):
    from .cmgnet import RunConfig, dump_config, load_config, sample_training_set, save_checkpoint, train_toy

    run = load_config(args.config) if args.config else RunConfig()
    run.net.seed = args.seed
    run.train.seed = args.seed
    if args.epochs is not None:
        run.train.epochs = args.epochs
    text = dump_config(run)
    pairs = _training_pairs(args.data)
    data = sample_training_set(pairs, run.net, run.train.n_patches, run.train.labels, seed=args.seed)
    state, trace = train_toy(data, run.net, run.train)
    save_checkpoint(args.out, state, text)
    if args.trace:
        rows = [[e + 1, fmt(loss)] + [fmt(c) for c in comp]
                for e, (loss, comp) in enumerate(zip(trace.epochs, trace.components))]
        _write_csv(args.trace, _provenance(argv, _sha(text)), ["epoch", "loss", "l1", "l2", "l3", "l4"], rows)
    return EXIT_OK


def _sha(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def cmd_eval(args, argv):
    noisy = load_cloud(args.noisy)
    clean = load_cloud(args.clean) if args.clean else None
    pred = load_normals(args.pred)
    if args.pidx:
        from .pointcloud import PointCloud

        q = load_pidx(args.pidx)
        noisy = PointCloud(noisy.points[q], None if noisy.normals is None else noisy.normals[q], noisy.name)
    annotated = load_normals(args.annotated) if args.annotated else None
    if annotated is not None and args.pidx and len(annotated) != len(noisy):
        annotated = annotated[load_pidx(args.pidx)]
    rep = evaluate(pred, noisy, clean, annotated, msae_k=args.msae_k, oriented=args.oriented)
    config_hash = _sha(Path(args.config).read_text(encoding="utf-8")) if args.config else None
    method = args.method or Path(args.pred).name.split(".")[0]
    scenario = args.scenario or Path(args.noisy).stem
    rows = [["method", method], ["scenario", scenario], ["count", fmt(rep.count)],
            ["rmse", fmt(rep.rmse)], ["cnd", fmt(rep.cnd)], ["msae", fmt(rep.msae)], ["auc", fmt(rep.auc)]]
    rows += [[f"pgp@{fmt(t)}", fmt(f)] for t, f in rep.pgp]
    _write_csv(args.out, _provenance(argv, config_hash), ["metric", "value"], rows)
    if args.svg:
        Path(args.svg).write_text(pgp_svg(rep.pgp, f"{method} / {scenario}"), encoding="utf-8")
    return EXIT_OK


def pgp_svg(pgp, title="", width=480, height=320):
    """Minimal standalone SVG line plot of a PGP curve."""
    m = 40
    ts = np.array([t for t, _ in pgp])
    fs = np.array([f for _, f in pgp])
    xs = m + (ts - ts[0]) / max(ts[-1] - ts[0], 1e-12) * (width - 2 * m)
    ys = height - m - fs * (height - 2 * m)
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
    return "\n".join([
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect x="{m}" y="{m}" width="{width - 2 * m}" height="{height - 2 * m}" fill="none" stroke="#888"/>',
        f'<polyline points="{pts}" fill="none" stroke="#1f5fbf" stroke-width="2"/>',
        f'<text x="{m}" y="{m - 12}" font-family="sans-serif" font-size="13">{_xml(title)}</text>',
        f'<text x="{m}" y="{height - 12}" font-family="sans-serif" font-size="11">'
        f"angle threshold {fmt(ts[0])}..{fmt(ts[-1])} deg</text>",
        "</svg>",
        "",
    ])


def _xml(s):
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def cmd_report(args, argv):
    table, scenarios = {}, []
    for path in args.inputs:
        header, rows = _read_csv(path)
        if header != ["metric", "value"]:
            raise StructuralError(f"{path}: not an eval report")
        vals = dict((r[0], r[1]) for r in rows if len(r) == 2)
        for key in ("method", "scenario", args.metric):
            if key not in vals:
                raise StructuralError(f"{path}: missing {key!r}")
        if vals[args.metric] == "":
            raise StructuralError(f"{path}: metric {args.metric!r} was not computed")
        method, scen = vals["method"], vals["scenario"]
        if scen not in scenarios:
            scenarios.append(scen)
        table.setdefault(method, {})[scen] = float(vals[args.metric])
    rows = []
    for method, cells in table.items():
        vals = [cells.get(s) for s in scenarios]
        present = [v for v in vals if v is not None]
        rows.append([method] + [fmt(v) for v in vals] + [fmt(float(np.mean(present)))])
    _write_csv(args.out, _provenance(argv) + [f"# metric: {args.metric}"], ["method"] + scenarios + ["Ave."], rows)
    return EXIT_OK


# ------------------------------------------------------------------- parsing


def build_parser():
    p = _Parser(prog="normcraft", description="Point-cloud normal estimation toolkit.")
    p.add_argument("--version", action="version", version=f"normcraft {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-bench", help="write synthetic clean/noisy cloud pairs")
    g.add_argument("--out", required=True)
    g.add_argument("--shapes", type=lambda s: s.split(","), default=["plane", "sphere"],
                   help=f"comma list from {','.join(SHAPES)}")
    g.add_argument("--n-points", type=int, default=5000)
    g.add_argument("--sigma", type=float, default=0.006, help="noise std as a fraction of the bbox diagonal")
    g.add_argument("--density", choices=DENSITY_MODES, default="uniform")
    g.add_argument("--seed", type=int, required=True)
    g.set_defaults(fn=cmd_gen_bench)

    r = sub.add_parser("relabel-cnd", help="nearest-clean-point normals for a noisy cloud")
    r.add_argument("--noisy", required=True)
    r.add_argument("--clean", required=True)
    r.add_argument("--out")
    r.set_defaults(fn=cmd_relabel)

    e = sub.add_parser("estimate", help="estimate normals")
    e.add_argument("--method", choices=("pca", "jet", "cmgnet"), required=True)
    e.add_argument("--in", dest="input", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--ckpt")
    e.add_argument("--pidx")
    e.add_argument("-k", type=int, default=256, help="neighborhood size for pca/jet")
    e.add_argument("--order", type=int, default=3)
    e.add_argument("--weighted", action="store_true")
    e.add_argument("--jobs", type=int, default=None)
    e.set_defaults(fn=cmd_estimate)

    t = sub.add_parser("train-toy", help="train a desk-scale network")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--trace")
    t.add_argument("--epochs", type=int, default=None, help="override [train] epochs")
    t.add_argument("--seed", type=int, required=True)
    t.set_defaults(fn=cmd_train)

    v = sub.add_parser("eval", help="score predicted normals")
    v.add_argument("--pred", required=True)
    v.add_argument("--noisy", required=True)
    v.add_argument("--clean")
    v.add_argument("--annotated")
    v.add_argument("--pidx")
    v.add_argument("--out", required=True)
    v.add_argument("--svg")
    v.add_argument("--config", help="config file whose hash is recorded")
    v.add_argument("--method", help="row label for report (default: prediction file stem)")
    v.add_argument("--scenario", help="column label for report (default: noisy file stem)")
    v.add_argument("--msae-k", type=int, default=4)
    v.add_argument("--oriented", action="store_true")
    v.set_defaults(fn=cmd_eval)

    m = sub.add_parser("report", help="merge eval CSVs into a methods x scenarios table")
    m.add_argument("inputs", nargs="+")
    m.add_argument("--metric", default="cnd")
    m.add_argument("--out", required=True)
    m.set_defaults(fn=cmd_report)
    return p


def run(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "jobs", None) is None and hasattr(args, "jobs"):
        args.jobs = default_jobs()
    try:
        return args.fn(args, argv)
    except UsageError as exc:
        print(f"normcraft: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ArithmeticError, NumericalError) as exc:
        print(f"normcraft: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (NormcraftError, OSError, ValueError) as exc:
        print(f"normcraft: {exc}", file=sys.stderr)
        return EXIT_DATA


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
