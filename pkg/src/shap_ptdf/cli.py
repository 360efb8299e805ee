"""Command line driver for the dataset -> model -> SHAP -> PTDF pipeline.

Every artefact lands in ``--out-dir`` (default ``$SHAP_PTDF_OUT_DIR`` or
``./shap_ptdf_run``)::

    case.txt, dataset.csv, train.csv, test.csv
    models/{gbt,linear}_<line>.model
    explanations_<kind>_<line>_<split>.csv, waterfall_<kind>_<line>_row<r>.csv
    beeswarm_<kind>_<line>.csv, importance_<kind>_<line>.csv
    ptdf_true.{csv,txt}, ptdf_recovered_<kind>.csv, compare_<kind>.{txt,csv}
    manifest.json

Options may also come from a ``key=value`` file given with ``--config``;
command-line flags take precedence.  Exit codes: 0 success, 1 usage error,
2 data or validation error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .exceptions import DataError, NumericalError, ShapPtdfError
from .gbtree import TrainConfig, fit_gbt, fit_linear, load_model, save_model
from .grid import builtin_case9, load_case, serialize_case
from .powerflow import analytical_ptdf
from .recovery import compare_ptdf, format_ptdf, ptdf_from_csv, ptdf_to_csv, recover_all
from .scenarios import atomic_write_text, read_csv, sample_scenarios, split, write_csv
from .shapley import BackgroundSet, explain_dataset, feature_importance, format_explanations

log = logging.getLogger("shap_ptdf")

OUT_DIR_ENV = "SHAP_PTDF_OUT_DIR"
REFERENCE_POINT = (15.0, 267.8)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# --- option plumbing ----------------------------------------------------------------

_CONFIG_TYPES = {
    "case": str, "seed": int, "n": int, "low": float, "high": float, "split": float,
    "line": str, "row": int, "bg_size": int, "out_dir": str, "model_kind": str,
    "n_trees": int, "max_depth": int, "learning_rate": float, "min_samples_leaf": int,
}


def read_config(path) -> dict:
    """Parse a ``key=value`` file (``#`` comments, blank lines ignored)."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip().replace("-", "_")
            if not sep or key not in _CONFIG_TYPES:
                raise UsageError(f"{path}:{lineno}: unknown or malformed setting {line!r}")
            try:
                out[key] = _CONFIG_TYPES[key](value.strip())
            except ValueError:
                raise UsageError(f"{path}:{lineno}: bad value for {key}") from None
    return out


def _common(p):
    p.add_argument("--config", help="key=value settings file; flags override it")
    p.add_argument("--case", help="case file (default: built-in 9-bus case)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=1001, help="number of scenarios")
    p.add_argument("--low", type=float, default=0.0, help="lower injection bound, MW")
    p.add_argument("--high", type=float, default=500.0, help="upper injection bound, MW")
    p.add_argument("--split", type=float, default=0.75, help="training fraction")
    p.add_argument("--line", help="branch label, e.g. 4-5")
    p.add_argument("--row", type=int, help="row index in the explained split")
    p.add_argument("--bg-size", type=int, help="background rows (default: whole training split)")
    p.add_argument("--out-dir", default=os.environ.get(OUT_DIR_ENV, "shap_ptdf_run"))
    p.add_argument("--model-kind", choices=("gbt", "linear"), default="gbt")
    cfg = TrainConfig()
    p.add_argument("--n-trees", type=int, default=cfg.n_trees)
    p.add_argument("--max-depth", type=int, default=cfg.max_depth)
    p.add_argument("--learning-rate", type=float, default=cfg.learning_rate)
    p.add_argument("--min-samples-leaf", type=int, default=cfg.min_samples_leaf)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="shap-ptdf", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in [
        ("generate", "sample scenarios and write dataset.csv"),
        ("train", "split the dataset and fit per-line models"),
        ("explain", "local SHAP explanation (--row/--near) or per-row CSV (--all)"),
        ("global", "beeswarm data and mean |SHAP| importance for one line"),
        ("ptdf", "analytical PTDF table"),
        ("recover", "PTDF recovered from SHAP values of trained models"),
        ("compare", "true vs recovered PTDF report"),
        ("reproduce", "run the whole pipeline"),
    ]:
        p = sub.add_parser(name, help=help_)
        _common(p)
        if name == "explain":
            p.add_argument("--all", action="store_true", help="explain every row")
            p.add_argument("--near", help="explain the row closest to PG2,PG3")
            p.add_argument("--on", choices=("train", "test"), default="test")
        if name == "global":
            p.add_argument("--svg", action="store_true", help="also write an SVG beeswarm")
    return parser


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        # flags given explicitly must beat the file, so re-parse over file defaults
        sub.set_defaults(**read_config(args.config))
        args = parser.parse_args(argv)
    return args


# --- run context --------------------------------------------------------------------

class Run:
    def __init__(self, args):
        self.args = args
        if not args.low < args.high:
            raise UsageError(f"--low ({args.low}) must be below --high ({args.high})")
        if not 0 < args.split < 1:
            raise UsageError("--split must lie strictly between 0 and 1")
        if args.n < 1:
            raise UsageError("--n must be >= 1")
        self.cfg = TrainConfig(args.n_trees, args.max_depth, args.learning_rate,
                               args.min_samples_leaf)
        self.net = load_case(args.case) if args.case else builtin_case9()
        self.out = Path(args.out_dir)
        (self.out / "models").mkdir(parents=True, exist_ok=True)

    def path(self, *parts) -> Path:
        return self.out.joinpath(*parts)

    def lines(self):
        labels = self.net.branch_labels
        if self.args.line is None:
            return labels
        if self.args.line not in labels:
            raise UsageError(f"unknown line {self.args.line!r}; choose from {', '.join(labels)}")
        return [self.args.line]

    def one_line(self, default="4-5"):
        line = self.args.line or default
        if line not in self.net.branch_labels:
            raise UsageError(f"unknown line {line!r}")
        return line

    def dataset(self, name):
        p = self.path(f"{name}.csv")
        if not p.exists():
            hint = "generate" if name == "dataset" else "train"
            raise FileNotFoundError(f"{p} not found; run `shap-ptdf {hint}` first")
        return read_csv(p, self.net.feature_names,
                        [f"F{lbl}" for lbl in self.net.branch_labels], seed=self.args.seed)

    def model(self, kind, line):
        p = self.path("models", f"{kind}_{line}.model")
        if not p.exists():
            raise FileNotFoundError(f"{p} not found; run `shap-ptdf train` first")
        return load_model(p)

    def background(self, train):
        return BackgroundSet.from_dataset(train, self.args.bg_size, self.args.seed)

    def manifest(self, command, outputs):
        p = self.path("manifest.json")
        data = json.loads(p.read_text()) if p.exists() else {}
        a = self.args
        data.update({
            "tool_version": __version__,
            "case": a.case or "builtin:case9",
            "seed": a.seed, "n": a.n, "low": a.low, "high": a.high, "split": a.split,
            "train_config": asdict(self.cfg),
            "bg_size": a.bg_size,
            "out_dir": str(self.out),
        })
        data.setdefault("commands", {})[command] = {
            "outputs": sorted(str(o) for o in outputs),
            "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        }
        atomic_write_text(p, json.dumps(data, indent=2, sort_keys=True) + "\n")


# --- commands -----------------------------------------------------------------------

def cmd_generate(run: Run):
    a = run.args
    ds = sample_scenarios(run.net, a.n, a.low, a.high, a.seed)
    atomic_write_text(run.path("case.txt"), serialize_case(run.net))
    write_csv(ds, run.path("dataset.csv"))
    print(f"wrote {len(ds)} scenarios to {run.path('dataset.csv')}")
    return [run.path("case.txt"), run.path("dataset.csv")]


def cmd_train(run: Run):
    ds = run.dataset("dataset")
    train, test = split(ds, run.args.split, run.args.seed)
    write_csv(train, run.path("train.csv"))
    write_csv(test, run.path("test.csv"))
    outputs = [run.path("train.csv"), run.path("test.csv")]
    for line in run.lines():
        target = f"F{line}"
        t0 = time.perf_counter()
        gbt = fit_gbt(train, target, run.cfg)
        lin = fit_linear(train, target)
        for kind, model in (("gbt", gbt), ("linear", lin)):
            p = run.path("models", f"{kind}_{line}.model")
            save_model(model, p)
            outputs.append(p)
        y = test.target(target)
        rmse = float(np.sqrt(np.mean((gbt.predict(test.X) - y) ** 2)))
        print(f"line {line:>4}: gbt test RMSE {rmse:8.4f} MW  "
              f"linear w = {np.array2string(lin.coef_, precision=4)}  "
              f"({time.perf_counter() - t0:.1f} s)")
    return outputs


def _waterfall_csv(e):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["item", "feature_value", "phi", "start", "end"])
    w.writerow(["E[f(x)]", "", "", "", repr(float(e.base_value))])
    pos = e.base_value
    # draw the smallest bar first so the largest sits on top, as in a waterfall plot
    for name, value, phi in reversed(e.waterfall()):
        w.writerow([name, repr(value), repr(phi), repr(float(pos)), repr(float(pos + phi))])
        pos += phi
    w.writerow(["f(x)", "", "", "", repr(float(e.fx))])
    return buf.getvalue()


def cmd_explain(run: Run):
    a = run.args
    line = run.one_line()
    kind = a.model_kind
    model = run.model(kind, line)
    train = run.dataset("train")
    ds = train if a.on == "train" else run.dataset(a.on)
    bg = run.background(train)
    if a.all:
        es = explain_dataset(model, ds, bg, model_id=f"{kind}_{line}", background_id="train")
        out = run.path(f"explanations_{kind}_{line}_{a.on}.csv")
        atomic_write_text(out, format_explanations(es, rows=ds.index))
        worst = max(e.local_accuracy_error for e in es)
        print(f"explained {len(es)} rows; max local-accuracy error {worst:.2e} MW -> {out}")
        return [out]
    if a.near is not None:
        try:
            point = np.array([float(v) for v in a.near.split(",")])
        except ValueError:
            raise UsageError("--near expects comma-separated numbers") from None
        if point.size != ds.X.shape[1]:
            raise UsageError(f"--near expects {ds.X.shape[1]} values")
        row = int(np.argmin(((ds.X - point) ** 2).sum(axis=1)))
    elif a.row is not None:
        row = a.row
    else:
        raise UsageError("explain needs --row, --near or --all")
    if not 0 <= row < len(ds):
        raise UsageError(f"--row {row} out of range for {len(ds)} {a.on} rows")
    e = explain_dataset(model, ds.take([row]), bg)[0]
    out = run.path(f"waterfall_{kind}_{line}_row{row}.csv")
    atomic_write_text(out, _waterfall_csv(e))
    print(f"line {line} ({kind}), {a.on} row {row}")
    print(f"  E[f(x)] = {e.base_value:9.2f} MW")
    for name, value, phi in e.waterfall():
        print(f"  {name}={value:7.1f}  phi = {phi:+9.2f} MW")
    print(f"  f(x)    = {e.fx:9.2f} MW")
    return [out]


def cmd_global(run: Run):
    line = run.one_line()
    kind = run.args.model_kind
    model = run.model(kind, line)
    train = run.dataset("train")
    es = explain_dataset(model, train, run.background(train))
    X, phis = es.feature_values, es.phis
    span = X.max(axis=0) - X.min(axis=0)
    norm = (X - X.min(axis=0)) / np.where(span > 0, span, 1.0)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row", "feature", "feature_value", "normalized_value", "phi"])
    ranking = feature_importance(es)
    order = [es.feature_names.index(name) for name, _ in ranking]
    for j in order:
        for r in range(len(es)):
            w.writerow([int(train.index[r]), es.feature_names[j], repr(float(X[r, j])),
                        repr(float(norm[r, j])), repr(float(phis[r, j]))])
    bees = run.path(f"beeswarm_{kind}_{line}.csv")
    atomic_write_text(bees, buf.getvalue())
    imp = run.path(f"importance_{kind}_{line}.csv")
    atomic_write_text(imp, "rank,feature,mean_abs_phi\n" + "".join(
        f"{k + 1},{name},{value!r}\n" for k, (name, value) in enumerate(ranking)))
    print(f"global importance for line {line} ({kind}, mean |phi| over {len(es)} rows):")
    for name, value in ranking:
        print(f"  {name}: {value:8.3f} MW")
    outputs = [bees, imp]
    if run.args.svg:
        outputs.append(_beeswarm_svg(run.path(f"beeswarm_{kind}_{line}.svg"), es, norm, order,
                                     line))
    return outputs


def _beeswarm_svg(path, es, norm, order, line):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rng = np.random.default_rng(0)
    fig, ax = plt.subplots(figsize=(6, 1.2 + 0.8 * len(order)))
    for pos, j in enumerate(reversed(order)):
        jitter = rng.uniform(-0.25, 0.25, len(es))
        sc = ax.scatter(es.phis[:, j], pos + jitter, c=norm[:, j], cmap="coolwarm", s=6,
                        vmin=0, vmax=1)
    ax.set_yticks(range(len(order)))
    ax.set_yticklabels([es.feature_names[j] for j in reversed(order)])
    ax.axvline(0, color="grey", lw=0.5)
    ax.set_xlabel(f"SHAP value for F{line} (MW)")
    fig.colorbar(sc, ax=ax, label="feature value (normalised)")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def cmd_ptdf(run: Run):
    d = analytical_ptdf(run.net)
    text = format_ptdf(d, "True physical PTDF, D")
    atomic_write_text(run.path("ptdf_true.csv"), ptdf_to_csv(d))
    atomic_write_text(run.path("ptdf_true.txt"), text)
    print(text, end="")
    return [run.path("ptdf_true.csv"), run.path("ptdf_true.txt")]


def cmd_recover(run: Run, kinds=None):
    train = run.dataset("train")
    bg = run.background(train)
    outputs = []
    for kind in kinds or [run.args.model_kind]:
        explanations = {}
        for line in run.net.branch_labels:
            model = run.model(kind, line)
            explanations[line] = explain_dataset(model, train, bg)
        d_hat = recover_all(run.net, explanations, train)
        out = run.path(f"ptdf_recovered_{kind}.csv")
        atomic_write_text(out, ptdf_to_csv(d_hat))
        print(format_ptdf(d_hat, f"SHAP-based PTDF, D_hat ({kind})"), end="")
        outputs.append(out)
    return outputs


def cmd_compare(run: Run, kinds=None):
    true_path = run.path("ptdf_true.csv")
    d = ptdf_from_csv(true_path.read_text()) if true_path.exists() else analytical_ptdf(run.net)
    outputs = []
    for kind in kinds or [run.args.model_kind]:
        rec = run.path(f"ptdf_recovered_{kind}.csv")
        if not rec.exists():
            raise FileNotFoundError(f"{rec} not found; run `shap-ptdf recover` first")
        report = compare_ptdf(d, ptdf_from_csv(rec.read_text()))
        txt, csv_path = run.path(f"compare_{kind}.txt"), run.path(f"compare_{kind}.csv")
        atomic_write_text(txt, report.to_text())
        atomic_write_text(csv_path, report.to_csv())
        print(f"[{kind}]")
        print(report.to_text(), end="")
        outputs += [txt, csv_path]
    return outputs


def cmd_reproduce(run: Run):
    outputs = []
    outputs += cmd_generate(run)
    outputs += cmd_train(run)
    outputs += cmd_ptdf(run)
    outputs += cmd_recover(run, kinds=["linear", "gbt"])
    outputs += cmd_compare(run, kinds=["linear", "gbt"])
    a = run.args
    a.line = a.line or "4-5"
    a.all, a.on, a.near, a.svg = False, "test", ",".join(map(str, REFERENCE_POINT)), False
    outputs += cmd_explain(run)
    outputs += cmd_global(run)
    return outputs


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "explain": cmd_explain,
    "global": cmd_global,
    "ptdf": cmd_ptdf,
    "recover": cmd_recover,
    "compare": cmd_compare,
    "reproduce": cmd_reproduce,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except (UsageError, OSError) as exc:
        print(f"shap-ptdf: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run = Run(args)
        outputs = COMMANDS[args.command](run)
        run.manifest(args.command, outputs)
    except UsageError as exc:
        print(f"shap-ptdf: error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"shap-ptdf: numeric error: {exc}", file=sys.stderr)
        return 3
    except (DataError, ShapPtdfError, OSError, KeyError) as exc:
        print(f"shap-ptdf: data error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
