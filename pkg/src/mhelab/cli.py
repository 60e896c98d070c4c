"""``mhelab`` command-line interface."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from . import accounting as acc
from . import metrics as met
from .attention import ALL_VARIANTS, AttentionVariant
from .errors import ContractError, MHELabError

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE, EXIT_ERROR = 0, 1, 2, 3

log = logging.getLogger("mhelab")


# ---- output ----------------------------------------------------------------

class Output:
    """Collects rows and renders them as an aligned table, CSV or JSON lines."""

    def __init__(self, fmt: str, columns: list[str], display: dict | None = None):
        self.fmt = fmt
        self.columns = columns
        self.display = display or {}
        self.rows: list[dict] = []
        self.notes: list[str] = []

    def add(self, **row) -> None:
        self.rows.append(row)

    def render(self) -> str:
        if self.fmt == "csv":
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(self.columns)
            for r in self.rows:
                w.writerow([_csv_cell(r[c]) for c in self.columns])
            return buf.getvalue()
        if self.fmt == "json-lines":
            return "".join(json.dumps({c: r[c] for c in self.columns}) + "\n" for r in self.rows)
        cells = [[self.display.get(c, _table_cell)(r[c]) for c in self.columns] for r in self.rows]
        widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(self.columns)]
        lines = ["  ".join(c.ljust(w) for c, w in zip(self.columns, widths)).rstrip()]
        lines.append("  ".join("-" * w for w in widths))
        for row in cells:
            lines.append("  ".join(v.rjust(w) if _numeric(v) else v.ljust(w)
                                   for v, w in zip(row, widths)).rstrip())
        lines.extend(self.notes)
        return "\n".join(lines) + "\n"


def _numeric(text: str) -> bool:
    return bool(text) and (text[0].isdigit() or text[0] == "-" and text[1:2].isdigit())


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _table_cell(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, bool):
        return "ok" if v else "FAIL"
    if isinstance(v, int):
        return acc.format_count(v)
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def _fixed(decimals: int):
    return lambda v: "-" if v is None else f"{v:.{decimals}f}"


def _emit(args, text: str) -> None:
    if args.out and args.command != "train":
        Path(args.out).write_text(text, encoding="utf-8", newline="\n")
    else:
        sys.stdout.write(text)


def _variants(names) -> list[AttentionVariant]:
    if isinstance(names, str):
        names = [n for n in names.split(",") if n]
    out = []
    for n in names:
        if n.lower() == "all":
            out.extend(ALL_VARIANTS)
        else:
            out.append(AttentionVariant.parse(n))
    return out


# ---- subcommands -----------------------------------------------------------

def cmd_params(args) -> int:
    conventions = [args.convention] if args.convention else list(acc.CONVENTIONS)
    out = Output(args.format or "table",
                 ["variant", "convention", "layers", "heads", "head_dim", "params", "extra_over_sha"])
    for v in _variants(args.variants):
        for conv in conventions:
            total = acc.model_params(v, args.layers, args.heads, args.head_dim, conv, args.arch)
            extra = acc.attention_sublayers(args.layers, args.arch) * acc.extra_over_sha(
                v, args.heads, args.head_dim)
            out.add(variant=v.cli_name, convention=conv, layers=args.layers, heads=args.heads,
                    head_dim=args.head_dim, params=total, extra_over_sha=extra)
    _emit(args, out.render())
    return EXIT_OK


def cmd_memory(args) -> int:
    out = Output(args.format or "table", list(acc.SWEEP_HEADER),
                 {"saving_pct": lambda v: v})
    for v in _variants(args.variants):
        if args.params is not None:
            mem = acc.memory_usage(args.params, args.batch, args.seq, args.dm)
            ref = acc.budget_report("mha", args.layers, args.heads, args.head_dim, args.batch, args.seq, args.dm)
            row = [v.cli_name, args.layers, args.heads, args.head_dim, args.params, args.params,
                   mem.weights, mem.gradients, mem.adam_states, mem.activations, mem.total,
                   f"{acc.saving_ratio(mem.total, ref.bytes.total):.2f}"]
        else:
            row = acc.budget_report(v, args.layers, args.heads, args.head_dim,
                                    args.batch, args.seq, args.dm).csv_row()
        out.add(**dict(zip(acc.SWEEP_HEADER, row)))
    _emit(args, out.render())
    return EXIT_OK


def _parse_range(text: str) -> list[int]:
    parts = text.split(":")
    if len(parts) not in (2, 3):
        raise ContractError(f"range must be a:b or a:b:step, got {text!r}")
    a, b = int(parts[0]), int(parts[1])
    step = int(parts[2]) if len(parts) == 3 else 1
    if step < 1:
        raise ContractError("range step must be >= 1")
    return list(range(a, b + 1, step))


def _parse_grid(text: str) -> list[tuple[int, int]]:
    """``12,24,48x32,64`` -> every (layers, heads) pair."""
    try:
        layers, heads = text.lower().split("x")
        return [(int(l), int(h)) for l in layers.split(",") if l for h in heads.split(",") if h]
    except ValueError:
        raise ContractError(f"grid must look like 12,24x32,64, got {text!r}") from None


def cmd_sweep(args) -> int:
    if args.grid:
        grid = _parse_grid(args.grid)
    else:
        grid = [(args.layers, n) for n in _parse_range(args.heads_range)]
    rows = acc.scale_sweep(_variants(args.variants), grid, args.head_dim) if grid else []
    fmt = args.format or "csv"
    out = Output(fmt, list(acc.SWEEP_HEADER), {"saving_pct": lambda v: v})
    for r in rows:
        rep = acc.budget_report(r.variant, r.layers, r.heads, r.head_dim, args.batch, args.seq)
        out.add(**dict(zip(acc.SWEEP_HEADER, rep.csv_row())))
    _emit(args, out.render())
    return EXIT_OK


def cmd_train(args) -> int:
    from .checkpoint import save_checkpoint
    from .model import ModelConfig, build_model
    from .train import BYTE_VOCAB, CopyTask, TokenStream, TrainConfig, encode_bytes, train

    if args.task == "copy":
        if args.seq_len % 2:
            raise ContractError("copy task needs an even --seq-len")
        vocab = args.vocab
        data = CopyTask(vocab, args.seq_len // 2, seed=args.seed)
        max_len = args.seq_len
    elif args.task.startswith("bytes:"):
        vocab = BYTE_VOCAB
        tokens = encode_bytes(Path(args.task[len("bytes:"):]).read_bytes())
        data = TokenStream(tokens, args.seq_len + (1 if args.objective == "clm" else 0))
        max_len = args.seq_len + 1
    else:
        raise ContractError(f"--task must be 'copy' or 'bytes:<file>', got {args.task!r}")
    cfg = ModelConfig(arch=args.arch, n_layers=args.layers, n_heads=args.heads, head_dim=args.head_dim,
                      ffn_dim=args.ffn_dim, vocab_size=vocab, max_seq_len=max_len,
                      variant=args.variant, dropout=args.dropout, seed=args.seed,
                      precision=args.precision)
    tcfg = TrainConfig(steps=args.steps, batch_size=args.batch_size, lr=args.lr,
                       weight_decay=args.weight_decay, adam_beta1=args.beta1, adam_beta2=args.beta2,
                       adam_eps=args.eps, warmup_steps=args.warmup, schedule=args.schedule,
                       objective=args.objective, seed=args.seed)
    if args.objective == "clm" and not cfg.causal:
        raise ContractError("clm objective needs --arch decoder_only")
    model = build_model(cfg)
    report = train(model, data, tcfg, log_every=args.log_every)
    ckpt = Path(args.out or f"mhelab-{cfg.variant.cli_name}.ckpt")
    save_checkpoint(model, ckpt)
    out = Output(args.format or "table", ["step", "loss"], {"loss": _fixed(6)})
    curve = report.loss_curve
    every = max(args.report_every, 1)
    for step, loss in curve:
        if step % every == 0 or step in (1, len(curve)):
            out.add(step=step, loss=loss)
    if args.curve:
        Path(args.curve).write_text("step,loss\n" + "".join(f"{s},{l!r}\n" for s, l in curve), encoding="utf-8")
    final = "-" if not curve else f"{report.final_loss:.6f}"
    out.notes.append(f"variant {cfg.variant.cli_name}: final loss {final}, tokens {report.tokens_seen:,}, "
                     f"{report.wall_time:.1f} s, checkpoint {ckpt}")
    sys.stdout.write(out.render())
    if out.fmt != "table":
        print(out.notes[-1], file=sys.stderr)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .evaluate import evaluate_perplexity
    from .train import encode_bytes

    model = load_checkpoint(args.checkpoint)
    if model.cfg.vocab_size < 256:
        raise ContractError(f"byte-level evaluation needs vocab >= 256, checkpoint has {model.cfg.vocab_size}")
    tokens = encode_bytes(Path(args.text).read_bytes())
    ppl = evaluate_perplexity(model, tokens, args.stride, args.window)
    out = Output(args.format or "table", ["checkpoint", "tokens", "stride", "window", "perplexity"],
                 {"perplexity": _fixed(4), "tokens": str})
    out.add(checkpoint=str(args.checkpoint), tokens=int(tokens.size), stride=args.stride,
            window=args.window or model.cfg.max_seq_len, perplexity=ppl)
    _emit(args, out.render())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from . import gradcheck as gc

    out = Output(args.format or "table", ["kind", "variant", "name", "checked", "max_abs_err", "max_rel_err", "ok"],
                 {"max_abs_err": lambda v: f"{v:.2e}", "max_rel_err": lambda v: f"{v:.2e}", "checked": str})
    if not args.skip_ops:
        for r in gc.check_ops(args.seed):
            out.add(kind="op", variant="-", name=r.name, checked=r.checked,
                    max_abs_err=r.max_abs_err, max_rel_err=r.max_rel_err, ok=r.ok)
    for v in _variants(args.variants):
        for r in gc.gradcheck_model(v, args.seed, samples=args.samples):
            out.add(kind="param", variant=v.cli_name, name=r.name, checked=r.checked,
                    max_abs_err=r.max_abs_err, max_rel_err=r.max_rel_err, ok=r.ok)
    failed = [f"{r['kind']} {r['name']}" + ("" if r["variant"] == "-" else f" ({r['variant']})")
              for r in out.rows if not r["ok"]]
    out.notes.append(f"{len(out.rows) - len(failed)}/{len(out.rows)} checks passed"
                     + (": failing " + ", ".join(failed) if failed else ""))
    _emit(args, out.render())
    if failed and out.fmt != "table":
        print("gradcheck failures: " + ", ".join(failed), file=sys.stderr)
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def cmd_metrics(args) -> int:
    rows = met.read_scores(args.scores) if args.scores else met.published_scores()
    reports = met.build_report(rows)
    cols = ["benchmark", "model", "score", "params", "prr", "published_prr", "prr_ok",
            "peop", "published_peop", "peop_ok", "rounding_consistent"]
    out = Output(args.format or "table", cols,
                 {"prr": _fixed(2), "published_prr": _fixed(1), "peop": _fixed(3),
                  "published_peop": lambda v: "-" if v is None else f"{v:g}", "score": lambda v: f"{v:.1f}" if round(v, 1) == v else f"{v:g}",
                  "rounding_consistent": lambda v: "-" if v is None else ("yes" if v else "no")})
    for r in reports:
        flags = [f for f in (r.prr_rounding_consistent, r.peop_rounding_consistent) if f is not None]
        out.add(benchmark=r.benchmark, model=r.model_name, score=r.score, params=r.params,
                prr=r.prr, published_prr=r.published_prr, prr_ok=r.prr_ok, peop=r.peop,
                published_peop=r.published_peop, peop_ok=r.peop_ok,
                rounding_consistent=all(flags) if flags else None)
    flagged = [r for r in reports if r.flagged]
    out.notes.append(f"{len(flagged)} of {len(reports)} rows deviate beyond tolerance "
                     f"(PRR +/-{met.PRR_ABS_TOL} abs, PEoP {met.PEOP_REL_TOL:.0%} rel)")
    _emit(args, out.render())
    return EXIT_CHECK_FAILED if flagged else EXIT_OK


# ---- parser ----------------------------------------------------------------

def _global_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    g.add_argument("--precision", choices=("fp32", "fp64"), default="fp32", help="float precision (default fp32)")
    g.add_argument("--out", default=None, help="write output to this path (train: checkpoint path)")
    g.add_argument("--format", choices=("table", "csv", "json-lines"), default=None,
                   help="output format (default table; csv for sweep)")
    g.add_argument("--config", default=None, help="key=value file of flag defaults; CLI flags win")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(prog="mhelab", parents=[common],
                                     description="Attention parameter accounting, efficiency metrics and "
                                                 "desk-scale training for seven attention variants.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    tags = ", ".join(v.cli_name for v in ALL_VARIANTS)

    p = sub.add_parser("params", parents=[common], help="attention parameter counts")
    p.add_argument("variants", nargs="+", help=f"variant tags or 'all' ({tags})")
    p.add_argument("--layers", type=int, default=1, help="transformer layers (default 1)")
    p.add_argument("--heads", type=int, default=12, help="attention heads n (default 12)")
    p.add_argument("--head-dim", type=int, default=64, help="head width d (default 64)")
    p.add_argument("--convention", choices=acc.CONVENTIONS, default=None,
                   help="table4 = Q/K/V only; experiment = plus output projection (default: both)")
    p.add_argument("--arch", choices=("encoder_only", "decoder_only", "encoder_decoder"), default="encoder_only",
                   help="encoder_decoder counts a cross-attention sublayer per decoder layer")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("memory", parents=[common], help="training-memory byte budget per block")
    p.add_argument("variants", nargs="*", default=["all"], help="variant tags or 'all' (default all)")
    p.add_argument("--layers", type=int, default=1, help="blocks counted (default 1)")
    p.add_argument("--heads", type=int, default=12, help="attention heads (default 12)")
    p.add_argument("--head-dim", type=int, default=64, help="head width (default 64)")
    p.add_argument("--batch", type=int, default=32, help="batch size (default 32)")
    p.add_argument("--seq", type=int, default=512, help="sequence length (default 512)")
    p.add_argument("--dm", type=int, default=768, help="model width for activations (default 768)")
    p.add_argument("--params", type=int, default=None, help="override the parameter count")
    p.set_defaults(func=cmd_memory)

    p = sub.add_parser("sweep", parents=[common], help="parameter/memory sweep as CSV")
    p.add_argument("--variants", default="all", help="comma-separated tags or 'all' (default all)")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--heads-range", default="1:128", help="inclusive head range a:b[:step] (default 1:128)")
    src.add_argument("--grid", default=None, help="layers x heads grid, e.g. 12,24,48x32,64")
    p.add_argument("--layers", type=int, default=1, help="layers used with --heads-range (default 1)")
    p.add_argument("--head-dim", type=int, default=64, help="head width (default 64)")
    p.add_argument("--batch", type=int, default=32, help="batch for activation bytes (default 32)")
    p.add_argument("--seq", type=int, default=512, help="sequence length for activation bytes (default 512)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train", parents=[common], help="train a tiny transformer")
    p.add_argument("--variant", default="mha", help=f"attention variant ({tags})")
    p.add_argument("--task", default="copy", help="'copy' or 'bytes:<file>' (default copy)")
    p.add_argument("--arch", choices=("encoder_only", "decoder_only"), default="decoder_only")
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--head-dim", type=int, default=8)
    p.add_argument("--ffn-dim", type=int, default=None, help="FFN width (default 4*d_m)")
    p.add_argument("--vocab", type=int, default=16, help="copy-task alphabet (default 16)")
    p.add_argument("--seq-len", type=int, default=32, help="sequence length (default 32)")
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--beta1", type=float, default=0.9)
    p.add_argument("--beta2", type=float, default=0.999)
    p.add_argument("--eps", type=float, default=1e-8)
    p.add_argument("--warmup", type=int, default=100, help="warmup steps (default 100)")
    p.add_argument("--schedule", choices=("linear", "constant"), default="linear")
    p.add_argument("--objective", choices=("clm", "mlm"), default="clm")
    p.add_argument("--curve", default=None, help="write the full loss curve as CSV here")
    p.add_argument("--report-every", type=int, default=100, help="printed loss-curve spacing (default 100)")
    p.add_argument("--log-every", type=int, default=0, help="log every N steps with -v (default off)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="strided byte-level perplexity")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--text", required=True, help="text file, read as bytes")
    p.add_argument("--stride", type=int, default=256)
    p.add_argument("--window", type=int, default=None, help="window length (default max_seq_len)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    p.add_argument("variants", nargs="*", default=["all"], help="variant tags or 'all' (default all)")
    p.add_argument("--samples", type=int, default=None, help="random entries per model (default every entry)")
    p.add_argument("--skip-ops", action="store_true", help="skip the per-primitive checks")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("metrics", parents=[common], help="recompute PRR and PEoP from a score table")
    p.add_argument("--scores", default=None, help="scores CSV (default: bundled published tables)")
    p.set_defaults(func=cmd_metrics)
    return parser


def read_config(path) -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment; keys use - or _."""
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ContractError(f"{path}:{n}: expected key=value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    values = read_config(known.config)
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    targets = [parser] + list(subparsers.choices.values())
    for p in targets:
        dests = {a.dest: a for a in p._actions}
        for key, value in values.items():
            action = dests.get(key)
            if action is None:
                continue
            if isinstance(action, argparse._StoreTrueAction):
                p.set_defaults(**{key: value.lower() in ("1", "true", "yes", "on")})
            elif action.nargs in ("+", "*"):
                p.set_defaults(**{key: value.split()})
            else:
                p.set_defaults(**{key: value})
    known_keys = {a.dest for p in targets for a in p._actions}
    unknown = sorted(set(values) - known_keys)
    if unknown:
        raise ContractError(f"unknown keys in config file: {', '.join(unknown)}")


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except (OSError, MHELabError) as exc:
        print(f"mhelab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ContractError as exc:
        print(f"mhelab {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MHELabError, OSError) as exc:
        print(f"mhelab {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
