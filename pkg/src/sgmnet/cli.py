"""Command-line entry point: ``sgmnet <command> [flags]``.

Exit status is 0 on success, 1 on usage errors and 2 on runtime failures.
A ``--config`` file of ``key = value`` lines supplies defaults; explicit
flags win.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from . import imageio
from .cells import ALL_KINDS, CellKind, make_cell
from .data import default_biases, generate_set, select_frames
from .gradcheck import gradcheck
from .layers import param_count
from .network import FusionNet
from .training import (TrainConfig, build_net, dataset_psnr, evaluate, fuse,
                       net_from_checkpoint, train)

log = logging.getLogger("sgmnet")

COMMANDS = ("gen-data", "train", "fuse", "eval", "ablate", "gradcheck", "inspect-ckpt")
CELL_CHOICES = [k.value for k in ALL_KINDS]
EVAL_HEADER = ("name", "N", "psnr_l", "psnr_t")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _kind_list(text: str) -> list[str]:
    try:
        return [CellKind.parse(v.strip()).value for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _common(p, *, cell=False, training=False):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="file of 'key = value' defaults")
    if cell or training:
        p.add_argument("--cell", choices=CELL_CHOICES, default="sgm")
        p.add_argument("--mode", choices=("uni", "bi"), default="bi")
        p.add_argument("--precision", choices=("f32", "f64"), default="f32")
    if training:
        p.add_argument("--epochs", type=int, default=200)
        p.add_argument("--steps", type=int, default=0, help="stop after this many steps (0: no cap)")
        p.add_argument("--lr", type=float, default=2e-4)
        p.add_argument("--batch", type=int, default=4)
        p.add_argument("--patch", type=int, default=64)
        p.add_argument("--halve-every", type=int, default=25)
        p.add_argument("--shuffle-order", action="store_true")
        p.add_argument("--var-lengths", type=_int_list, default=[])
        p.add_argument("--log-every", type=int, default=1)


def build_parser() -> _Parser:
    parser = _Parser(prog="sgmnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen-data", help="write a synthetic dataset and manifest")
    _common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--motion", type=float, default=6.0)
    p.add_argument("--no-quantize", action="store_true")

    p = sub.add_parser("train", help="train a network on a manifest")
    _common(p, training=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--ckpt", required=True, help="output checkpoint path")
    p.add_argument("--log", help="CSV metric log path (default: <ckpt>.csv)")
    p.add_argument("--ckpt-every", type=int, default=0)

    p = sub.add_parser("fuse", help="write one fused PFM per sequence")
    _common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, help="use N frames centred on the reference")

    p = sub.add_parser("eval", help="PSNR-L / PSNR-T per sequence as CSV")
    _common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--out", help="CSV path (default: stdout)")

    p = sub.add_parser("ablate", help="train every cell kind and tabulate PSNR per N")
    _common(p, training=True)
    p.add_argument("--manifest", help="training/evaluation set (default: generated fixture)")
    p.add_argument("--kinds", type=_kind_list, default=CELL_CHOICES)
    p.add_argument("--ns", type=_int_list, default=[3, 5, 7])
    p.add_argument("--count", type=int, default=8, help="fixture sequences when no manifest")
    p.add_argument("--size", type=int, default=64, help="fixture size when no manifest")
    p.add_argument("--out", help="also write the table as CSV here")

    p = sub.add_parser("gradcheck", help="autodiff vs central differences in float64")
    _common(p, cell=True)
    p.add_argument("--target", choices=("cell", "net"), default="net")
    p.add_argument("--size", type=int, default=8)
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--coords", type=int, default=200, help="max coordinates per tensor")
    p.add_argument("--full", action="store_true", help="check every coordinate")

    p = sub.add_parser("inspect-ckpt", help="list parameters (fresh net when --ckpt is omitted)")
    _common(p, cell=True)
    p.add_argument("--ckpt")
    return parser


# -- config files ---------------------------------------------------------------


def read_config(path) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        out[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return out


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


def _apply_config(sub: argparse.ArgumentParser, args: argparse.Namespace, argv) -> None:
    """Fill values from the config file for flags not given on the command line."""
    actions = {a.dest: a for a in sub._actions}
    given = {a.dest for a in sub._actions for s in a.option_strings
             if any(tok == s or tok.startswith(s + "=") for tok in argv)}
    for key, raw in read_config(args.config).items():
        action = actions.get(key)
        if action is None or key in ("help", "config"):
            raise UsageError(f"unknown config key {key!r} for {args.command}")
        if key in given:
            continue
        try:
            if isinstance(action, argparse._StoreTrueAction):
                value = _parse_bool(raw)
            else:
                value = action.type(raw) if action.type else raw
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise UsageError(f"config key {key!r}: {exc}") from exc
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"config key {key!r}: {value!r} not in {list(action.choices)}")
        setattr(args, key, value)


# -- commands -------------------------------------------------------------------


def _load_manifest(path, need_gt=False):
    seqs = [d.load() for d in imageio.manifest_load(path)]
    if need_gt and any(s.hdr_gt is None for s in seqs):
        raise ValueError("every sequence needs a 'gt' entry for this command")
    return seqs


def _train_config(args, cell=None) -> TrainConfig:
    return TrainConfig(learning_rate=args.lr, batch_size=args.batch, epochs=args.epochs,
                       halve_every=args.halve_every, patch_size=args.patch, seed=args.seed,
                       cell_kind=cell or args.cell, mode=args.mode,
                       shuffle_exposure_order=args.shuffle_order,
                       variable_length_set=tuple(args.var_lengths), precision=args.precision,
                       max_steps=args.steps, log_every=args.log_every,
                       checkpoint_every=getattr(args, "ckpt_every", 0))


def cmd_gen_data(args, out):
    seqs = generate_set(args.seed, args.count, n=args.n, size=args.size, motion=args.motion,
                        quantize_8bit=not args.no_quantize)
    manifest = imageio.write_dataset(args.out, seqs)
    print(f"wrote {len(seqs)} sequences, manifest {manifest}", file=out)


def cmd_train(args, out):
    cfg = _train_config(args)
    dataset = _load_manifest(args.manifest, need_gt=True)
    log_path = args.log or args.ckpt + ".csv"
    t0 = time.time()
    result = train(cfg, dataset, ckpt_path=args.ckpt, log_path=log_path)
    psnr_l, psnr_t = dataset_psnr(result.net, dataset)
    print(f"steps {result.steps} time {time.time() - t0:.1f}s "
          f"train psnr_l {psnr_l:.3f} psnr_t {psnr_t:.3f}", file=out)
    print(f"checkpoint {args.ckpt}, log {log_path}", file=out)


def cmd_fuse(args, out):
    net = net_from_checkpoint(ckpt_io.load(args.ckpt))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for seq in _load_manifest(args.manifest):
        s = select_frames(seq, args.n) if args.n else seq
        path = out_dir / f"{seq.name}.pfm"
        imageio.write_pfm(path, fuse(net, s).astype(np.float32))
        print(f"{seq.name} N={len(s)} -> {path}", file=out)


def cmd_eval(args, out):
    net = net_from_checkpoint(ckpt_io.load(args.ckpt))
    rows = evaluate(net, _load_manifest(args.manifest, need_gt=True), args.n)
    f = open(args.out, "w", newline="") if args.out else out
    try:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(EVAL_HEADER)
        for r in rows:
            w.writerow([r["name"], r["N"], repr(r["psnr_l"]), repr(r["psnr_t"])])
    finally:
        if args.out:
            f.close()


def ablation_table(results: dict, ns) -> list[str]:
    """Fixed-width table: one row per kind, PSNR-L / PSNR-T per N."""
    head = f"{'cell':<8}" + "".join(f" | N={n:<2} PSNR-L  PSNR-T" for n in ns)
    lines = [head, "-" * len(head)]
    for kind, per_n in results.items():
        lines.append(f"{kind:<8}" + "".join(
            f" | {per_n[n][0]:>12.2f} {per_n[n][1]:>7.2f}" for n in ns))
    return lines


def cmd_ablate(args, out):
    if args.manifest:
        dataset = _load_manifest(args.manifest, need_gt=True)
    else:
        dataset = generate_set(args.seed, args.count, n=max(args.ns), size=args.size)
    longest = min(len(s) for s in dataset)
    if max(args.ns) > longest:
        raise ValueError(f"N={max(args.ns)} requested but sequences have {longest} frames")
    train_n = min(args.ns)
    train_set = [select_frames(s, train_n) for s in dataset]
    results = {}
    for kind in args.kinds:
        cfg = _train_config(args, cell=kind)
        t0 = time.time()
        net = train(cfg, train_set if not cfg.variable_length_set else dataset).net
        results[kind] = {n: dataset_psnr(net, dataset, n) for n in args.ns}
        log.info("ablate %s done in %.1fs", kind, time.time() - t0)
    for line in ablation_table(results, args.ns):
        print(line, file=out)
    ranking = sorted(results, key=lambda k: -np.mean([results[k][n][1] for n in args.ns]))
    print("ranking by mean PSNR-T: " + " > ".join(ranking), file=out)
    if args.out:
        with open(args.out, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(("cell", "N", "psnr_l", "psnr_t"))
            for kind, per_n in results.items():
                for n in args.ns:
                    w.writerow((kind, n, repr(per_n[n][0]), repr(per_n[n][1])))


def gradcheck_net(kind="sgm", mode="bi", seed=0, size=8, n=3, **kw):
    """Gradcheck a float64 FusionNet on one random sequence at ``size`` x ``size``."""
    from . import hdr
    rng = np.random.default_rng(seed)
    net = FusionNet(kind, mode, seed=seed, dtype=np.float64)
    frames = rng.uniform(0.05, 0.95, size=(1, n, 3, size, size))
    times = (2.0 ** np.asarray(default_biases(n)))[None]
    target = rng.uniform(0, 1, size=(1, 3, size, size))
    return gradcheck(lambda: hdr.loss(net(frames, times, n // 2), target),
                     net.registry(), seed=seed, **kw)


def gradcheck_cell(kind="sgm", seed=0, size=8, n=3, ch=64, **kw):
    """Gradcheck one cell unrolled over ``n`` steps with a random linear readout."""
    from . import tensor as T
    rng = np.random.default_rng(seed)
    cell = make_cell(kind, ch, seed, np.float64)
    feats = [rng.normal(size=(1, ch, size, size)) for _ in range(n)]
    weight = rng.normal(size=(1, ch, size, size))

    def loss():
        state = cell.init_state(T.Tensor(feats[0]))
        h = state.h
        for e in feats:
            h, state = cell.step(T.Tensor(e), state)
        return T.reduce_mean(T.mul(h, T.Tensor(weight)))

    return gradcheck(loss, cell.registry(), seed=seed, **kw)


def cmd_gradcheck(args, out):
    kw = dict(tolerance=args.tol, max_coords=args.coords, full=args.full)
    if args.target == "net":
        report = gradcheck_net(args.cell, args.mode, args.seed, args.size, args.n, **kw)
    else:
        report = gradcheck_cell(args.cell, args.seed, args.size, args.n, **kw)
    print(f"{args.target} {args.cell}: {report.summary()}", file=out)
    return 0 if report.passed else 2


def cmd_inspect(args, out):
    if args.ckpt:
        ck = ckpt_io.load(args.ckpt)
        tensors = ck.tensors
        print(f"checkpoint {args.ckpt} step {ck.step}", file=out)
    else:
        net = FusionNet(args.cell, args.mode, seed=args.seed,
                        dtype=np.float64 if args.precision == "f64" else np.float32)
        tensors = {k: v.data for k, v in net.registry().items()}
        print(f"fresh {args.mode}-{args.cell} network (seed {args.seed})", file=out)
    groups: dict[str, int] = {}
    for name, arr in tensors.items():
        print(f"{name:<40} {str(tuple(arr.shape)):<18} {arr.size}", file=out)
        top = name.split(".", 1)[0]
        groups[top] = groups.get(top, 0) + int(arr.size)
    for top, count in groups.items():
        print(f"{top} parameters: {count}", file=out)
    print(f"total parameters: {param_count(tensors)}", file=out)


HANDLERS = {"gen-data": cmd_gen_data, "train": cmd_train, "fuse": cmd_fuse, "eval": cmd_eval,
            "ablate": cmd_ablate, "gradcheck": cmd_gradcheck, "inspect-ckpt": cmd_inspect}


def run(argv=None, out=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        if args.config:
            sub = parser._subparsers._group_actions[0].choices[args.command]
            _apply_config(sub, args, argv)
    except (UsageError, OSError) as exc:
        print(f"sgmnet: usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return HANDLERS[args.command](args, out) or 0
    except Exception as exc:  # report any runtime failure as exit 2
        print(f"sgmnet {args.command}: error: {exc}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return 2


def main() -> None:
    sys.exit(run())
