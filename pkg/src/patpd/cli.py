"""``patpd`` command line: phantoms, simulate, split, train, reconstruct, diagnose, bench.

Exit codes: 0 success, 1 usage error, 2 runtime error. Settings can come from
a ``--config`` key=value file (keys are the long flag names); flags given on
the command line win over the file.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import BENCH_METHODS, bench, write_bench_csv
from .config import read_keyvalue, write_keyvalue
from .core import Grid, desk_grid, load_tensor, save_tensor
from .data import load_dataset, save_dataset, simulate_dataset, split_dataset, write_split
from .diagnostics import DiagnosticsReport, check_contraction
from .phantoms import GENERATORS, PhantomSpec, generate_phantoms
from .png import write_png
from .variational import read_trace_csv

__all__ = ["main", "run_cli", "UsageError"]

RECON_METHODS = ("inverse", "pdhg", "postproc", "mcpd", "pddeq", "hybrid")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _pair(text):
    return tuple(int(v) for v in text.split(","))


def _floats(text):
    return tuple(float(v) for v in text.split(","))


def _words(text):
    return [w for w in text.split(",") if w]


def _build_parser() -> _Parser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("common")
    g.add_argument("--grid", type=_pair, help="nz,nx,nt")
    g.add_argument("--dx", type=float)
    g.add_argument("--c", type=float)
    g.add_argument("--dt", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--config", type=str, help="key=value file; flags override it")
    g.add_argument("--out", type=str)
    g.add_argument("--force", action="store_true", default=None,
                   help="overwrite existing outputs")

    p = _Parser(prog="patpd", description="Photoacoustic reconstruction toolkit")
    p.add_argument("--version", action="version", version=f"patpd {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("phantoms", parents=[common], help="generate phantom images")
    s.add_argument("--kind", choices=GENERATORS)
    s.add_argument("--count", type=int)
    s.add_argument("--flip", action="store_true", default=None)
    s.add_argument("--threshold", type=float)
    s.add_argument("--png", action="store_true", default=None)

    s = sub.add_parser("simulate", parents=[common], help="simulate noisy sensor data")
    s.add_argument("--in", dest="inp", type=str, help="phantom directory")
    s.add_argument("--noise", type=float, help="noise std as a fraction of max|clean|")

    s = sub.add_parser("split", parents=[common], help="train/val/test split")
    s.add_argument("--data", type=str)
    s.add_argument("--fractions", type=_floats)

    s = sub.add_parser("train", parents=[common], help="train a learned reconstruction")
    s.add_argument("--method", choices=("postproc", "mcpd", "pddeq", "hybrid"))
    s.add_argument("--data", type=str)
    s.add_argument("--steps", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--iters", type=int)
    s.add_argument("--hybrid-split", type=_pair)
    s.add_argument("--hidden", type=int)
    s.add_argument("--layers", type=int)
    s.add_argument("--spectral-norm", action="store_true", default=None)
    s.add_argument("--input-scale", type=float)
    s.add_argument("--step-factor", type=float)
    s.add_argument("--jacobian-free", action="store_true", default=None)
    s.add_argument("--val-every", type=int)
    s.add_argument("--log", type=str)

    s = sub.add_parser("reconstruct", parents=[common], help="reconstruct an image")
    s.add_argument("--method", choices=RECON_METHODS)
    s.add_argument("--checkpoint", type=str)
    s.add_argument("--in", dest="inp", type=str, help="sensor data tensor file")
    s.add_argument("--trace", type=str)
    s.add_argument("--iters", type=int)
    s.add_argument("--reg", choices=("nonneg", "l2", "l1"))
    s.add_argument("--lam", type=float)
    s.add_argument("--png", action="store_true", default=None)

    s = sub.add_parser("diagnose", parents=[common], help="theory checks and reports")
    s.add_argument("what", choices=("contraction", "operators", "theory"))
    s.add_argument("--trace", type=str)
    s.add_argument("--checkpoint", type=str)
    s.add_argument("--data", type=str)
    s.add_argument("--pairs", type=int)
    s.add_argument("--deq-iters", type=int)
    s.add_argument("--curves", type=str)

    s = sub.add_parser("bench", parents=[common], help="time operator applications")
    s.add_argument("--methods", type=_words)
    s.add_argument("--sizes", type=_words)
    s.add_argument("--repeat", type=int)
    return p


_DEFAULTS = {
    "seed": 0, "force": False, "kind": "vessels", "count": 10, "flip": False, "png": False,
    "noise": 0.01, "fractions": (0.8, 0.1, 0.1), "steps": 2000, "lr": 2e-4, "iters": None,
    "hybrid_split": (5, 5), "hidden": 16, "layers": 3, "spectral_norm": False,
    "input_scale": 4.0, "step_factor": 10.0, "jacobian_free": False, "val_every": 100,
    "reg": "l2", "lam": 1e-3, "pairs": 100, "deq_iters": 100,
    "methods": ["fast_forward", "reference"], "sizes": ["80x128"], "repeat": 3,
}


def _subparser(parser: _Parser, name: str) -> _Parser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def _apply_config(parser: _Parser, args) -> None:
    if not args.config:
        return
    try:
        values = read_keyvalue(args.config)
    except OSError as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    actions = {a.dest: a for a in _subparser(parser, args.command)._actions}
    for key, raw in values.items():
        dest = key.lstrip("-").replace("-", "_")
        if dest == "in":
            dest = "inp"
        if dest not in actions or dest in ("config", "help"):
            raise UsageError(f"{args.config}: unknown key {key!r} for '{args.command}'")
        if getattr(args, dest) is not None:
            continue
        act = actions[dest]
        if isinstance(act, argparse._StoreTrueAction):
            val = raw.lower() in ("1", "true", "yes", "on")
        else:
            try:
                val = act.type(raw) if act.type else raw
            except ValueError as exc:
                raise UsageError(f"{args.config}: bad value for {key}: {raw!r}") from exc
            if act.choices is not None and val not in act.choices:
                raise UsageError(f"{args.config}: {key} must be one of {list(act.choices)}")
        setattr(args, dest, val)


def _fill_defaults(args) -> None:
    for k, v in _DEFAULTS.items():
        if hasattr(args, k) and getattr(args, k) is None:
            setattr(args, k, v)


def _grid(args, fallback: Grid | None = None) -> Grid:
    base = fallback or desk_grid()
    nz, nx, nt = base.nz, base.nx, base.nt
    if args.grid is not None:
        if len(args.grid) == 2:
            nz, nx, nt = args.grid[0], args.grid[1], 2 * args.grid[0]
        elif len(args.grid) == 3:
            nz, nx, nt = args.grid
        else:
            raise UsageError("--grid expects nz,nx or nz,nx,nt")
    return Grid(nz, nx, args.dx if args.dx is not None else base.dx,
                args.c if args.c is not None else base.c,
                args.dt if args.dt is not None else base.dt, nt)


def _need(args, *names):
    for n in names:
        if getattr(args, n, None) is None:
            flag = "--in" if n == "inp" else "--" + n.replace("_", "-")
            raise UsageError(f"patpd {args.command}: {flag} is required")


def _check_out(path, force: bool) -> Path:
    p = Path(path)
    if p.exists() and not force:
        if p.is_dir() and not any(p.iterdir()):
            return p
        raise FileExistsError(f"{p} already exists (use --force to overwrite)")
    return p


def _grid_meta(g: Grid) -> dict:
    return {"nz": g.nz, "nx": g.nx, "nt": g.nt, "dx": repr(g.dx), "c": repr(g.c), "dt": repr(g.dt)}


def _grid_from_meta(m: dict) -> Grid:
    return Grid(int(m["nz"]), int(m["nx"]), float(m["dx"]), float(m["c"]), float(m["dt"]),
                int(m["nt"]))


# -- commands ---------------------------------------------------------------


def _cmd_phantoms(args) -> None:
    _need(args, "out")
    g = _grid(args)
    out = _check_out(args.out, args.force)
    spec = PhantomSpec(args.kind, args.seed, g.image_shape, threshold=args.threshold, flip=args.flip)
    imgs = generate_phantoms(spec, args.count)
    out.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(imgs):
        save_tensor(out / f"phantom_{i:04d}.patr", img)
        if args.png:
            write_png(out / f"phantom_{i:04d}.png", img)
    write_keyvalue(out / "phantoms.txt", {"kind": args.kind, "seed": args.seed, "count": len(imgs),
                                          "nz": g.nz, "nx": g.nx, "flip": int(args.flip)})
    print(f"wrote {len(imgs)} phantoms to {out}")


def _read_phantoms(directory) -> np.ndarray:
    files = sorted(Path(directory).glob("phantom_*.patr"))
    if not files:
        raise FileNotFoundError(f"no phantom_*.patr files in {directory}")
    return np.stack([load_tensor(f).astype(np.float64) for f in files])


def _cmd_simulate(args) -> None:
    _need(args, "inp", "out")
    imgs = _read_phantoms(args.inp)
    base = desk_grid().with_shape(imgs.shape[1], imgs.shape[2])
    g = _grid(args, base)
    if g.image_shape != imgs.shape[1:]:
        raise ValueError(f"grid {g.image_shape} does not match phantoms {imgs.shape[1:]}")
    _check_out(args.out, args.force)
    ds = simulate_dataset(imgs, g, args.noise, args.seed)
    save_dataset(ds, args.out, force=args.force)
    print(f"simulated {len(ds)} samples, mean SNR {np.nanmean(ds.snr):.2f} dB -> {args.out}")


def _cmd_split(args) -> None:
    _need(args, "data")
    ds = load_dataset(args.data)
    split = split_dataset(len(ds), args.fractions, args.seed)
    target = Path(args.out) if args.out else Path(args.data) / "split.csv"
    _check_out(target, args.force)
    if args.out:
        target.parent.mkdir(parents=True, exist_ok=True)
        tmp = target.parent
        write_split(tmp, split)
        if tmp / "split.csv" != target:
            (tmp / "split.csv").replace(target)
    else:
        write_split(args.data, split)
    print(" ".join(f"{k}={len(v)}" for k, v in split.items()))


def _cmd_train(args) -> None:
    from .autodiff.nets import save_nets
    from .learned.pd import make_operators
    from .learned.train import TrainConfig, train

    _need(args, "method", "data", "out")
    out = _check_out(args.out, args.force)
    ds = load_dataset(args.data)
    if ds.split is None:
        ds.split = split_dataset(len(ds), (0.8, 0.1, 0.1), args.seed)
    xtr, ytr = ds.part("train")
    xva, yva = ds.part("val")
    iters = args.iters or sum(args.hybrid_split)
    cfg = TrainConfig(steps=args.steps, lr=args.lr, iters=iters, split=args.hybrid_split,
                      hidden=args.hidden, n_layers=args.layers, spectral_norm=args.spectral_norm,
                      input_scale=args.input_scale, step_factor=args.step_factor,
                      jacobian_free=args.jacobian_free, val_every=args.val_every, seed=args.seed)
    ops = make_operators(ds.grid)
    res = train(args.method, xtr, ytr, ops, cfg, x_val=xva, y_val=yva,
                progress=lambda s, l, v, t: print(f"step {s} loss {l:.3e} val_psnr {v:.2f}"))
    save_nets(out, res.nets)
    step = 1.0 / (cfg.step_factor * ops.fwd_norm)
    meta = {"method": args.method, **_grid_meta(ds.grid), "sigma": repr(step), "tau": repr(step),
            "iters": iters, "split": ",".join(map(str, cfg.split)),
            "input_scale": repr(cfg.input_scale), "fwd_norm": repr(ops.fwd_norm),
            "fallbacks": res.fallbacks}
    write_keyvalue(Path(str(out) + ".meta"), meta)
    res.write_log(args.log or str(out) + ".log.csv")
    print(f"saved {args.method} checkpoint to {out}")


def _load_checkpoint(path):
    from .autodiff.nets import load_nets

    nets = load_nets(path)
    meta_path = Path(str(path) + ".meta")
    if not meta_path.exists():
        raise FileNotFoundError(f"missing checkpoint metadata {meta_path}")
    return nets, read_keyvalue(meta_path)


def _cmd_reconstruct(args) -> None:
    from .learned.pd import PDConfig, make_operators
    from .learned.train import reconstruct
    from .variational import SolverConfig, VariationalProblem, FixedPointTrace, pdhg

    _need(args, "method", "inp", "out")
    out = _check_out(args.out, args.force)
    y = load_tensor(args.inp).astype(np.float64)
    trace = FixedPointTrace()
    if args.method in ("inverse", "pdhg"):
        if args.grid is None:
            raise UsageError(f"--grid is required for --method {args.method}")
        g = _grid(args)
        if y.shape != g.data_shape:
            raise ValueError(f"data shape {y.shape} does not match grid {g.data_shape}")
        ops = make_operators(g)
        if args.method == "inverse":
            x = ops.inv(y)
        else:
            step = 0.95 / ops.fwd_norm
            prob = VariationalProblem(ops.fwd, y, args.reg, args.lam, adjoint=ops.fwd.adjoint)
            x, _, trace = pdhg(prob, SolverConfig(sigma=step, tau=step, max_iter=args.iters or 200),
                               ops.inv(y), op_norm=ops.fwd_norm)
    else:
        _need(args, "checkpoint")
        nets, meta = _load_checkpoint(args.checkpoint)
        if meta["method"] != args.method:
            raise ValueError(f"checkpoint was trained for {meta['method']!r}, not {args.method!r}")
        g = _grid_from_meta(meta)
        if y.shape != g.data_shape:
            raise ValueError(f"data shape {y.shape} does not match checkpoint grid {g.data_shape}")
        ops = make_operators(g)
        pcfg = PDConfig(float(meta["sigma"]), float(meta["tau"]), iters=args.iters or int(meta["iters"]),
                        input_scale=float(meta["input_scale"]))
        split = _pair(meta.get("split", "5,5"))
        if args.method in ("mcpd", "pddeq"):
            from .learned.pd import PDNets, mcpd_reconstruct, pddeq_forward
            fn = mcpd_reconstruct if args.method == "mcpd" else pddeq_forward
            x, _, trace = fn(y, PDNets(*nets[:2]), ops, pcfg)
        elif args.method == "hybrid":
            from .learned.pd import PDNets, hybrid_reconstruct
            x, _, (t1, t2) = hybrid_reconstruct(y, PDNets(*nets[:2]), PDNets(*nets[2:4]), ops, pcfg, split)
            trace = t1
            trace.extend(t2)
        else:
            x = reconstruct("postproc", nets, y, ops, pcfg)
    save_tensor(out, x)
    trace.to_csv(args.trace or str(out) + ".trace.csv")
    if args.png:
        write_png(str(out) + ".png", x)
    print(f"wrote {out}")


def _cmd_diagnose(args) -> None:
    report = DiagnosticsReport()
    if args.what == "contraction":
        _need(args, "trace")
        res = check_contraction(read_trace_csv(args.trace))
        report.update({"slope": res.slope, "monotone_fraction": res.monotone_fraction,
                       "dual_bound": res.dual_bound, "dual_bounded": res.dual_bounded,
                       "fit_points": res.fit_points})
    elif args.what == "operators":
        from .pipeline import operator_report
        report.update(operator_report(_grid(args), seed=args.seed))
    else:
        from .pipeline import theory_report
        _need(args, "checkpoint", "data")
        nets, meta = _load_checkpoint(args.checkpoint)
        ds = load_dataset(args.data)
        report.update(theory_report(nets, meta, ds, pairs=args.pairs, deq_iters=args.deq_iters,
                                    seed=args.seed, curves=args.curves))
    text = report.to_text()
    if args.out:
        _check_out(args.out, args.force)
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def _cmd_bench(args) -> None:
    for m in args.methods:
        if m not in BENCH_METHODS:
            raise UsageError(f"unknown bench method {m!r}; expected some of {BENCH_METHODS}")
    rows = bench(args.methods, args.sizes, args.repeat, _grid(args))
    if args.out:
        _check_out(args.out, args.force)
        write_bench_csv(args.out, rows)
    for r in rows:
        print(f"{r['method']},{r['nz']},{r['nx']},{r['nt']},{r['seconds']}")


_COMMANDS = {
    "phantoms": _cmd_phantoms, "simulate": _cmd_simulate, "split": _cmd_split,
    "train": _cmd_train, "reconstruct": _cmd_reconstruct, "diagnose": _cmd_diagnose,
    "bench": _cmd_bench,
}


def run_cli(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_config(parser, args)
        _fill_defaults(args)
        _COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        sys.stderr.write(f"patpd: error: {exc}\n")
        return 2
    return 0


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
