"""Command-line interface.

Exit codes: 0 on success, 2 for bad input (names, files, configuration,
unwritable output), 3 when an optimizer fails to converge.
"""

from __future__ import annotations

import argparse
import json
import logging
import statistics
import sys
from pathlib import Path

from . import __version__
from . import io as tio
from .channel import full_channel
from .errors import InputError, NonConvergenceError
from .measurement import POLARIZATIONS, synthesize_dataset
from .modes import hb_basis, oam_basis
from .states import BASES, CIRC_SLOTS, LIN_HB_SLOTS, change_basis, fidelity, load_density, polarization, purity, save_density
from .tomography import Summary, fit_coefficients, reconstruct_density, report, summarize, two_mode_block
from .wigner import PAIR_IDS, STATE_MODES, SinglePhotonModeState, mode_pair_state, save_slice_csv, slice_difference, wigner_slice

log = logging.getLogger("tamqudit")

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGENCE = 0, 2, 3
DEFAULT_SWEEP = 20
TARGETS = {"J1": "sigma+", "J-1": "sigma-", "J+": "H", "J-": "V"}


def _fmt(x: float) -> str:
    return f"{x + 0.0:.15g}"


def format_complex(z: complex) -> str:
    im = z.imag + 0.0
    return f"{_fmt(z.real)}{'-' if im < 0 else '+'}{_fmt(abs(im))}j"


def _load_config(args) -> tio.RunConfig:
    cfg = tio.load_config(args.config) if args.config else tio.RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.output = args.out
    if args.emit_png:
        cfg.emit_png = True
    return cfg


def _target_state(name: str, basis: str):
    pol = TARGETS.get(name, name)
    return change_basis(full_channel(polarization(pol)), basis)


# --- commands ---------------------------------------------------------------


def cmd_channel(args) -> int:
    state = change_basis(full_channel(polarization(args.input)), args.basis)
    slots = CIRC_SLOTS if args.basis == "circ-oam" else LIN_HB_SLOTS
    for k, (amp, (pol, mode)) in enumerate(zip(state.amplitudes, slots), start=1):
        label = f"{pol},l={mode:+d}" if isinstance(mode, int) else f"{pol},{mode}"
        print(f"|{k}>  {label:<12}  {format_complex(complex(amp))}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    root = Path(cfg.output)
    with tio.output_lock(root):
        ds = synthesize_dataset(
            analyzers=cfg.analyzers, n_frames=cfg.n_frames, grid=cfg.grid,
            profile=cfg.profile, noise=cfg.noise, seed=cfg.seed, threads=args.threads,
        )
        for row in ds.images:
            for img in row:
                if img.counts.max(initial=0) > tio.PGM_MAX:
                    raise InputError("a pixel exceeds 65535 counts; lower n_frames")
        entries = tio.save_dataset(ds, root, cfg)
        if cfg.emit_png:
            from .plotting import save_counts_png, save_dataset_figure

            for i, inp in enumerate(ds.inputs):
                for j, ana in enumerate(ds.analyzers):
                    name = f"img_{i}{j}_{inp}_{ana}.png"
                    save_counts_png(ds.images[i][j].counts, root / name, f"{inp} / {ana}")
                    entries.append(tio.file_entry(root, name, "figure"))
            save_dataset_figure(ds, root / "dataset.png")
            entries.append(tio.file_entry(root, "dataset.png", "figure"))
            _rewrite_manifest_files(root, entries)
    print(f"wrote {len(ds.inputs) * len(ds.analyzers)} images to {root}")
    return EXIT_OK


def _rewrite_manifest_files(root: Path, entries) -> None:
    doc = tio.read_manifest(root)
    doc["files"] = list(entries)
    tio.write_json(root / tio.MANIFEST_NAME, doc)


def _reconstruct_one(ds, inp: str, basis: str):
    return reconstruct_density(ds.row(inp), ds.grid, ds.profile, input_pol=inp, basis=basis, noise=ds.noise)


def cmd_reconstruct(args) -> int:
    ds = tio.load_dataset(args.dataset)
    res = _reconstruct_one(ds, args.input, args.basis)
    out = Path(args.out or f"rho_{args.input}.json")
    if out.suffix != ".json":
        out = out / f"rho_{args.input}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_density(res.rho, out)
    summary = summarize([res])
    print(json.dumps(summary.to_dict()["rows"][0]))
    print(summary.to_text(), end="")
    return EXIT_OK


def cmd_fit(args) -> int:
    ds = tio.load_dataset(args.dataset)
    img = ds.row(args.input)[ds.analyzers.index(args.analyzer)] if args.analyzer in ds.analyzers else None
    if img is None:
        raise InputError(f"analyzer {args.analyzer!r} not in dataset {ds.analyzers}")
    if img.meta.get("dark"):
        raise InputError(f"{args.input}/{args.analyzer} is a dark projection; nothing to fit")
    basis = oam_basis(ds.grid, ds.profile) if args.basis == "oam" else hb_basis(ds.grid, ds.profile)
    fit = fit_coefficients(img, basis, label=args.basis)
    doc = {
        "input": args.input,
        "analyzer": args.analyzer,
        "basis": args.basis,
        "modes": [m.label for m in basis],
        "coefficients": [[c.real, c.imag] for c in fit.coefficients],
        "residual": fit.residual,
        "image_twin": None if fit.twin is None else [[c.real, c.imag] for c in fit.twin],
    }
    print(json.dumps(doc, indent=1))
    return EXIT_OK


def cmd_fidelity(args) -> int:
    rho = load_density(args.rho)
    target = _target_state(args.target, rho.basis)
    f = fidelity(rho, target)
    print(f"fidelity {f:.9f}")
    print(f"purity   {purity(rho):.9f}")
    return EXIT_OK


def _parse_modes(text: str):
    try:
        a, b = (int(t) for t in text.split(","))
    except ValueError:
        raise InputError(f"--modes expects two comma-separated indices, got {text!r}") from None
    return a, b


def _state_from_rho(name: str, path) -> SinglePhotonModeState:
    rho = load_density(path)
    slots = STATE_MODES[name]
    if len(slots) == 2:
        return SinglePhotonModeState(two_mode_block(rho, slots), tuple(f"slot{k + 1}" for k in slots))
    rho = change_basis(rho, "circ-oam")
    return SinglePhotonModeState(rho.entries, tuple(f"slot{k + 1}" for k in slots))


def cmd_wigner(args) -> int:
    if args.state not in STATE_MODES:
        raise InputError(f"unknown state {args.state!r}; expected one of {sorted(STATE_MODES)}")
    pairs = PAIR_IDS if args.slices == "all" else tuple(p.strip() for p in args.slices.split(","))
    modes = _parse_modes(args.modes) if args.modes else (0, 1)
    ideal = mode_pair_state(args.state)
    state = _state_from_rho(args.state, args.rho) if args.rho else ideal
    root = Path(args.out or f"wigner_{args.state}")
    with tio.output_lock(root):
        entries = []
        slices = [wigner_slice(state, p, args.n_points, args.extent, modes) for p in pairs]
        for sl in slices:
            name = f"wigner_{args.state}_{sl.pair}.csv"
            save_slice_csv(sl, root / name)
            entries.append(tio.file_entry(root, name, "slice"))
        diffs = {}
        if args.rho:
            for sl in slices:
                ref = wigner_slice(ideal, sl.pair, args.n_points, args.extent, modes)
                max_abs, values = slice_difference(ref, sl)
                diffs[sl.pair] = max_abs
                name = f"diff_{args.state}_{sl.pair}.csv"
                diff_slice = type(sl)(sl.pair, sl.n_points, sl.extent, values, sl.modes)
                save_slice_csv(diff_slice, root / name)
                entries.append(tio.file_entry(root, name, "slice"))
        if args.emit_png:
            from .plotting import save_slice_png, save_slices_figure

            for sl in slices:
                name = f"wigner_{args.state}_{sl.pair}.png"
                save_slice_png(sl, root / name)
                entries.append(tio.file_entry(root, name, "figure"))
            if len(slices) == len(PAIR_IDS):
                save_slices_figure(slices, root / f"wigner_{args.state}.png", args.state)
                entries.append(tio.file_entry(root, f"wigner_{args.state}.png", "figure"))
        note = {} if ideal.dim == 2 else {"note": "d=4 slices over a chosen mode pair; no reference panel exists"}
        config = {"state": args.state, "pairs": list(pairs), "n_points": args.n_points, "extent": args.extent,
                  "modes": list(modes), "rho": str(args.rho) if args.rho else None}
        tio.write_manifest(root, entries, tio.sha256_bytes(tio.canonical_json(config).encode()),
                           {"wigner": config | note})
    for sl in slices:
        line = f"{sl.pair:<8} min {sl.values.min():+.6f}  max {sl.values.max():+.6f}"
        if sl.pair in diffs:
            line += f"  max|ideal-rho| {diffs[sl.pair]:.3e}"
        print(line)
    return EXIT_OK


def _write_report(root: Path, results, summary: Summary, entries, emit_png: bool, ds=None) -> None:
    for res in results:
        name = f"rho_{res.input_pol}.json"
        save_density(res.rho, root / name)
        entries.append(tio.file_entry(root, name, "rho"))
    for name, text in (("report.json", summary.to_json()), ("report.csv", summary.to_csv()), ("report.txt", summary.to_text())):
        tio.write_text(root / name, text)
        entries.append(tio.file_entry(root, name, "report"))
    if emit_png:
        from .plotting import save_dataset_figure, save_density_figure

        save_density_figure(results, root / "density.png")
        entries.append(tio.file_entry(root, "density.png", "figure"))
        if ds is not None:
            save_dataset_figure(ds, root / "dataset.png")
            entries.append(tio.file_entry(root, "dataset.png", "figure"))


def cmd_report(args) -> int:
    if args.dataset:
        ds = tio.load_dataset(args.dataset)
        cfg_hash = tio.read_manifest(args.dataset).get("config_hash", "")
        root = Path(args.out or "report")
        with tio.output_lock(root):
            results = [_reconstruct_one(ds, inp, args.basis) for inp in ds.inputs]
            summary = report(results)
            entries = []
            _write_report(root, results, summary, entries, args.emit_png, ds)
            tio.write_manifest(root, entries, cfg_hash, {"report": {"dataset": str(args.dataset), "basis": args.basis}})
        print(summary.to_text(), end="")
        return EXIT_OK

    cfg = _load_config(args)
    n_seeds = args.sweep or DEFAULT_SWEEP
    root = Path(cfg.output)
    per_input = {inp: [] for inp in POLARIZATIONS}
    with tio.output_lock(root):
        first = None
        for k in range(n_seeds):
            seed = cfg.seed + k
            ds = synthesize_dataset(analyzers=cfg.analyzers, n_frames=cfg.n_frames, grid=cfg.grid,
                                    profile=cfg.profile, noise=cfg.noise, seed=seed, threads=args.threads)
            results = [_reconstruct_one(ds, inp, args.basis) for inp in ds.inputs]
            for res in results:
                per_input[res.input_pol].append(res.fidelity_vs_ideal)
            if first is None:
                first = (ds, results)
            log.info("seed %d: %s", seed, [round(r.fidelity_vs_ideal, 4) for r in results])
        ds, results = first
        summary = report(results)
        entries = []
        _write_report(root, results, summary, entries, cfg.emit_png, ds)
        sweep = {
            "seeds": list(range(cfg.seed, cfg.seed + n_seeds)),
            "fidelity": per_input,
            "median_fidelity": {k: statistics.median(v) for k, v in per_input.items()},
            "min_fidelity": {k: min(v) for k, v in per_input.items()},
        }
        tio.write_json(root / "sweep.json", sweep)
        entries.append(tio.file_entry(root, "sweep.json", "report"))
        table = _sweep_table(sweep)
        tio.write_text(root / "sweep.txt", table)
        entries.append(tio.file_entry(root, "sweep.txt", "report"))
        tio.write_manifest(root, entries, cfg.hash(), {"report": {"config": cfg.to_dict(), "sweep": n_seeds, "basis": args.basis}})
    print(table, end="")
    return EXIT_OK


def _sweep_table(sweep: dict) -> str:
    rows = [("input", "median_fidelity", "min_fidelity", "n_seeds")]
    for inp, vals in sweep["fidelity"].items():
        rows.append((inp, f"{sweep['median_fidelity'][inp]:.6f}", f"{sweep['min_fidelity'][inp]:.6f}", str(len(vals))))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def cmd_verify(args) -> int:
    root = Path(args.dataset or args.out or ".")
    problems = tio.verify_manifest(root)
    if problems:
        for p in problems:
            print(p)
        print(f"FAILED: {len(problems)} problem(s) in {root}")
        return EXIT_INPUT
    n = len(tio.read_manifest(root).get("files", []))
    print(f"OK: {n} files verified in {root}")
    return EXIT_OK


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration (JSON)")
    common.add_argument("--out", help="output directory or file")
    common.add_argument("--seed", type=int, default=None, help="override the configured seed")
    common.add_argument("--threads", type=int, default=1, help="worker threads for sampling")
    common.add_argument("--emit-png", action="store_true", help="also render PNG figures")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="tamqudit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("channel", parents=[common], help="print the out-coupled qudit for one input")
    p.add_argument("--input", required=True)
    p.add_argument("--basis", choices=BASES, default="circ-oam")
    p.set_defaults(func=cmd_channel)

    p = sub.add_parser("simulate", parents=[common], help="synthesize a 4x4 tomography dataset")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", parents=[common], help="fit one image to a mode superposition")
    p.add_argument("--dataset", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--analyzer", required=True)
    p.add_argument("--basis", choices=("oam", "hb"), default="oam")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("reconstruct", parents=[common], help="maximum-likelihood density matrix for one input")
    p.add_argument("--dataset", required=True)
    p.add_argument("--input", required=True, choices=POLARIZATIONS)
    p.add_argument("--basis", choices=BASES, default="circ-oam")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("fidelity", parents=[common], help="fidelity of a stored density matrix")
    p.add_argument("--rho", required=True)
    p.add_argument("--target", required=True, help="J1, J-1, J+, J- or an input polarization name")
    p.set_defaults(func=cmd_fidelity)

    p = sub.add_parser("wigner", parents=[common], help="Wigner-function slices")
    p.add_argument("--state", required=True)
    p.add_argument("--rho", help="reconstructed density matrix to slice instead of the ideal state")
    p.add_argument("--slices", default="all", help="'all' or comma-separated pair ids")
    p.add_argument("--n-points", type=int, default=121)
    p.add_argument("--extent", type=float, default=3.0)
    p.add_argument("--modes", help="two mode indices for d=4 states, e.g. 0,3")
    p.set_defaults(func=cmd_wigner)

    p = sub.add_parser("report", parents=[common], help="reconstruct all inputs and tabulate fidelities")
    p.add_argument("--dataset", help="existing dataset; otherwise simulate from --config")
    p.add_argument("--sweep", type=int, default=None, help=f"number of seeds to simulate (default {DEFAULT_SWEEP})")
    p.add_argument("--basis", choices=BASES, default="circ-oam")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("verify", parents=[common], help="check a manifest against its files")
    p.add_argument("--dataset", help="directory holding manifest.json (defaults to --out)")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - the exit-code contract has no other codes
        log.debug("unexpected failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
