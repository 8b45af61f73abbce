"""CLI entry point for ``python -m lsvx``.

Subcommands:
    expand   Expansion coefficients and curves for the configured task
    density  Transition-density expansion (forces the density task)
    smile    Implied-volatility table against its small-time asymptotics
    verify   Run the acceptance criteria selected in the config

Exit codes: 0 success, 2 configuration or model-condition error,
3 criterion failure, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

from lsvx._serialization import (
    write_curve,
    write_expansions_csv,
    write_manifest,
    write_rows_csv,
)
from lsvx.config import OutputFormat, RunConfig, TaskKind, cache_dir, expansion_kind
from lsvx.errors import LsvxError, NumericError
from lsvx.expansions import (
    EvaluationForm,
    Expansion,
    ExpansionKind,
    call_expansion_itm,
    call_expansion_otm,
    density_expansion,
    evaluate,
    tail_expansion,
)
from lsvx.generators import sv_coefficients
from lsvx.levy_kernel import SplitLevyModel, split_levy
from lsvx.oracles import CharExponent, fourier_call, fourier_density
from lsvx.smile import implied_vol, iv_second_order
from lsvx.verify import VerifyContext, run_criteria

logger = logging.getLogger("lsvx")

EXIT_CONFIG = 2
EXIT_CRITERION = 3
EXIT_NUMERIC = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lsvx",
        description="lsvx: small-time expansions for stochastic-volatility Levy models",
    )
    sub = parser.add_subparsers(dest="command")

    for name, help_text in (
        ("expand", "Compute expansion coefficients for the configured task"),
        ("density", "Compute transition-density expansions"),
        ("smile", "Tabulate implied volatilities against their asymptotics"),
        ("verify", "Run the acceptance criteria"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="Path to the JSON run configuration")
        p.add_argument("--order", type=int, help="Override task.order")
        p.add_argument("--epsilon", type=float, help="Override model.epsilon")
        p.add_argument("--seed", type=int, help="Override oracle.seed")
        p.add_argument("--out", help="Override output.directory")
        p.add_argument(
            "-v", "--verbose", action="count", default=0, help="INFO logging; -vv for DEBUG"
        )
        if name == "verify":
            p.add_argument(
                "--corrupt",
                type=float,
                help="Perturb computed coefficients by this relative amount (self-test)",
            )
    return parser


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _load(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.load(args.config)
    if args.command == "density" and config.task.kind is not TaskKind.DENSITY:
        config = replace(config, task=replace(config.task, kind=TaskKind.DENSITY))
    return config.with_overrides(
        order=args.order, epsilon=args.epsilon, seed=args.seed, out=args.out
    )


def _output_dir(config: RunConfig) -> Path:
    out = Path(config.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# expand / density
# ---------------------------------------------------------------------------


def _expansions(config: RunConfig) -> list[Expansion]:
    density = config.model.levy.build()
    sv = config.model.sv.build()
    n = config.task.order
    table = None if config.task.kind is TaskKind.DENSITY else sv_coefficients(sv, max(n - 1, 1))
    models: dict[float, SplitLevyModel] = {}
    out = []
    for z in config.task.z_grid:
        eps = config.epsilon_for(z)
        if eps not in models:
            models[eps] = split_levy(density, eps, cache_dir=cache_dir())
        model = models[eps]
        kind = expansion_kind(config.task.kind, z)
        if kind is ExpansionKind.TAIL:
            out.append(tail_expansion(model, sv, table, z, n))
        elif kind is ExpansionKind.CALL_OTM:
            out.append(call_expansion_otm(model, sv, table, z, n))
        elif kind is ExpansionKind.CALL_ITM:
            out.append(call_expansion_itm(model, sv, table, z, n))
        else:
            out.append(density_expansion(model, z, n))
    return out


def _oracle_column(config: RunConfig, exp: Expansion) -> list[float] | None:
    """Fourier values on the t-grid where an exact oracle exists."""
    if not config.oracle.fourier:
        return None
    sv = config.model.sv.build()
    density = config.model.levy.build()
    if exp.kind is ExpansionKind.DENSITY:
        char = CharExponent.from_density(density)
        return [fourier_density(char, exp.z, t).price for t in config.task.t_grid]
    if exp.kind in (ExpansionKind.CALL_OTM, ExpansionKind.CALL_ITM) and sv.is_constant:
        char = CharExponent.from_density(density, sigma0=sv.sigma0)
        return [fourier_call(char, exp.z, t).price for t in config.task.t_grid]
    return None


def _cmd_expand(config: RunConfig) -> list[str]:
    out = _output_dir(config)
    expansions = _expansions(config)
    written: list[str] = []
    formats = set(config.output.formats)
    rows = []
    for exp in expansions:
        oracle = _oracle_column(config, exp)
        prefactored = [evaluate(exp, t) for t in config.task.t_grid]
        normalized = [evaluate(exp, t, EvaluationForm.NORMALIZED) for t in config.task.t_grid]
        for i, t in enumerate(config.task.t_grid):
            ref = "" if oracle is None else repr(oracle[i])
            values = [repr(prefactored[i]), repr(normalized[i]), ref]
            rows.append([exp.kind.value, repr(exp.z), repr(t), *values])
        if OutputFormat.DAT in formats:
            name = f"{config.task.kind.value}_z{exp.z:g}.dat"
            write_curve(out / name, config.task.t_grid, prefactored)
            written.append(name)
    if OutputFormat.CSV in formats:
        write_expansions_csv(out / "coefficients.csv", expansions)
        write_rows_csv(
            out / "curves.csv",
            ["kind", "z", "t", "prefactored", "normalized", "fourier"],
            rows,
        )
        written += ["coefficients.csv", "curves.csv"]
    for exp in expansions:
        print(f"{exp.kind.value} z={exp.z:g} eps={exp.epsilon:.4g}: cbreve = "
              + ", ".join(f"{c:.6g}" for c in exp.normalized))
    return written


# ---------------------------------------------------------------------------
# smile
# ---------------------------------------------------------------------------


_SMILE_HEADER = [
    "kappa", "tau", "price", "implied_var", "v0", "v1", "second_order", "ratio", "error"
]


def _smile_row(char: CharExponent, config: RunConfig, kappa: float, tau: float) -> list[str]:
    row: dict[str, str] = {key: "" for key in _SMILE_HEADER}
    row["kappa"], row["tau"] = repr(kappa), repr(tau)
    try:
        price = math.exp(kappa) * fourier_call(char, -kappa, tau).price
        row["price"] = repr(price)
        var = implied_vol(price, 1.0, math.exp(kappa), 0.0, tau) ** 2
        row["implied_var"] = repr(var)
        asym = iv_second_order(kappa, tau, config.model.levy.build())
        row["v0"], row["v1"] = repr(asym.v0), repr(asym.v1)
        row["second_order"] = repr(asym.second_order)
        row["ratio"] = repr(var / asym.v0)
    except LsvxError as exc:
        logger.warning("smile row kappa=%g tau=%g: %s", kappa, tau, exc)
        row["error"] = str(exc)
    return [row[key] for key in _SMILE_HEADER]


def _cmd_smile(config: RunConfig) -> list[str]:
    out = _output_dir(config)
    char = CharExponent.from_density(config.model.levy.build(), sigma0=config.model.sigma0)
    rows = [
        _smile_row(char, config, kappa, tau)
        for kappa in config.task.z_grid
        for tau in config.task.t_grid
    ]
    written = []
    if OutputFormat.CSV in config.output.formats:
        write_rows_csv(out / "smile.csv", _SMILE_HEADER, rows)
        written.append("smile.csv")
    if OutputFormat.DAT in config.output.formats:
        for kappa in config.task.z_grid:
            good = [r for r in rows if r[0] == repr(kappa) and r[7]]
            name = f"smile_kappa{kappa:g}.dat"
            write_curve(out / name, [float(r[1]) for r in good], [float(r[7]) for r in good])
            written.append(name)
    for r in rows:
        print("  ".join(f"{v:>12.12}" for v in r[:8]) + (f"  {r[8]}" if r[8] else ""))
    return written


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def _cmd_verify(config: RunConfig, corrupt: float | None) -> tuple[list[str], bool]:
    out = _output_dir(config)
    ctx = VerifyContext(mc=config.oracle.mc_config(), corrupt=corrupt, cache_dir=cache_dir())
    report = run_criteria(config.task.criteria, ctx)
    (out / "verify.json").write_text(report.to_json())
    print(report.summary())
    return ["verify.json"], report.all_passed


def main(argv: list[str] | None = None) -> None:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        sys.exit(0)
    _configure_logging(args.verbose)

    passed = True
    try:
        config = _load(args)
        logger.info("%s: task=%s order=%d", args.command, config.task.kind.value, config.task.order)
        if args.command == "verify":
            written, passed = _cmd_verify(config, args.corrupt)
        elif args.command == "smile":
            written = _cmd_smile(config)
        else:
            written = _cmd_expand(config)
        write_manifest(
            Path(config.output.directory),
            config.to_json(),
            [config.oracle.seed],
            written,
            args.command,
        )
    except NumericError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        sys.exit(EXIT_NUMERIC)
    except LsvxError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)

    if not passed:
        sys.exit(EXIT_CRITERION)


if __name__ == "__main__":
    main()
