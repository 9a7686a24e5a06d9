"""
Command line interface for maximum correlation modelling.
"""

import functools
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import click
import numpy as np
import pandas as pd
import structlog
from rich.console import Console
from rich.markup import escape
from rich.panel import Panel
from rich.table import Table

from . import artifacts
from .baselines import compare_normalizations, scale_invariance_probe
from .config import RunConfig
from .dataset import (
    Dataset,
    apply_derived,
    load_csv,
    make_positive,
    read_numeric_table,
    rescale_column,
    shift_column,
    sign_flip,
)
from .errors import ConfigError, MaxCorrError, SchemaError
from .model import ExpandedModel, composite_y, expand, predict_frame, regress_y_on_x
from .oracle import cca_first_pair, pearson_consistency_check
from .resonance import integer_search, nearest_integer_report
from .solver import FitResult, FitStatus, build_constraints, build_normalization, maximize, solve_for_target
from .stats import weight_labels

console = Console(stderr=True)
logger = structlog.get_logger(__name__)

EXIT_INFEASIBLE = 3
EXIT_NOT_CONVERGED = 4


def configure_logging(verbose: bool) -> None:
    structlog.configure(
        wrapper_class=structlog.make_filtering_bound_logger(logging.DEBUG if verbose else logging.INFO),
        # Resolve stderr per logger so redirected streams are honoured.
        logger_factory=lambda *args: structlog.PrintLogger(sys.stderr),
        cache_logger_on_first_use=False,
    )


def handle_errors(command: Callable) -> Callable:
    """Render package errors on stderr and exit with their code."""

    @functools.wraps(command)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return command(*args, **kwargs)
        except MaxCorrError as e:
            console.print(f"❌ [red]{type(e).__name__}: {escape(str(e))}[/red]")
            sys.exit(e.exit_code)

    return wrapper


@click.group()
@click.option("--config", "-c", type=click.Path(), help="Run configuration (JSON or YAML)")
@click.option("--data", type=click.Path(), help="Data CSV, overrides the configuration")
@click.option("--out", type=click.Path(), help="Artifact path (default: stdout)")
@click.option("--seed", type=int, help="Solver seed, overrides the configuration")
@click.option("--format", "fmt", type=click.Choice(["json", "csv"]), help="Artifact format")
@click.option("--verbose", "-v", is_flag=True, help="Verbose logging")
@click.pass_context
def cli(
    ctx: click.Context,
    config: Optional[str],
    data: Optional[str],
    out: Optional[str],
    seed: Optional[int],
    fmt: Optional[str],
    verbose: bool,
) -> None:
    """Maximum correlation modelling: constrained canonical correlation fits."""
    configure_logging(verbose)
    ctx.ensure_object(dict)
    ctx.obj.update(config=config, data=data, out=out, seed=seed, fmt=fmt)


def load_run_config(ctx: click.Context) -> RunConfig:
    opts = ctx.obj
    if not opts.get("config"):
        raise ConfigError("this command needs --config")
    return RunConfig.load_from_file(
        Path(opts["config"]), data_path=opts["data"], seed=opts["seed"], out=opts["out"], fmt=opts["fmt"]
    )


def prepare_dataset(cfg: RunConfig) -> Dataset:
    """Load the CSV, apply in-place re-codings, the positivity shift and derived columns."""
    if cfg.data is None:
        raise ConfigError("no data file: set 'data' in the configuration or pass --data")
    roles = cfg.roles
    ds = load_csv(cfg.data, roles.side_map())
    for spec in roles.recode:
        if spec.kind == "sign_flip":
            ds = sign_flip(ds, spec.column)
        elif spec.kind == "shift":
            ds = shift_column(ds, spec.column, spec.constant)
        else:
            ds = rescale_column(ds, spec.column, spec.constant)
    if roles.make_positive:
        ds = make_positive(ds)
    return apply_derived(ds, roles.derived)


def emit(cfg: Optional[RunConfig], text: str, out: Optional[str] = None) -> None:
    path = out or (cfg.output.path if cfg is not None else None)
    if path:
        artifacts.write_atomic(path, text)
        console.print(f"✅ [green]Artifact written to {escape(str(path))}[/green]")
    else:
        click.echo(text, nl=False)


def exit_for_status(result: FitResult) -> None:
    if result.status is FitStatus.INFEASIBLE:
        console.print("❌ [red]Solver status: infeasible[/red]")
        sys.exit(EXIT_INFEASIBLE)
    if result.status is FitStatus.MAX_ITERATIONS:
        console.print("⚠️  [yellow]Solver status: max_iterations (not converged)[/yellow]")
        sys.exit(EXIT_NOT_CONVERGED)
    if result.status is FitStatus.NUMERICAL_FAILURE:
        console.print("⚠️  [yellow]Solver status: numerical_failure[/yellow]")
        sys.exit(EXIT_NOT_CONVERGED)


def fit_summary(title: str, result: FitResult, extra: Optional[Dict[str, Any]] = None) -> None:
    table = Table(title=title)
    table.add_column("Weight", style="cyan")
    table.add_column("Value", style="green", justify="right")
    if result.weights is not None:
        for label, value in zip(result.weights.labels, result.weights.vector):
            table.add_row(label, f"{value:.6g}")
    console.print(table)
    lines = [f"Status: {result.status.value}"]
    if result.correlation is not None:
        lines.append(f"Correlation: {result.correlation:.10f}")
    lines.append(f"Starts agreeing: {result.starts_agreeing}/{len(result.starts)}")
    for key, value in (extra or {}).items():
        lines.append(f"{key}: {value}")
    console.print(Panel.fit("\n".join(lines), title="Fit"))


def _fit_document(
    command: str, cfg: RunConfig, ds: Dataset, result: FitResult, labels: List[str]
) -> Dict[str, Any]:
    payload: Dict[str, Any] = {"fit": result.to_dict()}
    if result.weights is not None:
        norm = build_normalization(cfg.normalization, labels)
        line = regress_y_on_x(ds, result.weights, cfg.regression.direction)
        model = expand(line, result.weights, ds.lineage_map(), result.correlation, norm.describe(labels))
        payload.update(line=line.to_dict(), model=model.to_dict())
    return artifacts.envelope(command, cfg.resolved(), payload)


def _fit_csv(document: Dict[str, Any]) -> pd.DataFrame:
    result = document["result"]
    fit = result["fit"]
    rows = [("status", fit["status"]), ("correlation", fit["correlation"])]
    if fit["weights"] is not None:
        for side in ("a", "b"):
            rows += [(f"{side}.{name}", value) for name, value in fit["weights"][side].items()]
    if "line" in result:
        rows += [(key, result["line"][key]) for key in ("slope", "intercept", "r_squared")]
    return pd.DataFrame(rows, columns=["quantity", "value"])


def _write_fit(cfg: RunConfig, document: Dict[str, Any]) -> None:
    if cfg.output.format == "csv":
        emit(cfg, artifacts.to_csv(_fit_csv(document), document["config"]))
    else:
        emit(cfg, artifacts.to_json(document))


@cli.command()
@click.pass_context
@handle_errors
def fit(ctx: click.Context) -> None:
    """Maximize the constrained correlation, then regress Y on X and expand."""
    cfg = load_run_config(ctx)
    ds = prepare_dataset(cfg)
    labels = weight_labels(ds)
    constraints = build_constraints(cfg.constraints, labels)
    norm = build_normalization(cfg.normalization, labels)

    result = maximize(ds, constraints, norm, cfg.solver)
    document = _fit_document("fit", cfg, ds, result, labels)
    _write_fit(cfg, document)

    extra = {}
    if "line" in document["result"]:
        line = document["result"]["line"]
        extra = {"Line": f"Y = {line['slope']:.6g} X + {line['intercept']:.6g} (r² = {line['r_squared']:.6g})"}
    fit_summary("Maximum correlation weights", result, extra)
    exit_for_status(result)


@cli.command()
@click.pass_context
@handle_errors
def target(ctx: click.Context) -> None:
    """Find constraint-satisfying weights reaching the configured target correlation."""
    cfg = load_run_config(ctx)
    if cfg.target is None:
        raise ConfigError("the target command needs 'target' in the configuration")
    ds = prepare_dataset(cfg)
    labels = weight_labels(ds)
    constraints = build_constraints(cfg.constraints, labels)
    norm = build_normalization(cfg.normalization, labels)

    result = solve_for_target(ds, constraints, norm, cfg.target, cfg.solver)
    document = _fit_document("target", cfg, ds, result, labels)
    _write_fit(cfg, document)
    fit_summary(f"Weights at target {cfg.target}", result, {"Constrained maximum": result.maximum})
    exit_for_status(result)


@cli.command()
@click.pass_context
@handle_errors
def cca(ctx: click.Context) -> None:
    """Unconstrained first canonical correlation (eigen-decomposition)."""
    cfg = load_run_config(ctx)
    ds = prepare_dataset(cfg)
    solution = cca_first_pair(ds)
    consistency = pearson_consistency_check(ds, solution)
    document = artifacts.envelope("cca", cfg.resolved(), {"cca": solution.to_dict(), "consistency": consistency})

    if cfg.output.format == "csv":
        rows = [("rho", solution.rho)]
        rows += [(label, value) for label, value in zip(solution.weights.labels, solution.weights.vector)]
        emit(cfg, artifacts.to_csv(pd.DataFrame(rows, columns=["quantity", "value"]), document["config"]))
    else:
        emit(cfg, artifacts.to_json(document))
    console.print(Panel.fit(f"rho = {solution.rho:.10f}\nconsistency = {consistency:.3g}", title="Canonical correlation"))


@cli.command("ls-compare")
@click.pass_context
@handle_errors
def ls_compare(ctx: click.Context) -> None:
    """Least-squares fits under every normalization, plus a units-change probe."""
    cfg = load_run_config(ctx)
    ds = prepare_dataset(cfg)
    report = compare_normalizations(ds, cfg.solver)
    column = cfg.ls_compare.probe_column or ds.x_names[0]
    probe = scale_invariance_probe(ds, column, cfg.ls_compare.probe_factor, cfg.solver)
    document = artifacts.envelope(
        "ls-compare", cfg.resolved(), {"comparison": report.to_dict(), "probe": probe.to_dict()}
    )

    if cfg.output.format == "csv":
        frame = pd.DataFrame(
            [
                {"normalized": m.normalized_label, "sse": m.sse, "achieved_correlation": m.achieved_correlation}
                for m in report.models
            ]
        )
        emit(cfg, artifacts.to_csv(frame, document["config"]))
    else:
        emit(cfg, artifacts.to_json(document))

    table = Table(title="Least squares by normalization")
    table.add_column("Normalized", style="cyan")
    table.add_column("SSE", justify="right")
    table.add_column("Correlation", style="green", justify="right")
    for m in report.models:
        corr = "degenerate" if m.achieved_correlation is None else f"{m.achieved_correlation:.8f}"
        table.add_row(m.normalized_label, f"{m.sse:.6g}", corr)
    console.print(table)
    console.print(
        Panel.fit(
            f"Max correlation: {report.maxcorr_correlation:.8f}\n"
            f"Max LS divergence: {report.max_divergence:.4g} rad\n"
            + "\n".join(
                f"Probe {e.method} ({e.normalization}): {e.divergence:.3g} rad"
                + (" (equivariant)" if e.equivariant else "")
                for e in probe.entries
            ),
            title=f"Rescaling {column} by {probe.factor:g}",
        )
    )


@cli.command()
@click.pass_context
@handle_errors
def resonance(ctx: click.Context) -> None:
    """Exhaustive integer-coefficient search, emitted as JSON lines."""
    cfg = load_run_config(ctx)
    ds = prepare_dataset(cfg)
    report = integer_search(ds, cfg.resonance)
    header: Dict[str, Any] = {
        "command": "resonance",
        "config": cfg.resolved(),
        "enumeration_size": report.enumeration_size,
        "evaluated": report.evaluated,
        "degenerate": report.degenerate,
    }

    if cfg.resonance.threshold is not None:
        labels = weight_labels(ds)
        norm = build_normalization(cfg.normalization, labels)
        result = maximize(ds, build_constraints(cfg.constraints, labels), norm, cfg.solver)
        if result.weights is not None:
            line = regress_y_on_x(ds, result.weights, cfg.regression.direction)
            model = expand(line, result.weights, ds.lineage_map(), result.correlation)
            nearest = nearest_integer_report(
                model.as_weight_pair(), cfg.resonance.threshold, cfg.resonance.zero_tolerance
            )
            header["nearest_integer"] = {"correlation": result.correlation, **nearest.to_dict()}

    if cfg.output.format == "csv":
        rows = []
        for hit in report.hits:
            row = {f"a.{n}": v for n, v in zip(hit.x_names, hit.a)}
            row.update({f"b.{n}": v for n, v in zip(hit.y_names, hit.b)})
            row["correlation"] = hit.correlation
            rows.append(row)
        emit(cfg, artifacts.to_csv(pd.DataFrame(rows), header["config"]))
    else:
        emit(cfg, artifacts.to_json_lines(header, (hit.to_dict() for hit in report.hits)))

    table = Table(title=f"Top integer combinations (bound {cfg.resonance.bound})")
    table.add_column("a", style="cyan")
    table.add_column("b", style="magenta")
    table.add_column("Correlation", style="green", justify="right")
    for hit in report.hits:
        table.add_row(str(list(hit.a)), str(list(hit.b)), f"{hit.correlation:.8f}")
    console.print(table)


@cli.command()
@click.option("--model", "model_path", required=True, type=click.Path(), help="Fit artifact (JSON)")
@click.option("--rows", "rows_path", required=True, type=click.Path(), help="CSV of raw x-side values")
@click.pass_context
@handle_errors
def predict(ctx: click.Context, model_path: str, rows_path: str) -> None:
    """Expected composite Y for each row, recomputing derived columns from lineage."""
    for path in (model_path, rows_path):
        if not Path(path).exists():
            raise ConfigError(f"file not found: {path}")
    document = artifacts.read_json(model_path)
    payload = document.get("result", document)
    if not isinstance(payload, dict) or "model" not in payload:
        raise SchemaError(f"{model_path} holds no fitted model")
    model = ExpandedModel.from_dict(payload["model"])

    rows = read_numeric_table(rows_path, comment="#")
    frame = rows.copy()
    frame["expected_y"] = predict_frame(model, rows)
    raw = {name: rows[name].to_numpy(dtype=float) for name in rows.columns}
    try:
        actual = np.broadcast_to(composite_y(model, raw), (len(rows),))
        frame["composite_y"] = actual
        frame["residual"] = actual - frame["expected_y"].to_numpy()
    except SchemaError:
        logger.debug("rows carry no y-side values; residuals omitted")

    config = {"model": str(model_path), "rows": str(rows_path), "fit": document.get("config")}
    emit(None, artifacts.to_csv(frame, config), ctx.obj.get("out"))
    console.print(f"✅ [green]{len(frame)} predictions[/green]")


def main() -> None:
    """Main entry point for the CLI."""
    cli()


if __name__ == "__main__":
    main()
