"""Command-line entry points: run scenarios, validate fixtures, replay logs, serve."""

from __future__ import annotations

import json
import sys

import click

from .audit import load_log, replay as replay_log, verify_chain
from .errors import ModelGateError
from .scenario import ScenarioRunner, load_document, validate_scenario


@click.group()
def main():
    """Enforcement gateway and incident-response engine."""


@main.command()
@click.argument("scenario_path", type=click.Path(exists=True))
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option("--json-report", "report_path", type=click.Path(),
              help="Write the full report as JSON to this path.")
@click.option("--audit-log", "audit_path", type=click.Path(),
              help="Tee the audit log to this file while running.")
def run(scenario_path, seed, report_path, audit_path):
    """Run one scenario end to end; exit 0 iff every assertion passes."""
    import os
    try:
        doc = load_document(scenario_path)
        runner = ScenarioRunner(
            doc, base_dir=os.path.dirname(os.path.abspath(scenario_path)),
            seed=seed, audit_path=audit_path)
        report = runner.run()
    except ModelGateError as e:
        click.echo(f"error: {e.code}: {e}", err=True)
        sys.exit(2)
    for a in report.assertions:
        mark = "PASS" if a["passed"] else "FAIL"
        line = f"[{mark}] {a['name']}"
        if a["detail"] and not a["passed"]:
            line += f"  ({a['detail']})"
        click.echo(line)
    passed = sum(1 for a in report.assertions if a["passed"])
    click.echo(f"{passed}/{len(report.assertions)} assertions passed; "
               f"{report.requests_handled} requests handled")
    if report_path:
        with open(report_path, "w", encoding="utf-8") as fh:
            fh.write(report.to_json())
    sys.exit(0 if report.passed else 1)


@main.command()
@click.argument("scenario_path", type=click.Path(exists=True))
def validate(scenario_path):
    """Validate a scenario document (and its playbook) without running it."""
    import os
    from .scenario import build_stack
    try:
        doc = load_document(scenario_path)
        validate_scenario(doc)
        build_stack(doc, base_dir=os.path.dirname(os.path.abspath(scenario_path)))
    except ModelGateError as e:
        click.echo(f"invalid: {e.code}: {e}", err=True)
        sys.exit(1)
    click.echo(f"{doc['id']}: valid")


@main.command()
@click.argument("log_path", type=click.Path(exists=True))
def replay(log_path):
    """Verify an audit log file and print the reconstructed final state."""
    try:
        records = load_log(log_path)
        verify_chain(records)
        state = replay_log(records)
    except ModelGateError as e:
        click.echo(f"error: {e.code}: {e}", err=True)
        sys.exit(1)
    click.echo(json.dumps(state, indent=2, sort_keys=True))


@main.command()
@click.argument("scenario_path", type=click.Path(exists=True))
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8100)
@click.option("--seed", type=int, default=None)
def serve(scenario_path, host, port, seed):
    """Boot the stack from a scenario's fixtures and serve the control API.

    The stack runs on a virtual clock so drills can advance time via
    POST /internal/advance.
    """
    import os
    import uvicorn
    from .api import create_app
    from .scenario import build_stack
    doc = load_document(scenario_path)
    stack = build_stack(doc, base_dir=os.path.dirname(os.path.abspath(scenario_path)),
                        seed=seed)
    app = create_app(stack)
    uvicorn.run(app, host=host, port=port, log_level="warning")
