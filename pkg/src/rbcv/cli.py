"""Thin-client CLI.

Every subcommand builds a request model and posts it to the service:
against a remote server when ``--server URL`` is given, otherwise
against the app mounted in-process (same endpoints, no network). All
heavy lifting lives behind the HTTP surface.
"""

from __future__ import annotations

import json
import sys

import click

from .errors import RbcvError


class ServiceClient:
    """httpx client against a remote server, or an in-process mount."""

    def __init__(self, server: str | None):
        if server:
            import httpx
            self._client = httpx.Client(base_url=server, timeout=None)
        else:
            import warnings
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                from starlette.testclient import TestClient

                from .service.app import create_app
                self._client = TestClient(create_app(),
                                          raise_server_exceptions=False)

    def post(self, path: str, payload: dict) -> dict:
        resp = self._client.post(path, json=payload)
        if resp.status_code != 200:
            try:
                detail = resp.json().get("detail", resp.text)
            except Exception:
                detail = resp.text
            raise click.ClickException(f"{path} failed ({resp.status_code}): {detail}")
        return resp.json()

    def get(self, path: str) -> dict:
        resp = self._client.get(path)
        if resp.status_code != 200:
            raise click.ClickException(f"{path} failed ({resp.status_code})")
        return resp.json()


pass_client = click.make_pass_decorator(ServiceClient)


@click.group()
@click.option("--server", default=None, metavar="URL",
              help="Target a running service instead of the in-process app.")
@click.pass_context
def main(ctx, server):
    """Reduced-basis control variates: greedy runs, online queries,
    theory probes."""
    ctx.obj = ServiceClient(server)


def _run_payload(config, preset, out, seed) -> dict:
    return {"config_path": config, "preset": preset, "out_dir": out,
            "seed": seed}


def _echo_run(data: dict) -> None:
    click.echo(f"out_dir: {data['out_dir']}")
    for v in data["variants"]:
        flag = " [truncated]" if v["truncated"] else ""
        click.echo(f"  {v['variant']}: N={v['n_iterations']} "
                   f"retries={v['total_retries']} final_m={v['final_m']} "
                   f"stop={v['terminated_reason']}{flag}")
    for w in data["warnings"]:
        click.echo(f"  warning: {w}", err=True)
    click.echo("files: " + ", ".join(data["files"]))


@main.command()
@click.option("--config", type=click.Path(), help="TOML config or manifest.json (replay).")
@click.option("--preset", type=str, help="Named preset, e.g. tc1-desk.")
@click.option("--out", type=click.Path(), help="Output directory.")
@click.option("--seed", type=int, default=None, help="Override the master seed.")
@pass_client
def run(client, config, preset, out, seed):
    """Run the configured greedy variant(s) and write trace/basis/online files."""
    _echo_run(client.post("/run", _run_payload(config, preset, out, seed)))


@main.command()
@click.option("--config", type=click.Path(), help="TOML config or manifest.json.")
@click.option("--preset", type=str, help="Named preset.")
@click.option("--out", type=click.Path(), help="Output directory.")
@click.option("--seed", type=int, default=None, help="Override the master seed.")
@pass_client
def compare(client, config, preset, out, seed):
    """Run several variants on one sample universe and emit compare.csv."""
    _echo_run(client.post("/compare", _run_payload(config, preset, out, seed)))


@main.command()
@click.option("--basis", "basis_path", required=True, type=click.Path(),
              help="basis_<variant>.json from a run.")
@click.option("--mu", "mus", type=float, multiple=True, required=True,
              help="Parameter value (repeatable).")
@click.option("--m-small", type=int, required=True, help="Small-batch size.")
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Also write the rows as CSV.")
@pass_client
def online(client, basis_path, mus, m_small, seed, out_path):
    """Estimate expectations for a list of parameters from a saved basis."""
    data = client.post("/online", {"basis_path": basis_path, "mus": list(mus),
                                   "m_small": m_small, "seed": seed,
                                   "out_path": out_path})
    click.echo(f"basis size: {data['basis_size']}, m_small: {data['m_small']}")
    for row in data["rows"]:
        e = "undefined" if row["e_rel"] is None else f"{row['e_rel']:.3e}"
        m = "inf" if row["m_mc"] is None else f"{row['m_mc']:.4g}"
        click.echo(f"  mu={row['mu']:.6g} estimate={row['estimate']:.10g} "
                   f"e_rel={e} m_mc={m}")
    if data["csv_path"]:
        click.echo(f"csv: {data['csv_path']}")


@main.command("validate-theory")
@click.option("--family", type=click.Choice(["tc1", "tc2"]), default="tc1")
@click.option("--out", required=True, type=click.Path())
@click.option("--trials", type=int, default=1000)
@click.option("--delta", type=float, default=0.1)
@click.option("--seed", type=int, default=20240901)
@pass_client
def validate_theory(client, family, out, trials, delta, seed):
    """Probe the concentration inequality and tabulate the sample bounds."""
    data = client.post("/validate-theory",
                       {"family": family, "out_dir": out, "trials": trials,
                        "delta": delta, "seed": seed})
    click.echo(f"fitted C={data['c_const']:.4g} c={data['c_rate']:.4g} "
               f"R^2={data['r_squared']:.4f} over {data['n_points']} points")
    click.echo(f"first sample bound: {data['first_bound']}")
    click.echo("files: " + ", ".join(data["files"]))


@main.command("mesh-dump")
@click.option("--n-per-side", type=int, default=16, show_default=True)
@click.option("--out", required=True, type=click.Path())
@pass_client
def mesh_dump(client, n_per_side, out):
    """Write the structured mesh as CSV (vertices, triangles)."""
    data = client.post("/mesh-dump", {"n_per_side": n_per_side, "out_dir": out})
    click.echo(f"{data['n_vertices']} vertices, {data['n_triangles']} triangles "
               f"-> {data['out_dir']}: " + ", ".join(data["files"]))


@main.command()
@pass_client
def presets(client):
    """List the named presets."""
    for p in client.get("/presets"):
        scale = "desk" if p["desk"] else "paper"
        click.echo(f"{p['name']:14s} family={p['family']:7s} scale={scale}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8321, show_default=True)
def serve(host, port):
    """Start the HTTP service."""
    import uvicorn

    from .service.app import create_app
    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    try:
        main()
    except RbcvError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
