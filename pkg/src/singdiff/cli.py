"""Command line for the pipeline, a thin client over the HTTP service.

Every subcommand reads the config file locally, posts it with the
request, and renders the response. By default the service runs
in-process over an ASGI transport, so no server needs to be up; pass
--server URL to talk to a running instance instead (paths in arguments
then refer to the server's filesystem).

Exit codes: 0 success, 1 validation error, 2 threshold failure.
"""

from __future__ import annotations

import asyncio
import sys
from pathlib import Path

import click
import httpx

__all__ = ["main"]

_IN_PROCESS_URL = "http://singdiff.internal"


def _post(server: str | None, path: str, payload: dict) -> httpx.Response:
    if server:
        try:
            with httpx.Client(base_url=server, timeout=None) as client:
                return client.post(path, json=payload)
        except httpx.HTTPError as exc:
            click.echo(f"error: cannot reach {server}: {exc}", err=True)
            sys.exit(1)

    async def in_process() -> httpx.Response:
        from .service import create_app

        transport = httpx.ASGITransport(app=create_app())
        async with httpx.AsyncClient(transport=transport,
                                     base_url=_IN_PROCESS_URL,
                                     timeout=None) as client:
            return await client.post(path, json=payload)

    return asyncio.run(in_process())


def _finish(response: httpx.Response) -> dict:
    if response.status_code == 400:
        click.echo(f"error: {response.json()['detail']}", err=True)
        sys.exit(1)
    if response.status_code != 200:
        click.echo(f"error: service returned {response.status_code}: "
                   f"{response.text}", err=True)
        sys.exit(1)
    return response.json()


def _config_text(config_path: str) -> str:
    return Path(config_path).read_text(encoding="utf-8")


def config_option(f):
    return click.option("--config", "config_path", required=True,
                        type=click.Path(exists=True, dir_okay=False),
                        help="Run configuration file.")(f)


def server_option(f):
    return click.option("--server", default=None, metavar="URL",
                        help="Running service to use instead of in-process.")(f)


@click.group()
def main() -> None:
    """Semi-supervised singing-voice-synthesis pipeline."""


@main.command()
@click.argument("corpus_dir")
@config_option
@server_option
@click.option("--out", "out_dir", required=True, help="Dataset output directory.")
def prepare(corpus_dir: str, config_path: str, server: str | None,
            out_dir: str) -> None:
    """Build a dataset from a corpus of label files (+ optional audio)."""
    data = _finish(_post(server, "/prepare", {
        "config_text": _config_text(config_path),
        "corpus_dir": corpus_dir,
        "out_dir": out_dir,
    }))
    counts = ", ".join(f"{name}: {n}" for name, n
                       in sorted(data["labeling_counts"].items()))
    click.echo(f"prepared {data['n_items']} items ({counts})")
    click.echo(f"config_hash = {data['config_hash']}")
    for failure in data["failures"]:
        click.echo(f"skipped {failure}", err=True)
    if not data["ok"]:
        click.echo("error: failure budget exceeded", err=True)
        sys.exit(2)


@main.command()
@click.argument("data_dir")
@config_option
@server_option
@click.option("--out", "run_dir", required=True, help="Run output directory.")
@click.option("--seed", default=0, show_default=True, type=int)
def train(data_dir: str, config_path: str, server: str | None, run_dir: str,
          seed: int) -> None:
    """Train the score estimator on a prepared dataset."""
    data = _finish(_post(server, "/train", {
        "config_text": _config_text(config_path),
        "data_dir": data_dir,
        "run_dir": run_dir,
        "seed": seed,
    }))
    click.echo(f"trained {data['n_steps']} steps, "
               f"final loss {data['final_loss']:.5f}")
    for path in data["checkpoints"]:
        click.echo(f"checkpoint {path}")


@main.command()
@click.argument("checkpoint")
@click.argument("label_file")
@config_option
@server_option
@click.option("--out", "out_dir", required=True, help="Sample output directory.")
@click.option("--seed", default=None, type=int,
              help="Override the configured sampler seed.")
def sample(checkpoint: str, label_file: str, config_path: str,
           server: str | None, out_dir: str, seed: int | None) -> None:
    """Sample a mel-spectrogram for one label file."""
    data = _finish(_post(server, "/sample", {
        "config_text": _config_text(config_path),
        "checkpoint": checkpoint,
        "label_path": label_file,
        "out_dir": out_dir,
        "seed": seed,
    }))
    click.echo(f"wrote {data['mel_path']} ({data['n_frames']} frames)")
    click.echo(f"wrote {data['meta_path']}")


@main.command("eval")
@click.argument("ref_dir")
@click.argument("gen_dir")
@config_option
@server_option
@click.option("--out", "out_dir", default=None,
              help="Also write the report files into this directory.")
def eval_cmd(ref_dir: str, gen_dir: str, config_path: str,
             server: str | None, out_dir: str | None) -> None:
    """Compare generated mels against references by file stem."""
    data = _finish(_post(server, "/eval", {
        "config_text": _config_text(config_path),
        "ref_dir": ref_dir,
        "gen_dir": gen_dir,
    }))
    click.echo(data["text"], nl=False)
    click.echo(data["kv"], nl=False)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval_report.txt").write_text(data["text"], encoding="utf-8")
        (out / "eval_report.kv").write_text(data["kv"], encoding="utf-8")


@main.command("oracle-check")
@config_option
@server_option
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--n-points", default=1000, show_default=True, type=int)
def oracle_check(config_path: str, server: str | None, seed: int,
                 n_points: int) -> None:
    """Verify the guidance algebra against the analytic oracle."""
    data = _finish(_post(server, "/oracle-check", {
        "config_text": _config_text(config_path),
        "n_points": n_points,
        "seed": seed,
    }))
    click.echo(data["text"], nl=False)
    if not data["passed"]:
        sys.exit(2)


if __name__ == "__main__":
    main()
