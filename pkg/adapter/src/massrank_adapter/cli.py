"""Adapter command line: serve the protocol, export tables, build the
tiny smoke checkpoint."""

from __future__ import annotations

import sys

import click

from . import __version__


@click.group()
@click.version_option(__version__, prog_name="massrank-adapter")
def cli() -> None:
    pass


@cli.command("make-tiny-checkpoint")
@click.option("--seed", type=int, default=0, show_default=True)
@click.argument("out_dir", type=click.Path(file_okay=False))
def cmd_make_tiny_checkpoint(seed: int, out_dir: str) -> None:
    """Create the deterministic tiny captioning checkpoint."""
    from .tiny import make_tiny_checkpoint

    path = make_tiny_checkpoint(out_dir, seed=seed)
    click.echo(f"wrote checkpoint to {path}")


@cli.command("serve")
@click.option("--model", "checkpoint", required=True,
              help="Checkpoint path or hub id.")
@click.option("--http", "http_port", type=int, default=None, metavar="PORT",
              help="Serve over HTTP instead of stdin/stdout (0 picks a free port).")
def cmd_serve(checkpoint: str, http_port: int | None) -> None:
    """Answer identity / token_logprobs requests over the wire protocol."""
    from .model import CaptioningScorer
    from .server import serve_http, serve_stdio

    scorer = CaptioningScorer(checkpoint)
    if http_port is not None:
        serve_http(scorer, http_port)
    else:
        serve_stdio(scorer)


@cli.command("export")
@click.option("--model", "checkpoint", required=True)
@click.option("--coco-json", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--image-root", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--grid", type=click.Choice(("full", "paired")), default="full",
              show_default=True, help="full scores every image against every caption.")
@click.option("--pairs-out", type=click.Path(dir_okay=False), default=None)
@click.option("--manifest-out", type=click.Path(dir_okay=False), default=None)
@click.option("--limit-images", type=int, default=None)
@click.option("--limit-captions", type=int, default=None)
@click.argument("out_table", type=click.Path(dir_okay=False))
def cmd_export(checkpoint, coco_json, image_root, grid, pairs_out, manifest_out,
               limit_images, limit_captions, out_table) -> None:
    """Export a conditional table (with null rows) from COCO-format inputs."""
    from .export import export_table
    from .model import CaptioningScorer

    scorer = CaptioningScorer(checkpoint)
    summary = export_table(
        scorer, coco_json, image_root, out_table,
        grid=grid, pairs_out=pairs_out, manifest_out=manifest_out,
        limit_images=limit_images, limit_captions=limit_captions,
    )
    click.echo(
        f"wrote {out_table}: {summary['conditional_rows']} conditional rows, "
        f"{summary['null_rows']} null rows "
        f"({summary['images']} images x {summary['captions']} captions)"
    )


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.ClickException as exc:
        click.echo(f"error\t{type(exc).__name__}\t{exc.format_message()}", err=True)
        return 1
    except Exception as exc:  # adapter-domain errors: single-line, exit 2
        message = " ".join(str(exc).split())
        click.echo(f"error\t{type(exc).__name__}\t{message}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
