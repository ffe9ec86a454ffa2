"""Console entry point: load a checkpoint and serve it."""

from __future__ import annotations

import click
import uvicorn

from .model import EntailmentModel, ModelContractError
from .server import create_app


@click.command()
@click.option("--model", "model_id", required=True,
              help="Checkpoint name or local directory.")
@click.option("--host", default="0.0.0.0", show_default=True)
@click.option("--port", default=8750, show_default=True)
def main(model_id: str, host: str, port: int):
    """Serve the entailment wire protocol over a local model."""
    try:
        model = EntailmentModel.load(model_id)
    except (OSError, ValueError, ModelContractError) as exc:
        raise click.ClickException(f"cannot load model {model_id!r}: {exc}")
    uvicorn.run(create_app(model), host=host, port=port)


if __name__ == "__main__":
    main()
