"""Command-line client for the verbkit service.

Each subcommand posts to the HTTP service. By default an in-process service
instance handles the request, so no server needs to be running; pass
``--server`` to talk to a remote one. Exit codes: 0 success, 2 configuration
error, 3 stage failure.
"""

from __future__ import annotations

import asyncio
import json
import sys

import click
import httpx

EXIT_CONFIG = 2
EXIT_STAGE = 3


def _request(server: str | None, path: str, payload: dict) -> tuple[int, dict]:
    async def go():
        if server:
            async with httpx.AsyncClient(base_url=server, timeout=3600.0) as client:
                resp = await client.post(path, json=payload)
                return resp.status_code, resp.json()
        from .service.app import create_app

        transport = httpx.ASGITransport(app=create_app())
        async with httpx.AsyncClient(
            transport=transport, base_url="http://verbkit.internal", timeout=3600.0
        ) as client:
            resp = await client.post(path, json=payload)
            return resp.status_code, resp.json()

    return asyncio.run(go())


def call(ctx: click.Context, path: str, payload: dict) -> dict:
    server = ctx.obj.get("server")
    try:
        status, body = _request(server, path, payload)
    except httpx.HTTPError as e:
        click.echo(f"error: cannot reach service ({e})", err=True)
        sys.exit(EXIT_STAGE)
    if status == 200:
        return body
    detail = body.get("detail", body)
    if not isinstance(detail, str):
        detail = json.dumps(detail)
    click.echo(f"error: {detail}", err=True)
    sys.exit(EXIT_CONFIG if status in (400, 422) else EXIT_STAGE)


def _overrides(pairs: dict) -> dict:
    return {k: v for k, v in pairs.items() if v is not None}


@click.group()
@click.option("--server", default=None, help="Base URL of a running service; in-process if omitted.")
@click.pass_context
def main(ctx, server):
    """Knowledge-enriched weighted verbalizers for prompt classification."""
    ctx.ensure_object(dict)
    ctx.obj["server"] = server


@main.command()
@click.option("--classes", "classes_path", required=True, type=click.Path())
@click.option("--cache", "cache_dir", default="", type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--related-words-url", default=None)
@click.option("--reverse-dictionary-url", default=None)
@click.pass_context
def retrieve(ctx, classes_path, cache_dir, out_path, config_path, related_words_url, reverse_dictionary_url):
    """Query the knowledge bases for every class into a raw terms file."""
    body = call(
        ctx,
        "/retrieve",
        {
            "classes_path": classes_path,
            "cache_dir": cache_dir,
            "out_path": out_path,
            "config_path": config_path,
            "overrides": _overrides(
                {
                    "related_words_url": related_words_url,
                    "reverse_dictionary_url": reverse_dictionary_url,
                }
            ),
        },
    )
    click.echo(f"retrieved {body['terms']} terms for {body['classes']} classes -> {body['out_path']}")


@main.command("train-nli")
@click.option("--pairs", "pairs_path", required=True, type=click.Path())
@click.option("--kind", required=True, type=click.Choice(["bi", "cross"]))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--epochs", "encoder_epochs", default=None, type=int)
@click.option("--lr", "encoder_lr", default=None, type=float)
@click.option("--dim", "encoder_dim", default=None, type=int)
@click.option("--seed", "encoder_seed", default=None, type=int)
@click.pass_context
def train_nli(ctx, pairs_path, kind, out_dir, config_path, encoder_epochs, encoder_lr, encoder_dim, encoder_seed):
    """Binarize NLI pairs and fine-tune one encoder (bi or cross)."""
    body = call(
        ctx,
        "/train-nli",
        {
            "pairs_path": pairs_path,
            "kind": kind,
            "out_dir": out_dir,
            "config_path": config_path,
            "overrides": _overrides(
                {
                    "encoder_epochs": encoder_epochs,
                    "encoder_lr": encoder_lr,
                    "encoder_dim": encoder_dim,
                    "encoder_seed": encoder_seed,
                }
            ),
        },
    )
    dropped = sum(body["dropped"].values())
    click.echo(f"trained {body['kind']} encoder on {body['pairs_used']} pairs (dropped {dropped}) -> {body['out_dir']}")


@main.command("filter")
@click.option("--in", "raw_terms_path", required=True, type=click.Path())
@click.option("--classes", "classes_path", required=True, type=click.Path())
@click.option("--be", "be_dir", default=None, type=click.Path())
@click.option("--ce", "ce_dir", default=None, type=click.Path())
@click.option("--mu-be", "mu_be", default=None, type=float)
@click.option("--mu-ce", "mu_ce", default=None, type=float)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--no-fl", is_flag=True, help="Skip the semantic filter; keep all terms at weight 1.")
@click.option("--template", default=None)
@click.option("--config", "config_path", default=None, type=click.Path())
@click.pass_context
def filter_cmd(ctx, raw_terms_path, classes_path, be_dir, ce_dir, mu_be, mu_ce, out_path, no_fl, template, config_path):
    """Score retrieved terms with the NLI encoders and prune."""
    overrides = _overrides(
        {
            "classes_path": classes_path,
            "be_dir": be_dir,
            "ce_dir": ce_dir,
            "mu_be": mu_be,
            "mu_ce": mu_ce,
            "template": template,
        }
    )
    if no_fl:
        overrides["use_filtering"] = False
    body = call(
        ctx,
        "/filter",
        {
            "raw_terms_path": raw_terms_path,
            "out_path": out_path,
            "config_path": config_path,
            "overrides": overrides,
        },
    )
    click.echo(f"kept {body['kept_terms']} of {body['raw_terms']} terms -> {body['out_path']}")
    if body["cross_class_duplicates"]:
        click.echo(f"note: {len(body['cross_class_duplicates'])} term(s) appear under multiple classes")


@main.command()
@click.option("--verbalizer", "verbalizer_path", required=True, type=click.Path())
@click.option("--support", "support_path", default=None, type=click.Path())
@click.option("--dataset", "dataset_path", default=None, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--backend", default=None)
@click.option("--template", default=None)
@click.option("--config", "config_path", default=None, type=click.Path())
@click.pass_context
def calibrate(ctx, verbalizer_path, support_path, dataset_path, out_path, backend, template, config_path):
    """Prune filtered terms against backend priors over a support set."""
    body = call(
        ctx,
        "/calibrate",
        {
            "verbalizer_path": verbalizer_path,
            "out_path": out_path,
            "config_path": config_path,
            "overrides": _overrides(
                {
                    "support_path": support_path,
                    "dataset_path": dataset_path,
                    "backend": backend,
                    "template": template,
                }
            ),
        },
    )
    click.echo(f"calibrated: {body['before']} -> {body['after']} terms -> {body['out_path']}")


@main.command()
@click.option("--verbalizer", "verbalizer_path", required=True, type=click.Path())
@click.option("--dataset", "dataset_path", required=True, type=click.Path())
@click.option("--test", "test_path", default=None, type=click.Path())
@click.option("--shots", required=True, type=int)
@click.option("--seed", required=True, type=int)
@click.option("--soft", is_flag=True)
@click.option("--no-ss", is_flag=True, help="Ignore semantic weights (all weights 1).")
@click.option("--no-cl", is_flag=True, help="Skip calibration.")
@click.option("--run-dir", default="run", type=click.Path())
@click.option("--backend", default=None)
@click.option("--epochs", default=None, type=int)
@click.option("--config", "config_path", default=None, type=click.Path())
@click.pass_context
def train(ctx, verbalizer_path, dataset_path, test_path, shots, seed, soft, no_ss, no_cl, run_dir, backend, epochs, config_path):
    """Fine-tune the masked LM on one few-shot split."""
    overrides = _overrides(
        {"dataset_path": dataset_path, "test_path": test_path, "backend": backend, "epochs": epochs}
    )
    if soft:
        overrides["soft"] = True
    if no_ss:
        overrides["use_semantic_scores"] = False
    if no_cl:
        overrides["use_calibration"] = False
    body = call(
        ctx,
        "/train",
        {
            "verbalizer_path": verbalizer_path,
            "shots": shots,
            "seed": seed,
            "run_dir": run_dir,
            "config_path": config_path,
            "overrides": overrides,
        },
    )
    line = f"tuned: best epoch {body['best_epoch']}, val accuracy {body['val_accuracy']:.4f}"
    if body.get("test_accuracy") is not None:
        line += f", test accuracy {body['test_accuracy']:.4f}"
    click.echo(line + f" -> {body['run_dir']}")


@main.command("zero-shot")
@click.option("--verbalizer", "verbalizer_path", required=True, type=click.Path())
@click.option("--dataset", "dataset_path", required=True, type=click.Path())
@click.option("--support", "support_path", default=None, type=click.Path())
@click.option("--no-ss", is_flag=True)
@click.option("--no-cl", is_flag=True)
@click.option("--backend", default=None)
@click.option("--config", "config_path", default=None, type=click.Path())
@click.pass_context
def zero_shot(ctx, verbalizer_path, dataset_path, support_path, no_ss, no_cl, backend, config_path):
    """Classify a test file with no parameter updates."""
    overrides = _overrides({"backend": backend})
    if no_ss:
        overrides["use_semantic_scores"] = False
    if no_cl:
        overrides["use_calibration"] = False
    body = call(
        ctx,
        "/zero-shot",
        {
            "verbalizer_path": verbalizer_path,
            "dataset_path": dataset_path,
            "support_path": support_path,
            "config_path": config_path,
            "overrides": overrides,
        },
    )
    click.echo(f"zero-shot accuracy {body['accuracy']:.4f} over {body['examples']} examples")


@main.command()
@click.option("--verbalizer", "verbalizer_path", required=True, type=click.Path())
@click.option("--abstract", required=True)
@click.option("--backend", default=None)
@click.option("--config", "config_path", default=None, type=click.Path())
@click.pass_context
def classify(ctx, verbalizer_path, abstract, backend, config_path):
    """Classify one abstract."""
    body = call(
        ctx,
        "/classify",
        {
            "verbalizer_path": verbalizer_path,
            "abstract": abstract,
            "config_path": config_path,
            "overrides": _overrides({"backend": backend}),
        },
    )
    click.echo(f"{body['class_id']}\t{body['name']}")


@main.command("eval")
@click.option("--report", "report_dir", required=True, type=click.Path())
@click.pass_context
def eval_cmd(ctx, report_dir):
    """Tabulate run reports: shots by method, mean and standard deviation."""
    body = call(ctx, "/eval", {"report_dir": report_dir})
    click.echo(body["table"])


@main.command()
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--no-ss", is_flag=True)
@click.option("--no-cl", is_flag=True)
@click.option("--no-fl", is_flag=True)
@click.option("--zero-shot", "zero_shot_mode", is_flag=True)
@click.option("--soft", is_flag=True)
@click.option("--set", "assignments", multiple=True, help="Extra config overrides, key=value.")
@click.pass_context
def run(ctx, config_path, no_ss, no_cl, no_fl, zero_shot_mode, soft, assignments):
    """Run the full pipeline: retrieve, filter, calibrate, tune or zero-shot, eval."""
    overrides: dict = {}
    for assignment in assignments:
        if "=" not in assignment:
            click.echo(f"error: --set expects key=value, got {assignment!r}", err=True)
            sys.exit(EXIT_CONFIG)
        key, _, value = assignment.partition("=")
        overrides[key.strip()] = value.strip()
    if no_ss:
        overrides["use_semantic_scores"] = False
    if no_cl:
        overrides["use_calibration"] = False
    if no_fl:
        overrides["use_filtering"] = False
    if zero_shot_mode:
        overrides["zero_shot"] = True
    if soft:
        overrides["soft"] = True
    body = call(ctx, "/run", {"config_path": config_path, "overrides": overrides})
    for name in body["ran"]:
        click.echo(f"ran: {name}")
    for name in body["skipped"]:
        click.echo(f"skipped (inputs unchanged): {name}")
    if body["table"]:
        click.echo(body["table"])
    click.echo(f"report: {body['report_path']}")


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8321, type=int)
def serve(host, port):
    """Start the HTTP service."""
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
