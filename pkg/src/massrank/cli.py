"""Operator-facing command line.

Subcommands tie the library together over the documented file formats:

* ``score``         -- turn a conditional table into a score-matrix file;
* ``eval``          -- compute retrieval / winoground / foil / color
  metrics from a score matrix plus a manifest;
* ``pareto``        -- merge results docs into a recall/bias CSV with a
  frontier flag;
* ``oracle``        -- generate, export, and stress-test synthetic models;
* ``adapter-probe`` -- protocol-conformance canary against an adapter.

Every command is deterministic under a fixed ``--seed`` (the only entropy
source); outputs are written atomically with ``.digest`` sidecars.  Exit
codes: 0 ok, 1 usage, 2 validation, 3 adapter failure.  Flags may be
supplied as ``MASSRANK_*`` environment variables or through ``--config``
(a JSON file of per-command defaults); explicit flags win.
"""

from __future__ import annotations

import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import __version__
from .adapter_client import AdapterClient
from .dataio import (
    NULL_IMAGE_ID,
    dump_json_line,
    load_color_manifest,
    load_foil_manifest,
    load_results,
    load_retrieval_manifest,
    load_score_matrix,
    load_table,
    load_winoground_manifest,
    save_results,
    save_score_matrix,
    sha256_file,
    write_text_atomic,
)
from .errors import (
    AdapterError,
    InvalidInputError,
    MassrankError,
    MissingEntryError,
    TableFormatError,
)
from .marginal import METHOD_NULL, METHODS, sample_marginal
from .metrics import (
    ColorSample,
    ParetoPoint,
    bias_at_k,
    color_bias_stats,
    pairwise_ranking_accuracy,
    pareto_frontier,
    recall_at_k,
    winoground_scores,
    winoground_tag_breakdown,
)
from .ranking import ScoreMatrix
from .similarity import itc_score, itm_score, itm_score_vqa, mass_score, tl_score
from .toy import (
    BiasedFamilySpec,
    export_family,
    export_tables,
    make_biased_family,
    model_from_obj,
    model_to_obj,
    random_model,
    sample_texts,
)

SIMILARITIES = ("itc", "itm", "itm-vqa", "tl", "mass")
TL_MODES = ("prob-mean", "logprob-mean")

_EXIT_USAGE = 1
_EXIT_VALIDATION = 2
_EXIT_ADAPTER = 3


@click.group()
@click.version_option(__version__, prog_name="massrank")
@click.option(
    "--config",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="JSON file of per-command flag defaults; explicit flags win.",
)
@click.pass_context
def cli(ctx: click.Context, config: str | None) -> None:
    if config is not None:
        try:
            ctx.default_map = json.loads(Path(config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise click.UsageError(f"config file {config}: invalid JSON ({exc.msg})")


def _input_digest(path: str | Path) -> dict:
    return {"path": str(path), "sha256": sha256_file(path)}


def _load_pairs(path: str | Path) -> list[tuple[str, str]]:
    pairs: list[tuple[str, str]] = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TableFormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict) or "image" not in obj or "text" not in obj:
                raise TableFormatError(f"{path}:{lineno}: need 'image' and 'text' fields")
            image, text = obj["image"], obj["text"]
            for name, value in (("image", image), ("text", text)):
                if not isinstance(value, str) or not value:
                    raise TableFormatError(f"{path}:{lineno}: {name!r} must be a non-empty string")
                if value == NULL_IMAGE_ID:
                    raise TableFormatError(
                        f"{path}:{lineno}: reserved id {NULL_IMAGE_ID!r} cannot be scored"
                    )
            if (image, text) in seen:
                raise TableFormatError(f"{path}:{lineno}: duplicate pair ({image!r}, {text!r})")
            seen.add((image, text))
            pairs.append((image, text))
    if not pairs:
        raise TableFormatError(f"{path}: no pairs")
    return pairs


def _ordered_unique(items) -> list[str]:
    seen = set()
    out = []
    for item in items:
        if item not in seen:
            seen.add(item)
            out.append(item)
    return out


# ---------------------------------------------------------------------------
# score


@cli.command("score")
@click.option("--similarity", type=click.Choice(SIMILARITIES), required=True)
@click.option("--tl-mode", type=click.Choice(TL_MODES), default="prob-mean", show_default=True,
              help="Aggregation for the token-likelihood score.")
@click.option("--marginal", type=click.Choice(METHODS), default=METHOD_NULL, show_default=True,
              help="Marginal estimator for the debiased score.")
@click.option("--mc-n", type=int, default=None,
              help="Sample count; required iff --marginal is a Monte-Carlo variant.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--query-axis", type=click.Choice(("image", "text")), default="image",
              show_default=True, help="Which side of each pair becomes the matrix query.")
@click.option("--embeddings", "embeddings_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Embedding sidecar (required for itc).")
@click.option("--itm-table", "itm_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Matching-head sidecar (required for itm / itm-vqa).")
@click.option("--jobs", type=int, default=1, show_default=True)
@click.argument("table_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("pairs_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_path", type=click.Path(dir_okay=False))
def cmd_score(similarity, tl_mode, marginal, mc_n, seed, query_axis, embeddings_path,
              itm_path, jobs, table_path, pairs_path, out_path):
    """Score the pairs in PAIRS_PATH over TABLE_PATH into OUT_PATH."""
    if marginal == METHOD_NULL:
        if mc_n is not None:
            raise click.UsageError("--mc-n is only valid with a Monte-Carlo --marginal")
    else:
        if mc_n is None or mc_n < 1:
            raise click.UsageError("--mc-n (>= 1) is required with a Monte-Carlo --marginal")
    if jobs < 1:
        raise click.UsageError("--jobs must be >= 1")

    table = load_table(table_path, embeddings_path=embeddings_path, itm_path=itm_path)
    pairs = _load_pairs(pairs_path)
    images = _ordered_unique(img for img, _ in pairs)
    texts = _ordered_unique(text for _, text in pairs)
    if len(pairs) != len(images) * len(texts):
        present = set(pairs)
        want = next(
            (img, text) for img in images for text in texts if (img, text) not in present
        )
        raise InvalidInputError(
            f"pairs file must cover the full grid; missing ({want[0]!r}, {want[1]!r})"
        )

    # Marginals are per caption; compute them once, outside the pair loop.
    marginals = {}
    if similarity == "mass":
        for text in texts:
            marginals[text] = sample_marginal(table, text, marginal, mc_n or 1, seed)

    def pair_score(image: str, text: str) -> float:
        if similarity == "itc":
            return itc_score(table.embedding(image), table.embedding(text)).value
        if similarity in ("itm", "itm-vqa"):
            value = table.itm_value(image, text)
            if similarity == "itm":
                if isinstance(value, tuple):
                    raise InvalidInputError(
                        f"ITM entry for ({image!r}, {text!r}) holds yes/no log-probs; "
                        "use --similarity itm-vqa"
                    )
                return itm_score(value).value
            if not isinstance(value, tuple):
                raise InvalidInputError(
                    f"ITM entry for ({image!r}, {text!r}) holds a plain logit; "
                    "use --similarity itm"
                )
            return itm_score_vqa(value[0], value[1]).value
        if similarity == "tl":
            return tl_score(table.conditional(image, text), tl_mode).value
        return mass_score(table.conditional(image, text), marginals[text].logp).value

    order = [(img, text) for img in images for text in texts]
    values = np.empty(len(order), dtype=np.float64)

    def run_range(bounds: tuple[int, int]) -> None:
        lo, hi = bounds
        for idx in range(lo, hi):
            img, text = order[idx]
            values[idx] = pair_score(img, text)

    chunks = _split_ranges(len(order), jobs)
    if jobs == 1 or len(chunks) == 1:
        for bounds in chunks:
            run_range(bounds)
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(run_range, chunks))

    grid = values.reshape(len(images), len(texts))
    if query_axis == "image":
        matrix = ScoreMatrix(tuple(images), tuple(texts), grid)
    else:
        matrix = ScoreMatrix(tuple(texts), tuple(images), grid.T.copy())

    provenance = {
        "similarity": similarity,
        "tl_mode": tl_mode if similarity == "tl" else None,
        "marginal": (
            {"method": marginal, "n_samples": mc_n or 1, "seed": seed}
            if similarity == "mass"
            else None
        ),
        "query_axis": query_axis,
        "inputs": {
            "table": _input_digest(table_path),
            "pairs": _input_digest(pairs_path),
            **({"embeddings": _input_digest(embeddings_path)} if embeddings_path else {}),
            **({"itm": _input_digest(itm_path)} if itm_path else {}),
        },
        "tool": {"name": "massrank", "version": __version__},
    }
    save_score_matrix(matrix, out_path, provenance=provenance)
    click.echo(f"wrote {out_path} ({len(matrix.queries)}x{len(matrix.candidates)} scores)")


def _split_ranges(n: int, jobs: int) -> list[tuple[int, int]]:
    if n == 0:
        return []
    parts = min(max(1, jobs * 4), n)
    step = -(-n // parts)
    return [(lo, min(lo + step, n)) for lo in range(0, n, step)]


# ---------------------------------------------------------------------------
# eval


@cli.command("eval")
@click.option("--metric", type=click.Choice(("retrieval", "winoground", "foil", "color")),
              required=True)
@click.option("--k", "k_list", type=int, multiple=True, default=(1, 5, 10), show_default=True)
@click.option("--absolute-bias", is_flag=True, default=False,
              help="Report |skew| as the headline bias (both variants are always written).")
@click.option("--mixed-policy", type=click.Choice(("both", "neither")), default="both",
              show_default=True)
@click.option("--shortlist", type=int, default=20, show_default=True)
@click.option("--first-stage", "first_stage_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="First-stage score matrix; enables two-stage re-ranking.")
@click.option("--label", default=None, help="Point label carried into Pareto plots.")
@click.option("--jobs", type=int, default=1, show_default=True)
@click.argument("scores_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("manifest_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_path", type=click.Path(dir_okay=False))
def cmd_eval(metric, k_list, absolute_bias, mixed_policy, shortlist, first_stage_path,
             label, jobs, scores_path, manifest_path, out_path):
    """Evaluate SCORES_PATH against MANIFEST_PATH into a results doc."""
    if jobs < 1:
        raise click.UsageError("--jobs must be >= 1")
    if any(k < 1 for k in k_list):
        raise click.UsageError("--k values must be >= 1")
    scores, scores_provenance = load_score_matrix(scores_path)
    two_stage = None
    first_provenance = None
    if first_stage_path is not None:
        first, first_provenance = load_score_matrix(first_stage_path)
        two_stage = (first, shortlist)

    if metric == "retrieval":
        ds = load_retrieval_manifest(manifest_path)
        tasks = []
        for k in sorted(set(k_list)):
            tasks.append((f"recall@{k}", lambda k=k: recall_at_k(scores, ds, k, two_stage)))
            tasks.append(
                (f"bias@{k}",
                 lambda k=k: bias_at_k(scores, ds, k, False, two_stage, mixed_policy))
            )
            tasks.append(
                (f"bias_abs@{k}",
                 lambda k=k: bias_at_k(scores, ds, k, True, two_stage, mixed_policy))
            )
        results = _run_tasks(tasks, jobs)
        results["n_queries"] = len(ds.queries)
        results["headline_bias_variant"] = "absolute" if absolute_bias else "signed"
    elif metric == "winoground":
        samples = load_winoground_manifest(manifest_path)
        results = dict(winoground_scores(scores, samples))
        if any(s.tags for s in samples):
            results["by_tag"] = winoground_tag_breakdown(scores, samples)
    elif metric == "foil":
        foils = load_foil_manifest(manifest_path)
        results = {"accuracy": pairwise_ranking_accuracy(scores, foils), "n": len(foils)}
        categories = sorted({f.category for f in foils if f.category})
        if categories:
            results["by_category"] = {
                cat: {
                    "accuracy": pairwise_ranking_accuracy(scores, foils, cat),
                    "n": sum(f.category == cat for f in foils),
                }
                for cat in categories
            }
    else:
        rows = load_color_manifest(manifest_path)
        samples = [
            ColorSample(
                image=row["image"],
                fruit_type=row["fruit_type"],
                score_true=scores.score(row["image"], row["caption_true"]),
                score_adv=scores.score(row["image"], row["caption_adv"]),
            )
            for row in rows
        ]
        results = dict(color_bias_stats(samples))
        results["n"] = len(samples)

    provenance = {
        "metric": metric,
        "k_list": sorted(set(k_list)),
        "absolute_bias": absolute_bias,
        "mixed_policy": mixed_policy,
        "shortlist": shortlist if two_stage is not None else None,
        "label": label,
        "scores_provenance": scores_provenance,
        "first_stage_provenance": first_provenance,
        "inputs": {
            "scores": _input_digest(scores_path),
            "manifest": _input_digest(manifest_path),
            **({"first_stage": _input_digest(first_stage_path)} if first_stage_path else {}),
        },
        "tool": {"name": "massrank", "version": __version__},
    }
    save_results(results, provenance, out_path)
    click.echo(f"wrote {out_path}")


def _run_tasks(tasks, jobs: int) -> dict:
    """Run (name, thunk) metric tasks, possibly in parallel; dict in task order."""
    if jobs == 1 or len(tasks) == 1:
        return {name: thunk() for name, thunk in tasks}
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [(name, pool.submit(thunk)) for name, thunk in tasks]
        return {name: future.result() for name, future in futures}


# ---------------------------------------------------------------------------
# pareto


@cli.command("pareto")
@click.option("--k", type=int, required=True, help="The k whose recall/bias pair to plot.")
@click.option("--bias-variant", type=click.Choice(("signed", "absolute")), default="signed",
              show_default=True)
@click.argument("results_paths", nargs=-1, required=True,
                type=click.Path(exists=True, dir_okay=False))
@click.argument("out_csv", type=click.Path(dir_okay=False))
def cmd_pareto(k, bias_variant, results_paths, out_csv):
    """Merge results docs into a recall/bias CSV with a frontier flag."""
    key_bias = f"bias_abs@{k}" if bias_variant == "absolute" else f"bias@{k}"
    key_recall = f"recall@{k}"
    points = []
    for path in results_paths:
        doc = load_results(path)
        metrics = doc["metrics"]
        if key_recall not in metrics or key_bias not in metrics:
            raise InvalidInputError(f"{path}: missing {key_recall!r} or {key_bias!r}")
        label = doc["provenance"].get("label") or Path(path).stem
        points.append(ParetoPoint(label=label, recall=metrics[key_recall], bias=metrics[key_bias]))
    frontier_labels = {p.label for p in pareto_frontier(points)}
    lines = ["label,recall,bias,on_frontier"]
    for p in points:
        lines.append(f"{p.label},{p.recall!r},{p.bias!r},{int(p.label in frontier_labels)}")
    write_text_atomic(out_csv, "".join(line + "\n" for line in lines))
    click.echo(f"wrote {out_csv} ({len(points)} points, {len(frontier_labels)} on frontier)")


# ---------------------------------------------------------------------------
# oracle


@cli.group("oracle")
def cmd_oracle() -> None:
    """Generate and export exactly enumerable synthetic models."""


@cmd_oracle.command("gen")
@click.option("--images", "n_images", type=int, default=2, show_default=True)
@click.option("--vocab", "vocab_size", type=int, default=4, show_default=True)
@click.option("--max-len", type=int, default=3, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.argument("out_path", type=click.Path(dir_okay=False))
def cmd_oracle_gen(n_images, vocab_size, max_len, seed, out_path):
    """Write a random dense toy model as JSON."""
    model = random_model(n_images, vocab_size, max_len, seed)
    write_text_atomic(out_path, json.dumps(model_to_obj(model), sort_keys=True, indent=2) + "\n")
    click.echo(f"wrote {out_path}")


@cmd_oracle.command("export")
@click.option("--captions-file", type=click.Path(exists=True, dir_okay=False), default=None,
              help="One caption per line, tokens separated by spaces.")
@click.option("--sample-captions", type=int, default=None,
              help="Sample this many captions from the model instead.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--null-source", type=click.Choice(("exact-marginal", "model")),
              default="exact-marginal", show_default=True)
@click.option("--pairs-out", type=click.Path(dir_okay=False), default=None,
              help="Also write the full (image, text) grid as a pairs file.")
@click.argument("model_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_table", type=click.Path(dir_okay=False))
def cmd_oracle_export(captions_file, sample_captions, seed, null_source, pairs_out,
                      model_path, out_table):
    """Export exact conditional/marginal tables for a model."""
    if (captions_file is None) == (sample_captions is None):
        raise click.UsageError("give exactly one of --captions-file / --sample-captions")
    model = model_from_obj(json.loads(Path(model_path).read_text(encoding="utf-8")))
    if captions_file is not None:
        captions = []
        for raw in Path(captions_file).read_text(encoding="utf-8").splitlines():
            line = raw.strip()
            if line and not line.startswith("#"):
                captions.append(tuple(line.split()))
        if not captions:
            raise InvalidInputError(f"{captions_file}: no captions")
    else:
        if sample_captions < 1:
            raise click.UsageError("--sample-captions must be >= 1")
        captions = sample_texts(model, sample_captions, seed)
    table = export_tables(model, captions, null_source=null_source)
    _write_table_with_sidecars(table, out_table)
    if pairs_out is not None:
        _write_pairs(table, pairs_out)
    click.echo(f"wrote {out_table} ({len(table.entries)} entries)")


@cmd_oracle.command("family")
@click.option("--strength", type=float, required=True, help="Language-prior strength in (0, 1).")
@click.option("--n", "n_instances", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.argument("out_dir", type=click.Path(file_okay=False))
def cmd_oracle_family(strength, n_instances, seed, out_dir):
    """Emit a biased family: table, foil manifest, pairs, and metadata."""
    spec = BiasedFamilySpec(prior_strength=strength, n_instances=n_instances, seed=seed)
    instances = make_biased_family(spec)
    table, foils = export_family(instances)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_table_with_sidecars(table, out / "table.jsonl")
    _write_pairs(table, out / "pairs.jsonl")
    foil_lines = [
        dump_json_line(
            {
                "image": f.image,
                "caption_true": f.caption_true,
                "caption_foil": f.caption_foil,
                "category": f.category,
            }
        )
        for f in foils
    ]
    write_text_atomic(out / "foils.jsonl", "".join(line + "\n" for line in foil_lines))
    meta = {
        "prior_strength": strength,
        "n_instances": n_instances,
        "seed": seed,
        "guaranteed": {
            "mass_pairwise_accuracy": 1.0,
            "tl_prob_mean_pairwise_accuracy": 0.0,
        },
    }
    write_text_atomic(out / "meta.json", json.dumps(meta, sort_keys=True, indent=2) + "\n")
    click.echo(f"wrote {out_dir} ({n_instances} instances)")


def _write_table_with_sidecars(table, out_table) -> None:
    out_table = Path(out_table)
    base = out_table.name
    stem = base[: -len(".jsonl")] if base.endswith(".jsonl") else base
    emb = out_table.with_name(f"{stem}.emb.jsonl") if table.embeddings else None
    itm = out_table.with_name(f"{stem}.itm.jsonl") if table.itm else None
    from .dataio import save_table

    save_table(table, out_table, embeddings_path=emb, itm_path=itm)


def _write_pairs(table, out_path) -> None:
    lines = [
        dump_json_line({"image": image, "text": text})
        for image in table.image_ids()
        for text in table.text_ids()
    ]
    write_text_atomic(out_path, "".join(line + "\n" for line in lines))


# ---------------------------------------------------------------------------
# adapter probe


@cli.command("adapter-probe")
@click.option("--adapter", "endpoint", required=True,
              help="Adapter endpoint: proc:<command> or http(s)://host:port/path")
@click.option("--timeout", type=float, default=10.0, show_default=True)
@click.option("--retries", type=int, default=1, show_default=True)
def cmd_adapter_probe(endpoint, timeout, retries):
    """Send a canary batch (including a "null" item) and validate the replies."""
    canary = [
        {"image": NULL_IMAGE_ID, "text": "a photo of a cat"},
        {"image": NULL_IMAGE_ID, "text": "two dogs playing in the park"},
    ]
    with AdapterClient(endpoint, timeout=timeout, retries=retries) as client:
        digest = client.identity_digest()
        responses = client.token_logprobs(canary)
        again = client.token_logprobs(canary)
        if responses != again:
            raise AdapterError("adapter is nondeterministic: canary responses differ")
    click.echo(f"PASS adapter-identity {digest}")


# ---------------------------------------------------------------------------
# entry point


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False, auto_envvar_prefix="MASSRANK")
        return 0
    except click.exceptions.Exit as exc:  # --help / --version
        return int(exc.exit_code)
    except click.UsageError as exc:
        _print_error("UsageError", exc.format_message())
        return _EXIT_USAGE
    except click.ClickException as exc:
        _print_error(type(exc).__name__, exc.format_message())
        return _EXIT_USAGE
    except AdapterError as exc:
        _print_error(type(exc).__name__, str(exc))
        return _EXIT_ADAPTER
    except MassrankError as exc:
        _print_error(type(exc).__name__, str(exc))
        return _EXIT_VALIDATION
    except click.Abort:
        _print_error("Aborted", "interrupted")
        return _EXIT_USAGE


def _print_error(kind: str, message: str) -> None:
    flat = " ".join(str(message).split())
    click.echo(f"error\t{kind}\t{flat}", err=True)


if __name__ == "__main__":
    sys.exit(main())
