"""Operator CLI: every pipeline stage as a subcommand.

Commands exit 0 on success and nonzero with one machine-parsable error line
on stderr otherwise.  Outputs land in a run directory (timestamp plus config
fingerprint) unless ``--run-dir`` pins one; report files themselves contain
no timestamps, so reruns with the same fingerprint are byte-identical.
"""

from __future__ import annotations

import functools
import json
import sys
import time
from pathlib import Path

import click
import numpy as np
import yaml

from . import KERNEL_BACKEND, align, corpus, evaluate, rag, synthetic
from .config import EngineConfig, config_snapshot, load_config
from .embedder import embed_items, vectors_matrix
from .errors import ConfigError, EngineError
from .index import load_index, save_index, search_topk


def _engine_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except EngineError as exc:
            click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
            sys.exit(1)

    return wrapper


def _make_run_dir(out_root: str, run_dir: str | None, cfg: EngineConfig, label: str,
                  heads=None) -> Path:
    if run_dir:
        path = Path(run_dir)
    else:
        fp = evaluate.fingerprint(cfg.backend, None, cfg.scoring, cfg.backend.token_budget, cfg.seed)
        stamp = time.strftime("%Y%m%d-%H%M%S")
        path = Path(out_root) / f"{stamp}-{label}-{fp[:8]}"
    path.mkdir(parents=True, exist_ok=True)
    (path / "config.yaml").write_text(config_snapshot(cfg), encoding="utf-8")
    meta = {
        "seed": cfg.seed,
        "kernel_backend": KERNEL_BACKEND,
        "head_checkpoint": _head_hash(heads),
    }
    (path / "run.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                                   encoding="utf-8")
    return path


def _head_hash(heads) -> str | None:
    if heads is None:
        return None
    from . import hashing

    return hashing.content_digest(
        heads.query.weights.tobytes(), heads.target.weights.tobytes()
    )


def _common(fn):
    fn = click.option("--config", "config_path", type=click.Path(exists=True), default=None)(fn)
    fn = click.option("--data-root", default=None, help="root for relative image paths")(fn)
    fn = click.option("--seed", type=int, default=None)(fn)
    fn = click.option("--dim", type=int, default=None, help="embedding dimension")(fn)
    fn = click.option("--budget", "token_budget", type=int, default=None, help="token budget")(fn)
    fn = click.option("--cache-dir", default=None)(fn)
    fn = click.option("--out", "out_root", default="runs", help="run directory root")(fn)
    fn = click.option("--run-dir", default=None, help="exact run directory (overrides --out)")(fn)
    return fn


def _load(config_path, data_root, seed, dim, token_budget, cache_dir) -> EngineConfig:
    overrides = {
        "data_root": data_root,
        "seed": seed,
        "dim": dim,
        "token_budget": token_budget,
        "cache_dir": cache_dir,
    }
    cfg = load_config(config_path, overrides=overrides)
    if not cfg.data_root.exists():
        raise ConfigError(f"data_root {cfg.data_root} does not exist")
    return cfg


@click.group()
def main():
    """Multimodal code retrieval engine."""


@main.command()
@_common
@click.option("--train", "train_path", type=click.Path(exists=True), default=None)
@click.option("--eval", "eval_path", type=click.Path(exists=True), default=None)
@click.option("--task", default="qt→rc")
@click.option("--dataset", default="dataset")
@click.option("--lenient", is_flag=True)
@_engine_errors
def ingest(config_path, data_root, seed, dim, token_budget, cache_dir, out_root, run_dir,
           train_path, eval_path, task, dataset, lenient):
    """Validate a dataset file and report row counts."""
    cfg = _load(config_path, data_root, seed, dim, token_budget, cache_dir)
    run = _make_run_dir(out_root, run_dir, cfg, "ingest")
    if not train_path and not eval_path:
        raise ConfigError("pass --train or --eval")
    stats = {}
    if train_path:
        with open(train_path, encoding="utf-8") as fh:
            total = sum(1 for _ in fh)
        with open(train_path, encoding="utf-8") as fh:
            pairs = corpus.ingest_train(fh, lenient=lenient)
        stats["train"] = {"rows": total, "accepted": len(pairs), "rejected": total - len(pairs)}
        if pairs:
            (row,) = corpus.length_report({"train": pairs})
            stats["train"]["mean_units"] = row.mean_units
            stats["train"]["max_units"] = row.max_units
    if eval_path:
        with open(eval_path, encoding="utf-8") as fh:
            total = sum(1 for _ in fh)
        with open(eval_path, encoding="utf-8") as fh:
            pairs = corpus.ingest_eval(fh, task, dataset, lenient=lenient)
        stats["eval"] = {"rows": total, "accepted": len(pairs), "rejected": total - len(pairs)}
        if pairs:
            (row,) = corpus.length_report({"eval": pairs})
            stats["eval"]["mean_units"] = row.mean_units
            stats["eval"]["max_units"] = row.max_units
    (run / "ingest.json").write_text(json.dumps(stats, indent=2) + "\n", encoding="utf-8")
    click.echo(json.dumps(stats))


def _read_train(path: str) -> list[corpus.TrainingPair]:
    with open(path, encoding="utf-8") as fh:
        return corpus.ingest_train(fh)


def _read_eval(path: str, task: str, dataset: str) -> list[corpus.EvalPair]:
    with open(path, encoding="utf-8") as fh:
        return corpus.ingest_eval(fh, task, dataset)


def _serialized_sides(pairs, what: str, budget: int):
    items = []
    for pair in pairs:
        if what == "queries":
            item = pair.query_item()
            items.append(corpus.compose_target(item, budget))
        else:
            target = pair.positive_item() if isinstance(pair, corpus.TrainingPair) else pair.target_item()
            items.append(corpus.compose_target(target, budget))
    return items


@main.command()
@_common
@click.option("--train", "train_path", type=click.Path(exists=True), default=None)
@click.option("--eval", "eval_path", type=click.Path(exists=True), default=None)
@click.option("--task", default="qt→rc")
@click.option("--dataset", default="dataset")
@click.option("--what", type=click.Choice(["queries", "targets"]), default="targets")
@_engine_errors
def embed(config_path, data_root, seed, dim, token_budget, cache_dir, out_root, run_dir,
          train_path, eval_path, task, dataset, what):
    """Embed one side of a dataset file to an .npz matrix."""
    cfg = _load(config_path, data_root, seed, dim, token_budget, cache_dir)
    run = _make_run_dir(out_root, run_dir, cfg, "embed")
    if bool(train_path) == bool(eval_path):
        raise ConfigError("pass exactly one of --train / --eval")
    pairs = _read_train(train_path) if train_path else _read_eval(eval_path, task, dataset)
    items = _serialized_sides(pairs, what, cfg.backend.token_budget)
    vectors = embed_items(items, cfg.backend, str(cfg.data_root))
    matrix = vectors_matrix(vectors)
    out_path = run / "embeddings.npz"
    np.savez(out_path, vectors=matrix, rows=np.array([p.row for p in pairs], dtype=np.int64))
    click.echo(f"embedded {len(vectors)} items of dim {cfg.backend.dim} -> {out_path}")


@main.command()
@_common
@click.option("--train", "train_path", type=click.Path(exists=True), required=True)
@click.option("--steps", type=int, default=None, help="override total steps")
@click.option("--batch-size", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--shared-head", is_flag=True)
@_engine_errors
def train(config_path, data_root, seed, dim, token_budget, cache_dir, out_root, run_dir,
          train_path, steps, batch_size, lr, shared_head):
    """Train projection heads on a six-key training file."""
    from dataclasses import replace

    cfg = _load(config_path, data_root, seed, dim, token_budget, cache_dir)
    trainer = cfg.trainer
    if steps is not None:
        trainer = replace(trainer, total_steps=steps,
                          warmup_steps=min(trainer.warmup_steps, steps))
    if batch_size is not None:
        trainer = replace(trainer, batch_size=batch_size)
    if lr is not None:
        trainer = replace(trainer, learning_rate=lr)
    if shared_head:
        trainer = replace(trainer, shared_head=True)
    if seed is not None:
        trainer = replace(trainer, seed=seed)
    cfg = replace(cfg, trainer=trainer)
    run = _make_run_dir(out_root, run_dir, cfg, "train")

    pairs = _read_train(train_path)
    budget = cfg.backend.token_budget
    root = str(cfg.data_root)
    query_rows = vectors_matrix(
        embed_items([corpus.compose_target(p.query_item(), budget) for p in pairs], cfg.backend, root)
    ).astype(np.float64)
    positive_rows = vectors_matrix(
        embed_items([corpus.compose_target(p.positive_item(), budget) for p in pairs], cfg.backend, root)
    ).astype(np.float64)
    negatives = None
    if any(p.negative_item() is not None for p in pairs):
        negatives = []
        for p in pairs:
            item = p.negative_item()
            if item is None:
                negatives.append(np.empty((0, cfg.backend.dim)))
            else:
                vec = embed_items([corpus.compose_target(item, budget)], cfg.backend, root)[0]
                negatives.append(np.asarray(vec.values, dtype=np.float64).reshape(1, -1))

    heads, curve = align.train_heads(
        query_rows, positive_rows, cfg.trainer, cfg.scoring,
        hard_negative_rows=negatives, checkpoint_dir=run,
    )
    paths = align.save_head_pair(heads, run / "head")
    (run / "loss.csv").write_text(align.loss_curve_csv(curve), encoding="utf-8")
    click.echo(f"trained {cfg.trainer.total_steps} steps; final loss {curve[-1][1]:.6f}; "
               f"heads: {', '.join(str(p) for p in paths)}")


@main.command("index")
@_common
@click.option("--train", "train_path", type=click.Path(exists=True), required=True)
@click.option("--head", "head_stem", default=None, help="head checkpoint stem")
@click.option("--tag", default="corpus")
@click.option("--index-out", "index_out", default=None)
@_engine_errors
def index_cmd(config_path, data_root, seed, dim, token_budget, cache_dir, out_root, run_dir,
              train_path, head_stem, tag, index_out):
    """Build a searchable index from a training file's positives."""
    cfg = _load(config_path, data_root, seed, dim, token_budget, cache_dir)
    run = _make_run_dir(out_root, run_dir, cfg, "index")
    pairs = _read_train(train_path)
    heads = align.load_head_pair(head_stem) if head_stem else None
    corpus_obj = rag.build_rag_corpus(
        pairs, cfg.backend, heads, cfg.backend.token_budget, tag, str(cfg.data_root)
    )
    out_path = Path(index_out) if index_out else run / f"{tag}.idx"
    save_index(corpus_obj.index, out_path)
    (run / f"{tag}.codes.json").write_text(
        json.dumps(corpus_obj.codes, indent=0, sort_keys=True) + "\n", encoding="utf-8"
    )
    click.echo(f"indexed {len(corpus_obj.index)} items -> {out_path}")


@main.command()
@_common
@click.option("--index", "index_path", type=click.Path(exists=True), required=True)
@click.option("--head", "head_stem", default=None)
@click.option("--text", default=None)
@click.option("--code", default=None)
@click.option("--image", "image_path", type=click.Path(exists=True), default=None)
@click.option("--inst", default=None, help="instruction text override")
@click.option("-k", type=int, default=5)
@_engine_errors
def search(config_path, data_root, seed, dim, token_budget, cache_dir, out_root, run_dir,
           index_path, head_stem, text, code, image_path, inst, k):
    """Rank index items against a free-form query."""
    cfg = _load(config_path, data_root, seed, dim, token_budget, cache_dir)
    idx = load_index(index_path)
    heads = align.load_head_pair(head_stem) if head_stem else None
    item = corpus.ModalItem(text=text, code=code, image_ref=image_path)
    if inst:
        instruction = corpus.Instruction("cli", inst)
    else:
        instruction = corpus.instruction_for(
            f"q{corpus.mask_letters(item.modality_mask).lower()}→rc"
        )
    serialized = corpus.compose_query(item, instruction, cfg.backend.token_budget)
    vector = embed_items([serialized], cfg.backend, str(cfg.data_root))[0]
    row = np.asarray(vector.values, dtype=np.float64)
    if heads is not None:
        row = heads.query.project(row)
    result = search_topk(idx, row.astype(np.float32), k=min(k, len(idx)))
    for rank, (item_id, score) in enumerate(result.hits, start=1):
        ref = idx.payload_refs[item_id]
        click.echo(f"{rank}\t{item_id}\t{score:.6f}\t{ref.dataset_tag}:{ref.row}:{ref.modality_mask}")


def _manifest_entries(manifest_path: str) -> list[evaluate.ManifestEntry]:
    raw = yaml.safe_load(Path(manifest_path).read_text(encoding="utf-8"))
    if not isinstance(raw, list):
        raise ConfigError("manifest must be a list of {dataset, task, file} rows")
    base = Path(manifest_path).parent
    entries = []
    for row in raw:
        missing = {"dataset", "task", "file"} - set(row)
        if missing:
            raise ConfigError(f"manifest row missing {sorted(missing)}: {row}")
        entries.append(
            evaluate.ManifestEntry(
                dataset_tag=row["dataset"],
                task_tag=row["task"],
                path=base / row["file"],
                add_instruction=bool(row.get("add_instruction", False)),
            )
        )
    return entries


@main.command("eval")
@_common
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), default=None)
@click.option("--file", "eval_path", type=click.Path(exists=True), default=None)
@click.option("--task", default="qt→rc")
@click.option("--dataset", default="dataset")
@click.option("--head", "head_stem", default=None)
@click.option("--merge-pools", is_flag=True,
              help="rank every query against the union of all tasks' targets")
@_engine_errors
def eval_cmd(config_path, data_root, seed, dim, token_budget, cache_dir, out_root, run_dir,
             manifest_path, eval_path, task, dataset, head_stem, merge_pools):
    """Evaluate retrieval metrics for a manifest or a single file."""
    cfg = _load(config_path, data_root, seed, dim, token_budget, cache_dir)
    heads = align.load_head_pair(head_stem) if head_stem else None
    run = _make_run_dir(out_root, run_dir, cfg, "eval", heads=heads)
    if bool(manifest_path) == bool(eval_path):
        raise ConfigError("pass exactly one of --manifest / --file")
    if manifest_path:
        entries = _manifest_entries(manifest_path)
        reports = evaluate.evaluate_suite(
            entries, cfg.backend, heads, cfg.scoring, cfg.backend.token_budget,
            image_root=str(cfg.data_root), seed=cfg.seed, merge_pools=merge_pools,
        )
    else:
        pairs = _read_eval(eval_path, task, dataset)
        reports = [
            evaluate.evaluate_task(
                pairs, cfg.backend, heads, cfg.scoring, cfg.backend.token_budget,
                image_root=str(cfg.data_root), seed=cfg.seed,
            ).report
        ]
    (run / "report.csv").write_text(evaluate.reports_to_csv(reports), encoding="utf-8")
    (run / "report.json").write_text(evaluate.reports_to_json(reports), encoding="utf-8")
    click.echo(evaluate.reports_to_csv(reports), nl=False)


@main.command("ablate-len")
@_common
@click.option("--file", "eval_path", type=click.Path(exists=True), required=True)
@click.option("--task", default="qt→rc")
@click.option("--dataset", default="dataset")
@click.option("--head", "head_stem", default=None)
@click.option("--budgets", default="128,256,512")
@_engine_errors
def ablate_len(config_path, data_root, seed, dim, token_budget, cache_dir, out_root, run_dir,
               eval_path, task, dataset, head_stem, budgets):
    """Evaluate the same task at several token budgets."""
    cfg = _load(config_path, data_root, seed, dim, token_budget, cache_dir)
    run = _make_run_dir(out_root, run_dir, cfg, "ablate")
    heads = align.load_head_pair(head_stem) if head_stem else None
    budget_list = [int(b) for b in budgets.split(",") if b.strip()]
    pairs = _read_eval(eval_path, task, dataset)
    by_budget = evaluate.length_ablation(
        pairs, cfg.backend, heads, cfg.scoring, budget_list,
        image_root=str(cfg.data_root), seed=cfg.seed,
    )
    lines = ["budget," + evaluate.CSV_HEADER]
    for budget in budget_list:
        lines.append(f"{budget},{by_budget[budget].csv_row()}")
    text = "\n".join(lines) + "\n"
    (run / "ablation.csv").write_text(text, encoding="utf-8")
    click.echo(text, nl=False)


@main.command("rag")
@_common
@click.option("--file", "eval_path", type=click.Path(exists=True), required=True)
@click.option("--task", default="qi→rc")
@click.option("--dataset", default="dataset")
@click.option("--corpus-train", "corpus_path", type=click.Path(exists=True), required=True)
@click.option("--head", "head_stem", default=None)
@click.option("-k", type=int, default=1)
@click.option("--guard", type=click.Choice(["hash", "string"]), default="hash")
@click.option("--generate-endpoint", default=None)
@_engine_errors
def rag_cmd(config_path, data_root, seed, dim, token_budget, cache_dir, out_root, run_dir,
            eval_path, task, dataset, corpus_path, head_stem, k, guard, generate_endpoint):
    """Build guarded retrieval-augmented prompts for an eval file."""
    cfg = _load(config_path, data_root, seed, dim, token_budget, cache_dir)
    run = _make_run_dir(out_root, run_dir, cfg, "rag")
    heads = align.load_head_pair(head_stem) if head_stem else None
    root = str(cfg.data_root)
    corpus_obj = rag.build_rag_corpus(
        _read_train(corpus_path), cfg.backend, heads, cfg.backend.token_budget, "train-corpus", root
    )
    rag_cfg = rag.RagConfig(corpus_tag="train-corpus", k=k, guard=rag.GuardMode(guard))
    pairs = _read_eval(eval_path, task, dataset)
    log_path = run / "prompts.jsonl"
    with open(log_path, "w", encoding="utf-8") as log:
        for pair in pairs:
            query = pair.query_item()
            exemplars = rag.retrieve_exemplars(
                query, corpus_obj, rag_cfg, cfg.backend, heads, cfg.backend.token_budget,
                image_root=root, guard_target=pair.tgt_text,
            )
            prompt = rag.build_prompt(query, exemplars, rag_cfg.prompt_template_id,
                                      rag_cfg.max_exemplar_units)
            record = {
                "row": pair.row,
                "prompt_hash": prompt.query_ref,
                "exemplar_ids": [ex.id for ex in prompt.exemplars],
                "prompt": prompt.rendered,
            }
            if generate_endpoint:
                text, meta = rag.generate(
                    prompt, generate_endpoint, model_id=cfg.backend.model_id,
                    image_path=pair.qry_img_path,
                )
                gen_dir = run / "generations"
                gen_dir.mkdir(exist_ok=True)
                out_path = gen_dir / f"row-{pair.row:05d}.txt"
                out_path.write_text(text, encoding="utf-8")
                record["output_path"] = str(out_path)
                record["generation_meta"] = meta
            log.write(json.dumps(record, ensure_ascii=False) + "\n")
    click.echo(f"wrote {len(pairs)} prompts -> {log_path}")


@main.command()
@_common
@click.option("--index", "index_specs", multiple=True, required=True,
              help="tag=path.idx (repeatable)")
@click.option("--head", "head_stem", default=None)
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8080)
@_engine_errors
def serve(config_path, data_root, seed, dim, token_budget, cache_dir, out_root, run_dir,
          index_specs, head_stem, host, port):
    """Serve read-only retrieval over HTTP."""
    from .service import ServiceState, make_server

    cfg = _load(config_path, data_root, seed, dim, token_budget, cache_dir)
    corpora = {}
    for spec in index_specs:
        tag, _, path = spec.partition("=")
        if not path:
            raise ConfigError(f"--index expects tag=path, got {spec!r}")
        corpora[tag] = load_index(path)
    heads = align.load_head_pair(head_stem) if head_stem else None
    state = ServiceState(corpora=corpora, backend=cfg.backend, heads=heads,
                         image_root=str(cfg.data_root))
    server = make_server(state, host, port)
    click.echo(f"serving {sorted(corpora)} on {server.server_address[0]}:{server.server_address[1]}")
    server.serve_forever()


@main.command()
@_common
@click.option("--kind", type=click.Choice(["planted", "position"]), required=True)
@click.option("--dest", type=click.Path(), required=True)
@_engine_errors
def synth(config_path, data_root, seed, dim, token_budget, cache_dir, out_root, run_dir,
          kind, dest):
    """Generate a synthetic dataset into --dest."""
    dest_dir = Path(dest)
    dest_dir.mkdir(parents=True, exist_ok=True)
    gen_seed = seed if seed is not None else 7
    if kind == "planted":
        data = synthetic.planted_dataset(seed=gen_seed)
        (dest_dir / "planted_train.jsonl").write_text(
            synthetic.rows_to_jsonl(data.train_rows), encoding="utf-8")
        (dest_dir / "planted_heldout.jsonl").write_text(
            synthetic.rows_to_jsonl(data.heldout_rows), encoding="utf-8")
        click.echo(f"wrote {len(data.train_rows)} train / {len(data.heldout_rows)} held-out rows")
    else:
        rows = synthetic.position_dataset(seed=gen_seed)
        (dest_dir / "position_eval.jsonl").write_text(
            synthetic.rows_to_jsonl(rows), encoding="utf-8")
        click.echo(f"wrote {len(rows)} position-fixture rows")


@main.command()
@_common
@click.option("--steps", type=int, default=200)
@_engine_errors
def smoke(config_path, data_root, seed, dim, token_budget, cache_dir, out_root, run_dir, steps):
    """End-to-end pipeline on the bundled fixtures: ingest through evaluate."""
    from importlib import resources

    cfg = _load(config_path, data_root, seed, dim, token_budget, cache_dir)
    run = _make_run_dir(out_root, run_dir, cfg, "smoke")
    fixture_root = resources.files("mmcoir") / "fixtures"
    with resources.as_file(fixture_root) as root:
        ctx = click.get_current_context()
        common = dict(config_path=config_path, data_root=str(root), seed=seed, dim=dim,
                      token_budget=token_budget, cache_dir=cache_dir, out_root=out_root)
        ctx.invoke(ingest, run_dir=str(run / "ingest"), train_path=str(root / "smoke_train.jsonl"),
                   eval_path=None, task="qt→rc", dataset="smoke", lenient=False, **common)
        ctx.invoke(train, run_dir=str(run / "train"), train_path=str(root / "smoke_train.jsonl"),
                   steps=steps, batch_size=None, lr=None, shared_head=False, **common)
        ctx.invoke(index_cmd, run_dir=str(run / "index"),
                   train_path=str(root / "smoke_train.jsonl"),
                   head_stem=str(run / "train" / "head"), tag="smoke", index_out=None, **common)
        ctx.invoke(eval_cmd, run_dir=str(run / "eval"), manifest_path=str(root / "manifest.yaml"),
                   eval_path=None, task="qt→rc", dataset="smoke",
                   head_stem=str(run / "train" / "head"), **common)
    click.echo(f"smoke pipeline complete under {run}")


if __name__ == "__main__":
    main()
