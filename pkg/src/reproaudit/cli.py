"""Command-line entry point.

Exit code contract: 0 means the audited project ran out-of-the-box (or the
requested operation completed), 1 means the project failed its audit, and 2
means the harness itself faulted (missing toolchain, bad store path, ...).
"""

from __future__ import annotations

import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path

import click

from . import classifier, closure, envmgr, metrics, pipeline, report as report_mod, store as store_mod
from .config import HarnessConfig, default_home
from .report import FORMATS, ratio

logger = logging.getLogger(__name__)


class CorpusError(Exception):
    pass


@dataclass
class CorpusEntry:
    path: Path
    agent: str
    prompt_id: str
    language: str | None = None
    entry: str | None = None
    patches: Path | None = None
    prompt_text: str | None = None  # provenance only, never executed


@dataclass
class CorpusManifest:
    entries: list[CorpusEntry] = field(default_factory=list)

    @classmethod
    def load(cls, path: Path) -> "CorpusManifest":
        try:
            doc = json.loads(Path(path).read_text("utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise CorpusError(f"cannot load corpus manifest {path}: {exc}") from exc
        raw_entries = doc.get("projects") if isinstance(doc, dict) else doc
        if not isinstance(raw_entries, list):
            raise CorpusError("corpus manifest must be a list or have a 'projects' list")
        base = Path(path).parent
        entries = []
        seen: set[tuple[str, str]] = set()
        for item in raw_entries:
            project_path = Path(item["path"])
            if not project_path.is_absolute():
                project_path = base / project_path
            if not project_path.is_dir():
                raise CorpusError(f"project path does not exist: {project_path}")
            entry = CorpusEntry(
                path=project_path,
                agent=str(item.get("agent", "unknown")),
                prompt_id=str(item.get("prompt_id", project_path.name)),
                language=item.get("language"),
                entry=item.get("entry"),
                patches=Path(item["patches"]) if item.get("patches") else None,
                prompt_text=item.get("prompt_text"),
            )
            key = (entry.agent, entry.prompt_id)
            if key in seen:
                raise CorpusError(f"duplicate (agent, prompt_id): {key}")
            seen.add(key)
            entries.append(entry)
        return cls(entries)


def _common_options(func):
    options = [
        click.option("--home", type=click.Path(path_type=Path), default=None,
                     help="Results root (default: $REPRO_AUDIT_HOME or ./repro_audit)."),
        click.option("--timeout", type=float, default=120.0, show_default=True,
                     help="Execution timeout in seconds."),
        click.option("--max-iterations", type=int, default=10, show_default=True,
                     help="Cap on fix rounds after round 0."),
        click.option("--offline", is_flag=True, help="Install only from local mirrors."),
        click.option("--mirror", "mirrors", multiple=True, metavar="ECOSYSTEM=DIR",
                     help="Mirror directory for offline installs (repeatable)."),
        click.option("--keep-env", is_flag=True, help="Skip environment teardown (debugging)."),
        click.option("--tracer-dir", type=click.Path(path_type=Path), default=None,
                     help="Directory holding the python import-trace hook."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _build_config(home, timeout, max_iterations, offline, mirrors, keep_env, tracer_dir, jobs=1) -> HarnessConfig:
    mirror_map = {}
    for item in mirrors:
        ecosystem, _, directory = item.partition("=")
        if not directory:
            raise click.BadParameter(f"--mirror expects ECOSYSTEM=DIR, got {item!r}")
        mirror_map[ecosystem] = Path(directory)
    config = HarnessConfig(
        home=home or default_home(),
        execution_timeout=timeout,
        max_iterations=max_iterations,
        offline=offline,
        mirrors=mirror_map,
        keep_env=keep_env,
        jobs=jobs,
    )
    if tracer_dir is not None:
        config.tracer_dir = tracer_dir
    return config


def _print_verdict(record: metrics.AuditRecord) -> None:
    click.echo(f"project      : {record.project_path}")
    click.echo(f"language     : {record.language}   agent: {record.agent}   prompt: {record.prompt_id}")
    click.echo(f"entry        : {record.entry or 'n/a'}")
    click.echo(f"out_of_box   : {record.out_of_box}")
    click.echo(f"outcome      : {record.outcome}   final: {record.final_status}")
    click.echo(f"claimed      : {len(record.claimed)}   added: {len(record.added)}   gap: {record.gap}")
    runtime = len(record.runtime) if record.runtime is not None else "n/a"
    click.echo(f"runtime deps : {runtime}   multiplier: {ratio(record.multiplier)}   capture: {record.capture_method or 'n/a'}")
    if record.category:
        click.echo(f"category     : {record.category}")


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
def main(verbose: bool):
    """Reproducibility-audit harness."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command()
@click.argument("project_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--agent", default="unknown", show_default=True)
@click.option("--prompt-id", default="", help="Prompt identifier (default: directory name).")
@click.option("--language", type=click.Choice(["python", "javascript", "java"]), default=None)
@click.option("--entry", default=None, help="Entry command (verbatim override).")
@click.option("--patches", type=click.Path(path_type=Path), default=None,
              help="Patch ledger directory (default: <project>/patches).")
@click.option("--no-store", is_flag=True, help="Do not append the record to the store.")
@_common_options
def audit(project_dir, agent, prompt_id, language, entry, patches, no_store, **flags):
    """Audit one project in a clean environment."""
    config = _build_config(**flags)
    request = pipeline.AuditRequest(
        root=project_dir, agent=agent, prompt_id=prompt_id,
        language=language, entry=entry, patches_dir=patches,
    )
    try:
        record = pipeline.audit_project(request, config)
    except (envmgr.EnvError, pipeline.HarnessFault) as exc:
        click.echo(f"harness fault: {exc}", err=True)
        sys.exit(2)
    if not no_store:
        store_mod.append_record(store_mod.ResultsStore(config.store_path), record)
    _print_verdict(record)
    sys.exit(0 if record.out_of_box else 1)


@main.command()
@click.argument("corpus_manifest", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--jobs", type=int, default=1, show_default=True,
              help="Concurrent isolated environments.")
@_common_options
def batch(corpus_manifest, jobs, **flags):
    """Audit every project in a corpus manifest (resumable)."""
    config = _build_config(**flags, jobs=jobs)
    try:
        corpus = CorpusManifest.load(corpus_manifest)
    except CorpusError as exc:
        click.echo(f"harness fault: {exc}", err=True)
        sys.exit(2)
    results_store = store_mod.ResultsStore(config.store_path)
    done = store_mod.recorded_keys(results_store)
    pending = [e for e in corpus.entries if (e.agent, e.prompt_id) not in done]
    click.echo(f"{len(corpus.entries)} projects, {len(done)} already recorded, {len(pending)} to audit")

    def work(entry: CorpusEntry):
        request = pipeline.AuditRequest(
            root=entry.path, agent=entry.agent, prompt_id=entry.prompt_id,
            language=entry.language, entry=entry.entry, patches_dir=entry.patches,
        )
        return pipeline.audit_project(request, config)

    faults = 0
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        futures = {pool.submit(work, entry): entry for entry in pending}
        for future in as_completed(futures):
            entry = futures[future]
            try:
                record = future.result()
            except (envmgr.EnvError, pipeline.HarnessFault) as exc:
                faults += 1
                click.echo(f"fault auditing {entry.path}: {exc}", err=True)
                continue
            store_mod.append_record(results_store, record)
            click.echo(
                f"{entry.agent}/{entry.prompt_id}: out_of_box={record.out_of_box} "
                f"outcome={record.outcome} gap={record.gap}"
            )
    if faults:
        click.echo(f"{faults} project(s) skipped due to harness faults", err=True)
    sys.exit(0)


@main.command("report")
@click.option("--store", "store_path", type=click.Path(path_type=Path), default=None,
              help="Store file (default: <home>/audits.jsonl).")
@click.option("--format", "formats", type=click.Choice(FORMATS), multiple=True,
              default=("markdown",), show_default=True)
@click.option("--out", type=click.Path(path_type=Path), default=None,
              help="Output directory (default: <home>/report).")
@click.option("--home", type=click.Path(path_type=Path), default=None)
def report_cmd(store_path, formats, out, home):
    """Aggregate the store into report files."""
    config = HarnessConfig(home=home or default_home())
    path = store_path or config.store_path
    if not Path(path).exists():
        click.echo(f"harness fault: store not found: {path}", err=True)
        sys.exit(2)
    records = store_mod.load_records(store_mod.ResultsStore(Path(path)))
    built = metrics.build_report(records)
    out_dir = Path(out) if out else config.home / "report"
    for fmt in formats:
        for name, data in report_mod.render_report(built, fmt).items():
            target = out_dir / name
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(data)
            click.echo(f"wrote {target}")
    sys.exit(0)


@main.command("closure")
@click.option("--registry", "registry_path", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Registry snapshot (name<TAB>dep1,dep2,... per line).")
@click.option("--roots", required=True, help="Comma-separated root package names.")
def closure_cmd(registry_path, roots):
    """Print the transitive closure of the roots, sorted."""
    registry = closure.load_registry(registry_path)
    root_names = [r.strip() for r in roots.split(",") if r.strip()]
    try:
        reachable = closure.transitive_closure(registry, root_names)
    except closure.UnknownRoot as exc:
        click.echo(f"harness fault: {exc}", err=True)
        sys.exit(2)
    for name in sorted(reachable):
        click.echo(name)
    sys.exit(0)


@main.command("classify")
@click.option("--stderr", "stderr_path", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--lang", required=True, type=click.Choice(["python", "javascript", "java"]))
def classify_cmd(stderr_path, lang):
    """Classify captured error text; print category and extracted package."""
    text = Path(stderr_path).read_text("utf-8", errors="replace")
    category = classifier.classify_text(text, lang)
    if category is classifier.ErrorCategory.DEPENDENCY:
        try:
            missing = classifier.extract_missing_package(text, lang)
            click.echo(f"{category.value} {missing.resolved.name}")
        except classifier.UnmappedModule as exc:
            click.echo(f"{category.value} (unmapped: {exc.imported_name})")
    else:
        click.echo(category.value)
    sys.exit(0)


if __name__ == "__main__":
    main()
