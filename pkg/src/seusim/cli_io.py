"""Command-line front end and result persistence.

Layout of a campaign output directory::

    effective_config.yaml        every field, defaults materialised
    aggregate.csv                one row per (policy, experiment)
    records/<policy>/<index>.json
    logs/<policy>/<index>_scrub.csv
    logs/<policy>/<index>_decisions.csv   (fpScrub only)

Every file starts with (or, for JSON, contains) the root seed and the campaign
fingerprint.
"""
from __future__ import annotations

import csv
import io
import json
import random
import re
import sys
from collections import defaultdict
from pathlib import Path
from typing import Optional

import click
import numpy as np
import yaml
from pydantic import BaseModel, ValidationError

from . import __version__
from .campaign_harness import (SCHEMA_VERSION, ExperimentRecord, compare_records, policy_label,
                               run_campaign, run_experiment)
from .config import CampaignConfig, ExperimentConfig
from .fpscrub_predictor import decision_log_csv
from .scrubbing import scrub_log_csv

EXIT_MISMATCH = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_FINGERPRINT = 4

AGGREGATE_HEADER = ("policy", "index", "seed", "outcome", "first_divergence", "root_cause", "cause_ids",
                    "latency", "latency_class", "replays", "total_actions", "port_busy_total",
                    "energy_total", "latent_residence", "trace_digest")

COMMENTS = {
    "root_seed": "every experiment seed and the design seed derive from this",
    "size": "experiments per policy",
    "policies": "each policy runs on the same seeds (paired design)",
    "output_dir": "overridden by --out",
    "workers": "parallel worker processes",
    "root_cause": "attribute failures by isolation replays",
    "keep_traces": "unused by the CLI; traces are summarised by digest",
    "seed": "per-experiment, replaced by the campaign",
    "design_seed": "golden image and sensitivity map; replaced by the campaign",
    "duration": "ticks (1 tick = 1 ms)",
    "half_period": "ticks between setpoint edges",
    "frame_size": "bits per frame, SEC-DED check bits included",
    "rp_frame_lo": "reconfigurable partition [lo, hi) holding the controller",
    "golden": "random | zeros (ignored when golden_file is set)",
    "loop_period": "ticks per controller evaluation",
    "mode": "fixed: `count` upsets uniform in time; poisson: flux-driven arrivals",
    "base_rate": "upsets per tick at reference flux (poisson mode)",
    "mbe_radius_max": "largest MBE circle radius in cells",
    "roi_frame_lo": "null: the reconfigurable partition",
    "unused": "sensitivity classes; must sum to 1",
    "element_weights": "null: default mix over corruptible controller elements",
    "profile": "benign | harsh | episodic (episodic needs bursts)",
    "cadence": "ticks between sensor samples; must divide duration",
    "bursts": "list of {start, end, multiplier}",
    "compute_fraction": "share of each control window the controller computes; the rest is idle for scrubbing",
    "latency_threshold": "null: one workload half-period",
}


# --------------------------------------------------------------------------
# Config files
# --------------------------------------------------------------------------

class ConfigError(Exception):
    pass


def _scalar(value) -> str:
    return json.dumps(value)


def _emit_model(model: BaseModel, indent: int, lines: list) -> None:
    pad = " " * indent
    for name in type(model).model_fields:
        value = getattr(model, name)
        note = f"  # {COMMENTS[name]}" if name in COMMENTS else ""
        if isinstance(value, BaseModel):
            lines.append(f"{pad}{name}:{note}")
            _emit_model(value, indent + 2, lines)
        elif isinstance(value, tuple) and value and isinstance(value[0], BaseModel):
            lines.append(f"{pad}{name}:{note}")
            for item in value:
                sub: list = []
                _emit_model(item, indent + 4, sub)
                sub[0] = pad + "  - " + sub[0].lstrip()
                lines.extend(sub)
        else:
            dumped = value if not isinstance(value, tuple) else list(value)
            lines.append(f"{pad}{name}: {_scalar(dumped)}{note}")


def emit_config(campaign: CampaignConfig, header: Optional[str] = None) -> str:
    lines = [f"# {line}" for line in (header or "").splitlines()]
    _emit_model(campaign, 0, lines)
    return "\n".join(lines) + "\n"


def _field_errors(err: ValidationError) -> str:
    out = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        out.append(f"{loc}: {e['msg']}")
    return "\n".join(out)


def parse_config(text: str, overrides: Optional[dict] = None) -> CampaignConfig:
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"not valid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping")
    for path, value in (overrides or {}).items():
        node = data
        *parents, leaf = path.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = value
    try:
        return CampaignConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_field_errors(exc)) from None


def load_config(path, overrides: Optional[dict] = None) -> CampaignConfig:
    return parse_config(Path(path).read_text(), overrides)


def parse_policy(spec: str) -> dict:
    """``kind[:key=value,...]``, e.g. ``blind_full:period=100``."""
    kind, _, rest = spec.partition(":")
    out = {"kind": kind.strip()}
    for item in filter(None, (p.strip() for p in rest.split(","))):
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"policy option {item!r} must be key=value")
        out[key.strip()] = yaml.safe_load(value)
    return out


def slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", label).strip("_")


def file_header(root_seed, fingerprint: str) -> str:
    return f"root_seed={root_seed}, fingerprint={fingerprint}"


# --------------------------------------------------------------------------
# Campaign execution and files
# --------------------------------------------------------------------------

def _write_worker(job: dict) -> ExperimentRecord:
    """Run one experiment and write its record and logs (unique file names)."""
    cfg = ExperimentConfig.model_validate_json(job["config"])
    meta = job["meta"]
    record = run_experiment(cfg, root_cause=job["root_cause"], keep_trace=True, **meta)
    result = record.__dict__.pop("_result")
    record.__dict__.pop("_trace")
    out, name = Path(job["out"]), slug(record.policy)
    idx = f"{meta['index']:05d}"
    header = file_header(meta["root_seed"], meta["campaign"]) + f", experiment={record.fingerprint}"
    (out / "records" / name / f"{idx}.json").write_text(record.to_json() + "\n")
    (out / "logs" / name / f"{idx}_scrub.csv").write_text(scrub_log_csv(result.actions, header))
    if result.decisions:
        (out / "logs" / name / f"{idx}_decisions.csv").write_text(decision_log_csv(result.decisions, header))
    return record


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def aggregate_csv(records_by_policy: dict, header: str) -> str:
    buf = io.StringIO()
    buf.write(f"# {header}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AGGREGATE_HEADER)
    for label, records in records_by_policy.items():
        for r in sorted(records, key=lambda r: (r.index is None, r.index, r.seed)):
            lat = r.latency[0] if r.latency else {}
            cause = r.root_cause or {}
            w.writerow([_fmt(x) for x in (
                label, r.index, r.seed, r.outcome, r.first_divergence, cause.get("type"),
                " ".join(map(str, cause.get("ids", []))) or None, lat.get("latency"), lat.get("class"),
                r.replays, r.scrub["total_actions"], r.scrub["port_busy_total"], r.scrub["energy_total"],
                r.scrub["latent_residence"], r.trace_digest)])
    return buf.getvalue()


def execute_campaign(campaign: CampaignConfig, out: Path, progress=None) -> dict:
    out = Path(out)
    header = file_header(campaign.root_seed, campaign.fingerprint())
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.yaml").write_text(emit_config(campaign, header))
    for pcfg in campaign.policies:
        name = slug(policy_label(pcfg))
        (out / "records" / name).mkdir(parents=True, exist_ok=True)
        (out / "logs" / name).mkdir(parents=True, exist_ok=True)
    records = run_campaign(campaign, progress=progress, worker=_write_worker, out=str(out))
    (out / "aggregate.csv").write_text(aggregate_csv(records, header))
    return records


# --------------------------------------------------------------------------
# Replay
# --------------------------------------------------------------------------

class FingerprintMismatch(Exception):
    pass


def load_record(path) -> ExperimentRecord:
    record = ExperimentRecord.from_json(Path(path).read_text())
    if record.schema_version != SCHEMA_VERSION:
        raise FingerprintMismatch(f"{path}: schema version {record.schema_version}, expected {SCHEMA_VERSION}")
    return record


def _record_config(record: ExperimentRecord) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(record.config)
    except ValidationError as exc:
        raise ConfigError(_field_errors(exc)) from None


def replay_record(record: ExperimentRecord, policy: Optional[dict] = None):
    """Recompute a stored record.

    Returns ``(new_record, differing_fields)``. With a policy override the new
    record is marked derived and nothing is compared.
    """
    cfg = _record_config(record)
    if cfg.fingerprint() != record.fingerprint or cfg.seed != record.seed:
        raise FingerprintMismatch(
            f"record fingerprint {record.fingerprint} does not match its configuration "
            f"({cfg.fingerprint()} under the current code version)")
    meta = {"root_seed": record.root_seed, "campaign": record.campaign, "index": record.index}
    root_cause = record.root_cause is not None or not record.failed
    if policy is not None:
        try:
            cfg = ExperimentConfig.model_validate({**cfg.model_dump(mode="json"), "policy": policy})
        except ValidationError as exc:
            raise ConfigError(_field_errors(exc)) from None
        new = run_experiment(cfg, root_cause=root_cause, **meta)
        new.derived = True
        return new, []
    new = run_experiment(cfg, root_cause=root_cause, **meta)
    old_d, new_d = record.comparable(), new.comparable()
    return new, sorted(k for k in old_d if old_d[k] != new_d.get(k))


def find_records(paths) -> list:
    found = []
    for p in map(Path, paths):
        if p.is_dir():
            found.extend(sorted(p.rglob("records/*/*.json")))
        else:
            found.append(p)
    return found


# --------------------------------------------------------------------------
# Summaries
# --------------------------------------------------------------------------

def _policy_order(record_path: Path, labels) -> list:
    cfg_file = record_path.parents[2] / "effective_config.yaml"
    order = []
    if cfg_file.exists():
        try:
            order = [policy_label(p) for p in load_config(cfg_file).policies]
        except (ConfigError, OSError):
            order = []
    return [l for l in order if l in labels] + sorted(l for l in labels if l not in order)


def _write_csv(path: Path, header: str, columns, rows) -> None:
    buf = io.StringIO()
    buf.write(f"# {header}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) if isinstance(row, dict) else _fmt(row[i]) for i, c in enumerate(columns)])
    path.write_text(buf.getvalue())


RESIDENCE_EDGES = (0, 10, 100, 1000, 10_000, 100_000, 10**9)
LATENCY_EDGES = (0, 1, 10, 100, 1000, 3000, 10_000, 10**9)


def _histogram(values, edges) -> list:
    counts, _ = np.histogram(np.asarray(values, dtype=float), bins=np.asarray(edges, dtype=float))
    return [int(c) for c in counts]


def summarize(result_dir, out: Optional[Path] = None) -> dict:
    """Group records by campaign and emit comparison tables and series."""
    paths = find_records([result_dir])
    if not paths:
        raise FileNotFoundError(f"no experiment records under {result_dir}")
    groups: dict = defaultdict(lambda: defaultdict(list))
    first_path: dict = {}
    for p in paths:
        r = load_record(p)
        key = r.campaign or r.fingerprint
        groups[key][r.policy].append(r)
        first_path.setdefault(key, p)
    out = Path(out) if out is not None else Path(result_dir) / "summary"
    tables = {}
    for key in sorted(groups):
        by_policy = groups[key]
        labels = _policy_order(first_path[key], list(by_policy))
        ordered = {l: sorted(by_policy[l], key=lambda r: (r.index is None, r.index, r.seed)) for l in labels}
        table = compare_records(ordered)
        sample = next(iter(ordered.values()))[0]
        header = file_header(sample.root_seed, key)
        d = out / key
        d.mkdir(parents=True, exist_ok=True)
        cols = list(table["rows"][0])
        _write_csv(d / "comparison.csv", header, cols, table["rows"])
        if table["paired"]:
            _write_csv(d / "paired.csv", header, list(table["paired"][0]), table["paired"])
        nbins = max(len(r.energy_timeline) for rs in ordered.values() for r in rs)
        series = []
        for b in range(nbins):
            row = [b * 1000]
            for l in labels:
                row.append(float(np.mean([r.energy_timeline[b] if b < len(r.energy_timeline) else 0.0
                                          for r in ordered[l]])))
            series.append(row)
        _write_csv(d / "energy_series.csv", header, ["tick"] + labels, series)
        for name, edges, extract in (
                ("residence_hist.csv", RESIDENCE_EDGES, lambda r: r.scrub["residences"]),
                ("latency_hist.csv", LATENCY_EDGES, lambda r: [x["latency"] for x in r.latency])):
            hists = {l: _histogram([v for r in ordered[l] for v in extract(r)], edges) for l in labels}
            rows = [[edges[i], edges[i + 1]] + [hists[l][i] for l in labels] for i in range(len(edges) - 1)]
            _write_csv(d / name, header, ["lo", "hi"] + labels, rows)
        tables[key] = table
    return tables


# --------------------------------------------------------------------------
# click commands
# --------------------------------------------------------------------------

def _fail(code: int, msg: str):
    click.echo(msg, err=True)
    sys.exit(code)


@click.group()
@click.version_option(__version__)
def main():
    """Configuration-memory upset and scrubbing campaigns."""


@main.command("gen-config")
@click.option("--out", type=click.Path(dir_okay=False), help="write here instead of stdout")
def gen_config(out):
    """Emit a commented default campaign configuration."""
    text = emit_config(CampaignConfig(), "default campaign configuration; unknown keys are rejected")
    if out:
        try:
            Path(out).write_text(text)
        except OSError as exc:
            _fail(EXIT_IO, f"cannot write {out}: {exc}")
    else:
        click.echo(text, nl=False)


@main.command()
@click.argument("config_file", type=click.Path(dir_okay=False))
@click.option("--seed", type=int, help="root seed")
@click.option("--workers", type=int)
@click.option("--out", type=click.Path(file_okay=False), help="output directory")
@click.option("--policy", "policies", multiple=True, help="kind[:key=value,...]; repeatable")
@click.option("--profile", type=click.Choice(["benign", "harsh", "episodic"]))
@click.option("--size", type=int, help="experiments per policy")
def run(config_file, seed, workers, out, policies, profile, size):
    """Run a campaign described by CONFIG_FILE."""
    overrides: dict = {}
    if seed is not None:
        overrides["root_seed"] = seed
    if workers is not None:
        overrides["workers"] = workers
    if out is not None:
        overrides["output_dir"] = out
    if size is not None:
        overrides["size"] = size
    if profile is not None:
        overrides["experiment.environment.profile"] = profile
    try:
        if policies:
            overrides["policies"] = [parse_policy(p) for p in policies]
        campaign = load_config(config_file, overrides)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, f"invalid configuration:\n{exc}")
    except OSError as exc:
        _fail(EXIT_IO, f"cannot read {config_file}: {exc}")

    def progress(label, done):
        if done == campaign.size or done % 100 == 0:
            click.echo(f"{label}: {done}/{campaign.size}", err=True)

    try:
        records = execute_campaign(campaign, Path(campaign.output_dir), progress)
    except OSError as exc:
        _fail(EXIT_IO, f"I/O failure: {exc}")
    for label, recs in records.items():
        k = sum(r.failed for r in recs)
        click.echo(f"{label}: {k}/{len(recs)} failures")
    click.echo(f"results in {campaign.output_dir}")


@main.command()
@click.argument("paths", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--policy", help="re-run under another policy; output is a derived record")
@click.option("--sample", type=int, help="verify a random sample of this many records")
@click.option("--seed", type=int, default=0, show_default=True, help="sampling seed")
@click.option("--out", type=click.Path(dir_okay=False), help="where to write a derived record")
def replay(paths, policy, sample, seed, out):
    """Recompute stored records and check they match field for field."""
    files = find_records(paths)
    if sample is not None and sample < len(files):
        files = sorted(random.Random(seed).sample(files, sample))
    if not files:
        _fail(EXIT_IO, "no records found")
    try:
        override = parse_policy(policy) if policy else None
        if override is not None:
            if len(files) != 1:
                _fail(EXIT_CONFIG, "--policy replays exactly one record")
            new, _ = replay_record(load_record(files[0]), override)
            text = new.to_json() + "\n"
            if out:
                Path(out).write_text(text)
            else:
                click.echo(text, nl=False)
            click.echo("derived record (not a verification)", err=True)
            return
        bad = 0
        for f in files:
            _, diff = replay_record(load_record(f))
            if diff:
                bad += 1
                click.echo(f"MISMATCH {f}: {', '.join(diff)}")
        click.echo(f"verified {len(files) - bad}/{len(files)} records")
    except FingerprintMismatch as exc:
        _fail(EXIT_FINGERPRINT, f"fingerprint mismatch: {exc}")
    except ConfigError as exc:
        _fail(EXIT_CONFIG, f"invalid configuration:\n{exc}")
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        _fail(EXIT_IO, f"cannot read record: {exc}")
    if bad:
        sys.exit(EXIT_MISMATCH)


@main.command("summarize")
@click.argument("result_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--out", type=click.Path(file_okay=False), help="default: RESULT_DIR/summary")
def summarize_cmd(result_dir, out):
    """Comparison tables and plot-ready series for every campaign under RESULT_DIR."""
    try:
        tables = summarize(result_dir, out)
    except FileNotFoundError as exc:
        _fail(EXIT_MISMATCH, str(exc))
    except OSError as exc:
        _fail(EXIT_IO, f"I/O failure: {exc}")
    for key, table in tables.items():
        click.echo(f"campaign {key}")
        for row in table["rows"]:
            click.echo(f"  {row['policy']:<28} fail {row['failures']}/{row['experiments']} "
                       f"[{row['failure_ci_lo']:.3f}, {row['failure_ci_hi']:.3f}]  "
                       f"energy {row['energy_total']:.0f}  busy {row['port_busy_total']}")
        for row in table["paired"]:
            click.echo(f"  {row['policy']} - {row['baseline']}: failure diff {row['failure_diff']:+.3f} "
                       f"[{row['failure_diff_ci_lo']:+.3f}, {row['failure_diff_ci_hi']:+.3f}]")


if __name__ == "__main__":
    main()
