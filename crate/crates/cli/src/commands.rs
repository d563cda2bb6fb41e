use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use chrono::{DateTime, SecondsFormat, Utc};
use hospcast::context::{stub_backend, CachedBackend, CompletionBackend, HttpBackend, StubKind, TranscriptCache};
use hospcast::evaluate::{
    evaluate_models, read_records_jsonl, report::write_report, summarize, write_records_jsonl, ForecastRecord, Summary,
};
use hospcast::panel::{
    apply_state_fallback, assign_tertiles, load_panel, rank_indicators, write_indicator_csv, FallbackReport, Field,
    LoadReport, Panel, TertileAssignment, WeekStamp,
};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{BackendKind, Config, Loaded};
use crate::{CommonArgs, EvaluateArgs, ReportArgs};

const PANEL_FILE: &str = "panel.json";
const INGEST_REPORT_FILE: &str = "ingest_report.json";
const INDICATOR_FILE: &str = "fig2_indicators.csv";
const RECORDS_FILE: &str = "records.jsonl";
const MANIFEST_FILE: &str = "manifest.json";
const TABLES_DIR: &str = "tables";

fn load_config(args: &CommonArgs) -> Result<Loaded> {
    let mut loaded = Loaded::read(&args.config)?;
    if let Some(out) = &args.out {
        loaded.config.output.dir = out.clone();
    }
    Ok(loaded)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn read_panel(path: &Path) -> Result<Panel> {
    let file = File::open(path).with_context(|| format!("opening {} (run `hospcast ingest` first)", path.display()))?;
    let raw: Panel =
        serde_json::from_reader(BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))?;
    let panel = Panel::new(raw.all_series().to_vec())
        .with_context(|| format!("validating {}", path.display()))?
        .with_populations(raw.populations().clone());
    Ok(panel)
}

fn tertiles_for(loaded: &Loaded, panel: &Panel) -> Result<TertileAssignment> {
    let tertiles = assign_tertiles(panel, loaded.tertile_window()?);
    for w in &tertiles.warnings {
        log::warn!("{w}");
    }
    Ok(tertiles)
}

#[derive(Debug, Serialize)]
struct FieldCoverage {
    observed: usize,
    total: usize,
    fraction: f64,
}

#[derive(Debug, Serialize)]
struct IngestReport {
    n_counties: usize,
    has_state_series: bool,
    first_week: Option<WeekStamp>,
    last_week: Option<WeekStamp>,
    load: LoadReport,
    fallback: Vec<FallbackReport>,
    coverage_after_fallback: BTreeMap<String, FieldCoverage>,
}

fn coverage(panel: &Panel, fields: &[Field]) -> BTreeMap<String, FieldCoverage> {
    fields
        .iter()
        .map(|f| {
            let (observed, total) = panel
                .counties()
                .flat_map(|s| s.rows.iter())
                .fold((0, 0), |(o, t), r| (o + r.get(f).is_some() as usize, t + 1));
            let fraction = if total == 0 {
                0.0
            } else {
                observed as f64 / total as f64
            };
            (
                f.name().to_string(),
                FieldCoverage {
                    observed,
                    total,
                    fraction,
                },
            )
        })
        .collect()
}

fn non_y_fields(panel: &Panel) -> Vec<Field> {
    let mut fields = vec![Field::XB, Field::XV, Field::St];
    fields.extend(panel.indicator_names().into_iter().map(Field::Indicator));
    fields
}

pub fn ingest(args: &CommonArgs) -> Result<()> {
    let loaded = load_config(args)?;
    let cfg = &loaded.config;
    let (mut panel, load) = load_panel(&cfg.schema, &loaded.base_dir)?;
    for w in &load.warnings {
        log::warn!("{w}");
    }

    let fallback_fields = match &cfg.panel.fallback_fields {
        Some(names) => names.iter().map(|n| Field::parse(n)).collect(),
        None => non_y_fields(&panel),
    };
    if fallback_fields.contains(&Field::Y) {
        bail!("panel.fallback_fields must not include `y`");
    }
    let mut fallback = Vec::new();
    for field in &fallback_fields {
        let (next, rep) = apply_state_fallback(&panel, field)?;
        panel = next;
        fallback.push(rep);
    }

    let (first_week, last_week) = panel.week_range().unzip();
    let report = IngestReport {
        n_counties: panel.counties().count(),
        has_state_series: panel.state_series().is_some(),
        first_week,
        last_week,
        coverage_after_fallback: coverage(&panel, &non_y_fields(&panel)),
        load,
        fallback,
    };

    let out = loaded.out_dir();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join(PANEL_FILE), &panel)?;
    write_json(&out.join(INGEST_REPORT_FILE), &report)?;

    println!("counties: {}", report.n_counties);
    println!(
        "rows read: {}, dropped: {}, gap rows filled: {}",
        report.load.rows_read, report.load.rows_dropped, report.load.gap_rows
    );
    let excluded: Vec<&str> = report.load.excluded_counties.iter().map(String::as_str).collect();
    println!("excluded counties: {} [{}]", excluded.len(), excluded.join(", "));
    for f in &report.fallback {
        println!("state fallback {}: {} cells", f.field, f.substituted);
    }
    println!("wrote {}", out.join(PANEL_FILE).display());
    Ok(())
}

fn write_indicators(panel: &Panel, path: &Path) -> Result<()> {
    let ranking = rank_indicators(panel);
    for note in &ranking.notes {
        log::warn!("{note}");
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_indicator_csv(&ranking.entries, BufWriter::new(file))?;
    Ok(())
}

pub fn correlate(args: &CommonArgs) -> Result<()> {
    let loaded = load_config(args)?;
    let out = loaded.out_dir();
    let panel = read_panel(&loaded.panel_path())?;
    let ranking = rank_indicators(&panel);
    for e in &ranking.entries {
        println!("{:<40} r={:+.4} n={}", e.indicator, e.r, e.n_obs);
    }
    let path = out.join(INDICATOR_FILE);
    write_indicators(&panel, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct RunManifest {
    version: &'static str,
    config_hash: String,
    panel_fingerprint: String,
    models: Vec<String>,
    n_runs: u32,
    seed: Option<u64>,
    backend: BackendKind,
    backend_model: Option<String>,
    transcript: Option<PathBuf>,
    started_at: String,
    finished_at: String,
    n_records: usize,
    missing_forecasts: usize,
    skipped_windows: usize,
    n_warnings: usize,
    /// Output file (relative to the output dir) → sha256.
    outputs: BTreeMap<String, String>,
}

/// `SOURCE_DATE_EPOCH` pins timestamps for reproducible manifests.
fn timestamp() -> String {
    let pinned = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| DateTime::<Utc>::from_timestamp(secs, 0));
    pinned
        .unwrap_or_else(Utc::now)
        .to_rfc3339_opts(SecondsFormat::Secs, true)
}

fn config_hash(cfg: &Config) -> Result<String> {
    let mut c = cfg.clone();
    c.output.dir = PathBuf::new();
    Ok(sha256_hex(&serde_json::to_vec(&c)?))
}

fn build_backend(loaded: &Loaded, panel: &Arc<Panel>) -> Result<Option<Box<dyn CompletionBackend>>> {
    let b = &loaded.config.backend;
    let http_model = b.http.as_ref().map(|h| h.model_name.clone());
    Ok(match b.kind {
        BackendKind::None => None,
        BackendKind::Persistence => Some(Box::new(stub_backend(StubKind::Persistence))),
        BackendKind::Oracle => Some(Box::new(stub_backend(StubKind::Oracle(Arc::clone(panel))))),
        BackendKind::Scripted => {
            if b.script.is_empty() {
                bail!("backend.script is empty; the scripted backend needs responses");
            }
            Some(Box::new(stub_backend(StubKind::Scripted(b.script.clone()))))
        }
        BackendKind::Http => {
            let http = b
                .http
                .clone()
                .context("backend.kind = \"http\" requires a [backend.http] section")?;
            let inner = HttpBackend::new(http)?;
            Some(Box::new(CachedBackend::new(inner, open_transcript(loaded)?)))
        }
        BackendKind::Replay => {
            let model = http_model.unwrap_or_else(|| "replay".into());
            let cache = open_transcript(loaded)?;
            if cache.is_empty() {
                log::warn!(
                    "transcript {} is empty; every LLM cell will be missing",
                    cache.path().display()
                );
            }
            Some(Box::new(CachedBackend::replay_only(model, cache)))
        }
    })
}

fn open_transcript(loaded: &Loaded) -> Result<Arc<TranscriptCache>> {
    let path = loaded.transcript_path();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let cache = TranscriptCache::open(&path).with_context(|| format!("opening transcript {}", path.display()))?;
    Ok(Arc::new(cache))
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let started_at = timestamp();
    let mut loaded = load_config(&args.common)?;
    {
        let cfg = &mut loaded.config;
        if let Some(m) = &args.models {
            cfg.eval.models = m.clone();
        }
        if let Some(b) = args.backend {
            cfg.backend.kind = b;
        }
        if let Some(n) = args.runs {
            cfg.eval.n_runs = n;
        }
        if let (Some(seed), Some(http)) = (args.seed, cfg.backend.http.as_mut()) {
            http.seed = Some(seed);
        }
    }
    let eval_cfg = loaded.eval_config()?;
    let uses_backend: Vec<_> = eval_cfg.models.iter().filter(|m| m.uses_backend()).collect();
    if !uses_backend.is_empty() && loaded.config.backend.kind == BackendKind::None {
        bail!("models {uses_backend:?} need a backend; pass --backend or set backend.kind");
    }

    let panel_path = loaded.panel_path();
    let panel_bytes = fs::read(&panel_path)
        .with_context(|| format!("reading {} (run `hospcast ingest` first)", panel_path.display()))?;
    let panel = Arc::new(read_panel(&panel_path)?);
    let tertiles = tertiles_for(&loaded, &panel)?;
    let backend = build_backend(&loaded, &panel)?;

    let output = evaluate_models(&panel, &eval_cfg, backend.as_deref())?;
    for w in &output.warnings {
        log::warn!("{w}");
    }
    let summary = summarize(&output.records, &tertiles, eval_cfg.lag_max);
    for w in &summary.warnings {
        log::warn!("{w}");
    }

    let out = loaded.out_dir();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let records_path = out.join(RECORDS_FILE);
    write_records_jsonl(&output.records, BufWriter::new(File::create(&records_path)?))?;
    let mut written = vec![records_path];
    written.extend(write_tables(&panel, &summary, &tertiles, &out.join(TABLES_DIR))?);

    let mut outputs = BTreeMap::new();
    for p in &written {
        let rel = p.strip_prefix(&out).unwrap_or(p).to_string_lossy().replace('\\', "/");
        outputs.insert(rel, sha256_hex(&fs::read(p)?));
    }
    let kind = loaded.config.backend.kind;
    let llm_backend = matches!(kind, BackendKind::Http | BackendKind::Replay);
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION"),
        config_hash: config_hash(&loaded.config)?,
        panel_fingerprint: sha256_hex(&panel_bytes),
        models: eval_cfg.models.iter().map(|m| m.key().to_string()).collect(),
        n_runs: eval_cfg.n_runs,
        seed: args.seed,
        backend: kind,
        backend_model: backend.as_ref().map(|b| b.model_name().to_string()),
        transcript: llm_backend.then(|| loaded.config.backend.transcript.clone()),
        started_at,
        finished_at: timestamp(),
        n_records: output.records.len(),
        missing_forecasts: output.missing_forecasts,
        skipped_windows: output.skipped_windows,
        n_warnings: output.warnings.len() + summary.warnings.len(),
        outputs,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;

    println!(
        "records: {} ({} models × {} runs)",
        manifest.n_records,
        manifest.models.len(),
        manifest.n_runs
    );
    if manifest.missing_forecasts > 0 || manifest.n_warnings > 0 {
        eprintln!(
            "warning: {} missing forecasts, {} warnings",
            manifest.missing_forecasts, manifest.n_warnings
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn write_tables(panel: &Panel, summary: &Summary, tertiles: &TertileAssignment, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = write_report(summary, tertiles, dir).with_context(|| format!("writing {}", dir.display()))?;
    let fig = dir.join(INDICATOR_FILE);
    write_indicators(panel, &fig)?;
    written.push(fig);
    Ok(written)
}

pub fn report(args: &ReportArgs) -> Result<()> {
    let loaded = load_config(&args.common)?;
    let out = loaded.out_dir();
    let records_path = args.records.clone().unwrap_or_else(|| out.join(RECORDS_FILE));
    let file = File::open(&records_path).with_context(|| format!("opening {}", records_path.display()))?;
    let records: Vec<ForecastRecord> = read_records_jsonl(BufReader::new(file))?;
    if records.is_empty() {
        bail!("{} contains no forecast records", records_path.display());
    }
    let lag_max = loaded.config.eval.lag_max;
    if lag_max < 1 {
        bail!("eval.lag_max must be >= 1");
    }
    let panel = read_panel(&loaded.panel_path())?;
    let tertiles = tertiles_for(&loaded, &panel)?;
    let summary = summarize(&records, &tertiles, lag_max);
    for w in &summary.warnings {
        log::warn!("{w}");
    }
    let dir = out.join(TABLES_DIR);
    let written = write_tables(&panel, &summary, &tertiles, &dir)?;
    let models: std::collections::BTreeSet<&str> = summary.county_metrics.iter().map(|c| c.model.key()).collect();
    println!("models: {}", models.into_iter().collect::<Vec<_>>().join(", "));
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinned_timestamp() {
        std::env::set_var("SOURCE_DATE_EPOCH", "0");
        assert_eq!(timestamp(), "1970-01-01T00:00:00Z");
        std::env::remove_var("SOURCE_DATE_EPOCH");
    }

    #[test]
    fn config_hash_ignores_output_dir() {
        let text = r#"
[schema]
[[schema.sources]]
path = "a.csv"
columns = { county = "county", date = "date", y = "y" }
"#;
        let mut a: Config = toml::from_str(text).unwrap();
        let h1 = config_hash(&a).unwrap();
        a.output.dir = "elsewhere".into();
        assert_eq!(config_hash(&a).unwrap(), h1);
        a.eval.n_runs = 5;
        assert_ne!(config_hash(&a).unwrap(), h1);
    }
}
