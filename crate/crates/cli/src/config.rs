//! TOML run configuration.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use hospcast::context::{BackendConfig, RetryPolicy};
use hospcast::evaluate::EvalConfig;
use hospcast::models::ModelId;
use hospcast::panel::{SchemaConfig, WeekStamp};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema: SchemaConfig,
    #[serde(default)]
    pub panel: PanelSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelSection {
    /// Fields filled from the state-level series; `None` means every non-y field.
    #[serde(default)]
    pub fallback_fields: Option<Vec<String>>,
    /// Inclusive date range used to rank counties into tertiles.
    #[serde(default = "default_tertile_window")]
    pub tertile_window: (String, String),
}

fn default_tertile_window() -> (String, String) {
    ("2020-03-01".into(), "2022-01-31".into())
}

impl Default for PanelSection {
    fn default() -> Self {
        PanelSection {
            fallback_fields: None,
            tertile_window: default_tertile_window(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "default_window")]
    pub window_len: usize,
    #[serde(default = "default_runs")]
    pub n_runs: u32,
    #[serde(default = "default_lag_max")]
    pub lag_max: usize,
    #[serde(default = "default_models")]
    pub models: Vec<String>,
    /// First target week evaluated (any date inside the week).
    #[serde(default)]
    pub start: Option<String>,
    #[serde(default)]
    pub end: Option<String>,
    #[serde(default = "default_true")]
    pub strict_context: bool,
    #[serde(default = "default_backoff_ms")]
    pub transport_backoff_ms: u64,
}

fn default_window() -> usize {
    8
}
fn default_runs() -> u32 {
    3
}
fn default_lag_max() -> usize {
    4
}
fn default_models() -> Vec<String> {
    ModelId::CLASSICAL.iter().map(|m| m.key().to_string()).collect()
}
fn default_true() -> bool {
    true
}
fn default_backoff_ms() -> u64 {
    500
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            window_len: default_window(),
            n_runs: default_runs(),
            lag_max: default_lag_max(),
            models: default_models(),
            start: None,
            end: None,
            strict_context: true,
            transport_backoff_ms: default_backoff_ms(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    None,
    Persistence,
    Oracle,
    Scripted,
    Http,
    /// Answer only from the transcript file.
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    #[serde(default = "default_kind")]
    pub kind: BackendKind,
    /// Required for `http`.
    #[serde(default)]
    pub http: Option<BackendConfig>,
    /// Transcript file for `http` and `replay`; relative to the output dir.
    #[serde(default = "default_transcript")]
    pub transcript: PathBuf,
    /// Responses for `scripted`, served in call order.
    #[serde(default)]
    pub script: Vec<String>,
}

fn default_kind() -> BackendKind {
    BackendKind::None
}
fn default_transcript() -> PathBuf {
    "transcripts.jsonl".into()
}

impl Default for BackendSection {
    fn default() -> Self {
        BackendSection {
            kind: default_kind(),
            http: None,
            transcript: default_transcript(),
            script: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    "out".into()
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: default_out_dir() }
    }
}

/// A parsed config plus the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: Config,
    pub base_dir: PathBuf,
}

impl Loaded {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let config: Config = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Loaded { config, base_dir })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.config.output.dir)
    }

    pub fn panel_path(&self) -> PathBuf {
        self.out_dir().join("panel.json")
    }

    pub fn transcript_path(&self) -> PathBuf {
        let t = &self.config.backend.transcript;
        if t.is_absolute() {
            t.clone()
        } else {
            self.out_dir().join(t)
        }
    }

    pub fn tertile_window(&self) -> Result<(WeekStamp, WeekStamp)> {
        let (a, b) = &self.config.panel.tertile_window;
        let a = parse_date(a).context("panel.tertile_window start")?;
        let b = parse_date(b).context("panel.tertile_window end")?;
        if a > b {
            bail!("panel.tertile_window start {a} is after end {b}");
        }
        Ok((a, b))
    }

    pub fn eval_config(&self) -> Result<EvalConfig> {
        let e = &self.config.eval;
        let models = parse_models(&e.models)?;
        let start = e.start.as_deref().map(parse_date).transpose().context("eval.start")?;
        let end = e.end.as_deref().map(parse_date).transpose().context("eval.end")?;
        let eval_period = match (start, end) {
            (None, None) => None,
            (a, b) => Some((
                a.unwrap_or(WeekStamp::parse("0001-01-01").expect("valid date")),
                b.unwrap_or(WeekStamp::parse("9999-12-31").expect("valid date")),
            )),
        };
        let cfg = EvalConfig {
            window_len: e.window_len,
            n_runs: e.n_runs,
            lag_max: e.lag_max,
            eval_period,
            models,
            strict_context: e.strict_context,
            retry: RetryPolicy {
                transport_backoff: Duration::from_millis(e.transport_backoff_ms),
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Dates are kept as given; the evaluation compares them against week-ending stamps.
fn parse_date(s: &str) -> Result<WeekStamp> {
    WeekStamp::parse(s.trim()).with_context(|| format!("bad date `{s}` (expected YYYY-MM-DD)"))
}

pub fn parse_models(keys: &[String]) -> Result<Vec<ModelId>> {
    if keys.is_empty() {
        bail!("no models selected");
    }
    let mut out = Vec::new();
    for k in keys {
        let m: ModelId = k.parse().map_err(|e: String| anyhow::anyhow!(e))?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    Ok(out)
}
