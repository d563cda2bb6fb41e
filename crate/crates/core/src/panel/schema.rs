use std::collections::BTreeMap;
use std::path::PathBuf;

use chrono::Weekday;
use serde::{Deserialize, Serialize};

use super::{Field, PanelError};

/// Counties dropped from every evaluation output for missingness and
/// reporting irregularities.
pub const DEFAULT_EXCLUDED_COUNTIES: [&str; 7] =
    ["Forest", "Juniata", "Perry", "Pike", "Snyder", "Cameron", "Sullivan"];

/// How daily (or duplicated) observations inside one week are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggMode {
    Sum,
    Mean,
}

/// Role of a CSV column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Role {
    County,
    Date,
    Population,
    Value(Field),
}

impl Role {
    pub fn parse(s: &str) -> Result<Role, PanelError> {
        let s = s.trim();
        Ok(match s {
            "county" => Role::County,
            "date" | "week" => Role::Date,
            "population" => Role::Population,
            "y" | "x_b" | "x_v" | "s_t" => Role::Value(Field::parse(s)),
            other => match other.strip_prefix("indicator:") {
                Some(name) if !name.is_empty() => Role::Value(Field::Indicator(name.to_string())),
                _ => return Err(PanelError::Schema(format!("unknown column role `{other}`"))),
            },
        })
    }

    /// Weekly aggregation used when the schema does not say otherwise:
    /// hospital-capacity series and the target are averaged, search volume
    /// and other indicators are summed.
    pub fn default_agg(&self) -> AggMode {
        match self {
            Role::Value(Field::St) | Role::Value(Field::Indicator(_)) => AggMode::Sum,
            _ => AggMode::Mean,
        }
    }
}

/// One input CSV file and how its columns map onto panel fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub path: PathBuf,
    /// CSV column name → role (`county`, `date`, `y`, `x_b`, `x_v`, `s_t`,
    /// `population`, or `indicator:<name>`).
    pub columns: BTreeMap<String, String>,
    /// CSV column name → weekly aggregation mode.
    #[serde(default)]
    pub aggregation: BTreeMap<String, AggMode>,
}

impl SourceSpec {
    pub fn roles(&self) -> Result<Vec<(String, Role)>, PanelError> {
        self.columns
            .iter()
            .map(|(col, role)| Ok((col.clone(), Role::parse(role)?)))
            .collect()
    }

    pub fn agg_for(&self, column: &str, role: &Role) -> AggMode {
        self.aggregation
            .get(column)
            .copied()
            .unwrap_or_else(|| role.default_agg())
    }
}

/// Ingestion schema for a set of snapshot files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub sources: Vec<SourceSpec>,
    /// Weekday that ends a week; dates map to the first such day on or after them.
    #[serde(default = "default_week_ending")]
    pub week_ending: String,
    /// County-column value marking state-aggregate rows.
    #[serde(default)]
    pub state_name: Option<String>,
    #[serde(default = "default_excluded")]
    pub excluded_counties: Vec<String>,
}

fn default_week_ending() -> String {
    "sun".to_string()
}

fn default_excluded() -> Vec<String> {
    DEFAULT_EXCLUDED_COUNTIES.iter().map(|s| s.to_string()).collect()
}

impl SchemaConfig {
    pub fn new(sources: Vec<SourceSpec>) -> Self {
        SchemaConfig {
            sources,
            week_ending: default_week_ending(),
            state_name: None,
            excluded_counties: default_excluded(),
        }
    }

    pub fn week_ending_day(&self) -> Result<Weekday, PanelError> {
        self.week_ending
            .parse::<Weekday>()
            .map_err(|_| PanelError::Schema(format!("bad week_ending `{}`", self.week_ending)))
    }

    pub fn is_state(&self, raw_name: &str) -> bool {
        self.state_name
            .as_deref()
            .is_some_and(|s| s.trim().eq_ignore_ascii_case(raw_name.trim()))
    }

    pub fn is_excluded(&self, canonical: &str) -> bool {
        let base = strip_county_suffix(canonical);
        self.excluded_counties
            .iter()
            .any(|e| strip_county_suffix(e).eq_ignore_ascii_case(base))
    }
}

/// `"Adams"` and `"Adams County"` both canonicalize to `"Adams County"`.
pub(crate) fn canonical_county(raw: &str) -> String {
    let trimmed = raw.trim();
    if trimmed.to_ascii_lowercase().ends_with(" county") {
        trimmed.to_string()
    } else {
        format!("{trimmed} County")
    }
}

pub(crate) fn strip_county_suffix(name: &str) -> &str {
    let t = name.trim();
    if t.to_ascii_lowercase().ends_with(" county") {
        t[..t.len() - " county".len()].trim_end()
    } else {
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn role_parsing() {
        assert_eq!(Role::parse("county").unwrap(), Role::County);
        assert_eq!(Role::parse("x_v").unwrap(), Role::Value(Field::XV));
        assert_eq!(
            Role::parse("indicator:cli").unwrap(),
            Role::Value(Field::Indicator("cli".into()))
        );
        assert!(Role::parse("bogus").is_err());
        assert!(Role::parse("indicator:").is_err());
    }

    #[test]
    fn exclusion_matches_either_form() {
        let cfg = SchemaConfig::new(vec![]);
        assert!(cfg.is_excluded("Forest County"));
        assert!(cfg.is_excluded("forest"));
        assert!(!cfg.is_excluded("Adams County"));
    }

    #[test]
    fn canonical_names() {
        assert_eq!(canonical_county(" Adams "), "Adams County");
        assert_eq!(canonical_county("Adams County"), "Adams County");
        assert_eq!(strip_county_suffix("Adams County"), "Adams");
    }

    #[test]
    fn config_from_toml() {
        let text = r#"
            week_ending = "sat"
            state_name = "Pennsylvania"
            [[sources]]
            path = "hosp.csv"
            [sources.columns]
            county = "county"
            date = "date"
            hosp = "y"
            search = "s_t"
            [sources.aggregation]
            hosp = "mean"
        "#;
        let cfg: SchemaConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.week_ending_day().unwrap(), Weekday::Sat);
        assert_eq!(cfg.excluded_counties.len(), 7);
        let src = &cfg.sources[0];
        assert_eq!(src.agg_for("hosp", &Role::Value(Field::Y)), AggMode::Mean);
        assert_eq!(src.agg_for("search", &Role::Value(Field::St)), AggMode::Sum);
    }
}
