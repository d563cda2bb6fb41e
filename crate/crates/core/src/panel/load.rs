use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use serde::Serialize;

use super::schema::{canonical_county, AggMode, Role, SchemaConfig, SourceSpec};
use super::{CountyId, CountySeries, Field, Panel, PanelError, PanelRow, WeekStamp};

/// What happened during ingestion: drops, exclusions, warnings, and coverage.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rows_dropped: usize,
    pub excluded_counties: BTreeSet<String>,
    pub excluded_rows: usize,
    pub gap_rows: usize,
    /// Per-field (observed, total) cell counts over county rows.
    pub coverage: BTreeMap<String, (usize, usize)>,
    pub warnings: Vec<String>,
}

type CellValues = Vec<(Field, Option<f64>)>;

pub(crate) fn week_ending(date: NaiveDate, end: Weekday) -> WeekStamp {
    let from = date.weekday().num_days_from_monday() as i64;
    let to = end.num_days_from_monday() as i64;
    WeekStamp(date + Duration::days((to - from).rem_euclid(7)))
}

pub(crate) fn parse_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    ["%Y-%m-%d", "%Y/%m/%d", "%m/%d/%Y"]
        .iter()
        .find_map(|fmt| NaiveDate::parse_from_str(s, fmt).ok())
        .or_else(|| {
            // timestamps such as 2021-01-03T00:00:00
            s.get(..10).and_then(|d| NaiveDate::parse_from_str(d, "%Y-%m-%d").ok())
        })
}

enum Cell {
    Missing,
    Value(f64),
    Bad,
}

fn parse_cell(s: &str) -> Cell {
    let t = s.trim();
    if t.is_empty() || ["na", "nan", "null", "none", "n/a"].contains(&t.to_ascii_lowercase().as_str()) {
        return Cell::Missing;
    }
    match t.replace(',', "").parse::<f64>() {
        Ok(v) if v.is_finite() => Cell::Value(v),
        _ => Cell::Bad,
    }
}

struct Bucket {
    values: Vec<f64>,
    mode: AggMode,
}

impl Bucket {
    fn value(&self) -> Option<f64> {
        if self.values.is_empty() {
            return None;
        }
        let sum: f64 = self.values.iter().sum();
        Some(match self.mode {
            AggMode::Sum => sum,
            AggMode::Mean => sum / self.values.len() as f64,
        })
    }
}

/// Incremental panel builder: feed it one CSV source at a time, then
/// [`finish`](PanelLoader::finish).
pub struct PanelLoader<'a> {
    schema: &'a SchemaConfig,
    week_end: Weekday,
    buckets: BTreeMap<(String, WeekStamp, Field), Bucket>,
    present: BTreeSet<(String, WeekStamp)>,
    state_names: BTreeSet<String>,
    populations: BTreeMap<String, u64>,
    has_target: bool,
    report: LoadReport,
}

impl<'a> PanelLoader<'a> {
    pub fn new(schema: &'a SchemaConfig) -> Result<Self, PanelError> {
        Ok(PanelLoader {
            schema,
            week_end: schema.week_ending_day()?,
            buckets: BTreeMap::new(),
            present: BTreeSet::new(),
            state_names: BTreeSet::new(),
            populations: BTreeMap::new(),
            has_target: false,
            report: LoadReport::default(),
        })
    }

    /// Read one CSV source. Schema problems are fatal; cell problems become
    /// warnings and the cell is treated as missing.
    pub fn add_source<R: Read>(&mut self, spec: &SourceSpec, reader: R) -> Result<(), PanelError> {
        let file = spec.path.display().to_string();
        let csv_err = |source| PanelError::Csv {
            file: file.clone(),
            source,
        };
        let mut rdr = csv::ReaderBuilder::new()
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers().map_err(csv_err)?.clone();

        let mut county_col = None;
        let mut date_col = None;
        let mut pop_col = None;
        let mut value_cols = Vec::new();
        for (column, role) in spec.roles()? {
            let idx = headers
                .iter()
                .position(|h| h == column)
                .ok_or_else(|| PanelError::MissingColumn {
                    file: file.clone(),
                    column: column.clone(),
                })?;
            match role {
                Role::County => county_col = Some(idx),
                Role::Date => date_col = Some(idx),
                Role::Population => pop_col = Some(idx),
                Role::Value(field) => {
                    let mode = spec.agg_for(&column, &Role::Value(field.clone()));
                    if field == Field::Y {
                        self.has_target = true;
                    }
                    value_cols.push((idx, column, field, mode));
                }
            }
        }
        let county_col = county_col.ok_or(PanelError::MissingRole {
            file: file.clone(),
            role: "county",
        })?;
        // Population-only sources (census tables) need no date column.
        if date_col.is_none() && !value_cols.is_empty() {
            return Err(PanelError::MissingRole {
                file: file.clone(),
                role: "date",
            });
        }

        for (line, record) in rdr.records().enumerate() {
            let record = record.map_err(csv_err)?;
            let lineno = line + 2;
            self.report.rows_read += 1;
            let raw_county = record.get(county_col).unwrap_or("").trim();
            if raw_county.is_empty() {
                self.warn(format!("{file}:{lineno}: empty county, row dropped"));
                self.report.rows_dropped += 1;
                continue;
            }
            let is_state = self.schema.is_state(raw_county);
            let name = if is_state {
                raw_county.to_string()
            } else {
                canonical_county(raw_county)
            };
            if !is_state && self.schema.is_excluded(&name) {
                self.report.excluded_counties.insert(name);
                self.report.excluded_rows += 1;
                continue;
            }

            if let Some(pc) = pop_col {
                match parse_cell(record.get(pc).unwrap_or("")) {
                    Cell::Value(v) if v >= 0.0 => {
                        self.populations.entry(name.clone()).or_insert(v.round() as u64);
                    }
                    Cell::Missing => {}
                    _ => self.warn(format!("{file}:{lineno}: unparseable population")),
                }
            }
            let Some(dc) = date_col else { continue };
            let Some(date) = parse_date(record.get(dc).unwrap_or("")) else {
                self.warn(format!("{file}:{lineno}: unparseable date, row dropped"));
                self.report.rows_dropped += 1;
                continue;
            };
            let week = week_ending(date, self.week_end);
            if is_state {
                self.state_names.insert(name.clone());
            }
            self.present.insert((name.clone(), week));

            for (idx, column, field, mode) in &value_cols {
                let raw = record.get(*idx).unwrap_or("");
                let value = match parse_cell(raw) {
                    Cell::Missing => continue,
                    Cell::Bad => {
                        self.warn(format!(
                            "{file}:{lineno}: column `{column}` value `{raw}` unparseable, treated as missing"
                        ));
                        continue;
                    }
                    Cell::Value(v) => v,
                };
                if value < 0.0 && !matches!(field, Field::Indicator(_)) {
                    self.warn(format!(
                        "{file}:{lineno}: column `{column}` negative ({value}), treated as missing"
                    ));
                    continue;
                }
                self.buckets
                    .entry((name.clone(), week, field.clone()))
                    .or_insert_with(|| Bucket {
                        values: Vec::new(),
                        mode: *mode,
                    })
                    .values
                    .push(value);
            }
        }
        Ok(())
    }

    fn warn(&mut self, msg: String) {
        log::warn!("{msg}");
        self.report.warnings.push(msg);
    }

    /// Materialize the contiguous weekly grid and validate.
    pub fn finish(mut self) -> Result<(Panel, LoadReport), PanelError> {
        if !self.has_target {
            return Err(PanelError::NoTarget);
        }
        let mut weeks_by_county: BTreeMap<String, BTreeSet<WeekStamp>> = BTreeMap::new();
        for (name, week) in &self.present {
            weeks_by_county.entry(name.clone()).or_default().insert(*week);
        }
        let mut by_cell: BTreeMap<(String, WeekStamp), CellValues> = BTreeMap::new();
        for ((name, week, field), bucket) in &self.buckets {
            by_cell
                .entry((name.clone(), *week))
                .or_default()
                .push((field.clone(), bucket.value()));
        }
        let extras: BTreeSet<String> = self
            .buckets
            .keys()
            .filter_map(|(_, _, f)| match f {
                Field::Indicator(n) => Some(n.clone()),
                _ => None,
            })
            .collect();

        let mut series = Vec::new();
        for (name, weeks) in weeks_by_county {
            let first = *weeks.iter().next().expect("non-empty");
            let last = *weeks.iter().next_back().expect("non-empty");
            let n = first.weeks_until(last) as usize + 1;
            let mut rows = Vec::with_capacity(n);
            for i in 0..n {
                let week = first.plus_weeks(i as i64);
                let mut row = PanelRow::empty(week);
                for e in &extras {
                    row.extra.insert(e.clone(), None);
                }
                if !weeks.contains(&week) {
                    row.gap = true;
                    self.report.gap_rows += 1;
                    self.report
                        .warnings
                        .push(format!("{name}: no data for week {week}, inserted missing row"));
                }
                if let Some(cells) = by_cell.get(&(name.clone(), week)) {
                    for (field, value) in cells {
                        row.set(field, *value);
                    }
                }
                rows.push(row);
            }
            let county = if self.state_names.contains(&name) {
                CountyId::state(name)
            } else {
                CountyId::county(name)
            };
            series.push(CountySeries { county, rows });
        }

        let mut fields = vec![Field::Y, Field::XB, Field::XV, Field::St];
        fields.extend(extras.into_iter().map(Field::Indicator));
        for field in fields {
            let mut observed = 0;
            let mut total = 0;
            for s in series.iter().filter(|s| !s.county.state_level) {
                for r in &s.rows {
                    total += 1;
                    observed += r.get(&field).is_some() as usize;
                }
            }
            self.report.coverage.insert(field.name().to_string(), (observed, total));
        }

        let panel = Panel::new(series)?.with_populations(self.populations);
        Ok((panel, self.report))
    }
}

/// Load every source named in `schema`, resolving relative paths against `base_dir`.
pub fn load_panel(schema: &SchemaConfig, base_dir: &Path) -> Result<(Panel, LoadReport), PanelError> {
    let mut loader = PanelLoader::new(schema)?;
    for spec in &schema.sources {
        let path = if spec.path.is_absolute() {
            spec.path.clone()
        } else {
            base_dir.join(&spec.path)
        };
        let file = File::open(&path).map_err(|source| PanelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        loader.add_source(spec, file)?;
    }
    loader.finish()
}
