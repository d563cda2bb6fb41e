//! CSV renderings of a [`Summary`].
//!
//! * `table1_mape.csv`: model × tertile MAPE, mean and SD in separate columns.
//! * `table2_mpe.csv`: as above with a leading overall pair.
//! * `table3_lead_lag.csv`: `l*` and `rho*` across all counties, Lag-1 excluded.
//! * `county_{mape,mpe,lead_lag}_{low,mid,high}.csv`: per-county tables.
//! * `runs.csv`: run-level per-county values before run averaging.
//! * `tertile_summary.csv`: every summary row in long form.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::aggregate::{CountyLeadLag, CountyMetrics, Group, Metric, Summary};
use crate::models::ModelId;
use crate::panel::{Tertile, TertileAssignment};

fn num(v: f64) -> String {
    format!("{v}")
}

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

fn models_of(summary: &Summary) -> BTreeSet<ModelId> {
    summary.county_metrics.iter().map(|c| c.model).collect()
}

fn groups_of(summary: &Summary, metric: Metric) -> BTreeSet<Group> {
    summary
        .tertile_rows
        .iter()
        .filter(|r| r.metric == metric)
        .map(|r| r.group)
        .collect()
}

fn cell(summary: &Summary, model: ModelId, metric: Metric, group: Group) -> [String; 2] {
    summary
        .tertile_rows
        .iter()
        .find(|r| r.model == model && r.metric == metric && r.group == group)
        .map_or([String::new(), String::new()], |r| [num(r.mean), num(r.sd)])
}

/// Wide model × group table for one metric.
pub fn write_metric_table<W: Write>(summary: &Summary, metric: Metric, writer: W) -> io::Result<()> {
    let groups = groups_of(summary, metric);
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["model".to_string(), "label".to_string()];
    for g in &groups {
        header.push(format!("{g}_mean"));
        header.push(format!("{g}_sd"));
    }
    w.write_record(&header).map_err(csv_err)?;
    for model in models_of(summary) {
        if metric.is_lead_lag() && model == ModelId::Lag1 {
            continue;
        }
        let mut row = vec![model.key().to_string(), model.label().to_string()];
        for g in &groups {
            row.extend(cell(summary, model, metric, *g));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()
}

/// Overall lead-lag summary: one row per model except Lag-1.
pub fn write_lead_lag_table<W: Write>(summary: &Summary, writer: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "model",
        "label",
        "ell_star_mean",
        "ell_star_sd",
        "rho_star_mean",
        "rho_star_sd",
        "n_counties",
    ])
    .map_err(csv_err)?;
    let models: BTreeSet<ModelId> = summary.county_lead_lag.iter().map(|c| c.model).collect();
    for model in models {
        let [em, es] = cell(summary, model, Metric::EllStar, Group::Overall);
        let [rm, rs] = cell(summary, model, Metric::RhoStar, Group::Overall);
        let n = summary
            .tertile_rows
            .iter()
            .find(|r| r.model == model && r.metric == Metric::RhoStar && r.group == Group::Overall)
            .map_or(0, |r| r.n_counties);
        w.write_record([model.key(), model.label(), &em, &es, &rm, &rs, &n.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()
}

fn members(tertiles: &TertileAssignment, t: Tertile) -> Vec<String> {
    let mut m: Vec<String> = tertiles.members(t).into_iter().map(String::from).collect();
    m.sort();
    m
}

/// Per-county `mean ± sd` table for MAPE or MPE within one tertile.
pub fn write_county_metric_table<W: Write>(
    summary: &Summary,
    tertiles: &TertileAssignment,
    tertile: Tertile,
    metric: Metric,
    writer: W,
) -> io::Result<()> {
    let pick: fn(&CountyMetrics) -> (f64, f64) = match metric {
        Metric::Mape => |c| (c.mape_mean, c.mape_sd),
        _ => |c| (c.mpe_mean, c.mpe_sd),
    };
    let models = models_of(summary);
    let lookup: BTreeMap<(&str, ModelId), &CountyMetrics> = summary
        .county_metrics
        .iter()
        .map(|c| ((c.county.as_str(), c.model), c))
        .collect();
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["county".to_string()];
    for m in &models {
        header.push(format!("{}_mean", m.key()));
        header.push(format!("{}_sd", m.key()));
    }
    w.write_record(&header).map_err(csv_err)?;
    for county in members(tertiles, tertile) {
        if !models.iter().any(|m| lookup.contains_key(&(county.as_str(), *m))) {
            continue;
        }
        let mut row = vec![county.clone()];
        for m in &models {
            match lookup.get(&(county.as_str(), *m)) {
                Some(c) => {
                    let (mean, sd) = pick(c);
                    row.push(num(mean));
                    row.push(num(sd));
                }
                None => row.extend([String::new(), String::new()]),
            }
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()
}

/// Per-county `l*`/`rho*` table within one tertile.
pub fn write_county_lead_lag_table<W: Write>(
    summary: &Summary,
    tertiles: &TertileAssignment,
    tertile: Tertile,
    writer: W,
) -> io::Result<()> {
    let models: BTreeSet<ModelId> = summary.county_lead_lag.iter().map(|c| c.model).collect();
    let lookup: BTreeMap<(&str, ModelId), &CountyLeadLag> = summary
        .county_lead_lag
        .iter()
        .map(|c| ((c.county.as_str(), c.model), c))
        .collect();
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["county".to_string()];
    for m in &models {
        header.push(format!("{}_ell_star", m.key()));
        header.push(format!("{}_rho_star", m.key()));
    }
    w.write_record(&header).map_err(csv_err)?;
    for county in members(tertiles, tertile) {
        if !models.iter().any(|m| lookup.contains_key(&(county.as_str(), *m))) {
            continue;
        }
        let mut row = vec![county.clone()];
        for m in &models {
            match lookup.get(&(county.as_str(), *m)) {
                Some(c) => {
                    row.push(num(c.ell_star));
                    row.push(num(c.rho_star));
                }
                None => row.extend([String::new(), String::new()]),
            }
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()
}

/// Run-level values, one row per (model, county, run).
pub fn write_runs_table<W: Write>(summary: &Summary, writer: W) -> io::Result<()> {
    let ll: BTreeMap<(ModelId, &str, u32), (i32, f64)> = summary
        .run_lead_lag
        .iter()
        .filter_map(|r| {
            let res = r.result.as_ref()?;
            Some(((r.model, r.county.as_str(), r.run), (res.ell_star, res.rho_star)))
        })
        .collect();
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "model",
        "county",
        "run",
        "n_weeks",
        "mape_mean",
        "mape_sd",
        "mpe_mean",
        "mpe_sd",
        "ell_star",
        "rho_star",
    ])
    .map_err(csv_err)?;
    for r in &summary.run_metrics {
        let (ell, rho) = ll
            .get(&(r.model, r.county.as_str(), r.run))
            .map_or((String::new(), String::new()), |(e, p)| (e.to_string(), num(*p)));
        w.write_record([
            r.model.key().to_string(),
            r.county.clone(),
            r.run.to_string(),
            r.n_weeks.to_string(),
            num(r.mape_mean),
            num(r.mape_sd),
            num(r.mpe_mean),
            num(r.mpe_sd),
            ell,
            rho,
        ])
        .map_err(csv_err)?;
    }
    w.flush()
}

/// Long-form dump of every summary row.
pub fn write_tertile_summary<W: Write>(summary: &Summary, writer: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["model", "metric", "group", "mean", "sd", "n_counties"])
        .map_err(csv_err)?;
    for r in &summary.tertile_rows {
        w.write_record([
            r.model.key().to_string(),
            r.metric.to_string(),
            r.group.to_string(),
            num(r.mean),
            num(r.sd),
            r.n_counties.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()
}

fn create(dir: &Path, name: &str, written: &mut Vec<PathBuf>) -> io::Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path)?;
    written.push(path);
    Ok(BufWriter::new(f))
}

/// Write every table into `dir`; returns the paths written, in order.
pub fn write_report(summary: &Summary, tertiles: &TertileAssignment, dir: &Path) -> io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    write_metric_table(summary, Metric::Mape, create(dir, "table1_mape.csv", &mut written)?)?;
    write_metric_table(summary, Metric::Mpe, create(dir, "table2_mpe.csv", &mut written)?)?;
    write_lead_lag_table(summary, create(dir, "table3_lead_lag.csv", &mut written)?)?;
    for t in Tertile::ALL {
        if tertiles.members(t).is_empty() {
            continue;
        }
        let name = t.as_str();
        write_county_metric_table(
            summary,
            tertiles,
            t,
            Metric::Mape,
            create(dir, &format!("county_mape_{name}.csv"), &mut written)?,
        )?;
        write_county_metric_table(
            summary,
            tertiles,
            t,
            Metric::Mpe,
            create(dir, &format!("county_mpe_{name}.csv"), &mut written)?,
        )?;
        write_county_lead_lag_table(
            summary,
            tertiles,
            t,
            create(dir, &format!("county_lead_lag_{name}.csv"), &mut written)?,
        )?;
    }
    write_runs_table(summary, create(dir, "runs.csv", &mut written)?)?;
    write_tertile_summary(summary, create(dir, "tertile_summary.csv", &mut written)?)?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluate::aggregate::summarize;
    use crate::evaluate::ForecastRecord;
    use crate::panel::{CountyMeta, WeekStamp};

    fn fixture() -> (Summary, TertileAssignment) {
        let tertiles = TertileAssignment {
            meta: [("A", Tertile::Low), ("B", Tertile::Mid), ("C", Tertile::High)]
                .into_iter()
                .map(|(c, t)| {
                    (
                        c.to_string(),
                        CountyMeta {
                            county: c.to_string(),
                            population: None,
                            mean_weekly_y: 0.0,
                            tertile: t,
                        },
                    )
                })
                .collect(),
            warnings: Vec::new(),
        };
        let start = WeekStamp::parse("2021-01-03").unwrap();
        let mut records = Vec::new();
        for county in ["A", "B", "C"] {
            let ys: Vec<f64> = (0..14).map(|i| 10.0 + ((i * 5 + county.len()) % 7) as f64).collect();
            for run in 1..=2 {
                for i in 1..ys.len() {
                    let week = start.plus_weeks(i as i64);
                    records.push(ForecastRecord::new(county, week, ModelId::Lag1, run, ys[i - 1], ys[i]));
                    let smooth = 0.5 * (ys[i - 1] + ys[i.saturating_sub(2)]);
                    records.push(ForecastRecord::new(county, week, ModelId::Holt, run, smooth, ys[i]));
                }
            }
        }
        (summarize(&records, &tertiles, 3), tertiles)
    }

    fn render(f: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> String {
        let mut buf = Vec::new();
        f(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn table_shapes() {
        let (s, _) = fixture();
        let t1 = render(|b| write_metric_table(&s, Metric::Mape, b));
        let lines: Vec<&str> = t1.lines().collect();
        assert_eq!(
            lines[0],
            "model,label,low_mean,low_sd,mid_mean,mid_sd,high_mean,high_sd"
        );
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("lag1,Lag-1,"));

        let t2 = render(|b| write_metric_table(&s, Metric::Mpe, b));
        assert!(t2.starts_with("model,label,overall_mean,overall_sd,low_mean"));

        let t3 = render(|b| write_lead_lag_table(&s, b));
        let lines: Vec<&str> = t3.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[1].starts_with("es,Exp. Smoothing,"));
    }

    #[test]
    fn county_tables() {
        let (s, t) = fixture();
        let low = render(|b| write_county_metric_table(&s, &t, Tertile::Low, Metric::Mape, b));
        let lines: Vec<&str> = low.lines().collect();
        assert_eq!(lines[0], "county,lag1_mean,lag1_sd,es_mean,es_sd");
        assert_eq!(lines.len(), 2);
        assert!(lines[1].starts_with("A,"));
        let ll = render(|b| write_county_lead_lag_table(&s, &t, Tertile::High, b));
        assert!(ll.starts_with("county,es_ell_star,es_rho_star\nC,"));
    }

    #[test]
    fn runs_table_keeps_every_run() {
        let (s, _) = fixture();
        let runs = render(|b| write_runs_table(&s, b));
        // 2 models × 3 counties × 2 runs
        assert_eq!(runs.lines().count(), 13);
    }

    #[test]
    fn write_report_is_deterministic() {
        let (s, t) = fixture();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let pa = write_report(&s, &t, a.path()).unwrap();
        let pb = write_report(&s, &t, b.path()).unwrap();
        assert_eq!(pa.len(), 14);
        for (x, y) in pa.iter().zip(&pb) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
    }
}
