use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::ContextError;
use crate::panel::WeekStamp;

/// Which template to render.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PromptMode {
    /// Forecast the target series directly; answer is one `y:` line.
    UnivariateY,
    /// Forecast the three contextual indicators; answer is `X_B`, `X_V`, `s_t` lines.
    ContextTriple,
}

pub const LABEL_Y: &str = "y";
pub const LABEL_XB: &str = "X_B";
pub const LABEL_XV: &str = "X_V";
pub const LABEL_ST: &str = "s_t";
pub const CONTEXT_LABELS: [&str; 3] = [LABEL_XB, LABEL_XV, LABEL_ST];

/// Appended to the prompt on the single format retry.
pub const STRICT_FORMAT_SUFFIX: &str = "\n\nIMPORTANT: Your previous answer could not be parsed. \
Reply with ONLY the requested line(s), exactly in the form `label: number`, \
using a plain decimal number and no other words, units, or formatting.";

/// One week of the recent-data block, rendered as `date: label=value, ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecentEntry {
    pub date: WeekStamp,
    pub values: Vec<(String, Option<f64>)>,
}

impl RecentEntry {
    pub fn value(&self, label: &str) -> Option<f64> {
        self.values.iter().find(|(l, _)| l == label).and_then(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub geography: String,
    /// Week-ending date of the week being forecast.
    pub prediction_date: WeekStamp,
    /// Chronological, oldest first.
    pub recent_block: Vec<RecentEntry>,
    pub mode: PromptMode,
}

impl PromptSpec {
    /// Last observed value of `label` in the recent block.
    pub fn last_observed(&self, label: &str) -> Option<f64> {
        self.recent_block.iter().rev().find_map(|e| e.value(label))
    }
}

/// Shortest decimal that parses back to the same `f64`.
pub fn format_number(v: f64) -> String {
    format!("{v}")
}

fn render_entry(entry: &RecentEntry) -> String {
    let mut line = format!("{}: ", entry.date);
    for (i, (label, value)) in entry.values.iter().enumerate() {
        if i > 0 {
            line.push_str(", ");
        }
        match value {
            Some(v) => write!(line, "{label}={}", format_number(*v)).unwrap(),
            None => write!(line, "{label}=NA").unwrap(),
        }
    }
    line
}

/// Render the fixed prompt template. Identical specs give identical bytes.
pub fn build_prompt(spec: &PromptSpec, window_len: usize) -> Result<String, ContextError> {
    if spec.recent_block.len() != window_len {
        return Err(ContextError::RecentBlockLength {
            expected: window_len,
            got: spec.recent_block.len(),
        });
    }
    if spec.recent_block.windows(2).any(|p| p[0].date >= p[1].date) {
        return Err(ContextError::UnorderedBlock);
    }
    let recent = spec
        .recent_block
        .iter()
        .map(render_entry)
        .collect::<Vec<_>>()
        .join("\n");
    let head = format!(
        "Given the last {window_len} weekly observations for region {}:\n\n{recent}\n\n",
        spec.geography
    );
    let tail = match spec.mode {
        PromptMode::UnivariateY => format!(
            "Predict next week's value (week ending {}) for the numeric series y.\n\n\
             Return exactly one line:\n\
             y: <number>",
            spec.prediction_date
        ),
        PromptMode::ContextTriple => format!(
            "Predict next week's values (week ending {}) for three numeric series: X_B, X_V, s_t\n\n\
             Return exactly three lines:\n\
             X_B: <number>\n\
             X_V: <number>\n\
             s_t: <number>",
            spec.prediction_date
        ),
    };
    Ok(head + &tail)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(mode: PromptMode) -> PromptSpec {
        let start = WeekStamp::parse("2020-04-06").unwrap();
        let recent_block = (0..8)
            .map(|i| RecentEntry {
                date: start.plus_weeks(i),
                values: match mode {
                    PromptMode::UnivariateY => vec![("y".into(), Some(0.46 + i as f64))],
                    PromptMode::ContextTriple => vec![
                        ("y".into(), Some(1.0)),
                        ("X_B".into(), Some(12.0)),
                        ("X_V".into(), if i == 3 { None } else { Some(2.5) }),
                        ("s_t".into(), Some(100.0)),
                    ],
                },
            })
            .collect();
        PromptSpec {
            geography: "Adams County".into(),
            prediction_date: start.plus_weeks(8),
            recent_block,
            mode,
        }
    }

    #[test]
    fn univariate_template() {
        let text = build_prompt(&spec(PromptMode::UnivariateY), 8).unwrap();
        assert!(
            text.starts_with("Given the last 8 weekly observations for region Adams County:\n\n2020-04-06: y=0.46\n")
        );
        assert!(text.contains("Predict next week's value (week ending 2020-06-01) for the numeric series y."));
        assert!(text.ends_with("Return exactly one line:\ny: <number>"));
    }

    #[test]
    fn context_template() {
        let text = build_prompt(&spec(PromptMode::ContextTriple), 8).unwrap();
        assert!(text.contains("for three numeric series: X_B, X_V, s_t"));
        assert!(text.contains("2020-04-27: y=1, X_B=12, X_V=NA, s_t=100"));
        assert!(text.ends_with("Return exactly three lines:\nX_B: <number>\nX_V: <number>\ns_t: <number>"));
    }

    #[test]
    fn deterministic_and_length_checked() {
        let s = spec(PromptMode::UnivariateY);
        assert_eq!(build_prompt(&s, 8).unwrap(), build_prompt(&s.clone(), 8).unwrap());
        assert!(matches!(
            build_prompt(&s, 7),
            Err(ContextError::RecentBlockLength { expected: 7, got: 8 })
        ));
    }

    #[test]
    fn numbers_round_trip_through_text() {
        for v in [0.1, 1.0 / 3.0, 12345.678, 1e-7, 2.5e20, 0.0] {
            assert_eq!(format_number(v).parse::<f64>().unwrap(), v);
        }
    }
}
