use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Cell, StratifiedMetrics};
use crate::error::{Error, Result};
use crate::nn::Method;
use crate::splits::{Protocol, SplitName, Stratum};

/// How precision is aggregated; stored in every report.
pub const PRECISION_RULE: &str = "zero: a class with no predictions contributes precision 0; \
restricted: stratum metrics use only the stratum's samples and class-stratum precision averages \
over the stratum's classes";

pub const CSV_HEADER: &str = "protocol,split,method,seed,overall_acc,overall_prec,\
many_c_acc,many_c_prec,medium_c_acc,medium_c_prec,few_c_acc,few_c_prec,\
many_a_acc,many_a_prec,medium_a_acc,medium_a_prec,few_a_acc,few_a_prec";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Mean pairwise distance between per-environment class feature means.
    pub center_invariance: Option<f64>,
    /// Pearson r between ground-truth confidence and similarity to the class mean feature.
    pub confidence_center_pearson: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub protocol: Protocol,
    pub split: SplitName,
    pub method: Method,
    pub seed: Option<u64>,
    pub metrics: StratifiedMetrics,
    #[serde(default)]
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub precision_rule: String,
    pub entries: Vec<ReportEntry>,
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}", 100.0 * x)).unwrap_or_default()
}

impl Default for Report {
    fn default() -> Self {
        Self::new(Vec::new())
    }
}

impl Report {
    pub fn new(entries: Vec<ReportEntry>) -> Self {
        Self {
            precision_rule: PRECISION_RULE.to_string(),
            entries,
            provenance: BTreeMap::new(),
        }
    }

    /// Pretty JSON with keys in sorted order, so equal reports give equal bytes.
    pub fn to_json(&self) -> Result<String> {
        let value = serde_json::to_value(self)?;
        Ok(serde_json::to_string_pretty(&value)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// One row per entry; accuracy and precision in percent, blank where a stratum is empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for e in &self.entries {
            let cell = |c: Option<&Cell>| format!("{},{}", pct(c.map(|c| c.accuracy)), pct(c.map(|c| c.precision)));
            let mut row = format!(
                "{},{},{},{},{}",
                e.protocol,
                e.split.name(),
                e.method,
                e.seed.map(|s| s.to_string()).unwrap_or_default(),
                cell(Some(&e.metrics.overall))
            );
            for map in [&e.metrics.class, &e.metrics.attribute] {
                for s in Stratum::ALL {
                    let _ = write!(row, ",{}", cell(map.get(&s).and_then(|c| c.as_ref())));
                }
            }
            out.push_str(&row);
            out.push('\n');
        }
        out
    }

    /// Writes JSON, or CSV when the path ends in `.csv`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = if path.extension().is_some_and(|e| e == "csv") {
            self.to_csv()
        } else {
            self.to_json()?
        };
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| Error::format("report", e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry() -> ReportEntry {
        let cell = Cell {
            accuracy: 0.5,
            precision: 0.25,
            n: 4,
            correct: 2,
        };
        let mut class = BTreeMap::new();
        let mut attribute = BTreeMap::new();
        for s in Stratum::ALL {
            class.insert(s, (s == Stratum::Many).then_some(cell));
            attribute.insert(s, Some(cell));
        }
        ReportEntry {
            protocol: Protocol::Glt,
            split: SplitName::TestGBL,
            method: Method::Ifl2,
            seed: Some(3),
            metrics: StratifiedMetrics {
                overall: cell,
                class,
                attribute,
            },
            diagnostics: Diagnostics {
                center_invariance: Some(0.1),
                confidence_center_pearson: None,
            },
        }
    }

    #[test]
    fn json_round_trip() {
        let mut r = Report::new(vec![entry()]);
        r.provenance.insert("dataset".into(), "abc".into());
        let text = r.to_json().unwrap();
        assert_eq!(Report::from_json(&text).unwrap(), r);
        assert_eq!(Report::from_json(&text).unwrap().to_json().unwrap(), text);
    }

    #[test]
    fn csv_layout() {
        let csv = Report::new(vec![entry()]).to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        let cols: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(cols.len(), CSV_HEADER.split(',').count());
        assert_eq!(&cols[..6], &["GLT", "Test-GBL", "ifl2", "3", "50.00", "25.00"]);
        assert_eq!(cols[8], "");
    }
}
