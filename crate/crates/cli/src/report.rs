//! Tab-separated evaluation report: one row per (metric, scope, name) under
//! a fixed header, then a blank line and `key=value` summary lines.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use imfield::Error;

pub const HEADER: &str = "metric\tscope\tname\tcount\tvalue";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Shape,
    Category,
    Overall,
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Shape => "shape",
            Scope::Category => "category",
            Scope::Overall => "overall",
        })
    }
}

impl FromStr for Scope {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "shape" => Ok(Scope::Shape),
            "category" => Ok(Scope::Category),
            "overall" => Ok(Scope::Overall),
            _ => Err(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub metric: String,
    pub scope: Scope,
    pub name: String,
    /// Shapes averaged into `value`.
    pub count: usize,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub rows: Vec<Row>,
    pub summary: Vec<(String, String)>,
}

/// One evaluated item: its name, category and one value per metric.
pub struct Measured {
    pub name: String,
    pub category: String,
    pub values: Vec<f64>,
}

impl Report {
    /// Per-item rows followed by per-category and overall means, metric by
    /// metric; categories are sorted by name.
    pub fn aggregate(metrics: &[&str], items: &[Measured]) -> Self {
        let mut r = Report::default();
        for (m, metric) in metrics.iter().enumerate() {
            let mut cats: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
            for it in items {
                r.push(metric, Scope::Shape, &it.name, 1, it.values[m]);
                cats.entry(&it.category).or_default().push(it.values[m]);
            }
            for (c, v) in &cats {
                r.push(metric, Scope::Category, c, v.len(), mean(v));
            }
            let all: Vec<f64> = items.iter().map(|it| it.values[m]).collect();
            r.push(metric, Scope::Overall, "all", all.len(), mean(&all));
            r.summary.push((format!("mean.{metric}"), format_value(mean(&all))));
        }
        r
    }

    pub fn push(&mut self, metric: &str, scope: Scope, name: &str, count: usize, value: f64) {
        self.rows.push(Row {
            metric: metric.into(),
            scope,
            name: name.into(),
            count,
            value,
        });
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.summary.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.summary.push((key.into(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.summary.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn value(&self, metric: &str, scope: Scope, name: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.scope == scope && r.name == name)
            .map(|r| r.value)
    }

    pub fn overall(&self, metric: &str) -> Option<f64> {
        self.value(metric, Scope::Overall, "all")
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                r.metric,
                r.scope,
                r.name,
                r.count,
                format_value(r.value)
            );
        }
        out.push('\n');
        for (k, v) in &self.summary {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn parse(text: &str) -> imfield::Result<Self> {
        let bad = |line: usize, msg: &str| Error::Format {
            offset: 0,
            msg: format!("report line {line}: {msg}"),
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == HEADER => {}
            _ => return Err(bad(1, "missing header")),
        }
        let mut r = Report::default();
        let mut in_summary = false;
        for (i, line) in lines {
            if line.is_empty() {
                in_summary = true;
                continue;
            }
            if in_summary {
                let (k, v) = line.split_once('=').ok_or_else(|| bad(i + 1, "expected key=value"))?;
                r.summary.push((k.into(), v.into()));
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let [metric, scope, name, count, value] = f[..] else {
                return Err(bad(i + 1, "expected 5 tab-separated fields"));
            };
            r.rows.push(Row {
                metric: metric.into(),
                scope: scope.parse().map_err(|_| bad(i + 1, "unknown scope"))?,
                name: name.into(),
                count: count.parse().map_err(|_| bad(i + 1, "bad count"))?,
                value: value.parse().map_err(|_| bad(i + 1, "bad value"))?,
            });
        }
        Ok(r)
    }
}

/// Shortest text that parses back to the same `f64`.
pub fn format_value(v: f64) -> String {
    format!("{v:e}")
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
