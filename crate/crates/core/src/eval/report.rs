//! Evaluation reports and their file forms.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::metrics::{metric_o2b, metric_o2o, metric_osr, metric_weighted_kendall};
use crate::fsutil;
use crate::perf::PerfTable;
use crate::pipeline::Mode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    MatchAndChoose,
    Overall,
    Initial,
    Direct,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::MatchAndChoose => "match_and_choose",
            Method::Overall => "overall",
            Method::Initial => "initial",
            Method::Direct => "direct",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "match_and_choose" => Ok(Method::MatchAndChoose),
            "overall" => Ok(Method::Overall),
            "initial" => Ok(Method::Initial),
            "direct" => Ok(Method::Direct),
            _ => Err(Error::Config(format!("unknown method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub method: Method,
    pub mode: Mode,
    pub seed: u64,
    pub sparsity_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetResult {
    pub dataset: String,
    pub selected: String,
    pub true_best: String,
    pub predicted_order: Vec<String>,
    pub true_order: Vec<String>,
    pub tau_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub osr: f64,
    pub kendall_tau_w: f64,
    pub o2b: f64,
    pub o2o: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ReportConfig,
    pub per_dataset: Vec<DatasetResult>,
    pub aggregates: Aggregates,
}

impl EvalReport {
    /// Score predicted orderings (dataset -> best-first models) against
    /// the full truth table.
    pub fn assemble(config: ReportConfig, orders: BTreeMap<String, Vec<String>>, truth: &PerfTable) -> Result<Self> {
        let mut per_dataset = Vec::with_capacity(orders.len());
        let mut selections = BTreeMap::new();
        for (d, order) in orders {
            let true_order = truth.true_order(&d);
            let tau_w = metric_weighted_kendall(&order, &true_order)?;
            let selected = order
                .first()
                .cloned()
                .ok_or_else(|| Error::Input(format!("empty ordering for {d}")))?;
            selections.insert(d.clone(), selected.clone());
            per_dataset.push(DatasetResult {
                true_best: true_order[0].clone(),
                dataset: d,
                selected,
                predicted_order: order,
                true_order,
                tau_w,
            });
        }
        let kendall_tau_w = per_dataset.iter().map(|r| r.tau_w).sum::<f64>() / per_dataset.len().max(1) as f64;
        let aggregates = Aggregates {
            osr: metric_osr(&selections, truth)?,
            kendall_tau_w,
            o2b: metric_o2b(&selections, truth)?,
            o2o: metric_o2o(&selections, truth)?,
        };
        Ok(Self {
            config,
            per_dataset,
            aggregates,
        })
    }

    pub fn selections(&self) -> BTreeMap<String, String> {
        self.per_dataset
            .iter()
            .map(|r| (r.dataset.clone(), r.selected.clone()))
            .collect()
    }

    /// Flat table, one row per dataset, then a `metric,value` footer.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,selected,true_best,tau_w\n");
        for r in &self.per_dataset {
            let _ = writeln!(out, "{},{},{},{}", r.dataset, r.selected, r.true_best, r.tau_w);
        }
        let a = &self.aggregates;
        let _ = write!(
            out,
            "\nmetric,value\nosr,{}\nkendall_tau_w,{}\no2b,{}\no2o,{}\n",
            a.osr, a.kendall_tau_w, a.o2b, a.o2o
        );
        out
    }

    /// Write `<stem>.json` and `<stem>.csv` under `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        fsutil::write_json(&dir.join(format!("{stem}.json")), self)?;
        fsutil::write_atomic(&dir.join(format!("{stem}.csv")), self.to_csv().as_bytes())
    }
}

/// Mean OSR over seeds at one drop fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityPoint {
    pub fraction: f64,
    pub mean_osr: f64,
    /// Population standard deviation over seeds.
    pub stddev: f64,
    pub per_seed: Vec<f64>,
}

impl SparsityPoint {
    pub fn from_runs(fraction: f64, per_seed: Vec<f64>) -> Self {
        let n = per_seed.len().max(1) as f64;
        let mean_osr = per_seed.iter().sum::<f64>() / n;
        let var = per_seed.iter().map(|x| (x - mean_osr).powi(2)).sum::<f64>() / n;
        Self {
            fraction,
            mean_osr,
            stddev: var.sqrt(),
            per_seed,
        }
    }
}

pub fn sparsity_tsv(points: &[SparsityPoint]) -> String {
    let mut out = String::from("fraction\tmean_osr\tstddev\n");
    for p in points {
        let _ = writeln!(out, "{}\t{}\t{}", p.fraction, p.mean_osr, p.stddev);
    }
    out
}
