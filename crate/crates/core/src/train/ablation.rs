use std::fmt::Write as _;

use super::{train, MetricReport, ModelKind, TrainConfig, TrainError};
use crate::data::Sample;
use crate::model::HyperParams;

/// One configuration of an ablation grid.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationCell {
    pub name: String,
    pub model: ModelKind,
    pub hyper: HyperParams,
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub name: String,
    pub seeds: Vec<u64>,
    pub aucs: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub usage_variance: Option<f64>,
    pub reports: Vec<MetricReport>,
}

/// Arithmetic mean and sample standard deviation (`n - 1` denominator;
/// zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    assert!(!xs.is_empty(), "mean of nothing");
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Baseline, memory network without MUR and MIU, with MUR, with both.
pub fn standard_grid(base: &HyperParams) -> Vec<AblationCell> {
    let with = |mur, miu| HyperParams {
        mur,
        miu,
        ..base.clone()
    };
    vec![
        AblationCell {
            name: "Embedding&MLP".into(),
            model: ModelKind::EmbeddingMlp,
            hyper: base.clone(),
        },
        AblationCell {
            name: "MIMN-base".into(),
            model: ModelKind::Mimn,
            hyper: with(false, false),
        },
        AblationCell {
            name: "MIMN+MUR".into(),
            model: ModelKind::Mimn,
            hyper: with(true, false),
        },
        AblationCell {
            name: "MIMN+MUR+MIU".into(),
            model: ModelKind::Mimn,
            hyper: with(true, true),
        },
    ]
}

/// The memory network at several slot counts.
pub fn slot_grid(base: &HyperParams, slots: &[usize]) -> Vec<AblationCell> {
    slots
        .iter()
        .map(|&m| AblationCell {
            name: format!("MIMN m={m}"),
            model: ModelKind::Mimn,
            hyper: HyperParams {
                slots: m,
                k_top: base.k_top.min(m),
                ..base.clone()
            },
        })
        .collect()
}

/// Trains every cell once per seed and evaluates it on `test`.
pub fn run_ablation(
    cells: &[AblationCell],
    base: &TrainConfig,
    train_set: &[Sample],
    test_set: &[Sample],
    seeds: &[u64],
    n_items: usize,
    n_categories: usize,
) -> Result<Vec<AblationRow>, TrainError> {
    if seeds.is_empty() {
        return Err(TrainError::Config("at least one seed is required".into()));
    }
    let mut rows = Vec::with_capacity(cells.len());
    for cell in cells {
        let mut aucs = Vec::with_capacity(seeds.len());
        let mut reports = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let cfg = TrainConfig {
                model: cell.model,
                hyper: cell.hyper.clone(),
                seed,
                ..base.clone()
            };
            let (_, report) = train(&cfg, train_set, Some(test_set), n_items, n_categories)?;
            aucs.push(report.auc.expect("evaluated on a nonempty test set"));
            reports.push(report);
        }
        let (mean, std) = mean_std(&aucs);
        let vars: Vec<f64> = reports.iter().filter_map(|r| r.usage_variance).collect();
        rows.push(AblationRow {
            name: cell.name.clone(),
            seeds: seeds.to_vec(),
            aucs,
            mean,
            std,
            usage_variance: (!vars.is_empty()).then(|| mean_std(&vars).0),
            reports,
        });
    }
    Ok(rows)
}

impl AblationRow {
    /// `mean ± std` with four decimals.
    pub fn summary(&self) -> String {
        format!("{:.4} ± {:.4}", self.mean, self.std)
    }
}

/// Plain-text table: one row per cell.
pub fn format_table(rows: &[AblationRow]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(5).max(5);
    let mut out = format!(
        "{:<width$}  {:>17}  {:>10}  runs\n",
        "model", "AUC (mean ± std)", "g-var"
    );
    for r in rows {
        let var = r
            .usage_variance
            .map_or_else(|| "-".to_string(), |v| format!("{v:.4e}"));
        let _ = writeln!(
            out,
            "{:<width$}  {:>17}  {:>10}  {}",
            r.name,
            r.summary(),
            var,
            r.aucs.len()
        );
    }
    out
}
