use std::fs;
use std::path::Path;

use gunlearn::eval::{read_metrics, MetricRecord};
use gunlearn::{Error, Result};

use crate::commands::{Context, METRICS_FILE};

/// Mean and sample standard deviation of one (stage, metric) group.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub stage: String,
    pub metric: String,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

/// Groups records by (stage, metric) in order of first appearance.
pub fn aggregate(records: &[MetricRecord]) -> Vec<Summary> {
    let mut groups: Vec<(String, String, Vec<f64>)> = Vec::new();
    for r in records {
        match groups.iter_mut().find(|g| g.0 == r.stage && g.1 == r.metric) {
            Some(g) => g.2.push(r.value),
            None => groups.push((r.stage.clone(), r.metric.clone(), vec![r.value])),
        }
    }
    groups
        .into_iter()
        .map(|(stage, metric, values)| {
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let std = if values.len() > 1 {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            Summary {
                stage,
                metric,
                count: values.len(),
                mean,
                std,
            }
        })
        .collect()
}

pub fn summary_csv(rows: &[Summary]) -> String {
    let mut out = String::from("stage,metric,count,mean,std\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{},{}\n", r.stage, r.metric, r.count, r.mean, r.std));
    }
    out
}

/// Two-column series: MIA AUC per model/stage, and F1 against the edge-noise ratio.
pub fn plot_series(rows: &[Summary]) -> Vec<(String, String)> {
    let mut auc = String::from("method,auc\n");
    let mut seen = Vec::new();
    for r in rows.iter().filter(|r| r.metric.starts_with("mia_auc")) {
        let label = match r.metric.strip_prefix("mia_auc_") {
            Some(model) => model.to_string(),
            None => r.stage.clone(),
        };
        if !seen.contains(&label) {
            auc.push_str(&format!("{label},{}\n", r.mean));
            seen.push(label);
        }
    }
    let mut files = vec![("auc_by_method.csv".to_string(), auc)];
    for metric in ["f1_clean", "f1_poisoned", "f1_unlearned"] {
        let mut points: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.metric == metric)
            .filter_map(|r| r.stage.strip_prefix("edge:")?.parse::<f64>().ok().map(|rho| (rho, r.mean)))
            .collect();
        if points.is_empty() {
            continue;
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        let body: String = points.iter().map(|(x, y)| format!("{x},{y}\n")).collect();
        files.push((format!("{metric}_vs_rho.csv"), format!("rho,{metric}\n{body}")));
    }
    files
}

pub fn cmd_report(ctx: &Context, metrics: Option<&Path>) -> Result<()> {
    let path = metrics.map(Path::to_path_buf).unwrap_or_else(|| ctx.out.join(METRICS_FILE));
    let records = read_metrics(&path)?;
    let rows = aggregate(&records);
    let plots = ctx.out.join("plots");
    fs::create_dir_all(&plots).map_err(|e| Error::io(&plots, e))?;
    let report = ctx.out.join("report.csv");
    fs::write(&report, summary_csv(&rows)).map_err(|e| Error::io(&report, e))?;
    for (name, body) in plot_series(&rows) {
        let p = plots.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}
