//! CSV and text renderings of a report and the report directory.

use std::path::Path;


use crate::error::{Error, Result};
use crate::pretext::PretextTask;

use super::*;

fn fmt_opt(v: Option<f64>, status: CellStatus) -> String {
    match (v, status) {
        (Some(v), _) => format!("{v:.2}"),
        (None, CellStatus::Skipped) => "skipped".into(),
        (None, _) => "failed".into(),
    }
}

fn csv_bytes(rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

pub fn table1_csv(report: &RunReport) -> Result<Vec<u8>> {
    let mut rows = vec![std::iter::once("Model type".to_string())
        .chain(Init::ALL.iter().map(|i| i.column().to_string()))
        .collect::<Vec<_>>()];
    for &regime in &report.config.regimes {
        let mut row = vec![regime.label(report.config.classifier_train.epochs)];
        for init in Init::ALL {
            let c = report.cell(init, regime).expect("every cell present");
            row.push(fmt_opt(c.accuracy_pct, c.status));
        }
        rows.push(row);
    }
    csv_bytes(&rows)
}

pub fn table2_csv(report: &RunReport) -> Result<Vec<u8>> {
    let header = [
        "Mean Squared Error",
        "Average Absolute Difference (scaled)",
        "Average Absolute Difference (not scaled)",
        "Standard Deviation",
    ];
    let t = &report.table2;
    let row = match t.metrics {
        Some(m) => vec![
            format!("{:.4}", m.mse),
            format!("{:.4}", m.aad_scaled),
            format!("{:.2}", m.aad_degrees),
            format!("{:.2}", m.std_degrees),
        ],
        None => vec![fmt_opt(None, t.status); 4],
    };
    csv_bytes(&[header.iter().map(|s| s.to_string()).collect(), row])
}

pub fn table3_csv(report: &RunReport) -> Result<Vec<u8>> {
    let header = [
        "Self-supervision method",
        "Mean Squared Error (average)",
        "Mean Squared Error (standard deviation)",
        "Structural Similarity Index (average)",
        "Structural Similarity Index (standard deviation)",
    ];
    let mut rows = vec![header.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
    for r in &report.table3 {
        let name = match r.task {
            PretextTask::Inpaint => "Missing Patch",
            _ => "Corruption Removal",
        };
        let mut row = vec![name.to_string()];
        match r.metrics {
            Some(m) => row.extend([
                format!("{:.1}", m.mse_mean),
                format!("{:.1}", m.mse_std),
                format!("{:.3}", m.ssim_mean),
                format!("{:.3}", m.ssim_std),
            ]),
            None => row.extend(vec![fmt_opt(None, r.status); 4]),
        }
        rows.push(row);
    }
    csv_bytes(&rows)
}

fn status_text(status: CellStatus, error: Option<&str>) -> String {
    match (status, error) {
        (CellStatus::Skipped, _) => "skipped".into(),
        (_, Some(e)) => format!("failed: {e}"),
        _ => "failed".into(),
    }
}

pub fn report_text(report: &RunReport) -> String {
    let p = &report.provenance;
    let mut s = String::new();
    s.push_str(&format!("schema_version: {}\n", report.schema_version));
    s.push_str(&format!("toolkit_version: {}\n", p.toolkit_version));
    s.push_str(&format!("config_hash: {}\n", p.config_hash));
    s.push_str(&format!("seeds: {:?}\n", p.seeds));
    s.push_str(&format!("started_at: {}\n", p.started_at));
    s.push_str(&format!("finished_at: {}\n", p.finished_at));
    s.push_str(&format!("ssim_window: {}\n\n", report.config.ssim.window));
    s.push_str("Classification accuracy (%)\n");
    for &regime in &report.config.regimes {
        s.push_str(&format!("  {}\n", regime.label(report.config.classifier_train.epochs)));
        for init in Init::ALL {
            let c = report.cell(init, regime).expect("every cell present");
            s.push_str(&format!("    {:<22} {}", init.column(), fmt_opt(c.accuracy_pct, c.status)));
            if let Some(es) = &c.early_stopping {
                s.push_str(&format!("  (stopped at {:?})", es.stopped_epochs));
            }
            if let Some(e) = &c.error {
                s.push_str(&format!("  error: {e}"));
            }
            s.push('\n');
        }
    }
    s.push_str("\nRotation prediction\n");
    match report.table2.metrics {
        Some(m) => s.push_str(&format!(
            "  mse {:.4}  aad {:.4} ({:.2} deg)  std {:.2} deg\n",
            m.mse, m.aad_scaled, m.aad_degrees, m.std_degrees
        )),
        None => s.push_str(&format!("  {}\n", status_text(report.table2.status, report.table2.error.as_deref()))),
    }
    s.push_str("\nImage reconstruction\n");
    for r in &report.table3 {
        match r.metrics {
            Some(m) => s.push_str(&format!(
                "  {:<8} mse {:.1} ± {:.1}  ssim {:.3} ± {:.3}\n",
                r.task.as_str(),
                m.mse_mean,
                m.mse_std,
                m.ssim_mean,
                m.ssim_std
            )),
            None => s.push_str(&format!("  {:<8} {}\n", r.task.as_str(), status_text(r.status, r.error.as_deref()))),
        }
    }
    s
}

pub const REPORT_FILES: [&str; 5] = ["report.json", "report.txt", "table1.csv", "table2.csv", "table3.csv"];

pub fn write_report(report: &RunReport, out_dir: &Path) -> Result<()> {
    crate::io::create_dir(out_dir)?;
    let mut json = serde_json::to_string_pretty(report).map_err(|e| Error::Format(e.to_string()))?;
    json.push('\n');
    let files: [(&str, Vec<u8>); 5] = [
        (REPORT_FILES[0], json.into_bytes()),
        (REPORT_FILES[1], report_text(report).into_bytes()),
        (REPORT_FILES[2], table1_csv(report)?),
        (REPORT_FILES[3], table2_csv(report)?),
        (REPORT_FILES[4], table3_csv(report)?),
    ];
    for (name, bytes) in files {
        crate::io::write_atomic(&out_dir.join(name), &bytes)?;
    }
    Ok(())
}
