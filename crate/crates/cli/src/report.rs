//! Tables and plot-ready CSVs from a finished pipeline or bench directory.
//!
//! Missing inputs never abort the report; each is listed under "absent".

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use windcast::field::{read_field, FieldFormat, LocationTable};
use windcast::simbench::{summarize, BenchRecord};

use crate::stages::{self, CalibrationSummary, EnergyRow, MetricRow};

pub const BENCH_RECORDS: &str = "records.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportIndex {
    pub written: Vec<String>,
    pub absent: Vec<String>,
}

struct Writer {
    out: PathBuf,
    index: ReportIndex,
    md: String,
}

impl Writer {
    fn file(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.out.join(name);
        std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
        self.index.written.push(name.to_string());
        Ok(())
    }

    fn absent(&mut self, what: &str) {
        self.index.absent.push(what.to_string());
    }
}

/// Write the report for `run_dir` into `out_dir` and return what was produced.
pub fn emit_report(run_dir: &Path, out_dir: &Path) -> Result<ReportIndex> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut w = Writer {
        out: out_dir.to_path_buf(),
        index: ReportIndex::default(),
        md: format!("# Run report: {}\n\n", run_dir.display()),
    };
    if run_dir.join(BENCH_RECORDS).exists() {
        bench_section(run_dir, &mut w)?;
    } else {
        mspe_section(run_dir, &mut w)?;
        error_map_section(run_dir, &mut w)?;
        coverage_section(run_dir, &mut w)?;
        energy_section(run_dir, &mut w)?;
    }
    if !w.index.absent.is_empty() {
        w.md.push_str("## Absent\n\n");
        for a in &w.index.absent {
            let _ = writeln!(w.md, "- {a}");
        }
    }
    let md = std::mem::take(&mut w.md);
    w.file("report.md", &md)?;
    let index = serde_json::to_string_pretty(&w.index).expect("serializable");
    std::fs::write(out_dir.join("report.json"), index).context("writing report.json")?;
    Ok(w.index)
}

fn leads_of<'a>(leads: impl Iterator<Item = &'a usize>) -> Vec<usize> {
    let mut v: Vec<usize> = leads.copied().collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Methods as rows, leads as columns, cells `median (iqr)`.
fn lead_table(rows: &[(String, usize, f64, f64)]) -> (String, String) {
    let leads = leads_of(rows.iter().map(|r| &r.1));
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.0.as_str()) {
            methods.push(&r.0);
        }
    }
    let mut csv = String::from("method");
    let mut md = String::from("| method |");
    for l in &leads {
        let _ = write!(csv, ",lead_{l}_median,lead_{l}_iqr");
        let _ = write!(md, " lead {l} |");
    }
    csv.push('\n');
    md.push_str("\n|---|");
    md.push_str(&"---|".repeat(leads.len()));
    md.push('\n');
    for m in methods {
        csv.push_str(m);
        let _ = write!(md, "| {m} |");
        for l in &leads {
            match rows.iter().find(|r| r.0 == m && r.1 == *l) {
                Some(r) => {
                    let _ = write!(csv, ",{},{}", r.2, r.3);
                    let _ = write!(md, " {:.4} ({:.4}) |", r.2, r.3);
                }
                None => {
                    csv.push_str(",,");
                    md.push_str(" |");
                }
            }
        }
        csv.push('\n');
        md.push('\n');
    }
    (csv, md)
}

fn bench_section(run_dir: &Path, w: &mut Writer) -> Result<()> {
    let records: Vec<BenchRecord> = stages::read_json(&run_dir.join(BENCH_RECORDS))?;
    let mut csv = String::from("method,lead,seed,mspe\n");
    for r in &records {
        let _ = writeln!(csv, "{},{},{},{}", r.method, r.lead, r.seed, r.mspe);
    }
    w.file("boxplot.csv", &csv)?;
    let rows: Vec<_> = summarize(&records).into_iter().map(|s| (s.method, s.lead, s.median, s.iqr)).collect();
    let (table, md) = lead_table(&rows);
    w.file("mspe_table.csv", &table)?;
    w.md.push_str("## MSPE, median (IQR) over replicates\n\n");
    w.md.push_str(&md);
    w.md.push('\n');
    Ok(())
}

fn mspe_section(run_dir: &Path, w: &mut Writer) -> Result<()> {
    let path = run_dir.join(stages::SPDE_METRICS);
    if !path.exists() {
        w.absent(stages::SPDE_METRICS);
        return Ok(());
    }
    let metrics: Vec<MetricRow> = stages::read_json(&path)?;
    let rows: Vec<_> = metrics.iter().map(|m| (m.method.clone(), m.lead, m.median, m.iqr)).collect();
    let (table, md) = lead_table(&rows);
    w.file("mspe_table.csv", &table)?;
    w.md.push_str("## MSPE, median (IQR) over forecast times\n\n");
    w.md.push_str(&md);
    w.md.push('\n');
    Ok(())
}

/// Per-location MSPE of the model and of persistence at each lead.
fn error_map_section(run_dir: &Path, w: &mut Writer) -> Result<()> {
    let obs_path = run_dir.join(stages::OBSERVED);
    if !obs_path.exists() {
        w.absent(stages::OBSERVED);
        return Ok(());
    }
    let loc_path = run_dir.join(stages::LOCATIONS);
    if !loc_path.exists() {
        w.absent(stages::LOCATIONS);
        return Ok(());
    }
    let observed = read_field(&obs_path, FieldFormat::FlatBinary)?.with_locations(LocationTable::read_csv(&loc_path)?)?;
    let mut csv = String::from("location,x,y,lead,mspe_model,mspe_persistence\n");
    let mut any = false;
    for lead in 1.. {
        let rel = stages::spde_forecast(lead);
        let p = run_dir.join(&rel);
        if !p.exists() {
            if lead == 1 {
                w.absent(&rel);
            }
            break;
        }
        any = true;
        let f = read_field(&p, FieldFormat::FlatBinary)?;
        let set = stages::forecast_set(&f, lead, &observed)?;
        let y = observed.values();
        for c in 0..observed.n_locations() {
            let (mut sm, mut sp) = (0.0, 0.0);
            for (r, &o) in set.origins.iter().enumerate() {
                let truth = y[(o + lead, c)];
                sm += (set.point[(r, c)] - truth).powi(2);
                sp += (y[(o, c)] - truth).powi(2);
            }
            let n = set.origins.len() as f64;
            let [x, yy] = observed.locations().get(c);
            let _ = writeln!(csv, "{c},{x},{yy},{lead},{},{}", sm / n, sp / n);
        }
    }
    if any {
        w.file("error_map.csv", &csv)?;
    }
    Ok(())
}

fn coverage_section(run_dir: &Path, w: &mut Writer) -> Result<()> {
    let cov = run_dir.join(stages::COVERAGE);
    let cal = run_dir.join(stages::CALIBRATION);
    if !cov.exists() || !cal.exists() {
        for (p, rel) in [(&cov, stages::COVERAGE), (&cal, stages::CALIBRATION)] {
            if !p.exists() {
                w.absent(rel);
            }
        }
        return Ok(());
    }
    let text = std::fs::read_to_string(&cov).with_context(|| format!("reading {}", cov.display()))?;
    w.file("coverage_table.csv", &text)?;
    let summary: CalibrationSummary = stages::read_json(&cal)?;
    w.md.push_str("## Coverage, median over locations\n\n| lead | expected | calibrated | SPDE only | empirical only | marginal |\n|---|---|---|---|---|---|\n");
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() >= 10 {
            let _ = writeln!(w.md, "| {} | {} | {} | {} | {} | {} |", f[0], f[1], f[2], f[4], f[6], f[8]);
        }
    }
    w.md.push_str("\n| lead | selected weight | half-side |\n|---|---|---|\n");
    for l in &summary.leads {
        let _ = writeln!(w.md, "| {} | {:.2} | {} |", l.lead, l.delta, l.half_side);
    }
    w.md.push('\n');
    Ok(())
}

fn energy_section(run_dir: &Path, w: &mut Writer) -> Result<()> {
    let rel = "power/energy.json";
    let p = run_dir.join(rel);
    if !p.exists() {
        w.absent(rel);
        return Ok(());
    }
    let rows: Vec<EnergyRow> = stages::read_json(&p)?;
    let leads = leads_of(rows.iter().map(|r| &r.lead));
    let mut models: Vec<&str> = Vec::new();
    for r in &rows {
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
    }
    let mut csv = String::from("model");
    for l in &leads {
        let _ = write!(csv, ",lead_{l}_kwh");
    }
    csv.push_str(",total_kwh,total_cost_usd\n");
    w.md.push_str("## Energy difference\n\n| model | total kWh | cost (USD) |\n|---|---|---|\n");
    for m in models {
        csv.push_str(m);
        let (mut kwh, mut usd) = (0.0, 0.0);
        for l in &leads {
            let r = rows.iter().find(|r| r.model == m && r.lead == *l);
            let e = r.map_or(f64::NAN, |r| r.energy_kwh);
            kwh += r.map_or(0.0, |r| r.energy_kwh);
            usd += r.map_or(0.0, |r| r.cost_usd);
            let _ = write!(csv, ",{e}");
        }
        let _ = writeln!(csv, ",{kwh},{usd}");
        let _ = writeln!(w.md, "| {m} | {kwh:.1} | {usd:.2} |");
    }
    w.file("energy_table.csv", &csv)?;
    w.md.push('\n');
    Ok(())
}
