//! The `simulate` command: runs every (family, misspecification) scenario
//! and writes the metrics table.

use std::fs;
use std::io::Write;

use cmr_core::simulate::{replicate_data, run_study, SimMetrics, SimScenario};

use crate::config::SimulateSettings;
use crate::error::{CliError, CliResult};
use crate::ingest::write_csv;
use crate::svg;

pub const METRICS_COLUMNS: [&str; 12] = [
    "scenario",
    "family",
    "misspec",
    "method",
    "weight_treatment",
    "bias_pct",
    "mse",
    "ese",
    "ser",
    "coverage_pct",
    "nonconv_pct",
    "reps_used",
];

pub fn scenarios(s: &SimulateSettings) -> Vec<SimScenario> {
    let mut out = Vec::new();
    for &family in &s.families {
        for &misspec in &s.misspec {
            out.push(SimScenario {
                design: s.design,
                family,
                n: s.n,
                reps: s.reps,
                misspec,
                base_seed: s.seed,
                methods: s.methods.clone(),
                level: s.ci_level,
            });
        }
    }
    out
}

pub fn run_simulate(s: &SimulateSettings) -> CliResult<Vec<SimMetrics>> {
    let mut rows = Vec::new();
    for scenario in scenarios(s) {
        rows.extend(run_study(&scenario).map_err(|e| CliError::Config(e.to_string()))?);
    }
    Ok(rows)
}

/// Metrics as CSV; missing values are written as empty fields.
pub fn write_metrics<W: Write>(writer: W, rows: &[SimMetrics]) -> CliResult<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    let map = |e: csv::Error| CliError::Io(e.into());
    wtr.write_record(METRICS_COLUMNS).map_err(map)?;
    for row in rows {
        wtr.serialize(row).map_err(map)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes the optional figures and sample dataset next to the metrics.
pub fn write_artifacts(s: &SimulateSettings, rows: &[SimMetrics]) -> CliResult<()> {
    let first = scenarios(s).into_iter().next();
    if let Some(dir) = &s.figures {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("metrics.svg"), svg::metrics_figure(rows, s.ci_level))?;
        if let Some(sim) = first.as_ref().map(|sc| replicate_data(sc, 0)) {
            if sim.exact.is_some() {
                fs::write(
                    dir.join("heaping_histogram.svg"),
                    svg::heaping_histogram(&sim.y_true, sim.data.outcome()),
                )?;
            }
        }
    }
    if let (Some(path), Some(sc)) = (&s.sample_data, first.as_ref()) {
        let sim = replicate_data(sc, 0);
        write_csv(fs::File::create(path)?, &sim.data)?;
    }
    Ok(())
}
