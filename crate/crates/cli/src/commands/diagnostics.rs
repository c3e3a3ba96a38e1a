use regq_core::diagnostics::{run_battery, BatterySettings};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::{fmt_f64, OutputDir};

pub struct DiagnosticsPlan {
    settings: BatterySettings,
}

pub fn plan(config: &ExperimentConfig) -> Result<DiagnosticsPlan, CliError> {
    let mut settings = BatterySettings::default();
    if let Some(&seed) = config.seeds.first() {
        settings.seed = seed;
    }
    if let Some(n) = config.num_mdps {
        settings.num_mdps = n;
    }
    if let Some(n) = config.pairs {
        settings.pairs = n;
    }
    if let Some(t) = config.tolerance {
        settings.tolerance = t;
    }
    if let Some(g) = config.gamma {
        if !(0.0..1.0).contains(&g) {
            return Err(CliError::Config(format!(
                "`gamma` must lie in [0,1), got {g}"
            )));
        }
        settings.gamma = g;
    }
    Ok(DiagnosticsPlan { settings })
}

pub fn execute(p: DiagnosticsPlan, out: &OutputDir) -> Result<(), CliError> {
    let results = run_battery(&p.settings)?;
    let mut w = out.create("", "diagnostics", &[])?;
    w.write_record([
        "check",
        "instances",
        "max_violation",
        "tolerance",
        "status",
        "witness",
    ])?;
    let mut failed = 0;
    for r in &results {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        if !r.passed() {
            failed += 1;
            eprintln!(
                "FAIL {}: max violation {:e} at {}",
                r.name, r.max_violation, r.witness
            );
        }
        w.write_record([
            r.name.to_string(),
            r.instances.to_string(),
            fmt_f64(r.max_violation),
            fmt_f64(r.tolerance),
            status.to_string(),
            r.witness.clone(),
        ])?;
    }
    w.flush()?;
    if failed > 0 {
        return Err(CliError::DiagnosticsFailed { failed });
    }
    Ok(())
}
