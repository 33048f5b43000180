//! Result emission: one CSV per signal group plus a JSON run summary.
//!
//! CSV values print with Rust's shortest round-trip formatting: full double
//! precision, '.' decimal separator, locale independent. Rows are
//! newline-terminated.

use std::fmt::Write as _;
use std::path::Path;

use gogsim_core::sim::{SignalGroup, SimResult};

fn group_file(group: SignalGroup) -> &'static str {
    match group {
        SignalGroup::Frequency => "frequency.csv",
        SignalGroup::DcVoltage => "dc_voltage.csv",
        SignalGroup::Ipc => "ipc.csv",
        SignalGroup::BusVoltage => "bus_voltage.csv",
    }
}

pub fn write_csvs(result: &SimResult, out_dir: &Path) -> anyhow::Result<Vec<String>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for group in [
        SignalGroup::Frequency,
        SignalGroup::DcVoltage,
        SignalGroup::Ipc,
        SignalGroup::BusVoltage,
    ] {
        let signals: Vec<_> = result.signals.iter().filter(|s| s.group == group).collect();
        if signals.is_empty() {
            continue;
        }
        let mut text = String::new();
        write!(text, "time_s")?;
        for s in &signals {
            write!(text, ",{}", s.name)?;
        }
        text.push('\n');
        for (k, t) in result.time_s.iter().enumerate() {
            write!(text, "{t}")?;
            for s in &signals {
                write!(text, ",{}", s.values[k])?;
            }
            text.push('\n');
        }
        let path = out_dir.join(group_file(group));
        std::fs::write(&path, text)?;
        written.push(group_file(group).to_string());
    }
    Ok(written)
}

pub fn write_summary(result: &SimResult, out_dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let final_state: Vec<serde_json::Value> = result
        .state_labels
        .iter()
        .zip(result.final_state.iter())
        .map(|(l, v)| serde_json::json!({ "state": l, "value": v }))
        .collect();
    let summary = serde_json::json!({
        "status": result.status,
        "t_final_s": result.time_s.last().copied().unwrap_or(0.0),
        "events": result.event_log,
        "warnings": result.warnings,
        "final_state": final_state,
    });
    std::fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(())
}
