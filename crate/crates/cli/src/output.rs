//! Writers for CSV and JSON outputs. Every output carries the tool version and the resolved configuration.

use std::io::Write;

use anyhow::Result;
use serde::Serialize;

use crate::config::{Format, RunConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

fn sink(cfg: &RunConfig) -> Result<Box<dyn Write>> {
    Ok(match &cfg.out {
        Some(path) if path != "-" => Box::new(std::io::BufWriter::new(std::fs::File::create(path)?)),
        _ => Box::new(std::io::stdout().lock()),
    })
}

/// The configuration as embedded in outputs; the output path and thread count do not affect results.
pub fn embedded(cfg: &RunConfig) -> RunConfig {
    RunConfig { out: None, threads: None, ..cfg.clone() }
}

/// Writes `rows` as CSV preceded by `#` comment lines, or as a JSON document.
pub fn write_rows<T: Serialize>(cfg: &RunConfig, command: &str, rows: &[T], extra: Option<serde_json::Value>) -> Result<()> {
    let mut w = sink(cfg)?;
    let cfg = &embedded(cfg);
    match cfg.format {
        Format::Csv => {
            writeln!(w, "# peel-lab {VERSION} {command}")?;
            for (k, v) in cfg.entries().into_iter().filter(|(k, _)| k != "out" && k != "threads") {
                writeln!(w, "# {k} = {v}")?;
            }
            if let Some(extra) = extra {
                if let Some(obj) = extra.as_object() {
                    for (k, v) in obj {
                        writeln!(w, "# {k}: {v}")?;
                    }
                }
            }
            let mut csv = csv::Writer::from_writer(&mut w);
            for row in rows {
                csv.serialize(row)?;
            }
            csv.flush()?;
        }
        Format::Json => {
            let doc = serde_json::json!({
                "version": VERSION,
                "command": command,
                "config": cfg,
                "summary": extra,
                "rows": rows,
            });
            serde_json::to_writer_pretty(&mut w, &doc)?;
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes a single JSON-like summary as `key,value` CSV rows or as JSON.
pub fn write_summary(cfg: &RunConfig, command: &str, summary: serde_json::Value) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        key: String,
        value: String,
    }
    match cfg.format {
        Format::Csv => {
            let rows: Vec<Row> = summary
                .as_object()
                .map(|o| {
                    o.iter()
                        .map(|(k, v)| Row { key: k.clone(), value: v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string()) })
                        .collect()
                })
                .unwrap_or_default();
            write_rows(cfg, command, &rows, None)
        }
        Format::Json => write_rows::<Row>(cfg, command, &[], Some(summary)),
    }
}
