//! JSON and CSV writers. JSON carries the full report; CSV carries its rows.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::config::Format;
use crate::error::CliError;

pub fn write_report<R: Serialize, Row: Serialize>(
    format: Format,
    out: Option<&Path>,
    report: &R,
    rows: &[Row],
) -> Result<(), CliError> {
    let mut sink: Box<dyn Write> = match out {
        Some(path) => Box::new(std::io::BufWriter::new(std::fs::File::create(path)?)),
        None => Box::new(std::io::stdout().lock()),
    };
    match format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut sink, report)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            writeln!(sink)?;
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(&mut sink);
            for row in rows {
                w.serialize(row).map_err(|e| CliError::Usage(e.to_string()))?;
            }
            w.flush()?;
        }
    }
    sink.flush()?;
    Ok(())
}
