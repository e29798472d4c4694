//! Series interchange: `variable,placement,timestamp_utc,value`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::ingest::RowError;
use crate::time::{format_rfc3339, parse_rfc3339};

use super::{ObservationSeries, Placement, Sample, SeriesKey, Variable};

pub const SERIES_HEADER: [&str; 4] = ["variable", "placement", "timestamp_utc", "value"];

#[derive(Debug, Default)]
pub struct SeriesBatch {
    pub series: BTreeMap<SeriesKey, Vec<Sample>>,
    /// Rows that could not be decoded, by line number.
    pub errors: Vec<RowError>,
    pub rows: usize,
}

pub fn export_series_csv<W: Write>(series: &[ObservationSeries], out: W) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(SERIES_HEADER)?;
    for s in series {
        for p in &s.points {
            writer.write_record([
                s.key.variable().as_str(),
                s.key.placement().as_str(),
                &format_rfc3339(&p.timestamp),
                &p.value.to_string(),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

fn decode(row: &csv::StringRecord) -> Result<(SeriesKey, Sample), String> {
    if row.len() != 4 {
        return Err(format!("expected 4 fields, got {}", row.len()));
    }
    let variable: Variable = row[0].trim().parse()?;
    let placement: Placement = row[1].trim().parse()?;
    let key = SeriesKey::new(variable, placement).map_err(|e| e.to_string())?;
    let timestamp = parse_rfc3339(&row[2]).ok_or_else(|| format!("bad timestamp `{}`", &row[2]))?;
    let value: f64 = row[3]
        .trim()
        .parse()
        .map_err(|_| format!("bad value `{}`", &row[3]))?;
    key.check_value(value)?;
    Ok((key, Sample { timestamp, value }))
}

/// Reads a series CSV. Bad rows are collected, not fatal; a wrong header is.
pub fn import_series_csv<R: Read>(input: R) -> Result<SeriesBatch, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut rows = reader.records();
    let header = match rows.next() {
        Some(Ok(h)) => h,
        _ => return Err("missing header".into()),
    };
    let fields: Vec<&str> = header.iter().map(str::trim).collect();
    if fields != SERIES_HEADER {
        return Err(format!(
            "bad header: expected `{}`, got `{}`",
            SERIES_HEADER.join(","),
            fields.join(",")
        ));
    }
    let mut batch = SeriesBatch::default();
    for row in rows {
        batch.rows += 1;
        let (line, decoded) = match row {
            Ok(r) => (r.position().map_or(0, |p| p.line() as usize), decode(&r)),
            Err(e) => (e.position().map_or(0, |p| p.line() as usize), Err(e.to_string())),
        };
        match decoded {
            Ok((key, sample)) => batch.series.entry(key).or_default().push(sample),
            Err(reason) => batch.errors.push(RowError { line, reason }),
        }
    }
    Ok(batch)
}
