use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::series::{column_name, Dataset, SensorKind, SensorSeries, INLET_COLUMN};
use super::timestamp::{Timestamp, DEFAULT_CADENCE_MINUTES};
use crate::error::{Error, Result};

const DATETIME_COLUMN: &str = "DateTime";

enum Column {
    Inlet,
    Pressure(String),
    Flow(String),
}

fn classify(header: &str) -> Result<Column> {
    if header == INLET_COLUMN {
        return Ok(Column::Inlet);
    }
    if let Some(id) = header.strip_suffix("_pressure").filter(|id| !id.is_empty()) {
        return Ok(Column::Pressure(id.to_string()));
    }
    if let Some(id) = header.strip_suffix("_flow").filter(|id| !id.is_empty()) {
        return Ok(Column::Flow(id.to_string()));
    }
    Err(Error::Csv(format!("unknown column kind in header {header:?}")))
}

/// Parses a SCADA export. Empty, non-numeric and out-of-bounds cells become
/// invalid samples; skipped grid slots are inserted as invalid samples.
pub fn parse_csv(text: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::Csv(e.to_string()))?.clone();
    if headers.get(0) != Some(DATETIME_COLUMN) {
        return Err(Error::Csv(format!("first column must be {DATETIME_COLUMN}, found {:?}", headers.get(0))));
    }
    let columns = headers.iter().skip(1).map(classify).collect::<Result<Vec<_>>>()?;
    if !columns.iter().any(|c| matches!(c, Column::Inlet)) {
        return Err(Error::Csv(format!("missing {INLET_COLUMN} column")));
    }

    let mut stamps = Vec::new();
    let mut cells: Vec<Vec<Option<f64>>> = vec![Vec::new(); columns.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv(format!("row {}: {e}", row + 2)))?;
        if record.len() != columns.len() + 1 {
            return Err(Error::Csv(format!(
                "row {} has {} cells, expected {}",
                row + 2,
                record.len(),
                columns.len() + 1
            )));
        }
        stamps.push(Timestamp::parse(&record[0])?);
        for (c, cell) in record.iter().skip(1).enumerate() {
            cells[c].push(cell.parse::<f64>().ok().filter(|v| v.is_finite()));
        }
    }
    if stamps.is_empty() {
        return Err(Error::Csv("no data rows".into()));
    }

    let (cadence, slots) = time_grid(&stamps)?;
    let len = slots.last().map_or(0, |s| s + 1);
    let start = stamps[0];

    let build = |id: &str, kind: SensorKind, raw: &[Option<f64>]| -> Result<SensorSeries> {
        let mut values = vec![0.0; len];
        let mut valid = vec![false; len];
        for (&slot, cell) in slots.iter().zip(raw) {
            if let Some(v) = cell {
                values[slot] = *v;
                valid[slot] = true;
            }
        }
        SensorSeries::new(id, kind, start, cadence, values, valid)
    };

    let mut inlet = None;
    let mut pressures = Vec::new();
    let mut flows = BTreeMap::new();
    for (column, raw) in columns.iter().zip(&cells) {
        match column {
            Column::Inlet => {
                if inlet.is_some() {
                    return Err(Error::Csv(format!("duplicate {INLET_COLUMN} column")));
                }
                inlet = Some(build("inlet", SensorKind::InletPressure, raw)?);
            }
            Column::Pressure(id) => pressures.push(build(id, SensorKind::Pressure, raw)?),
            Column::Flow(id) => {
                if flows.insert(id.clone(), build(id, SensorKind::Flow, raw)?).is_some() {
                    return Err(Error::Csv(format!("duplicate flow column for {id}")));
                }
            }
        }
    }
    // flows follow the pressure column order
    let mut ordered_flows = Vec::with_capacity(pressures.len());
    for p in &pressures {
        let f = flows
            .remove(p.sensor_id())
            .ok_or_else(|| Error::Csv(format!("pressure sensor {} has no flow column", p.sensor_id())))?;
        ordered_flows.push(f);
    }
    if let Some(id) = flows.keys().next() {
        return Err(Error::Csv(format!("flow sensor {id} has no pressure column")));
    }
    Dataset::new(inlet.expect("checked above"), pressures, ordered_flows, None)
}

/// Infers the cadence from the smallest step and maps each row onto its grid slot.
fn time_grid(stamps: &[Timestamp]) -> Result<(u32, Vec<usize>)> {
    let mut min_step: Option<i64> = None;
    for pair in stamps.windows(2) {
        let step = pair[1].minutes_since(pair[0]);
        if step == 0 {
            return Err(Error::Csv(format!("duplicate timestamp {}", pair[1])));
        }
        if step < 0 {
            return Err(Error::Csv(format!("timestamps not ascending: {} follows {}", pair[1], pair[0])));
        }
        min_step = Some(min_step.map_or(step, |m: i64| m.min(step)));
    }
    let cadence = min_step.unwrap_or(i64::from(DEFAULT_CADENCE_MINUTES));
    let cadence_u32 =
        u32::try_from(cadence).map_err(|_| Error::Csv(format!("cadence of {cadence} minutes is too large")))?;
    let mut slots = Vec::with_capacity(stamps.len());
    for (i, ts) in stamps.iter().enumerate() {
        let offset = ts.minutes_since(stamps[0]);
        if offset % cadence != 0 {
            return Err(Error::Csv(format!(
                "cadence not constant: {} is off the {cadence}-minute grid (row {})",
                ts,
                i + 2
            )));
        }
        if !ts.on_grid(cadence_u32) {
            return Err(Error::Csv(format!("{ts} is not aligned to a {cadence}-minute grid")));
        }
        slots.push((offset / cadence) as usize);
    }
    Ok((cadence_u32, slots))
}

/// Writes the dataset in the column order `DateTime, *_pressure, *_flow, inlet_pressure`.
/// Invalid samples are written as empty cells. LF line endings.
pub fn to_csv(ds: &Dataset) -> String {
    let channels: Vec<&SensorSeries> = ds.channels().collect();
    let mut out = String::with_capacity(ds.len() * (channels.len() * 8 + 18));
    out.push_str(DATETIME_COLUMN);
    for s in &channels {
        out.push(',');
        out.push_str(&column_name(s.sensor_id(), s.kind()));
    }
    out.push('\n');
    for i in 0..ds.len() {
        let _ = write!(out, "{}", ds.start().add_minutes(i as i64 * i64::from(ds.cadence())));
        for s in &channels {
            out.push(',');
            if s.valid()[i] {
                let _ = write!(out, "{}", s.values()[i]);
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_numeric_rows() {
        let text = "DateTime,inlet_pressure\n2024-01-01T00:00,3.1\n2024-01-01T00:15,3.2\n2024-01-01T00:30,3.3\n";
        let ds = parse_csv(text).unwrap();
        assert_eq!(ds.len(), 3);
        assert!(ds.inlet().all_valid());
        assert_eq!(ds.inlet().values(), &[3.1, 3.2, 3.3]);
        assert_eq!(ds.cadence(), 15);
    }

    #[test]
    fn empty_cell_is_invalid_placeholder() {
        let text = "DateTime,a_pressure,a_flow,inlet_pressure\n\
                    2024-01-01T00:00,2.0,10,3.0\n\
                    2024-01-01T00:15,,11,3.0\n";
        let ds = parse_csv(text).unwrap();
        let p = &ds.distribution_pressure()[0];
        assert_eq!(p.valid(), &[true, false]);
        assert_eq!(p.values()[1], 0.0);
    }

    #[test]
    fn non_numeric_and_out_of_range_cells() {
        let text = "DateTime,inlet_pressure\n2024-01-01T00:00,abc\n2024-01-01T00:15,16.5\n2024-01-01T00:30,16\n";
        let ds = parse_csv(text).unwrap();
        assert_eq!(ds.inlet().valid(), &[false, false, true]);
    }

    #[test]
    fn skipped_slot_inserted() {
        let stamps = ["2024-01-01T00:00", "2024-01-01T00:15", "2024-01-01T00:45", "2024-01-01T01:00"];
        let mut text = String::from("DateTime,inlet_pressure\n");
        for s in stamps {
            text.push_str(&format!("{s},3.0\n"));
        }
        let ds = parse_csv(&text).unwrap();
        // brute-force enumeration of the 15-minute grid between first and last stamp
        let first = Timestamp::parse(stamps[0]).unwrap();
        let last = Timestamp::parse(stamps[3]).unwrap();
        let mut slots = 0;
        let mut t = first;
        while t <= last {
            slots += 1;
            t = t.add_minutes(15);
        }
        assert_eq!(ds.len(), slots);
        assert_eq!(ds.inlet().valid(), &[true, true, false, true, true]);
    }

    #[test]
    fn grid_errors() {
        let dup = "DateTime,inlet_pressure\n2024-01-01T00:00,1\n2024-01-01T00:00,1\n";
        assert!(matches!(parse_csv(dup), Err(Error::Csv(m)) if m.contains("duplicate")));
        let back = "DateTime,inlet_pressure\n2024-01-01T00:15,1\n2024-01-01T00:00,1\n";
        assert!(matches!(parse_csv(back), Err(Error::Csv(m)) if m.contains("ascending")));
        let uneven = "DateTime,inlet_pressure\n2024-01-01T00:00,1\n2024-01-01T00:15,1\n2024-01-01T00:40,1\n";
        assert!(matches!(parse_csv(uneven), Err(Error::Csv(m)) if m.contains("cadence")));
    }

    #[test]
    fn unknown_suffix_rejected() {
        let text = "DateTime,a_temperature,inlet_pressure\n2024-01-01T00:00,1,2\n";
        assert!(matches!(parse_csv(text), Err(Error::Csv(m)) if m.contains("unknown column")));
    }

    #[test]
    fn writes_in_column_order() {
        let text = "DateTime,b_flow,b_pressure,inlet_pressure\n2024-01-01T00:00,5,2.5,3\n";
        let ds = parse_csv(text).unwrap();
        assert_eq!(to_csv(&ds), "DateTime,b_pressure,b_flow,inlet_pressure\n2024-01-01T00:00,2.5,5,3\n");
    }
}
