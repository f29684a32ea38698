//! CSV ingestion and emission for group tables and per-sample losses.

use std::path::Path;

use super::{aggregate_bias, AttributeVector, GroupBiasTable, SampleLossRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default)]
pub struct GroupCsvOptions {
    /// Write the `count` column.
    pub with_count: bool,
}

fn bit_columns(headers: &csv::StringRecord, value_column: &str) -> Result<usize> {
    let mut d = 0;
    while d < headers.len() && headers[d] == format!("a{d}") {
        d += 1;
    }
    if d == 0 {
        return Err(Error::invalid("CSV header must start with a0"));
    }
    if headers.get(d) != Some(value_column) {
        return Err(Error::invalid(format!(
            "expected column `{value_column}` after a{}, found {:?}",
            d - 1,
            headers.get(d)
        )));
    }
    Ok(d)
}

fn parse_bits(record: &csv::StringRecord, d: usize, line: usize) -> Result<AttributeVector> {
    let bits = (0..d)
        .map(|i| match record[i].trim() {
            "0" => Ok(0u8),
            "1" => Ok(1u8),
            other => Err(Error::invalid(format!(
                "line {line}: bit a{i} is {other:?}, expected 0 or 1"
            ))),
        })
        .collect::<Result<Vec<u8>>>()?;
    AttributeVector::new(bits)
}

fn parse_f64(field: &str, what: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::invalid(format!("line {line}: cannot parse {what} {field:?}")))
}

/// Reads `a0,...,a{d-1},bias[,count]`. Repeated rows merge by count-weighted mean.
pub fn read_group_csv(path: &Path) -> Result<GroupBiasTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_group_csv_from(file)
}

pub(crate) fn read_group_csv_from<R: std::io::Read>(reader: R) -> Result<GroupBiasTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let d = bit_columns(&headers, "bias")?;
    let has_count = match headers.get(d + 1) {
        None => false,
        Some("count") if headers.len() == d + 2 => true,
        Some(other) => return Err(Error::invalid(format!("unexpected column {other:?}"))),
    };
    let mut table = GroupBiasTable::new(d)?;
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let a = parse_bits(&record, d, line)?;
        let bias = parse_f64(&record[d], "bias", line)?;
        let count = if has_count {
            record[d + 1].trim().parse::<u64>().map_err(|_| {
                Error::invalid(format!(
                    "line {line}: cannot parse count {:?}",
                    &record[d + 1]
                ))
            })?
        } else {
            1
        };
        table.insert(a, bias, count)?;
    }
    if table.is_empty() {
        return Err(Error::Empty("group CSV"));
    }
    Ok(table)
}

pub fn write_group_csv(
    path: &Path,
    table: &GroupBiasTable,
    options: GroupCsvOptions,
) -> Result<()> {
    let mut out = Vec::new();
    write_group_csv_to(&mut out, table, options)?;
    crate::pipeline::write_atomic(path, &out)
}

pub(crate) fn write_group_csv_to<W: std::io::Write>(
    writer: W,
    table: &GroupBiasTable,
    options: GroupCsvOptions,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (0..table.dimension()).map(|i| format!("a{i}")).collect();
    header.push("bias".into());
    if options.with_count {
        header.push("count".into());
    }
    wtr.write_record(&header)?;
    for (a, s) in table.iter() {
        let mut row: Vec<String> = a.bits().iter().map(|b| b.to_string()).collect();
        row.push(s.bias.to_string());
        if options.with_count {
            row.push(s.count.to_string());
        }
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Reads `a0,...,a{d-1},loss` rows.
pub fn read_sample_csv(path: &Path) -> Result<Vec<SampleLossRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_sample_csv_from(file)
}

pub(crate) fn read_sample_csv_from<R: std::io::Read>(reader: R) -> Result<Vec<SampleLossRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let d = bit_columns(&headers, "loss")?;
    if headers.len() != d + 1 {
        return Err(Error::invalid(
            "sample CSV has trailing columns after `loss`",
        ));
    }
    let mut records = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let line = i + 2;
        records.push(SampleLossRecord {
            attribute: parse_bits(&record, d, line)?,
            loss: parse_f64(&record[d], "loss", line)?,
        });
    }
    Ok(records)
}

pub fn write_sample_csv(path: &Path, records: &[SampleLossRecord]) -> Result<()> {
    let d = records
        .first()
        .ok_or(Error::Empty("sample loss records"))?
        .attribute
        .dimension();
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (0..d).map(|i| format!("a{i}")).collect();
    header.push("loss".into());
    wtr.write_record(&header)?;
    for r in records {
        r.attribute.check_dimension(d)?;
        let mut row: Vec<String> = r.attribute.bits().iter().map(|b| b.to_string()).collect();
        row.push(r.loss.to_string());
        wtr.write_record(&row)?;
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?;
    crate::pipeline::write_atomic(path, &bytes)
}

/// Reads samples and aggregates them into a group table.
pub fn table_from_samples(path: &Path) -> Result<GroupBiasTable> {
    aggregate_bias(&read_sample_csv(path)?)
}
