use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3};

use super::{PanelDataset, PanelSchema};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub schema: PanelSchema,
    pub delimiter: u8,
}

impl IngestOptions {
    pub fn new(schema: PanelSchema) -> Self {
        Self {
            schema,
            delimiter: b',',
        }
    }
}

pub fn ingest(path: impl AsRef<Path>, options: &IngestOptions) -> Result<PanelDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_from_reader(file, options).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn parse_cell(raw: &str) -> Option<Option<f64>> {
    let s = raw.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("NA") {
        return Some(None);
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite()).map(Some)
}

/// Reads a delimited panel. Line numbers in errors count the header as line 1.
pub fn ingest_from_reader<R: Read>(reader: R, options: &IngestOptions) -> Result<PanelDataset> {
    let schema = &options.schema;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Data(format!("missing required column '{name}'")))
    };
    let id_col = find(&schema.id)?;
    let period_col = find(&schema.period)?;
    let value_names = schema.value_columns();
    let value_cols: Vec<usize> = value_names
        .iter()
        .map(|n| find(n))
        .collect::<Result<_>>()?;

    let mut rows: BTreeMap<(String, i64), Vec<f64>> = BTreeMap::new();
    for (idx, record) in rdr.records().enumerate() {
        let line = idx + 2;
        let record = record?;
        let id = record.get(id_col).unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(Error::Data(format!(
                "line {line}: empty '{}' value",
                schema.id
            )));
        }
        let period_raw = record.get(period_col).unwrap_or("").trim();
        let period: i64 = period_raw.parse().map_err(|_| {
            Error::Data(format!(
                "line {line}, column '{}': cannot parse '{period_raw}' as an integer period",
                schema.period
            ))
        })?;
        let mut values = Vec::with_capacity(value_cols.len());
        for (&c, name) in value_cols.iter().zip(&value_names) {
            let raw = record.get(c).unwrap_or("");
            match parse_cell(raw) {
                Some(v) => values.push(v.unwrap_or(f64::NAN)),
                None => {
                    return Err(Error::Data(format!(
                        "line {line}, column '{name}': cannot parse '{}' as a number",
                        raw.trim()
                    )))
                }
            }
        }
        if rows.insert((id.clone(), period), values).is_some() {
            return Err(Error::Data(format!(
                "duplicate row for ({id}, {period}) at line {line}"
            )));
        }
    }
    if rows.is_empty() {
        return Err(Error::Data("no data rows".into()));
    }

    let individuals: Vec<String> = rows
        .keys()
        .map(|(id, _)| id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let years: BTreeSet<i64> = rows.keys().map(|(_, y)| *y).collect();
    let first = *years.iter().next().unwrap();
    let last = *years.iter().next_back().unwrap();
    let periods: Vec<i64> = (first..=last).collect();

    let mut gaps = Vec::new();
    for id in &individuals {
        for &y in &periods {
            if !rows.contains_key(&(id.clone(), y)) {
                gaps.push(format!("({id}, {y})"));
            }
        }
    }
    if !gaps.is_empty() {
        let shown: Vec<_> = gaps.iter().take(20).cloned().collect();
        return Err(Error::Data(format!(
            "unbalanced panel: {} missing rows: {}{}",
            gaps.len(),
            shown.join(", "),
            if gaps.len() > shown.len() { ", ..." } else { "" }
        )));
    }

    let column_of: HashMap<&str, usize> = value_names
        .iter()
        .enumerate()
        .map(|(k, n)| (n.as_str(), k))
        .collect();
    let (n, t, q, p) = (
        individuals.len(),
        periods.len(),
        schema.parametric.len(),
        schema.network.len(),
    );
    let mut response = Array2::zeros((n, t));
    let mut parametric = Array3::zeros((n, t, q));
    let mut network = Array3::zeros((n, t, p));
    for (i, id) in individuals.iter().enumerate() {
        for (s, &y) in periods.iter().enumerate() {
            let values = &rows[&(id.clone(), y)];
            response[[i, s]] = values[0];
            for (j, name) in schema.parametric.iter().enumerate() {
                parametric[[i, s, j]] = values[column_of[name.as_str()]];
            }
            for (j, name) in schema.network.iter().enumerate() {
                network[[i, s, j]] = values[column_of[name.as_str()]];
            }
        }
    }
    PanelDataset::new(
        schema.clone(),
        individuals,
        periods,
        response,
        parametric,
        network,
    )
}

pub fn emit(dataset: &PanelDataset, path: impl AsRef<Path>, delimiter: u8) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    emit_to_writer(dataset, std::io::BufWriter::new(file), delimiter)
}

/// Writes the dataset in the same delimited layout `ingest` reads. Missing
/// cells are written as `NA`; numbers use the shortest exact representation.
pub fn emit_to_writer<W: Write>(dataset: &PanelDataset, writer: W, delimiter: u8) -> Result<()> {
    let schema = dataset.schema();
    let mut wtr = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_writer(writer);
    let value_names = schema.value_columns();
    let mut header = vec![schema.id.clone(), schema.period.clone()];
    header.extend(value_names.iter().cloned());
    wtr.write_record(&header)?;
    let fmt = |v: f64| {
        if v.is_finite() {
            format!("{v}")
        } else {
            "NA".to_string()
        }
    };
    for (i, id) in dataset.individuals().iter().enumerate() {
        for (s, year) in dataset.periods().iter().enumerate() {
            let mut record = vec![id.clone(), year.to_string()];
            for name in &value_names {
                let v = if *name == schema.response {
                    dataset.y(i, s)
                } else if let Some(j) = schema.parametric.iter().position(|c| c == name) {
                    dataset.parametric()[[i, s, j]]
                } else {
                    let j = schema.network.iter().position(|c| c == name).unwrap();
                    dataset.network()[[i, s, j]]
                };
                record.push(fmt(v));
            }
            wtr.write_record(&record)?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(())
}
