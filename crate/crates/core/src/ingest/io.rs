use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{Amount, CategorySet, IngestError, Transaction};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    /// `.jsonl` / `.ndjson` are JSON-lines; everything else is CSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => Format::Jsonl,
            _ => Format::Csv,
        }
    }
}

const KNOWN_COLUMNS: [&str; 6] = ["id", "date", "amount", "description", "label", "company"];

/// Wire shape of one JSON-lines record.
#[derive(Debug, Serialize, Deserialize)]
struct JsonRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    date: String,
    amount: Amount,
    description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    company: Option<String>,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

fn parse_date(row: usize, raw: &str) -> Result<NaiveDate, IngestError> {
    NaiveDate::parse_from_str(raw.trim(), "%Y-%m-%d").map_err(|_| IngestError::BadDate {
        row,
        value: raw.to_string(),
    })
}

fn parse_amount(row: usize, raw: &str) -> Result<Amount, IngestError> {
    raw.parse().map_err(|reason| IngestError::BadAmount { row, reason })
}

fn non_empty(value: Option<&str>) -> Option<String> {
    value.filter(|v| !v.is_empty()).map(str::to_string)
}

pub fn load_transactions(path: &Path, format: Format) -> Result<Vec<Transaction>, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let transactions = match format {
        Format::Csv => read_csv(BufReader::new(file))?,
        Format::Jsonl => read_jsonl(BufReader::new(file))?,
    };
    check_unique_ids(&transactions)?;
    Ok(transactions)
}

/// Loads a dataset, choosing the format from the file extension.
pub fn load_dataset(path: &Path) -> Result<Vec<Transaction>, IngestError> {
    load_transactions(path, Format::from_path(path))
}

pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Vec<Transaction>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(IngestError::Csv)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let date_col = column("date").ok_or(IngestError::MissingColumn("date".into()))?;
    let amount_col = column("amount").ok_or(IngestError::MissingColumn("amount".into()))?;
    let desc_col = column("description").ok_or(IngestError::MissingColumn("description".into()))?;
    let label_col = column("label");
    let company_col = column("company");
    let id_col = column("id");
    let extra_cols: Vec<(usize, &String)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| !KNOWN_COLUMNS.contains(&h.as_str()))
        .collect();

    let mut out = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(IngestError::Csv)?;
        let get = |col: usize| record.get(col).unwrap_or("");
        let id = id_col
            .and_then(|c| non_empty(Some(get(c))))
            .unwrap_or_else(|| format!("row-{row}"));
        out.push(Transaction {
            id,
            date: parse_date(row, get(date_col))?,
            amount: parse_amount(row, get(amount_col))?,
            raw_description: get(desc_col).to_string(),
            label: label_col.and_then(|c| non_empty(Some(get(c)))),
            company: company_col.and_then(|c| non_empty(Some(get(c)))),
            extra: extra_cols
                .iter()
                .map(|(c, name)| ((*name).clone(), get(*c).to_string()))
                .collect(),
        });
    }
    Ok(out)
}

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<Transaction>, IngestError> {
    let mut out = Vec::new();
    let mut row = 0;
    for line in reader.lines() {
        let line = line.map_err(|source| IngestError::Io {
            path: "<jsonl>".into(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        row += 1;
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| IngestError::Json { row, source: e })?;
        for required in ["date", "amount", "description"] {
            if value.get(required).is_none() {
                return Err(IngestError::MissingColumn(required.into()));
            }
        }
        let record: JsonRecord =
            serde_json::from_value(value).map_err(|e| IngestError::Json { row, source: e })?;
        out.push(Transaction {
            id: non_empty(record.id.as_deref()).unwrap_or_else(|| format!("row-{row}")),
            date: parse_date(row, &record.date)?,
            amount: record.amount,
            raw_description: record.description,
            label: non_empty(record.label.as_deref()),
            company: non_empty(record.company.as_deref()),
            extra: record
                .extra
                .into_iter()
                .map(|(k, v)| match v {
                    serde_json::Value::String(s) => (k, s),
                    other => (k, other.to_string()),
                })
                .collect(),
        });
    }
    Ok(out)
}

fn check_unique_ids(transactions: &[Transaction]) -> Result<(), IngestError> {
    let mut seen = HashSet::with_capacity(transactions.len());
    for t in transactions {
        if !seen.insert(t.id.as_str()) {
            return Err(IngestError::DuplicateId(t.id.clone()));
        }
    }
    Ok(())
}

pub fn write_csv<W: Write>(writer: W, transactions: &[Transaction]) -> Result<(), IngestError> {
    let extra_names: BTreeSet<&String> = transactions.iter().flat_map(|t| t.extra.keys()).collect();
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = vec!["id", "date", "amount", "description", "label", "company"];
    header.extend(extra_names.iter().map(|s| s.as_str()));
    wtr.write_record(&header).map_err(IngestError::Csv)?;
    for t in transactions {
        let mut row = vec![
            t.id.clone(),
            t.date.format("%Y-%m-%d").to_string(),
            t.amount.to_string(),
            t.raw_description.clone(),
            t.label.clone().unwrap_or_default(),
            t.company.clone().unwrap_or_default(),
        ];
        row.extend(
            extra_names
                .iter()
                .map(|name| t.extra.get(*name).cloned().unwrap_or_default()),
        );
        wtr.write_record(&row).map_err(IngestError::Csv)?;
    }
    wtr.flush().map_err(|source| IngestError::Io {
        path: "<csv>".into(),
        source,
    })
}

pub fn write_jsonl<W: Write>(mut writer: W, transactions: &[Transaction]) -> Result<(), IngestError> {
    for t in transactions {
        let record = JsonRecord {
            id: Some(t.id.clone()),
            date: t.date.format("%Y-%m-%d").to_string(),
            amount: t.amount,
            description: t.raw_description.clone(),
            label: t.label.clone(),
            company: t.company.clone(),
            extra: t
                .extra
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
                .collect(),
        };
        let line = serde_json::to_string(&record).expect("record serializes");
        writeln!(writer, "{line}").map_err(|source| IngestError::Io {
            path: "<jsonl>".into(),
            source,
        })?;
    }
    Ok(())
}

pub fn save_transactions(
    path: &Path,
    transactions: &[Transaction],
    format: Format,
) -> Result<(), IngestError> {
    let io_err = |source| IngestError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut writer = BufWriter::new(file);
    match format {
        Format::Csv => write_csv(&mut writer, transactions)?,
        Format::Jsonl => write_jsonl(&mut writer, transactions)?,
    }
    writer.flush().map_err(io_err)
}

/// Writes `(transaction, category)` pairs as an ingest-format labeled dataset.
pub fn export_labeled(
    path: &Path,
    examples: &[(Transaction, String)],
    categories: &CategorySet,
) -> Result<(), IngestError> {
    let mut labeled = Vec::with_capacity(examples.len());
    for (t, category) in examples {
        if categories.id(category).is_none() {
            return Err(IngestError::InvalidCategory(format!(
                "{category:?} is not a known category"
            )));
        }
        let mut t = t.clone();
        t.label = Some(category.clone());
        labeled.push(t);
    }
    save_transactions(path, &labeled, Format::from_path(path))
}
