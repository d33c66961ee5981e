//! Galaxy catalog rows and CSV ingestion.
//!
//! Catalogs are UTF-8 CSV with a mandatory header and `.` decimal separator.
//! Malformed rows are collected with their line numbers instead of aborting
//! the parse (strict mode aborts on the first problem); redshifts outside
//! [0, 2] are filtered but reported, never silently dropped.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// One galaxy record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogRow {
    pub id: String,
    pub z_true: f64,
    pub z_pred: Option<f64>,
    /// g-r color index.
    pub g_r: Option<f64>,
    pub class_true: Option<i64>,
    pub class_pred: Option<i64>,
}

/// Column names to read each field from. `id` and `z_true` are mandatory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CatalogSchema {
    pub id: String,
    pub z_true: String,
    pub z_pred: String,
    pub g_r: String,
    pub class_true: String,
    pub class_pred: String,
}

impl Default for CatalogSchema {
    fn default() -> Self {
        CatalogSchema {
            id: "id".into(),
            z_true: "z_true".into(),
            z_pred: "z_pred".into(),
            g_r: "g_r".into(),
            class_true: "class_true".into(),
            class_pred: "class_pred".into(),
        }
    }
}

/// A rejected or filtered row: 1-based line number plus the reason.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RowIssue {
    pub line: usize,
    pub reason: String,
}

/// Outcome of a parse: typed rows plus the full issue report.
#[derive(Debug, Clone, Default)]
pub struct ParseReport {
    pub rows: Vec<CatalogRow>,
    /// Malformed rows (bad numbers, missing fields).
    pub errors: Vec<RowIssue>,
    /// Structurally valid rows whose z_true fell outside [0, 2].
    pub filtered: Vec<RowIssue>,
}

pub fn parse_catalog(path: &Path, schema: &CatalogSchema, strict: bool) -> Result<ParseReport> {
    let file = std::fs::File::open(path)?;
    parse_catalog_reader(file, schema, strict)
}

pub fn parse_catalog_reader<R: Read>(
    input: R,
    schema: &CatalogSchema,
    strict: bool,
) -> Result<ParseReport> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| Error::Schema(format!("cannot read header row: {e}")))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let id_col = col(&schema.id)
        .ok_or_else(|| Error::Schema(format!("missing mandatory column `{}`", schema.id)))?;
    let z_true_col = col(&schema.z_true)
        .ok_or_else(|| Error::Schema(format!("missing mandatory column `{}`", schema.z_true)))?;
    let z_pred_col = col(&schema.z_pred);
    let g_r_col = col(&schema.g_r);
    let class_true_col = col(&schema.class_true);
    let class_pred_col = col(&schema.class_pred);

    let mut report = ParseReport::default();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2; // 1-based, after the header
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let issue = RowIssue {
                    line,
                    reason: format!("unreadable record: {e}"),
                };
                if strict {
                    return Err(Error::Data(format!("line {}: {}", issue.line, issue.reason)));
                }
                report.errors.push(issue);
                continue;
            }
        };
        match parse_record(
            &record,
            id_col,
            z_true_col,
            z_pred_col,
            g_r_col,
            class_true_col,
            class_pred_col,
        ) {
            Ok(row) => {
                if (0.0..=2.0).contains(&row.z_true) {
                    report.rows.push(row);
                } else {
                    report.filtered.push(RowIssue {
                        line,
                        reason: format!("out-of-range: z_true {} outside [0, 2]", row.z_true),
                    });
                }
            }
            Err(reason) => {
                let issue = RowIssue { line, reason };
                if strict {
                    return Err(Error::Data(format!("line {}: {}", issue.line, issue.reason)));
                }
                report.errors.push(issue);
            }
        }
    }
    Ok(report)
}

fn parse_record(
    record: &csv::StringRecord,
    id_col: usize,
    z_true_col: usize,
    z_pred_col: Option<usize>,
    g_r_col: Option<usize>,
    class_true_col: Option<usize>,
    class_pred_col: Option<usize>,
) -> std::result::Result<CatalogRow, String> {
    let field = |col: usize| record.get(col).unwrap_or("").trim();
    let opt_f64 = |col: Option<usize>, name: &str| -> std::result::Result<Option<f64>, String> {
        match col.map(field) {
            None | Some("") => Ok(None),
            Some(text) => text
                .parse::<f64>()
                .map(Some)
                .map_err(|_| format!("non-numeric {name} `{text}`")),
        }
    };
    let opt_i64 = |col: Option<usize>, name: &str| -> std::result::Result<Option<i64>, String> {
        match col.map(field) {
            None | Some("") => Ok(None),
            Some(text) => text
                .parse::<i64>()
                .map(Some)
                .map_err(|_| format!("non-integer {name} `{text}`")),
        }
    };

    let id = field(id_col).to_string();
    if id.is_empty() {
        return Err("empty id".into());
    }
    let z_text = field(z_true_col);
    let z_true: f64 = z_text
        .parse()
        .map_err(|_| format!("non-numeric z_true `{z_text}`"))?;
    if !z_true.is_finite() {
        return Err(format!("non-finite z_true {z_true}"));
    }
    Ok(CatalogRow {
        id,
        z_true,
        z_pred: opt_f64(z_pred_col, "z_pred")?,
        g_r: opt_f64(g_r_col, "g_r")?,
        class_true: opt_i64(class_true_col, "class_true")?,
        class_pred: opt_i64(class_pred_col, "class_pred")?,
    })
}

/// Write rows with the default schema header. Floats use the shortest
/// round-trip representation, so parse(serialize(rows)) is the identity.
pub fn write_catalog<W: Write>(rows: &[CatalogRow], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer
        .write_record(["id", "z_true", "z_pred", "g_r", "class_true", "class_pred"])
        .map_err(|e| Error::Data(format!("csv write: {e}")))?;
    let fmt_f = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    let fmt_i = |v: Option<i64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for row in rows {
        writer
            .write_record([
                row.id.clone(),
                format!("{}", row.z_true),
                fmt_f(row.z_pred),
                fmt_f(row.g_r),
                fmt_i(row.class_true),
                fmt_i(row.class_pred),
            ])
            .map_err(|e| Error::Data(format!("csv write: {e}")))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_catalog(rows: &[CatalogRow], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_catalog(rows, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_str(text: &str, strict: bool) -> Result<ParseReport> {
        parse_catalog_reader(text.as_bytes(), &CatalogSchema::default(), strict)
    }

    #[test]
    fn well_formed_row() {
        let report = parse_str("id,z_true,z_pred,g_r\ng1,0.12,0.13,0.85\n", false).unwrap();
        assert_eq!(report.rows.len(), 1);
        let row = &report.rows[0];
        assert_eq!(row.id, "g1");
        assert_eq!(row.z_true, 0.12);
        assert_eq!(row.z_pred, Some(0.13));
        assert_eq!(row.g_r, Some(0.85));
        assert!(report.errors.is_empty() && report.filtered.is_empty());
    }

    #[test]
    fn out_of_range_filtered_with_reason() {
        let report = parse_str("id,z_true\ng1,2.5\ng2,0.5\n", false).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.filtered.len(), 1);
        assert_eq!(report.filtered[0].line, 2);
        assert!(report.filtered[0].reason.contains("out-of-range"));
    }

    #[test]
    fn malformed_row_reported_with_line_number() {
        let report = parse_str("id,z_true\ng1,abc\ng2,0.5\n", false).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.errors.len(), 1);
        assert_eq!(report.errors[0].line, 2);
        assert!(report.errors[0].reason.contains("non-numeric"));
    }

    #[test]
    fn strict_mode_aborts_on_first_error() {
        let err = parse_str("id,z_true\ng1,abc\n", true);
        assert!(matches!(err, Err(Error::Data(_))));
    }

    #[test]
    fn missing_mandatory_column_is_schema_error() {
        let err = parse_str("name,redshift\ng1,0.3\n", false);
        assert!(matches!(err, Err(Error::Schema(_))));
    }

    #[test]
    fn round_trip_identity() {
        let rows = vec![
            CatalogRow {
                id: "a".into(),
                z_true: 0.1,
                z_pred: Some(0.30000000000000004),
                g_r: Some(-0.25),
                class_true: Some(3),
                class_pred: None,
            },
            CatalogRow {
                id: "b".into(),
                z_true: 1.9987,
                z_pred: None,
                g_r: None,
                class_true: None,
                class_pred: Some(7),
            },
        ];
        let mut buf = Vec::new();
        write_catalog(&rows, &mut buf).unwrap();
        let report = parse_catalog_reader(buf.as_slice(), &CatalogSchema::default(), true).unwrap();
        assert_eq!(report.rows, rows);
    }
}
