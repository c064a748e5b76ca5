//! Table data model, corpus ingestion and text serialization.
//!
//! Rows are linearized as `col1: v1 | col2: v2 | ...`. Cell values escape `\`, `|`, newlines and
//! carriage returns; column names additionally escape `:` so that the form stays injective over
//! `(header, cells)` pairs.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: schema violation in `{field}`: {message}")]
    Schema {
        file: PathBuf,
        line: usize,
        field: String,
        message: String,
    },
    #[error("duplicate table_id `{0}`")]
    DuplicateTable(String),
    #[error("invalid table `{table_id}`: {message}")]
    InvalidTable { table_id: String, message: String },
    #[error("row index {index} out of range for table `{table_id}` with {rows} rows")]
    RowOutOfRange {
        table_id: String,
        index: usize,
        rows: usize,
    },
}

/// One data row of a table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub row_index: usize,
    pub cells: Vec<String>,
}

/// A header plus ordered row instances; the unit of retrieval.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub table_id: String,
    pub header: Vec<String>,
    pub instances: Vec<Instance>,
    pub metadata: BTreeMap<String, String>,
}

impl Table {
    /// Builds a table from raw rows, assigning row indices in order and validating widths.
    pub fn new(
        table_id: impl Into<String>,
        header: Vec<String>,
        rows: Vec<Vec<String>>,
    ) -> Result<Self, CorpusError> {
        let table = Self {
            table_id: table_id.into(),
            header,
            instances: rows
                .into_iter()
                .enumerate()
                .map(|(row_index, cells)| Instance { row_index, cells })
                .collect(),
            metadata: BTreeMap::new(),
        };
        table.validate()?;
        Ok(table)
    }

    pub fn with_metadata(mut self, metadata: BTreeMap<String, String>) -> Self {
        self.metadata = metadata;
        self
    }

    /// Number of instances (`m`).
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |message: String| CorpusError::InvalidTable {
            table_id: self.table_id.clone(),
            message,
        };
        if self.header.is_empty() {
            return Err(invalid("header is empty".into()));
        }
        let mut seen = HashSet::new();
        for inst in &self.instances {
            if inst.cells.len() != self.header.len() {
                return Err(invalid(format!(
                    "row {} has {} cells but header has {} columns",
                    inst.row_index,
                    inst.cells.len(),
                    self.header.len()
                )));
            }
            if !seen.insert(inst.row_index) {
                return Err(invalid(format!("duplicate row_index {}", inst.row_index)));
            }
        }
        Ok(())
    }

    /// Looks up the instance with the given `row_index`.
    pub fn instance(&self, row_index: usize) -> Result<&Instance, CorpusError> {
        // Row indices are positional for tables built through `Table::new`.
        match self.instances.get(row_index) {
            Some(inst) if inst.row_index == row_index => Ok(inst),
            _ => self
                .instances
                .iter()
                .find(|inst| inst.row_index == row_index)
                .ok_or_else(|| CorpusError::RowOutOfRange {
                    table_id: self.table_id.clone(),
                    index: row_index,
                    rows: self.instances.len(),
                }),
        }
    }
}

/// A named collection of tables with unique ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub corpus_id: String,
    pub tables: Vec<Table>,
}

impl Corpus {
    pub fn new(corpus_id: impl Into<String>, tables: Vec<Table>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for table in &tables {
            table.validate()?;
            if !seen.insert(table.table_id.as_str()) {
                return Err(CorpusError::DuplicateTable(table.table_id.clone()));
            }
        }
        Ok(Self {
            corpus_id: corpus_id.into(),
            tables,
        })
    }

    pub fn table(&self, table_id: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.table_id == table_id)
    }
}

/// On-disk corpus layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    Jsonl,
    CsvDir,
}

/// One line of the JSONL corpus format.
#[derive(Debug, Serialize, Deserialize)]
struct TableRecord {
    table_id: String,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    metadata: Option<BTreeMap<String, String>>,
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus, CorpusError> {
    match format {
        CorpusFormat::Jsonl => load_jsonl(path),
        CorpusFormat::CsvDir => load_csv_dir(path),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn corpus_id_for(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn load_jsonl(path: &Path) -> Result<Corpus, CorpusError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut tables = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |field: &str, message: String| CorpusError::Schema {
            file: path.to_path_buf(),
            line: line_no,
            field: field.to_string(),
            message,
        };
        let record: TableRecord =
            serde_json::from_str(&line).map_err(|e| schema("<record>", e.to_string()))?;
        if record.header.is_empty() {
            return Err(schema("header", "header must not be empty".into()));
        }
        for (r, row) in record.rows.iter().enumerate() {
            if row.len() != record.header.len() {
                return Err(schema(
                    &format!("rows[{r}]"),
                    format!(
                        "{} cells under a {}-column header",
                        row.len(),
                        record.header.len()
                    ),
                ));
            }
        }
        if !seen.insert(record.table_id.clone()) {
            return Err(CorpusError::DuplicateTable(record.table_id));
        }
        let table = Table::new(record.table_id, record.header, record.rows)?
            .with_metadata(record.metadata.unwrap_or_default());
        tables.push(table);
    }
    Ok(Corpus {
        corpus_id: corpus_id_for(path),
        tables,
    })
}

fn load_csv_dir(dir: &Path) -> Result<Corpus, CorpusError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "csv"))
        .collect();
    files.sort();

    let mut tables = Vec::with_capacity(files.len());
    for file in &files {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_path(file)
            .map_err(|e| CorpusError::Schema {
                file: file.clone(),
                line: 1,
                field: "<file>".into(),
                message: e.to_string(),
            })?;
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| CorpusError::Schema {
                file: file.clone(),
                line: 1,
                field: "header".into(),
                message: e.to_string(),
            })?
            .iter()
            .map(str::to_string)
            .collect();
        if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
            return Err(CorpusError::Schema {
                file: file.clone(),
                line: 1,
                field: "header".into(),
                message: "missing header row".into(),
            });
        }
        let mut rows = Vec::new();
        for (r, record) in reader.records().enumerate() {
            let line = r + 2;
            let record = record.map_err(|e| CorpusError::Schema {
                file: file.clone(),
                line,
                field: format!("rows[{r}]"),
                message: e.to_string(),
            })?;
            if record.len() != header.len() {
                return Err(CorpusError::Schema {
                    file: file.clone(),
                    line,
                    field: format!("rows[{r}]"),
                    message: format!(
                        "{} cells under a {}-column header",
                        record.len(),
                        header.len()
                    ),
                });
            }
            rows.push(record.iter().map(str::to_string).collect());
        }
        let mut metadata = BTreeMap::new();
        metadata.insert(
            "source_file".to_string(),
            file.file_name().unwrap_or_default().to_string_lossy().into_owned(),
        );
        tables.push(Table::new(corpus_id_for(file), header, rows)?.with_metadata(metadata));
    }
    Corpus::new(
        dir.file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        tables,
    )
}

/// Writes the corpus as JSONL, one table per line.
pub fn write_corpus<W: Write>(corpus: &Corpus, mut out: W) -> std::io::Result<()> {
    for table in &corpus.tables {
        let record = TableRecord {
            table_id: table.table_id.clone(),
            header: table.header.clone(),
            rows: table.instances.iter().map(|i| i.cells.clone()).collect(),
            metadata: (!table.metadata.is_empty()).then(|| table.metadata.clone()),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn escape_into(out: &mut String, text: &str, escape_colon: bool) {
    for ch in text.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '|' => out.push_str("\\|"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            ':' if escape_colon => out.push_str("\\:"),
            c => out.push(c),
        }
    }
}

fn serialize_cells(header: &[String], cells: &[String]) -> String {
    let mut out = String::new();
    for (c, (name, value)) in header.iter().zip(cells).enumerate() {
        if c > 0 {
            out.push_str(" | ");
        }
        escape_into(&mut out, name, true);
        out.push_str(": ");
        escape_into(&mut out, value, false);
    }
    out
}

fn serialize_header(header: &[String]) -> String {
    let mut out = String::new();
    for (c, name) in header.iter().enumerate() {
        if c > 0 {
            out.push_str(" | ");
        }
        escape_into(&mut out, name, true);
    }
    out
}

/// Linearizes one row as `col: value | ...`.
pub fn serialize_instance(table: &Table, row_index: usize) -> Result<String, CorpusError> {
    let inst = table.instance(row_index)?;
    Ok(serialize_cells(&table.header, &inst.cells))
}

/// Header line followed by the selected rows in ascending `row_index` order.
pub fn serialize_partial_table(table: &Table, row_indices: &[usize]) -> Result<String, CorpusError> {
    let mut rows = row_indices.to_vec();
    rows.sort_unstable();
    rows.dedup();
    let mut out = serialize_header(&table.header);
    for r in rows {
        out.push('\n');
        out.push_str(&serialize_instance(table, r)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn instance_format() {
        let t = Table::new("t", s(&["Name", "Year"]), vec![s(&["Alice", "2020"])]).unwrap();
        assert_eq!(serialize_instance(&t, 0).unwrap(), "Name: Alice | Year: 2020");
        let t = Table::new("t", s(&["X"]), vec![s(&["7"])]).unwrap();
        assert_eq!(serialize_instance(&t, 0).unwrap(), "X: 7");
    }

    #[test]
    fn pipe_and_newline_are_escaped() {
        let t = Table::new("t", s(&["A", "B"]), vec![s(&["x|y", "a\nb\\"])]).unwrap();
        assert_eq!(serialize_instance(&t, 0).unwrap(), "A: x\\|y | B: a\\nb\\\\");
    }

    #[test]
    fn empty_cell_keeps_column() {
        let t = Table::new("t", s(&["A", "B"]), vec![s(&["", "1"])]).unwrap();
        assert_eq!(serialize_instance(&t, 0).unwrap(), "A:  | B: 1");
    }

    #[test]
    fn out_of_range_row() {
        let t = Table::new("t", s(&["A"]), vec![s(&["1"])]).unwrap();
        assert!(matches!(
            serialize_instance(&t, 1),
            Err(CorpusError::RowOutOfRange { index: 1, .. })
        ));
    }

    #[test]
    fn partial_table_sorted_rows() {
        let t = Table::new(
            "t",
            s(&["A", "B"]),
            vec![s(&["1", "2"]), s(&["3", "4"]), s(&["5", "6"])],
        )
        .unwrap();
        let expected = "A | B\nA: 1 | B: 2\nA: 5 | B: 6";
        assert_eq!(serialize_partial_table(&t, &[0, 2]).unwrap(), expected);
        assert_eq!(serialize_partial_table(&t, &[2, 0]).unwrap(), expected);
        assert_eq!(serialize_partial_table(&t, &[]).unwrap(), "A | B");
    }

    #[test]
    fn rejects_ragged_rows_and_empty_header() {
        assert!(Table::new("t", s(&["A", "B"]), vec![s(&["1"])]).is_err());
        assert!(Table::new("t", vec![], vec![]).is_err());
    }

    #[test]
    fn rejects_duplicate_ids() {
        let t = Table::new("t", s(&["A"]), vec![]).unwrap();
        assert!(matches!(
            Corpus::new("c", vec![t.clone(), t]),
            Err(CorpusError::DuplicateTable(id)) if id == "t"
        ));
    }
}
