//! Columnar output files and their readers.
//!
//! CSV files carry a header row and one record per line; a sidecar
//! `<file>.meta.json` holds the metadata, the run summary and the column
//! types. JSON files hold everything in one schema-versioned object. Floats
//! are written in shortest round-trip form, so reading a file back gives the
//! same bits. Non-finite floats are spelled `NaN`, `inf` and `-inf` (as JSON
//! strings in JSON files).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::config::Format;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Float(Vec<f64>),
    Int(Vec<i64>),
    Bool(Vec<bool>),
    Text(Vec<String>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Float(v) => v.len(),
            ColumnData::Int(v) => v.len(),
            ColumnData::Bool(v) => v.len(),
            ColumnData::Text(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn type_name(&self) -> &'static str {
        match self {
            ColumnData::Float(_) => "f64",
            ColumnData::Int(_) => "i64",
            ColumnData::Bool(_) => "bool",
            ColumnData::Text(_) => "string",
        }
    }

    fn empty_of(type_name: &str) -> Result<Self> {
        Ok(match type_name {
            "f64" => ColumnData::Float(Vec::new()),
            "i64" => ColumnData::Int(Vec::new()),
            "bool" => ColumnData::Bool(Vec::new()),
            "string" => ColumnData::Text(Vec::new()),
            other => return Err(format_error(format!("unknown column type `{other}`"))),
        })
    }

    fn cell(&self, i: usize) -> String {
        match self {
            ColumnData::Float(v) => format_float(v[i]),
            ColumnData::Int(v) => v[i].to_string(),
            ColumnData::Bool(v) => v[i].to_string(),
            ColumnData::Text(v) => v[i].clone(),
        }
    }

    fn push_parsed(&mut self, s: &str) -> Result<()> {
        let type_name = self.type_name();
        let bad = || format_error(format!("cannot parse `{s}` as {type_name}"));
        match self {
            ColumnData::Float(v) => v.push(s.parse().map_err(|_| bad())?),
            ColumnData::Int(v) => v.push(s.parse().map_err(|_| bad())?),
            ColumnData::Bool(v) => v.push(s.parse().map_err(|_| bad())?),
            ColumnData::Text(v) => v.push(s.to_string()),
        }
        Ok(())
    }

    fn to_json(&self) -> Value {
        match self {
            ColumnData::Float(v) => v.iter().map(|&x| float_value(x)).collect(),
            ColumnData::Int(v) => v.iter().map(|&x| json!(x)).collect(),
            ColumnData::Bool(v) => v.iter().map(|&x| json!(x)).collect(),
            ColumnData::Text(v) => v.iter().map(|x| json!(x)).collect(),
        }
    }

    fn from_json(type_name: &str, values: &[Value]) -> Result<Self> {
        let mut col = Self::empty_of(type_name)?;
        let bad = |v: &Value| format_error(format!("unexpected {type_name} value {v}"));
        for v in values {
            match &mut col {
                ColumnData::Float(out) => out.push(float_from_value(v).ok_or_else(|| bad(v))?),
                ColumnData::Int(out) => out.push(v.as_i64().ok_or_else(|| bad(v))?),
                ColumnData::Bool(out) => out.push(v.as_bool().ok_or_else(|| bad(v))?),
                ColumnData::Text(out) => out.push(v.as_str().ok_or_else(|| bad(v))?.to_string()),
            }
        }
        Ok(col)
    }

    /// Equality that compares floats by bit pattern.
    pub fn bit_eq(&self, other: &Self) -> bool {
        match (self, other) {
            (ColumnData::Float(a), ColumnData::Float(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => self == other,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<Column>,
}

impl Table {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a column. Panics if its length differs from the others.
    pub fn with(mut self, name: &str, data: ColumnData) -> Self {
        if let Some(first) = self.columns.first() {
            assert_eq!(first.data.len(), data.len(), "column `{name}` has the wrong length");
        }
        self.columns.push(Column {
            name: name.to_string(),
            data,
        });
        self
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.data.len())
    }

    pub fn column(&self, name: &str) -> Option<&ColumnData> {
        self.columns.iter().find(|c| c.name == name).map(|c| &c.data)
    }

    pub fn floats(&self, name: &str) -> Option<&[f64]> {
        match self.column(name)? {
            ColumnData::Float(v) => Some(v),
            _ => None,
        }
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.columns.len() == other.columns.len()
            && self
                .columns
                .iter()
                .zip(&other.columns)
                .all(|(a, b)| a.name == b.name && a.data.bit_eq(&b.data))
    }

    fn column_types(&self) -> Value {
        self.columns
            .iter()
            .map(|c| json!({"name": c.name, "type": c.data.type_name()}))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub name: String,
    pub spacing: String,
    pub values: Vec<f64>,
}

/// Values on a rectangular grid; `values[iy][ix]`, `None` for failed cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub x: GridAxis,
    pub y: GridAxis,
    pub values: Vec<Vec<Option<f64>>>,
}

impl Grid {
    fn to_table(&self) -> Table {
        let (nx, ny) = (self.x.values.len(), self.y.values.len());
        let cells = || (0..ny).flat_map(move |iy| (0..nx).map(move |ix| (ix, iy)));
        Table::new()
            .with("ix", ColumnData::Int(cells().map(|(ix, _)| ix as i64).collect()))
            .with("iy", ColumnData::Int(cells().map(|(_, iy)| iy as i64).collect()))
            .with(
                &self.x.name,
                ColumnData::Float(cells().map(|(ix, _)| self.x.values[ix]).collect()),
            )
            .with(
                &self.y.name,
                ColumnData::Float(cells().map(|(_, iy)| self.y.values[iy]).collect()),
            )
            .with(
                "value",
                ColumnData::Float(
                    cells()
                        .map(|(ix, iy)| self.values[iy][ix].unwrap_or(f64::NAN))
                        .collect(),
                ),
            )
            .with(
                "failed",
                ColumnData::Bool(cells().map(|(ix, iy)| self.values[iy][ix].is_none()).collect()),
            )
    }

    fn from_table(x: GridAxis, y: GridAxis, table: &Table) -> Result<Self> {
        let (nx, ny) = (x.values.len(), y.values.len());
        let (Some(ColumnData::Int(ix)), Some(ColumnData::Int(iy))) = (table.column("ix"), table.column("iy")) else {
            return Err(format_error("grid table needs integer ix and iy columns"));
        };
        let value = table
            .floats("value")
            .ok_or_else(|| format_error("grid table needs a value column"))?;
        let Some(ColumnData::Bool(failed)) = table.column("failed") else {
            return Err(format_error("grid table needs a failed column"));
        };
        let mut values = vec![vec![None; nx]; ny];
        for k in 0..table.rows() {
            let (i, j) = (ix[k] as usize, iy[k] as usize);
            if i >= nx || j >= ny {
                return Err(format_error("grid index out of range"));
            }
            values[j][i] = (!failed[k]).then_some(value[k]);
        }
        Ok(Self { x, y, values })
    }

    fn to_json(&self) -> Value {
        let axis = |a: &GridAxis| {
            json!({
                "name": a.name,
                "spacing": a.spacing,
                "values": a.values.iter().map(|&v| float_value(v)).collect::<Vec<_>>(),
            })
        };
        let rows: Vec<Value> = self
            .values
            .iter()
            .map(|row| row.iter().map(|v| v.map_or(Value::Null, float_value)).collect())
            .collect();
        json!({"layout": "grid", "x": axis(&self.x), "y": axis(&self.y), "values": rows})
    }

    fn from_json(v: &Value) -> Result<Self> {
        let axis = |a: &Value| -> Result<GridAxis> {
            Ok(GridAxis {
                name: str_field(a, "name")?.to_string(),
                spacing: str_field(a, "spacing")?.to_string(),
                values: floats_from(array_field(a, "values")?)?,
            })
        };
        let x = axis(&v["x"])?;
        let y = axis(&v["y"])?;
        let values = array_field(v, "values")?
            .iter()
            .map(|row| {
                row.as_array()
                    .ok_or_else(|| format_error("grid rows must be arrays"))?
                    .iter()
                    .map(|c| {
                        if c.is_null() {
                            Ok(None)
                        } else {
                            float_from_value(c)
                                .map(Some)
                                .ok_or_else(|| format_error(format!("bad grid value {c}")))
                        }
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != y.values.len() || values.iter().any(|r| r.len() != x.values.len()) {
            return Err(format_error("grid shape does not match its axes"));
        }
        Ok(Self { x, y, values })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Data {
    Table(Table),
    Grid(Grid),
}

/// Provenance written into every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub artifact: String,
    pub version: String,
    pub experiment: String,
    /// SHA-256 of the canonical JSON form of `config`.
    pub config_sha256: String,
    /// The configuration with every default filled in.
    pub config: Value,
    /// Values derived from the configuration at run time.
    pub resolved: Value,
}

impl Metadata {
    pub fn new(experiment: &str, config: Value, resolved: Value) -> Self {
        Self {
            artifact: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            experiment: experiment.to_string(),
            config_sha256: config_hash(&config),
            config,
            resolved,
        }
    }
}

pub fn config_hash(config: &Value) -> String {
    let canonical = serde_json::to_string(config).expect("json values serialize");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// A complete result: provenance, scalar summary and the data itself.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub metadata: Metadata,
    pub summary: Value,
    pub data: Data,
}

impl Document {
    fn header(&self) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert("schema_version".into(), json!(SCHEMA_VERSION));
        m.insert(
            "metadata".into(),
            serde_json::to_value(&self.metadata).expect("metadata serializes"),
        );
        m.insert("summary".into(), self.summary.clone());
        m
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.metadata == other.metadata
            && self.summary == other.summary
            && match (&self.data, &other.data) {
                (Data::Table(a), Data::Table(b)) => a.bit_eq(b),
                (Data::Grid(a), Data::Grid(b)) => {
                    a.x == b.x
                        && a.y == b.y
                        && a.values.len() == b.values.len()
                        && a.values.iter().zip(&b.values).all(|(r, s)| {
                            r.len() == s.len()
                                && r.iter().zip(s).all(|(u, v)| u.map(f64::to_bits) == v.map(f64::to_bits))
                        })
                }
                _ => false,
            }
    }
}

/// Shortest decimal text that parses back to the same `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}

/// JSON number for finite values, a string otherwise.
pub fn float_value(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or_else(|| Value::String(format_float(v)), Value::Number)
}

fn float_from_value(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => match s.as_str() {
            "NaN" | "inf" | "-inf" => s.parse().ok(),
            _ => None,
        },
        _ => None,
    }
}

fn floats_from(values: &[Value]) -> Result<Vec<f64>> {
    values
        .iter()
        .map(|v| float_from_value(v).ok_or_else(|| format_error(format!("bad float {v}"))))
        .collect()
}

fn str_field<'a>(v: &'a Value, key: &str) -> Result<&'a str> {
    v[key]
        .as_str()
        .ok_or_else(|| format_error(format!("missing string field `{key}`")))
}

fn array_field<'a>(v: &'a Value, key: &str) -> Result<&'a Vec<Value>> {
    v[key]
        .as_array()
        .ok_or_else(|| format_error(format!("missing array field `{key}`")))
}

fn format_error(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` through a temporary file in the same directory so that a
/// failed run never leaves a partial file at `path`.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    let result = fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(bytes).and_then(|_| f.sync_all()))
        .and_then(|_| fs::rename(&tmp, path));
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io_error(path))
}

fn table_csv(table: &Table) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(table.columns.iter().map(|c| c.name.as_str()))?;
    for i in 0..table.rows() {
        w.write_record(table.columns.iter().map(|c| c.data.cell(i)))?;
    }
    w.into_inner().map_err(|e| format_error(format!("csv buffer: {e}")))
}

fn table_json(table: &Table) -> Value {
    let columns: Vec<Value> = table
        .columns
        .iter()
        .map(|c| json!({"name": c.name, "type": c.data.type_name(), "values": c.data.to_json()}))
        .collect();
    json!({"layout": "table", "columns": columns})
}

fn table_from_json(v: &Value) -> Result<Table> {
    let mut table = Table::new();
    for c in array_field(v, "columns")? {
        let data = ColumnData::from_json(str_field(c, "type")?, array_field(c, "values")?)?;
        table.columns.push(Column {
            name: str_field(c, "name")?.to_string(),
            data,
        });
    }
    if table.columns.iter().any(|c| c.data.len() != table.rows()) {
        return Err(format_error("columns differ in length"));
    }
    Ok(table)
}

fn pretty(v: &Value) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(v).expect("json values serialize");
    bytes.push(b'\n');
    bytes
}

/// Writes `doc` to `path`; CSV output also writes the metadata sidecar.
pub fn write_document(doc: &Document, path: &Path, format: Format) -> Result<()> {
    let mut root = doc.header();
    match format {
        Format::Json => {
            let data = match &doc.data {
                Data::Table(t) => table_json(t),
                Data::Grid(g) => g.to_json(),
            };
            root.insert("data".into(), data);
            write_atomic(path, &pretty(&Value::Object(root)))
        }
        Format::Csv => {
            let table = match &doc.data {
                Data::Table(t) => t.clone(),
                Data::Grid(g) => {
                    root.insert("layout".into(), json!("grid"));
                    root.insert(
                        "axes".into(),
                        json!({"x": serde_json::to_value(&g.x)?, "y": serde_json::to_value(&g.y)?}),
                    );
                    g.to_table()
                }
            };
            root.insert("columns".into(), table.column_types());
            let csv = table_csv(&table)?;
            write_atomic(&sidecar_path(path), &pretty(&Value::Object(root)))?;
            write_atomic(path, &csv)
        }
    }
}

fn header_fields(root: &Value) -> Result<(Metadata, Value)> {
    let version = root["schema_version"].as_u64();
    if version != Some(SCHEMA_VERSION as u64) {
        return Err(format_error(format!(
            "unsupported schema_version {}",
            root["schema_version"]
        )));
    }
    let metadata = serde_json::from_value(root["metadata"].clone())?;
    Ok((metadata, root["summary"].clone()))
}

fn read_json_file(path: &Path) -> Result<Value> {
    let text = fs::read(path).map_err(io_error(path))?;
    Ok(serde_json::from_slice(&text)?)
}

/// Reads a file written by [`write_document`].
pub fn read_document(path: &Path, format: Format) -> Result<Document> {
    match format {
        Format::Json => {
            let root = read_json_file(path)?;
            let (metadata, summary) = header_fields(&root)?;
            let data = &root["data"];
            let data = match data["layout"].as_str() {
                Some("table") => Data::Table(table_from_json(data)?),
                Some("grid") => Data::Grid(Grid::from_json(data)?),
                _ => return Err(format_error("unknown data layout")),
            };
            Ok(Document {
                metadata,
                summary,
                data,
            })
        }
        Format::Csv => {
            let side = read_json_file(&sidecar_path(path))?;
            let (metadata, summary) = header_fields(&side)?;
            let mut table = Table::new();
            for c in array_field(&side, "columns")? {
                table.columns.push(Column {
                    name: str_field(c, "name")?.to_string(),
                    data: ColumnData::empty_of(str_field(c, "type")?)?,
                });
            }
            let mut r = csv::Reader::from_path(path)?;
            let names: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
            if names.len() != table.columns.len() || names.iter().zip(&table.columns).any(|(n, c)| *n != c.name) {
                return Err(format_error("csv header does not match the sidecar"));
            }
            for record in r.records() {
                let record = record?;
                for (cell, col) in record.iter().zip(table.columns.iter_mut()) {
                    col.data.push_parsed(cell)?;
                }
            }
            let data = if side["layout"] == "grid" {
                let x = serde_json::from_value(side["axes"]["x"].clone())?;
                let y = serde_json::from_value(side["axes"]["y"].clone())?;
                Data::Grid(Grid::from_table(x, y, &table)?)
            } else {
                Data::Table(table)
            };
            Ok(Document {
                metadata,
                summary,
                data,
            })
        }
    }
}
