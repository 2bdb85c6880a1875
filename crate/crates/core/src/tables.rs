//! Measurement tables: CSV files with unit-annotated headers.
//!
//! Header cells carry the column name and unit as `name(unit)`; units are
//! normalized to the crate's internal conventions (GHz, MHz, ns, µs, G, mW,
//! K) on ingestion, so no other module ever parses a unit string. Lines
//! starting with `#` hold `key = value` metadata.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::{Error, Result};

/// Speed of light in THz·nm, for wavelength → frequency conversion.
const C_THZ_NM: f64 = 299_792.458;

/// Table schema families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TableKind {
    PleLines,
    OdmrResonances,
    PlTrace,
    G2Histogram,
    LinewidthVsT,
    Saturation,
}

impl TableKind {
    pub fn name(&self) -> &'static str {
        match self {
            TableKind::PleLines => "ple-lines",
            TableKind::OdmrResonances => "odmr-resonances",
            TableKind::PlTrace => "pl-trace",
            TableKind::G2Histogram => "g2-histogram",
            TableKind::LinewidthVsT => "linewidth-vs-T",
            TableKind::Saturation => "saturation",
        }
    }

    /// Required columns in order: (name, canonical unit, type).
    pub fn schema(&self) -> &'static [(&'static str, UnitFamily, CellType)] {
        use CellType::*;
        use UnitFamily::*;
        match self {
            TableKind::PleLines => &[
                ("defect", None, Text),
                ("form", None, Text),
                ("frequency", FreqThz, Float),
                ("sigma", FreqMhz, Float),
                ("microwaves", None, Flag),
            ],
            TableKind::OdmrResonances => &[
                ("b_mag", FieldG, Float),
                ("b_theta", AngleDeg, Float),
                ("b_phi", AngleDeg, Float),
                ("frequency", FreqGhz, Float),
                ("sigma", FreqMhz, Float),
            ],
            TableKind::PlTrace => &[
                ("time", TimeNs, Float),
                ("pl", None, Float),
                ("power", PowerMw, Float),
                ("preparation", None, Text),
            ],
            TableKind::G2Histogram => &[("tau", TimeNs, Float), ("g2", None, Float)],
            TableKind::LinewidthVsT => &[
                ("temperature", TempK, Float),
                ("width", FreqMhz, Float),
                ("sigma", FreqMhz, Float),
            ],
            TableKind::Saturation => &[
                ("power", PowerMw, Float),
                ("rate", RateKhz, Float),
                ("sigma", RateKhz, Float),
            ],
        }
    }
}

impl std::str::FromStr for TableKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ple-lines" => Ok(TableKind::PleLines),
            "odmr-resonances" => Ok(TableKind::OdmrResonances),
            "pl-trace" => Ok(TableKind::PlTrace),
            "g2-histogram" => Ok(TableKind::G2Histogram),
            "linewidth-vs-T" | "linewidth-vs-t" => Ok(TableKind::LinewidthVsT),
            "saturation" => Ok(TableKind::Saturation),
            other => Err(Error::Table(format!("unknown table kind {other}"))),
        }
    }
}

/// Unit family per column, fixing the canonical unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnitFamily {
    /// Dimensionless or textual.
    None,
    FreqThz,
    FreqGhz,
    FreqMhz,
    TimeNs,
    TimeUs,
    FieldG,
    PowerMw,
    TempK,
    RateKhz,
    AngleDeg,
}

impl UnitFamily {
    pub fn canonical(&self) -> &'static str {
        match self {
            UnitFamily::None => "",
            UnitFamily::FreqThz => "THz",
            UnitFamily::FreqGhz => "GHz",
            UnitFamily::FreqMhz => "MHz",
            UnitFamily::TimeNs => "ns",
            UnitFamily::TimeUs => "us",
            UnitFamily::FieldG => "G",
            UnitFamily::PowerMw => "mW",
            UnitFamily::TempK => "K",
            UnitFamily::RateKhz => "kHz",
            UnitFamily::AngleDeg => "deg",
        }
    }

    /// Convert a value from `unit` into the family's canonical unit.
    pub fn convert(&self, value: f64, unit: &str) -> Result<f64> {
        let u = unit.trim();
        let fail = || {
            Err(Error::Table(format!(
                "unit {u} not convertible to {}",
                self.canonical()
            )))
        };
        match self {
            UnitFamily::None => {
                if u.is_empty() || u == "1" {
                    Ok(value)
                } else {
                    fail()
                }
            }
            UnitFamily::FreqThz => match u {
                "THz" => Ok(value),
                "GHz" => Ok(value * 1e-3),
                "MHz" => Ok(value * 1e-6),
                // Vacuum wavelength → frequency.
                "nm" => Ok(C_THZ_NM / value),
                _ => fail(),
            },
            UnitFamily::FreqGhz => match u {
                "GHz" => Ok(value),
                "THz" => Ok(value * 1e3),
                "MHz" => Ok(value * 1e-3),
                "kHz" => Ok(value * 1e-6),
                _ => fail(),
            },
            UnitFamily::FreqMhz => match u {
                "MHz" => Ok(value),
                "GHz" => Ok(value * 1e3),
                "kHz" => Ok(value * 1e-3),
                _ => fail(),
            },
            UnitFamily::TimeNs => match u {
                "ns" => Ok(value),
                "us" | "µs" => Ok(value * 1e3),
                "ms" => Ok(value * 1e6),
                "s" => Ok(value * 1e9),
                "ps" => Ok(value * 1e-3),
                _ => fail(),
            },
            UnitFamily::TimeUs => match u {
                "us" | "µs" => Ok(value),
                "ns" => Ok(value * 1e-3),
                "ms" => Ok(value * 1e3),
                "s" => Ok(value * 1e6),
                _ => fail(),
            },
            UnitFamily::FieldG => match u {
                "G" => Ok(value),
                "mT" => Ok(value * 10.0),
                "T" => Ok(value * 1e4),
                _ => fail(),
            },
            UnitFamily::PowerMw => match u {
                "mW" => Ok(value),
                "uW" | "µW" => Ok(value * 1e-3),
                "W" => Ok(value * 1e3),
                _ => fail(),
            },
            UnitFamily::TempK => match u {
                "K" => Ok(value),
                _ => fail(),
            },
            UnitFamily::RateKhz => match u {
                "kHz" => Ok(value),
                "Hz" => Ok(value * 1e-3),
                "MHz" => Ok(value * 1e3),
                _ => fail(),
            },
            UnitFamily::AngleDeg => match u {
                "deg" => Ok(value),
                "rad" => Ok(value.to_degrees()),
                _ => fail(),
            },
        }
    }
}

/// Cell payload types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellType {
    Float,
    Text,
    Flag,
}

/// One table cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Float(f64),
    Text(String),
    Flag(bool),
}

impl Cell {
    pub fn as_f64(&self) -> Result<f64> {
        match self {
            Cell::Float(x) => Ok(*x),
            other => Err(Error::Table(format!("expected a number, found {other:?}"))),
        }
    }
    pub fn as_text(&self) -> Result<&str> {
        match self {
            Cell::Text(s) => Ok(s),
            other => Err(Error::Table(format!("expected text, found {other:?}"))),
        }
    }
    pub fn as_flag(&self) -> Result<bool> {
        match self {
            Cell::Flag(b) => Ok(*b),
            other => Err(Error::Table(format!("expected a flag, found {other:?}"))),
        }
    }
}

/// A typed, unit-normalized measurement table.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementTable {
    pub kind: TableKind,
    /// Source metadata (sample, defect id, temperature, ...).
    pub meta: BTreeMap<String, String>,
    /// Rows in file order; columns follow the kind's schema order.
    pub rows: Vec<Vec<Cell>>,
}

impl MeasurementTable {
    pub fn new(kind: TableKind) -> Self {
        Self {
            kind,
            meta: BTreeMap::new(),
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: Vec<Cell>) -> Result<()> {
        let schema = self.kind.schema();
        if row.len() != schema.len() {
            return Err(Error::Table(format!(
                "row has {} cells; schema {} needs {}",
                row.len(),
                self.kind.name(),
                schema.len()
            )));
        }
        for (cell, (name, _, ty)) in row.iter().zip(schema) {
            let ok = matches!(
                (cell, ty),
                (Cell::Float(_), CellType::Float)
                    | (Cell::Text(_), CellType::Text)
                    | (Cell::Flag(_), CellType::Flag)
            );
            if !ok {
                return Err(Error::Table(format!("column {name}: wrong cell type")));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    /// Column index by schema name.
    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.kind
            .schema()
            .iter()
            .position(|(n, _, _)| *n == name)
            .ok_or_else(|| Error::Table(format!("no column {name} in {}", self.kind.name())))
    }

    /// All values of a float column.
    pub fn floats(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self.column_index(name)?;
        self.rows.iter().map(|r| r[idx].as_f64()).collect()
    }
}

/// Split a header cell `name(unit)` into name and unit.
fn split_header(cell: &str) -> (String, String) {
    let cell = cell.trim();
    if let Some(open) = cell.find('(') {
        if let Some(close) = cell.rfind(')') {
            if close > open {
                return (
                    cell[..open].trim().to_string(),
                    cell[open + 1..close].trim().to_string(),
                );
            }
        }
    }
    (cell.to_string(), String::new())
}

/// Parse a CSV measurement table from a reader.
pub fn parse_table_from(reader: impl Read, kind: TableKind) -> Result<MeasurementTable> {
    let mut table = MeasurementTable::new(kind);
    let schema = kind.schema();
    let buf = BufReader::new(reader);

    let mut header: Option<Vec<(usize, UnitFamily, CellType, String, String)>> = None;
    let mut data_row = 0usize;
    for (line_no, line) in buf.lines().enumerate() {
        let line = line.map_err(|e| Error::Table(format!("read error: {e}")))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                table
                    .meta
                    .insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        let cells: Vec<&str> = trimmed.split(',').collect();
        if header.is_none() {
            // Map each schema column to its position in the file.
            let named: Vec<(String, String)> =
                cells.iter().map(|c| split_header(c)).collect();
            let mut mapping = Vec::with_capacity(schema.len());
            for (name, family, ty) in schema {
                let pos = named
                    .iter()
                    .position(|(n, _)| n == name)
                    .ok_or_else(|| {
                        Error::Table(format!(
                            "missing column {name} in header (line {})",
                            line_no + 1
                        ))
                    })?;
                mapping.push((
                    pos,
                    *family,
                    *ty,
                    name.to_string(),
                    named[pos].1.clone(),
                ));
            }
            for (n, _) in &named {
                if !schema.iter().any(|(name, _, _)| name == n) {
                    return Err(Error::Table(format!(
                        "unknown column {n} for kind {}",
                        kind.name()
                    )));
                }
            }
            header = Some(mapping);
            continue;
        }
        let mapping = header.as_ref().unwrap();
        data_row += 1;
        let mut row = Vec::with_capacity(schema.len());
        for (pos, family, ty, name, unit) in mapping {
            let raw = cells.get(*pos).map(|c| c.trim()).ok_or_else(|| {
                Error::Table(format!("row {data_row}: missing cell for column {name}"))
            })?;
            let cell = match ty {
                CellType::Text => Cell::Text(raw.to_string()),
                CellType::Flag => match raw {
                    "0" | "false" => Cell::Flag(false),
                    "1" | "true" => Cell::Flag(true),
                    other => {
                        return Err(Error::Table(format!(
                            "row {data_row}, column {name}: invalid flag {other}"
                        )))
                    }
                },
                CellType::Float => {
                    let value: f64 = raw.parse().map_err(|_| {
                        Error::Table(format!(
                            "row {data_row}, column {name}: cannot parse {raw}"
                        ))
                    })?;
                    if !value.is_finite() {
                        return Err(Error::Table(format!(
                            "row {data_row}, column {name}: non-finite value {raw}"
                        )));
                    }
                    let converted = family.convert(value, unit).map_err(|e| {
                        Error::Table(format!("row {data_row}, column {name}: {e}"))
                    })?;
                    Cell::Float(converted)
                }
            };
            row.push(cell);
        }
        table.push_row(row)?;
    }
    if header.is_none() {
        return Err(Error::Table("empty file: no header row".into()));
    }
    Ok(table)
}

/// Parse a CSV measurement table from a file, naming the path on failure.
pub fn parse_table(path: &Path, kind: TableKind) -> Result<MeasurementTable> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Table(format!("{}: {e}", path.display())))?;
    parse_table_from(file, kind).map_err(|e| Error::Table(format!("{}: {e}", path.display())))
}

/// Render a float with 9 significant digits (shorter when exact).
pub fn format_float(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let a = x.abs();
    let mut s = if (1e-4..1e13).contains(&a) {
        let mag = a.log10().floor() as i32;
        let decimals = (8 - mag).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.8e}")
    };
    if s.contains('.') && !s.contains('e') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    s
}

/// Write a table as CSV with unit-annotated headers, streaming row by row.
pub fn emit_table_to(table: &MeasurementTable, mut out: impl Write) -> Result<()> {
    let io_err = |e: std::io::Error| Error::Table(format!("write error: {e}"));
    for (k, v) in &table.meta {
        writeln!(out, "# {k} = {v}").map_err(io_err)?;
    }
    let schema = table.kind.schema();
    let header: Vec<String> = schema
        .iter()
        .map(|(name, family, _)| {
            let unit = family.canonical();
            if unit.is_empty() {
                (*name).to_string()
            } else {
                format!("{name}({unit})")
            }
        })
        .collect();
    writeln!(out, "{}", header.join(",")).map_err(io_err)?;
    let mut line = String::new();
    for row in &table.rows {
        line.clear();
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            match cell {
                Cell::Float(x) => {
                    let _ = write!(line, "{}", format_float(*x));
                }
                Cell::Text(s) => {
                    if s.contains(',') || s.contains('\n') {
                        return Err(Error::Table(format!(
                            "text cell {s:?} contains a separator"
                        )));
                    }
                    line.push_str(s);
                }
                Cell::Flag(b) => line.push(if *b { '1' } else { '0' }),
            }
        }
        writeln!(out, "{line}").map_err(io_err)?;
    }
    Ok(())
}

/// Write a table to a file path.
pub fn emit_table(table: &MeasurementTable, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)
        .map_err(|e| Error::Table(format!("{}: {e}", path.display())))?;
    let mut writer = std::io::BufWriter::new(file);
    emit_table_to(table, &mut writer)?;
    writer
        .flush()
        .map_err(|e| Error::Table(format!("{}: {e}", path.display())))
}

// Typed conversions into domain records.

impl MeasurementTable {
    /// PLE line records grouped by defect id, preserving first-seen order.
    pub fn to_ple_dataset(
        &self,
        zpl_nominal_thz: f64,
        d_ground_ghz: f64,
    ) -> Result<crate::inference::EnsemblePleDataset> {
        if self.kind != TableKind::PleLines {
            return Err(Error::Table("not a ple-lines table".into()));
        }
        let mut order: Vec<String> = Vec::new();
        let mut by_defect: BTreeMap<String, crate::inference::PleDefectRecord> = BTreeMap::new();
        let mut form = String::new();
        for row in &self.rows {
            let defect = row[0].as_text()?.to_string();
            form = row[1].as_text()?.to_string();
            let rec = by_defect.entry(defect.clone()).or_insert_with(|| {
                order.push(defect.clone());
                crate::inference::PleDefectRecord {
                    defect_id: defect.clone(),
                    lines_thz: Vec::new(),
                    sigmas_mhz: Vec::new(),
                    microwaves_on: Vec::new(),
                }
            });
            rec.lines_thz.push(row[2].as_f64()?);
            rec.sigmas_mhz.push(row[3].as_f64()?);
            rec.microwaves_on.push(row[4].as_flag()?);
        }
        Ok(crate::inference::EnsemblePleDataset {
            form,
            zpl_nominal_thz,
            d_ground_ghz,
            defects: order
                .into_iter()
                .map(|id| by_defect.remove(&id).unwrap())
                .collect(),
        })
    }

    pub fn to_odmr_records(&self) -> Result<Vec<crate::ground::OdmrRecord>> {
        if self.kind != TableKind::OdmrResonances {
            return Err(Error::Table("not an odmr-resonances table".into()));
        }
        self.rows
            .iter()
            .map(|row| {
                Ok(crate::ground::OdmrRecord {
                    b_mag_g: row[0].as_f64()?,
                    b_theta_deg: row[1].as_f64()?,
                    b_phi_deg: row[2].as_f64()?,
                    frequency_ghz: row[3].as_f64()?,
                    sigma_mhz: row[4].as_f64()?,
                })
            })
            .collect()
    }

    /// PL traces split on (power, preparation) changes, preserving order.
    pub fn to_pl_traces(&self) -> Result<Vec<crate::optical::PlTrace>> {
        if self.kind != TableKind::PlTrace {
            return Err(Error::Table("not a pl-trace table".into()));
        }
        let mut traces: Vec<crate::optical::PlTrace> = Vec::new();
        for row in &self.rows {
            let time = row[0].as_f64()?;
            let pl = row[1].as_f64()?;
            let power = row[2].as_f64()?;
            let prep: crate::optical::Preparation = row[3].as_text()?.parse()?;
            let start_new = traces.last().map_or(true, |t: &crate::optical::PlTrace| {
                t.power_mw != power
                    || t.preparation != prep
                    || t.times_ns.last().is_some_and(|&last| time < last)
            });
            if start_new {
                traces.push(crate::optical::PlTrace {
                    times_ns: Vec::new(),
                    pl: Vec::new(),
                    power_mw: power,
                    preparation: prep,
                });
            }
            let t = traces.last_mut().unwrap();
            t.times_ns.push(time);
            t.pl.push(pl);
        }
        Ok(traces)
    }
}
