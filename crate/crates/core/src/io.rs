//! CSV readers for the panel inputs and CSV writers for the result tables.
//!
//! Floats are written in their shortest round-trip form, so re-running a
//! command on the same inputs reproduces every table byte for byte.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::flow::Trajectory;
use crate::inference::Overlay;
use crate::moran::{MoranCurve, MoranPoint};
use crate::panel::{partitions_from_rows, CrosswalkEntry, UnitRecord, ZonePartition};
use crate::rvf::VectorFieldGrid;
use crate::tuning::TuneResult;

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r)
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Rows `unit_id,year,population,area_km2`.
pub fn read_panel<R: Read>(r: R) -> Result<Vec<UnitRecord>> {
    reader(r).deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn read_panel_path(path: &Path) -> Result<Vec<UnitRecord>> {
    read_panel(open(path)?)
}

/// Rows `source_unit_id,target_unit_id,year_from,year_to`.
pub fn read_crosswalk<R: Read>(r: R) -> Result<Vec<CrosswalkEntry>> {
    reader(r).deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn read_crosswalk_path(path: &Path) -> Result<Vec<CrosswalkEntry>> {
    read_crosswalk(open(path)?)
}

#[derive(Deserialize)]
struct PartitionRow {
    unit_id: String,
    zone_id: String,
    valid_from: i32,
    valid_to: i32,
}

/// Rows `unit_id,zone_id,valid_from,valid_to`, one partition per window.
pub fn read_partitions<R: Read>(r: R) -> Result<Vec<ZonePartition>> {
    let rows: Vec<PartitionRow> = reader(r).deserialize().collect::<std::result::Result<_, _>>()?;
    partitions_from_rows(rows.into_iter().map(|p| (p.unit_id, p.zone_id, p.valid_from, p.valid_to)))
}

pub fn read_partitions_path(path: &Path) -> Result<Vec<ZonePartition>> {
    read_partitions(open(path)?)
}

#[derive(Deserialize)]
struct MembershipRow {
    unit_id: String,
    program_flag: String,
}

fn parse_flag(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" => Some(true),
        "0" | "false" | "no" | "n" | "" => Some(false),
        _ => None,
    }
}

/// Rows `unit_id,program_flag`; the flag is `1/0`, `true/false` or `yes/no`.
pub fn read_membership<R: Read>(r: R) -> Result<Vec<(String, bool)>> {
    let mut out = Vec::new();
    for row in reader(r).deserialize() {
        let row: MembershipRow = row?;
        let flag = parse_flag(&row.program_flag).ok_or_else(|| {
            Error::invalid(format!("unit {}: unrecognized program_flag {:?}", row.unit_id, row.program_flag))
        })?;
        out.push((row.unit_id, flag));
    }
    Ok(out)
}

pub fn read_membership_path(path: &Path) -> Result<Vec<(String, bool)>> {
    read_membership(open(path)?)
}

/// Shortest round-trip text of a float; non-finite values are left blank.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        String::new()
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// A CSV table kept in memory until written.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        wr.write_record(&self.header)?;
        for r in &self.rows {
            wr.write_record(r)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("utf-8 fields")
    }

    pub fn write_path(&self, path: &Path) -> Result<()> {
        self.write_to(std::io::BufWriter::new(File::create(path)?))
    }
}

pub fn panel_table(records: &[UnitRecord]) -> Table {
    let mut t = Table::new(&["unit_id", "year", "population", "area_km2"]);
    for r in records {
        t.push(vec![r.unit_id.clone(), r.year.to_string(), r.population.to_string(), fmt_f64(r.area_km2)]);
    }
    t
}

pub fn crosswalk_table(entries: &[CrosswalkEntry]) -> Table {
    let mut t = Table::new(&["source_unit_id", "target_unit_id", "year_from", "year_to"]);
    for e in entries {
        t.push(vec![
            e.source_unit_id.clone(),
            e.target_unit_id.clone(),
            e.year_from.to_string(),
            e.year_to.to_string(),
        ]);
    }
    t
}

pub fn partition_table(rows: &[(String, String, i32, i32)]) -> Table {
    let mut t = Table::new(&["unit_id", "zone_id", "valid_from", "valid_to"]);
    for (u, z, from, to) in rows {
        t.push(vec![u.clone(), z.clone(), from.to_string(), to.to_string()]);
    }
    t
}

pub fn membership_table(rows: &[(String, bool)]) -> Table {
    let mut t = Table::new(&["unit_id", "program_flag"]);
    for (u, f) in rows {
        t.push(vec![u.clone(), u8::from(*f).to_string()]);
    }
    t
}

/// Rows `unit_id,year,own,lag,population`.
pub fn moran_points_table(units: &[String], year: i32, points: &[MoranPoint], population: &[u64]) -> Table {
    let mut t = Table::new(&["unit_id", "year", "own", "lag", "population"]);
    for p in points {
        t.push(vec![
            units[p.unit].clone(),
            year.to_string(),
            fmt_f64(p.own),
            fmt_f64(p.lag),
            population[p.unit].to_string(),
        ]);
    }
    t
}

/// Rows `x,fit,lo,hi`.
pub fn curve_table(curve: &MoranCurve) -> Table {
    let mut t = Table::new(&["x", "fit", "lo", "hi"]);
    for i in 0..curve.x.len() {
        t.push(vec![fmt_f64(curve.x[i]), fmt_f64(curve.fit[i]), fmt_f64(curve.lo[i]), fmt_f64(curve.hi[i])]);
    }
    t
}

/// Rows `zx,zy,dx,dy,mass,dirvar,significant`, one per grid node in
/// row-major order. Empty nodes have blank arrow fields.
pub fn field_table(field: &VectorFieldGrid) -> Table {
    let mut t = Table::new(&["zx", "zy", "dx", "dy", "mass", "dirvar", "significant"]);
    for (k, z) in field.grid.nodes().enumerate() {
        let (dx, dy) = match field.arrows[k] {
            Some(a) => (fmt_f64(a.x), fmt_f64(a.y)),
            None => (String::new(), String::new()),
        };
        t.push(vec![
            fmt_f64(z.x),
            fmt_f64(z.y),
            dx,
            dy,
            fmt_f64(field.mass[k]),
            fmt_opt(field.direction_variance[k]),
            u8::from(field.significant[k]).to_string(),
        ]);
    }
    t
}

/// Rows `unit_id,t,zx,zy`, one per recorded state.
pub fn trajectory_table(units: &[String], trajectories: &[Trajectory]) -> Table {
    let mut t = Table::new(&["unit_id", "t", "zx", "zy"]);
    for tr in trajectories {
        let id = tr.unit.map(|u| units[u].clone()).unwrap_or_default();
        for (time, p) in tr.times.iter().zip(&tr.positions) {
            t.push(vec![id.clone(), fmt_f64(*time), fmt_f64(p.x), fmt_f64(p.y)]);
        }
    }
    t
}

/// Rows `alpha,h,mse,status`.
pub fn tune_table(result: &TuneResult) -> Table {
    let mut t = Table::new(&["alpha", "h", "mse", "status"]);
    for c in &result.candidates {
        t.push(vec![fmt_f64(c.alpha), fmt_f64(c.h), fmt_opt(c.mse), c.status.as_str().to_string()]);
    }
    t
}

/// Rows `attractor,program_flag,n_units,population`.
pub fn overlay_table(overlay: &Overlay) -> Table {
    let mut t = Table::new(&["attractor", "program_flag", "n_units", "population"]);
    for r in &overlay.rows {
        t.push(vec![
            r.attractor.clone(),
            u8::from(r.program_flag).to_string(),
            r.n_units.to_string(),
            r.population.to_string(),
        ]);
    }
    t
}
