//! Unit/year panel ingestion: crosswalk harmonization, zone partitions and
//! log-density computation.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One raw observation of a spatial unit in a given year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub unit_id: String,
    pub year: i32,
    pub population: u64,
    pub area_km2: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrosswalkEntry {
    pub source_unit_id: String,
    pub target_unit_id: String,
    pub year_from: i32,
    pub year_to: i32,
}

impl CrosswalkEntry {
    fn covers(&self, year: i32) -> bool {
        self.year_from <= year && year <= self.year_to
    }
}

/// Maps historical unit definitions onto the reference-year definition.
/// Units without an entry map to themselves.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Crosswalk {
    by_source: BTreeMap<String, Vec<CrosswalkEntry>>,
    /// Year whose unit definitions (and areas) are canonical. Defaults to the
    /// last year of the records.
    pub reference_year: Option<i32>,
}

impl Crosswalk {
    pub fn identity() -> Self {
        Crosswalk::default()
    }

    /// Validates that the mapping is a function of `(source, year)`.
    pub fn new(mappings: Vec<CrosswalkEntry>, reference_year: Option<i32>) -> Result<Self> {
        let mut by_source: BTreeMap<String, Vec<CrosswalkEntry>> = BTreeMap::new();
        for m in mappings {
            if m.year_from > m.year_to {
                return Err(Error::invalid(format!(
                    "crosswalk range {}..{} for {} is reversed",
                    m.year_from, m.year_to, m.source_unit_id
                )));
            }
            by_source.entry(m.source_unit_id.clone()).or_default().push(m);
        }
        for (source, entries) in by_source.iter_mut() {
            entries.sort_by_key(|e| (e.year_from, e.year_to));
            for pair in entries.windows(2) {
                if pair[1].year_from <= pair[0].year_to {
                    return Err(Error::OverlappingCrosswalk {
                        source_unit: source.clone(),
                        first: (pair[0].year_from, pair[0].year_to),
                        second: (pair[1].year_from, pair[1].year_to),
                    });
                }
            }
        }
        Ok(Crosswalk { by_source, reference_year })
    }

    pub fn target_of<'a>(&'a self, source: &'a str, year: i32) -> &'a str {
        self.by_source
            .get(source)
            .and_then(|es| es.iter().find(|e| e.covers(year)))
            .map(|e| e.target_unit_id.as_str())
            .unwrap_or(source)
    }

    pub fn entries(&self) -> impl Iterator<Item = &CrosswalkEntry> {
        self.by_source.values().flatten()
    }

    pub fn is_empty(&self) -> bool {
        self.by_source.is_empty()
    }
}

/// Assignment of units to zones, valid over an inclusive year range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZonePartition {
    pub zone_of: BTreeMap<String, String>,
    pub valid_from: i32,
    pub valid_to: i32,
}

impl ZonePartition {
    pub fn new(zone_of: BTreeMap<String, String>, valid_from: i32, valid_to: i32) -> Result<Self> {
        if valid_from > valid_to {
            return Err(Error::invalid(format!(
                "partition validity {valid_from}..{valid_to} is reversed"
            )));
        }
        Ok(ZonePartition { zone_of, valid_from, valid_to })
    }

    pub fn is_valid_in(&self, year: i32) -> bool {
        self.valid_from <= year && year <= self.valid_to
    }

    pub fn zone(&self, unit: &str) -> Option<&str> {
        self.zone_of.get(unit).map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    ZeroPopulation,
    MissingYears,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedUnit {
    pub unit_id: String,
    pub reason: DropReason,
    /// Years that triggered the drop.
    pub years: Vec<i32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub dropped: Vec<DroppedUnit>,
}

/// Harmonized panel of log population densities.
///
/// Values are stored year-major: all units of the first year, then the next.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    units: Vec<String>,
    years: Vec<i32>,
    log_density: Vec<f64>,
    population: Vec<u64>,
    area_km2: Vec<f64>,
    partitions: Vec<ZonePartition>,
}

impl Panel {
    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn partitions(&self) -> &[ZonePartition] {
        &self.partitions
    }

    pub fn first_year(&self) -> i32 {
        self.years[0]
    }

    pub fn last_year(&self) -> i32 {
        *self.years.last().unwrap()
    }

    pub fn year_index(&self, year: i32) -> Result<usize> {
        if year < self.first_year() || year > self.last_year() {
            return Err(Error::YearOutOfRange(year));
        }
        Ok((year - self.first_year()) as usize)
    }

    pub fn unit_index(&self, unit_id: &str) -> Option<usize> {
        self.units.binary_search_by(|u| u.as_str().cmp(unit_id)).ok()
    }

    /// Log densities of every unit in `year`, in unit order.
    pub fn log_density(&self, year: i32) -> Result<&[f64]> {
        let t = self.year_index(year)?;
        let n = self.units.len();
        Ok(&self.log_density[t * n..(t + 1) * n])
    }

    pub fn population(&self, year: i32) -> Result<&[u64]> {
        let t = self.year_index(year)?;
        let n = self.units.len();
        Ok(&self.population[t * n..(t + 1) * n])
    }

    /// Reference-year areas, constant over the panel.
    pub fn area_km2(&self) -> &[f64] {
        &self.area_km2
    }

    /// The partition valid in `year`.
    pub fn partition_for(&self, year: i32) -> Result<&ZonePartition> {
        self.partitions
            .iter()
            .find(|p| p.is_valid_in(year))
            .ok_or(Error::UncoveredYear(year))
    }

    /// Restricts the panel to `start..=end`.
    pub fn select_window(&self, start: i32, end: i32) -> Result<Panel> {
        if start >= end {
            return Err(Error::EmptyWindow(start, end));
        }
        let t0 = self.year_index(start)?;
        let t1 = self.year_index(end)?;
        let n = self.units.len();
        // Every retained unit is observed in every panel year, so all survive.
        if n == 0 {
            return Err(Error::NoUnits(format!("window {start}..={end}")));
        }
        let partitions = self
            .partitions
            .iter()
            .filter(|p| p.valid_to >= start && p.valid_from <= end)
            .cloned()
            .collect();
        Ok(Panel {
            units: self.units.clone(),
            years: (start..=end).collect(),
            log_density: self.log_density[t0 * n..(t1 + 1) * n].to_vec(),
            population: self.population[t0 * n..(t1 + 1) * n].to_vec(),
            area_km2: self.area_km2.clone(),
            partitions,
        })
    }
}

/// Applies the crosswalk: records of source units mapped to the same target
/// in the same year are merged by summing populations and areas.
///
/// Output is sorted by `(unit_id, year)`.
pub fn harmonize(records: &[UnitRecord], crosswalk: &Crosswalk) -> Result<Vec<UnitRecord>> {
    let mut seen = BTreeSet::new();
    let mut merged: BTreeMap<(String, i32), (u64, f64)> = BTreeMap::new();
    for r in records {
        if !seen.insert((r.unit_id.as_str(), r.year)) {
            return Err(Error::DuplicateRecord { unit: r.unit_id.clone(), year: r.year });
        }
        if !(r.area_km2 > 0.0) || !r.area_km2.is_finite() {
            return Err(Error::NonPositiveArea {
                unit: r.unit_id.clone(),
                year: r.year,
                area: r.area_km2,
            });
        }
        let target = crosswalk.target_of(&r.unit_id, r.year).to_string();
        let slot = merged.entry((target, r.year)).or_insert((0, 0.0));
        slot.0 += r.population;
        slot.1 += r.area_km2;
    }
    Ok(merged
        .into_iter()
        .map(|((unit_id, year), (population, area_km2))| UnitRecord {
            unit_id,
            year,
            population,
            area_km2,
        })
        .collect())
}

/// Builds the canonical panel from raw records.
///
/// Units with a zero population in any year, or missing any year of the
/// record span, are dropped and listed in the returned report.
pub fn ingest_panel(
    records: &[UnitRecord],
    crosswalk: &Crosswalk,
    partitions: Vec<ZonePartition>,
) -> Result<(Panel, IngestReport)> {
    let harmonized = harmonize(records, crosswalk)?;
    let years: BTreeSet<i32> = harmonized.iter().map(|r| r.year).collect();
    if years.len() < 2 {
        return Err(Error::invalid("records must cover at least two distinct years"));
    }
    let first = *years.first().unwrap();
    let last = *years.last().unwrap();
    if years.len() != (last - first + 1) as usize {
        let missing: Vec<i32> = (first..=last).filter(|y| !years.contains(y)).collect();
        return Err(Error::invalid(format!("panel years are not contiguous; missing {missing:?}")));
    }
    let reference_year = crosswalk.reference_year.unwrap_or(last);

    let mut by_unit: BTreeMap<&str, BTreeMap<i32, &UnitRecord>> = BTreeMap::new();
    for r in &harmonized {
        by_unit.entry(r.unit_id.as_str()).or_default().insert(r.year, r);
    }

    let reference_units: BTreeSet<&str> = harmonized
        .iter()
        .filter(|r| r.year == reference_year)
        .map(|r| r.unit_id.as_str())
        .collect();
    for e in crosswalk.entries() {
        if !reference_units.contains(e.target_unit_id.as_str()) {
            return Err(Error::UnknownCrosswalkTarget(e.target_unit_id.clone()));
        }
    }

    let mut report = IngestReport::default();
    let mut kept: Vec<(&str, &BTreeMap<i32, &UnitRecord>)> = Vec::new();
    for (unit, rows) in &by_unit {
        let missing: Vec<i32> = (first..=last).filter(|y| !rows.contains_key(y)).collect();
        if !missing.is_empty() {
            warn!("dropping unit {unit}: missing years {missing:?}");
            report.dropped.push(DroppedUnit {
                unit_id: unit.to_string(),
                reason: DropReason::MissingYears,
                years: missing,
            });
            continue;
        }
        let zero: Vec<i32> = rows.values().filter(|r| r.population == 0).map(|r| r.year).collect();
        if !zero.is_empty() {
            warn!("dropping unit {unit}: zero population in {zero:?}");
            report.dropped.push(DroppedUnit {
                unit_id: unit.to_string(),
                reason: DropReason::ZeroPopulation,
                years: zero,
            });
            continue;
        }
        kept.push((unit, rows));
    }
    if kept.is_empty() {
        return Err(Error::NoUnits("every unit was dropped during ingestion".into()));
    }

    check_partitions(&partitions, first, last, kept.iter().map(|(u, _)| *u))?;

    let n = kept.len();
    let n_years = (last - first + 1) as usize;
    let units: Vec<String> = kept.iter().map(|(u, _)| u.to_string()).collect();
    let area_km2: Vec<f64> = kept
        .iter()
        .map(|(_, rows)| {
            rows.get(&reference_year)
                .or_else(|| rows.values().next_back())
                .map(|r| r.area_km2)
                .unwrap()
        })
        .collect();
    let mut log_density = vec![0.0; n * n_years];
    let mut population = vec![0u64; n * n_years];
    for (j, (_, rows)) in kept.iter().enumerate() {
        for (t, year) in (first..=last).enumerate() {
            let pop = rows[&year].population;
            population[t * n + j] = pop;
            log_density[t * n + j] = (pop as f64 / area_km2[j]).ln();
        }
    }
    let mut partitions = partitions;
    partitions.sort_by_key(|p| p.valid_from);
    Ok((
        Panel {
            units,
            years: (first..=last).collect(),
            log_density,
            population,
            area_km2,
            partitions,
        },
        report,
    ))
}

fn check_partitions<'a>(
    partitions: &[ZonePartition],
    first: i32,
    last: i32,
    units: impl Iterator<Item = &'a str> + Clone,
) -> Result<()> {
    let mut sorted: Vec<&ZonePartition> = partitions.iter().collect();
    sorted.sort_by_key(|p| p.valid_from);
    for pair in sorted.windows(2) {
        if pair[1].valid_from <= pair[0].valid_to {
            return Err(Error::invalid(format!(
                "partitions {}..{} and {}..{} overlap",
                pair[0].valid_from, pair[0].valid_to, pair[1].valid_from, pair[1].valid_to
            )));
        }
    }
    for year in first..=last {
        if !sorted.iter().any(|p| p.is_valid_in(year)) {
            return Err(Error::UncoveredYear(year));
        }
    }
    for p in sorted {
        if p.valid_to < first || p.valid_from > last {
            continue;
        }
        if let Some(unit) = units.clone().find(|u| p.zone(u).is_none()) {
            return Err(Error::MissingZone {
                unit: unit.to_string(),
                year: p.valid_from.max(first),
            });
        }
    }
    Ok(())
}

/// Groups partition rows `(unit, zone, valid_from, valid_to)` into one
/// partition per validity window.
pub fn partitions_from_rows(
    rows: impl IntoIterator<Item = (String, String, i32, i32)>,
) -> Result<Vec<ZonePartition>> {
    let mut groups: BTreeMap<(i32, i32), BTreeMap<String, String>> = BTreeMap::new();
    for (unit, zone, from, to) in rows {
        let g = groups.entry((from, to)).or_default();
        if let Some(prev) = g.insert(unit.clone(), zone.clone()) {
            if prev != zone {
                return Err(Error::invalid(format!(
                    "unit {unit} has two zones ({prev}, {zone}) in partition {from}..{to}"
                )));
            }
        }
    }
    groups
        .into_iter()
        .map(|((from, to), zone_of)| ZonePartition::new(zone_of, from, to))
        .collect()
}

/// Zone sizes keyed by zone id.
pub fn zone_sizes(partition: &ZonePartition, units: &[String]) -> HashMap<String, usize> {
    let mut sizes = HashMap::new();
    for u in units {
        if let Some(z) = partition.zone(u) {
            *sizes.entry(z.to_string()).or_insert(0) += 1;
        }
    }
    sizes
}
