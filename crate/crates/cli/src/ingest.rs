//! Store CSV ingestion.
//!
//! Required header: `store_id,chain_id,chain_name,format,latitude,longitude,revenue`.
//! Extra columns are ignored unless a region filter asks for `region`.
//! Rows are numbered from 1, counting data rows only.

use std::collections::BTreeMap;
use std::path::Path;

use mktsens_core::geomarket::{Format, Store, StoreUniverse};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const COLUMNS: [&str; 7] = [
    "store_id",
    "chain_id",
    "chain_name",
    "format",
    "latitude",
    "longitude",
    "revenue",
];

#[derive(Debug)]
pub struct LoadedStores {
    pub universe: StoreUniverse,
    pub rows_read: usize,
    pub dropped_by_format: usize,
    pub dropped_by_region: usize,
}

impl LoadedStores {
    pub fn summary(&self) -> String {
        format!(
            "read {} rows, kept {} stores ({} dropped by format, {} dropped by region)",
            self.rows_read,
            self.universe.len(),
            self.dropped_by_format,
            self.dropped_by_region
        )
    }
}

pub fn load_stores(path: &Path, config: &RunConfig) -> Result<LoadedStores> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Usage(format!("cannot open stores file {}: {e}", path.display())))?;
    read_stores(file, path, config)
}

/// Parses store rows from any reader; `path` is used only in diagnostics.
pub fn read_stores<R: std::io::Read>(reader: R, path: &Path, config: &RunConfig) -> Result<LoadedStores> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Data(format!("{}: unreadable header: {e}", path.display())))?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let mut idx = [0usize; 7];
    for (slot, name) in idx.iter_mut().zip(COLUMNS) {
        *slot = find(name)
            .ok_or_else(|| CliError::Data(format!("{}: header is missing column {name:?}", path.display())))?;
    }
    let region_idx = match &config.region_filter {
        Some(_) => Some(find("region").ok_or_else(|| {
            CliError::Data(format!(
                "{}: region_filter is set but the header has no \"region\" column",
                path.display()
            ))
        })?),
        None => None,
    };

    let analysed = config.analysed_formats();
    let mut stores = Vec::new();
    let mut first_seen: BTreeMap<String, usize> = BTreeMap::new();
    let (mut rows_read, mut dropped_by_format, mut dropped_by_region) = (0, 0, 0);

    for (k, record) in rdr.records().enumerate() {
        let row = k + 1;
        rows_read += 1;
        let fail = |column: &str, message: String| CliError::Row {
            path: path.to_path_buf(),
            row,
            column: column.to_string(),
            message,
        };
        let record = record.map_err(|e| fail("*", e.to_string()))?;
        let field = |i: usize| record.get(i).unwrap_or("");

        if let (Some(i), Some(want)) = (region_idx, &config.region_filter) {
            if field(i) != want {
                dropped_by_region += 1;
                continue;
            }
        }
        let format: Format = field(idx[3]).parse().map_err(|e: mktsens_core::Error| fail("format", e.to_string()))?;
        if config.drop_formats.contains(&format) {
            dropped_by_format += 1;
            continue;
        }
        if !analysed.contains(&format) {
            return Err(fail(
                "format",
                format!("format {format:?} is not listed as always-in, marginal or dropped"),
            ));
        }

        let text = |i: usize, column: &str| -> Result<String> {
            let v = field(idx[i]);
            if v.is_empty() && i != 2 {
                return Err(fail(column, "empty value".into()));
            }
            Ok(v.to_string())
        };
        let number = |i: usize, column: &str, lo: f64, hi: f64| -> Result<f64> {
            let raw = field(idx[i]);
            let x: f64 = raw
                .parse()
                .map_err(|_| fail(column, format!("{raw:?} is not a number")))?;
            if !(x.is_finite() && (lo..=hi).contains(&x)) {
                return Err(fail(column, format!("{raw} is outside [{lo}, {hi}]")));
            }
            Ok(x)
        };
        let store = Store {
            store_id: text(0, "store_id")?,
            chain_id: text(1, "chain_id")?,
            chain_name: text(2, "chain_name")?,
            format,
            latitude: number(4, "latitude", -90.0, 90.0)?,
            longitude: number(5, "longitude", -180.0, 180.0)?,
            revenue: number(6, "revenue", 0.0, f64::MAX)?,
        };
        if let Some(prev) = first_seen.insert(store.store_id.clone(), row) {
            return Err(fail(
                "store_id",
                format!("duplicate store_id {:?} (first seen at row {prev})", store.store_id),
            ));
        }
        stores.push(store);
    }

    let universe = StoreUniverse::new(stores, config.centers())?;
    Ok(LoadedStores {
        universe,
        rows_read,
        dropped_by_format,
        dropped_by_region,
    })
}
