use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Footprint, HeightSample};
use crate::geo_grid::GeoPoint;

#[derive(Debug, Error)]
pub enum SampleIoError {
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: record {record}: {message}")]
    Record {
        path: PathBuf,
        record: usize,
        message: String,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct FootprintRecord {
    lon: f64,
    lat: f64,
    rh85: Option<f64>,
    rh95: Option<f64>,
    quality_flag: u8,
    degrade_flag: u32,
    sensitivity: f64,
    date: NaiveDate,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRecord {
    row: usize,
    col: usize,
    mean_height: f64,
    count: usize,
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> SampleIoError + '_ {
    move |source| SampleIoError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_footprints(path: impl AsRef<Path>) -> Result<Vec<Footprint>, SampleIoError> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut out = Vec::new();
    for (i, rec) in reader.deserialize::<FootprintRecord>().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let bad = |message: String| SampleIoError::Record {
            path: path.to_path_buf(),
            record: i + 1,
            message,
        };
        let point = GeoPoint::new(rec.lon, rec.lat).map_err(|e| bad(e.to_string()))?;
        let fp = Footprint {
            point,
            rh85: rec.rh85,
            rh95: rec.rh95,
            quality_flag: rec.quality_flag,
            degrade_flag: rec.degrade_flag,
            sensitivity: rec.sensitivity,
            acquired: rec.date,
        };
        fp.validate().map_err(|e| bad(e.to_string()))?;
        out.push(fp);
    }
    Ok(out)
}

pub fn write_footprints(path: impl AsRef<Path>, fps: &[Footprint]) -> Result<(), SampleIoError> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for fp in fps {
        w.serialize(FootprintRecord {
            lon: fp.point.lon(),
            lat: fp.point.lat(),
            rh85: fp.rh85,
            rh95: fp.rh95,
            quality_flag: fp.quality_flag,
            degrade_flag: fp.degrade_flag,
            sensitivity: fp.sensitivity,
            date: fp.acquired,
        })
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| csv_err(path)(e.into()))
}

pub fn read_samples(path: impl AsRef<Path>) -> Result<Vec<HeightSample>, SampleIoError> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(csv_err(path))?;
    reader
        .deserialize::<SampleRecord>()
        .map(|r| {
            r.map(|r| HeightSample {
                row: r.row,
                col: r.col,
                mean_height: r.mean_height,
                count: r.count,
            })
            .map_err(csv_err(path))
        })
        .collect()
}

pub fn write_samples(path: impl AsRef<Path>, samples: &[HeightSample]) -> Result<(), SampleIoError> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for s in samples {
        w.serialize(SampleRecord {
            row: s.row,
            col: s.col,
            mean_height: s.mean_height,
            count: s.count,
        })
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| csv_err(path)(e.into()))
}
