use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{SubregionError, SubregionPartition, ZoneLabel};
use crate::geo_grid::{read_ascii_grid, write_ascii_grid, AsciiGridError};

#[derive(Debug, Error)]
pub enum PartitionIoError {
    #[error(transparent)]
    Grid(#[from] AsciiGridError),
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {message}")]
    Labels { path: PathBuf, message: String },
    #[error(transparent)]
    Partition(#[from] SubregionError),
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRecord {
    zone_id: u32,
    admin: String,
    climate: String,
    #[serde(deserialize_with = "flag")]
    is_northern: bool,
}

fn flag<'de, D: serde::Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
    let s = String::deserialize(d)?;
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        other => Err(serde::de::Error::custom(format!("is_northern must be true/false or 1/0, got {other:?}"))),
    }
}

/// Reads the zone-id grid and its `zone_id,admin,climate,is_northern` table.
pub fn read_partition(grid: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<SubregionPartition, PartitionIoError> {
    let zones = read_ascii_grid(grid)?;
    let path = labels.as_ref();
    let csv_err = |source| PartitionIoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut map = BTreeMap::new();
    let mut northern = BTreeSet::new();
    for rec in reader.deserialize::<LabelRecord>() {
        let rec = rec.map_err(csv_err)?;
        if rec.is_northern {
            northern.insert(rec.zone_id);
        }
        let label = ZoneLabel {
            admin: rec.admin,
            climate: rec.climate,
        };
        if map.insert(rec.zone_id, label).is_some() {
            return Err(PartitionIoError::Labels {
                path: path.to_path_buf(),
                message: format!("zone {} listed twice", rec.zone_id),
            });
        }
    }
    Ok(SubregionPartition::new(zones, map, northern)?)
}

pub fn write_partition(
    part: &SubregionPartition,
    grid: impl AsRef<Path>,
    labels: impl AsRef<Path>,
) -> Result<(), PartitionIoError> {
    write_ascii_grid(part.zones(), grid)?;
    let path = labels.as_ref();
    let csv_err = |source| PartitionIoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for (id, label) in part.labels() {
        w.serialize(LabelRecord {
            zone_id: *id,
            admin: label.admin.clone(),
            climate: label.climate.clone(),
            is_northern: part.northern_ids().contains(id),
        })
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| csv_err(e.into()))
}

#[cfg(test)]
mod tests {
    use super::super::tests::labels;
    use super::*;
    use crate::geo_grid::{GridSpec, Raster, DEFAULT_NODATA};

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GridSpec::new(0.0, 300.0, 150.0, 2, 2).unwrap();
        let zones = Raster::new(spec, vec![1.0, 2.0, DEFAULT_NODATA, 2.0], DEFAULT_NODATA).unwrap();
        let part = SubregionPartition::new(zones, labels(&[1, 2]), BTreeSet::from([2])).unwrap();
        let (g, l) = (dir.path().join("zones.asc"), dir.path().join("zones.csv"));
        write_partition(&part, &g, &l).unwrap();
        assert_eq!(
            std::fs::read_to_string(&l).unwrap(),
            "zone_id,admin,climate,is_northern\n1,admin1,Cfb,false\n2,admin2,Cfb,true\n"
        );
        assert_eq!(read_partition(&g, &l).unwrap(), part);

        std::fs::write(&l, "zone_id,admin,climate,is_northern\n1,a,Cfb,0\n2,b,Dfc,1\n").unwrap();
        assert_eq!(read_partition(&g, &l).unwrap().northern_ids(), &BTreeSet::from([2]));
        std::fs::write(&l, "zone_id,admin,climate,is_northern\n1,a,Cfb,0\n1,b,Dfc,1\n").unwrap();
        assert!(matches!(read_partition(&g, &l), Err(PartitionIoError::Labels { .. })));
        std::fs::write(&l, "zone_id,admin,climate,is_northern\n1,a,Cfb,0\n").unwrap();
        assert!(matches!(read_partition(&g, &l), Err(PartitionIoError::Partition(_))));
    }
}
