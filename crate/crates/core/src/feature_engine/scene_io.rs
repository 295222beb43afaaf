//! Scene manifests: one CSV row per acquisition pointing at ASCII grids.
//!
//! Columns: `sensor,date,cloud_fraction,blue,green,red,nir,swir1,vv,vh,mask`.
//! Paths are relative to the manifest's directory; unused bands, the
//! radar cloud fraction and an absent mask are left empty.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{BandRole, FeatureError, Scene, Sensor};
use crate::geo_grid::{read_ascii_grid, write_ascii_grid};

#[derive(Debug, Default, Serialize, Deserialize)]
struct SceneRecord {
    sensor: String,
    date: NaiveDate,
    cloud_fraction: Option<f64>,
    blue: Option<String>,
    green: Option<String>,
    red: Option<String>,
    nir: Option<String>,
    swir1: Option<String>,
    vv: Option<String>,
    vh: Option<String>,
    mask: Option<String>,
}

impl SceneRecord {
    fn slot(&mut self, role: BandRole) -> &mut Option<String> {
        match role {
            BandRole::Blue => &mut self.blue,
            BandRole::Green => &mut self.green,
            BandRole::Red => &mut self.red,
            BandRole::Nir => &mut self.nir,
            BandRole::Swir1 => &mut self.swir1,
            BandRole::Vv => &mut self.vv,
            BandRole::Vh => &mut self.vh,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> FeatureError {
    FeatureError::Io(format!("{}: {e}", path.display()))
}

fn base_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn read_scene_manifest(path: impl AsRef<Path>) -> Result<Vec<Scene>, FeatureError> {
    let path = path.as_ref();
    let dir = base_dir(path);
    let mut reader = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let mut scenes = Vec::new();
    for (i, rec) in reader.deserialize::<SceneRecord>().enumerate() {
        let mut rec = rec.map_err(|e| io_err(path, e))?;
        let sensor = Sensor::parse(rec.sensor.trim())
            .ok_or_else(|| FeatureError::InvalidScene(format!("{}: row {}: unknown sensor {:?}", path.display(), i + 1, rec.sensor)))?;
        let mut bands = BTreeMap::new();
        for role in BandRole::ALL {
            if let Some(rel) = rec.slot(role).take().filter(|s| !s.trim().is_empty()) {
                let band = read_ascii_grid(dir.join(rel.trim())).map_err(|e| FeatureError::Io(e.to_string()))?;
                bands.insert(role, band);
            }
        }
        let mask = match rec.mask.as_deref().map(str::trim).filter(|s| !s.is_empty()) {
            Some(rel) => Some(read_ascii_grid(dir.join(rel)).map_err(|e| FeatureError::Io(e.to_string()))?),
            None => None,
        };
        scenes.push(Scene::new(sensor, bands, rec.cloud_fraction, mask, rec.date)?);
    }
    Ok(scenes)
}

/// Writes each scene's grids under `<manifest dir>/scenes/` and the
/// manifest itself. File names are `<sensor tag>_<index>_<band>.asc`.
pub fn write_scene_manifest(path: impl AsRef<Path>, scenes: &[Scene]) -> Result<(), FeatureError> {
    let path = path.as_ref();
    let dir = base_dir(path);
    let sub = dir.join("scenes");
    std::fs::create_dir_all(&sub).map_err(|e| io_err(&sub, e))?;
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for (i, s) in scenes.iter().enumerate() {
        let stem = format!("{}_{i:03}", s.sensor().tag());
        let mut rec = SceneRecord {
            sensor: s.sensor().to_string(),
            date: s.acquired(),
            cloud_fraction: s.cloud_fraction(),
            ..Default::default()
        };
        for (role, band) in s.bands() {
            let rel = format!("scenes/{stem}_{}.asc", role.name());
            write_ascii_grid(band, dir.join(&rel)).map_err(|e| FeatureError::Io(e.to_string()))?;
            *rec.slot(*role) = Some(rel);
        }
        if let Some(mask) = s.pixel_mask() {
            let rel = format!("scenes/{stem}_mask.asc");
            write_ascii_grid(mask, dir.join(&rel)).map_err(|e| FeatureError::Io(e.to_string()))?;
            rec.mask = Some(rel);
        }
        w.serialize(rec).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_engine::scene::tests::{optical, radar};
    use crate::geo_grid::{GridSpec, Raster, DEFAULT_NODATA};

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GridSpec::new(0.0, 20.0, 10.0, 2, 2).unwrap();
        let mut l = optical(Sensor::OpticalL, spec, 0.1, [0.05, 0.07, 0.1, 0.3, 0.2]);
        let mask = Raster::new(spec, vec![1.0, 0.0, 1.0, 1.0], DEFAULT_NODATA).unwrap();
        l = Scene::new(l.sensor(), l.bands().clone(), l.cloud_fraction(), Some(mask), l.acquired()).unwrap();
        let r = radar(spec, -12.0, -18.5);
        let path = dir.path().join("scenes.csv");
        write_scene_manifest(&path, &[l.clone(), r.clone()]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("sensor,date,cloud_fraction,blue,green,red,nir,swir1,vv,vh,mask\n"));
        assert_eq!(read_scene_manifest(&path).unwrap(), vec![l, r]);
    }

    #[test]
    fn bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenes.csv");
        std::fs::write(&path, "sensor,date,cloud_fraction,blue,green,red,nir,swir1,vv,vh,mask\nlidar,2020-01-01,,,,,,,,,\n").unwrap();
        assert!(matches!(read_scene_manifest(&path), Err(FeatureError::InvalidScene(_))));
        std::fs::write(&path, "sensor,date,cloud_fraction,blue,green,red,nir,swir1,vv,vh,mask\nradar,2020-01-01,,,,,,,,,\n").unwrap();
        assert!(matches!(read_scene_manifest(&path), Err(FeatureError::InvalidScene(_))));
    }
}
