use std::collections::BTreeMap;
use std::fmt;

use chrono::NaiveDate;

use super::FeatureError;
use crate::geo_grid::{GridSpec, Raster};

/// Acquisition source of a scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sensor {
    /// 30 m optical (Landsat-8 class).
    OpticalL,
    /// 10 m optical (Sentinel-2 class).
    OpticalS,
    /// C-band SAR with VV/VH polarizations.
    Radar,
}

impl Sensor {
    pub fn is_optical(self) -> bool {
        !matches!(self, Sensor::Radar)
    }

    /// Prefix used in band names.
    pub fn tag(self) -> &'static str {
        match self {
            Sensor::OpticalL => "L",
            Sensor::OpticalS => "S",
            Sensor::Radar => "R",
        }
    }

    pub fn parse(s: &str) -> Option<Sensor> {
        match s {
            "optical_L" | "L" => Some(Sensor::OpticalL),
            "optical_S" | "S" => Some(Sensor::OpticalS),
            "radar" | "R" => Some(Sensor::Radar),
            _ => None,
        }
    }

    pub fn required_bands(self) -> &'static [BandRole] {
        match self {
            Sensor::OpticalL | Sensor::OpticalS => &[
                BandRole::Blue,
                BandRole::Green,
                BandRole::Red,
                BandRole::Nir,
                BandRole::Swir1,
            ],
            Sensor::Radar => &[BandRole::Vv, BandRole::Vh],
        }
    }
}

impl fmt::Display for Sensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sensor::OpticalL => "optical_L",
            Sensor::OpticalS => "optical_S",
            Sensor::Radar => "radar",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BandRole {
    Blue,
    Green,
    Red,
    Nir,
    Swir1,
    Vv,
    Vh,
}

impl BandRole {
    pub const ALL: [BandRole; 7] = [
        BandRole::Blue,
        BandRole::Green,
        BandRole::Red,
        BandRole::Nir,
        BandRole::Swir1,
        BandRole::Vv,
        BandRole::Vh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BandRole::Blue => "blue",
            BandRole::Green => "green",
            BandRole::Red => "red",
            BandRole::Nir => "nir",
            BandRole::Swir1 => "swir1",
            BandRole::Vv => "vv",
            BandRole::Vh => "vh",
        }
    }
}

/// One acquisition: co-registered bands plus its cloud/shadow mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    sensor: Sensor,
    bands: BTreeMap<BandRole, Raster>,
    cloud_fraction: Option<f64>,
    pixel_mask: Option<Raster>,
    acquired: NaiveDate,
}

impl Scene {
    /// `pixel_mask` marks valid pixels with 1; any other value (or nodata)
    /// masks the pixel. `None` means every pixel is valid.
    pub fn new(
        sensor: Sensor,
        bands: BTreeMap<BandRole, Raster>,
        cloud_fraction: Option<f64>,
        pixel_mask: Option<Raster>,
        acquired: NaiveDate,
    ) -> Result<Self, FeatureError> {
        for role in sensor.required_bands() {
            if !bands.contains_key(role) {
                return Err(FeatureError::InvalidScene(format!(
                    "{sensor} scene of {acquired} lacks band {}",
                    role.name()
                )));
            }
        }
        let mut specs = bands.values().map(|r| r.spec());
        let spec = *specs.next().expect("at least one required band");
        if specs.any(|s| *s != spec) {
            return Err(FeatureError::GridMismatch(format!(
                "bands of {sensor} scene {acquired} are on different grids"
            )));
        }
        if let Some(mask) = &pixel_mask {
            if *mask.spec() != spec {
                return Err(FeatureError::GridMismatch(format!(
                    "mask of {sensor} scene {acquired} is on a different grid"
                )));
            }
        }
        match (sensor.is_optical(), cloud_fraction) {
            (true, Some(f)) if (0.0..=1.0).contains(&f) => {}
            (true, Some(f)) => {
                return Err(FeatureError::InvalidScene(format!("cloud fraction {f} outside [0, 1]")))
            }
            (true, None) => {
                return Err(FeatureError::InvalidScene(format!(
                    "optical scene {acquired} needs a cloud fraction"
                )))
            }
            (false, Some(_)) => {
                return Err(FeatureError::InvalidScene(format!(
                    "radar scene {acquired} cannot carry a cloud fraction"
                )))
            }
            (false, None) => {}
        }
        Ok(Self {
            sensor,
            bands,
            cloud_fraction,
            pixel_mask,
            acquired,
        })
    }

    pub fn sensor(&self) -> Sensor {
        self.sensor
    }

    pub fn spec(&self) -> &GridSpec {
        self.bands.values().next().expect("validated").spec()
    }

    pub fn band(&self, role: BandRole) -> Option<&Raster> {
        self.bands.get(&role)
    }

    pub fn bands(&self) -> &BTreeMap<BandRole, Raster> {
        &self.bands
    }

    pub fn cloud_fraction(&self) -> Option<f64> {
        self.cloud_fraction
    }

    pub fn pixel_mask(&self) -> Option<&Raster> {
        self.pixel_mask.as_ref()
    }

    pub fn acquired(&self) -> NaiveDate {
        self.acquired
    }

    pub fn is_pixel_valid(&self, index: usize) -> bool {
        self.pixel_mask
            .as_ref()
            .is_none_or(|m| m.valid_at(index) == Some(1.0))
    }

    /// Band value at `index` when the pixel is unmasked and valid.
    pub fn value(&self, role: BandRole, index: usize) -> Option<f64> {
        if !self.is_pixel_valid(index) {
            return None;
        }
        self.bands.get(&role)?.valid_at(index)
    }
}

/// Maximum scene cloud fraction per optical sensor (exclusive).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudLimits {
    pub optical_l: f64,
    pub optical_s: f64,
}

impl Default for CloudLimits {
    fn default() -> Self {
        Self {
            optical_l: 0.30,
            optical_s: 0.20,
        }
    }
}

/// Keeps optical scenes below their sensor's cloud limit and every radar scene.
pub fn scene_filter(scenes: Vec<Scene>) -> Vec<Scene> {
    scene_filter_with(scenes, CloudLimits::default())
}

pub fn scene_filter_with(scenes: Vec<Scene>, limits: CloudLimits) -> Vec<Scene> {
    scenes
        .into_iter()
        .filter(|s| match (s.sensor, s.cloud_fraction) {
            (Sensor::Radar, _) => true,
            (Sensor::OpticalL, Some(f)) => f < limits.optical_l,
            (Sensor::OpticalS, Some(f)) => f < limits.optical_s,
            (_, None) => false,
        })
        .collect()
}
