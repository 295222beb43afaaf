use super::scene::{BandRole, Scene};
use super::FeatureError;
use crate::geo_grid::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SpectralIndex {
    Ndvi,
    Ndbi,
    Mndwi,
    /// SWIR1 minus red (band 6 minus band 4 on the 30 m sensor).
    Dvi64,
    /// SWIR1 over red.
    Rvi64,
}

impl SpectralIndex {
    pub const ALL: [SpectralIndex; 5] = [
        SpectralIndex::Ndvi,
        SpectralIndex::Ndbi,
        SpectralIndex::Mndwi,
        SpectralIndex::Dvi64,
        SpectralIndex::Rvi64,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SpectralIndex::Ndvi => "ndvi",
            SpectralIndex::Ndbi => "ndbi",
            SpectralIndex::Mndwi => "mndwi",
            SpectralIndex::Dvi64 => "dvi64",
            SpectralIndex::Rvi64 => "rvi64",
        }
    }

    /// Evaluates the index for one pixel; `None` on a zero denominator.
    pub fn evaluate(self, green: f64, red: f64, nir: f64, swir1: f64) -> Option<f64> {
        let ratio = |num: f64, den: f64| (den != 0.0).then(|| num / den);
        match self {
            SpectralIndex::Ndvi => ratio(nir - red, nir + red),
            SpectralIndex::Ndbi => ratio(swir1 - nir, swir1 + nir),
            SpectralIndex::Mndwi => ratio(green - swir1, green + swir1),
            SpectralIndex::Dvi64 => Some(swir1 - red),
            SpectralIndex::Rvi64 => ratio(swir1, red),
        }
        .filter(|v| v.is_finite())
    }
}

/// Per-pixel spectral index of an optical scene. Masked pixels, nodata
/// inputs and zero denominators give nodata.
pub fn spectral_index(scene: &Scene, index: SpectralIndex) -> Result<Raster, FeatureError> {
    if !scene.sensor().is_optical() {
        return Err(FeatureError::NotOptical(scene.sensor()));
    }
    let spec = *scene.spec();
    let nodata = scene.band(BandRole::Red).map(|r| r.nodata()).unwrap_or(crate::geo_grid::DEFAULT_NODATA);
    let values = (0..spec.len())
        .map(|i| {
            let get = |role| scene.value(role, i);
            let v = match index {
                SpectralIndex::Ndvi => get(BandRole::Nir)
                    .zip(get(BandRole::Red))
                    .and_then(|(nir, red)| index.evaluate(0.0, red, nir, 0.0)),
                SpectralIndex::Ndbi => get(BandRole::Swir1)
                    .zip(get(BandRole::Nir))
                    .and_then(|(swir1, nir)| index.evaluate(0.0, 0.0, nir, swir1)),
                SpectralIndex::Mndwi => get(BandRole::Green)
                    .zip(get(BandRole::Swir1))
                    .and_then(|(green, swir1)| index.evaluate(green, 0.0, 0.0, swir1)),
                SpectralIndex::Dvi64 | SpectralIndex::Rvi64 => get(BandRole::Swir1)
                    .zip(get(BandRole::Red))
                    .and_then(|(swir1, red)| index.evaluate(0.0, red, 0.0, swir1)),
            };
            v.unwrap_or(nodata)
        })
        .collect();
    Ok(Raster::new(spec, values, nodata)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_engine::scene::tests::{optical, radar};
    use crate::feature_engine::scene::Sensor;
    use crate::geo_grid::GridSpec;
    use proptest::prelude::*;

    fn spec() -> GridSpec {
        GridSpec::new(0.0, 0.0, 30.0, 1, 1).unwrap()
    }

    #[test]
    fn ndvi_examples() {
        // blue, green, red, nir, swir1
        let s = optical(Sensor::OpticalL, spec(), 0.0, [0.05, 0.1, 0.2, 0.6, 0.3]);
        let v = spectral_index(&s, SpectralIndex::Ndvi).unwrap().get(0, 0);
        assert!((v - 0.5).abs() < 1e-15);
        let s = optical(Sensor::OpticalL, spec(), 0.0, [0.05, 0.1, 0.3, 0.3, 0.3]);
        assert_eq!(spectral_index(&s, SpectralIndex::Ndvi).unwrap().get(0, 0), 0.0);
        let s = optical(Sensor::OpticalL, spec(), 0.0, [0.05, 0.1, 0.0, 0.0, 0.3]);
        let r = spectral_index(&s, SpectralIndex::Ndvi).unwrap();
        assert_eq!(r.valid(0, 0), None);
    }

    #[test]
    fn other_indices() {
        let s = optical(Sensor::OpticalS, spec(), 0.0, [0.05, 0.1, 0.2, 0.4, 0.3]);
        let at = |i| spectral_index(&s, i).unwrap().get(0, 0);
        assert!((at(SpectralIndex::Ndbi) - (-0.1 / 0.7)).abs() < 1e-15);
        assert!((at(SpectralIndex::Mndwi) - (-0.2 / 0.4)).abs() < 1e-15);
        assert!((at(SpectralIndex::Dvi64) - 0.1).abs() < 1e-15);
        assert!((at(SpectralIndex::Rvi64) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn radar_is_rejected() {
        let s = radar(spec(), -10.0, -15.0);
        assert!(matches!(
            spectral_index(&s, SpectralIndex::Ndvi),
            Err(FeatureError::NotOptical(Sensor::Radar))
        ));
    }

    proptest! {
        #[test]
        fn normalized_differences_are_bounded(
            green in 0.0f64..1.0, red in 0.0f64..1.0, nir in 0.0f64..1.0, swir1 in 0.0f64..1.0
        ) {
            for idx in [SpectralIndex::Ndvi, SpectralIndex::Ndbi, SpectralIndex::Mndwi] {
                if let Some(v) = idx.evaluate(green, red, nir, swir1) {
                    prop_assert!((-1.0..=1.0).contains(&v));
                }
            }
        }
    }
}
