//! The ordered 323-band explanatory stack: spectral indices and radar
//! backscatter summarized over time, GLCM textures of every summary band,
//! and terrain.

mod glcm;
mod indices;
mod scene;
mod scene_io;
mod stack;
mod temporal;
mod terrain;

pub use glcm::{glcm_features, quantize, Direction, GlcmFeatures, GlcmParams, DEFAULT_LEVELS};
pub use indices::{spectral_index, SpectralIndex};
pub use scene::{scene_filter, scene_filter_with, BandRole, CloudLimits, Scene, Sensor};
pub use scene_io::{read_scene_manifest, write_scene_manifest};
pub use stack::{
    assemble_feature_stack, canonical_band_names, index_stat_bands, FeatureStack, StackParams,
    FEATURE_COUNT, MANIFEST_FILE, OPTICAL_BANDS_PER_SENSOR, RADAR_BANDS, TERRAIN_BANDS,
};
pub use temporal::{temporal_stats, temporal_stats_rasters, Stat, OPTICAL_STATS, RADAR_STATS};
pub use terrain::{terrain_features, TerrainFeatures};

use thiserror::Error;

use crate::geo_grid::GridError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("spectral indices need an optical scene, got {0}")]
    NotOptical(Sensor),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid feature stack: {0}")]
    InvalidStack(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("{0}")]
    Empty(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}
