//! Urban building-height mapping: lidar footprints to gridded heights via a
//! multitemporal feature stack and per-subregion random forests.

// `!(x >= lo)` rejects NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod geo_grid;
pub mod gedi_sampler;
pub mod feature_engine;
pub mod rf_regressor;
pub mod subregion_mapper;
pub mod validator;
pub mod pipeline;
