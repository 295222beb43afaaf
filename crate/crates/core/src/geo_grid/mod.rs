//! Equal-area grid definition, the single-band raster container, and the
//! ASCII grid format every other stage reads and writes.

mod ascii;
mod projection;

pub use ascii::{read_ascii_grid, write_ascii_grid, AsciiGridError};
pub(crate) use ascii::fmt_f64;
pub use projection::{mollweide_forward, mollweide_inverse, solve_theta};

use thiserror::Error;

/// World Mollweide sphere radius (WGS84 semi-major axis).
pub const DEFAULT_SPHERE_RADIUS: f64 = 6_378_137.0;

/// Nodata sentinel used when none is given.
pub const DEFAULT_NODATA: f64 = -9999.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    InvalidSpec(String),
    #[error("coordinate out of range: lon {lon}, lat {lat}")]
    InvalidPoint { lon: f64, lat: f64 },
    #[error("projected point ({x}, {y}) lies outside the Mollweide ellipse")]
    OutsideEllipse { x: f64, y: f64 },
    #[error("incompatible grids")]
    IncompatibleGrids,
    #[error("value plane has {found} cells, grid needs {expected}")]
    ValueCount { expected: usize, found: usize },
    #[error("auxiliary angle did not converge for latitude {0} rad")]
    NoConvergence(f64),
}

/// Geographic position in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    lon: f64,
    lat: f64,
}

impl GeoPoint {
    pub fn new(lon: f64, lat: f64) -> Result<Self, GridError> {
        if !(-180.0..=180.0).contains(&lon) || !(-90.0..=90.0).contains(&lat) {
            return Err(GridError::InvalidPoint { lon, lat });
        }
        Ok(Self { lon, lat })
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }
}

/// An upper-left anchored, square-celled grid in projected meters.
///
/// Cells are half-open: a point on the right or bottom edge of a cell
/// belongs to the neighbouring cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub origin_x: f64,
    pub origin_y: f64,
    pub cell_size: f64,
    pub n_rows: usize,
    pub n_cols: usize,
    pub sphere_radius: f64,
}

impl GridSpec {
    pub fn new(
        origin_x: f64,
        origin_y: f64,
        cell_size: f64,
        n_rows: usize,
        n_cols: usize,
    ) -> Result<Self, GridError> {
        Self::with_radius(origin_x, origin_y, cell_size, n_rows, n_cols, DEFAULT_SPHERE_RADIUS)
    }

    pub fn with_radius(
        origin_x: f64,
        origin_y: f64,
        cell_size: f64,
        n_rows: usize,
        n_cols: usize,
        sphere_radius: f64,
    ) -> Result<Self, GridError> {
        let spec = Self {
            origin_x,
            origin_y,
            cell_size,
            n_rows,
            n_cols,
            sphere_radius,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(GridError::InvalidSpec(format!(
                "cell size must be positive, got {}",
                self.cell_size
            )));
        }
        if self.n_rows == 0 || self.n_cols == 0 {
            return Err(GridError::InvalidSpec(format!(
                "grid must have at least one row and column, got {}x{}",
                self.n_rows, self.n_cols
            )));
        }
        if !(self.origin_x.is_finite() && self.origin_y.is_finite()) {
            return Err(GridError::InvalidSpec("origin must be finite".into()));
        }
        if !(self.sphere_radius > 0.0 && self.sphere_radius.is_finite()) {
            return Err(GridError::InvalidSpec(format!(
                "sphere radius must be positive, got {}",
                self.sphere_radius
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_compatible(&self, other: &GridSpec) -> bool {
        self == other
    }

    pub fn ensure_compatible(&self, other: &GridSpec) -> Result<(), GridError> {
        if self.is_compatible(other) {
            Ok(())
        } else {
            Err(GridError::IncompatibleGrids)
        }
    }

    /// Row/column of the cell containing `(x, y)`, or `None` outside the grid.
    pub fn cell_of_point(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let row = ((self.origin_y - y) / self.cell_size).floor();
        let col = ((x - self.origin_x) / self.cell_size).floor();
        if !(row >= 0.0 && col >= 0.0) {
            return None;
        }
        let (row, col) = (row as usize, col as usize);
        (row < self.n_rows && col < self.n_cols).then_some((row, col))
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.cell_size,
            self.origin_y - (row as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.n_cols + col
    }

    pub fn row_col(&self, index: usize) -> (usize, usize) {
        (index / self.n_cols, index % self.n_cols)
    }

    pub fn x_lower_left(&self) -> f64 {
        self.origin_x
    }

    pub fn y_lower_left(&self) -> f64 {
        self.origin_y - self.n_rows as f64 * self.cell_size
    }
}

/// Free-function form of [`GridSpec::cell_of_point`].
pub fn cell_of_point(x: f64, y: f64, spec: &GridSpec) -> Option<(usize, usize)> {
    spec.cell_of_point(x, y)
}

/// A single-band, row-major value plane on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    spec: GridSpec,
    values: Vec<f64>,
    nodata: f64,
}

impl Raster {
    pub fn new(spec: GridSpec, values: Vec<f64>, nodata: f64) -> Result<Self, GridError> {
        spec.validate()?;
        if values.len() != spec.len() {
            return Err(GridError::ValueCount {
                expected: spec.len(),
                found: values.len(),
            });
        }
        Ok(Self { spec, values, nodata })
    }

    pub fn filled(spec: GridSpec, value: f64, nodata: f64) -> Self {
        Self {
            spec,
            values: vec![value; spec.len()],
            nodata,
        }
    }

    pub fn nodata_like(spec: GridSpec, nodata: f64) -> Self {
        Self::filled(spec, nodata, nodata)
    }

    pub fn from_fn(spec: GridSpec, nodata: f64, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(spec.len());
        for row in 0..spec.n_rows {
            for col in 0..spec.n_cols {
                values.push(f(row, col));
            }
        }
        Self { spec, values, nodata }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn nodata(&self) -> f64 {
        self.nodata
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[self.spec.index(row, col)]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        let i = self.spec.index(row, col);
        self.values[i] = value;
    }

    /// `true` for finite values that differ from the nodata sentinel.
    pub fn is_valid_value(&self, v: f64) -> bool {
        v.is_finite() && v != self.nodata
    }

    /// The cell value, or `None` where it is nodata or non-finite.
    pub fn valid(&self, row: usize, col: usize) -> Option<f64> {
        let v = self.get(row, col);
        self.is_valid_value(v).then_some(v)
    }

    pub fn valid_at(&self, index: usize) -> Option<f64> {
        let v = self.values[index];
        self.is_valid_value(v).then_some(v)
    }

    pub fn count_valid(&self) -> usize {
        self.values.iter().filter(|v| self.is_valid_value(**v)).count()
    }

    /// Applies `f` to valid cells; nodata stays nodata, and a non-finite
    /// result becomes nodata.
    pub fn map_valid(&self, f: impl Fn(f64) -> f64) -> Raster {
        let values = self
            .values
            .iter()
            .map(|&v| {
                if self.is_valid_value(v) {
                    let out = f(v);
                    if out.is_finite() {
                        out
                    } else {
                        self.nodata
                    }
                } else {
                    self.nodata
                }
            })
            .collect();
        Raster {
            spec: self.spec,
            values,
            nodata: self.nodata,
        }
    }

    /// Cell-wise combination of two rasters on the same grid. Cells where
    /// either input is nodata, or `f` yields `None`, become nodata.
    pub fn zip_with(
        &self,
        other: &Raster,
        f: impl Fn(f64, f64) -> Option<f64>,
    ) -> Result<Raster, GridError> {
        self.spec.ensure_compatible(&other.spec)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| {
                if self.is_valid_value(a) && other.is_valid_value(b) {
                    f(a, b).filter(|v| v.is_finite()).unwrap_or(self.nodata)
                } else {
                    self.nodata
                }
            })
            .collect();
        Ok(Raster {
            spec: self.spec,
            values,
            nodata: self.nodata,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec150() -> GridSpec {
        GridSpec::new(0.0, 0.0, 150.0, 4, 4).unwrap()
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(GridSpec::new(0.0, 0.0, 0.0, 1, 1).is_err());
        assert!(GridSpec::new(0.0, 0.0, -1.0, 1, 1).is_err());
        assert!(GridSpec::new(0.0, 0.0, 1.0, 0, 1).is_err());
        assert!(GridSpec::new(0.0, 0.0, 1.0, 1, 0).is_err());
    }

    #[test]
    fn geopoint_bounds() {
        assert!(GeoPoint::new(180.0, -90.0).is_ok());
        assert!(GeoPoint::new(180.1, 0.0).is_err());
        assert!(GeoPoint::new(0.0, 90.5).is_err());
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn cell_of_point_origin_and_floor() {
        let s = spec150();
        assert_eq!(s.cell_of_point(0.0, 0.0), Some((0, 0)));
        assert_eq!(s.cell_of_point(151.0, -1.0), Some((0, 1)));
        assert_eq!(s.cell_of_point(-0.001, -1.0), None);
        assert_eq!(s.cell_of_point(1.0, 0.001), None);
    }

    #[test]
    fn cell_edges_are_half_open() {
        let s = spec150();
        // right edge of cell (0,0) is the left edge of (0,1)
        assert_eq!(s.cell_of_point(150.0, -10.0), Some((0, 1)));
        // bottom edge of row 0 belongs to row 1
        assert_eq!(s.cell_of_point(10.0, -150.0), Some((1, 0)));
        // the far right/bottom edges of the grid are outside
        assert_eq!(s.cell_of_point(600.0, -10.0), None);
        assert_eq!(s.cell_of_point(10.0, -600.0), None);
    }

    #[test]
    fn raster_value_count_checked() {
        let s = spec150();
        assert!(matches!(
            Raster::new(s, vec![0.0; 15], DEFAULT_NODATA),
            Err(GridError::ValueCount { expected: 16, found: 15 })
        ));
    }

    #[test]
    fn zip_requires_compatible_grids() {
        let a = Raster::filled(spec150(), 1.0, DEFAULT_NODATA);
        let other = GridSpec::new(1.0, 0.0, 150.0, 4, 4).unwrap();
        let b = Raster::filled(other, 1.0, DEFAULT_NODATA);
        assert_eq!(a.zip_with(&b, |x, y| Some(x + y)), Err(GridError::IncompatibleGrids));
    }

    #[test]
    fn nodata_and_nan_are_invalid() {
        let mut r = Raster::filled(spec150(), 2.0, DEFAULT_NODATA);
        r.set(0, 0, DEFAULT_NODATA);
        r.set(0, 1, f64::NAN);
        assert_eq!(r.count_valid(), 14);
        let doubled = r.map_valid(|v| v * 2.0);
        assert_eq!(doubled.get(0, 0), DEFAULT_NODATA);
        assert_eq!(doubled.get(0, 1), DEFAULT_NODATA);
        assert_eq!(doubled.get(3, 3), 4.0);
    }
}
