//! Area-weighted rasterization of reference building footprints.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use super::ValidatorError;
use crate::geo_grid::{GridSpec, Raster};

pub type Ring = Vec<(f64, f64)>;

/// A building footprint in projected metres with its height. Holes are
/// subtracted from the exterior rings.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildingPolygon {
    exteriors: Vec<Ring>,
    holes: Vec<Ring>,
    height: f64,
}

impl BuildingPolygon {
    pub fn new(exteriors: Vec<Ring>, holes: Vec<Ring>, height: f64) -> Result<Self, ValidatorError> {
        if !(height.is_finite() && height > 0.0) {
            return Err(ValidatorError::InvalidPolygon(format!("height {height} must be positive")));
        }
        if exteriors.iter().chain(&holes).flatten().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(ValidatorError::InvalidPolygon("non-finite vertex".into()));
        }
        Ok(Self {
            exteriors,
            holes,
            height,
        })
    }

    pub fn rectangle(min_x: f64, min_y: f64, max_x: f64, max_y: f64, height: f64) -> Result<Self, ValidatorError> {
        if !(min_x <= max_x && min_y <= max_y) {
            return Err(ValidatorError::InvalidPolygon(format!(
                "rectangle ({min_x}, {min_y})-({max_x}, {max_y}) is inverted"
            )));
        }
        let ring = vec![(min_x, min_y), (max_x, min_y), (max_x, max_y), (min_x, max_y)];
        Self::new(vec![ring], vec![], height)
    }

    /// Parses a WKT `POLYGON` or `MULTIPOLYGON`.
    pub fn from_wkt(text: &str, height: f64) -> Result<Self, ValidatorError> {
        let geom: wkt::Wkt<f64> = text
            .parse()
            .map_err(|e: &str| ValidatorError::InvalidPolygon(format!("bad WKT: {e}")))?;
        let polys = match geom {
            wkt::Wkt::Polygon(p) => vec![p],
            wkt::Wkt::MultiPolygon(mp) => mp.into_inner().0,
            _ => return Err(ValidatorError::InvalidPolygon("WKT must be a POLYGON or MULTIPOLYGON".into())),
        };
        let mut exteriors = Vec::new();
        let mut holes = Vec::new();
        for p in polys {
            for (k, ring) in p.rings().iter().enumerate() {
                let pts: Ring = ring.coords().iter().map(|c| (c.x, c.y)).collect();
                if k == 0 {
                    exteriors.push(pts);
                } else {
                    holes.push(pts);
                }
            }
        }
        Self::new(exteriors, holes, height)
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn area(&self) -> f64 {
        let a: f64 = self.exteriors.iter().map(|r| ring_area(r)).sum();
        let h: f64 = self.holes.iter().map(|r| ring_area(r)).sum();
        a - h
    }

    fn bbox(&self) -> (f64, f64, f64, f64) {
        self.exteriors.iter().flatten().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(x0, y0, x1, y1), &(x, y)| (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
        )
    }

    /// Area of the footprint inside the axis-aligned box.
    pub fn area_in_box(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> f64 {
        let clip = |r: &Ring| ring_area(&clip_ring(r, x0, y0, x1, y1));
        let a: f64 = self.exteriors.iter().map(clip).sum();
        let h: f64 = self.holes.iter().map(clip).sum();
        (a - h).max(0.0)
    }
}

/// Unsigned shoelace area; a repeated closing vertex adds nothing.
pub fn ring_area(r: &[(f64, f64)]) -> f64 {
    if r.len() < 3 {
        return 0.0;
    }
    let (ox, oy) = r[0];
    let mut twice = 0.0;
    for k in 1..r.len() - 1 {
        let (ax, ay) = (r[k].0 - ox, r[k].1 - oy);
        let (bx, by) = (r[k + 1].0 - ox, r[k + 1].1 - oy);
        twice += ax * by - bx * ay;
    }
    twice.abs() / 2.0
}

/// Sutherland-Hodgman clip against an axis-aligned box.
fn clip_ring(r: &[(f64, f64)], x0: f64, y0: f64, x1: f64, y1: f64) -> Ring {
    #[derive(Clone, Copy)]
    enum Edge {
        Left(f64),
        Right(f64),
        Bottom(f64),
        Top(f64),
    }
    let inside = |e: Edge, (x, y): (f64, f64)| match e {
        Edge::Left(v) => x >= v,
        Edge::Right(v) => x <= v,
        Edge::Bottom(v) => y >= v,
        Edge::Top(v) => y <= v,
    };
    let cross = |e: Edge, (ax, ay): (f64, f64), (bx, by): (f64, f64)| match e {
        Edge::Left(v) | Edge::Right(v) => (v, ay + (by - ay) * (v - ax) / (bx - ax)),
        Edge::Bottom(v) | Edge::Top(v) => (ax + (bx - ax) * (v - ay) / (by - ay), v),
    };
    let mut out: Ring = r.to_vec();
    for e in [Edge::Left(x0), Edge::Right(x1), Edge::Bottom(y0), Edge::Top(y1)] {
        if out.is_empty() {
            break;
        }
        let input = std::mem::take(&mut out);
        let mut prev = *input.last().unwrap();
        for &cur in &input {
            match (inside(e, prev), inside(e, cur)) {
                (true, true) => out.push(cur),
                (true, false) => out.push(cross(e, prev, cur)),
                (false, true) => {
                    out.push(cross(e, prev, cur));
                    out.push(cur);
                }
                (false, false) => {}
            }
            prev = cur;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AreaWeighted {
    /// Area-weighted mean height; nodata where no building overlaps.
    pub heights: Raster,
    /// Building area per cell, m².
    pub building_area: Raster,
    /// Zero-area polygons that were skipped.
    pub degenerate: usize,
}

/// Per cell, the mean of overlapping building heights weighted by the
/// overlap area. Polygons are visited in input order, so sums are
/// reproducible.
pub fn area_weighted_reference(polys: &[BuildingPolygon], spec: &GridSpec, nodata: f64) -> AreaWeighted {
    let n = spec.len();
    let mut mass = vec![0.0; n];
    let mut area = vec![0.0; n];
    let mut degenerate = 0;
    let cs = spec.cell_size;
    for p in polys {
        if p.area() <= 0.0 {
            degenerate += 1;
            continue;
        }
        let (bx0, by0, bx1, by1) = p.bbox();
        let c0 = ((bx0 - spec.origin_x) / cs).floor().max(0.0) as usize;
        let c1 = (((bx1 - spec.origin_x) / cs).floor() as i64).min(spec.n_cols as i64 - 1);
        let r0 = ((spec.origin_y - by1) / cs).floor().max(0.0) as usize;
        let r1 = (((spec.origin_y - by0) / cs).floor() as i64).min(spec.n_rows as i64 - 1);
        if c1 < 0 || r1 < 0 {
            continue;
        }
        for r in r0..=r1 as usize {
            let top = spec.origin_y - r as f64 * cs;
            let bottom = spec.origin_y - (r + 1) as f64 * cs;
            for c in c0..=c1 as usize {
                let left = spec.origin_x + c as f64 * cs;
                let right = spec.origin_x + (c + 1) as f64 * cs;
                let a = p.area_in_box(left, bottom, right, top);
                if a > 0.0 {
                    let i = spec.index(r, c);
                    area[i] += a;
                    mass[i] += a * p.height;
                }
            }
        }
    }
    let heights = mass
        .iter()
        .zip(&area)
        .map(|(&m, &a)| if a > 0.0 { m / a } else { nodata })
        .collect();
    let area = area.into_iter().map(|a| if a > 0.0 { a } else { nodata }).collect();
    AreaWeighted {
        heights: Raster::new(*spec, heights, nodata).expect("sized to the grid"),
        building_area: Raster::new(*spec, area, nodata).expect("sized to the grid"),
        degenerate,
    }
}

#[derive(Debug, Error)]
pub enum PolygonCsvError {
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: record {record}: {source}")]
    Record {
        path: PathBuf,
        record: usize,
        #[source]
        source: ValidatorError,
    },
}

#[derive(Debug, Deserialize)]
struct PolygonRecord {
    min_x: Option<f64>,
    min_y: Option<f64>,
    max_x: Option<f64>,
    max_y: Option<f64>,
    height: f64,
    #[serde(default)]
    wkt: Option<String>,
}

/// Reads `min_x,min_y,max_x,max_y,height[,wkt]`. A non-empty `wkt` field
/// takes precedence over the rectangle columns, which may then be empty.
pub fn read_polygons(path: impl AsRef<Path>) -> Result<Vec<BuildingPolygon>, PolygonCsvError> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|source| PolygonCsvError::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, rec) in reader.deserialize::<PolygonRecord>().enumerate() {
        let rec = rec.map_err(|source| PolygonCsvError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let wkt = rec.wkt.as_deref().map(str::trim).filter(|s| !s.is_empty());
        let poly = match (wkt, rec.min_x, rec.min_y, rec.max_x, rec.max_y) {
            (Some(w), ..) => BuildingPolygon::from_wkt(w, rec.height),
            (None, Some(a), Some(b), Some(c), Some(d)) => BuildingPolygon::rectangle(a, b, c, d, rec.height),
            _ => Err(ValidatorError::InvalidPolygon("rectangle bounds missing and no WKT".into())),
        };
        out.push(poly.map_err(|source| PolygonCsvError::Record {
            path: path.to_path_buf(),
            record: i + 1,
            source,
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo_grid::DEFAULT_NODATA;
    use proptest::prelude::*;

    fn grid() -> GridSpec {
        // 4x4 cells of 10 m covering x 0..40, y 0..40
        GridSpec::new(0.0, 40.0, 10.0, 4, 4).unwrap()
    }

    #[test]
    fn single_building_inside_a_cell() {
        let p = BuildingPolygon::rectangle(1.0, 31.0, 4.0, 35.0, 12.5).unwrap();
        let aw = area_weighted_reference(&[p], &grid(), DEFAULT_NODATA);
        assert_eq!(aw.heights.valid(0, 0), Some(12.5));
        assert_eq!(aw.building_area.valid(0, 0), Some(12.0));
        assert_eq!(aw.heights.count_valid(), 1);
    }

    #[test]
    fn weighted_mean_of_two_buildings() {
        // 100 m² at 10 m and 300 m² at 20 m in one 40 m cell
        let spec = GridSpec::new(0.0, 40.0, 40.0, 1, 1).unwrap();
        let polys = [
            BuildingPolygon::rectangle(0.0, 0.0, 10.0, 10.0, 10.0).unwrap(),
            BuildingPolygon::rectangle(10.0, 10.0, 30.0, 25.0, 20.0).unwrap(),
        ];
        let aw = area_weighted_reference(&polys, &spec, DEFAULT_NODATA);
        assert_eq!(aw.heights.get(0, 0), 17.5);
    }

    #[test]
    fn straddling_building_splits_area() {
        let p = BuildingPolygon::rectangle(5.0, 32.0, 15.0, 38.0, 9.0).unwrap();
        let aw = area_weighted_reference(&[p], &grid(), DEFAULT_NODATA);
        assert_eq!(aw.building_area.get(0, 0), 30.0);
        assert_eq!(aw.building_area.get(0, 1), 30.0);
        assert_eq!(aw.heights.get(0, 1), 9.0);
    }

    #[test]
    fn degenerate_and_invalid() {
        let flat = BuildingPolygon::rectangle(5.0, 5.0, 15.0, 5.0, 3.0).unwrap();
        let aw = area_weighted_reference(&[flat], &grid(), DEFAULT_NODATA);
        assert_eq!(aw.degenerate, 1);
        assert_eq!(aw.heights.count_valid(), 0);
        assert!(BuildingPolygon::rectangle(0.0, 0.0, 1.0, 1.0, 0.0).is_err());
        assert!(BuildingPolygon::rectangle(2.0, 0.0, 1.0, 1.0, 3.0).is_err());
    }

    #[test]
    fn wkt_with_hole_and_concave_shape() {
        let p = BuildingPolygon::from_wkt(
            "POLYGON((0 0, 20 0, 20 20, 0 20, 0 0), (5 5, 15 5, 15 15, 5 15, 5 5))",
            4.0,
        )
        .unwrap();
        assert_eq!(p.area(), 300.0);
        // L shape crossing the boundary between two cells
        let l = BuildingPolygon::from_wkt("POLYGON((0 0, 20 0, 20 5, 5 5, 5 10, 0 10, 0 0))", 4.0).unwrap();
        assert_eq!(l.area(), 125.0);
        assert_eq!(l.area_in_box(0.0, 0.0, 10.0, 10.0), 75.0);
        assert_eq!(l.area_in_box(10.0, 0.0, 20.0, 10.0), 50.0);
        let m = BuildingPolygon::from_wkt("MULTIPOLYGON(((0 0, 1 0, 1 1, 0 0)), ((5 5, 7 5, 7 7, 5 7, 5 5)))", 2.0).unwrap();
        assert_eq!(m.area(), 4.5);
        assert!(BuildingPolygon::from_wkt("POINT(1 2)", 2.0).is_err());
        assert!(BuildingPolygon::from_wkt("POLYGON((0 0, 1", 2.0).is_err());
    }

    #[test]
    fn csv_reading() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("refs.csv");
        std::fs::write(
            &path,
            "min_x,min_y,max_x,max_y,height,wkt\n0,0,10,10,5,\n,,,,7,\"POLYGON((0 0, 4 0, 4 4, 0 0))\"\n",
        )
        .unwrap();
        let polys = read_polygons(&path).unwrap();
        assert_eq!(polys.len(), 2);
        assert_eq!(polys[0].area(), 100.0);
        assert_eq!(polys[1].area(), 8.0);
        std::fs::write(&path, "min_x,min_y,max_x,max_y,height\n0,0,10,10,5\n").unwrap();
        assert_eq!(read_polygons(&path).unwrap().len(), 1);
        std::fs::write(&path, "min_x,min_y,max_x,max_y,height\n0,0,10,,5\n").unwrap();
        assert!(matches!(read_polygons(&path), Err(PolygonCsvError::Record { record: 1, .. })));
    }

    proptest! {
        #[test]
        fn mass_is_conserved(
            rects in prop::collection::vec((0.0..35.0f64, 0.0..35.0f64, 0.1..12.0f64, 0.1..12.0f64, 2.6..80.0f64), 1..20)
        ) {
            let spec = grid();
            let polys: Vec<_> = rects
                .iter()
                .map(|&(x, y, w, h, z)| BuildingPolygon::rectangle(x, y, (x + w).min(40.0), (y + h).min(40.0), z).unwrap())
                .collect();
            let aw = area_weighted_reference(&polys, &spec, DEFAULT_NODATA);
            let cells: f64 = (0..spec.len())
                .filter_map(|i| Some(aw.heights.valid_at(i)? * aw.building_area.valid_at(i)?))
                .sum();
            let direct: f64 = polys.iter().map(|p| p.height() * p.area()).sum();
            prop_assert!((cells - direct).abs() <= 1e-9 * direct, "{cells} vs {direct}");
        }

        #[test]
        fn clipped_pieces_sum_to_area(
            pts in prop::collection::vec((0.0..40.0f64, 0.0..40.0f64), 3..9)
        ) {
            // star-shaped polygon around its centroid, possibly concave
            let (cx, cy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
            let (cx, cy) = (cx / pts.len() as f64, cy / pts.len() as f64);
            let mut ring = pts.clone();
            ring.sort_by(|a, b| (a.1 - cy).atan2(a.0 - cx).total_cmp(&(b.1 - cy).atan2(b.0 - cx)));
            let p = BuildingPolygon::new(vec![ring], vec![], 5.0).unwrap();
            let total: f64 = (0..4)
                .flat_map(|r| (0..4).map(move |c| (r, c)))
                .map(|(r, c)| {
                    let (x0, y1) = (c as f64 * 10.0, 40.0 - r as f64 * 10.0);
                    p.area_in_box(x0, y1 - 10.0, x0 + 10.0, y1)
                })
                .sum();
            prop_assert!((total - p.area()).abs() <= 1e-9 * p.area().max(1.0));
        }
    }
}
