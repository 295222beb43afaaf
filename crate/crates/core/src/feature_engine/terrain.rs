use crate::geo_grid::Raster;

#[derive(Debug, Clone, PartialEq)]
pub struct TerrainFeatures {
    pub elevation: Raster,
    /// Degrees from horizontal.
    pub slope: Raster,
    /// Degrees clockwise from north of the downslope direction; nodata on
    /// flat cells.
    pub aspect: Raster,
}

/// Elevation, slope and aspect using Horn's 3×3 finite differences.
///
/// Neighbours beyond the border replicate the edge; nodata neighbours take
/// the centre value.
pub fn terrain_features(dem: &Raster) -> TerrainFeatures {
    let spec = *dem.spec();
    let nodata = dem.nodata();
    let (rows, cols) = (spec.n_rows as isize, spec.n_cols as isize);
    let mut slope = Vec::with_capacity(spec.len());
    let mut aspect = Vec::with_capacity(spec.len());
    for r in 0..rows {
        for c in 0..cols {
            let Some(center) = dem.valid(r as usize, c as usize) else {
                slope.push(nodata);
                aspect.push(nodata);
                continue;
            };
            let z = |dr: isize, dc: isize| {
                let rr = (r + dr).clamp(0, rows - 1) as usize;
                let cc = (c + dc).clamp(0, cols - 1) as usize;
                dem.valid(rr, cc).unwrap_or(center)
            };
            let (a, b, cc_, d, f, g, h, i) =
                (z(-1, -1), z(-1, 0), z(-1, 1), z(0, -1), z(0, 1), z(1, -1), z(1, 0), z(1, 1));
            let eight = 8.0 * spec.cell_size;
            let dz_east = ((cc_ + 2.0 * f + i) - (a + 2.0 * d + g)) / eight;
            let dz_north = ((a + 2.0 * b + cc_) - (g + 2.0 * h + i)) / eight;
            slope.push(dz_east.hypot(dz_north).atan().to_degrees());
            if dz_east == 0.0 && dz_north == 0.0 {
                aspect.push(nodata);
            } else {
                let az = (-dz_east).atan2(-dz_north).to_degrees();
                aspect.push(if az < 0.0 { az + 360.0 } else { az });
            }
        }
    }
    TerrainFeatures {
        elevation: dem.clone(),
        slope: Raster::new(spec, slope, nodata).expect("same grid"),
        aspect: Raster::new(spec, aspect, nodata).expect("same grid"),
    }
}
