//! ESRI-style ASCII grid reader and writer.
//!
//! Header keys are written uppercase in the fixed order `NCOLS`, `NROWS`,
//! `XLLCORNER`, `YLLCORNER`, `CELLSIZE`, `NODATA_VALUE`, followed by one
//! line per row, top row first. Numbers use the shortest representation
//! that parses back to the identical `f64`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{GridSpec, Raster, DEFAULT_SPHERE_RADIUS};

const HEADER_KEYS: [&str; 6] = [
    "NCOLS",
    "NROWS",
    "XLLCORNER",
    "YLLCORNER",
    "CELLSIZE",
    "NODATA_VALUE",
];

#[derive(Debug, Error)]
pub enum AsciiGridError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed header: {message}")]
    MalformedHeader { line: usize, message: String },
    #[error("line {line}: cannot parse value {token:?}")]
    BadNumber { line: usize, token: String },
    #[error("line {line}: expected {expected} values, found {found}")]
    ValueCount {
        line: usize,
        expected: usize,
        found: usize,
    },
}

/// Formats `v` so that `v.to_string().parse::<f64>() == v` exactly.
pub(crate) fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// Lower-left y such that `yll + n_rows * cell_size` reproduces `origin_y`
/// bit for bit whenever some nearby float allows it.
fn lower_left_y(spec: &GridSpec) -> f64 {
    let extent = spec.n_rows as f64 * spec.cell_size;
    let first = spec.origin_y - extent;
    let mut down = first;
    let mut up = first;
    for _ in 0..64 {
        if down + extent == spec.origin_y {
            return down;
        }
        if up + extent == spec.origin_y {
            return up;
        }
        down = down.next_down();
        up = up.next_up();
    }
    first
}

pub fn format_ascii_grid(r: &Raster) -> String {
    let spec = r.spec();
    let nodata = fmt_f64(r.nodata());
    let mut out = String::with_capacity(spec.len() * 8 + 128);
    let header = [
        spec.n_cols.to_string(),
        spec.n_rows.to_string(),
        fmt_f64(spec.x_lower_left()),
        fmt_f64(lower_left_y(spec)),
        fmt_f64(spec.cell_size),
        nodata.clone(),
    ];
    for (key, value) in HEADER_KEYS.iter().zip(header) {
        let _ = writeln!(out, "{key} {value}");
    }
    for row in 0..spec.n_rows {
        for col in 0..spec.n_cols {
            if col > 0 {
                out.push(' ');
            }
            match r.valid(row, col) {
                Some(v) => out.push_str(&fmt_f64(v)),
                None => out.push_str(&nodata),
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_ascii_grid(r: &Raster, path: impl AsRef<Path>) -> Result<(), AsciiGridError> {
    let path = path.as_ref();
    fs::write(path, format_ascii_grid(r)).map_err(|source| AsciiGridError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_ascii_grid(path: impl AsRef<Path>) -> Result<Raster, AsciiGridError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| AsciiGridError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_ascii_grid(&text, DEFAULT_SPHERE_RADIUS)
}

pub fn parse_ascii_grid(text: &str, sphere_radius: f64) -> Result<Raster, AsciiGridError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut header = [0.0f64; 6];
    for (slot, key) in HEADER_KEYS.iter().enumerate() {
        let (line, content) = lines.next().ok_or(AsciiGridError::MalformedHeader {
            line: slot + 1,
            message: format!("missing {key}"),
        })?;
        let mut parts = content.split_whitespace();
        let (Some(found), Some(value), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(AsciiGridError::MalformedHeader {
                line,
                message: format!("expected `{key} <value>`"),
            });
        };
        if !found.eq_ignore_ascii_case(key) {
            return Err(AsciiGridError::MalformedHeader {
                line,
                message: format!("expected {key}, found {found}"),
            });
        }
        header[slot] = value.parse().map_err(|_| AsciiGridError::BadNumber {
            line,
            token: value.to_string(),
        })?;
    }
    let [ncols, nrows, xll, yll, cell_size, nodata] = header;
    let as_count = |v: f64, line: usize, key: &str| {
        if v >= 1.0 && v.fract() == 0.0 && v < u32::MAX as f64 {
            Ok(v as usize)
        } else {
            Err(AsciiGridError::MalformedHeader {
                line,
                message: format!("{key} must be a positive integer, got {v}"),
            })
        }
    };
    let n_cols = as_count(ncols, 1, "NCOLS")?;
    let n_rows = as_count(nrows, 2, "NROWS")?;
    if !(cell_size > 0.0 && cell_size.is_finite()) {
        return Err(AsciiGridError::MalformedHeader {
            line: 5,
            message: format!("CELLSIZE must be positive, got {cell_size}"),
        });
    }
    let origin_y = yll + n_rows as f64 * cell_size;
    let spec = GridSpec::with_radius(xll, origin_y, cell_size, n_rows, n_cols, sphere_radius)
        .map_err(|e| AsciiGridError::MalformedHeader {
            line: 1,
            message: e.to_string(),
        })?;

    let expected = spec.len();
    let mut values = Vec::with_capacity(expected);
    let mut last_line = HEADER_KEYS.len();
    for (line, content) in lines {
        last_line = line;
        for token in content.split_whitespace() {
            if values.len() == expected {
                return Err(AsciiGridError::ValueCount {
                    line,
                    expected,
                    found: expected + 1,
                });
            }
            let v: f64 = token.parse().map_err(|_| AsciiGridError::BadNumber {
                line,
                token: token.to_string(),
            })?;
            values.push(v);
        }
    }
    if values.len() != expected {
        return Err(AsciiGridError::ValueCount {
            line: last_line,
            expected,
            found: values.len(),
        });
    }
    Ok(Raster::new(spec, values, nodata).expect("value count checked"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo_grid::DEFAULT_NODATA;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_cell_file() {
        let spec = GridSpec::new(0.0, 150.0, 150.0, 1, 1).unwrap();
        let r = Raster::new(spec, vec![7.0], DEFAULT_NODATA).unwrap();
        let text = format_ascii_grid(&r);
        assert_eq!(
            text,
            "NCOLS 1\nNROWS 1\nXLLCORNER 0\nYLLCORNER 0\nCELLSIZE 150\nNODATA_VALUE -9999\n7\n"
        );
        assert_eq!(parse_ascii_grid(&text, DEFAULT_SPHERE_RADIUS).unwrap(), r);
    }

    #[test]
    fn nodata_serialized_as_token() {
        let spec = GridSpec::new(0.0, 0.0, 1.0, 1, 3).unwrap();
        let r = Raster::new(spec, vec![1.5, DEFAULT_NODATA, f64::NAN], DEFAULT_NODATA).unwrap();
        let text = format_ascii_grid(&r);
        assert!(text.ends_with("1.5 -9999 -9999\n"));
    }

    #[test]
    fn writes_are_byte_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let spec = GridSpec::new(1000.5, 2000.25, 150.0, 8, 8).unwrap();
        let values = (0..64).map(|_| rng.gen_range(-1e4..1e4)).collect();
        let r = Raster::new(spec, values, DEFAULT_NODATA).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.asc"), dir.path().join("b.asc"));
        write_ascii_grid(&r, &a).unwrap();
        write_ascii_grid(&r, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(read_ascii_grid(&a).unwrap(), r);
    }

    #[test]
    fn awkward_origin_within_an_ulp() {
        // 0.1 is not reachable as yll + 3 * 0.3 for any float yll
        let spec = GridSpec::new(0.1, 0.1, 0.3, 3, 2).unwrap();
        let r = Raster::filled(spec, 1.0, DEFAULT_NODATA);
        let back = parse_ascii_grid(&format_ascii_grid(&r), DEFAULT_SPHERE_RADIUS).unwrap();
        assert!((back.spec().origin_y - 0.1).abs() < 1e-16);
        assert_eq!(back.spec().origin_x, 0.1);
    }

    #[test]
    fn header_errors_name_lines() {
        let bad_key = "NCOLS 1\nNROWZ 1\nXLLCORNER 0\nYLLCORNER 0\nCELLSIZE 1\nNODATA_VALUE -9999\n1\n";
        match parse_ascii_grid(bad_key, DEFAULT_SPHERE_RADIUS) {
            Err(AsciiGridError::MalformedHeader { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        let truncated = "NCOLS 1\nNROWS 1\n";
        assert!(matches!(
            parse_ascii_grid(truncated, DEFAULT_SPHERE_RADIUS),
            Err(AsciiGridError::MalformedHeader { line: 3, .. })
        ));
    }

    #[test]
    fn value_errors() {
        let head = "NCOLS 2\nNROWS 1\nXLLCORNER 0\nYLLCORNER 0\nCELLSIZE 1\nNODATA_VALUE -9999\n";
        assert!(matches!(
            parse_ascii_grid(&format!("{head}1\n"), DEFAULT_SPHERE_RADIUS),
            Err(AsciiGridError::ValueCount { expected: 2, found: 1, .. })
        ));
        assert!(matches!(
            parse_ascii_grid(&format!("{head}1 2 3\n"), DEFAULT_SPHERE_RADIUS),
            Err(AsciiGridError::ValueCount { line: 7, .. })
        ));
        assert!(matches!(
            parse_ascii_grid(&format!("{head}1 x\n"), DEFAULT_SPHERE_RADIUS),
            Err(AsciiGridError::BadNumber { line: 7, .. })
        ));
    }

    proptest! {
        #[test]
        fn lossless_for_finite_values(
            values in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 6),
            ox in -10_000_000i32..10_000_000,
            oy in -10_000_000i32..10_000_000,
            quarter_cells in 1u32..20_000,
        ) {
            let cs = f64::from(quarter_cells) / 4.0;
            let spec = GridSpec::new(f64::from(ox), f64::from(oy), cs, 2, 3).unwrap();
            let r = Raster::new(spec, values, DEFAULT_NODATA).unwrap();
            let back = parse_ascii_grid(&format_ascii_grid(&r), DEFAULT_SPHERE_RADIUS).unwrap();
            prop_assert_eq!(back.spec(), r.spec());
            for (a, b) in back.values().iter().zip(r.values()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
