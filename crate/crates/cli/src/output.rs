//! Heatmaps, CSV tables and the plain-text summary.
//!
//! Heatmaps are binary PPM (P6). Each component is scaled linearly from its
//! own finite minimum to maximum onto a five-stop map
//! navy (0,0,128) -> blue (0,128,255) -> white -> orange (255,128,0) -> dark red (128,0,0);
//! non-finite values are drawn mid-grey (128,128,128). Rows follow the first
//! grid axis, columns the second; 3D fields are shown on the middle slice of
//! the first axis. Small grids are upscaled by pixel replication to at least
//! 256 pixels on the longer side.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::container::{Container, FieldData};
use crate::error::CliError;

const STOPS: [[f64; 3]; 5] = [
    [0.0, 0.0, 128.0],
    [0.0, 128.0, 255.0],
    [255.0, 255.0, 255.0],
    [255.0, 128.0, 0.0],
    [128.0, 0.0, 0.0],
];
const NAN_RGB: [u8; 3] = [128, 128, 128];
const MIN_PIXELS: usize = 256;

/// Colour of `t` in `[0, 1]`.
pub fn colormap(t: f64) -> [u8; 3] {
    if !t.is_finite() {
        return NAN_RGB;
    }
    let s = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let k = (s.floor() as usize).min(STOPS.len() - 2);
    let w = s - k as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = (STOPS[k][c] * (1.0 - w) + STOPS[k + 1][c] * w).round() as u8;
    }
    out
}

/// A 2D image of one component: `rows x cols` values.
#[derive(Debug, Clone)]
pub struct Plane {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

/// Component `comp` of a field with `ncomp` interleaved components, sliced to a plane.
pub fn plane(dims: &[usize], data: &[f64], ncomp: usize, comp: usize) -> Plane {
    let (slice_off, rows, cols) = match dims.len() {
        2 => (0, dims[0], dims[1]),
        _ => ((dims[0] / 2) * dims[1] * dims[2], dims[1], dims[2]),
    };
    let values = (0..rows * cols).map(|p| data[(slice_off + p) * ncomp + comp]).collect();
    Plane { rows, cols, values }
}

pub fn encode_ppm(p: &Plane) -> Vec<u8> {
    let (lo, hi) = p
        .values
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    let scale = (MIN_PIXELS / p.rows.max(p.cols)).max(1);
    let (w, h) = (p.cols * scale, p.rows * scale);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let v = p.values[(y / scale) * p.cols + x / scale];
            // a constant component is drawn at the middle of the map
            let t = if span > 0.0 { (v - lo) / span } else if v.is_finite() { 0.5 } else { f64::NAN };
            out.extend_from_slice(&colormap(t));
        }
    }
    out
}

/// Write `<name>_c<k>.ppm` for every component of every field; returns the paths.
pub fn write_heatmaps(dir: &Path, c: &Container) -> Result<Vec<PathBuf>, CliError> {
    let n = c.grid().dim();
    let dims = c.grid().dims();
    let mut paths = Vec::new();
    for (name, f) in c.fields() {
        let ncomp = f.kind().components(n);
        for comp in 0..ncomp {
            // skip the redundant lower triangle of symmetric and antisymmetric fields
            if matches!(f, FieldData::Matrix(_) | FieldData::TwoForm(_)) && comp / n > comp % n {
                continue;
            }
            let path = dir.join(format!("{name}_c{comp}.ppm"));
            let img = encode_ppm(&plane(dims, f.data(), ncomp, comp));
            fs::write(&path, img).map_err(CliError::io(&path))?;
            paths.push(path);
        }
    }
    Ok(paths)
}

/// Ordered `(quantity, value)` rows printed as a table and written as `summary.csv`.
#[derive(Debug, Clone, Default)]
pub struct Summary {
    pub title: String,
    pub rows: Vec<(String, String)>,
}

impl Summary {
    pub fn new(title: impl Into<String>) -> Summary {
        Summary {
            title: title.into(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.rows.push((key.into(), value.to_string()));
    }

    pub fn num(&mut self, key: impl Into<String>, value: f64) {
        self.push(key, format!("{value:.6e}"));
    }

    pub fn value(&self, key: &str) -> Option<&str> {
        self.rows.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn print(&self, mut w: impl Write) -> std::io::Result<()> {
        let width = self.rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        writeln!(w, "{}", self.title)?;
        for (k, v) in &self.rows {
            writeln!(w, "  {k:<width$}  {v}")?;
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), CliError> {
        let mut wtr = csv::Writer::from_path(path)?;
        wtr.write_record(["quantity", "value"])?;
        for (k, v) in &self.rows {
            wtr.write_record([k, v])?;
        }
        wtr.flush().map_err(CliError::io(path))?;
        Ok(())
    }
}
