//! Binary field container.
//!
//! Layout:
//!
//! ```text
//! CDII-FIELDS v1\n
//! <manifest length in bytes>\n
//! <JSON manifest>
//! <payload: f64 little-endian>
//! ```
//!
//! Each field occupies `nodes * components * 8` bytes starting at its
//! `offset` (relative to the payload start). Values are stored node by node
//! in row-major order with the last grid axis fastest, and the component index
//! innermost; matrix and two-form components are row-major `n x n`.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};

use cdii_core::field::{Grid, MatrixField, ScalarField, TwoFormField, VectorField};
use serde::{Deserialize, Serialize};

use crate::error::ContainerError;

pub const MAGIC: &str = "CDII-FIELDS";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Scalar,
    Vector,
    Matrix,
    TwoForm,
}

impl FieldKind {
    pub fn components(self, n: usize) -> usize {
        match self {
            FieldKind::Scalar => 1,
            FieldKind::Vector => n,
            FieldKind::Matrix | FieldKind::TwoForm => n * n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldData {
    Scalar(ScalarField),
    Vector(VectorField),
    Matrix(MatrixField),
    TwoForm(TwoFormField),
}

impl FieldData {
    pub fn kind(&self) -> FieldKind {
        match self {
            FieldData::Scalar(_) => FieldKind::Scalar,
            FieldData::Vector(_) => FieldKind::Vector,
            FieldData::Matrix(_) => FieldKind::Matrix,
            FieldData::TwoForm(_) => FieldKind::TwoForm,
        }
    }

    pub fn grid(&self) -> &Grid {
        match self {
            FieldData::Scalar(f) => f.grid(),
            FieldData::Vector(f) => f.grid(),
            FieldData::Matrix(f) => f.grid(),
            FieldData::TwoForm(f) => f.grid(),
        }
    }

    pub fn data(&self) -> &[f64] {
        match self {
            FieldData::Scalar(f) => f.data(),
            FieldData::Vector(f) => f.data(),
            FieldData::Matrix(f) => f.data(),
            FieldData::TwoForm(f) => f.data(),
        }
    }

    fn from_raw(kind: FieldKind, grid: Grid, data: Vec<f64>) -> cdii_core::error::Result<FieldData> {
        Ok(match kind {
            FieldKind::Scalar => FieldData::Scalar(ScalarField::new(grid, data)?),
            FieldKind::Vector => FieldData::Vector(VectorField::new(grid, data)?),
            FieldKind::Matrix => FieldData::Matrix(MatrixField::new(grid, data)?),
            FieldKind::TwoForm => FieldData::TwoForm(TwoFormField::new(grid, data)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GridDescriptor {
    n: usize,
    dims: Vec<usize>,
    origin: Vec<f64>,
    spacing: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FieldEntry {
    name: String,
    kind: FieldKind,
    components: usize,
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    endianness: String,
    grid: GridDescriptor,
    fields: Vec<FieldEntry>,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

/// Named fields on one grid plus free-form string metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    grid: Grid,
    fields: Vec<(String, FieldData)>,
    pub meta: BTreeMap<String, String>,
}

impl Container {
    pub fn new(grid: Grid) -> Container {
        Container {
            grid,
            fields: Vec::new(),
            meta: BTreeMap::new(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Add or replace a field.
    pub fn insert(&mut self, name: impl Into<String>, field: FieldData) -> Result<(), ContainerError> {
        let name = name.into();
        if field.grid() != &self.grid {
            return Err(ContainerError::BadField {
                field: name,
                reason: "lives on a different grid than the container".into(),
            });
        }
        match self.fields.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = field,
            None => self.fields.push((name, field)),
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&FieldData> {
        self.fields.iter().find(|(n, _)| n == name).map(|(_, f)| f)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.fields.iter().map(|(n, _)| n.as_str())
    }

    pub fn fields(&self) -> &[(String, FieldData)] {
        &self.fields
    }

    pub fn scalar(&self, name: &str) -> Result<&ScalarField, ContainerError> {
        match self.get(name) {
            Some(FieldData::Scalar(f)) => Ok(f),
            Some(other) => Err(wrong_kind(name, FieldKind::Scalar, other.kind())),
            None => Err(ContainerError::Missing(name.into())),
        }
    }

    pub fn vector(&self, name: &str) -> Result<&VectorField, ContainerError> {
        match self.get(name) {
            Some(FieldData::Vector(f)) => Ok(f),
            Some(other) => Err(wrong_kind(name, FieldKind::Vector, other.kind())),
            None => Err(ContainerError::Missing(name.into())),
        }
    }

    /// Matrix field; two-forms are returned as their antisymmetric matrices.
    pub fn matrix(&self, name: &str) -> Result<MatrixField, ContainerError> {
        match self.get(name) {
            Some(FieldData::Matrix(f)) => Ok(f.clone()),
            Some(FieldData::TwoForm(f)) => MatrixField::new(f.grid().clone(), f.data().to_vec()).map_err(|e| ContainerError::BadField {
                field: name.into(),
                reason: e.to_string(),
            }),
            Some(other) => Err(wrong_kind(name, FieldKind::Matrix, other.kind())),
            None => Err(ContainerError::Missing(name.into())),
        }
    }

    /// Fields `{prefix}1, {prefix}2, ...` up to the first gap.
    pub fn numbered(&self, prefix: &str) -> Vec<&str> {
        (1..)
            .map(|k| format!("{prefix}{k}"))
            .map_while(|name| self.fields.iter().find(|(n, _)| *n == name).map(|(n, _)| n.as_str()))
            .collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), ContainerError> {
        let n = self.grid.dim();
        let mut offset = 0;
        let fields = self
            .fields
            .iter()
            .map(|(name, f)| {
                let entry = FieldEntry {
                    name: name.clone(),
                    kind: f.kind(),
                    components: f.kind().components(n),
                    offset,
                };
                offset += f.data().len() * 8;
                entry
            })
            .collect();
        let manifest = Manifest {
            endianness: "little".into(),
            grid: GridDescriptor {
                n,
                dims: self.grid.dims().to_vec(),
                origin: self.grid.origin().to_vec(),
                spacing: self.grid.spacing().to_vec(),
            },
            fields,
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| ContainerError::Malformed(e.to_string()))?;
        write!(w, "{MAGIC} v{VERSION}\n{}\n", json.len())?;
        w.write_all(&json)?;
        let mut buf = Vec::with_capacity(offset);
        for (_, f) in &self.fields {
            for v in f.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(mut r: R) -> Result<Container, ContainerError> {
        let header = read_line(&mut r, "header")?;
        let version = header
            .strip_prefix(MAGIC)
            .and_then(|rest| rest.strip_prefix(' '))
            .ok_or_else(|| ContainerError::Malformed(format!("expected '{MAGIC} v{VERSION}' header")))?;
        if version != format!("v{VERSION}") {
            return Err(ContainerError::Version {
                found: version.to_string(),
                supported: VERSION,
            });
        }
        let len_line = read_line(&mut r, "manifest length")?;
        let len: usize = len_line
            .parse()
            .map_err(|_| ContainerError::Malformed(format!("bad manifest length '{len_line}'")))?;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)
            .map_err(|_| ContainerError::Malformed("manifest shorter than its declared length".into()))?;
        let manifest: Manifest =
            serde_json::from_slice(&json).map_err(|e| ContainerError::Malformed(format!("manifest: {e}")))?;
        if manifest.endianness != "little" {
            return Err(ContainerError::Endianness {
                found: manifest.endianness,
            });
        }
        let gd = &manifest.grid;
        if gd.dims.len() != gd.n {
            return Err(ContainerError::Malformed(format!("grid declares n = {} but {} dims", gd.n, gd.dims.len())));
        }
        let grid = Grid::new(gd.dims.clone(), gd.origin.clone(), gd.spacing.clone())
            .map_err(|e| ContainerError::Malformed(format!("grid: {e}")))?;
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;

        let mut out = Container::new(grid.clone());
        out.meta = manifest.meta;
        let mut expected_total = 0;
        for entry in manifest.fields {
            let comps = entry.kind.components(gd.n);
            if entry.components != comps {
                return Err(ContainerError::BadField {
                    field: entry.name,
                    reason: format!("{:?} field needs {comps} components, manifest says {}", entry.kind, entry.components),
                });
            }
            let bytes = grid.len() * comps * 8;
            let end = entry.offset.saturating_add(bytes);
            if end > payload.len() {
                return Err(ContainerError::Truncated {
                    field: entry.name,
                    needed: end,
                    available: payload.len(),
                });
            }
            expected_total += bytes;
            let data = payload[entry.offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let field = FieldData::from_raw(entry.kind, grid.clone(), data).map_err(|e| ContainerError::BadField {
                field: entry.name.clone(),
                reason: e.to_string(),
            })?;
            if out.get(&entry.name).is_some() {
                return Err(ContainerError::Malformed(format!("duplicate field '{}'", entry.name)));
            }
            out.fields.push((entry.name, field));
        }
        if payload.len() != expected_total {
            return Err(ContainerError::Malformed(format!(
                "payload has {} bytes, fields account for {expected_total}",
                payload.len()
            )));
        }
        Ok(out)
    }
}

fn wrong_kind(name: &str, want: FieldKind, got: FieldKind) -> ContainerError {
    ContainerError::BadField {
        field: name.into(),
        reason: format!("expected a {want:?} field, found {got:?}"),
    }
}

fn read_line<R: BufRead>(r: &mut R, what: &str) -> Result<String, ContainerError> {
    let mut line = String::new();
    // the header lines are short; cap the read so binary garbage fails fast
    let got = r.by_ref().take(256).read_line(&mut line)?;
    if got == 0 || !line.ends_with('\n') {
        return Err(ContainerError::Malformed(format!("missing {what} line")));
    }
    Ok(line.trim_end().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid {
        Grid::uniform(2, 4, 0.0, 1.0).unwrap()
    }

    fn bytes(c: &Container) -> Vec<u8> {
        let mut v = Vec::new();
        c.write_to(&mut v).unwrap();
        v
    }

    #[test]
    fn trailing_payload_bytes_are_rejected() {
        let g = grid();
        let mut c = Container::new(g.clone());
        c.insert("a", FieldData::Scalar(ScalarField::constant(&g, 1.0))).unwrap();
        let mut raw = bytes(&c);
        raw.extend_from_slice(&[0u8; 8]);
        assert!(matches!(Container::read_from(&raw[..]), Err(ContainerError::Malformed(_))));
    }

    #[test]
    fn numbered_stops_at_first_gap() {
        let g = grid();
        let mut c = Container::new(g.clone());
        for name in ["u1", "u2", "u4"] {
            c.insert(name, FieldData::Scalar(ScalarField::zeros(&g))).unwrap();
        }
        assert_eq!(c.numbered("u"), vec!["u1", "u2"]);
    }

    #[test]
    fn rejects_field_on_other_grid() {
        let mut c = Container::new(grid());
        let other = Grid::uniform(2, 5, 0.0, 1.0).unwrap();
        assert!(c.insert("x", FieldData::Scalar(ScalarField::zeros(&other))).is_err());
    }
}
