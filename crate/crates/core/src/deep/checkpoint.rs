//! Model checkpoint codec (little-endian):
//!
//! ```text
//! magic  8 bytes "UBSSMDL1"
//! l, m, T, nonlinearity tag   u32 each
//! per layer: H (m*m f64, row-major), b (m f64), omega (f64)
//! W0 (l*m f64, row-major), P0 (m*m f64, row-major)
//! ```
//!
//! Tied models are written with every layer expanded and load back untied.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{DeepRlsModel, LayerParams};
use crate::error::{Error, Result};
use crate::nonlinearity::Nonlinearity;
use crate::signal::Reader;

pub const MODEL_MAGIC: &[u8; 8] = b"UBSSMDL1";

fn push_row_major(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
}

pub fn encode_model(model: &DeepRlsModel) -> Result<Vec<u8>> {
    let dims = [model.sensors(), model.sources(), model.depth()];
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    for d in dims {
        let d = u32::try_from(d).map_err(|_| Error::invalid("model dimension exceeds u32"))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(&model.nonlinearity().tag().to_le_bytes());
    for k in 0..model.depth() {
        let layer = model.layer(k);
        push_row_major(&mut out, &layer.h);
        for v in layer.b.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&layer.omega.to_le_bytes());
    }
    push_row_major(&mut out, model.w0());
    push_row_major(&mut out, model.p0());
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<DeepRlsModel> {
    let mut r = Reader::new(bytes);
    if r.take(8, "magic")? != MODEL_MAGIC {
        return Err(Error::format("magic", "not a UBSSMDL1 checkpoint"));
    }
    let l = r.u32("l")? as usize;
    let m = r.u32("m")? as usize;
    let depth = r.u32("T")? as usize;
    let tag = r.u32("nonlinearity")?;
    let g = Nonlinearity::from_tag(tag).ok_or_else(|| Error::format("nonlinearity", format!("unknown tag {tag}")))?;
    if m == 0 || l < m {
        return Err(Error::format("m", format!("invalid dimensions l={l}, m={m}")));
    }
    if depth == 0 {
        return Err(Error::format("T", "depth must be positive"));
    }
    let mut layers = Vec::with_capacity(depth);
    for _ in 0..depth {
        let h = DMatrix::from_row_slice(m, m, &r.f64s(m * m, "H")?);
        let b = DVector::from_vec(r.f64s(m, "b")?);
        let omega = r.f64("omega")?;
        layers.push(LayerParams { h, b, omega });
    }
    let w0 = DMatrix::from_row_slice(l, m, &r.f64s(l * m, "W0")?);
    let p0 = DMatrix::from_row_slice(m, m, &r.f64s(m * m, "P0")?);
    r.finish("payload")?;
    DeepRlsModel::from_parts(layers, depth, w0, p0, g)
}

pub fn save_model(model: &DeepRlsModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<DeepRlsModel> {
    decode_model(&fs::read(path)?)
}
