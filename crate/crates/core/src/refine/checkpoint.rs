//! Binary model checkpoints: one text header line followed by the
//! parameter blocks W1, b1, W2, b2 as little-endian `f32`, row-major.

use std::fs;
use std::path::Path;

use super::model::{ModelMode, ModelState};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const TAG: &str = "MODEL";
const VERSION: &str = "v1";

pub fn checkpoint_bytes<T: Scalar>(model: &ModelState<T>) -> Vec<u8> {
    let header = format!(
        "{TAG} {VERSION} {} {} {} {}\n",
        model.mode, model.dim, model.hidden, model.classes
    );
    let mut out = header.into_bytes();
    out.reserve(4 * model.num_params());
    for block in model.blocks() {
        for &v in block {
            let f = v.to_f32().unwrap_or(f32::NAN);
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    out
}

pub fn parse_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<ModelState<T>> {
    let bad = |m: String| Error::Invalid(format!("checkpoint: {m}"));
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing header line".into()))?;
    let header =
        std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not utf-8".into()))?;
    let parts: Vec<&str> = header.split(' ').collect();
    if parts.len() != 6 || parts[0] != TAG {
        return Err(bad(format!("bad header {header:?}")));
    }
    if parts[1] != VERSION {
        return Err(bad(format!("unsupported version {}", parts[1])));
    }
    let mode: ModelMode = parts[2].parse()?;
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| bad(format!("bad size {s:?}")))
    };
    let (dim, hidden, classes) = (num(parts[3])?, num(parts[4])?, num(parts[5])?);
    if dim == 0 || hidden == 0 || classes < 2 {
        return Err(bad(format!("degenerate shape {dim} {hidden} {classes}")));
    }
    let mut model = ModelState::zeros(mode, dim, hidden, classes);
    let body = &bytes[nl + 1..];
    if body.len() != 4 * model.num_params() {
        return Err(bad(format!(
            "expected {} parameter bytes, found {}",
            4 * model.num_params(),
            body.len()
        )));
    }
    let mut chunks = body.chunks_exact(4);
    for block in model.blocks_mut() {
        for v in block.iter_mut() {
            let c = chunks.next().expect("length checked");
            *v = T::of_f32(f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        }
    }
    if !model.is_finite() {
        return Err(bad("non-finite parameter".into()));
    }
    Ok(model)
}

pub fn save_checkpoint<T: Scalar>(model: &ModelState<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<ModelState<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let m = ModelState::<f32>::init(ModelMode::Additive, 5, 3, 2, 4).unwrap();
        let bytes = checkpoint_bytes(&m);
        assert!(bytes.starts_with(b"MODEL v1 additive 5 3 2\n"));
        let back: ModelState<f32> = parse_checkpoint(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(checkpoint_bytes(&back), bytes);
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let m = ModelState::<f64>::init(ModelMode::Mlp, 2, 2, 2, 0).unwrap();
        let bytes = checkpoint_bytes(&m);
        assert!(parse_checkpoint::<f64>(&bytes[..bytes.len() - 1]).is_err());
        assert!(parse_checkpoint::<f64>(b"MODEL v2 mlp 2 2 2\n").is_err());
    }
}
