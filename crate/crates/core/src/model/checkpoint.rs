//! Full-precision model checkpoint (`DWNC`): every entry weight, mapping
//! logit and candidate pool, so a trained model can be frozen later.

use std::fs;
use std::path::Path;

use super::{DwnModel, LutLayer};
use crate::bytes::{ByteReader, ByteWriter, FormatError};
use crate::encoding::{ThermometerEncoder, WindowEncoding};

const MAGIC: &[u8; 4] = b"DWNC";
const VERSION: u32 = 1;

pub(crate) fn write_encoding(w: &mut ByteWriter, enc: Option<&WindowEncoding>) {
    match enc {
        Some(e) => {
            w.usize32(e.encoder.num_channels());
            w.usize32(e.timesteps);
            w.usize32(e.encoder.bits_per_value());
        }
        None => (0..3).for_each(|_| w.u32(0)),
    }
}

pub(crate) fn read_encoding_dims(r: &mut ByteReader) -> Result<(usize, usize, usize), FormatError> {
    Ok((r.usize32()?, r.usize32()?, r.usize32()?))
}

pub(crate) fn read_thresholds(
    r: &mut ByteReader,
    dims: (usize, usize, usize),
) -> Result<Option<WindowEncoding>, FormatError> {
    let (channels, timesteps, bits) = dims;
    if channels == 0 && timesteps == 0 && bits == 0 {
        return Ok(None);
    }
    let at = r.offset;
    let thresholds = r.f64s(channels * bits)?;
    let enc = ThermometerEncoder::new(channels, bits, thresholds).map_err(|e| FormatError::Invalid {
        offset: at,
        message: e.to_string(),
    })?;
    Ok(Some(WindowEncoding::new(enc, timesteps)))
}

pub fn save_checkpoint(model: &DwnModel, path: &Path) -> Result<(), FormatError> {
    let mut w = ByteWriter::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.usize32(model.num_classes);
    w.f64(model.tau);
    w.usize32(model.input_width);
    write_encoding(&mut w, model.encoding.as_ref());
    w.usize32(model.layers.len());
    for l in &model.layers {
        w.usize32(l.num_luts);
        w.usize32(l.arity);
        w.usize32(l.input_width);
        w.usize32(l.pool_size);
    }
    if let Some(e) = &model.encoding {
        e.encoder.thresholds().iter().for_each(|&t| w.f64(t));
    }
    for l in &model.layers {
        l.entry_weights.iter().for_each(|&v| w.f64(v));
        l.mapping_logits.iter().for_each(|&v| w.f64(v));
        l.candidate_pools.iter().for_each(|&v| w.u32(v));
    }
    fs::write(path, w.buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<DwnModel, FormatError> {
    let buf = fs::read(path)?;
    let mut r = ByteReader::new(&buf);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let num_classes = r.usize32()?;
    let tau = r.f64()?;
    let input_width = r.usize32()?;
    let dims = read_encoding_dims(&mut r)?;
    let n_layers = r.usize32()?;
    let mut shapes = Vec::new();
    for _ in 0..n_layers {
        shapes.push((r.usize32()?, r.usize32()?, r.usize32()?, r.usize32()?));
    }
    let encoding = read_thresholds(&mut r, dims)?;
    let mut layers = Vec::new();
    for (luts, arity, width, pool) in shapes {
        if arity > 16 {
            return Err(r.invalid(format!("arity {arity}")));
        }
        let at = r.offset;
        let entries = r.f64s(luts << arity)?;
        let logits = r.f64s(luts * arity * pool)?;
        let pools = r.u32s(luts * arity * pool)?;
        layers.push(
            LutLayer::new(luts, arity, width, entries, logits, pools).map_err(|e| FormatError::Invalid {
                offset: at,
                message: e.to_string(),
            })?,
        );
    }
    r.finish()?;
    DwnModel::new(input_width, layers, num_classes, tau, encoding).map_err(|e| FormatError::Invalid {
        offset: 0,
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_round_trip() {
        let cfg = ModelConfig {
            input_width: 24,
            layers: 2,
            num_luts: 6,
            arity: 3,
            num_classes: 3,
            tau: 4.5,
            pool_size: 5,
        };
        let mut m = init_model(&cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let enc = ThermometerEncoder::new(2, 3, vec![0.0, 1.0, 2.0, -1.0, 0.0, 1.0]).unwrap();
        m.set_encoding(Some(WindowEncoding::new(enc, 4))).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.dwnc");
        save_checkpoint(&m, &p).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap(), m);
    }
}
