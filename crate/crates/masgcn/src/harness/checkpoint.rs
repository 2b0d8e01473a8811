//! Binary model checkpoints: shape header, tensors in canonical order,
//! SHA-256 trailer, atomic writes. Loads are bit-exact.

use crate::corpus::cache::write_atomic;
use crate::error::{Error, Result};
use crate::model::{ModelParams, ModelShape};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

const MAGIC: &[u8; 4] = b"MSCK";
const VERSION: u32 = 1;

fn checkpoint_error(path: &Path, detail: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

pub fn save(path: &Path, params: &ModelParams) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.write_u32::<LittleEndian>(VERSION).unwrap();
    let shape_json = serde_json::to_vec(&params.shape)
        .map_err(|e| checkpoint_error(path, format!("shape encoding: {}", e)))?;
    buf.write_u32::<LittleEndian>(shape_json.len() as u32).unwrap();
    buf.extend_from_slice(&shape_json);
    let tensors = params.named_tensors();
    buf.write_u32::<LittleEndian>(tensors.len() as u32).unwrap();
    for (name, tensor) in tensors {
        buf.write_u32::<LittleEndian>(name.len() as u32).unwrap();
        buf.extend_from_slice(name.as_bytes());
        buf.write_u32::<LittleEndian>(tensor.nrows() as u32).unwrap();
        buf.write_u32::<LittleEndian>(tensor.ncols() as u32).unwrap();
        for &v in tensor.iter() {
            buf.write_f64::<LittleEndian>(v).unwrap();
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    write_atomic(path, &buf)
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 32 {
        return Err(checkpoint_error(path, "file too short"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 32);
    let digest = Sha256::digest(body);
    if digest.as_slice() != trailer {
        return Err(Error::Checksum {
            path: path.to_path_buf(),
        });
    }
    let mut cur = Cursor::new(body);
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic)
        .map_err(|e| checkpoint_error(path, e.to_string()))?;
    if &magic != MAGIC {
        return Err(checkpoint_error(path, "not a checkpoint file"));
    }
    let version = cur
        .read_u32::<LittleEndian>()
        .map_err(|e| checkpoint_error(path, e.to_string()))?;
    if version != VERSION {
        return Err(checkpoint_error(
            path,
            format!("unsupported version {}", version),
        ));
    }
    let shape_len = cur
        .read_u32::<LittleEndian>()
        .map_err(|e| checkpoint_error(path, e.to_string()))? as usize;
    let mut shape_json = vec![0u8; shape_len];
    cur.read_exact(&mut shape_json)
        .map_err(|e| checkpoint_error(path, e.to_string()))?;
    let shape: ModelShape = serde_json::from_slice(&shape_json)
        .map_err(|e| checkpoint_error(path, format!("shape decoding: {}", e)))?;
    let mut params = ModelParams::zeroed(shape)?;

    let count = cur
        .read_u32::<LittleEndian>()
        .map_err(|e| checkpoint_error(path, e.to_string()))? as usize;
    let mut slots = params.named_tensors_mut();
    if count != slots.len() {
        return Err(checkpoint_error(
            path,
            format!("{} tensors stored, shape implies {}", count, slots.len()),
        ));
    }
    for (expected_name, slot) in slots.iter_mut() {
        let name_len = cur
            .read_u32::<LittleEndian>()
            .map_err(|e| checkpoint_error(path, e.to_string()))? as usize;
        let mut name = vec![0u8; name_len];
        cur.read_exact(&mut name)
            .map_err(|e| checkpoint_error(path, e.to_string()))?;
        let name = String::from_utf8(name)
            .map_err(|_| checkpoint_error(path, "tensor name is not utf-8"))?;
        if &name != expected_name {
            return Err(checkpoint_error(
                path,
                format!("tensor {} where {} was expected", name, expected_name),
            ));
        }
        let rows = cur
            .read_u32::<LittleEndian>()
            .map_err(|e| checkpoint_error(path, e.to_string()))? as usize;
        let cols = cur
            .read_u32::<LittleEndian>()
            .map_err(|e| checkpoint_error(path, e.to_string()))? as usize;
        if (rows, cols) != slot.dim() {
            return Err(checkpoint_error(
                path,
                format!(
                    "tensor {}: stored {}x{}, shape implies {}x{}",
                    name,
                    rows,
                    cols,
                    slot.nrows(),
                    slot.ncols()
                ),
            ));
        }
        for v in slot.iter_mut() {
            *v = cur
                .read_f64::<LittleEndian>()
                .map_err(|e| checkpoint_error(path, e.to_string()))?;
        }
    }
    if (cur.position() as usize) != body.len() {
        return Err(checkpoint_error(path, "trailing bytes after tensors"));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn small_params() -> ModelParams {
        let shape = ModelShape {
            word_vocab: 9,
            pos_vocab: 4,
            num_types: 3,
            word_dim: 6,
            pos_dim: 2,
            position_dim: 2,
            max_rel_pos: 4,
            hidden: 3,
            views: 2,
            gcn_layers: 2,
            gate_reduction: 2,
            freeze_word_embeddings: true,
        };
        ModelParams::init(shape, &mut ChaCha12Rng::seed_from_u64(5)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let params = small_params();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save(&path, &params).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.shape, params.shape);
        for ((na, ta), (nb, tb)) in params
            .named_tensors()
            .iter()
            .zip(loaded.named_tensors().iter())
        {
            assert_eq!(na, nb);
            assert_eq!(ta.dim(), tb.dim());
            for (x, y) in ta.iter().zip(tb.iter()) {
                assert_eq!(x.to_bits(), y.to_bits(), "{} drifted", na);
            }
        }
    }

    #[test]
    fn save_twice_is_byte_identical() {
        let params = small_params();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.bin");
        let b = dir.path().join("b.bin");
        save(&a, &params).unwrap();
        save(&b, &params).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }

    #[test]
    fn corruption_is_detected() {
        let params = small_params();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save(&path, &params).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load(&path), Err(Error::Checksum { .. })));
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let mut bytes = b"not a checkpoint at all".to_vec();
        let digest = Sha256::digest(&bytes);
        bytes.extend_from_slice(&digest);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load(&path), Err(Error::Checkpoint { .. })));
    }
}
