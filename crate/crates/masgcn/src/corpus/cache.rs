//! On-disk feature archive: tokenized examples plus their syntactic
//! tensors, checksummed and keyed by a config hash.
//!
//! Masks and the partition one-hot are cheap pure functions of what is
//! stored, so the archive keeps only the distance and type matrices and
//! rebuilds the rest on read.

use crate::corpus::{FeatureBundle, SyntacticFeatures, TokenizedExample, VocabKind, Vocabulary};
use crate::error::{Error, Result};
use crate::syntax::{self, DistanceMatrix, TypeMatrix0};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"MSGC";
const VERSION: u32 = 1;

/// Deserialized archive plus the header fields needed for validation.
#[derive(Debug)]
pub struct CacheContents {
    pub config_hash: [u8; 32],
    pub views: usize,
    pub num_types: usize,
    pub bundles: Vec<FeatureBundle>,
}

fn archive_error(path: &Path, detail: impl Into<String>) -> Error {
    Error::Archive {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Serializes examples with their distance/type matrices, appends a
/// SHA-256 trailer, and writes the file atomically.
pub fn write_features(
    path: &Path,
    config_hash: &[u8; 32],
    views: usize,
    num_types: usize,
    examples: &[TokenizedExample],
) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.write_u32::<LittleEndian>(VERSION).unwrap();
    buf.extend_from_slice(config_hash);
    buf.write_u32::<LittleEndian>(views as u32).unwrap();
    buf.write_u32::<LittleEndian>(num_types as u32).unwrap();
    buf.write_u64::<LittleEndian>(examples.len() as u64).unwrap();

    for tok in examples {
        let n = tok.len();
        let dist = syntax::distances(&tok.heads)?;
        let type0 = syntax::build_type_matrix(&tok.heads, &tok.dep_label_ids, num_types)?;

        buf.write_u32::<LittleEndian>(n as u32).unwrap();
        for &w in &tok.word_ids {
            buf.write_u32::<LittleEndian>(w).unwrap();
        }
        for &p in &tok.pos_ids {
            buf.write_u32::<LittleEndian>(p).unwrap();
        }
        for &r in &tok.rel_positions {
            buf.write_i32::<LittleEndian>(r).unwrap();
        }
        for &m in &tok.aspect_mask {
            buf.push(m as u8);
        }
        buf.write_u32::<LittleEndian>(tok.label_id).unwrap();
        for &h in &tok.heads {
            buf.write_i64::<LittleEndian>(h).unwrap();
        }
        for &d in &tok.dep_label_ids {
            buf.write_u32::<LittleEndian>(d).unwrap();
        }
        for &d in dist.d.iter() {
            buf.write_u16::<LittleEndian>(d).unwrap();
        }
        for &t in type0.ids.iter() {
            buf.write_u32::<LittleEndian>(t).unwrap();
        }
    }

    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    write_atomic(path, &buf)
}

/// Reads and verifies an archive, rebuilding masks and partitions.
/// `expected_hash` guards against stale caches from a different config.
pub fn read_features(path: &Path, expected_hash: Option<&[u8; 32]>) -> Result<CacheContents> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 32 {
        return Err(archive_error(path, "file shorter than its checksum"));
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
        .map_err(|_| archive_error(path, "truncated header"))?;
    if &magic != MAGIC {
        return Err(archive_error(path, "bad magic; not a feature archive"));
    }
    let version = cur
        .read_u32::<LittleEndian>()
        .map_err(|_| archive_error(path, "truncated header"))?;
    if version != VERSION {
        return Err(archive_error(
            path,
            format!("unsupported archive version {}", version),
        ));
    }
    let mut config_hash = [0u8; 32];
    cur.read_exact(&mut config_hash)
        .map_err(|_| archive_error(path, "truncated header"))?;
    if let Some(expected) = expected_hash {
        if expected != &config_hash {
            return Err(Error::CacheMismatch(format!(
                "archive {} was built under a different config",
                path.display()
            )));
        }
    }
    let views = cur
        .read_u32::<LittleEndian>()
        .map_err(|_| archive_error(path, "truncated header"))? as usize;
    let num_types = cur
        .read_u32::<LittleEndian>()
        .map_err(|_| archive_error(path, "truncated header"))? as usize;
    let count = cur
        .read_u64::<LittleEndian>()
        .map_err(|_| archive_error(path, "truncated header"))? as usize;

    let mut bundles = Vec::with_capacity(count);
    for idx in 0..count {
        let bad = |what: &str| archive_error(path, format!("example {}: truncated {}", idx, what));
        let n = cur.read_u32::<LittleEndian>().map_err(|_| bad("length"))? as usize;
        let mut word_ids = vec![0u32; n];
        let mut pos_ids = vec![0u32; n];
        let mut rel_positions = vec![0i32; n];
        let mut aspect_mask = vec![false; n];
        let mut heads = vec![0i64; n];
        let mut dep_label_ids = vec![0u32; n];
        for w in word_ids.iter_mut() {
            *w = cur.read_u32::<LittleEndian>().map_err(|_| bad("word ids"))?;
        }
        for p in pos_ids.iter_mut() {
            *p = cur.read_u32::<LittleEndian>().map_err(|_| bad("pos ids"))?;
        }
        for r in rel_positions.iter_mut() {
            *r = cur.read_i32::<LittleEndian>().map_err(|_| bad("positions"))?;
        }
        for m in aspect_mask.iter_mut() {
            *m = cur.read_u8().map_err(|_| bad("aspect mask"))? != 0;
        }
        let label_id = cur.read_u32::<LittleEndian>().map_err(|_| bad("label"))?;
        for h in heads.iter_mut() {
            *h = cur.read_i64::<LittleEndian>().map_err(|_| bad("heads"))?;
        }
        for d in dep_label_ids.iter_mut() {
            *d = cur.read_u32::<LittleEndian>().map_err(|_| bad("dep ids"))?;
        }
        let mut dist = Array2::<u16>::zeros((n, n));
        for cell in dist.iter_mut() {
            *cell = cur.read_u16::<LittleEndian>().map_err(|_| bad("distances"))?;
        }
        let mut type_ids = Array2::<u32>::zeros((n, n));
        for cell in type_ids.iter_mut() {
            *cell = cur.read_u32::<LittleEndian>().map_err(|_| bad("type matrix"))?;
        }

        let tok = TokenizedExample {
            word_ids,
            pos_ids,
            rel_positions,
            aspect_mask,
            label_id,
            heads,
            dep_label_ids,
        };
        let dist = DistanceMatrix { d: dist };
        let masks = syntax::build_masks(&dist, views);
        let partition = syntax::build_partition(&tok.dep_label_ids, num_types)?;
        bundles.push(FeatureBundle {
            tok,
            syn: SyntacticFeatures {
                dist,
                masks,
                type0: TypeMatrix0 { ids: type_ids },
                partition,
            },
        });
    }
    if cur.position() as usize != body.len() {
        return Err(archive_error(path, "trailing bytes after last example"));
    }
    Ok(CacheContents {
        config_hash,
        views,
        num_types,
        bundles,
    })
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    kind: VocabKind,
    tokens: Vec<String>,
}

pub fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let file = VocabFile {
        kind: vocab.kind,
        tokens: vocab.tokens().to_vec(),
    };
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::Other(format!("vocab serialization: {}", e)))?;
    write_atomic(path, json.as_bytes())
}

pub fn read_vocab(path: &Path, kind: VocabKind) -> Result<Vocabulary> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let file: VocabFile = serde_json::from_slice(&bytes)
        .map_err(|e| archive_error(path, format!("vocab parse: {}", e)))?;
    if file.kind != kind {
        return Err(archive_error(
            path,
            format!("expected {:?} vocabulary, found {:?}", kind, file.kind),
        ));
    }
    Vocabulary::from_tokens(kind, file.tokens)
}
