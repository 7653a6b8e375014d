//! Named-tensor weight file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "XRSW"
//! version u32      1
//! seed    u64      init seed recorded at creation
//! count   u32      number of tensors
//! crc32   u32      CRC-32 over every tensor payload, in table order
//! entry*  name_len u16, name utf-8, rank u8, dims u32*rank, f32-le payload
//! ```

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crossres_tensor::Tensor;

use crate::error::ModelError;
use crate::fusion::SynthModel;

const MAGIC: &[u8; 4] = b"XRSW";
const VERSION: u32 = 1;

#[derive(Debug)]
pub struct WeightEntry {
    pub name: String,
    pub tensor: Tensor,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io { path: path.display().to_string(), source }
}

pub fn write_weight_file(
    path: impl AsRef<Path>,
    seed: u64,
    entries: &[(String, &Tensor)],
) -> Result<(), ModelError> {
    let path = path.as_ref();
    let mut crc = crc32fast::Hasher::new();
    for (_, t) in entries {
        for v in t.data() {
            crc.update(&v.to_le_bytes());
        }
    }
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC).map_err(io_err(path))?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err(path))?;
    w.write_all(&seed.to_le_bytes()).map_err(io_err(path))?;
    w.write_all(&(entries.len() as u32).to_le_bytes()).map_err(io_err(path))?;
    w.write_all(&crc.finalize().to_le_bytes()).map_err(io_err(path))?;
    for (name, t) in entries {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u16).to_le_bytes()).map_err(io_err(path))?;
        w.write_all(name_bytes).map_err(io_err(path))?;
        w.write_all(&[t.shape().len() as u8]).map_err(io_err(path))?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes()).map_err(io_err(path))?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes()).map_err(io_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

pub fn read_weight_file(path: impl AsRef<Path>) -> Result<(u64, Vec<WeightEntry>), ModelError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err(path))?;
    if &magic != MAGIC {
        return Err(ModelError::WeightFormat(format!("bad magic {magic:02x?}")));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(io_err(path))?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(ModelError::WeightFormat(format!("unsupported version {version}")));
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf).map_err(io_err(path))?;
    let seed = u64::from_le_bytes(u64buf);
    r.read_exact(&mut u32buf).map_err(io_err(path))?;
    let count = u32::from_le_bytes(u32buf) as usize;
    r.read_exact(&mut u32buf).map_err(io_err(path))?;
    let stored_crc = u32::from_le_bytes(u32buf);

    let mut entries = Vec::with_capacity(count);
    let mut crc = crc32fast::Hasher::new();
    for _ in 0..count {
        let mut u16buf = [0u8; 2];
        r.read_exact(&mut u16buf).map_err(io_err(path))?;
        let name_len = u16::from_le_bytes(u16buf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes).map_err(io_err(path))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| ModelError::WeightFormat(format!("name not utf-8: {e}")))?;
        let mut rank = [0u8; 1];
        r.read_exact(&mut rank).map_err(io_err(path))?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            r.read_exact(&mut u32buf).map_err(io_err(path))?;
            shape.push(u32::from_le_bytes(u32buf) as usize);
        }
        let n: usize = shape.iter().product();
        let mut payload = vec![0u8; n * 4];
        r.read_exact(&mut payload).map_err(io_err(path))?;
        crc.update(&payload);
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if entries.iter().any(|e: &WeightEntry| e.name == name) {
            return Err(ModelError::WeightFormat(format!("duplicate tensor name {name}")));
        }
        entries.push(WeightEntry { name, tensor: Tensor::new(shape, data)? });
    }
    let computed = crc.finalize();
    if computed != stored_crc {
        return Err(ModelError::Checksum { stored: stored_crc, computed });
    }
    Ok((seed, entries))
}

impl SynthModel {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        write_weight_file(path, self.seed, &self.params())
    }

    /// Load weights into `self`, requiring exact name coverage: every model
    /// parameter present once, nothing extra, shapes matching.
    pub fn load_into(&mut self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let (seed, entries) = read_weight_file(path)?;
        let mut params = self.params_mut();
        let mut missing = Vec::new();
        for (name, tensor) in params.iter_mut() {
            match entries.iter().find(|e| &e.name == name) {
                None => missing.push(name.clone()),
                Some(e) => {
                    if e.tensor.shape() != tensor.shape() {
                        return Err(ModelError::WeightShape {
                            name: name.clone(),
                            expected: tensor.shape().to_vec(),
                            got: e.tensor.shape().to_vec(),
                        });
                    }
                    **tensor = e.tensor.clone();
                }
            }
        }
        let known: Vec<&String> = params.iter().map(|(n, _)| n).collect();
        let extra: Vec<String> = entries
            .iter()
            .map(|e| e.name.clone())
            .filter(|n| !known.iter().any(|k| *k == n))
            .collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(ModelError::WeightCoverage { missing, extra });
        }
        self.seed = seed;
        Ok(())
    }
}
