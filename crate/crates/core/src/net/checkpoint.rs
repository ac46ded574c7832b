//! Self-describing checkpoint container.
//!
//! Layout: an 8-byte magic, a little-endian u32 header length, a JSON header
//! and the raw little-endian array data. The header carries the kind tag,
//! scalar type, seed, a config echo, the array directory (names and shapes)
//! and an FNV-64 checksum of the data section, so a truncated or corrupted
//! file fails loudly with a diagnostic instead of producing garbage weights.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::param::NetFloat;
use super::{Network, NetworkConfig};

const MAGIC: &[u8; 8] = b"CHKPNET1";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct HeaderArray {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    kind: String,
    dtype: String,
    seed: u64,
    config: serde_json::Value,
    arrays: Vec<HeaderArray>,
    data_checksum: u64,
}

/// One named array in a container.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayEntry<F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

fn fnv64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Write a container atomically (temp file + rename).
pub fn write_container<F: NetFloat>(
    path: &Path,
    kind: &str,
    seed: u64,
    config: &serde_json::Value,
    arrays: &[ArrayEntry<F>],
) -> Result<()> {
    let mut data = Vec::new();
    for a in arrays {
        let expected: usize = a.shape.iter().product();
        if expected != a.data.len() {
            return Err(Error::Checkpoint(format!(
                "array {} shape {:?} does not match {} values",
                a.name,
                a.shape,
                a.data.len()
            )));
        }
        for v in &a.data {
            v.write_le(&mut data);
        }
    }
    let header = Header {
        version: VERSION,
        kind: kind.to_string(),
        dtype: F::DTYPE.to_string(),
        seed,
        config: config.clone(),
        arrays: arrays
            .iter()
            .map(|a| HeaderArray {
                name: a.name.clone(),
                shape: a.shape.clone(),
            })
            .collect(),
        data_checksum: fnv64(&data),
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;

    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(MAGIC).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&(header_bytes.len() as u32).to_le_bytes())
        .map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&header_bytes).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&data).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read a container, verifying magic, kind, scalar type, lengths and the
/// data checksum.
pub fn read_container<F: NetFloat>(
    path: &Path,
    expected_kind: &str,
) -> Result<(u64, serde_json::Value, Vec<ArrayEntry<F>>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < MAGIC.len() + 4 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: not a checkpoint container (bad magic)",
            path.display()
        )));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let data_start = 12 + header_len;
    if bytes.len() < data_start {
        return Err(Error::Checkpoint(format!(
            "{}: truncated header ({} of {} bytes)",
            path.display(),
            bytes.len(),
            data_start
        )));
    }
    let header: Header = serde_json::from_slice(&bytes[12..data_start])
        .map_err(|e| Error::Checkpoint(format!("{}: header: {e}", path.display())))?;
    if header.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported version {}",
            path.display(),
            header.version
        )));
    }
    if header.kind != expected_kind {
        return Err(Error::Checkpoint(format!(
            "{}: kind {:?} where {:?} was expected",
            path.display(),
            header.kind,
            expected_kind
        )));
    }
    if header.dtype != F::DTYPE {
        return Err(Error::Checkpoint(format!(
            "{}: scalar type {} where {} was expected",
            path.display(),
            header.dtype,
            F::DTYPE
        )));
    }
    let total: usize = header
        .arrays
        .iter()
        .map(|a| a.shape.iter().product::<usize>())
        .sum();
    let data = &bytes[data_start..];
    if data.len() != total * F::BYTES {
        return Err(Error::Checkpoint(format!(
            "{}: truncated data section ({} bytes, expected {})",
            path.display(),
            data.len(),
            total * F::BYTES
        )));
    }
    if fnv64(data) != header.data_checksum {
        return Err(Error::Checkpoint(format!(
            "{}: data checksum mismatch",
            path.display()
        )));
    }
    let mut arrays = Vec::with_capacity(header.arrays.len());
    let mut offset = 0;
    for a in header.arrays {
        let len: usize = a.shape.iter().product();
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            values.push(F::read_le(&data[offset..offset + F::BYTES]));
            offset += F::BYTES;
        }
        arrays.push(ArrayEntry {
            name: a.name,
            shape: a.shape,
            data: values,
        });
    }
    Ok((header.seed, header.config, arrays))
}

const NETWORK_KIND: &str = "msnet";

/// Save a network's configuration, seed and named weight arrays.
pub fn save_network<F: NetFloat>(net: &Network<F>, path: &Path) -> Result<()> {
    let config = serde_json::to_value(&net.cfg)
        .map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
    let arrays: Vec<ArrayEntry<F>> = net
        .params()
        .iter()
        .map(|p| ArrayEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            data: p.value.iter().copied().collect(),
        })
        .collect();
    write_container(path, NETWORK_KIND, net.seed, &config, &arrays)
}

/// Load a network, rebuilding it from the embedded config and restoring
/// every named array.
pub fn load_network<F: NetFloat>(path: &Path) -> Result<Network<F>> {
    let (seed, config, arrays) = read_container::<F>(path, NETWORK_KIND)?;
    let cfg: NetworkConfig = serde_json::from_value(config)
        .map_err(|e| Error::Checkpoint(format!("{}: config: {e}", path.display())))?;
    let mut net = Network::build(cfg, seed)?;
    let mut restored = 0usize;
    {
        let mut params = net.params_mut();
        for entry in &arrays {
            let p = params
                .iter_mut()
                .find(|p| p.name == entry.name)
                .ok_or_else(|| {
                    Error::Checkpoint(format!(
                        "{}: unknown array {:?} for this config",
                        path.display(),
                        entry.name
                    ))
                })?;
            if p.value.shape() != entry.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "{}: array {:?} has shape {:?}, expected {:?}",
                    path.display(),
                    entry.name,
                    entry.shape,
                    p.value.shape()
                )));
            }
            for (dst, src) in p.value.iter_mut().zip(entry.data.iter()) {
                *dst = *src;
            }
            restored += 1;
        }
        if restored != params.len() {
            return Err(Error::Checkpoint(format!(
                "{}: {} arrays restored but the config defines {}",
                path.display(),
                restored,
                params.len()
            )));
        }
    }
    Ok(net)
}

/// Load a network and require its configuration to match `expected`.
pub fn load_network_expecting<F: NetFloat>(
    path: &Path,
    expected: &NetworkConfig,
) -> Result<Network<F>> {
    let net = load_network::<F>(path)?;
    if &net.cfg != expected {
        return Err(Error::Checkpoint(format!(
            "{}: checkpoint config does not match the requested config",
            path.display()
        )));
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Head;
    use ndarray::Array4;

    fn tiny_cfg() -> NetworkConfig {
        NetworkConfig {
            input_shape: (8, 10, 3),
            conv_filters: 4,
            mam_strand_filters: 4,
            mam_reduce_filters: 2,
            dense_units: (8, 6, 5),
            dropout: 0.0,
            weight_decay: 0.0,
            learning_rate: 0.001,
            head: Head::Metric,
        }
    }

    fn random_input(n: usize) -> Array4<f32> {
        let mut x = Array4::<f32>::zeros((n, 3, 8, 10));
        for (i, v) in x.iter_mut().enumerate() {
            *v = ((i * 2_654_435_761usize) % 1000) as f32 / 1000.0 - 0.5;
        }
        x
    }

    #[test]
    fn round_trip_reproduces_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net = Network::<f32>::build(tiny_cfg(), 11).unwrap();
        save_network(&net, &path).unwrap();
        let restored = load_network::<f32>(&path).unwrap();
        let x = random_input(10);
        let a = net.embed_batch(&x).unwrap();
        let b = restored.embed_batch(&x).unwrap();
        for (u, v) in a.iter().zip(b.iter()) {
            assert!((u - v).abs() < 1e-6);
        }
    }

    #[test]
    fn mismatched_config_is_an_explicit_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net = Network::<f32>::build(tiny_cfg(), 1).unwrap();
        save_network(&net, &path).unwrap();
        let mut other = tiny_cfg();
        other.dense_units = (8, 6, 7);
        assert!(matches!(
            load_network_expecting::<f32>(&path, &other),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn truncated_file_errors_without_crash() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net = Network::<f32>::build(tiny_cfg(), 1).unwrap();
        save_network(&net, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        for cut in [4usize, 11, bytes.len() / 2, bytes.len() - 3] {
            std::fs::write(&path, &bytes[..cut]).unwrap();
            assert!(
                matches!(load_network::<f32>(&path), Err(Error::Checkpoint(_))),
                "cut at {cut} must error"
            );
        }
    }

    #[test]
    fn corrupted_data_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net = Network::<f32>::build(tiny_cfg(), 1).unwrap();
        save_network(&net, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        let err = load_network::<f32>(&path).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }

    #[test]
    fn dtype_mismatch_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net = Network::<f32>::build(tiny_cfg(), 1).unwrap();
        save_network(&net, &path).unwrap();
        assert!(matches!(
            load_network::<f64>(&path),
            Err(Error::Checkpoint(_))
        ));
    }
}
