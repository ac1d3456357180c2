//! Weights file: little-endian header of config key/values followed by named
//! parameter blocks (`name`, `shape`, row-major `f32` data).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::array::Array;
use crate::error::{NnError, Result};
use crate::params::ParamStore;

pub const MAGIC: &[u8; 4] = b"CKW1";
pub const FORMAT_VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_str(w: &mut impl Write, s: &str) -> Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_str(r: &mut impl Read) -> Result<String> {
    let n = get_u32(r)? as usize;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| NnError::Format(e.to_string()))
}

pub fn write_weights(
    w: &mut impl Write,
    config: &[(String, String)],
    store: &ParamStore<f32>,
) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u32(w, FORMAT_VERSION)?;
    put_u32(w, config.len() as u32)?;
    for (k, v) in config {
        put_str(w, k)?;
        put_str(w, v)?;
    }
    put_u32(w, store.len() as u32)?;
    for id in store.ids() {
        let arr = store.get(id);
        put_str(w, store.name(id))?;
        put_u32(w, arr.shape().len() as u32)?;
        for &d in arr.shape() {
            put_u32(w, d as u32)?;
        }
        for v in arr.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub type WeightsFile = (Vec<(String, String)>, ParamStore<f32>);

pub fn read_weights(r: &mut impl Read) -> Result<WeightsFile> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Format("bad magic".into()));
    }
    let version = get_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(NnError::Format(format!("unsupported version {version}")));
    }
    let n_cfg = get_u32(r)?;
    let mut config = Vec::with_capacity(n_cfg as usize);
    for _ in 0..n_cfg {
        let k = get_str(r)?;
        let v = get_str(r)?;
        config.push((k, v));
    }
    let n_params = get_u32(r)?;
    let mut store = ParamStore::new();
    for _ in 0..n_params {
        let name = get_str(r)?;
        let ndim = get_u32(r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(get_u32(r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        store.insert(name, Array::new(shape, data)?)?;
    }
    Ok((config, store))
}

pub fn save_weights(path: &Path, config: &[(String, String)], store: &ParamStore<f32>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_weights(&mut w, config, store)?;
    w.flush()?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<WeightsFile> {
    read_weights(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_little_endian_and_round_trips() {
        let mut store = ParamStore::<f32>::new();
        store
            .insert("w", Array::matrix(1, 2, vec![1.0, -2.5]).unwrap())
            .unwrap();
        let cfg = vec![("embed_dim".to_string(), "64".to_string())];
        let mut buf = Vec::new();
        write_weights(&mut buf, &cfg, &store).unwrap();
        assert_eq!(&buf[..4], b"CKW1");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[buf.len() - 4..], &(-2.5f32).to_le_bytes());
        let (cfg2, store2) = read_weights(&mut buf.as_slice()).unwrap();
        assert_eq!(cfg2, cfg);
        assert_eq!(store2.get(store2.id("w").unwrap()).data(), &[1.0, -2.5]);
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_weights(&mut &b"nope...."[..]).is_err());
    }
}
