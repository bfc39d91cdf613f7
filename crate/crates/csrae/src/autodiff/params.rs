use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use crate::autodiff::Value;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CSRAEPRM";

/// Named parameter collection with stable iteration order.
#[derive(Default)]
pub struct ParamStore {
    order: Vec<String>,
    params: HashMap<String, Value>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Value) -> Value {
        let name = name.into();
        assert!(
            !self.params.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.order.push(name.clone());
        self.params.insert(name, value.clone());
        value
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.params.get(name)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.order.iter().map(|n| (n.as_str(), &self.params[n]))
    }

    pub fn zero_grads(&self) {
        for (_, v) in self.iter() {
            v.zero_grad();
        }
    }

    pub fn total_len(&self) -> usize {
        self.iter()
            .map(|(_, v)| {
                let (r, c) = v.shape();
                r * c
            })
            .sum()
    }

    /// Flat binary checkpoint: header with names and shapes, then raw
    /// little-endian f64 values. Round trips are bit exact.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(self.order.len() as u32)?;
        for (name, v) in self.iter() {
            let (rows, cols) = v.shape();
            w.write_u32::<LittleEndian>(name.len() as u32)?;
            w.write_all(name.as_bytes())?;
            w.write_u32::<LittleEndian>(rows as u32)?;
            w.write_u32::<LittleEndian>(cols as u32)?;
        }
        w.write_u64::<LittleEndian>(self.total_len() as u64)?;
        for (_, v) in self.iter() {
            for x in v.data().iter() {
                w.write_f64::<LittleEndian>(*x)?;
            }
        }
        Ok(())
    }

    /// Loads values from a checkpoint into the existing parameters; names
    /// and shapes must match exactly.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Data(format!(
                "bad checkpoint magic in {}",
                path.display()
            )));
        }
        let count = r.read_u32::<LittleEndian>()? as usize;
        if count != self.order.len() {
            return Err(Error::Data(format!(
                "checkpoint has {count} parameters, store has {}",
                self.order.len()
            )));
        }
        let mut shapes = Vec::with_capacity(count);
        for expected in &self.order {
            let name_len = r.read_u32::<LittleEndian>()? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Data("bad name".into()))?;
            let rows = r.read_u32::<LittleEndian>()? as usize;
            let cols = r.read_u32::<LittleEndian>()? as usize;
            if &name != expected {
                return Err(Error::Data(format!(
                    "checkpoint parameter {name}, expected {expected}"
                )));
            }
            let (er, ec) = self.params[expected].shape();
            if (rows, cols) != (er, ec) {
                return Err(Error::ShapeMismatch(format!(
                    "checkpoint {name} is {rows}x{cols}, store has {er}x{ec}"
                )));
            }
            shapes.push((rows, cols));
        }
        let total = r.read_u64::<LittleEndian>()? as usize;
        if total != self.total_len() {
            return Err(Error::Data("checkpoint value count mismatch".into()));
        }
        for (name, (rows, cols)) in self.order.clone().iter().zip(shapes) {
            let mut buf = vec![0.0; rows * cols];
            for x in &mut buf {
                *x = r.read_f64::<LittleEndian>()?;
            }
            let arr = Array2::from_shape_vec((rows, cols), buf)
                .map_err(|e| Error::Data(e.to_string()))?;
            self.params[name].set_data(arr);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.bin");
        let mut store = ParamStore::new();
        store.insert(
            "w",
            Value::new(Array2::from_shape_fn((3, 2), |(i, j)| {
                (i as f64 + 0.1) * (j as f64 - 0.7) + 1e-13
            })),
        );
        store.insert("b", Value::row(&[0.25, -1.5e-300]));
        store.save(&path).unwrap();

        let mut other = ParamStore::new();
        other.insert("w", Value::new(Array2::zeros((3, 2))));
        other.insert("b", Value::row(&[0.0, 0.0]));
        other.load(&path).unwrap();
        for ((_, a), (_, b)) in store.iter().zip(other.iter()) {
            assert_eq!(
                a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn load_rejects_mismatched_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.bin");
        let mut store = ParamStore::new();
        store.insert("w", Value::new(Array2::zeros((2, 2))));
        store.save(&path).unwrap();
        let mut other = ParamStore::new();
        other.insert("w", Value::new(Array2::zeros((2, 3))));
        assert!(other.load(&path).is_err());
    }
}
