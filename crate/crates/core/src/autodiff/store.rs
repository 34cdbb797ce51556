//! Named parameter storage and the binary checkpoint format.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

/// Every trainable weight, addressable by name, with one gradient slot per
/// parameter. Insertion order is preserved and is the order optimizers and
/// checkpoints traverse, so runs stay deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    names: Vec<String>,
    values: Vec<Tensor2>,
    grads: Vec<Option<Tensor2>>,
    index: HashMap<String, usize>,
}

impl ParameterStore {
    const MAGIC: &'static [u8; 4] = b"TGFP";
    const VERSION: u32 = 1;

    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn insert(&mut self, name: &str, value: Tensor2) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.values.push(value);
        self.grads.push(None);
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Option<&Tensor2> {
        self.index_of(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor2> {
        self.index_of(name).map(|i| &mut self.values[i])
    }

    pub fn value_at(&self, idx: usize) -> &Tensor2 {
        &self.values[idx]
    }

    pub fn value_at_mut(&mut self, idx: usize) -> &mut Tensor2 {
        &mut self.values[idx]
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor2> {
        self.index_of(name).and_then(|i| self.grads[i].as_ref())
    }

    pub fn grad_at(&self, idx: usize) -> Option<&Tensor2> {
        self.grads[idx].as_ref()
    }

    pub(crate) fn accumulate_grad(&mut self, idx: usize, delta: &Tensor2) -> Result<()> {
        match &mut self.grads[idx] {
            Some(g) => g.add_assign(delta),
            slot @ None => {
                *slot = Some(delta.clone());
                Ok(())
            }
        }
    }

    /// Parameters the loss never reached get an explicit zero gradient.
    pub(crate) fn fill_missing_grads(&mut self) {
        for (i, g) in self.grads.iter_mut().enumerate() {
            if g.is_none() {
                let (r, c) = self.values[i].shape();
                *g = Some(Tensor2::zeros(r, c));
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    /// Total number of scalar entries across all parameters.
    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(Tensor2::len).sum()
    }

    /// Writes a versioned binary checkpoint: little-endian, name-tagged and
    /// shape-tagged entries in insertion order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(Self::MAGIC)?;
        w.write_all(&Self::VERSION.to_le_bytes())?;
        w.write_all(&(self.names.len() as u64).to_le_bytes())?;
        for (name, value) in self.names.iter().zip(&self.values) {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(value.rows() as u64).to_le_bytes())?;
            w.write_all(&(value.cols() as u64).to_le_bytes())?;
            for v in value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::CheckpointFormat("bad checkpoint magic".into()));
        }
        let mut buf4 = [0u8; 4];
        r.read_exact(&mut buf4)?;
        let version = u32::from_le_bytes(buf4);
        if version != Self::VERSION {
            return Err(Error::CheckpointFormat(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let mut buf8 = [0u8; 8];
        r.read_exact(&mut buf8)?;
        let count = u64::from_le_bytes(buf8) as usize;
        let mut store = Self::new();
        for _ in 0..count {
            r.read_exact(&mut buf4)?;
            let name_len = u32::from_le_bytes(buf4) as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|e| Error::CheckpointFormat(format!("bad name: {e}")))?;
            r.read_exact(&mut buf8)?;
            let rows = u64::from_le_bytes(buf8) as usize;
            r.read_exact(&mut buf8)?;
            let cols = u64::from_le_bytes(buf8) as usize;
            let mut data = vec![0.0; rows * cols];
            for v in &mut data {
                r.read_exact(&mut buf8)?;
                *v = f64::from_le_bytes(buf8);
            }
            let tensor = Tensor2::from_vec(rows, cols, data)
                .map_err(|e| Error::CheckpointFormat(format!("bad tensor: {e}")))?;
            store.insert(&name, tensor)?;
        }
        Ok(store)
    }
}
