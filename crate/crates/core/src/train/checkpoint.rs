//! Parameter snapshots: a sequence of `(u32 name length, name, EPT1 tensor)`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Module;
use crate::tensor::{read_ept1, write_ept1, DType};

pub fn save_params(module: &impl Module, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for p in module.parameters() {
        let name = p.name().as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes()).map_err(|e| Error::io(path, e))?;
        w.write_all(name).map_err(|e| Error::io(path, e))?;
        write_ept1(&mut w, p.tensor(), DType::native())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads a snapshot into a module of identical structure.
pub fn load_params(module: &mut impl Module, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    for p in module.parameters_mut() {
        let mut len = [0u8; 4];
        r.read_exact(&mut len).map_err(|e| Error::Format(format!("{}: truncated before {}: {e}", path.display(), p.name())))?;
        let mut name = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut name).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if name != p.name().as_bytes() {
            return Err(Error::Format(format!(
                "{}: expected parameter {}, found {}",
                path.display(),
                p.name(),
                String::from_utf8_lossy(&name)
            )));
        }
        let t = read_ept1(&mut r)?;
        if t.shape() != p.shape() {
            return Err(Error::Format(format!("{}: {} has shape {:?}, expected {:?}", path.display(), p.name(), t.shape(), p.shape())));
        }
        p.set_data(t.to_vec())?;
    }
    Ok(())
}
