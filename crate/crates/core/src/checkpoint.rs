//! Tensor checkpoint files: a 16-byte header of four little-endian u32
//! extents (N, C, H, W) followed by the values as little-endian f32 in
//! row-major order. A plain-text manifest maps parameter names to files
//! and shapes, one `name\tfilename\tN C H W` line per parameter.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn save_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + tensor.len() * 4);
    for extent in tensor.shape() {
        buf.extend_from_slice(&(extent as u32).to_le_bytes());
    }
    for v in tensor.data() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 16 {
        return Err(Error::Format(format!(
            "{}: shorter than the 16-byte header",
            path.display()
        )));
    }
    let mut shape = [0usize; 4];
    for (i, s) in shape.iter_mut().enumerate() {
        *s = u32::from_le_bytes(bytes[i * 4..i * 4 + 4].try_into().unwrap()) as usize;
    }
    let len: usize = shape.iter().product();
    if bytes.len() != 16 + len * 4 {
        return Err(Error::Format(format!(
            "{}: expected {} payload bytes for shape {:?}, found {}",
            path.display(),
            len * 4,
            shape,
            bytes.len() - 16
        )));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Tensor::from_vec(shape, data)
}

/// One manifest entry: a named parameter stored in its own file.
#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub name: String,
    pub filename: String,
    pub shape: [usize; 4],
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format!(
            "{}\t{}\t{} {} {} {}\n",
            e.name, e.filename, e.shape[0], e.shape[1], e.shape[2], e.shape[3]
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path)?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Format(format!(
                "{}:{}: expected 3 tab-separated fields",
                path.display(),
                lineno + 1
            )));
        }
        let extents: Vec<usize> = fields[2]
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| {
                Error::Format(format!("{}:{}: bad shape: {}", path.display(), lineno + 1, e))
            })?;
        if extents.len() != 4 {
            return Err(Error::Format(format!(
                "{}:{}: shape must have 4 extents",
                path.display(),
                lineno + 1
            )));
        }
        entries.push(ManifestEntry {
            name: fields[0].to_string(),
            filename: fields[1].to_string(),
            shape: [extents[0], extents[1], extents[2], extents[3]],
        });
    }
    Ok(entries)
}

/// Saves a set of named tensors next to a `manifest.txt` in `dir`.
pub fn save_checkpoint(dir: &Path, tensors: &[(String, &Tensor)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for (name, tensor) in tensors {
        let filename = format!("{}.bin", name.replace(['/', '.'], "_"));
        save_tensor(&dir.join(&filename), tensor)?;
        entries.push(ManifestEntry {
            name: name.clone(),
            filename,
            shape: tensor.shape(),
        });
    }
    write_manifest(&dir.join("manifest.txt"), &entries)
}

/// Loads every tensor listed in `dir/manifest.txt`, in manifest order.
pub fn load_checkpoint(dir: &Path) -> Result<Vec<(String, Tensor)>> {
    let manifest = read_manifest(&dir.join("manifest.txt"))?;
    let mut tensors = Vec::with_capacity(manifest.len());
    for entry in manifest {
        let path: PathBuf = dir.join(&entry.filename);
        let tensor = load_tensor(&path)?;
        if tensor.shape() != entry.shape {
            return Err(Error::Format(format!(
                "{}: shape {:?} disagrees with manifest {:?}",
                path.display(),
                tensor.shape(),
                entry.shape
            )));
        }
        tensors.push((entry.name, tensor));
    }
    Ok(tensors)
}
