//! Structured array archives: a `manifest.json` describing named numeric
//! arrays plus one raw little-endian binary file per array. Archives are
//! plain directories (writable) or zip files (read-only). The body-model
//! parameters, attachment maps, pose-prior weights, and per-frame vertex
//! offsets all travel in this format.

use std::collections::HashMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub arrays: Vec<ArrayEntry>,
    #[serde(default)]
    pub meta: HashMap<String, String>,
}

/// An archive loaded into memory: every array as f64 with its shape.
#[derive(Debug, Clone, Default)]
pub struct ArrayArchive {
    arrays: HashMap<String, (Vec<usize>, Vec<f64>)>,
    pub meta: HashMap<String, String>,
}

impl ArrayArchive {
    pub fn new() -> Self {
        ArrayArchive::default()
    }

    pub fn insert(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        self.arrays.insert(name.to_string(), (shape, data));
    }

    pub fn remove(&mut self, name: &str) {
        self.arrays.remove(name);
    }

    pub fn names(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.arrays.keys().map(|s| s.as_str()).collect();
        v.sort_unstable();
        v
    }

    pub fn contains(&self, name: &str) -> bool {
        self.arrays.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<(&[usize], &[f64])> {
        self.arrays
            .get(name)
            .map(|(s, d)| (s.as_slice(), d.as_slice()))
            .ok_or_else(|| Error::Load(format!("{name} absent")))
    }

    /// Fetch and check the exact shape.
    pub fn get_shaped(&self, name: &str, shape: &[usize]) -> Result<&[f64]> {
        let (s, d) = self.get(name)?;
        if s != shape {
            return Err(Error::Dimension(format!(
                "{name}: expected shape {shape:?}, archive has {s:?}"
            )));
        }
        Ok(d)
    }

    /// Load from a directory or a `.zip` file.
    pub fn load(path: &Path) -> Result<Self> {
        if path.is_dir() {
            Self::load_with(|file| {
                let p = path.join(file);
                std::fs::read(&p).map_err(|e| Error::io(&p, e))
            })
        } else if path.extension().and_then(|e| e.to_str()) == Some("zip") {
            let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
            let mut zip = zip::ZipArchive::new(file)
                .map_err(|e| Error::Load(format!("bad zip archive {}: {e}", path.display())))?;
            // read everything up front; zip entries are not seekable by name twice cheaply
            let mut blobs: HashMap<String, Vec<u8>> = HashMap::new();
            for i in 0..zip.len() {
                let mut entry = zip
                    .by_index(i)
                    .map_err(|e| Error::Load(format!("zip entry {i}: {e}")))?;
                let mut buf = Vec::new();
                entry
                    .read_to_end(&mut buf)
                    .map_err(|e| Error::io(path, e))?;
                // tolerate a single top-level folder inside the zip
                let name = entry.name().rsplit('/').next().unwrap_or("").to_string();
                blobs.insert(name, buf);
            }
            Self::load_with(move |file| {
                blobs
                    .get(file)
                    .cloned()
                    .ok_or_else(|| Error::Load(format!("{file} absent from zip")))
            })
        } else {
            Err(Error::Load(format!(
                "archive path {} is neither a directory nor a .zip file",
                path.display()
            )))
        }
    }

    fn load_with(read: impl Fn(&str) -> Result<Vec<u8>>) -> Result<Self> {
        let manifest_bytes = read("manifest.json")?;
        let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
            .map_err(|e| Error::Load(format!("bad manifest.json: {e}")))?;
        let mut arrays = HashMap::new();
        for entry in &manifest.arrays {
            let bytes = read(&entry.file)?;
            let n: usize = entry.shape.iter().product();
            let data: Vec<f64> = match entry.dtype.as_str() {
                "f32" => {
                    if bytes.len() != n * 4 {
                        return Err(Error::Dimension(format!(
                            "{}: {} bytes for {} f32 values",
                            entry.name,
                            bytes.len(),
                            n
                        )));
                    }
                    bytes
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                        .collect()
                }
                "f64" => {
                    if bytes.len() != n * 8 {
                        return Err(Error::Dimension(format!(
                            "{}: {} bytes for {} f64 values",
                            entry.name,
                            bytes.len(),
                            n
                        )));
                    }
                    bytes
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect()
                }
                other => {
                    return Err(Error::Load(format!(
                        "{}: unsupported dtype '{other}'",
                        entry.name
                    )));
                }
            };
            arrays.insert(entry.name.clone(), (entry.shape.clone(), data));
        }
        Ok(ArrayArchive {
            arrays,
            meta: manifest.meta,
        })
    }

    /// Write as a directory of f32 arrays plus manifest.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        self.save_dir_dtype(dir, "f32")
    }

    pub fn save_dir_dtype(&self, dir: &Path, dtype: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::new();
        let mut names: Vec<&String> = self.arrays.keys().collect();
        names.sort();
        for name in names {
            let (shape, data) = &self.arrays[name];
            let file = format!("{name}.bin");
            let path = dir.join(&file);
            let bytes: Vec<u8> = match dtype {
                "f32" => data.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect(),
                "f64" => data.iter().flat_map(|&v| v.to_le_bytes()).collect(),
                other => return Err(Error::Invalid(format!("unsupported dtype '{other}'"))),
            };
            std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            entries.push(ArrayEntry {
                name: name.clone(),
                shape: shape.clone(),
                dtype: dtype.to_string(),
                file,
            });
        }
        let manifest = Manifest {
            arrays: entries,
            meta: self.meta.clone(),
        };
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }
}

/// Raw float32 image/feature blob with a JSON sidecar describing its layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawSidecar {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub layout: String,
}

/// Write `data` as raw little-endian f32 at `path` with `path.json` sidecar.
pub fn save_raw_f32(path: &Path, shape: &[usize], layout: &str, data: &[f32]) -> Result<()> {
    assert_eq!(shape.iter().product::<usize>(), data.len());
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let sidecar = RawSidecar {
        shape: shape.to_vec(),
        dtype: "f32".into(),
        layout: layout.into(),
    };
    let sc_path = sidecar_path(path);
    std::fs::write(
        &sc_path,
        serde_json::to_string(&sidecar).expect("sidecar serializes"),
    )
    .map_err(|e| Error::io(&sc_path, e))
}

pub fn load_raw_f32(path: &Path) -> Result<(RawSidecar, Vec<f32>)> {
    let sc_path = sidecar_path(path);
    let sidecar: RawSidecar = serde_json::from_slice(
        &std::fs::read(&sc_path).map_err(|e| Error::io(&sc_path, e))?,
    )
    .map_err(|e| Error::Load(format!("bad sidecar {}: {e}", sc_path.display())))?;
    if sidecar.dtype != "f32" {
        return Err(Error::Load(format!(
            "{}: unsupported dtype '{}'",
            path.display(),
            sidecar.dtype
        )));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let n: usize = sidecar.shape.iter().product();
    if bytes.len() != n * 4 {
        return Err(Error::Dimension(format!(
            "{}: {} bytes for {} f32 values",
            path.display(),
            bytes.len(),
            n
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((sidecar, data))
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}
