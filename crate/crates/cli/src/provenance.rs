use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SOFTWARE: &str = concat!("slr ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub name: String,
    pub path: String,
    pub sha256: String,
}

/// Attached to every output file.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub software: String,
    pub command: String,
    pub specs: Vec<String>,
    pub inputs: Vec<InputDigest>,
    /// Effective settings, output directory excluded.
    pub settings: Vec<(String, String)>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest of a file, or of a directory's regular files in name order
/// (name and content both hashed).
pub fn digest_path(path: &Path) -> Result<String, CliError> {
    let mut h = Sha256::new();
    if path.is_dir() {
        let mut entries: Vec<_> = fs::read_dir(path)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        entries.sort();
        for p in entries {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            h.update(name.as_bytes());
            h.update([0]);
            h.update(fs::read(&p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?);
        }
    } else {
        h.update(fs::read(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?);
    }
    Ok(hex(&h.finalize()))
}

impl Provenance {
    pub fn new(command: &str, specs: Vec<String>, settings: &std::collections::BTreeMap<String, String>) -> Self {
        Self {
            software: SOFTWARE.to_string(),
            command: command.to_string(),
            specs,
            inputs: Vec::new(),
            settings: settings
                .iter()
                .filter(|(k, _)| k.as_str() != "out" && k.as_str() != "config")
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn add_input(&mut self, name: &str, path: &Path) -> Result<(), CliError> {
        self.inputs.push(InputDigest {
            name: name.to_string(),
            path: path.display().to_string(),
            sha256: digest_path(path)?,
        });
        Ok(())
    }

    pub fn with_specs(&self, specs: &[&str]) -> Self {
        let mut p = self.clone();
        p.specs = specs.iter().map(|s| s.to_string()).collect();
        p
    }

    /// `#`-prefixed header lines for CSV outputs.
    pub fn csv_header(&self) -> String {
        let mut s = format!("# software: {}\n# command: {}\n", self.software, self.command);
        if !self.specs.is_empty() {
            s.push_str(&format!("# spec: {}\n", self.specs.join(",")));
        }
        for i in &self.inputs {
            s.push_str(&format!("# input: {} {} sha256={}\n", i.name, i.path, i.sha256));
        }
        s
    }
}

/// Writes a CSV body produced by `body` behind the provenance header.
pub fn write_csv<F>(path: &Path, prov: &Provenance, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut Vec<u8>) -> slr_core::Result<()>,
{
    let mut buf = prov.csv_header().into_bytes();
    body(&mut buf)?;
    write_bytes(path, &buf)
}

/// Writes `{"provenance": ..., <fields of value>}` as pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, prov: &Provenance, value: &T) -> Result<(), CliError> {
    let mut v = serde_json::to_value(value).map_err(slr_core::Error::from)?;
    let p = serde_json::to_value(prov).map_err(slr_core::Error::from)?;
    let obj = match v.as_object_mut() {
        Some(o) => {
            let mut m = serde_json::Map::new();
            m.insert("provenance".into(), p);
            m.extend(std::mem::take(o));
            m
        }
        None => {
            let mut m = serde_json::Map::new();
            m.insert("provenance".into(), p);
            m.insert("result".into(), v);
            m
        }
    };
    let mut bytes = serde_json::to_vec_pretty(&serde_json::Value::Object(obj)).map_err(slr_core::Error::from)?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut f = fs::File::create(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    f.write_all(bytes)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}
