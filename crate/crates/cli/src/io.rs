//! Output placement, manifests and CSV helpers shared by the commands.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use uqss::manifest::RunManifest;

pub const OUT_ROOT_ENV: &str = "UQSS_OUT_ROOT";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<uqss::Error> for CliError {
    fn from(e: uqss::Error) -> Self {
        use uqss::Error as E;
        match e {
            E::Config(_) | E::InvalidArgument(_) | E::UnknownColumn(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

pub type CliResult<T = ()> = std::result::Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn runtime(msg: impl Into<String>) -> CliError {
    CliError::Runtime(msg.into())
}

/// Relative outputs land under `$UQSS_OUT_ROOT` when set.
pub fn resolve_out(path: &Path) -> PathBuf {
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) if path.is_relative() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

/// Refuses to touch anything that already exists.
pub fn ensure_fresh(path: &Path) -> CliResult {
    if path.exists() {
        return Err(runtime(format!(
            "{} already exists; outputs are never overwritten",
            path.display()
        )));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| runtime(format!("{}: {e}", parent.display())))?;
    }
    Ok(())
}

pub fn sidecar_manifest(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

/// Writes a single output file plus its sidecar manifest.
pub fn write_file_output(path: &Path, contents: &str, manifest: &mut RunManifest) -> CliResult {
    ensure_fresh(path)?;
    let side = sidecar_manifest(path);
    ensure_fresh(&side)?;
    fs::write(path, contents).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
    manifest.add_output(path, name)?;
    manifest.write(&side)?;
    Ok(())
}

/// A directory being filled: built under a hidden staging name, renamed into
/// place on success, moved to `failed/` next to it on failure.
pub struct Staging {
    pub target: PathBuf,
    pub dir: PathBuf,
}

impl Staging {
    pub fn begin(target: &Path) -> CliResult<Self> {
        ensure_fresh(target)?;
        let name = target
            .file_name()
            .ok_or_else(|| usage(format!("bad output directory {}", target.display())))?
            .to_string_lossy()
            .into_owned();
        let dir = target.with_file_name(format!(".{name}.partial-{}", std::process::id()));
        Ok(Self {
            target: target.to_path_buf(),
            dir,
        })
    }

    pub fn create(&self) -> CliResult {
        fs::create_dir(&self.dir).map_err(|e| runtime(format!("{}: {e}", self.dir.display())))
    }

    pub fn commit(self) -> CliResult {
        fs::rename(&self.dir, &self.target)
            .map_err(|e| runtime(format!("{}: {e}", self.target.display())))
    }

    /// Quarantines the partial output, if any, and returns where it went.
    pub fn quarantine(self) -> Option<PathBuf> {
        if !self.dir.exists() {
            return None;
        }
        let parent = self.target.parent().map(Path::to_path_buf).unwrap_or_default();
        let failed = parent.join("failed");
        let name = self.target.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let mut dest = failed.join(&name);
        let mut k = 1;
        while dest.exists() {
            dest = failed.join(format!("{name}.{k}"));
            k += 1;
        }
        if fs::create_dir_all(&failed).is_ok() && fs::rename(&self.dir, &dest).is_ok() {
            Some(dest)
        } else {
            Some(self.dir)
        }
    }
}

/// Reads the named input columns of a CSV, in the given order.
pub fn read_features(path: &Path, names: &[String]) -> CliResult<Array2<f64>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    let header = rdr.headers().map_err(|e| runtime(e.to_string()))?.clone();
    let cols: Vec<usize> = names
        .iter()
        .map(|n| {
            header.iter().position(|h| h.trim() == n).ok_or_else(|| {
                runtime(format!("schema mismatch: {} has no input column `{n}`", path.display()))
            })
        })
        .collect::<CliResult<_>>()?;
    let mut values = Vec::new();
    let mut rows = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| runtime(e.to_string()))?;
        for &c in &cols {
            let field = rec.get(c).unwrap_or("").trim();
            let v: f64 = field.parse().map_err(|_| {
                runtime(format!("row {}: `{field}` in column `{}` is not a number", r + 2, &header[c]))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols.len()), values).map_err(|e| runtime(e.to_string()))
}
