use std::fmt;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use trajod_core::{read_feature_set, read_model, FeatureSet, ModelFile};

/// An error carrying the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    /// Bad flag or flag combination (exit 1). `flag` is named in the message.
    pub fn usage(flag: &str, msg: impl fmt::Display) -> Self {
        Self {
            code: 1,
            message: format!("{flag}: {msg}"),
        }
    }

    /// Unreadable or malformed input (exit 2).
    pub fn data(path: &Path, msg: impl fmt::Display) -> Self {
        Self {
            code: 2,
            message: format!("{}: {msg}", path.display()),
        }
    }

    /// Maps a core error raised while working on `context` to exit 1 or 2.
    pub fn core(context: &str, err: trajod_core::Error) -> Self {
        Self {
            code: if err.is_data_error() { 2 } else { 1 },
            message: format!("{context}: {err}"),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::data(path, format!("cannot open: {e}")))
}

pub fn load_features(path: &Path) -> CliResult<FeatureSet> {
    read_feature_set(open(path)?).map_err(|e| CliError::data(path, e))
}

pub fn load_model(path: &Path) -> CliResult<ModelFile> {
    read_model(open(path)?).map_err(|e| CliError::data(path, e))
}

/// Writes through a temporary file in the destination directory, then renames
/// it into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let fail = |e: std::io::Error| CliError {
        code: 2,
        message: format!("{}: cannot write: {e}", path.display()),
    };
    let mut builder = tempfile::Builder::new();
    // temp files default to 0600; outputs should get ordinary permissions
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        builder.permissions(std::fs::Permissions::from_mode(0o644));
    }
    let mut tmp = builder.tempfile_in(dir).map_err(fail)?;
    tmp.write_all(bytes).map_err(fail)?;
    tmp.as_file().sync_all().map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}
