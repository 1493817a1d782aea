//! Error reporting and all-or-nothing artifact writing.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use tempfile::NamedTempFile;
use tpan_core::{Error, ImageField};

/// Process exit statuses.
pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_IO: u8 = 2;
pub const EXIT_PRECONDITION: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn check_failed(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CHECK_FAILED,
            message: message.into(),
        }
    }

    pub fn precondition(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_PRECONDITION,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Shape { .. } | Error::Precondition(_) => EXIT_PRECONDITION,
            Error::Format(_) | Error::Io(_) => EXIT_IO,
            Error::Diverged { .. } => EXIT_CHECK_FAILED,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError {
            code: EXIT_IO,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Prefixes the message of a failed result with `what`, keeping its exit code.
pub trait Context<T> {
    fn context(self, what: impl fmt::Display) -> CliResult<T>;
}

impl<T, E: Into<CliError>> Context<T> for Result<T, E> {
    fn context(self, what: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| {
            let e = e.into();
            CliError {
                code: e.code,
                message: format!("{what}: {}", e.message),
            }
        })
    }
}

pub fn read_mnrt(path: &Path) -> CliResult<ImageField> {
    let file = std::fs::File::open(path).context(path.display())?;
    ImageField::read_mnrt(std::io::BufReader::new(file)).context(path.display())
}

pub fn read_png(path: &Path) -> CliResult<ImageField> {
    tpan_core::png::read_png(path).context(path.display())
}

/// Artifacts staged in memory and committed together.
#[derive(Default)]
pub struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, path: impl Into<PathBuf>, bytes: Vec<u8>) {
        self.files.push((path.into(), bytes));
    }

    pub fn add_mnrt(&mut self, path: impl Into<PathBuf>, field: &ImageField) {
        self.add(path, field.to_mnrt_bytes());
    }

    pub fn add_png(&mut self, path: impl Into<PathBuf>, field: &ImageField) -> CliResult<()> {
        let path = path.into();
        let bytes = tpan_core::png::encode_png(field).context(path.display())?;
        self.add(path, bytes);
        Ok(())
    }

    /// Writes every artifact to a temporary file next to its destination,
    /// then renames them into place. Nothing is renamed unless every
    /// temporary file was written.
    pub fn commit(self) -> CliResult<()> {
        let mut staged = Vec::with_capacity(self.files.len());
        for (path, bytes) in self.files {
            let dir = match path.parent() {
                Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
                _ => PathBuf::from("."),
            };
            let mut tmp = NamedTempFile::new_in(&dir).context(path.display())?;
            tmp.write_all(&bytes).context(path.display())?;
            tmp.as_file().sync_all().context(path.display())?;
            staged.push((tmp, path));
        }
        for (tmp, path) in staged {
            tmp.persist(&path).map_err(|e| e.error).context(path.display())?;
        }
        Ok(())
    }
}
