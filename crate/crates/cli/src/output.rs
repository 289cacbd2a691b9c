//! Output directories, manifests and worker pools.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::CliError;

/// Where a command writes; `None` means standard output.
pub struct Sink {
    dir: Option<PathBuf>,
}

impl Sink {
    pub fn new(dir: Option<&Path>) -> Result<Self, CliError> {
        if let Some(d) = dir {
            fs::create_dir_all(d).map_err(|e| CliError::Usage(format!("--out {}: {e}", d.display())))?;
        }
        Ok(Self { dir: dir.map(Path::to_path_buf) })
    }

    /// Writes `name` into the output directory, or prints it when there is none.
    pub fn emit(&self, name: &str, body: &str) -> Result<(), CliError> {
        match &self.dir {
            Some(d) => fs::write(d.join(name), body)?,
            None => std::io::stdout().write_all(body.as_bytes())?,
        }
        Ok(())
    }

    /// Like [`Sink::emit`] but silently skipped without a directory.
    pub fn file(&self, name: &str, body: &str) -> Result<(), CliError> {
        if let Some(d) = &self.dir {
            fs::write(d.join(name), body)?;
        }
        Ok(())
    }
}

pub fn manifest(command: &str, config: Value) -> Value {
    json!({
        "tool": "adaeq",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "argv": std::env::args().collect::<Vec<_>>(),
        "config": config,
        "status": "running",
    })
}

/// Writes the manifest as `running`, runs `work`, then rewrites it as
/// `complete` or `failed`.
pub fn tracked<T>(sink: &Sink, mut manifest: Value, work: impl FnOnce(&mut Value) -> Result<T, CliError>) -> Result<T, CliError> {
    let write = |m: &Value| sink.file("manifest.json", &(serde_json::to_string_pretty(m).expect("json value") + "\n"));
    write(&manifest)?;
    let out = work(&mut manifest);
    match &out {
        Ok(_) => manifest["status"] = json!("complete"),
        Err(CliError::Usage(m) | CliError::Runtime(m)) => {
            manifest["status"] = json!("failed");
            manifest["error"] = json!(m);
        }
    }
    write(&manifest)?;
    out
}

pub fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        b = b.num_threads(n);
    }
    b.build().map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn csv_string(header: &[String], rows: &[Vec<String>]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
