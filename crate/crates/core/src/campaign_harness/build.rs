//! Compiling generated sources with the system C compiler.

use std::path::{Path, PathBuf};
use std::process::Command;

use rayon::prelude::*;

use super::HarnessError;
use crate::program_generator::TargetManifest;

pub const CFLAGS: [&str; 2] = ["-std=c99", "-O1"];

/// `$CC`, falling back to `cc`.
pub fn compiler() -> String {
    std::env::var("CC").ok().filter(|s| !s.trim().is_empty()).unwrap_or_else(|| "cc".into())
}

pub fn check_compiler(cc: &str) -> Result<(), HarnessError> {
    let ok = Command::new(cc)
        .arg("--version")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false);
    if ok {
        Ok(())
    } else {
        Err(HarnessError::CompilerMissing {
            compiler: cc.to_string(),
            remediation: "install a C99 compiler (gcc or clang) or point $CC at one".into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildEntry {
    pub name: String,
    pub binary: PathBuf,
    pub ok: bool,
    /// Compiler stderr, warnings included.
    pub diagnostics: String,
}

#[derive(Debug, Clone, Default)]
pub struct BuildReport {
    pub entries: Vec<BuildEntry>,
}

impl BuildReport {
    pub fn built(&self) -> usize {
        self.entries.iter().filter(|e| e.ok).count()
    }

    pub fn failed(&self) -> impl Iterator<Item = &BuildEntry> {
        self.entries.iter().filter(|e| !e.ok)
    }

    pub fn all_ok(&self) -> bool {
        self.entries.iter().all(|e| e.ok)
    }

    /// `name,ok,diagnostics` with one row per target.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["name", "ok", "diagnostics"]).expect("in-memory write");
        for e in &self.entries {
            w.write_record([e.name.as_str(), if e.ok { "true" } else { "false" }, e.diagnostics.trim()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
    }
}

/// Compiles one source file; `Err` carries the compiler diagnostics.
pub fn compile_one(cc: &str, source: &Path, binary: &Path) -> Result<String, String> {
    let out = Command::new(cc)
        .args(CFLAGS)
        .arg("-o")
        .arg(binary)
        .arg(source)
        .output()
        .map_err(|e| format!("spawning {cc}: {e}"))?;
    let diagnostics = String::from_utf8_lossy(&out.stderr).into_owned();
    if out.status.success() {
        Ok(diagnostics)
    } else {
        Err(diagnostics)
    }
}

/// Compiles every manifest entry (sources relative to `root`) into `bin_dir`.
///
/// A failing target does not stop the batch.
pub fn build_targets(
    manifest: &TargetManifest,
    root: &Path,
    bin_dir: &Path,
) -> Result<BuildReport, HarnessError> {
    let cc = compiler();
    check_compiler(&cc)?;
    std::fs::create_dir_all(bin_dir)?;
    let entries = manifest
        .par_iter()
        .map(|(name, entry)| {
            let binary = bin_dir.join(name);
            let (ok, diagnostics) = match compile_one(&cc, &root.join(&entry.file), &binary) {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            BuildEntry { name: name.clone(), binary, ok, diagnostics }
        })
        .collect();
    Ok(BuildReport { entries })
}
