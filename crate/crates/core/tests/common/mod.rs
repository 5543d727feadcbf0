#![allow(dead_code)]

use std::path::{Path, PathBuf};

use featbench::campaign_harness::{build_targets, Target};
use featbench::feature_model::ProgramSpec;
use featbench::program_generator::emit_all;

/// Emits and compiles `specs` under `dir`, returning one target per spec in order.
pub fn build(specs: &[ProgramSpec], dir: &Path) -> Vec<Target> {
    let suite = emit_all(specs).expect("emission");
    suite.write_to(dir).expect("write sources");
    let bin = dir.join("bin");
    let report = build_targets(&suite.manifest, dir, &bin).expect("compiler available");
    if let Some(e) = report.failed().next() {
        panic!("{} failed to compile:\n{}", e.name, e.diagnostics);
    }
    specs
        .iter()
        .map(|s| {
            let name = s.name();
            let entry = &suite.manifest[&name];
            Target {
                binary: bin.join(&name),
                input_len: entry.input_len,
                bug_marker: entry.bug_marker.clone(),
                name,
            }
        })
        .collect()
}

pub fn build_one(spec: &ProgramSpec, dir: &Path) -> Target {
    build(std::slice::from_ref(spec), dir).remove(0)
}

pub fn binary(dir: &Path, spec: &ProgramSpec) -> PathBuf {
    dir.join("bin").join(spec.name())
}
