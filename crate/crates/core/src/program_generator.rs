//! C99 target emission.
//!
//! Every target shares one harness: it reads up to `input_len` bytes from
//! `argv[1]` (a file path) or stdin into a zeroed buffer, runs the generated
//! entry function, and exits 0 unless the planted bug fires. The bug site
//! prints the bug marker to stderr and calls `abort()`.
//!
//! Two extra modes exist for high-throughput callers and are not part of the
//! fuzzing surface:
//!
//! * `--persistent`: prints `@@ ready`, then reads fixed `input_len`-byte
//!   records from stdin and, after each one, prints any trace markers
//!   followed by `@@ 0` or `@@ 1` (bug hit).
//! * `--count`: reads records until EOF and prints `<hits> <runs>`.
//!
//! In both modes the bug site unwinds with `longjmp` instead of aborting.
//! `FEATBENCH_TRACE=1` enables `This is branch N` markers on stdout.
//! `FEATBENCH_CRASH_DIR`, when set, makes the bug site save the input there
//! before aborting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::feature_model::{
    leaf_count, BranchTreeParams, FeatureFamily, LoopKind, LoopParams, ModelError, NestedParams,
    Params, ProgramSpec, CHECKSUM_BLOCK, CHECKSUM_DATA, NESTED_HEADER, NESTED_MAGIC_WIDTH,
};
use crate::mixer::MagicStream;

/// Byte counted by data-constrained loops.
pub const LOOP_SENTINEL: u8 = 0x4B;

pub const TRACE_ENV: &str = "FEATBENCH_TRACE";
pub const CRASH_DIR_ENV: &str = "FEATBENCH_CRASH_DIR";

#[derive(Debug, thiserror::Error)]
pub enum GenError {
    #[error("{family} programs cannot be emitted by {emitter}")]
    WrongFamily { family: FeatureFamily, emitter: &'static str },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("generation failed for {}", .0.iter().map(|(n, e)| format!("{n}: {e}")).collect::<Vec<_>>().join("; "))]
    Aggregate(Vec<(String, GenError)>),
    #[error("writing {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Generated source for one program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceUnit {
    pub spec: ProgramSpec,
    pub code: String,
    pub bug_marker: String,
    pub entry_symbol: String,
}

impl SourceUnit {
    pub fn file_name(&self) -> String {
        format!("{}.c", self.spec.name())
    }
}

pub fn bug_marker(spec: &ProgramSpec) -> String {
    format!("FEATBENCH-BUG {}", spec.name())
}

/// Magic bytes compared by a magic-bytes program.
pub fn magic_bytes(spec: &ProgramSpec) -> Vec<u8> {
    match spec.params() {
        Params::Magic(p) => MagicStream::for_program(&spec.name()).take(p.length as usize),
        _ => Vec::new(),
    }
}

/// Two-byte magic constants of a nested program, outermost level first.
pub fn nested_magic(spec: &ProgramSpec) -> Vec<[u8; 2]> {
    match spec.params() {
        Params::Nested(p) => {
            let mut stream = MagicStream::for_program(&spec.name());
            (0..p.magic_levels())
                .map(|_| {
                    let b = stream.take(NESTED_MAGIC_WIDTH);
                    [b[0], b[1]]
                })
                .collect()
        }
        _ => Vec::new(),
    }
}

/// Byte offset of checksum test `j` (0-based) inside a nested program's input.
pub fn nested_checksum_offset(p: &NestedParams, j: usize) -> usize {
    NESTED_HEADER + NESTED_MAGIC_WIDTH * p.magic_levels() as usize + CHECKSUM_BLOCK * j
}

pub fn emit(spec: &ProgramSpec) -> Result<SourceUnit, GenError> {
    match spec.family() {
        FeatureFamily::BranchTree | FeatureFamily::BranchWeight => emit_branch_tree(spec),
        FeatureFamily::Loop | FeatureFamily::LoopDataConstraint => emit_loop(spec),
        FeatureFamily::MagicBytes => emit_magic(spec),
        FeatureFamily::Checksum => emit_checksum(spec),
        FeatureFamily::NestedMagicChecksum => emit_nested(spec),
    }
}

fn wrong(spec: &ProgramSpec, emitter: &'static str) -> GenError {
    GenError::WrongFamily { family: spec.family(), emitter }
}

/// Small indented text builder.
struct CWriter {
    out: String,
    indent: usize,
}

impl CWriter {
    fn new() -> Self {
        Self { out: String::new(), indent: 0 }
    }

    fn line(&mut self, text: &str) {
        if !text.is_empty() {
            for _ in 0..self.indent {
                self.out.push_str("    ");
            }
            self.out.push_str(text);
        }
        self.out.push('\n');
    }

    fn open(&mut self, text: &str) {
        self.line(text);
        self.indent += 1;
    }

    fn close(&mut self, text: &str) {
        self.indent -= 1;
        self.line(text);
    }
}

fn prelude(spec: &ProgramSpec, marker: &str) -> CWriter {
    let mut w = CWriter::new();
    w.line(&format!("/* featbench target {} ({}) */", spec.name(), spec.family()));
    w.line("#include <setjmp.h>");
    w.line("#include <stdint.h>");
    w.line("#include <stdio.h>");
    w.line("#include <stdlib.h>");
    w.line("#include <string.h>");
    w.line("");
    w.line(&format!("#define FB_INPUT_LEN {}u", spec.input_len()));
    w.line("");
    w.line(&format!("static const char fb_bug_marker[] = \"{marker}\";"));
    w.line("static int fb_trace = 0;");
    w.line("static int fb_batch = 0;");
    w.line("static jmp_buf fb_batch_env;");
    w.line("static const unsigned char *fb_cur = NULL;");
    w.line("static size_t fb_cur_size = 0;");
    w.line("");
    w.out.push_str(HELPERS);
    w
}

const HELPERS: &str = r#"static uint64_t fb_mix(uint32_t hash, uint32_t level)
{
    uint64_t z = (uint64_t)hash + (uint64_t)level * UINT64_C(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)) * UINT64_C(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)) * UINT64_C(0x94D049BB133111EB);
    return z ^ (z >> 31);
}

static void fb_branch(unsigned long n)
{
    if (fb_trace) {
        printf("This is branch %lu\n", n);
    }
}

static void fb_save_crash(void)
{
    const char *dir = getenv("FEATBENCH_CRASH_DIR");
    char tmp[4096];
    char path[4096];
    uint64_t h = UINT64_C(0xcbf29ce484222325);
    size_t i;
    FILE *f;
    if (dir == NULL || dir[0] == '\0' || fb_cur == NULL) {
        return;
    }
    for (i = 0; i < fb_cur_size; i++) {
        h = (h ^ fb_cur[i]) * UINT64_C(0x100000001b3);
    }
    snprintf(tmp, sizeof tmp, "%s/.tmp-%016llx", dir, (unsigned long long)h);
    snprintf(path, sizeof path, "%s/crash-%016llx", dir, (unsigned long long)h);
    f = fopen(tmp, "wb");
    if (f == NULL) {
        return;
    }
    fwrite(fb_cur, 1, fb_cur_size, f);
    fclose(f);
    rename(tmp, path);
}

static void fb_bug(void)
{
    if (fb_batch) {
        longjmp(fb_batch_env, 1);
    }
    fflush(stdout);
    fprintf(stderr, "%s\n", fb_bug_marker);
    fflush(stderr);
    fb_save_crash();
    abort();
}

"#;

const MAIN: &str = r#"
static int fb_run_guarded(const unsigned char *data, size_t size)
{
    if (setjmp(fb_batch_env) != 0) {
        return 1;
    }
    fb_run(data, size);
    return 0;
}

static unsigned char fb_buf[FB_INPUT_LEN];

int main(int argc, char **argv)
{
    const char *trace = getenv("FEATBENCH_TRACE");
    fb_trace = trace != NULL && strcmp(trace, "1") == 0;
    if (argc > 1 && strcmp(argv[1], "--persistent") == 0) {
        fb_batch = 1;
        printf("@@ ready\n");
        fflush(stdout);
        while (fread(fb_buf, 1, FB_INPUT_LEN, stdin) == FB_INPUT_LEN) {
            int hit = fb_run_guarded(fb_buf, FB_INPUT_LEN);
            printf("@@ %d\n", hit);
            fflush(stdout);
        }
        return 0;
    }
    if (argc > 1 && strcmp(argv[1], "--count") == 0) {
        unsigned long long hits = 0;
        unsigned long long runs = 0;
        fb_batch = 1;
        fb_trace = 0;
        while (fread(fb_buf, 1, FB_INPUT_LEN, stdin) == FB_INPUT_LEN) {
            hits += (unsigned long long)fb_run_guarded(fb_buf, FB_INPUT_LEN);
            runs++;
        }
        printf("%llu %llu\n", hits, runs);
        return 0;
    }
    {
        FILE *in = stdin;
        size_t n;
        if (argc > 1) {
            in = fopen(argv[1], "rb");
            if (in == NULL) {
                perror(argv[1]);
                return 2;
            }
        }
        memset(fb_buf, 0, sizeof fb_buf);
        n = fread(fb_buf, 1, FB_INPUT_LEN, in);
        if (in != stdin) {
            fclose(in);
        }
        fb_cur = fb_buf;
        fb_cur_size = n;
        fb_run(fb_buf, n);
    }
    return 0;
}
"#;

fn finish(spec: &ProgramSpec, mut w: CWriter, marker: String) -> SourceUnit {
    w.out.push_str(MAIN);
    SourceUnit {
        spec: *spec,
        code: w.out,
        bug_marker: marker,
        entry_symbol: spec.name(),
    }
}

fn hex_array(name: &str, bytes: &[u8]) -> String {
    let body: Vec<String> = bytes.iter().map(|b| format!("0x{b:02X}u")).collect();
    format!("static const unsigned char {name}[{}] = {{ {} }};", bytes.len(), body.join(", "))
}

/// Full `width`-ary nest of depth `depth`; one selector per level.
pub fn emit_branch_tree(spec: &ProgramSpec) -> Result<SourceUnit, GenError> {
    let p = match (spec.family(), spec.params()) {
        (FeatureFamily::BranchTree | FeatureFamily::BranchWeight, Params::BranchTree(p)) => *p,
        _ => return Err(wrong(spec, "emit_branch_tree")),
    };
    leaf_count(&p)?;
    let marker = bug_marker(spec);
    let name = spec.name();
    let mut w = prelude(spec, &marker);
    let modulus = p.selector_modulus();

    w.line(&format!("static void {name}(uint32_t hash)"));
    w.open("{");
    for level in 1..=p.depth {
        w.line(&format!(
            "const uint64_t u{level} = fb_mix(hash, {level}u) % UINT64_C({modulus});"
        ));
    }
    emit_tree_node(&mut w, &p, 1, 0);
    w.close("}");
    w.line("");
    w.line("static void fb_run(const unsigned char *data, size_t size)");
    w.open("{");
    w.line("uint32_t hash = (uint32_t)data[0] | ((uint32_t)data[1] << 8)");
    w.line("    | ((uint32_t)data[2] << 16) | ((uint32_t)data[3] << 24);");
    w.line("(void)size;");
    w.line(&format!("{name}(hash);"));
    w.close("}");
    Ok(finish(spec, w, marker))
}

fn emit_tree_node(w: &mut CWriter, p: &BranchTreeParams, level: u32, prefix: u64) {
    if level > p.depth {
        let leaf = prefix + 1;
        w.line(&format!("fb_branch({leaf}ul);"));
        if leaf == p.bug_branch {
            w.line("fb_bug();");
        }
        return;
    }
    let width = u64::from(p.width);
    let favoured = u64::from(p.bug_path_child(level));
    let others: Vec<u64> = (0..width).filter(|&c| c != favoured).collect();
    let child = |c: u64| prefix * width + c;

    w.open(&format!("if (u{level} < UINT64_C({})) {{", width - 1));
    emit_tree_node(w, p, level + 1, child(favoured));
    if others.len() == 1 {
        w.close("} else {");
        w.indent += 1;
        emit_tree_node(w, p, level + 1, child(others[0]));
        w.close("}");
        return;
    }
    w.close("} else {");
    w.indent += 1;
    w.line(&format!(
        "const uint64_t s{level} = (u{level} - UINT64_C({m})) % UINT64_C({m});",
        m = width - 1
    ));
    for (i, &c) in others.iter().enumerate() {
        let head = if i == 0 {
            format!("if (s{level} == UINT64_C({i})) {{")
        } else if i + 1 == others.len() {
            "} else {".to_string()
        } else {
            format!("}} else if (s{level} == UINT64_C({i})) {{")
        };
        if i == 0 {
            w.open(&head);
        } else {
            w.close(&head);
            w.indent += 1;
        }
        emit_tree_node(w, p, level + 1, child(c));
    }
    w.close("}");
    w.close("}");
}

/// Loop or self-recursion counting input bytes (optionally only sentinel bytes).
pub fn emit_loop(spec: &ProgramSpec) -> Result<SourceUnit, GenError> {
    let p: LoopParams = match spec.params() {
        Params::Loop(p) => *p,
        _ => return Err(wrong(spec, "emit_loop")),
    };
    let marker = bug_marker(spec);
    let name = spec.name();
    let mut w = prelude(spec, &marker);
    let iteration = p.iteration;
    let count_step = |w: &mut CWriter| {
        w.line("counter++;");
        w.line("fb_branch(counter);");
        w.open(&format!("if (counter == {iteration}ul) {{"));
        w.line("fb_bug();");
        w.close("}");
    };
    w.line(&format!("#define FB_SENTINEL 0x{LOOP_SENTINEL:02X}u"));
    w.line("");
    match p.kind {
        LoopKind::Loop => {
            w.line(&format!("static void {name}(const unsigned char *data, size_t size)"));
            w.line("{");
            w.indent += 1;
            w.line("unsigned long counter = 0;");
            w.line("size_t i;");
            w.open("for (i = 0; i < size; i++) {");
            if p.has_data_constraint {
                w.open("if (data[i] != FB_SENTINEL) {");
                w.line("continue;");
                w.close("}");
            }
            count_step(&mut w);
            w.close("}");
            w.close("}");
            w.line("");
            w.line("static void fb_run(const unsigned char *data, size_t size)");
            w.line("{");
            w.line(&format!("    {name}(data, size);"));
            w.line("}");
        }
        LoopKind::Recursion => {
            w.line(&format!(
                "static void {name}(const unsigned char *data, size_t size, size_t i, unsigned long counter)"
            ));
            w.line("{");
            w.indent += 1;
            w.open("if (i >= size) {");
            w.line("return;");
            w.close("}");
            if p.has_data_constraint {
                w.open("if (data[i] == FB_SENTINEL) {");
                count_step(&mut w);
                w.close("}");
            } else {
                count_step(&mut w);
            }
            w.line(&format!("{name}(data, size, i + 1, counter);"));
            w.close("}");
            w.line("");
            w.line("static void fb_run(const unsigned char *data, size_t size)");
            w.line("{");
            w.line(&format!("    {name}(data, size, 0, 0ul);"));
            w.line("}");
        }
    }
    Ok(finish(spec, w, marker))
}

/// Single equality test of `length` bytes at `start` against derived magic.
pub fn emit_magic(spec: &ProgramSpec) -> Result<SourceUnit, GenError> {
    let p = match spec.params() {
        Params::Magic(p) if spec.family() == FeatureFamily::MagicBytes => *p,
        _ => return Err(wrong(spec, "emit_magic")),
    };
    let marker = bug_marker(spec);
    let name = spec.name();
    let mut w = prelude(spec, &marker);
    w.line(&hex_array("fb_magic", &magic_bytes(spec)));
    w.line("");
    w.line(&format!("static void {name}(const unsigned char *data, size_t size)"));
    w.line("{");
    w.indent += 1;
    w.line("(void)size;");
    w.open(&format!("if (memcmp(data + {}, fb_magic, {}) == 0) {{", p.start, p.length));
    w.line("fb_branch(1ul);");
    w.line("fb_bug();");
    w.close("}");
    w.close("}");
    w.line("");
    w.line("static void fb_run(const unsigned char *data, size_t size)");
    w.line("{");
    w.line(&format!("    {name}(data, size);"));
    w.line("}");
    Ok(finish(spec, w, marker))
}

const CHECKSUM_HELPERS: &str = r#"static unsigned fb_add16(const unsigned char *p, size_t n)
{
    unsigned s = 0;
    size_t i;
    for (i = 0; i < n; i++) {
        s = (s + p[i]) & 0xFFFFu;
    }
    return s;
}

static unsigned fb_le16(const unsigned char *p)
{
    return (unsigned)p[0] | ((unsigned)p[1] << 8);
}

"#;

fn checksum_guard(w: &mut CWriter, offset: usize) {
    w.open(&format!(
        "if (fb_add16(data + {offset}, {CHECKSUM_DATA}) == fb_le16(data + {})) {{",
        offset + CHECKSUM_DATA
    ));
}

/// `count` sequential checksum tests, each guarding the next.
pub fn emit_checksum(spec: &ProgramSpec) -> Result<SourceUnit, GenError> {
    let p = match spec.params() {
        Params::Checksum(p) if spec.family() == FeatureFamily::Checksum => *p,
        _ => return Err(wrong(spec, "emit_checksum")),
    };
    let marker = bug_marker(spec);
    let name = spec.name();
    let mut w = prelude(spec, &marker);
    w.out.push_str(CHECKSUM_HELPERS);
    w.line(&format!("static void {name}(const unsigned char *data, size_t size)"));
    w.line("{");
    w.indent += 1;
    w.line("(void)size;");
    for j in 0..p.count as usize {
        checksum_guard(&mut w, CHECKSUM_BLOCK * j);
        w.line(&format!("fb_branch({}ul);", j + 1));
    }
    w.line("fb_bug();");
    for _ in 0..p.count {
        w.close("}");
    }
    w.close("}");
    w.line("");
    w.line("static void fb_run(const unsigned char *data, size_t size)");
    w.line("{");
    w.line(&format!("    {name}(data, size);"));
    w.line("}");
    Ok(finish(spec, w, marker))
}

/// `depth` nested guards: outer two-byte magic checks, inner checksum tests.
pub fn emit_nested(spec: &ProgramSpec) -> Result<SourceUnit, GenError> {
    let p = match spec.params() {
        Params::Nested(p) if spec.family() == FeatureFamily::NestedMagicChecksum => *p,
        _ => return Err(wrong(spec, "emit_nested")),
    };
    let marker = bug_marker(spec);
    let name = spec.name();
    let mut w = prelude(spec, &marker);
    let magics = nested_magic(spec);
    for (k, m) in magics.iter().enumerate() {
        w.line(&hex_array(&format!("fb_magic{}", k + 1), m));
    }
    w.line("");
    if p.count > 0 {
        w.out.push_str(CHECKSUM_HELPERS);
    }
    w.line(&format!("static void {name}(const unsigned char *data, size_t size)"));
    w.line("{");
    w.indent += 1;
    w.line("(void)size;");
    let mut level = 0;
    for (k, _) in magics.iter().enumerate() {
        let offset = NESTED_HEADER + NESTED_MAGIC_WIDTH * k;
        w.open(&format!(
            "if (memcmp(data + {offset}, fb_magic{}, {NESTED_MAGIC_WIDTH}) == 0) {{",
            k + 1
        ));
        level += 1;
        w.line(&format!("fb_branch({level}ul);"));
    }
    for j in 0..p.count as usize {
        checksum_guard(&mut w, nested_checksum_offset(&p, j));
        level += 1;
        w.line(&format!("fb_branch({level}ul);"));
    }
    w.line("fb_bug();");
    for _ in 0..p.depth {
        w.close("}");
    }
    w.close("}");
    w.line("");
    w.line("static void fb_run(const unsigned char *data, size_t size)");
    w.line("{");
    w.line(&format!("    {name}(data, size);"));
    w.line("}");
    Ok(finish(spec, w, marker))
}

/// One entry of the build manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetEntry {
    pub file: String,
    pub input_len: usize,
    pub bug_marker: String,
}

/// `name -> {file, input_len, bug_marker}`, sorted by name.
pub type TargetManifest = BTreeMap<String, TargetEntry>;

#[derive(Debug, Clone)]
pub struct EmittedSuite {
    pub units: Vec<SourceUnit>,
    pub manifest: TargetManifest,
}

impl EmittedSuite {
    pub fn manifest_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.manifest).expect("manifest serialises");
        s.push('\n');
        s
    }

    /// POSIX shell script compiling every unit from `src/` into `bin/`.
    pub fn build_script(&self) -> String {
        let mut s = String::from(
            "#!/bin/sh\n\
             # Builds every featbench target from src/ into bin/.\n\
             set -e\n\
             CC=\"${CC:-cc}\"\n\
             CFLAGS=\"${CFLAGS:--std=c99 -O1}\"\n\
             cd \"$(dirname \"$0\")\"\n\
             mkdir -p bin\n",
        );
        for unit in &self.units {
            let name = unit.spec.name();
            let _ = writeln!(s, "$CC $CFLAGS -o \"bin/{name}\" \"src/{name}.c\"");
        }
        s
    }

    /// Writes `src/*.c`, `targets.json` and `build.sh` under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), GenError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| GenError::Io { path, source }
        };
        let src = dir.join("src");
        fs::create_dir_all(&src).map_err(io(&src))?;
        for unit in &self.units {
            let path = src.join(unit.file_name());
            fs::write(&path, &unit.code).map_err(io(&path))?;
        }
        let manifest = dir.join("targets.json");
        fs::write(&manifest, self.manifest_json()).map_err(io(&manifest))?;
        let script = dir.join("build.sh");
        fs::write(&script, self.build_script()).map_err(io(&script))?;
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            fs::set_permissions(&script, fs::Permissions::from_mode(0o755)).map_err(io(&script))?;
        }
        Ok(())
    }
}

/// Emits every spec of `grid`; failures are collected with their names.
pub fn emit_all(grid: &[ProgramSpec]) -> Result<EmittedSuite, GenError> {
    let results: Vec<_> = grid.par_iter().map(|spec| (spec.name(), emit(spec))).collect();
    let mut units = Vec::with_capacity(grid.len());
    let mut failures = Vec::new();
    for (name, res) in results {
        match res {
            Ok(u) => units.push(u),
            Err(e) => failures.push((name, e)),
        }
    }
    if !failures.is_empty() {
        return Err(GenError::Aggregate(failures));
    }
    let manifest = units
        .iter()
        .map(|u| {
            (
                u.spec.name(),
                TargetEntry {
                    file: format!("src/{}", u.file_name()),
                    input_len: u.spec.input_len(),
                    bug_marker: u.bug_marker.clone(),
                },
            )
        })
        .collect();
    Ok(EmittedSuite { units, manifest })
}
