//! Fuzzer descriptions: built-in baselines and external adapters.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;

/// How the harness notices that an external fuzzer found a crash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CrashProbe {
    /// The target itself saves bug-triggering inputs into a directory the
    /// harness passes through `FEATBENCH_CRASH_DIR`.
    SignalExit,
    /// Poll a glob (placeholders allowed) for the fuzzer's crash files.
    CrashDir { glob: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzerAdapter {
    pub name: String,
    /// Shell command with `{target}`, `{corpus_in}`, `{out_dir}` and `{timeout_s}` placeholders.
    pub command_template: String,
    pub crash_probe: CrashProbe,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
}

/// Paths and limits substituted into a command template.
#[derive(Debug, Clone)]
pub struct TemplateVars<'a> {
    pub target: &'a Path,
    pub corpus_in: &'a Path,
    pub out_dir: &'a Path,
    pub timeout_s: u64,
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

fn substitute(template: &str, vars: &TemplateVars<'_>, quote: bool) -> String {
    let q = |p: &Path| {
        let s = p.display().to_string();
        if quote {
            shell_quote(&s)
        } else {
            s
        }
    };
    template
        .replace("{target}", &q(vars.target))
        .replace("{corpus_in}", &q(vars.corpus_in))
        .replace("{out_dir}", &q(vars.out_dir))
        .replace("{timeout_s}", &vars.timeout_s.to_string())
}

impl FuzzerAdapter {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.name.trim().is_empty() {
            return Err(HarnessError::Config("adapter name is empty".into()));
        }
        if BuiltinKind::from_name(&self.name).is_some() {
            return Err(HarnessError::Config(format!(
                "adapter name {:?} is reserved for a built-in fuzzer",
                self.name
            )));
        }
        if !self.command_template.contains("{target}") {
            return Err(HarnessError::Config(format!(
                "adapter {}: command_template must contain {{target}}",
                self.name
            )));
        }
        Ok(())
    }

    /// Shell command line with quoted paths.
    pub fn render_command(&self, vars: &TemplateVars<'_>) -> String {
        substitute(&self.command_template, vars, true)
    }

    /// Crash-file glob with raw paths, when the probe is a directory glob.
    pub fn render_glob(&self, vars: &TemplateVars<'_>) -> Option<String> {
        match &self.crash_probe {
            CrashProbe::CrashDir { glob } => Some(substitute(glob, vars, false)),
            CrashProbe::SignalExit => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BuiltinKind {
    /// Uniform random inputs.
    Random,
    /// Mutational, keeps inputs that print unseen branch markers.
    Marker,
}

impl BuiltinKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::Marker => "marker",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "random" => Some(Self::Random),
            "marker" => Some(Self::Marker),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fuzzer {
    Builtin(BuiltinKind),
    External(FuzzerAdapter),
}

impl Fuzzer {
    pub fn name(&self) -> &str {
        match self {
            Self::Builtin(k) => k.name(),
            Self::External(a) => &a.name,
        }
    }
}

impl fmt::Display for Fuzzer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct AdapterFile {
    #[serde(default, rename = "fuzzer")]
    fuzzers: Vec<FuzzerAdapter>,
}

/// Parses an adapter file: TOML (`[[fuzzer]]` tables) or, for `.json`
/// paths, `{"fuzzer": [...]}`.
pub fn parse_adapters(text: &str, json: bool) -> Result<Vec<FuzzerAdapter>, HarnessError> {
    let file: AdapterFile = if json {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?
    } else {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?
    };
    let mut seen = std::collections::BTreeSet::new();
    for a in &file.fuzzers {
        a.validate()?;
        if !seen.insert(a.name.clone()) {
            return Err(HarnessError::Config(format!("duplicate adapter {}", a.name)));
        }
    }
    Ok(file.fuzzers)
}

pub fn load_adapters(path: &Path) -> Result<Vec<FuzzerAdapter>, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("reading {}: {e}", path.display())))?;
    let json = path.extension().is_some_and(|e| e == "json");
    parse_adapters(&text, json)
}

/// Resolves fuzzer names against the built-ins and the loaded adapters.
pub fn select_fuzzers(names: &[String], adapters: &[FuzzerAdapter]) -> Result<Vec<Fuzzer>, HarnessError> {
    names
        .iter()
        .map(|n| {
            if let Some(k) = BuiltinKind::from_name(n) {
                return Ok(Fuzzer::Builtin(k));
            }
            adapters
                .iter()
                .find(|a| &a.name == n)
                .cloned()
                .map(Fuzzer::External)
                .ok_or_else(|| HarnessError::Config(format!("unknown fuzzer {n:?}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const AFL: &str = r#"
[[fuzzer]]
name = "aflplusplus"
command_template = "afl-fuzz -i {corpus_in} -o {out_dir} -V {timeout_s} -- {target} @@"
env = { AFL_NO_UI = "1" }

[fuzzer.crash_probe]
kind = "crash_dir"
glob = "{out_dir}/default/crashes/id:*"

[[fuzzer]]
name = "wrapper"
command_template = "my-fuzzer {target}"
crash_probe = { kind = "signal_exit" }
"#;

    #[test]
    fn parses_toml_adapters() {
        let adapters = parse_adapters(AFL, false).unwrap();
        assert_eq!(adapters.len(), 2);
        assert_eq!(adapters[0].env["AFL_NO_UI"], "1");
        assert_eq!(adapters[1].crash_probe, CrashProbe::SignalExit);
    }

    #[test]
    fn parses_json_adapters() {
        let json = r#"{"fuzzer":[{"name":"x","command_template":"x {target}",
            "crash_probe":{"kind":"crash_dir","glob":"{out_dir}/c/*"}}]}"#;
        let a = parse_adapters(json, true).unwrap();
        assert_eq!(a[0].crash_probe, CrashProbe::CrashDir { glob: "{out_dir}/c/*".into() });
    }

    #[test]
    fn rejects_template_without_target() {
        let bad = "[[fuzzer]]\nname = \"a\"\ncommand_template = \"run\"\ncrash_probe = { kind = \"signal_exit\" }\n";
        assert!(matches!(parse_adapters(bad, false), Err(HarnessError::Config(_))));
    }

    #[test]
    fn rejects_reserved_and_duplicate_names() {
        let reserved = "[[fuzzer]]\nname = \"random\"\ncommand_template = \"x {target}\"\ncrash_probe = { kind = \"signal_exit\" }\n";
        assert!(parse_adapters(reserved, false).is_err());
        let dup = format!("{0}{0}", "[[fuzzer]]\nname = \"a\"\ncommand_template = \"x {target}\"\ncrash_probe = { kind = \"signal_exit\" }\n");
        assert!(parse_adapters(&dup, false).is_err());
    }

    #[test]
    fn renders_placeholders() {
        let adapters = parse_adapters(AFL, false).unwrap();
        let vars = TemplateVars {
            target: Path::new("/b/T"),
            corpus_in: Path::new("/w/in"),
            out_dir: Path::new("/w/o ut"),
            timeout_s: 30,
        };
        assert_eq!(
            adapters[0].render_command(&vars),
            "afl-fuzz -i '/w/in' -o '/w/o ut' -V 30 -- '/b/T' @@"
        );
        assert_eq!(adapters[0].render_glob(&vars).unwrap(), "/w/o ut/default/crashes/id:*");
        assert_eq!(adapters[1].render_glob(&vars), None);
    }

    #[test]
    fn selects_builtins_and_adapters() {
        let adapters = parse_adapters(AFL, false).unwrap();
        let names = vec!["random".to_string(), "aflplusplus".into(), "marker".into()];
        let f = select_fuzzers(&names, &adapters).unwrap();
        assert_eq!(f.iter().map(Fuzzer::name).collect::<Vec<_>>(), ["random", "aflplusplus", "marker"]);
        assert!(select_fuzzers(&["nope".to_string()], &adapters).is_err());
    }
}
