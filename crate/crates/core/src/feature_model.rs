//! Feature taxonomy, the ten tunable parameters, program naming and the
//! frozen default benchmark grid.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Upper bound on `width^depth` for generated branch trees.
pub const MAX_LEAVES: u64 = 1 << 20;

/// Upper bound on the number of bytes any target reads.
pub const MAX_INPUT_LEN: usize = 1 << 20;

/// Size of one checksum test in the input: 16 data bytes plus a 2-byte expected sum.
pub const CHECKSUM_BLOCK: usize = 18;
pub const CHECKSUM_DATA: usize = 16;

/// Bytes of unused header preceding the first nested-condition level.
pub const NESTED_HEADER: usize = 4;
/// Bytes compared by each magic level of a nested program.
pub const NESTED_MAGIC_WIDTH: usize = 2;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("malformed program name {name:?}: {reason}")]
    MalformedName { name: String, reason: String },
    #[error("branch tree leaf count {width}^{depth} exceeds 2^20")]
    Overflow { width: u32, depth: u32 },
    #[error("invalid program spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureFamily {
    BranchTree,
    BranchWeight,
    Loop,
    LoopDataConstraint,
    MagicBytes,
    Checksum,
    NestedMagicChecksum,
}

impl FeatureFamily {
    /// Control-flow features first, data-flow features last.
    pub const ALL: [Self; 7] = [
        Self::BranchTree,
        Self::BranchWeight,
        Self::Loop,
        Self::LoopDataConstraint,
        Self::MagicBytes,
        Self::Checksum,
        Self::NestedMagicChecksum,
    ];

    pub fn is_control_flow(self) -> bool {
        matches!(
            self,
            Self::BranchTree | Self::BranchWeight | Self::Loop | Self::LoopDataConstraint
        )
    }

    pub fn is_data_flow(self) -> bool {
        !self.is_control_flow()
    }
}

impl fmt::Display for FeatureFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchTreeParams {
    /// Children per nesting level.
    pub width: u32,
    /// Nesting levels.
    pub depth: u32,
    /// The edge toward the buggy leaf is taken with probability `1/weight`.
    pub weight: u32,
    /// 1-based index of the buggy leaf.
    pub bug_branch: u64,
}

impl BranchTreeParams {
    pub fn new(width: u32, depth: u32, weight: u32, bug_branch: u64) -> Self {
        Self { width, depth, weight, bug_branch }
    }

    /// Number of distinct selector values per level, `weight * (width - 1)`.
    pub fn selector_modulus(&self) -> u64 {
        u64::from(self.weight) * u64::from(self.width - 1)
    }

    /// Child index (0-based) on the path to the buggy leaf at nesting `level` (1-based).
    pub fn bug_path_child(&self, level: u32) -> u32 {
        let w = u64::from(self.width);
        let below = w.pow(self.depth - level);
        (((self.bug_branch - 1) / below) % w) as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoopKind {
    Loop,
    Recursion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopParams {
    pub kind: LoopKind,
    pub iteration: u32,
    pub has_data_constraint: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MagicBytesParams {
    pub start: u32,
    pub length: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecksumParams {
    pub count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NestedParams {
    pub depth: u32,
    /// Checksum tests among the innermost levels; the rest are magic checks.
    pub count: u32,
}

impl NestedParams {
    pub fn magic_levels(&self) -> u32 {
        self.depth.saturating_sub(self.count)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Params {
    BranchTree(BranchTreeParams),
    Loop(LoopParams),
    Magic(MagicBytesParams),
    Nested(NestedParams),
    Checksum(ChecksumParams),
}

/// Number of leaves of a full branch tree.
pub fn leaf_count(p: &BranchTreeParams) -> Result<u64, ModelError> {
    let overflow = || ModelError::Overflow { width: p.width, depth: p.depth };
    let n = u64::from(p.width).checked_pow(p.depth).ok_or_else(overflow)?;
    if n > MAX_LEAVES {
        return Err(overflow());
    }
    Ok(n)
}

/// One benchmark program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ProgramSpec {
    family: FeatureFamily,
    params: Params,
    input_len: usize,
}

impl ProgramSpec {
    /// Builds a spec with the family's default input length and validates it.
    pub fn new(family: FeatureFamily, params: Params) -> Result<Self, ModelError> {
        let input_len = default_input_len(&params);
        Self::with_input_len(family, params, input_len)
    }

    pub fn with_input_len(
        family: FeatureFamily,
        params: Params,
        input_len: usize,
    ) -> Result<Self, ModelError> {
        let spec = Self { family, params, input_len };
        spec.validate()?;
        Ok(spec)
    }

    pub fn branch_tree(width: u32, depth: u32, weight: u32, bug_branch: u64) -> Result<Self, ModelError> {
        Self::new(
            FeatureFamily::BranchTree,
            Params::BranchTree(BranchTreeParams::new(width, depth, weight, bug_branch)),
        )
    }

    pub fn branch_weight(width: u32, depth: u32, weight: u32, bug_branch: u64) -> Result<Self, ModelError> {
        Self::new(
            FeatureFamily::BranchWeight,
            Params::BranchTree(BranchTreeParams::new(width, depth, weight, bug_branch)),
        )
    }

    pub fn looped(kind: LoopKind, iteration: u32, has_data_constraint: bool) -> Result<Self, ModelError> {
        let family = if has_data_constraint {
            FeatureFamily::LoopDataConstraint
        } else {
            FeatureFamily::Loop
        };
        Self::new(family, Params::Loop(LoopParams { kind, iteration, has_data_constraint }))
    }

    pub fn magic(start: u32, length: u32) -> Result<Self, ModelError> {
        Self::new(FeatureFamily::MagicBytes, Params::Magic(MagicBytesParams { start, length }))
    }

    pub fn checksum(count: u32) -> Result<Self, ModelError> {
        Self::new(FeatureFamily::Checksum, Params::Checksum(ChecksumParams { count }))
    }

    pub fn nested(depth: u32, count: u32) -> Result<Self, ModelError> {
        Self::new(
            FeatureFamily::NestedMagicChecksum,
            Params::Nested(NestedParams { depth, count }),
        )
    }

    /// Same program reading `input_len` bytes.
    pub fn resized(self, input_len: usize) -> Result<Self, ModelError> {
        Self::with_input_len(self.family, self.params, input_len)
    }

    pub fn family(&self) -> FeatureFamily {
        self.family
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn name(&self) -> String {
        format_name(self)
    }

    pub fn branch(&self) -> Option<&BranchTreeParams> {
        match &self.params {
            Params::BranchTree(p) => Some(p),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidSpec(msg));
        match (&self.family, &self.params) {
            (FeatureFamily::BranchTree | FeatureFamily::BranchWeight, Params::BranchTree(p)) => {
                if p.width < 2 {
                    return bad(format!("width {} < 2", p.width));
                }
                if p.depth < 1 {
                    return bad("depth must be at least 1".into());
                }
                if p.weight < 2 {
                    return bad(format!("weight {} < 2", p.weight));
                }
                let leaves = leaf_count(p)?;
                if p.bug_branch < 1 || p.bug_branch > leaves {
                    return bad(format!("bug branch {} outside 1..={leaves}", p.bug_branch));
                }
            }
            (FeatureFamily::Loop | FeatureFamily::LoopDataConstraint, Params::Loop(p)) => {
                if p.iteration < 1 {
                    return bad("iteration must be at least 1".into());
                }
                let want = if p.has_data_constraint {
                    FeatureFamily::LoopDataConstraint
                } else {
                    FeatureFamily::Loop
                };
                if want != self.family {
                    return bad(format!("{} does not match data constraint flag", self.family));
                }
            }
            (FeatureFamily::MagicBytes, Params::Magic(p)) => {
                if p.length < 1 {
                    return bad("magic length must be at least 1".into());
                }
            }
            (FeatureFamily::Checksum, Params::Checksum(p)) => {
                if p.count < 1 {
                    return bad("checksum count must be at least 1".into());
                }
            }
            (FeatureFamily::NestedMagicChecksum, Params::Nested(p)) => {
                if p.depth < 1 {
                    return bad("nesting depth must be at least 1".into());
                }
                if p.count > p.depth {
                    return bad(format!("count {} exceeds depth {}", p.count, p.depth));
                }
            }
            (family, _) => return bad(format!("parameters do not belong to {family}")),
        }
        let min = min_input_len(&self.params);
        if self.input_len < min {
            return bad(format!("input_len {} below minimum {min}", self.input_len));
        }
        if self.input_len > MAX_INPUT_LEN {
            return bad(format!("input_len {} above {MAX_INPUT_LEN}", self.input_len));
        }
        Ok(())
    }
}

/// Smallest input length the parameters can be laid out in.
///
/// Loops accept any positive length; lengths below `iteration` make the bug
/// unreachable but remain valid programs.
pub fn min_input_len(params: &Params) -> usize {
    match params {
        Params::BranchTree(_) => 4,
        Params::Loop(_) => 1,
        Params::Magic(p) => p.start as usize + p.length as usize,
        Params::Checksum(p) => CHECKSUM_BLOCK * p.count as usize,
        Params::Nested(p) => nested_layout_len(p),
    }
}

pub fn default_input_len(params: &Params) -> usize {
    match params {
        Params::BranchTree(_) => 4,
        Params::Loop(p) => (p.iteration as usize).max(64),
        Params::Magic(p) => (p.start as usize + p.length as usize).max(16),
        Params::Checksum(_) | Params::Nested(_) => min_input_len(params),
    }
}

fn nested_layout_len(p: &NestedParams) -> usize {
    NESTED_HEADER
        + NESTED_MAGIC_WIDTH * p.magic_levels() as usize
        + CHECKSUM_BLOCK * p.count as usize
}

fn prefix(family: FeatureFamily, params: &Params) -> &'static str {
    match (family, params) {
        (FeatureFamily::BranchTree, _) => "COMP",
        (FeatureFamily::BranchWeight, _) => "COMB",
        (_, Params::Loop(LoopParams { kind: LoopKind::Loop, .. })) => "COML",
        (_, Params::Loop(_)) => "COMR",
        (FeatureFamily::MagicBytes, _) => "DMAG",
        (FeatureFamily::Checksum, _) => "DCHK",
        _ => "DNST",
    }
}

/// Canonical program name, e.g. `COMP_W2_D2_O2_B1`.
///
/// A trailing `_N<len>` field appears only when the input length differs from
/// the family default.
pub fn format_name(spec: &ProgramSpec) -> String {
    let mut name = String::from(prefix(spec.family, &spec.params));
    let fields: Vec<(char, u64)> = match &spec.params {
        Params::BranchTree(p) => vec![
            ('W', p.width.into()),
            ('D', p.depth.into()),
            ('O', p.weight.into()),
            ('B', p.bug_branch),
        ],
        Params::Loop(p) => {
            name.push_str(&format!("_I{}_DC{}", p.iteration, u8::from(p.has_data_constraint)));
            vec![]
        }
        Params::Magic(p) => vec![('S', p.start.into()), ('L', p.length.into())],
        Params::Checksum(p) => vec![('C', p.count.into())],
        Params::Nested(p) => vec![('D', p.depth.into()), ('C', p.count.into())],
    };
    for (tag, value) in fields {
        name.push('_');
        name.push(tag);
        name.push_str(&value.to_string());
    }
    if spec.input_len != default_input_len(&spec.params) {
        name.push_str(&format!("_N{}", spec.input_len));
    }
    name
}

/// Inverse of [`format_name`].
pub fn parse_name(name: &str) -> Result<ProgramSpec, ModelError> {
    let malformed = |reason: &str| ModelError::MalformedName {
        name: name.to_string(),
        reason: reason.to_string(),
    };
    let mut parts = name.split('_');
    let head = parts.next().unwrap_or_default();
    let mut rest: Vec<&str> = parts.collect();

    let mut input_len = None;
    if let Some(last) = rest.last() {
        if let Some(digits) = last.strip_prefix('N') {
            let n = parse_number(digits).ok_or_else(|| malformed("bad input length"))?;
            input_len = Some(usize::try_from(n).map_err(|_| malformed("bad input length"))?);
            rest.pop();
        }
    }

    let mut fields = rest.into_iter();
    let mut field = |tag: &str| -> Result<u64, ModelError> {
        let part = fields
            .next()
            .ok_or_else(|| malformed(&format!("missing field {tag}")))?;
        let digits = part
            .strip_prefix(tag)
            .ok_or_else(|| malformed(&format!("expected field {tag}, found {part:?}")))?;
        parse_number(digits).ok_or_else(|| malformed(&format!("bad value in field {tag}")))
    };
    let small = |v: u64| u32::try_from(v).map_err(|_| malformed("value out of range"));

    let (family, params) = match head {
        "COMP" | "COMB" => {
            let width = small(field("W")?)?;
            let depth = small(field("D")?)?;
            let weight = small(field("O")?)?;
            let bug_branch = field("B")?;
            let family = if head == "COMP" {
                FeatureFamily::BranchTree
            } else {
                FeatureFamily::BranchWeight
            };
            (family, Params::BranchTree(BranchTreeParams { width, depth, weight, bug_branch }))
        }
        "COML" | "COMR" => {
            let iteration = small(field("I")?)?;
            let has_data_constraint = match field("DC")? {
                0 => false,
                1 => true,
                _ => return Err(malformed("DC must be 0 or 1")),
            };
            let kind = if head == "COML" { LoopKind::Loop } else { LoopKind::Recursion };
            let family = if has_data_constraint {
                FeatureFamily::LoopDataConstraint
            } else {
                FeatureFamily::Loop
            };
            (family, Params::Loop(LoopParams { kind, iteration, has_data_constraint }))
        }
        "DMAG" => {
            let start = small(field("S")?)?;
            let length = small(field("L")?)?;
            (FeatureFamily::MagicBytes, Params::Magic(MagicBytesParams { start, length }))
        }
        "DCHK" => {
            let count = small(field("C")?)?;
            (FeatureFamily::Checksum, Params::Checksum(ChecksumParams { count }))
        }
        "DNST" => {
            let depth = small(field("D")?)?;
            let count = small(field("C")?)?;
            (FeatureFamily::NestedMagicChecksum, Params::Nested(NestedParams { depth, count }))
        }
        _ => return Err(malformed("unknown prefix")),
    };
    if fields.next().is_some() {
        return Err(malformed("trailing fields"));
    }
    let default_len = default_input_len(&params);
    if input_len == Some(default_len) {
        return Err(malformed("explicit input length equals the default"));
    }
    ProgramSpec::with_input_len(family, params, input_len.unwrap_or(default_len)).map_err(|e| {
        ModelError::MalformedName { name: name.to_string(), reason: e.to_string() }
    })
}

/// Decimal without sign or leading zeros.
fn parse_number(digits: &str) -> Option<u64> {
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if digits.len() > 1 && digits.starts_with('0') {
        return None;
    }
    digits.parse().ok()
}

impl fmt::Display for ProgramSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_name(self))
    }
}

impl FromStr for ProgramSpec {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_name(s)
    }
}

#[derive(Serialize, Deserialize)]
struct SpecRecord {
    name: String,
    family: FeatureFamily,
    params: Params,
    input_len: usize,
}

impl Serialize for ProgramSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        SpecRecord {
            name: self.name(),
            family: self.family,
            params: self.params,
            input_len: self.input_len,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ProgramSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let rec = SpecRecord::deserialize(deserializer)?;
        let spec = ProgramSpec::with_input_len(rec.family, rec.params, rec.input_len)
            .map_err(D::Error::custom)?;
        if spec.name() != rec.name {
            return Err(D::Error::custom(format!(
                "name {:?} does not match parameters (expected {:?})",
                rec.name,
                spec.name()
            )));
        }
        Ok(spec)
    }
}

/// The ten tunable parameters, labelled the way report columns are.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Parameter {
    Width,
    Depth,
    Weight,
    BBranch,
    Iteration,
    HasDataConstraint,
    Start,
    Length,
    NestDepth,
    Count,
}

// Values held fixed while another parameter is swept.
pub const DEFAULT_WIDTH: u32 = 2;
pub const DEFAULT_TREE_DEPTH: u32 = 3;
pub const DEFAULT_WEIGHT: u32 = 2;
pub const DEFAULT_BUG_BRANCH: u64 = 1;
pub const DEFAULT_WEIGHT_TREE_DEPTH: u32 = 2;
pub const DEFAULT_ITERATION: u32 = 2;
pub const DEFAULT_MAGIC_START: u32 = 4;
pub const DEFAULT_MAGIC_LENGTH: u32 = 2;
pub const DEFAULT_NESTED_COUNT: u32 = 1;

impl Parameter {
    pub const ALL: [Self; 10] = [
        Self::Width,
        Self::Depth,
        Self::Weight,
        Self::BBranch,
        Self::Iteration,
        Self::HasDataConstraint,
        Self::Start,
        Self::Length,
        Self::NestDepth,
        Self::Count,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Self::Width => "COMW",
            Self::Depth => "COMD",
            Self::Weight => "COMWE",
            Self::BBranch => "COMB",
            Self::Iteration => "COMI",
            Self::HasDataConstraint => "COMDC",
            Self::Start => "DATS",
            Self::Length => "DATL",
            Self::NestDepth => "DATD",
            Self::Count => "DATC",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.label().eq_ignore_ascii_case(label))
    }

    /// Value of this parameter in `spec`, if the spec's parameters carry it.
    pub fn value_of(self, spec: &ProgramSpec) -> Option<f64> {
        let v = match (self, spec.params()) {
            (Self::Width, Params::BranchTree(p)) => p.width.into(),
            (Self::Depth, Params::BranchTree(p)) => p.depth.into(),
            (Self::Weight, Params::BranchTree(p)) => p.weight.into(),
            (Self::BBranch, Params::BranchTree(p)) => p.bug_branch as f64,
            (Self::Iteration, Params::Loop(p)) => p.iteration.into(),
            (Self::HasDataConstraint, Params::Loop(p)) => u8::from(p.has_data_constraint).into(),
            (Self::Start, Params::Magic(p)) => p.start.into(),
            (Self::Length, Params::Magic(p)) => p.length.into(),
            (Self::NestDepth, Params::Nested(p)) => p.depth.into(),
            (Self::Count, Params::Checksum(p)) => p.count.into(),
            (Self::Count, Params::Nested(p)) => p.count.into(),
            _ => return None,
        };
        Some(v)
    }

    /// Whether `spec` belongs to this parameter's sweep: right family, every
    /// other parameter at its default.
    pub fn in_sweep(self, spec: &ProgramSpec) -> bool {
        let at_default_input = spec.input_len() == default_input_len(spec.params());
        at_default_input
            && match (self, spec.family(), spec.params()) {
                (Self::Width, FeatureFamily::BranchTree, Params::BranchTree(p)) => {
                    p.depth == DEFAULT_TREE_DEPTH
                        && p.weight == DEFAULT_WEIGHT
                        && p.bug_branch == DEFAULT_BUG_BRANCH
                }
                (Self::Depth, FeatureFamily::BranchTree, Params::BranchTree(p)) => {
                    p.width == DEFAULT_WIDTH
                        && p.weight == DEFAULT_WEIGHT
                        && p.bug_branch == DEFAULT_BUG_BRANCH
                }
                (Self::Weight, FeatureFamily::BranchWeight, Params::BranchTree(p)) => {
                    p.width == DEFAULT_WIDTH
                        && p.depth == DEFAULT_WEIGHT_TREE_DEPTH
                        && p.bug_branch == DEFAULT_BUG_BRANCH
                }
                (Self::BBranch, FeatureFamily::BranchWeight, Params::BranchTree(p)) => {
                    p.width == DEFAULT_WIDTH
                        && p.depth == DEFAULT_WEIGHT_TREE_DEPTH
                        && p.weight == DEFAULT_WEIGHT
                }
                (Self::Iteration, FeatureFamily::Loop, Params::Loop(p)) => p.kind == LoopKind::Loop,
                (Self::HasDataConstraint, _, Params::Loop(p)) => {
                    p.kind == LoopKind::Loop && p.iteration == DEFAULT_ITERATION
                }
                (Self::Start, FeatureFamily::MagicBytes, Params::Magic(p)) => {
                    p.length == DEFAULT_MAGIC_LENGTH
                }
                (Self::Length, FeatureFamily::MagicBytes, Params::Magic(p)) => {
                    p.start == DEFAULT_MAGIC_START
                }
                (Self::NestDepth, FeatureFamily::NestedMagicChecksum, Params::Nested(p)) => {
                    p.count == DEFAULT_NESTED_COUNT
                }
                (Self::Count, FeatureFamily::Checksum, Params::Checksum(_)) => true,
                _ => false,
            }
    }

    /// Members of this parameter's sweep within `grid`, in grid order.
    pub fn sweep(self, grid: &[ProgramSpec]) -> Vec<&ProgramSpec> {
        grid.iter().filter(|s| self.in_sweep(s)).collect()
    }
}

impl fmt::Display for Parameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Version tag of the frozen default grid.
pub const GRID_VERSION: &str = "featbench-grid-v1";

/// The frozen 153-program benchmark grid.
pub fn default_grid() -> Vec<ProgramSpec> {
    let mut grid = Vec::with_capacity(153);
    let mut push = |spec: Result<ProgramSpec, ModelError>| {
        grid.push(spec.expect("default grid entries are valid"));
    };

    // Branch tree: width x depth, 18 programs.
    for width in [2, 3, 4] {
        for depth in 1..=6 {
            push(ProgramSpec::branch_tree(width, depth, DEFAULT_WEIGHT, DEFAULT_BUG_BRANCH));
        }
    }
    // Branch weight: weight x buggy leaf on two tree shapes, 30 programs.
    for weight in [2, 3, 4, 6, 8] {
        for bug in 1..=4 {
            push(ProgramSpec::branch_weight(2, DEFAULT_WEIGHT_TREE_DEPTH, weight, bug));
        }
    }
    for weight in [2, 3, 4, 8, 16] {
        for bug in [1, 8] {
            push(ProgramSpec::branch_weight(2, 3, weight, bug));
        }
    }
    // Loops and recursion without data constraint, 16 programs.
    for kind in [LoopKind::Loop, LoopKind::Recursion] {
        for iteration in [1, 2, 4, 8, 16, 32, 64, 128] {
            push(ProgramSpec::looped(kind, iteration, false));
        }
    }
    // Loops and recursion with data constraint, 12 programs.
    for kind in [LoopKind::Loop, LoopKind::Recursion] {
        for iteration in 1..=6 {
            push(ProgramSpec::looped(kind, iteration, true));
        }
    }
    // Magic bytes: start x length, 42 programs.
    for start in [0, 4, 8, 16, 32, 64] {
        for length in [1, 2, 3, 4, 6, 8, 16] {
            push(ProgramSpec::magic(start, length));
        }
    }
    // Sequential checksums, 8 programs.
    for count in 1..=8 {
        push(ProgramSpec::checksum(count));
    }
    // Nested magic/checksum conditions, 27 programs.
    for depth in 1..=6 {
        for count in 0..=depth {
            push(ProgramSpec::nested(depth, count));
        }
    }
    grid
}

/// Canonical JSON manifest for a grid: stable key order, trailing newline.
pub fn grid_manifest_json(grid: &[ProgramSpec]) -> String {
    let mut s = serde_json::to_string_pretty(grid).expect("grid serialises");
    s.push('\n');
    s
}

pub fn parse_grid_manifest(json: &str) -> Result<Vec<ProgramSpec>, serde_json::Error> {
    serde_json::from_str(json)
}
