//! Typed view of Java-style stack traces.
//!
//! A trace is flattened into a single ordered list of frames. Position 0 is
//! the crash point (the signaler). When the text carries `Caused by:`
//! segments, the deepest cause that has frames leads the list, followed by
//! the remaining segments in the order they appear in the text.

use std::borrow::Cow;
use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::TraceError;

/// `package.Class.method`, split into its three parts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QualifiedMethod {
    pub package: String,
    pub class: String,
    pub method: String,
}

impl QualifiedMethod {
    /// Splits a dotted method path. Returns `None` unless all three parts
    /// are non-empty.
    pub fn parse(path: &str) -> Option<Self> {
        let (owner, method) = path.rsplit_once('.')?;
        let (package, class) = owner.rsplit_once('.')?;
        if package.is_empty() || class.is_empty() || method.is_empty() {
            return None;
        }
        Some(Self {
            package: package.to_owned(),
            class: class.to_owned(),
            method: method.to_owned(),
        })
    }

    /// Class name with any nested-class suffix (`Outer$Inner`, `Outer$1`)
    /// removed. Classes whose name starts with `$` (`$Proxy12`) are kept.
    pub fn top_level_class(&self) -> &str {
        match self.class.find('$') {
            Some(idx) if idx > 0 => &self.class[..idx],
            _ => &self.class,
        }
    }

    /// `package.TopLevelClass`, the name of the declaring source file.
    pub fn qualified_file_name(&self) -> String {
        let class = self.top_level_class();
        let mut out = String::with_capacity(self.package.len() + 1 + class.len());
        out.push_str(&self.package);
        out.push('.');
        out.push_str(class);
        out
    }
}

impl fmt::Display for QualifiedMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.package, self.class, self.method)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Frame {
    pub qualified_method: QualifiedMethod,
    /// Location file as printed (`ClassMBean.java`, `Unknown Source`,
    /// `Native Method`).
    pub file_name: String,
    pub line: Option<u32>,
    pub position: usize,
}

impl Frame {
    pub fn qualified_file_name(&self) -> String {
        self.qualified_method.qualified_file_name()
    }

    /// True when the frame points at a Java source file.
    pub fn has_source_file(&self) -> bool {
        self.file_name.ends_with(".java")
    }
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}({}:{})", self.qualified_method, self.file_name, line),
            None => write!(f, "{}({})", self.qualified_method, self.file_name),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackTrace {
    /// Exception type of the segment that supplies the crash point.
    pub exception_type: String,
    pub message: Option<String>,
    pub frames: Vec<Frame>,
    pub raw_text: String,
}

impl StackTrace {
    pub fn parse(raw: &str) -> Result<Self, TraceError> {
        parse_stack_trace(raw)
    }

    pub fn crash_point(&self) -> &Frame {
        &self.frames[0]
    }

    /// Exception type followed by one line per frame. Two traces with equal
    /// frame sections render identically regardless of message text.
    pub fn frame_section(&self) -> String {
        let mut out = String::with_capacity(self.exception_type.len() + self.frames.len() * 64);
        out.push_str(&self.exception_type);
        for frame in &self.frames {
            out.push('\n');
            push_display(&mut out, frame);
        }
        out
    }

    /// `package.class.method` of every frame, top first.
    pub fn method_sequence(&self) -> Vec<String> {
        self.frames.iter().map(|f| f.qualified_method.to_string()).collect()
    }
}

fn push_display(out: &mut String, value: &impl fmt::Display) {
    use std::fmt::Write;
    let _ = write!(out, "{value}");
}

/// Parses raw trace text. Fails with [`TraceError::MalformedTrace`] when no
/// line matches the frame grammar.
pub fn parse_stack_trace(raw: &str) -> Result<StackTrace, TraceError> {
    let mut segments: Vec<Segment<'_>> = Vec::new();
    // Indent of the `Suppressed:` block currently being skipped.
    let mut suppressed_indent: Option<usize> = None;

    for line in raw.lines() {
        let body = line.trim_start();
        if body.is_empty() {
            continue;
        }
        let indent = line.len() - body.len();

        if let Some(skip) = suppressed_indent {
            if indent >= skip {
                continue;
            }
            suppressed_indent = None;
        }

        if let Some(rest) = body.strip_prefix("Caused by:") {
            segments.push(Segment::with_header(rest.trim()));
        } else if body.starts_with("Suppressed:") {
            suppressed_indent = Some(indent);
        } else if let Some(path) = frame_body(body) {
            if let Some((method, location)) = split_frame(path) {
                if segments.is_empty() {
                    segments.push(Segment::default());
                }
                segments.last_mut().unwrap().frames.push((method, location));
            }
        } else if body.starts_with("...") {
            // "... N more": frames shared with the enclosing trace
        } else {
            match segments.last_mut() {
                None => segments.push(Segment::with_header(body)),
                Some(seg) if seg.frames.is_empty() => seg.extend_message(body),
                Some(_) => {}
            }
        }
    }

    let Some(lead) = segments.iter().rposition(|s| !s.frames.is_empty()) else {
        return Err(TraceError::MalformedTrace);
    };

    let header = segments[lead].header;
    let (exception_type, message) = split_header(header);
    let message = match (message, segments[lead].extra_message.as_deref()) {
        (Some(m), Some(extra)) => Some(format!("{m}\n{extra}")),
        (None, Some(extra)) => Some(extra.to_owned()),
        (m, None) => m.map(str::to_owned),
    };

    let order = std::iter::once(lead).chain((0..segments.len()).filter(|&i| i != lead));
    let mut frames = Vec::with_capacity(segments.iter().map(|s| s.frames.len()).sum());
    for idx in order {
        for (method, location) in &segments[idx].frames {
            let (file_name, line) = split_location(location);
            frames.push(Frame {
                qualified_method: method.clone(),
                file_name: file_name.to_owned(),
                line,
                position: frames.len(),
            });
        }
    }

    Ok(StackTrace {
        exception_type: exception_type.to_owned(),
        message,
        frames,
        raw_text: raw.to_owned(),
    })
}

#[derive(Default)]
struct Segment<'a> {
    header: &'a str,
    extra_message: Option<String>,
    frames: Vec<(QualifiedMethod, &'a str)>,
}

impl<'a> Segment<'a> {
    fn with_header(header: &'a str) -> Self {
        Self {
            header,
            ..Self::default()
        }
    }

    fn extend_message(&mut self, line: &str) {
        match &mut self.extra_message {
            Some(m) => {
                m.push('\n');
                m.push_str(line);
            }
            None => self.extra_message = Some(line.to_owned()),
        }
    }
}

fn frame_body(body: &str) -> Option<&str> {
    let rest = body.strip_prefix("at")?;
    let trimmed = rest.trim_start();
    (trimmed.len() < rest.len()).then_some(trimmed)
}

/// Splits `pkg.Class.method(Location)` into the method and location text.
fn split_frame(text: &str) -> Option<(QualifiedMethod, &str)> {
    let open = text.find('(')?;
    let close = text.rfind(')')?;
    if close < open {
        return None;
    }
    let path = strip_module_prefix(text[..open].trim_end());
    let method = QualifiedMethod::parse(path)?;
    Some((method, &text[open + 1..close]))
}

/// Drops `classloader/module@version/` prefixes. Module names never carry
/// `$`, which keeps hidden-class suffixes (`Foo$$Lambda$12/0x0001`) intact.
fn strip_module_prefix(mut path: &str) -> &str {
    while let Some((head, tail)) = path.split_once('/') {
        if head.contains('$') {
            break;
        }
        path = tail;
    }
    path
}

fn split_location(location: &str) -> (&str, Option<u32>) {
    if let Some((file, line)) = location.rsplit_once(':') {
        if let Ok(n) = line.trim().parse::<u32>() {
            return (file, Some(n));
        }
    }
    (location, None)
}

fn split_header(header: &str) -> (&str, Option<&str>) {
    let header = match header.strip_prefix("Exception in thread \"") {
        Some(rest) => rest.split_once("\" ").map_or(rest, |(_, h)| h),
        None => header,
    };
    match header.split_once(": ") {
        Some((ty, msg)) => (ty.trim(), Some(msg)),
        None => (header.trim_end_matches(':').trim(), None),
    }
}

pub fn crash_point(trace: &StackTrace) -> &Frame {
    trace.crash_point()
}

pub fn qualified_file_name(frame: &Frame) -> String {
    frame.qualified_file_name()
}

/// One find-and-replace rule over frame identifiers.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RuleSpec", into = "RuleSpec")]
pub struct NormalizationRule {
    pattern: Regex,
    replacement: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RuleSpec {
    pattern: String,
    replacement: String,
}

impl TryFrom<RuleSpec> for NormalizationRule {
    type Error = regex::Error;

    fn try_from(spec: RuleSpec) -> Result<Self, Self::Error> {
        Self::new(&spec.pattern, spec.replacement)
    }
}

impl From<NormalizationRule> for RuleSpec {
    fn from(rule: NormalizationRule) -> Self {
        RuleSpec {
            pattern: rule.pattern.as_str().to_owned(),
            replacement: rule.replacement,
        }
    }
}

impl NormalizationRule {
    /// `replacement` uses regex expansion syntax (`${1}`, `$$` for `$`).
    pub fn new(pattern: &str, replacement: impl Into<String>) -> Result<Self, regex::Error> {
        Ok(Self {
            pattern: Regex::new(pattern)?,
            replacement: replacement.into(),
        })
    }

    pub fn pattern(&self) -> &str {
        self.pattern.as_str()
    }

    pub fn replacement(&self) -> &str {
        &self.replacement
    }
}

impl PartialEq for NormalizationRule {
    fn eq(&self, other: &Self) -> bool {
        self.pattern.as_str() == other.pattern.as_str() && self.replacement == other.replacement
    }
}

/// Ordered rule list applied to every frame identifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NormalizationRules(pub Vec<NormalizationRule>);

impl Default for NormalizationRules {
    /// Reflection accessors (`GeneratedMethodAccessor10184`,
    /// `GeneratedConstructorAccessor7`, `GeneratedSerializationConstructorAccessor3`)
    /// and JDK proxies (`$Proxy123`).
    fn default() -> Self {
        let rules = [(r"(Generated\w*Accessor)\d+", "${1}#"), (r"\$Proxy\d+", "$$Proxy#")];
        Self(
            rules
                .iter()
                .map(|(p, r)| NormalizationRule::new(p, *r).expect("built-in rule compiles"))
                .collect(),
        )
    }
}

const MAX_REWRITE_PASSES: usize = 8;

impl NormalizationRules {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Applies every rule until the text stops changing.
    pub fn apply<'a>(&self, text: &'a str) -> Cow<'a, str> {
        let mut current = Cow::Borrowed(text);
        for _ in 0..MAX_REWRITE_PASSES {
            let mut changed = false;
            for rule in &self.0 {
                if let Cow::Owned(next) = rule.pattern.replace_all(&current, rule.replacement.as_str()) {
                    if next != *current {
                        changed = true;
                        current = Cow::Owned(next);
                    }
                }
            }
            if !changed {
                break;
            }
        }
        current
    }
}

/// Copy of `trace` with every frame identifier rewritten by `rules`.
/// Line numbers, positions and the raw text are preserved.
pub fn normalize_trace(trace: &StackTrace, rules: &NormalizationRules) -> StackTrace {
    if rules.is_empty() {
        return trace.clone();
    }
    let frames = trace
        .frames
        .iter()
        .map(|frame| {
            let path = frame.qualified_method.to_string();
            let qualified_method = match rules.apply(&path) {
                Cow::Borrowed(_) => frame.qualified_method.clone(),
                Cow::Owned(rewritten) => {
                    QualifiedMethod::parse(&rewritten).unwrap_or_else(|| frame.qualified_method.clone())
                }
            };
            Frame {
                qualified_method,
                file_name: rules.apply(&frame.file_name).into_owned(),
                line: frame.line,
                position: frame.position,
            }
        })
        .collect();
    StackTrace {
        exception_type: trace.exception_type.clone(),
        message: trace.message.clone(),
        frames,
        raw_text: trace.raw_text.clone(),
    }
}
