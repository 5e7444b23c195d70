//! Seeded synthetic crash corpora with planted similarity relations.

use std::collections::HashSet;
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use crashlens_core::ingest::CrashRecord;
use crashlens_core::{parse_stack_trace, CrashCorpus, CrashReport};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Size and style of a generated corpus.
#[derive(Debug, Clone, Copy)]
pub struct Shape {
    /// Trace families; each shares one crash-point class.
    pub families: usize,
    /// Distinct raw trace texts (at least `families`).
    pub traces: usize,
    /// Crash reports (at least `traces`).
    pub reports: usize,
    /// Draw application frames from one small shared pool so that
    /// unrelated families can still end up merged. When false every
    /// family uses its own classes and stays a separate level-4 group.
    pub shared_frames: bool,
    /// Allow `Caused by:` chains.
    pub chained_causes: bool,
}

impl Shape {
    /// Small corpus with dense cross-family overlap.
    pub fn tangled(reports: usize) -> Self {
        let traces = (reports * 2 / 3).max(1);
        Self {
            families: (traces / 4).max(1),
            traces,
            reports,
            shared_frames: true,
            chained_causes: true,
        }
    }

    /// Families isolated from one another.
    pub fn planted(families: usize, traces: usize, reports: usize) -> Self {
        Self {
            families,
            traces,
            reports,
            shared_frames: false,
            chained_causes: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct GenFrame {
    class: String,
    method: String,
    file: String,
    line: Option<u32>,
}

impl GenFrame {
    fn new(class: impl Into<String>, method: impl Into<String>, line: u32) -> Self {
        let class = class.into();
        let simple = class.rsplit('.').next().unwrap_or(&class);
        let top = simple.split('$').next().unwrap_or(simple).to_owned();
        Self {
            file: format!("{top}.java"),
            class,
            method: method.into(),
            line: Some(line),
        }
    }

    fn unknown(class: impl Into<String>, method: impl Into<String>) -> Self {
        Self {
            class: class.into(),
            method: method.into(),
            file: "Unknown Source".into(),
            line: None,
        }
    }

    fn render(&self) -> String {
        match self.line {
            Some(l) => format!("\tat {}.{}({}:{})", self.class, self.method, self.file, l),
            None => format!("\tat {}.{}({})", self.class, self.method, self.file),
        }
    }
}

#[derive(Debug, Clone)]
struct Skeleton {
    exception: String,
    message: String,
    frames: Vec<GenFrame>,
    /// Frames from the top that belong to the application.
    app_frames: usize,
    crash_class: String,
}

const EXCEPTIONS: [&str; 5] = [
    "java.lang.NullPointerException",
    "java.lang.IllegalStateException",
    "java.lang.IllegalArgumentException",
    "java.lang.ArithmeticException",
    "java.lang.IndexOutOfBoundsException",
];

const FRAMEWORK: [(&str, &str, &str, u32); 4] = [
    ("org.framework.web.Dispatcher", "dispatch", "Dispatcher.java", 120),
    ("org.framework.web.Filter", "doFilter", "Filter.java", 55),
    ("org.framework.web.Filter", "next", "Filter.java", 61),
    ("javax.servlet.http.HttpServlet", "service", "HttpServlet.java", 790),
];

fn app_class(rng: &mut ChaCha8Rng, family: usize, shape: &Shape) -> String {
    let base = if shape.shared_frames {
        format!("com.acme.m{}.C{}", rng.gen_range(0..3), rng.gen_range(0..4))
    } else {
        format!("com.acme.f{family}.Part{}", rng.gen_range(0..4))
    };
    match rng.gen_range(0..10) {
        0 => format!("{base}$1"),
        1 => format!("{base}$Inner"),
        _ => base,
    }
}

fn skeleton(rng: &mut ChaCha8Rng, family: usize, shape: &Shape) -> Skeleton {
    let crash_class = if shape.shared_frames {
        format!("com.acme.m{}.C{}", rng.gen_range(0..5), rng.gen_range(0..8))
    } else {
        format!("com.acme.f{family}.Svc{family}")
    };
    let mut frames = vec![GenFrame::new(
        crash_class.clone(),
        format!("op{}", rng.gen_range(0..3)),
        rng.gen_range(10..400),
    )];
    for _ in 0..rng.gen_range(1..=3) {
        let method = if rng.gen_bool(0.1) {
            format!("lambda$run${}", rng.gen_range(0..2))
        } else {
            format!("step{}", rng.gen_range(0..3))
        };
        frames.push(GenFrame::new(
            app_class(rng, family, shape),
            method,
            rng.gen_range(10..400),
        ));
    }
    let app_frames = frames.len();
    if rng.gen_bool(0.4) {
        frames.push(GenFrame::unknown(
            format!("sun.reflect.GeneratedMethodAccessor{}", rng.gen_range(100..20000)),
            "invoke",
        ));
        frames.push(GenFrame::new("sun.reflect.DelegatingMethodAccessorImpl", "invoke", 43));
        frames.push(GenFrame::new("java.lang.reflect.Method", "invoke", 606));
    }
    if rng.gen_bool(0.3) {
        frames.push(GenFrame::unknown(
            format!("com.sun.proxy.$Proxy{}", rng.gen_range(10..200)),
            "execute",
        ));
    }
    let start = rng.gen_range(0..FRAMEWORK.len());
    for &(class, method, file, line) in &FRAMEWORK[start..] {
        frames.push(GenFrame {
            class: class.into(),
            method: method.into(),
            file: file.into(),
            line: Some(line),
        });
    }
    Skeleton {
        exception: EXCEPTIONS[rng.gen_range(0..EXCEPTIONS.len())].into(),
        message: format!("failure in family {family}"),
        frames,
        app_frames,
        crash_class,
    }
}

fn reroll_generated(frame: &mut GenFrame, rng: &mut ChaCha8Rng) -> bool {
    if frame.class.contains("GeneratedMethodAccessor") {
        frame.class = format!("sun.reflect.GeneratedMethodAccessor{}", rng.gen_range(100..20000));
        true
    } else if frame.class.contains("$Proxy") {
        frame.class = format!("com.sun.proxy.$Proxy{}", rng.gen_range(10..200));
        true
    } else {
        false
    }
}

/// A variant related to `base`: its method sequence equals, contains or is
/// contained in the skeleton's, or it keeps the crash-point class.
fn variant(rng: &mut ChaCha8Rng, base: &Skeleton, shape: &Shape, serial: usize) -> String {
    let mut exception = base.exception.clone();
    let mut message = Some(format!("{} (#{serial})", base.message));
    let mut frames = base.frames.clone();
    let mut cause_wrapper = false;

    if rng.gen_bool(0.15) {
        // Another method of the crash-point class, called from a helper.
        frames[0].method = format!("op{}", rng.gen_range(3..6));
        frames[0].line = Some(rng.gen_range(10..400));
        frames.truncate(1);
        frames.push(GenFrame::new(
            base.crash_class.clone() + "$Helper",
            "call",
            rng.gen_range(1..90),
        ));
    } else {
        // Cosmetic edits.
        if rng.gen_bool(0.4) {
            let i = rng.gen_range(0..frames.len());
            if let Some(line) = frames[i].line.as_mut() {
                *line += rng.gen_range(1..20);
            }
        }
        if rng.gen_bool(0.5) {
            for f in frames.iter_mut() {
                reroll_generated(f, rng);
            }
        }
        if rng.gen_bool(0.15) {
            exception = EXCEPTIONS[rng.gen_range(0..EXCEPTIONS.len())].into();
        }
        if rng.gen_bool(0.2) {
            message = None;
        }
        // At most one structural edit.
        match rng.gen_range(0..6) {
            0 if base.app_frames > 1 => {
                let drop = rng.gen_range(1..base.app_frames);
                frames.drain(..drop);
            }
            1 if frames.len() > 2 => {
                frames.pop();
            }
            2 if shape.chained_causes => cause_wrapper = true,
            _ => {}
        }
    }

    let header = match &message {
        Some(m) => format!("{exception}: {m}"),
        None => exception.clone(),
    };
    let mut lines = Vec::new();
    if cause_wrapper {
        // The wrapper's frames follow the cause's after flattening.
        lines.push(format!("javax.servlet.ServletException: request failed (#{serial})"));
        lines.push("\tat org.framework.web.Wrapper.wrap(Wrapper.java:12)".to_owned());
        lines.push("\tat org.framework.web.Wrapper.handle(Wrapper.java:30)".to_owned());
        lines.push(format!("Caused by: {header}"));
        lines.extend(frames.iter().map(GenFrame::render));
    } else {
        lines.push(header);
        lines.extend(frames.iter().map(GenFrame::render));
    }
    lines.join("\n")
}

fn render_skeleton(s: &Skeleton) -> String {
    let mut lines = vec![format!("{}: {}", s.exception, s.message)];
    lines.extend(s.frames.iter().map(GenFrame::render));
    lines.join("\n")
}

/// Generated corpus. `trace_family[i]` is the family of `traces[i]`.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub traces: Vec<String>,
    pub trace_family: Vec<usize>,
    pub reports: Vec<CrashReport>,
}

pub fn start_instant() -> DateTime<Utc> {
    "2022-03-07T00:00:00Z".parse().expect("valid instant")
}

pub fn generate(shape: Shape, seed: u64) -> Synthetic {
    assert!(shape.families >= 1 && shape.traces >= shape.families && shape.reports >= shape.traces);
    let mut rng = rng(seed);
    let skeletons: Vec<Skeleton> = (0..shape.families).map(|f| skeleton(&mut rng, f, &shape)).collect();

    let mut traces = Vec::with_capacity(shape.traces);
    let mut trace_family = Vec::with_capacity(shape.traces);
    let mut seen = HashSet::new();
    for (f, s) in skeletons.iter().enumerate() {
        let text = render_skeleton(s);
        seen.insert(text.clone());
        traces.push(text);
        trace_family.push(f);
    }
    let mut serial = 0;
    while traces.len() < shape.traces {
        let f = rng.gen_range(0..shape.families);
        serial += 1;
        let text = variant(&mut rng, &skeletons[f], &shape, serial);
        if seen.insert(text.clone()) {
            traces.push(text);
            trace_family.push(f);
        }
    }

    let parsed: Vec<Arc<_>> = traces
        .iter()
        .map(|t| Arc::new(parse_stack_trace(t).expect("generated traces parse")))
        .collect();

    // Every trace occurs at least once; the rest skew towards low indices.
    let mut assignment: Vec<usize> = (0..shape.traces).collect();
    for _ in shape.traces..shape.reports {
        let u: f64 = rng.gen();
        assignment.push(((u * u) * shape.traces as f64) as usize);
    }
    assignment.shuffle(&mut rng);

    let start = start_instant();
    let span_secs = 14 * 24 * 3600;
    let reports = assignment
        .into_iter()
        .enumerate()
        .map(|(i, t)| CrashReport {
            crash_id: format!("c{i:06}"),
            timestamp: start + Duration::seconds(rng.gen_range(0..span_secs)),
            uri: format!("/app/m{}/page{}.jsf", trace_family[t] % 7, rng.gen_range(0..5)),
            user: rng.gen_bool(0.85).then(|| format!("user{:02}", rng.gen_range(0..40))),
            session_id: rng.gen_bool(0.7).then(|| format!("sess{:04}", rng.gen_range(0..500))),
            trace: Arc::clone(&parsed[t]),
        })
        .collect();

    Synthetic {
        traces,
        trace_family,
        reports,
    }
}

impl Synthetic {
    pub fn corpus(&self) -> CrashCorpus {
        CrashCorpus::from_reports(self.reports.clone(), None).expect("unique ids")
    }

    /// Same reports in a shuffled order.
    pub fn shuffled_corpus(&self, seed: u64) -> CrashCorpus {
        let mut reports = self.reports.clone();
        reports.shuffle(&mut rng(seed));
        CrashCorpus::from_reports(reports, None).expect("unique ids")
    }

    pub fn to_ndjson(&self) -> String {
        records_to_ndjson(self.reports.iter())
    }
}

pub fn records_to_ndjson<'r>(reports: impl IntoIterator<Item = &'r CrashReport>) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&serde_json::to_string(&CrashRecord::from(r)).expect("record serializes"));
        out.push('\n');
    }
    out
}
