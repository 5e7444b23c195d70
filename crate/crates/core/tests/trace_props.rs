use crashlens_core::trace_model::normalize_trace;
use crashlens_core::{parse_stack_trace, NormalizationRules};
use crashlens_testkit::oracle::mask_generated;
use proptest::prelude::*;

fn ident() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9]{0,6}"
}

fn class_name() -> impl Strategy<Value = String> {
    prop_oneof![
        6 => "[A-Z][A-Za-z0-9]{0,8}",
        1 => (0u32..50_000).prop_map(|n| format!("GeneratedMethodAccessor{n}")),
        1 => (0u32..500).prop_map(|n| format!("$Proxy{n}")),
        1 => ("[A-Z][a-z]{1,5}", "[A-Z1-9][a-z]{0,3}").prop_map(|(a, b)| format!("{a}${b}")),
    ]
}

fn frame() -> impl Strategy<Value = String> {
    (
        prop::collection::vec(ident(), 1..4),
        class_name(),
        ident(),
        prop_oneof![
            4 => (1u32..5000).prop_map(Some),
            1 => Just(None),
        ],
        any::<bool>(),
    )
        .prop_map(|(pkg, class, method, line, native)| {
            let file = class
                .split('$')
                .next()
                .filter(|s| !s.is_empty())
                .unwrap_or("Gen")
                .to_owned();
            let location = match (line, native) {
                (Some(l), _) => format!("{file}.java:{l}"),
                (None, true) => "Native Method".to_owned(),
                (None, false) => "Unknown Source".to_owned(),
            };
            format!("\tat {}.{class}.{method}({location})", pkg.join("."))
        })
}

fn trace_text() -> impl Strategy<Value = String> {
    (
        "[a-z]{2,5}\\.[A-Z][a-z]{2,8}Exception",
        prop::option::of("[ -~]{0,30}"),
        prop::collection::vec(frame(), 1..12),
        prop::option::of((
            "[a-z]{2,5}\\.[A-Z][a-z]{2,8}Error",
            prop::collection::vec(frame(), 1..5),
        )),
    )
        .prop_map(|(exc, msg, frames, cause)| {
            let mut lines = vec![match msg {
                Some(m) => format!("{exc}: {m}"),
                None => exc,
            }];
            lines.extend(frames);
            if let Some((cause_exc, cause_frames)) = cause {
                lines.push(format!("Caused by: {cause_exc}"));
                lines.extend(cause_frames);
                lines.push("\t... 3 more".to_owned());
            }
            lines.join("\n")
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn parsing_is_deterministic_and_reparses(text in trace_text()) {
        let a = parse_stack_trace(&text).unwrap();
        let b = parse_stack_trace(&text).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(parse_stack_trace(&a.raw_text).unwrap(), a);
    }

    #[test]
    fn positions_count_from_the_crash_point(text in trace_text()) {
        let t = parse_stack_trace(&text).unwrap();
        prop_assert_eq!(t.crash_point().position, 0);
        for (i, f) in t.frames.iter().enumerate() {
            prop_assert_eq!(f.position, i);
        }
    }

    #[test]
    fn normalization_is_idempotent(text in trace_text()) {
        let rules = NormalizationRules::default();
        let once = normalize_trace(&parse_stack_trace(&text).unwrap(), &rules);
        let twice = normalize_trace(&once, &rules);
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(once.frames.len(), parse_stack_trace(&text).unwrap().frames.len());
    }

    #[test]
    fn default_rules_match_reference_masking(text in trace_text()) {
        let rules = NormalizationRules::default();
        let t = parse_stack_trace(&text).unwrap();
        let normalized = normalize_trace(&t, &rules);
        for (raw, norm) in t.frames.iter().zip(&normalized.frames) {
            prop_assert_eq!(norm.qualified_method.to_string(), mask_generated(&raw.qualified_method.to_string()));
        }
    }

    #[test]
    fn messages_do_not_change_frame_section(text in trace_text(), msg in "[ -~]{1,20}") {
        let t = parse_stack_trace(&text).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let header = format!("{}: {msg}", t.exception_type);
        if !text.contains("Caused by") {
            lines[0] = &header;
            let other = parse_stack_trace(&lines.join("\n")).unwrap();
            prop_assert_eq!(other.frame_section(), t.frame_section());
        }
    }
}
