use std::path::PathBuf;

use smarthangar_core::ingest::{parse_metar, MetarError, ReferenceMonth, KNOT_TO_MPS};

fn corpus(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/metar").join(name);
    std::fs::read_to_string(path).unwrap()
}

fn kind(e: &MetarError) -> String {
    match e {
        MetarError::MalformedReport { group } => group.to_string(),
        MetarError::UnknownUnit(_) => "unit".to_string(),
    }
}

#[test]
fn every_bundled_report_parses() {
    let text = corpus("corpus.txt");
    let reference = ReferenceMonth::new(2023, 3).unwrap();
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    assert!(lines.len() >= 20);
    for line in lines {
        let report = parse_metar(line, reference).unwrap_or_else(|e| panic!("{line}: {e}"));
        assert!(report.dew_point <= report.temperature + 0.5, "{line}");
    }
}

#[test]
fn malformed_reports_fail_with_their_documented_kind() {
    let text = corpus("malformed.txt");
    let reference = ReferenceMonth::new(2023, 3).unwrap();
    let mut seen = 0;
    for line in text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        let (expected, report) = line.split_once(" | ").unwrap();
        let err = parse_metar(report, reference).expect_err(report);
        assert_eq!(kind(&err), expected, "{report}");
        seen += 1;
    }
    assert!(seen >= 10);
}

#[test]
fn knots_convert_exactly() {
    let reference = ReferenceMonth::new(2023, 3).unwrap();
    for kt in [0u32, 1, 2, 7, 10, 35, 99, 150] {
        let line = format!("METAR LKPR 121200Z 270{kt:02}KT 9999 10/05 Q1015");
        let report = parse_metar(&line, reference).unwrap();
        assert!((report.wind_speed - kt as f64 * 0.514444).abs() < 1e-9);
    }
    assert_eq!(KNOT_TO_MPS, 0.514444);
}
