//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use chrono::{Duration, TimeZone, Utc};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use smarthangar_core::config::ServiceConfig;
use smarthangar_core::decision::{
    build_training_corpus, train_tree, DecisionInput, Feature, FeatureKind, Output, RuleSet,
};
use smarthangar_core::engine::EvaluateRequest;
use smarthangar_core::features::{
    dew_point, indoor_concentration, time_of_wetness, AirExchange, DepositionTable, InfiltrationParams,
};
use smarthangar_core::ingest::{parse_metar, MetarError, ReferenceMonth};
use smarthangar_core::pipeline::{grid_search_window, moving_average, resample, UniformSeries};
use smarthangar_core::risk::{CorrosivityTable, SalinityClass, So2Class, TowClass};
use smarthangar_core::store::{HangarProfile, Material, ObservationSeries, Placement, Sample, SeriesKey, Variable};
use smarthangar_core::synth;
use smarthangar_core::{CorrosivityCategory, Engine, Species};

fn start() -> chrono::DateTime<Utc> {
    Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap()
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// Runs ingest → evaluate → recommend over a fixture in a fresh in-memory store.
fn full_run(fixture: &synth::Fixture) -> (Vec<u8>, smarthangar_core::Recommendation) {
    let mut config = ServiceConfig::parse(fixture.file("config.toml").unwrap()).unwrap();
    config.storage = None;
    config.pipeline.validation = None;
    let engine = Engine::open(config).unwrap();
    let profile: HangarProfile = serde_json::from_str(fixture.file("profile.json").unwrap()).unwrap();
    engine.put_profile(&profile).unwrap();
    let reference = ReferenceMonth::new(2023, 1);
    assert!(engine.ingest_metar(fixture.file("metar.txt").unwrap(), reference).unwrap().failed.is_empty());
    assert!(engine.ingest_pollution(fixture.file("pollution.csv").unwrap()).unwrap().failed.is_empty());
    assert!(engine.ingest_series(fixture.file("indoor.csv").unwrap()).unwrap().failed.is_empty());
    let snapshot = engine
        .evaluate(&EvaluateRequest::new(fixture.range.start, fixture.range.end))
        .unwrap();
    (snapshot.to_bytes(), engine.recommend().unwrap())
}

fn kbely_use_case() {
    let fixture = synth::kbely_fixture();
    for (name, contents) in &fixture.files {
        let shipped = std::fs::read_to_string(fixtures().join("kbely").join(name)).unwrap();
        assert!(shipped == *contents, "shipped kbely/{name} is stale");
    }
    let (bytes, rec) = full_run(&fixture);
    let snapshot: smarthangar_core::Snapshot = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(snapshot.features.time_of_wetness, 60.6);
    assert_eq!(snapshot.risk.corrosivity.category, CorrosivityCategory::C2);
    assert_eq!(snapshot.risk.corrosivity.label, "low");
    for output in Output::ALL {
        let expected = matches!(
            output,
            Output::InstallHeating | Output::InstallInsulation | Output::UninstallCarpets
        );
        let label = rec.actions.label(output);
        assert_eq!(label, if expected { "yes" } else { "no_action" }, "{}", output.name());
    }
}

fn random_year(rng: &mut StdRng, step_minutes: i64) -> (UniformSeries, UniformSeries) {
    let n = (365 * 24 * 60 / step_minutes) as usize;
    let mut t = Vec::with_capacity(n);
    let mut rh = Vec::with_capacity(n);
    for i in 0..n {
        let base_t = 8.0 + 12.0 * (i as f64 / n as f64 * std::f64::consts::TAU).sin();
        t.push(rng.gen_bool(0.97).then(|| base_t + rng.gen_range(-8.0..8.0)));
        let v = match rng.gen_range(0..20) {
            0 => 80.0,
            1 => 100.0,
            _ => rng.gen_range(30.0..100.0),
        };
        rh.push(rng.gen_bool(0.97).then_some(v));
        if rng.gen_range(0..50) == 0 {
            t[i] = Some(0.0);
        }
    }
    let step = Duration::minutes(step_minutes);
    (UniformSeries::new(start(), step, t), UniformSeries::new(start(), step, rh))
}

fn tow_oracle() {
    let mut rng = StdRng::seed_from_u64(0x7077);
    for case in 0..100 {
        let step_minutes = [10, 30, 36, 60][case % 4];
        let (t, rh) = random_year(&mut rng, step_minutes);
        let mut count = 0usize;
        for i in 0..t.values.len() {
            if let (Some(t), Some(rh)) = (t.values[i], rh.values[i]) {
                if rh > 80.0 && t > 0.0 {
                    count += 1;
                }
            }
        }
        let brute = (count as i64 * step_minutes * 60) as f64 / 3600.0;
        assert_eq!(time_of_wetness(&t, &rh).unwrap(), brute, "case {case}");
    }
}

fn infiltration_analytics() {
    let closed_form = |c_out: f64, c0: f64, n: f64, sink: f64, t: f64| {
        let lambda = n + sink;
        let steady = n * c_out / lambda;
        steady + (c0 - steady) * (-lambda * t).exp()
    };
    for (n, v, area, volume, c_out, c0) in
        [(0.5, 1.8, 1000.0, 8000.0, 5.0, 0.0), (0.1, 0.4, 50.0, 100.0, 40.0, 80.0), (2.0, 0.2, 300.0, 900.0, 12.0, 3.0)]
    {
        let params = InfiltrationParams { air_exchange: AirExchange::Constant(n), surfaces: vec![(v, area)], volume };
        for step_minutes in [36i64, 60] {
            let outdoor = UniformSeries::new(start(), Duration::minutes(step_minutes), vec![Some(c_out); 500]);
            let indoor = indoor_concentration(&outdoor, &params, c0).unwrap();
            for (k, value) in indoor.values.iter().enumerate() {
                let exact = closed_form(c_out, c0, n, v * area / volume, k as f64 * step_minutes as f64 / 60.0);
                let got = value.unwrap();
                let err = if exact == 0.0 { got.abs() } else { ((got - exact) / exact).abs() };
                assert!(err < 1e-6, "k {k}: {got} vs {exact}");
            }
        }
    }

    let profile = synth::kbely_profile();
    let so2_sink = (1.8 * profile.walls_area + 0.4 * profile.roof_area + 1.4 * profile.floor_area) / profile.volume;
    let params = InfiltrationParams::for_hangar(
        &profile,
        &DepositionTable::default(),
        Species::So2,
        AirExchange::Constant(0.5),
        0.0,
    );
    let outdoor = UniformSeries::new(start(), Duration::hours(1), vec![Some(10.0); 400]);
    let indoor = indoor_concentration(&outdoor, &params, 0.0).unwrap();
    let steady = 0.5 * 10.0 / (0.5 + so2_sink);
    let last = indoor.values.last().unwrap().unwrap();
    assert!((last - steady).abs() < 1e-9, "{last} vs {steady}");
}

/// Magnus saturation curve inverted by bisection.
fn dew_point_by_bisection(t: f64, rh: f64) -> f64 {
    let es = |x: f64| 6.112 * (17.625 * x / (243.04 + x)).exp();
    let target = rh / 100.0 * es(t);
    let (mut lo, mut hi) = (-100.0, t + 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if es(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn dew_point_oracle() {
    for ti in -200..=400 {
        let t = ti as f64 / 10.0;
        for rh in 5..=100 {
            let rh = rh as f64;
            let dp = dew_point(t, rh).unwrap();
            assert!((dp - dew_point_by_bisection(t, rh)).abs() < 0.05, "T {t} RH {rh}");
        }
        assert!((dew_point(t, 100.0).unwrap() - t).abs() < 1e-9);
    }
}

fn random_input(rng: &mut StdRng) -> DecisionInput {
    loop {
        let floor = rng.gen_range(10.0..5000.0);
        let profile = HangarProfile {
            near_sea: rng.gen(),
            ac_installed: rng.gen(),
            heating_installed: rng.gen(),
            filters_installed: rng.gen(),
            insulation_installed: rng.gen(),
            barriers_installed: rng.gen(),
            carpets_installed: rng.gen(),
            walls_material: Material::ALL[rng.gen_range(0..3)],
            walls_area: rng.gen_range(10.0..5000.0),
            roof_material: Material::ALL[rng.gen_range(0..3)],
            roof_area: rng.gen_range(10.0..5000.0),
            floor_material: Material::ALL[rng.gen_range(0..3)],
            floor_area: floor,
            exhibition_area: rng.gen_range(0.0..floor),
            volume: rng.gen_range(100.0..50_000.0),
        };
        let mut input = DecisionInput::quiet(profile);
        for feature in Feature::ALL {
            let value = match feature.kind() {
                FeatureKind::Flag | FeatureKind::Material | FeatureKind::Category => {
                    continue;
                }
                FeatureKind::Numeric => match feature.name() {
                    "mean_risk" | "max_risk" => rng.gen_range(0.0..=1.0),
                    "time_of_wetness" => rng.gen_range(0.0..8760.0),
                    _ => rng.gen_range(0.0..200.0),
                },
            };
            if feature.name().ends_with("_area") || feature.name() == "volume" {
                continue;
            }
            let _ = input.set(feature, value);
        }
        input.iso_category = CorrosivityCategory::ALL[rng.gen_range(0..5)];
        input.indoor_drier_than_outdoor = rng.gen();
        if rng.gen() {
            input.occupancy = Some(rng.gen_range(0.0..500.0));
        }
        if input.validate().is_ok() {
            return input;
        }
    }
}

fn decision_tree() {
    let rules = RuleSet::builtin();
    let (corpus, _) = build_training_corpus(&rules.rules, &rules.grid).unwrap();
    let a = train_tree(&corpus, rules.training).unwrap();
    let b = train_tree(&corpus, rules.training).unwrap();
    assert_eq!(a.fingerprint, b.fingerprint);
    assert_eq!(a.export(), b.export());
    for example in &corpus.examples {
        assert_eq!(a.raw_predict(&example.input), example.actions, "training error");
    }
    let mut rng = StdRng::seed_from_u64(0xdec1);
    for _ in 0..10_000 {
        let input = random_input(&mut rng);
        let prediction = a.predict(&input);
        assert!(prediction.actions.violations(&input.profile).is_empty(), "{input:?}");
    }
}

fn pipeline() {
    let mut rng = StdRng::seed_from_u64(0x91);
    let values: Vec<Option<f64>> = (0..500).map(|_| rng.gen_bool(0.9).then(|| rng.gen_range(-50.0..50.0))).collect();
    let hourly = UniformSeries::new(start(), Duration::hours(1), values);
    assert_eq!(moving_average(&hourly, 1).unwrap(), hourly);

    let result = grid_search_window(&(1..=168).collect::<Vec<u32>>(), |w| {
        Ok::<f64, String>((w as f64 - 37.0).powi(2) + 3.0)
    })
    .unwrap();
    assert_eq!(result.best_window, 37);
    assert_eq!(result.best_score, 3.0);

    let key = SeriesKey::of(Variable::Temperature, Placement::Indoor);
    let raw = ObservationSeries::new(
        key,
        vec![
            Sample { timestamp: start(), value: 0.0 },
            Sample { timestamp: start() + Duration::hours(2), value: 10.0 },
        ],
    )
    .unwrap();
    let out = resample(&raw, Duration::hours(1), Duration::hours(6)).unwrap();
    assert_eq!(out.values, vec![Some(0.0), Some(5.0), Some(10.0)]);
}

fn metar_corpus() {
    let dir = fixtures().join("metar");
    let reference = ReferenceMonth::new(2023, 3).unwrap();
    let corpus = std::fs::read_to_string(dir.join("corpus.txt")).unwrap();
    let reports: Vec<&str> = corpus.lines().filter(|l| !l.trim().is_empty()).collect();
    assert!(reports.len() >= 20);
    for line in &reports {
        parse_metar(line, reference).unwrap_or_else(|e| panic!("{line}: {e}"));
    }
    let malformed = std::fs::read_to_string(dir.join("malformed.txt")).unwrap();
    for line in malformed.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        let (expected, report) = line.split_once(" | ").unwrap();
        let kind = match parse_metar(report, reference).expect_err(report) {
            MetarError::MalformedReport { group } => group.to_string(),
            MetarError::UnknownUnit(_) => "unit".into(),
        };
        assert_eq!(kind, expected, "{report}");
    }
    for kt in 0..=120u32 {
        let r = parse_metar(&format!("LKPR 121200Z 090{kt:02}KT 10/05"), reference).unwrap();
        assert!((r.wind_speed - kt as f64 * 0.514444).abs() < 1e-9);
    }
}

fn iso_classifier() {
    for (edge, below, above) in [
        (10.0, TowClass::T1, TowClass::T2),
        (250.0, TowClass::T2, TowClass::T3),
        (2500.0, TowClass::T3, TowClass::T4),
        (5500.0, TowClass::T4, TowClass::T5),
    ] {
        assert_eq!(TowClass::classify(edge), below);
        assert_eq!(TowClass::classify(f64::from_bits(edge.to_bits() + 1)), above);
    }
    for (edge, below, above) in [
        (12.0, So2Class::P0, Some(So2Class::P1)),
        (40.0, So2Class::P1, Some(So2Class::P2)),
        (90.0, So2Class::P2, Some(So2Class::P3)),
        (250.0, So2Class::P3, None),
    ] {
        assert_eq!(So2Class::classify(edge).unwrap(), below);
        assert_eq!(So2Class::classify(f64::from_bits(edge.to_bits() + 1)).ok(), above);
    }
    let table = CorrosivityTable::default();
    for &t in TowClass::ALL {
        for &p in So2Class::ALL {
            for &s in SalinityClass::ALL {
                let c = table.lookup(t, p, s);
                for &t2 in TowClass::ALL.iter().filter(|x| **x >= t) {
                    for &p2 in So2Class::ALL.iter().filter(|x| **x >= p) {
                        for &s2 in SalinityClass::ALL.iter().filter(|x| **x >= s) {
                            assert!(table.lookup(t2, p2, s2) >= c, "{t}{p}{s} vs {t2}{p2}{s2}");
                        }
                    }
                }
            }
        }
    }
}

fn end_to_end_determinism() {
    for fixture in [synth::kbely_fixture(), synth::benign_fixture()] {
        let (a, rec_a) = full_run(&fixture);
        let (b, rec_b) = full_run(&fixture);
        assert!(a == b, "{} snapshots differ", fixture.name);
        assert_eq!(rec_a.table(), rec_b.table());
        assert_eq!(serde_json::to_vec(&rec_a).unwrap(), serde_json::to_vec(&rec_b).unwrap());
    }
}

fn main() {
    let criteria: [(&str, fn()); 9] = [
        ("kbely use-case reproduction", kbely_use_case),
        ("time-of-wetness oracle equivalence", tow_oracle),
        ("infiltration analytics", infiltration_analytics),
        ("dew point", dew_point_oracle),
        ("decision tree", decision_tree),
        ("pipeline", pipeline),
        ("metar corpus", metar_corpus),
        ("iso classifier", iso_classifier),
        ("end-to-end determinism", end_to_end_determinism),
    ];
    let default_hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        match catch_unwind(AssertUnwindSafe(check)) {
            Ok(()) => println!("PASS  {name}"),
            Err(payload) => {
                failed += 1;
                let why = payload
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("FAIL  {name}: {why}");
            }
        }
    }
    std::panic::set_hook(default_hook);
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
