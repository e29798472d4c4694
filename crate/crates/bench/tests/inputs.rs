use smarthangar_bench::{hourly_temperature_year, uniform};

#[test]
fn bench_inputs_have_the_expected_shape() {
    let year = hourly_temperature_year();
    assert_eq!(year.points.len(), 8760 - 52);
    assert!(year.points.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
    let s = uniform(100, |i| i as f64);
    assert_eq!(s.len(), 100);
    assert_eq!(s.step_seconds, 36 * 60);
}
