mod common;

use flashnet::metrics::{
    autocorrelation, contagion_stats, crash_set, crash_window_steps, flash_crash_indicator, is_cascade, kurtosis,
    log_returns, mean_ci, one_sided_proportion_test, propagation_speed, proportion_ci, standard_normal_cdf,
    stylised_facts, CrashSet, MetricsError, Speed, MIN_STYLISED_SAMPLES,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const WINDOW: usize = 6_000;

#[test]
fn five_minute_window_at_fifty_ms() {
    assert_eq!(crash_window_steps(50), WINDOW);
}

#[test]
fn crash_threshold_is_strict() {
    let mut p = vec![10_000; 2];
    p[1] = 9_490;
    assert!(flash_crash_indicator(&p, 1, WINDOW));
    p[1] = 9_500;
    assert!(!flash_crash_indicator(&p, 1, WINDOW));
    p[1] = 9_499;
    assert!(flash_crash_indicator(&p, 1, WINDOW));
}

#[test]
fn early_steps_compare_against_the_start() {
    let mut p = vec![10_000; 1001];
    p[1..].iter_mut().for_each(|x| *x = 11_000);
    p[1000] = 9_400;
    assert!(flash_crash_indicator(&p, 1000, WINDOW));
    // Later on the reference moves with the window.
    let mut q = vec![10_000; 7001];
    q[1000..].iter_mut().for_each(|x| *x = 9_000);
    assert!(flash_crash_indicator(&q, 6999, WINDOW));
    assert!(!flash_crash_indicator(&q, 7000, WINDOW));
}

#[test]
fn crash_set_runs() {
    let s = CrashSet::from_steps([3, 4, 5, 9, 12, 13]);
    assert_eq!(s.runs(), &[(3, 6), (9, 10), (12, 14)]);
    assert_eq!(s.len(), 6);
    assert_eq!(s.first(), Some(3));
    assert_eq!(s.first_at_or_after(7), Some(9));
    assert_eq!(s.first_at_or_after(13), Some(13));
    assert_eq!(s.first_at_or_after(14), None);
    assert!(s.contains(12) && !s.contains(6));
}

#[test]
fn speed_examples() {
    let mut f: Vec<Option<u64>> =
        [1000, 1200, 1400, 1600, 1800, 2000, 2200, 3400, 5000, 6000, 7000].into_iter().map(Some).collect();
    f.reverse();
    f.push(None);
    assert_eq!(propagation_speed(&f, 0.8, 50), Speed::Finite(4.0));
    assert_eq!(propagation_speed(&[Some(5), None], 0.8, 50), Speed::Undefined);
    assert_eq!(propagation_speed(&[None, None], 0.8, 50), Speed::Undefined);
    assert_eq!(propagation_speed(&[Some(7), Some(7), Some(7)], 0.8, 50), Speed::Infinite);
    // Two crashes: p = floor(1.6) = 1, so t_p = t_1.
    assert_eq!(propagation_speed(&[Some(1), Some(900)], 0.8, 50), Speed::Infinite);
}

#[test]
fn speed_csv_values() {
    assert_eq!(Speed::Undefined.as_csv(), "");
    assert_eq!(Speed::Infinite.as_csv(), "inf");
    assert_eq!(Speed::Finite(4.0).as_csv(), "4");
}

#[test]
fn contagion_examples() {
    let s = contagion_stats(&[0.14, 0.06, 1.0], 0.05).unwrap();
    assert_eq!(s.probability, 1.0);
    assert!((s.extent.unwrap() - 0.40).abs() < 1e-12);
    let s = contagion_stats(&[0.0, 0.0], 0.05).unwrap();
    assert_eq!((s.probability, s.extent), (0.0, None));
    assert!(!is_cascade(0.05, 0.05));
    assert_eq!(contagion_stats(&[], 0.05), Err(MetricsError::NoTrials));
    assert_eq!(contagion_stats(&[0.1], 0.0), Err(MetricsError::Gamma(0.0)));
}

#[test]
fn gaussian_returns_have_kurtosis_three() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x: Vec<f64> = (0..200_000).map(|_| StandardNormal.sample(&mut rng)).collect();
    assert!((kurtosis(&x).unwrap() - 3.0).abs() < 0.06);
    let acf = autocorrelation(&x, 20);
    assert_eq!(acf[0], 1.0);
    assert!(acf[1..].iter().all(|r| r.abs() < 0.01), "{acf:?}");
}

#[test]
fn kurtosis_of_small_samples() {
    assert_eq!(kurtosis(&[1.0, 2.0, 3.0]), None);
    assert_eq!(kurtosis(&[2.0; 10]), None);
    // Two-point symmetric distribution: fourth moment equals the squared variance.
    assert!((kurtosis(&[-1.0, 1.0, -1.0, 1.0]).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn gaussian_random_walk_facts() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut logp = (1.0e9f64).ln();
    let prices: Vec<i64> = (0..50_000)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            logp += 1e-3 * z;
            logp.exp().round() as i64
        })
        .collect();
    let facts = stylised_facts(&prices).unwrap();
    for h in [1, 10, 100] {
        let k = facts.kurtosis_at(h).unwrap();
        assert!((k - 3.0).abs() < 0.3, "horizon {h}: {k}");
    }
    assert!(facts.return_acf[10].abs() < 0.03);
    assert_eq!(facts.sorted_returns.len(), prices.len() - 1);
    assert!(facts.sorted_returns.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn stylised_facts_need_enough_samples() {
    assert_eq!(
        stylised_facts(&[1; 100]),
        Err(MetricsError::TooShort { needed: MIN_STYLISED_SAMPLES, got: 100 })
    );
}

#[test]
fn log_return_horizons() {
    let r = log_returns(&[100, 110, 121], 1);
    assert!((r[0] - 1.1f64.ln()).abs() < 1e-12 && (r[1] - 1.1f64.ln()).abs() < 1e-12);
    assert_eq!(log_returns(&[100, 110], 5), Vec::<f64>::new());
}

#[test]
fn confidence_intervals() {
    let c = mean_ci(&[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(c.mean, 2.5);
    assert!((c.half_width - 1.96 * (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-12);
    assert_eq!(mean_ci(&[7.0]).unwrap().half_width, 0.0);
    assert_eq!(mean_ci(&[]), None);
    let p = proportion_ci(5, 20).unwrap();
    assert!((p.half_width - 1.96 * (0.25f64 * 0.75 / 20.0).sqrt()).abs() < 1e-12);
    assert!(p.overlaps(&proportion_ci(8, 20).unwrap()));
    assert!(!proportion_ci(0, 30).unwrap().overlaps(&proportion_ci(30, 30).unwrap()));
}

#[test]
fn normal_cdf_and_proportion_test() {
    assert!((standard_normal_cdf(0.0) - 0.5).abs() < 1e-7);
    assert!((standard_normal_cdf(1.959_964) - 0.975).abs() < 1e-6);
    assert!((standard_normal_cdf(-1.644_854) - 0.05).abs() < 1e-6);
    // 3/30 against 12/30: z = -0.3 / sqrt(0.25 * 0.25 * 2/30) = -3.0984.
    let p = one_sided_proportion_test(3, 30, 12, 30);
    assert!((p - standard_normal_cdf(-0.3 / (0.25f64 * 0.75 * 2.0 / 30.0).sqrt())).abs() < 1e-12);
    assert!(p < 0.05);
    assert!(one_sided_proportion_test(12, 30, 3, 30) > 0.95);
}

fn paths() -> impl Strategy<Value = (u64, usize)> {
    (any::<u64>(), 2usize..400)
}

proptest! {
    #[test]
    fn indicator_matches_definition((seed, len) in paths(), window in 1usize..50) {
        let p = common::random_path(&mut ChaCha8Rng::seed_from_u64(seed), len);
        for t in 1..len {
            prop_assert_eq!(flash_crash_indicator(&p, t, window), common::crash_oracle(&p, t, window));
        }
        let set = crash_set(&p, window);
        prop_assert_eq!(set.first(), common::first_crash_oracle(&p, window));
        let direct: Vec<u64> = (1..len).filter(|&t| common::crash_oracle(&p, t, window)).map(|t| t as u64).collect();
        prop_assert_eq!(set.iter().collect::<Vec<_>>(), direct);
    }

    #[test]
    fn indicator_is_scale_invariant((seed, len) in paths(), k in 1i64..1000, window in 1usize..50) {
        let p = common::random_path(&mut ChaCha8Rng::seed_from_u64(seed), len);
        let q: Vec<i64> = p.iter().map(|x| x * k).collect();
        prop_assert_eq!(crash_set(&p, window), crash_set(&q, window));
    }

    #[test]
    fn speed_matches_definition(seed in any::<u64>(), n in 0usize..12, zeta in 0.05..=1.0f64, dt in 1u32..200) {
        let f = common::random_first_crashes(&mut ChaCha8Rng::seed_from_u64(seed), n);
        prop_assert_eq!(propagation_speed(&f, zeta, dt), common::speed_oracle(&f, zeta, dt));
    }

    #[test]
    fn speed_ignores_later_crashes(seed in any::<u64>(), n in 2usize..8, window in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let paths: Vec<Vec<i64>> = (0..n).map(|_| common::random_path(&mut rng, 300)).collect();
        let firsts: Vec<Option<u64>> = paths.iter().map(|p| crash_set(p, window).first()).collect();
        // Cut each path right after its first crash.
        let cut: Vec<Option<u64>> = paths
            .iter()
            .zip(&firsts)
            .map(|(p, f)| crash_set(&p[..f.map_or(p.len(), |t| t as usize + 1)], window).first())
            .collect();
        prop_assert_eq!(propagation_speed(&firsts, 0.8, 50), propagation_speed(&cut, 0.8, 50));
    }

    #[test]
    fn contagion_matches_definition(seed in any::<u64>(), m in 1usize..12, gamma in 0.01..=1.0f64) {
        let f = common::random_fractions(&mut ChaCha8Rng::seed_from_u64(seed), m);
        let s = contagion_stats(&f, gamma).unwrap();
        let (p, omega) = common::contagion_oracle(&f, gamma);
        prop_assert_eq!(s.probability, p);
        prop_assert_eq!(s.extent, omega);
        prop_assert!((0.0..=1.0).contains(&s.probability));
        if let Some(o) = s.extent {
            prop_assert!(o > gamma && o <= 1.0);
        }
    }
}
