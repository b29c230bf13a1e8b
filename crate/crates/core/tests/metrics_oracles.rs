use gamorra_core::metrics::{error_stats, mfr, render_report, summary, ModelResult, ReportFormat, REPORT_HEADER};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    prop::collection::vec((0.0f64..80.0, 1.0f64..80.0), 1..200).prop_map(|v| v.into_iter().unzip())
}

proptest! {
    #[test]
    fn mfr_counts_misses(( est, act) in pairs(), margin in 0.0f64..0.5) {
        let mut missed = 0usize;
        for i in 0..est.len() {
            if est[i] < act[i] * (1.0 - margin) {
                missed += 1;
            }
        }
        let got = mfr(&est, &act, margin).unwrap();
        prop_assert_eq!(got, 100.0 * missed as f64 / est.len() as f64);
        prop_assert!((0.0..=100.0).contains(&got));
        // a wider margin can only forgive more frames
        prop_assert!(mfr(&est, &act, margin + 0.1).unwrap() <= got);
    }

    #[test]
    fn error_stats_are_ordered((est, act) in pairs()) {
        let s = error_stats(&est, &act).unwrap();
        prop_assert!(s.min_abs <= s.mean_abs && s.mean_abs <= s.max_abs);
        prop_assert!(s.mean_pct >= 0.0);
        let exact = error_stats(&act, &act).unwrap();
        prop_assert_eq!((exact.mean_abs, exact.max_abs, exact.mean_pct), (0.0, 0.0, 0.0));
    }
}

#[test]
fn error_stats_match_sorted_oracle_on_1000_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let act: Vec<f64> = (0..1000).map(|_| rng.random_range(5.0..40.0)).collect();
    let est: Vec<f64> = act.iter().map(|a| a + rng.random_range(-3.0..3.0)).collect();
    let mut abs: Vec<f64> = est.iter().zip(&act).map(|(e, a)| (e - a).abs()).collect();
    let pct: Vec<f64> = abs.iter().zip(&act).map(|(d, a)| 100.0 * d / a).collect();
    abs.sort_by(f64::total_cmp);
    // pairwise summation as a second opinion on the mean
    fn pairwise(x: &[f64]) -> f64 {
        if x.len() <= 2 {
            return x.iter().sum();
        }
        let (l, r) = x.split_at(x.len() / 2);
        pairwise(l) + pairwise(r)
    }
    let s = error_stats(&est, &act).unwrap();
    assert_eq!(s.min_abs, abs[0]);
    assert_eq!(s.max_abs, abs[999]);
    assert!((s.mean_abs - pairwise(&abs) / 1000.0).abs() < 1e-12);
    assert!((s.mean_pct - pairwise(&pct) / 1000.0).abs() < 1e-10);
}

#[test]
fn reports_are_byte_stable_and_parse_back() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let act: Vec<f64> = (0..50).map(|_| rng.random_range(5.0..40.0)).collect();
    let results: Vec<ModelResult> = ["gm-h", "gm-of", "ar", "fcm", "frq"]
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let est: Vec<f64> = act.iter().map(|a| a * (1.0 + 0.02 * k as f64)).collect();
            ModelResult::evaluate(m, "drift, scene", 3, &est, &act, 0.0).unwrap()
        })
        .collect();
    let a = render_report(&results, ReportFormat::Csv).unwrap();
    let b = render_report(&results.clone(), ReportFormat::Csv).unwrap();
    assert_eq!(a, b);
    assert!(a.starts_with(REPORT_HEADER));

    let mut reader = csv::Reader::from_reader(a.as_bytes());
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 5);
    assert_eq!(&rows[0][1], "drift, scene");
    assert_eq!(&rows[4][0], "frq");
    assert_eq!(&rows[0][8], "");

    let text = render_report(&results, ReportFormat::Text).unwrap();
    assert_eq!(text, render_report(&results, ReportFormat::Text).unwrap());
    let ranking = summary(&results);
    let order: Vec<&str> = ranking.lines().skip(1).map(|l| l.split_whitespace().nth(1).unwrap()).collect();
    assert_eq!(order, ["gm-h", "gm-of", "ar", "fcm", "frq"]);
}
