use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use remic::data::synth::SynthConfig;
use remic::data::Dataset;
use remic::eval::report::{KV_FILE, TEXT_FILE};
use remic::eval::{
    format_table, impute_average, mae, nearest_neighbor, nrmse, psnr, run_protocol, run_protocol_random_k,
    run_protocol_single_missing, ssim, AverageImputer, ImageMetrics, MetricsReport, NearestNeighborImputer, Oracle,
    Protocol, ZeroImputer,
};
use remic::{Image, VisibilityMask};

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f64> {
    (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect()
}

/// SSIM evaluated window by window with the full 2-D Gaussian, no separable filtering.
fn ssim_direct(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let size = 11.min(h).min(w);
    let size = if size % 2 == 0 { size - 1 } else { size };
    let c = (size / 2) as f64;
    let mut kernel = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let r2 = (y as f64 - c).powi(2) + (x as f64 - c).powi(2);
            kernel[y * size + x] = (-r2 / (2.0 * 1.5 * 1.5)).exp();
        }
    }
    let z: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= z);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for y0 in 0..=h - size {
        for x0 in 0..=w - size {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for y in 0..size {
                for x in 0..size {
                    let k = kernel[y * size + x];
                    let (p, q) = (a[(y0 + y) * w + x0 + x], b[(y0 + y) * w + x0 + x]);
                    ma += k * p;
                    mb += k * q;
                    saa += k * p * p;
                    sbb += k * q * q;
                    sab += k * p * q;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn ssim_matches_direct_windows() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (h, w) in [(20, 20), (16, 24), (11, 11), (8, 6)] {
        let a = random_image(&mut rng, h, w);
        let b: Vec<f64> = a.iter().map(|v| v * 0.7 + rng.random_range(0.0..0.3) ).collect();
        let got = ssim(&a, &b, h, w, 1.0).unwrap();
        let want = ssim_direct(&a, &b, h, w);
        assert!((got - want).abs() < 1e-12, "{h}x{w}: {got} vs {want}");
    }
}

#[test]
fn error_metrics_match_hand_values() {
    let truth = [0.0, 0.5, 1.0, 0.5];
    let pred = [0.1, 0.5, 0.8, 0.5];
    assert!((mae(&pred, &truth).unwrap() - 0.075).abs() < 1e-15);
    let want = (0.05f64).sqrt() / 1.5f64.sqrt();
    assert!((nrmse(&pred, &truth).unwrap() - want).abs() < 1e-15);
    // MSE 0.0125 over range 2.
    let want_psnr = 10.0 * (4.0 / 0.0125f64).log10();
    assert!((psnr(&pred, &truth, 2.0).unwrap() - want_psnr).abs() < 1e-12);
    assert!(mae(&pred, &truth[..3]).is_err());
    assert!(psnr(&pred, &truth, 0.0).is_err());
}

#[test]
fn metrics_reject_mismatched_geometry() {
    assert!(ImageMetrics::compute(&Image::zeros(4, 4), &Image::filled(4, 5, 0.5)).is_err());
    assert!(ssim(&[0.0; 12], &[0.0; 12], 3, 3, 1.0).is_err());
}

fn test_set() -> Dataset {
    Dataset::synthetic(&SynthConfig::new(3, 32, 6, 5, 2, 13)).unwrap()
}

#[test]
fn oracle_completer_is_perfect() {
    let ds = test_set();
    for p in [Protocol::SingleMissing(1), Protocol::RandomK { k: 1, seed: 2, exhaustive: false }] {
        let r = run_protocol(&Oracle, &ds.test, p, None).unwrap();
        for d in r.domains.iter().flatten() {
            assert_eq!(d.nrmse, 0.0);
            assert_eq!(d.mae, 0.0);
            assert!((d.ssim - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn single_missing_only_scores_that_domain() {
    let ds = test_set();
    let r = run_protocol_single_missing(&ZeroImputer, &ds.test, 2, None).unwrap();
    assert!(r.domains[0].is_none() && r.domains[1].is_none());
    let d = r.domains[2].unwrap();
    assert_eq!(d.count, 5);
    assert!((d.nrmse - 1.0).abs() < 1e-12);
    assert_eq!(r.num_samples, 5);
    assert!(run_protocol_single_missing(&ZeroImputer, &ds.test, 3, None).is_err());
}

#[test]
fn nearest_neighbor_retrieves_itself() {
    let ds = test_set();
    let query = ds.train[4].with_visibility(VisibilityMask::single_missing(3, 0).unwrap()).unwrap();
    assert_eq!(nearest_neighbor(&query, &ds.train).unwrap(), (4, 0.0));
    let r = run_protocol_single_missing(&NearestNeighborImputer { train: &ds.train }, &ds.train, 0, None).unwrap();
    assert_eq!(r.domains[0].unwrap().nrmse, 0.0);
    assert!(nearest_neighbor(&query, &[]).is_err());
}

#[test]
fn average_imputer_uses_visible_mean() {
    let ds = test_set();
    let s = ds.test[0].with_visibility(VisibilityMask::new(vec![true, false, true]).unwrap()).unwrap();
    let out = impute_average(&s);
    for p in [0, 100, 1023] {
        let want = (s.images[0].pixels[p] as f64 + s.images[2].pixels[p] as f64) / 2.0;
        assert!((out.images[1].pixels[p] as f64 - want).abs() < 1e-6);
    }
    assert_eq!(out.images[0], s.images[0]);
    assert_eq!(out.visibility, VisibilityMask::all(3));
}

#[test]
fn random_k_bounds_and_reproducibility() {
    let ds = test_set();
    for k in [0, 3] {
        assert!(run_protocol_random_k(&ZeroImputer, &ds.test, k, 0, false, None).is_err());
    }
    let a = run_protocol_random_k(&AverageImputer, &ds.test, 1, 5, false, None).unwrap();
    let b = run_protocol_random_k(&AverageImputer, &ds.test, 1, 5, false, None).unwrap();
    assert_eq!(a, b);
    // k = 1 hides two domains per sample.
    assert_eq!(a.domains.iter().flatten().map(|d| d.count).sum::<usize>(), 10);
    let all = run_protocol_random_k(&AverageImputer, &ds.test, 2, 0, true, None).unwrap();
    assert!(all.domains.iter().all(|d| d.unwrap().count == 5));
}

#[test]
fn reports_round_trip_through_files() {
    let ds = test_set();
    let mut r = run_protocol_single_missing(&ZeroImputer, &ds.test, 0, None).unwrap();
    r.config = "desk".into();
    let dir = tempfile::tempdir().unwrap();
    r.write(dir.path()).unwrap();
    assert_eq!(MetricsReport::read_kv(&dir.path().join(KV_FILE)).unwrap(), r);
    let text = std::fs::read_to_string(dir.path().join(TEXT_FILE)).unwrap();
    assert!(text.contains("single-missing:0"), "{text}");
    assert!(MetricsReport::from_kv("method=Zero\n").is_err());
}

#[test]
fn table_layout() {
    let ds = test_set();
    let mut reports = Vec::new();
    for i in 0..3 {
        reports.push(run_protocol_single_missing(&ZeroImputer, &ds.test, i, None).unwrap());
        reports.push(run_protocol_single_missing(&AverageImputer, &ds.test, i, None).unwrap());
    }
    reports.push(run_protocol_random_k(&AverageImputer, &ds.test, 1, 0, false, None).unwrap());
    let t = format_table(&reports).unwrap();
    let lines: Vec<&str> = t.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("Method"));
    assert!(lines[1].trim_start().starts_with("NRMSE / SSIM / PSNR"));
    assert!(lines[2].starts_with("Zero "));
    assert!(lines[3].starts_with("Average "));
    assert!(lines[4].starts_with("Average-Random(k=1) "));
    // Zero imputation has NRMSE exactly 1 in every column.
    assert_eq!(lines[2].matches("1.0000 / ").count(), 3);
    let col = lines[0].find("Domain 0").unwrap();
    for l in &lines[1..] {
        assert!(l[..col].ends_with("  "), "{l}");
        assert_ne!(&l[col..col + 1], " ", "{l}");
    }
    assert!(lines.iter().all(|l| !l.ends_with(' ')));
}
