use fedtherm_core::thermal::{
    col, default_library, generate, load_shift, normalize_apply, normalize_fit, simulate_targets, source_profile,
    split_indices, LoadPattern,
};
use fedtherm_core::Matrix;

/// Direct Euler recursion for constant inputs, written out independently.
fn constant_input_trajectory(step: f64, fixed_point: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut t = 0.0;
    for _ in 0..n {
        t = t + step * (fixed_point - t);
        out.push(t);
    }
    out
}

#[test]
fn constant_load_settles_at_resistance_times_loss() {
    let p = source_profile();
    let (current, freq, power) = (80.0, 30.0, 40.0);
    let features = Matrix::from_fn(400, 4, |_, c| match c {
        col::CURRENT => current,
        col::AMBIENT => 25.0,
        col::FREQUENCY => freq,
        _ => power,
    });
    let temps = simulate_targets(&p, &features).unwrap();
    // 0.01·80² + 1.0·80·30/50 + 0.002·40 000 = 64 + 48 + 80 W
    let loss = 192.0;
    assert_eq!(p.loss_coeffs.power_loss(current, freq, power), loss);
    let fixed = p.r_th * loss;
    let last = *temps.last().unwrap();
    assert!((last - fixed).abs() <= 1e-3 * fixed, "{last} vs {fixed}");
    let expected = constant_input_trajectory(p.sample_interval / p.tau, fixed, 400);
    for (a, b) in temps.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn generation_is_seeded() {
    for p in default_library() {
        let a = generate(&p, 500).unwrap();
        assert_eq!(a, generate(&p, 500).unwrap(), "{}", p.name);
        let b = generate(&p.reseeded(99), 500).unwrap();
        assert_ne!(a.targets(), b.targets(), "{}", p.name);
    }
}

#[test]
fn library_domains_cover_their_operating_modes() {
    let lib = default_library();
    assert_eq!(lib.len(), 5);
    assert!(matches!(lib[1].load_pattern, LoadPattern::Intermittent { .. }));
    assert!(matches!(lib[2].load_pattern, LoadPattern::PartialLoad { .. }));
    for p in &lib {
        let d = generate(p, 1000).unwrap();
        let amb = d.features().col_vec(col::AMBIENT);
        let lo = amb.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = amb.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // Ambient jitter may step slightly outside the nominal range.
        assert!(lo > p.ambient_range.0 - 2.0 && hi < p.ambient_range.1 + 2.0, "{}: {lo}..{hi}", p.name);
        assert!(d.targets().iter().all(|t| t.is_finite()));
    }
}

#[test]
fn unit_load_shift_is_the_identity() {
    let p = source_profile();
    let d = generate(&p, 300).unwrap();
    assert_eq!(load_shift(&d, &p, 1.0, 50..150).unwrap(), d);
}

#[test]
fn load_shift_scales_the_steady_state_by_the_loss_ratio() {
    let mut p = source_profile();
    p.noise_std = 0.0;
    let (current, freq, power) = (60.0, 20.0, 30.0);
    let features = Matrix::from_fn(600, 4, |_, c| match c {
        col::CURRENT => current,
        col::AMBIENT => 20.0,
        col::FREQUENCY => freq,
        _ => power,
    });
    let targets = simulate_targets(&p, &features).unwrap();
    let d = fedtherm_core::Dataset::new(features, targets, p.sample_interval).unwrap();
    let shifted = load_shift(&d, &p, 1.25, 300..600).unwrap();
    let before = p.loss_coeffs.power_loss(current, freq, power);
    let after = p.loss_coeffs.power_loss(1.25 * current, freq, 1.25 * power);
    let ratio = shifted.targets()[599] / d.targets()[599];
    assert!((ratio - after / before).abs() < 1e-6, "{ratio} vs {}", after / before);
    assert_eq!(&shifted.targets()[..300], &d.targets()[..300]);
}

#[test]
fn normalization_uses_source_statistics() {
    let lib = default_library();
    let source = generate(&lib[0], 2000).unwrap();
    let target = generate(&lib[3], 500).unwrap();
    let stats = normalize_fit(&source).unwrap();
    let ns = normalize_apply(&source, &stats).unwrap();
    let nt = normalize_apply(&target, &stats).unwrap();
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(ns.features().col_vec(col::AMBIENT)).abs() < 1e-9);
    // The hot domain sits well above the source in source units.
    assert!(mean(nt.features().col_vec(col::AMBIENT)) > 1.0);
    let back = nt.denormalize().unwrap();
    for (a, b) in back.targets().iter().zip(target.targets()) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn split_is_a_seeded_partition() {
    let (train, test) = split_indices(100, 0.7, 5).unwrap();
    assert_eq!((train.len(), test.len()), (70, 30));
    let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..100).collect::<Vec<_>>());
    assert_eq!(split_indices(100, 0.7, 5).unwrap(), (train, test));
}
