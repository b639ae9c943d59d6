use approx::{assert_abs_diff_eq, assert_relative_eq};
use nalgebra::{Matrix2, Matrix4, Matrix4x2, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use syntrack::kinematics::{
    linear_predict, log_likelihood, measure, measure_mean, process_cov, propagate,
    propagate_mean, wrap_azimuth, KinematicState, Measurement, NoiseConfig, PlatformPath,
    PlatformState,
};
use syntrack::roadgraph::Heading;

const HEADINGS: [Heading; 4] = [Heading::East, Heading::North, Heading::West, Heading::South];

fn still_platform(x: f64, y: f64) -> PlatformState {
    PlatformState {
        x,
        y,
        vx: 0.0,
        vy: 0.0,
        altitude: 3000.0,
    }
}

#[test]
fn propagate_mean_hand_values() {
    let x = KinematicState::new(0.0, 0.0, 10.0, 0.0);
    let out = propagate_mean(&x, Heading::North, 0.2);
    assert_abs_diff_eq!(out.x, 2.0, epsilon = 1e-12);
    assert_abs_diff_eq!(out.y, 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!(out.vx, 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!(out.vy, 10.0, epsilon = 1e-12);

    let still = KinematicState::new(5.0, 5.0, 0.0, 0.0);
    for d in HEADINGS {
        let out = propagate_mean(&still, d, 0.2);
        assert_eq!((out.x, out.y, out.vx, out.vy), (5.0, 5.0, 0.0, 0.0));
    }
}

#[test]
fn propagate_mean_preserves_speed_exactly() {
    let states = [
        KinematicState::new(3.0, -7.0, 9.25, -1.5),
        KinematicState::new(0.0, 0.0, -4.0, 3.0),
        KinematicState::new(100.0, 250.0, 0.125, 17.0),
    ];
    for x in states {
        for d in HEADINGS {
            let out = propagate_mean(&x, d, 0.2);
            assert_eq!(out.speed(), x.speed());
        }
    }
}

#[test]
fn process_cov_matches_hand_product() {
    let cfg = NoiseConfig::level(0);
    // East: along-track is the x axis, so the acceleration covariance is
    // diag(sigma_a^2, sigma_o^2) and the integrated blocks follow directly.
    let q = process_cov(Heading::East, &cfg);
    assert_relative_eq!(q[(0, 0)], 1e-4, max_relative = 1e-12);
    assert_relative_eq!(q[(1, 1)], 1e-6, max_relative = 1e-12);
    assert_relative_eq!(q[(0, 2)], 1e-3, max_relative = 1e-12);
    assert_relative_eq!(q[(1, 3)], 1e-5, max_relative = 1e-12);
    assert_relative_eq!(q[(2, 2)], 1e-2, max_relative = 1e-12);
    assert_relative_eq!(q[(3, 3)], 1e-4, max_relative = 1e-12);
    assert_eq!(q[(0, 1)], 0.0);
    assert_eq!(q[(2, 3)], 0.0);

    // Independent construction of the full A Q A' product for every heading.
    for d in HEADINGS {
        let (ux, uy) = d.unit();
        let u = Vector2::new(ux, uy);
        let w = Vector2::new(-uy, ux);
        let qa: Matrix2<f64> = cfg.sigma_a.powi(2) * u * u.transpose()
            + cfg.sigma_o.powi(2) * w * w.transpose();
        let t = cfg.t;
        #[rustfmt::skip]
        let a = Matrix4x2::new(
            0.5 * t * t, 0.0,
            0.0,         0.5 * t * t,
            t,           0.0,
            0.0,         t,
        );
        let want: Matrix4<f64> = a * qa * a.transpose();
        let got = process_cov(d, &cfg);
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!(got[(i, j)], want[(i, j)], epsilon = 1e-15);
            }
        }
    }
}

#[test]
fn process_cov_symmetric_psd_and_reflection_invariant() {
    let cfg = NoiseConfig::level(2);
    for d in HEADINGS {
        let q = process_cov(d, &cfg);
        assert_abs_diff_eq!((q - q.transpose()).norm(), 0.0, epsilon = 1e-15);
        for ev in q.symmetric_eigenvalues().iter() {
            assert!(*ev >= -1e-12, "negative eigenvalue {ev} for {d:?}");
        }
    }
    // Opposite headings span the same along/cross axes.
    assert_eq!(
        process_cov(Heading::North, &cfg),
        process_cov(Heading::South, &cfg)
    );
    assert_eq!(
        process_cov(Heading::East, &cfg),
        process_cov(Heading::West, &cfg)
    );
    // Nonzero eigenvalues of the integrated covariance are
    // (t^4/4 + t^2) * {sigma_a^2, sigma_o^2}; the other two are zero.
    let t = cfg.t;
    let scale = t.powi(4) / 4.0 + t * t;
    let mut evs: Vec<f64> = process_cov(Heading::East, &cfg)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect();
    evs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_abs_diff_eq!(evs[0], 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!(evs[1], 0.0, epsilon = 1e-12);
    assert_relative_eq!(evs[2], scale * cfg.sigma_o.powi(2), max_relative = 1e-9);
    assert_relative_eq!(evs[3], scale * cfg.sigma_a.powi(2), max_relative = 1e-9);
}

#[test]
fn propagate_noise_has_declared_covariance() {
    let cfg = NoiseConfig::level(0);
    let x = KinematicState::new(0.0, 0.0, 10.0, 0.0);
    let mean = propagate_mean(&x, Heading::North, cfg.t);
    let want = process_cov(Heading::North, &cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 200_000;
    let mut acc = Matrix4::zeros();
    for _ in 0..n {
        let s = propagate(&x, Heading::North, &cfg, &mut rng);
        let d = nalgebra::Vector4::new(s.x - mean.x, s.y - mean.y, s.vx - mean.vx, s.vy - mean.vy);
        acc += d * d.transpose();
    }
    acc /= n as f64;
    // Sample covariance converges at 1/sqrt(n); compare against the two
    // dominant entries with a generous statistical margin.
    assert_relative_eq!(acc[(2, 2)], want[(2, 2)], max_relative = 0.02);
    assert_relative_eq!(acc[(3, 3)], want[(3, 3)], max_relative = 0.02);
    assert_relative_eq!(acc[(1, 3)], want[(1, 3)], max_relative = 0.05);
}

#[test]
fn measurement_hand_geometry() {
    let platform = still_platform(-500.0, -500.0);
    let target = KinematicState::new(0.0, 0.0, 0.0, 0.0);
    let m = measure_mean(&target, &platform).unwrap();
    assert_relative_eq!(m.range, 9_500_000f64.sqrt(), max_relative = 1e-12);
    assert_relative_eq!(m.range, 3082.2070, max_relative = 1e-6);
    assert_abs_diff_eq!(m.azimuth, 45.0, epsilon = 1e-12);
    assert_abs_diff_eq!(m.range_rate, 0.0, epsilon = 1e-12);

    let moving = PlatformState {
        vx: 100.0,
        ..platform
    };
    let m = measure_mean(&target, &moving).unwrap();
    assert_relative_eq!(m.range_rate, -50_000.0 / 9_500_000f64.sqrt(), max_relative = 1e-12);
    assert_relative_eq!(m.range_rate, -16.2221, max_relative = 1e-4);

    // Due north of the platform.
    let north = KinematicState::new(-500.0, 200.0, 0.0, 0.0);
    let m = measure_mean(&north, &platform).unwrap();
    assert_abs_diff_eq!(m.azimuth, 90.0, epsilon = 1e-12);
}

#[test]
fn measurement_rejects_ground_colocation() {
    let platform = still_platform(100.0, 200.0);
    let target = KinematicState::new(100.0, 200.0, 5.0, 0.0);
    let err = measure_mean(&target, &platform).unwrap_err();
    assert!(err.to_string().starts_with("degenerate-geometry"));
}

#[test]
fn azimuth_wrapping() {
    assert_abs_diff_eq!(wrap_azimuth(359.0), -1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(wrap_azimuth(-181.0), 179.0, epsilon = 1e-12);
    assert_eq!(wrap_azimuth(180.0), 180.0);
    assert_eq!(wrap_azimuth(-180.0), 180.0);
    assert_abs_diff_eq!(wrap_azimuth(540.0), 180.0, epsilon = 1e-12);
    assert_abs_diff_eq!(wrap_azimuth(45.0), 45.0, epsilon = 1e-12);
}

#[test]
fn log_likelihood_hand_values() {
    let cfg = NoiseConfig::level(0);
    let platform = still_platform(-500.0, -500.0);
    let target = KinematicState::new(0.0, 0.0, 10.0, 0.0);
    let mean = measure_mean(&target, &platform).unwrap();

    // Zero residual: -1/2 log((2 pi)^3 det R).
    let det_r = (cfg.sigma_r * cfg.sigma_rdot * cfg.sigma_az).powi(2);
    let want = -0.5 * ((2.0 * std::f64::consts::PI).powi(3) * det_r).ln();
    assert_relative_eq!(
        log_likelihood(&mean, &target, &platform, &cfg),
        want,
        max_relative = 1e-12
    );

    // A 1-sigma range residual scored under doubled sigma_r gains
    // 3/8 - log 2 nats relative to the original sigma.
    let off = Measurement {
        range: mean.range + cfg.sigma_r,
        ..mean
    };
    let base = log_likelihood(&off, &target, &platform, &cfg);
    let wide = NoiseConfig {
        sigma_r: 2.0 * cfg.sigma_r,
        ..cfg
    };
    let relaxed = log_likelihood(&off, &target, &platform, &wide);
    assert_relative_eq!(
        base - relaxed,
        2f64.ln() - 0.375,
        max_relative = 1e-12
    );

    // A measured azimuth residual of 359 degrees scores as -1 degree.
    let plus = Measurement {
        azimuth: wrap_azimuth(mean.azimuth + 359.0),
        ..mean
    };
    let minus = Measurement {
        azimuth: wrap_azimuth(mean.azimuth - 1.0),
        ..mean
    };
    assert_relative_eq!(
        log_likelihood(&plus, &target, &platform, &cfg),
        log_likelihood(&minus, &target, &platform, &cfg),
        max_relative = 1e-12
    );
}

#[test]
fn likelihood_integrates_to_one() {
    let cfg = NoiseConfig::level(0);
    let platform = still_platform(-500.0, -500.0);
    let target = KinematicState::new(0.0, 0.0, 10.0, 0.0);
    let mean = measure_mean(&target, &platform).unwrap();

    // Midpoint-rule quadrature over a +/- 6 sigma box around the mean.
    let steps = 48;
    let span = 6.0;
    let hr = 2.0 * span * cfg.sigma_r / steps as f64;
    let hd = 2.0 * span * cfg.sigma_rdot / steps as f64;
    let ha = 2.0 * span * cfg.sigma_az / steps as f64;
    let mut total = 0.0;
    for i in 0..steps {
        let r = mean.range + (-span * cfg.sigma_r) + (i as f64 + 0.5) * hr;
        for j in 0..steps {
            let rd = mean.range_rate + (-span * cfg.sigma_rdot) + (j as f64 + 0.5) * hd;
            for k in 0..steps {
                let az = mean.azimuth + (-span * cfg.sigma_az) + (k as f64 + 0.5) * ha;
                let z = Measurement {
                    range: r,
                    range_rate: rd,
                    azimuth: wrap_azimuth(az),
                };
                total += log_likelihood(&z, &target, &platform, &cfg).exp();
            }
        }
    }
    total *= hr * hd * ha;
    assert_relative_eq!(total, 1.0, max_relative = 0.01);
}

#[test]
fn noisy_measurement_statistics() {
    let cfg = NoiseConfig::level(1);
    let platform = still_platform(-500.0, -500.0);
    let target = KinematicState::new(0.0, 0.0, 10.0, 0.0);
    let mean = measure_mean(&target, &platform).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 100_000;
    let (mut sr, mut sr2) = (0.0, 0.0);
    for _ in 0..n {
        let z = measure(&target, &platform, &cfg, &mut rng).unwrap();
        let d = z.range - mean.range;
        sr += d;
        sr2 += d * d;
    }
    let m = sr / n as f64;
    let var = sr2 / n as f64 - m * m;
    assert_abs_diff_eq!(m, 0.0, epsilon = 4.0 * cfg.sigma_r / (n as f64).sqrt());
    assert_relative_eq!(var, cfg.sigma_r * cfg.sigma_r, max_relative = 0.03);
}

#[test]
fn platform_orbit_geometry() {
    let cfg = NoiseConfig::level(0);
    let path = PlatformPath::default();
    assert_eq!(path.period(), 60.0);

    let p0 = path.at(0, &cfg);
    assert_eq!((p0.x, p0.y, p0.vx, p0.vy, p0.altitude), (-500.0, -500.0, 100.0, 0.0, 3000.0));

    // 15 s in (k = 75 at T = 0.2): first corner reached, now heading north.
    let p75 = path.at(75, &cfg);
    assert_abs_diff_eq!(p75.x, 1000.0, epsilon = 1e-9);
    assert_abs_diff_eq!(p75.y, -500.0, epsilon = 1e-9);
    assert_eq!((p75.vx, p75.vy), (0.0, 100.0));

    // Full lap: state at k repeats at k + 300 (60 s / 0.2 s).
    for k in [0u32, 40, 75, 151, 299] {
        let a = path.at(k, &cfg);
        let b = path.at(k + 300, &cfg);
        assert_abs_diff_eq!(a.x, b.x, epsilon = 1e-6);
        assert_abs_diff_eq!(a.y, b.y, epsilon = 1e-6);
        assert_eq!((a.vx, a.vy), (b.vx, b.vy));
    }

    // Mid-third-leg spot check: 35 s = 15 + 15 + 5, so 500 m west of C.
    let p = path.state_at(35.0);
    assert_abs_diff_eq!(p.x, 500.0, epsilon = 1e-9);
    assert_abs_diff_eq!(p.y, 1000.0, epsilon = 1e-9);
    assert_eq!((p.vx, p.vy), (-100.0, 0.0));
}

#[test]
fn linear_lookahead() {
    let x = KinematicState::new(1.0, 2.0, -3.0, 4.0);
    let out = linear_predict(&x, 0.5);
    assert_eq!((out.x, out.y, out.vx, out.vy), (-0.5, 4.0, -3.0, 4.0));
}

#[test]
fn noise_config_levels_and_validation() {
    let c0 = NoiseConfig::level(0);
    assert_eq!((c0.sigma_r, c0.sigma_rdot, c0.sigma_az), (5.0, 0.3, 0.5));
    let c4 = NoiseConfig::level(4);
    assert_eq!((c4.sigma_r, c4.sigma_rdot, c4.sigma_az), (9.0, 0.7, 0.9));
    assert_eq!((c4.sigma_a, c4.sigma_o, c4.t), (0.5, 0.05, 0.2));
    assert!(c0.validate().is_ok());
    let bad = NoiseConfig { sigma_r: 0.0, ..c0 };
    assert!(bad.validate().unwrap_err().to_string().starts_with("invalid-argument"));
}
