use nalgebra::{Matrix3, Matrix4x3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use sarstereo::geometry::{opt_forward, sar_forward};
use sarstereo::intersection::{condition_number, intersect, ObservationWeights, SolverOptions, StereoPair};
use sarstereo::{GroundPoint, ImagePoint, LookSide, OpticalSensorModel, SarObservation, SarSensorModel};

/// A random spaceborne SAR / optical pair looking at the origin area.
struct Setup {
    sar: SarSensorModel,
    opt: OpticalSensorModel,
    weights: ObservationWeights,
}

fn random_setup(rng: &mut ChaCha8Rng) -> Setup {
    let heading = rng.random_range(0.0..std::f64::consts::TAU);
    let v = Vector3::new(heading.cos(), heading.sin(), 0.0) * 7500.0;
    let look_side = if rng.random_bool(0.5) { LookSide::Right } else { LookSide::Left };
    let right = v.cross(&Vector3::z()).normalize();
    let look = if look_side == LookSide::Right { right } else { -right };
    let hs = rng.random_range(450e3..800e3);
    let theta = rng.random_range(20f64..55.0).to_radians();
    let s0 = Vector3::z() * hs - look * hs * theta.tan();
    let range = hs / theta.cos();
    let sar = SarSensorModel {
        s0: s0.into(),
        v: v.into(),
        t0: 0.0,
        az_time_per_row: rng.random_range(5e-5..2e-4),
        r_near: range - 2000.0,
        range_per_col: rng.random_range(0.3..2.0),
        look_side,
    };

    let ho = rng.random_range(400e3..900e3);
    let alpha = rng.random_range(0f64..35.0).to_radians();
    let az = rng.random_range(0.0..std::f64::consts::TAU);
    let pc = [ho * alpha.tan() * az.cos(), ho * alpha.tan() * az.sin(), ho];
    let focal = rng.random_range(2e5..2e6);
    let opt = OpticalSensorModel::look_at(
        pc,
        GroundPoint::default(),
        rng.random_range(-3.0..3.0),
        focal,
        rng.random_range(0.0..5000.0),
        rng.random_range(0.0..5000.0),
    );
    let weights = ObservationWeights {
        sigma_t: sar.az_time_per_row * rng.random_range(0.2..1.0),
        sigma_r: sar.range_per_col * rng.random_range(0.2..1.0),
        sigma_px: rng.random_range(0.2..1.0),
    };
    Setup { sar, opt, weights }
}

fn random_point(rng: &mut ChaCha8Rng) -> GroundPoint {
    GroundPoint::new(rng.random_range(-1000.0..1000.0), rng.random_range(-1000.0..1000.0), rng.random_range(-50.0..300.0))
}

fn observe(s: &Setup, p: &GroundPoint) -> (SarObservation, ImagePoint) {
    (sar_forward(&s.sar, p), opt_forward(&s.opt, p).unwrap())
}

fn pair<'a>(s: &'a Setup, obs: (SarObservation, ImagePoint)) -> StereoPair<'a> {
    StereoPair { sar: &s.sar, opt: &s.opt, sar_obs: obs.0, opt_obs: obs.1, weights: s.weights }
}

fn well_conditioned(p: &StereoPair, at: &GroundPoint) -> bool {
    let j = p.jacobian(at).unwrap();
    condition_number(&(j.transpose() * j)) < 1e8
}

fn fd_jacobian(p: &StereoPair, at: &GroundPoint) -> Matrix4x3<f64> {
    let h = 1e-2;
    let mut j = Matrix4x3::zeros();
    for k in 0..3 {
        let mut dp = Vector3::zeros();
        dp[k] = h;
        let plus = p.residuals(&GroundPoint::from_vector(&(at.to_vector() + dp))).unwrap();
        let minus = p.residuals(&GroundPoint::from_vector(&(at.to_vector() - dp))).unwrap();
        j.set_column(k, &((plus - minus) / (2.0 * h)));
    }
    j
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn jacobian_matches_central_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_setup(&mut rng);
        let truth = random_point(&mut rng);
        let obs = observe(&s, &truth);
        let sp = pair(&s, obs);
        // away from the solution, so all residuals are nonzero
        let at = GroundPoint::new(truth.x + 3.0, truth.y - 2.0, truth.h + 5.0);
        let (j, fd) = (sp.jacobian(&at).unwrap(), fd_jacobian(&sp, &at));
        let rel = (j - fd).abs().max() / j.abs().max();
        prop_assert!(rel < 1e-6, "relative error {rel}");
    }

    #[test]
    fn noise_free_closure(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_setup(&mut rng);
        let truth = random_point(&mut rng);
        let obs = observe(&s, &truth);
        prop_assume!(well_conditioned(&pair(&s, obs), &truth));
        let init = GroundPoint::new(
            truth.x + rng.random_range(-30.0..30.0),
            truth.y + rng.random_range(-30.0..30.0),
            truth.h + rng.random_range(-30.0..30.0),
        );
        let res = intersect(&s.sar, &s.opt, obs.0, obs.1, init, s.weights, SolverOptions::default()).unwrap();
        prop_assert!(res.point.distance(&truth) < 1e-6, "{:?} vs {:?}", res.point, truth);
        prop_assert!(res.iterations <= 10, "{} iterations", res.iterations);
    }

    #[test]
    fn covariance_is_symmetric_positive_definite(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_setup(&mut rng);
        let truth = random_point(&mut rng);
        let obs = observe(&s, &truth);
        prop_assume!(well_conditioned(&pair(&s, obs), &truth));
        let c = intersect(&s.sar, &s.opt, obs.0, obs.1, truth, s.weights, SolverOptions::default()).unwrap().covariance;
        prop_assert!((c - c.transpose()).abs().max() <= 1e-12 * c.abs().max());
        prop_assert!(c.symmetric_eigenvalues().min() > 0.0);
    }
}

#[test]
fn covariance_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut done = 0;
    while done < 5 {
        let s = random_setup(&mut rng);
        let truth = random_point(&mut rng);
        let obs = observe(&s, &truth);
        if !well_conditioned(&pair(&s, obs), &truth) {
            continue;
        }
        let analytic = intersect(&s.sar, &s.opt, obs.0, obs.1, truth, s.weights, SolverOptions::default())
            .unwrap()
            .covariance;
        let w = s.weights;
        let (nt, nr, np) = (Normal::new(0.0, w.sigma_t).unwrap(), Normal::new(0.0, w.sigma_r).unwrap(), Normal::new(0.0, w.sigma_px).unwrap());
        let draws = 10_000;
        let mut pts = Vec::with_capacity(draws);
        for _ in 0..draws {
            let so = SarObservation { t: obs.0.t + nt.sample(&mut rng), r: obs.0.r + nr.sample(&mut rng) };
            let oo = ImagePoint { row: obs.1.row + np.sample(&mut rng), col: obs.1.col + np.sample(&mut rng) };
            let p = intersect(&s.sar, &s.opt, so, oo, truth, w, SolverOptions::default()).unwrap();
            pts.push(p.point.to_vector());
        }
        let mean = pts.iter().fold(Vector3::zeros(), |a, p| a + p) / draws as f64;
        let mut sample = Matrix3::zeros();
        for p in &pts {
            sample += (p - mean) * (p - mean).transpose();
        }
        sample /= (draws - 1) as f64;
        let rel = (sample - analytic).norm() / analytic.norm();
        assert!(rel < 0.05, "config {done}: relative Frobenius difference {rel}");
        for k in 0..3 {
            let r = sample[(k, k)] / analytic[(k, k)];
            assert!((r - 1.0).abs() < 0.05, "config {done}: variance ratio {r} on axis {k}");
        }
        done += 1;
    }
}

#[test]
fn converged_gradient_vanishes() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut checked = 0;
    while checked < 500 {
        let s = random_setup(&mut rng);
        let truth = random_point(&mut rng);
        let mut obs = observe(&s, &truth);
        if !well_conditioned(&pair(&s, obs), &truth) {
            continue;
        }
        // noisy observations leave a nonzero residual at the optimum
        obs.0.r += 3.0 * s.weights.sigma_r;
        obs.1.col -= 2.0 * s.weights.sigma_px;
        let res = intersect(&s.sar, &s.opt, obs.0, obs.1, truth, s.weights, SolverOptions::default()).unwrap();
        let sp = pair(&s, obs);
        let (j, r) = (sp.jacobian(&res.point).unwrap(), sp.residuals(&res.point).unwrap());
        let g = j.transpose() * r;
        // range and Doppler residuals are differences of ~1e6 m quantities
        let sigma = s.weights.sigma_r.min(s.weights.sigma_t * s.sar.velocity().norm());
        let rounding = 4.0 * f64::EPSILON * obs.0.r / sigma;
        assert!(
            g.norm() <= 1e-8 * j.norm() * r.norm() + j.norm() * rounding,
            "gradient {g} at residual {r}"
        );
        checked += 1;
    }
}

#[test]
fn covariance_shrinks_with_range_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    for _ in 0..20 {
        let s = random_setup(&mut rng);
        let truth = random_point(&mut rng);
        let obs = observe(&s, &truth);
        let mut prev: Option<Matrix3<f64>> = None;
        for f in [2.0, 1.0, 0.5, 0.25, 0.125] {
            let w = ObservationWeights { sigma_r: s.weights.sigma_r * f, ..s.weights };
            let c = intersect(&s.sar, &s.opt, obs.0, obs.1, truth, w, SolverOptions::default()).unwrap().covariance;
            if let Some(p) = prev {
                // p - c positive semi-definite, and a strictly smaller trace
                assert!((p - c).symmetric_eigenvalues().min() >= -1e-9 * p.norm());
                assert!(c.trace() < p.trace());
            }
            prev = Some(c);
        }
    }
}

#[test]
fn conditioning_degrades_toward_glancing() {
    use sarstereo::accuracy::{StereoConfig, StereoMode};
    use sarstereo::intersection::{IntersectionError, MAX_CONDITION};
    let theta = 40.0;
    let mut last = 0.0;
    let mut fired = None;
    for gap in [20.0, 10.0, 5.0, 2.0, 1.0, 0.1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8] {
        let cfg = StereoConfig::from_degrees(StereoMode::OppositeSide, theta, 90.0 - theta - gap, 515e3, 770e3);
        let (sar, opt, w) = cfg.sensor_models(1e6).unwrap();
        let target = GroundPoint::default();
        let (so, oo) = (sar_forward(&sar, &target), opt_forward(&opt, &target).unwrap());
        let sp = StereoPair { sar: &sar, opt: &opt, sar_obs: so, opt_obs: oo, weights: w };
        let j = sp.jacobian(&target).unwrap();
        let cond = condition_number(&(j.transpose() * j));
        assert!(cond > last, "condition {cond} at gap {gap} after {last}");
        last = cond;
        let res = intersect(&sar, &opt, so, oo, target, w, SolverOptions::default());
        if cond > MAX_CONDITION {
            assert!(matches!(res, Err(IntersectionError::SingularNormalMatrix(_))), "{res:?}");
            // closer still, the eigenvalues fall below rounding
            fired = Some(gap);
            break;
        }
        assert!(res.is_ok(), "gap {gap}: {res:?}");
    }
    assert!(fired.is_some(), "never singular; last condition {last}");
}
