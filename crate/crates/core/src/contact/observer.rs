//! Generalized-momentum observer.
//!
//! With `p = H(q) v`, the residual `r = K (p - I)` where `I` integrates
//! `tau + C(q, v)^T v - g(q) + r` from `I(t0) = p(t0)`. Its continuous form
//! obeys `dr/dt = K (tau_ext - r)`. Integration is trapezoidal and implicit in
//! `r`, which is solvable per joint because `K` is diagonal.

use nalgebra::DVector;

use crate::dynamics::{ProprioSample, RigidBody};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ObserverState {
    pub r: DVector<f64>,
    pub integral: DVector<f64>,
    /// Integrand at the previous sample.
    pub prev_rate: DVector<f64>,
    pub last_t: Option<f64>,
}

impl ObserverState {
    pub fn new(dof: usize) -> Self {
        Self { r: DVector::zeros(dof), integral: DVector::zeros(dof), prev_rate: DVector::zeros(dof), last_t: None }
    }

    /// Consumes one sample and returns the updated residual.
    pub fn step(&mut self, sample: &ProprioSample, model: &dyn RigidBody, gains: &[f64]) -> Result<&DVector<f64>> {
        let n = model.dof();
        let gain = |j: usize| if gains.len() == 1 { gains[0] } else { gains[j] };
        let v = DVector::from_column_slice(&sample.v);
        let p = model.inertia(&sample.q) * &v;
        let rate = DVector::from_column_slice(&sample.tau) + model.coriolis(&sample.q, &sample.v).transpose() * &v
            - model.gravity_torque(&sample.q);
        match self.last_t {
            None => {
                self.integral = p;
                self.r = DVector::zeros(n);
            }
            Some(last_t) => {
                if sample.t <= last_t {
                    return Err(Error::NonMonotonicTime { t: sample.t, last_t });
                }
                let dt = sample.t - last_t;
                for j in 0..n {
                    let k = gain(j);
                    let open = self.integral[j] + 0.5 * dt * (self.prev_rate[j] + rate[j]);
                    self.r[j] = k * (p[j] - open) / (1.0 + 0.5 * k * dt);
                    self.integral[j] = open + 0.5 * dt * self.r[j];
                }
            }
        }
        self.prev_rate = rate + &self.r;
        self.last_t = Some(sample.t);
        Ok(&self.r)
    }
}

/// Residual after every sample of a time-ordered stream.
pub fn run_observer(samples: &[ProprioSample], model: &dyn RigidBody, gains: &[f64]) -> Result<Vec<DVector<f64>>> {
    let mut state = ObserverState::new(model.dof());
    samples.iter().map(|s| state.step(s, model, gains).cloned()).collect()
}

/// True when any joint's residual magnitude is strictly above its threshold.
pub fn exceeds(r: &DVector<f64>, threshold: &[f64]) -> bool {
    r.iter().enumerate().any(|(j, x)| x.abs() > if threshold.len() == 1 { threshold[0] } else { threshold[j] })
}

/// Threshold detector that fires after `debounce` consecutive exceedances.
#[derive(Clone, Debug)]
pub struct Detector {
    pub threshold: Vec<f64>,
    pub debounce: usize,
    run: usize,
}

impl Detector {
    pub fn new(threshold: Vec<f64>, debounce: usize) -> Self {
        Self { threshold, debounce: debounce.max(1), run: 0 }
    }

    pub fn update(&mut self, r: &DVector<f64>) -> bool {
        self.run = if exceeds(r, &self.threshold) { self.run + 1 } else { 0 };
        self.run >= self.debounce
    }

    /// Index of the sample at which the detector first fires.
    pub fn first_detection(threshold: &[f64], debounce: usize, residuals: &[DVector<f64>]) -> Option<usize> {
        let mut d = Detector::new(threshold.to_vec(), debounce);
        residuals.iter().position(|r| d.update(r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{simulate_edge, DynParams, FrozenScalar, PlanarArmDynamics};
    use crate::kinematics::{
        interpolate, point_jacobian, robot_cells, robot_cells_at, surface_point_at, ArmModel, Config,
    };
    use crate::workspace::{GridSpec, GroundTruthGrid};

    /// Unit-inertia joint driven only by an external torque profile.
    fn scalar_stream(ext: impl Fn(f64) -> f64, dt: f64, steps: usize) -> Vec<ProprioSample> {
        let mut v = 0.0;
        let mut out = Vec::with_capacity(steps + 1);
        for k in 0..=steps {
            let t = k as f64 * dt;
            out.push(ProprioSample { t, q: vec![0.0], v: vec![v], tau: vec![0.0] });
            // exact velocity for piecewise-smooth profiles sampled finely
            v += 0.5 * dt * (ext(t) + ext(t + dt));
        }
        out
    }

    fn scalar_residual(ext: impl Fn(f64) -> f64, k: f64, dt: f64, steps: usize) -> Vec<f64> {
        run_observer(&scalar_stream(ext, dt, steps), &FrozenScalar { inertia: 1.0 }, &[k])
            .unwrap()
            .iter()
            .map(|r| r[0])
            .collect()
    }

    #[test]
    fn scalar_step_response() {
        let dt = 1e-3;
        let r = scalar_residual(|_| 1.0, 2.0, dt, 1000);
        for (k, x) in r.iter().enumerate() {
            let t = k as f64 * dt;
            assert!((x - (1.0 - (-2.0 * t).exp())).abs() < 1e-3);
        }
        assert!((r[1000] - 0.8647).abs() < 1e-3);
    }

    #[test]
    fn zero_external_torque_stays_zero() {
        let r = scalar_residual(|_| 0.0, 5.0, 1e-3, 500);
        assert!(r.iter().all(|x| x.abs() < 1e-9));
    }

    #[test]
    fn doubling_gain_halves_rise_time() {
        let rise = |k: f64| {
            let r = scalar_residual(|_| 1.0, k, 1e-4, 20_000);
            r.iter().position(|&x| x >= 1.0 - (-1.0f64).exp()).unwrap() as f64 * 1e-4
        };
        let (t1, t2) = (rise(2.0), rise(4.0));
        assert!((t1 / t2 - 2.0).abs() < 0.01, "{t1} {t2}");
    }

    #[test]
    fn superposition() {
        let a = |t: f64| if t >= 0.1 { 0.7 } else { 0.0 };
        let b = |t: f64| (3.0 * t).sin();
        let ra = scalar_residual(a, 3.0, 1e-3, 800);
        let rb = scalar_residual(b, 3.0, 1e-3, 800);
        let rab = scalar_residual(|t| a(t) + b(t), 3.0, 1e-3, 800);
        for k in 0..ra.len() {
            assert!((rab[k] - ra[k] - rb[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_non_increasing_time() {
        let model = FrozenScalar { inertia: 1.0 };
        let mut s = ObserverState::new(1);
        let sample = ProprioSample { t: 0.5, q: vec![0.0], v: vec![0.0], tau: vec![0.0] };
        s.step(&sample, &model, &[1.0]).unwrap();
        assert!(matches!(s.step(&sample, &model, &[1.0]), Err(Error::NonMonotonicTime { .. })));
    }

    #[test]
    fn debounce() {
        let hi = DVector::from_vec(vec![0.0, 0.5]);
        let lo = DVector::from_vec(vec![0.0, 0.1]);
        assert!(!exceeds(&DVector::zeros(2), &[0.3]));
        assert_eq!(
            Detector::first_detection(&[0.3], 3, &[lo.clone(), hi.clone(), lo.clone(), hi.clone(), lo.clone()]),
            None
        );
        assert_eq!(Detector::first_detection(&[0.3], 3, &[lo, hi.clone(), hi.clone(), hi]), Some(3));
    }

    fn desk() -> (ArmModel, GridSpec) {
        (ArmModel::reference(), GridSpec::planar(32, 32, 0.03).unwrap())
    }

    #[test]
    fn free_motion_residual_is_negligible() {
        let (arm, spec) = desk();
        let world = GroundTruthGrid::empty(spec);
        let dynp = DynParams { torque_noise_std: 0.0, ..DynParams::default() };
        let model = PlanarArmDynamics::new(&arm, dynp.gravity);
        let settle = 1.0 / dynp.gain(0);
        let mut rng = crate::rng::SeedStream::new(1, 0);
        for _ in 0..60 {
            let a = Config::new((0..3).map(|_| rng.int_range(1, 14) as i32).collect());
            let b = a.apply(crate::kinematics::Action {
                joint: rng.index(3),
                dir: if rng.uniform() < 0.5 { -1 } else { 1 },
            });
            let tr = simulate_edge(&world, &arm, &dynp, &a, &b, 0).unwrap();
            let res = run_observer(&tr.samples, &model, &dynp.observer_gain).unwrap();
            let worst =
                tr.samples.iter().zip(&res).filter(|(s, _)| s.t >= settle).map(|(_, r)| r.amax()).fold(0.0, f64::max);
            assert!(worst < 1e-6, "{a:?} -> {b:?}: {worst}");
        }
    }

    #[test]
    fn noiseless_contact_detected_promptly() {
        let (arm, spec) = desk();
        let dynp = DynParams { torque_noise_std: 0.0, ..DynParams::default() };
        let model = PlanarArmDynamics::new(&arm, dynp.gravity);
        let mut rng = crate::rng::SeedStream::new(5, 0);
        let mut checked = 0;
        while checked < 20 {
            let a = Config::new((0..3).map(|_| rng.int_range(2, 13) as i32).collect());
            let b = a.apply(crate::kinematics::Action { joint: rng.index(3), dir: 1 });
            let mut world = GroundTruthGrid::empty(spec.clone());
            let n = arm.sweep_substeps;
            let j = rng.int_range(2, n as i64) as usize;
            let mut before = robot_cells(&arm, &a, &spec);
            for i in 1..j {
                before.extend_from(&robot_cells_at(&arm, &interpolate(&arm, &a, &b, i, n), &spec));
            }
            world.occupied = robot_cells_at(&arm, &interpolate(&arm, &a, &b, j, n), &spec).difference(&before);
            let Ok(tr) = simulate_edge(&world, &arm, &dynp, &a, &b, checked) else { continue };
            let Some(c) = tr.contact().cloned() else { continue };
            let sp = surface_point_at(&arm, &c.q_contact, c.point.link, c.point.side, c.point.param);
            let tau =
                point_jacobian(&arm, &c.q_contact, &sp).transpose() * nalgebra::Vector2::new(c.force[0], c.force[1]);
            // contacts too weak to cross the threshold are out of scope here
            if tau.amax() < 1.0 {
                continue;
            }
            checked += 1;
            let res = run_observer(&tr.samples, &model, &dynp.observer_gain).unwrap();
            let fired = Detector::first_detection(&[0.3], 3, &res).expect("detected");
            let dt = tr.samples[fired].t - c.onset_t;
            assert!((0.0..=0.05).contains(&dt), "latency {dt}");
        }
    }

    #[test]
    fn stationary_contact_residual_equals_contact_torque() {
        let (arm, spec) = desk();
        let a = Config::new(vec![4, 7, 8]);
        let b = Config::new(vec![4, 8, 8]);
        let n = arm.sweep_substeps;
        let mut world = GroundTruthGrid::empty(spec.clone());
        let q = interpolate(&arm, &a, &b, n, n);
        let mut before = robot_cells(&arm, &a, &spec);
        for j in 1..n {
            before.extend_from(&robot_cells_at(&arm, &interpolate(&arm, &a, &b, j, n), &spec));
        }
        world.occupied = robot_cells_at(&arm, &q, &spec).difference(&before);
        assert!(!world.occupied.is_empty());
        let dynp = DynParams {
            torque_noise_std: 0.0,
            friction_mu: 0.0,
            observer_gain: vec![200.0],
            contact_dwell: 1.0,
            ..DynParams::default()
        };
        let tr = simulate_edge(&world, &arm, &dynp, &a, &b, 11).unwrap();
        let c = tr.contact().expect("contact").clone();
        let model = PlanarArmDynamics::new(&arm, dynp.gravity);
        let res = run_observer(&tr.samples, &model, &dynp.observer_gain).unwrap();
        let last = tr.samples.last().unwrap();
        let sp = surface_point_at(&arm, &last.q, c.point.link, c.point.side, c.point.param);
        let expected = point_jacobian(&arm, &last.q, &sp).transpose() * nalgebra::Vector2::new(c.force[0], c.force[1]);
        assert!((res.last().unwrap() - expected).amax() < 1e-6);
        let onset = tr.samples.iter().position(|s| s.t >= c.onset_t).unwrap();
        let fired = Detector::first_detection(&[0.3], 3, &res).expect("detected");
        assert!(fired >= onset && tr.samples[fired].t - c.onset_t <= 0.05);
    }
}
