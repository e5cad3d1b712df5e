//! Contact particle filter over the arm surface.
//!
//! Particles live in intrinsic surface coordinates `(link, side, param)`,
//! so perturbation moves along the surface and never leaves it. A particle
//! is scored by how well a friction-cone force at its location explains the
//! residual: `l(x) = min_F ||r - J_x^T F||^2_W` with `W = Sigma^-1`.

use nalgebra::{DVector, Matrix2, Matrix2xX, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{
    patch_length, point_jacobian, project_to_surface, surface_point_at, surface_points, ArmModel, Side, SurfacePoint,
};
use crate::occupancy::OccupancyEstimate;
use crate::rng::{streams, SeedStream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CpfParams {
    pub num_particles: usize,
    /// Filter updates per contact event.
    pub iterations: usize,
    /// Arc-length perturbation, meters.
    pub motion_noise_std: f64,
    /// Residual noise standard deviation per joint (N m); one entry applies to all.
    pub sigma_meas: Vec<f64>,
    /// Per-joint detection threshold (N m); one entry applies to all.
    pub detect_threshold: Vec<f64>,
    /// Consecutive exceedances before a contact is declared.
    pub debounce: usize,
    /// Seconds after detection before residual samples count as evidence.
    pub settle_time: f64,
    /// Single-linkage radius, meters.
    pub cluster_radius: f64,
    pub mu: f64,
}

impl Default for CpfParams {
    fn default() -> Self {
        Self {
            num_particles: 250,
            iterations: 10,
            motion_noise_std: 0.01,
            sigma_meas: vec![0.05],
            detect_threshold: vec![0.3],
            debounce: 3,
            settle_time: 0.1,
            cluster_radius: 0.06,
            mu: 0.5,
        }
    }
}

impl CpfParams {
    pub fn validate(&self, num_joints: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        let per_joint = |v: &[f64]| (v.len() == 1 || v.len() == num_joints) && v.iter().all(|&x| x > 0.0);
        if self.num_particles == 0 || self.iterations == 0 {
            return bad("num_particles and iterations must be >= 1");
        }
        if !per_joint(&self.sigma_meas) || !per_joint(&self.detect_threshold) {
            return bad("sigma_meas and detect_threshold need one positive entry or one per joint");
        }
        if !(self.motion_noise_std > 0.0 && self.cluster_radius > 0.0 && self.mu >= 0.0 && self.settle_time >= 0.0) {
            return bad("motion_noise_std and cluster_radius must be > 0, mu and settle_time >= 0");
        }
        Ok(())
    }

    /// Diagonal of `Sigma^-1`.
    pub fn weights(&self, num_joints: usize) -> Vec<f64> {
        (0..num_joints).map(|j| 1.0 / self.sigma_meas[if self.sigma_meas.len() == 1 { 0 } else { j }].powi(2)).collect()
    }
}

/// Best cone-feasible explanation of `r` by a force at a point with
/// Jacobian `jac` and outward normal `normal`. The cone is centred on
/// `-normal` with half-angle `atan(mu)`. Returns `(cost, force)`.
pub fn measurement_cost_raw(
    jac: &Matrix2xX<f64>,
    normal: Vector2<f64>,
    r: &DVector<f64>,
    w: &[f64],
    mu: f64,
) -> (f64, Vector2<f64>) {
    let wr = DVector::from_iterator(r.len(), r.iter().zip(w).map(|(a, b)| a * b));
    let base = r.dot(&wr);
    let mut a = Matrix2::zeros();
    for j in 0..r.len() {
        let c = jac.column(j);
        a += w[j] * c * c.transpose();
    }
    let b: Vector2<f64> = jac * &wr;
    let scale = a.trace();
    if scale <= 0.0 {
        return (base, Vector2::zeros());
    }
    let half = mu.atan();
    let inward = -normal;
    let inside = |f: &Vector2<f64>| f.norm() == 0.0 || f.dot(&inward) >= f.norm() * half.cos() - 1e-12 * f.norm();
    if a.determinant() > 1e-12 * scale * scale {
        let f = a.lu().solve(&b).expect("non-singular");
        if inside(&f) {
            return ((base - b.dot(&f)).max(0.0), f);
        }
    }
    let mut best = (base, Vector2::zeros());
    for angle in [-half, half] {
        let (s, c) = angle.sin_cos();
        let d = Vector2::new(c * inward.x - s * inward.y, s * inward.x + c * inward.y);
        let dad = d.dot(&(a * d));
        if dad <= 0.0 {
            continue;
        }
        let mag = (d.dot(&b) / dad).max(0.0);
        let cost = (base - 2.0 * mag * d.dot(&b) + mag * mag * dad).max(0.0);
        if cost < best.0 {
            best = (cost, mag * d);
        }
    }
    best
}

/// `(cost, force)` for a surface point evaluated at joint angles `q`.
pub fn measurement_cost(
    sp: &SurfacePoint,
    r: &DVector<f64>,
    q: &[f64],
    arm: &ArmModel,
    params: &CpfParams,
) -> (f64, Vector2<f64>) {
    let jac = point_jacobian(arm, q, sp);
    measurement_cost_raw(&jac, sp.normal(), r, &params.weights(r.len()), params.mu)
}

/// Surface samples that move into the environment and lie outside known
/// free space.
pub fn active_surface(arm: &ArmModel, q: &[f64], v: &[f64], est: &OccupancyEstimate) -> Result<Vec<SurfacePoint>> {
    let pts: Vec<SurfacePoint> =
        surface_points(arm, q).into_iter().filter(|sp| advancing(arm, q, v, sp) && unexplored(est, sp)).collect();
    if pts.is_empty() {
        Err(Error::EmptyActiveSet)
    } else {
        Ok(pts)
    }
}

fn advancing(arm: &ArmModel, q: &[f64], v: &[f64], sp: &SurfacePoint) -> bool {
    let xdot = point_jacobian(arm, q, sp) * DVector::from_column_slice(v);
    sp.normal().dot(&xdot) > 0.0
}

fn unexplored(est: &OccupancyEstimate, sp: &SurfacePoint) -> bool {
    est.spec.cell_of(&sp.point).is_none_or(|c| !est.is_known_free(c))
}

/// [`active_surface`], relaxing to the motion test alone, then the free-space
/// test alone, then the whole sampled surface.
pub fn active_surface_with_fallback(
    arm: &ArmModel,
    q: &[f64],
    v: &[f64],
    est: &OccupancyEstimate,
) -> Vec<SurfacePoint> {
    if let Ok(pts) = active_surface(arm, q, v, est) {
        return pts;
    }
    let all = surface_points(arm, q);
    for keep in
        [&(|sp: &SurfacePoint| advancing(arm, q, v, sp)) as &dyn Fn(&SurfacePoint) -> bool, &|sp: &SurfacePoint| {
            unexplored(est, sp)
        }]
    {
        let pts: Vec<SurfacePoint> = all.iter().filter(|sp| keep(sp)).cloned().collect();
        if !pts.is_empty() {
            return pts;
        }
    }
    all
}

/// Residual and arm state summarizing one detected contact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactEvidence {
    pub r: Vec<f64>,
    /// Joint angles at which the residual is interpreted.
    pub q: Vec<f64>,
    /// Joint velocity at detection, used for the motion test.
    pub v: Vec<f64>,
}

impl ContactEvidence {
    /// Averages the residual over samples from `settle` seconds after the
    /// detection index to the end of the stream.
    pub fn from_stream(
        samples: &[crate::dynamics::ProprioSample],
        residuals: &[DVector<f64>],
        detected: usize,
        settle: f64,
    ) -> Self {
        let t0 = samples[detected].t + settle;
        let mut first = samples.iter().position(|s| s.t >= t0).unwrap_or(samples.len() - 1);
        first = first.max(detected);
        let window = &residuals[first..];
        let n = residuals[0].len();
        let mut r = DVector::zeros(n);
        for x in window {
            r += x;
        }
        r /= window.len() as f64;
        let mid = first + (samples.len() - first) / 2;
        Self { r: r.as_slice().to_vec(), q: samples[mid].q.clone(), v: samples[detected].v.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub link: usize,
    pub side: Side,
    pub param: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactEstimate {
    pub point: [f64; 2],
    pub surface: SurfacePoint,
    pub force: [f64; 2],
    /// Fraction of particles in the winning cluster.
    pub confidence: f64,
}

pub fn cpf_localize(
    ev: &ContactEvidence,
    arm: &ArmModel,
    est: &OccupancyEstimate,
    params: &CpfParams,
    seed: u64,
) -> Result<ContactEstimate> {
    cpf_localize_with(ev, arm, est, params, seed, None)
}

/// Runs the filter with an optional per-link weight multiplied into every
/// particle's likelihood.
pub fn cpf_localize_with(
    ev: &ContactEvidence,
    arm: &ArmModel,
    est: &OccupancyEstimate,
    params: &CpfParams,
    seed: u64,
    link_weights: Option<&[f64]>,
) -> Result<ContactEstimate> {
    let q = &ev.q;
    let r = DVector::from_column_slice(&ev.r);
    let w = params.weights(r.len());
    let candidates = active_surface_with_fallback(arm, q, &ev.v, est);
    if candidates.is_empty() {
        return Err(Error::EmptyActiveSet);
    }
    let mut rng = SeedStream::new(seed, streams::CPF);
    let mut particles: Vec<Particle> = (0..params.num_particles)
        .map(|_| {
            let sp = &candidates[rng.index(candidates.len())];
            Particle { link: sp.link, side: sp.side, param: sp.param }
        })
        .collect();
    let cost = |p: &Particle| {
        let sp = surface_point_at(arm, q, p.link, p.side, p.param);
        measurement_cost_raw(&point_jacobian(arm, q, &sp), sp.normal(), &r, &w, params.mu).0
    };
    for _ in 0..params.iterations {
        for p in particles.iter_mut() {
            let len = patch_length(arm, p.link, p.side);
            p.param = (p.param + rng.gaussian() * params.motion_noise_std / len).clamp(0.0, 1.0);
        }
        let costs: Vec<f64> = particles.iter().map(cost).collect();
        let best = costs.iter().cloned().fold(f64::INFINITY, f64::min);
        let weights: Vec<f64> = particles
            .iter()
            .zip(&costs)
            .map(|(p, c)| {
                let link_w = link_weights.map_or(1.0, |lw| lw[p.link]);
                ((-(c - best) / 2.0).exp() * link_w).max(1e-300)
            })
            .collect();
        particles = systematic_resample(&particles, &weights, rng.uniform());
    }
    let points: Vec<Vector2<f64>> =
        particles.iter().map(|p| surface_point_at(arm, q, p.link, p.side, p.param).point()).collect();
    let cluster = largest_cluster(&points, params.cluster_radius);
    let centroid = cluster.iter().map(|&i| points[i]).sum::<Vector2<f64>>() / cluster.len() as f64;
    let surface = project_to_surface(arm, q, centroid);
    let (_, force) = measurement_cost_raw(&point_jacobian(arm, q, &surface), surface.normal(), &r, &w, params.mu);
    Ok(ContactEstimate {
        point: surface.point,
        surface,
        force: [force.x, force.y],
        confidence: cluster.len() as f64 / particles.len() as f64,
    })
}

/// Low-variance resampling with a single uniform offset `u` in `[0, 1)`.
pub(crate) fn systematic_resample<T: Clone>(items: &[T], weights: &[f64], u: f64) -> Vec<T> {
    let n = items.len();
    let total: f64 = weights.iter().sum();
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0] / total;
    let mut i = 0;
    for k in 0..n {
        let target = (u + k as f64) / n as f64;
        while target > cum && i + 1 < n {
            i += 1;
            cum += weights[i] / total;
        }
        out.push(items[i].clone());
    }
    out
}

/// Members of the largest single-linkage cluster; ties go to the cluster
/// containing the lowest index.
fn largest_cluster(points: &[Vector2<f64>], radius: f64) -> Vec<usize> {
    let n = points.len();
    let mut label = vec![usize::MAX; n];
    let mut best: Vec<usize> = Vec::new();
    for seed in 0..n {
        if label[seed] != usize::MAX {
            continue;
        }
        label[seed] = seed;
        let mut members = vec![seed];
        let mut head = 0;
        while head < members.len() {
            let i = members[head];
            head += 1;
            for j in 0..n {
                if label[j] == usize::MAX && (points[i] - points[j]).norm() <= radius {
                    label[j] = seed;
                    members.push(j);
                }
            }
        }
        if members.len() > best.len() {
            best = members;
        }
    }
    best
}
