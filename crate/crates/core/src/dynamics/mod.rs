//! Rigid-body dynamics of the planar arm and the simulated execution of
//! lattice edges against a ground-truth world.
//!
//! Links are uniform rods: mass `m`, length `l`, centre of mass at `l / 2`
//! and moment of inertia `m l^2 / 12` about it.

mod sim;

pub use sim::{
    direct_residual, first_contact, simulate_edge, sweep_outcome, ContactTruth, DynParams, EdgeOutcome, ExecutionTrace,
    ProprioSample, VelocityProfile,
};

use nalgebra::{DMatrix, DVector};

use crate::kinematics::{joint_positions, ArmModel, Vec2};

/// Joint-space rigid-body model `H(q) a + C(q, v) v + g(q) = tau + tau_ext`.
pub trait RigidBody {
    fn dof(&self) -> usize;
    fn inertia(&self, q: &[f64]) -> DMatrix<f64>;
    /// Christoffel-form Coriolis matrix, so `dH/dt - 2 C` is skew-symmetric.
    fn coriolis(&self, q: &[f64], v: &[f64]) -> DMatrix<f64>;
    fn gravity_torque(&self, q: &[f64]) -> DVector<f64>;

    fn momentum(&self, q: &[f64], v: &[f64]) -> DVector<f64> {
        self.inertia(q) * DVector::from_column_slice(v)
    }
}

pub fn inverse_dynamics(model: &dyn RigidBody, q: &[f64], v: &[f64], a: &[f64]) -> DVector<f64> {
    let v = DVector::from_column_slice(v);
    model.inertia(q) * DVector::from_column_slice(a) + model.coriolis(q, v.as_slice()) * &v + model.gravity_torque(q)
}

#[derive(Clone, Debug)]
pub struct PlanarArmDynamics<'a> {
    pub arm: &'a ArmModel,
    pub gravity: [f64; 2],
}

impl<'a> PlanarArmDynamics<'a> {
    pub fn new(arm: &'a ArmModel, gravity: [f64; 2]) -> Self {
        Self { arm, gravity }
    }

    fn centers(&self, joints: &[Vec2]) -> Vec<Vec2> {
        joints.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// `dH/dq_m` for every `m`.
    fn inertia_gradient(&self, q: &[f64]) -> Vec<DMatrix<f64>> {
        let n = self.dof();
        let joints = joint_positions(self.arm, q);
        let centers = self.centers(&joints);
        let mut out = vec![DMatrix::zeros(n, n); n];
        for (i, c) in centers.iter().enumerate() {
            let m = self.arm.link_masses[i];
            let jac = com_jacobian(&joints, *c, i, n);
            for (dm, dh) in out.iter_mut().enumerate().take(i + 1) {
                // column k of dJ/dq_m is -(c - p_max(k, m)) for k, m <= i
                let mut dj = DMatrix::zeros(2, n);
                for k in 0..=i {
                    let d = c - joints[k.max(dm)];
                    dj[(0, k)] = -d.x;
                    dj[(1, k)] = -d.y;
                }
                let t = dj.transpose() * &jac;
                *dh += m * (&t + t.transpose());
            }
        }
        out
    }
}

fn com_jacobian(joints: &[Vec2], c: Vec2, link: usize, n: usize) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(2, n);
    for k in 0..=link {
        let d = c - joints[k];
        jac[(0, k)] = -d.y;
        jac[(1, k)] = d.x;
    }
    jac
}

impl RigidBody for PlanarArmDynamics<'_> {
    fn dof(&self) -> usize {
        self.arm.num_links()
    }

    fn inertia(&self, q: &[f64]) -> DMatrix<f64> {
        let n = self.dof();
        let joints = joint_positions(self.arm, q);
        let mut h = DMatrix::zeros(n, n);
        for (i, c) in self.centers(&joints).into_iter().enumerate() {
            let (m, l) = (self.arm.link_masses[i], self.arm.link_lengths[i]);
            let jac = com_jacobian(&joints, c, i, n);
            h += m * jac.transpose() * jac;
            let rot = m * l * l / 12.0;
            for a in 0..=i {
                for b in 0..=i {
                    h[(a, b)] += rot;
                }
            }
        }
        h
    }

    fn coriolis(&self, q: &[f64], v: &[f64]) -> DMatrix<f64> {
        let n = self.dof();
        let dh = self.inertia_gradient(q);
        DMatrix::from_fn(n, n, |k, j| {
            (0..n).map(|m| 0.5 * (dh[m][(k, j)] + dh[j][(k, m)] - dh[k][(j, m)]) * v[m]).sum()
        })
    }

    fn gravity_torque(&self, q: &[f64]) -> DVector<f64> {
        let n = self.dof();
        let joints = joint_positions(self.arm, q);
        let lift = nalgebra::Vector2::new(-self.gravity[0], -self.gravity[1]);
        let mut g = DVector::zeros(n);
        for (i, c) in self.centers(&joints).into_iter().enumerate() {
            g += self.arm.link_masses[i] * com_jacobian(&joints, c, i, n).transpose() * lift;
        }
        g
    }
}

/// Single joint with constant inertia and no Coriolis or gravity terms.
#[derive(Clone, Copy, Debug)]
pub struct FrozenScalar {
    pub inertia: f64,
}

impl RigidBody for FrozenScalar {
    fn dof(&self) -> usize {
        1
    }

    fn inertia(&self, _q: &[f64]) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.inertia)
    }

    fn coriolis(&self, _q: &[f64], _v: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(1, 1)
    }

    fn gravity_torque(&self, _q: &[f64]) -> DVector<f64> {
        DVector::zeros(1)
    }
}
