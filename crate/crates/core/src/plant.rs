//! Control-affine plants, regions of interest and the goal-recentred
//! auxiliary system used by each reach-avoid problem.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scltl::ObservationId;

/// Upper bound on the condition number of `g(x)` before it is treated as
/// rank deficient.
pub const CONDITION_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantError {
    #[error("input matrix is rank deficient (condition number {0:e})")]
    RankDeficient(f64),
    #[error("regions {0} and {1} overlap")]
    Overlap(String, String),
    #[error("region {0} is invalid: {1}")]
    InvalidRegion(String, String),
    #[error("no region of interest is labelled by observation {0}")]
    MissingRegion(usize),
    #[error("plant parameters are inconsistent: {0}")]
    InvalidModel(String),
}

/// Known structure of the drift `f(x) = θᵀ Y(x)` plus the input matrix `g(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PlantModel {
    /// Two-state nonlinear plant with basis `[x1, x2, x2 (1 - (cos 2x1 + 2)^2)]`.
    Benchmark2d,
    /// `ẋ = a x + b u`.
    Linear1d { a: f64, b: f64 },
    /// Monomial basis with constant input matrix. `monomials[k][i]` is the
    /// exponent of `x_i` in basis entry `k`; `theta` is `p1 × n`, `g` is `n × m`.
    CustomBasis { monomials: Vec<Vec<u32>>, theta: Vec<Vec<f64>>, g: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlAffinePlant {
    model: PlantModel,
    n: usize,
    m: usize,
    p1: usize,
}

impl ControlAffinePlant {
    pub fn new(model: PlantModel) -> Result<Self, PlantError> {
        let (n, m, p1) = match &model {
            PlantModel::Benchmark2d => (2, 2, 3),
            PlantModel::Linear1d { b, .. } => {
                if *b == 0.0 || !b.is_finite() {
                    return Err(PlantError::InvalidModel("linear1d requires b != 0".into()));
                }
                (1, 1, 1)
            }
            PlantModel::CustomBasis { monomials, theta, g } => {
                let p1 = monomials.len();
                let n = g.len();
                let m = g.first().map_or(0, Vec::len);
                if p1 == 0 || n == 0 || m == 0 {
                    return Err(PlantError::InvalidModel("empty basis or input matrix".into()));
                }
                if monomials.iter().any(|e| e.len() != n) {
                    return Err(PlantError::InvalidModel("monomial arity must equal state dimension".into()));
                }
                if theta.len() != p1 || theta.iter().any(|r| r.len() != n) {
                    return Err(PlantError::InvalidModel("theta must be p1 x n".into()));
                }
                if g.iter().any(|r| r.len() != m) {
                    return Err(PlantError::InvalidModel("g rows differ in length".into()));
                }
                (n, m, p1)
            }
        };
        Ok(Self { model, n, m, p1 })
    }

    pub fn model(&self) -> &PlantModel {
        &self.model
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn basis_len(&self) -> usize {
        self.p1
    }

    /// Regressor `Y(x)` of the drift parameterisation.
    pub fn basis(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.model {
            PlantModel::Benchmark2d => {
                let c = (2.0 * x[0]).cos() + 2.0;
                DVector::from_vec(vec![x[0], x[1], x[1] * (1.0 - c * c)])
            }
            PlantModel::Linear1d { .. } => DVector::from_vec(vec![x[0]]),
            PlantModel::CustomBasis { monomials, .. } => DVector::from_iterator(
                self.p1,
                monomials
                    .iter()
                    .map(|exps| exps.iter().zip(x.iter()).map(|(&k, &xi)| xi.powi(k as i32)).product::<f64>()),
            ),
        }
    }

    /// Input matrix `g(x)`, `n × m`.
    pub fn input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match &self.model {
            PlantModel::Benchmark2d => {
                let mut g = DMatrix::zeros(2, 2);
                g[(0, 0)] = (2.0 * x[0]).sin() + 2.0;
                g[(1, 1)] = (2.0 * x[0]).cos() + 2.0;
                g
            }
            PlantModel::Linear1d { b, .. } => DMatrix::from_element(1, 1, *b),
            PlantModel::CustomBasis { g, .. } => DMatrix::from_fn(self.n, self.m, |i, j| g[i][j]),
        }
    }

    /// A bound on the spectral norm of `g` over the state space.
    pub fn gbar(&self) -> f64 {
        match &self.model {
            PlantModel::Benchmark2d => 3.0,
            PlantModel::Linear1d { b, .. } => b.abs(),
            PlantModel::CustomBasis { .. } => {
                let g = self.input_matrix(&DVector::zeros(self.n));
                g.singular_values().max()
            }
        }
    }

    /// Drift reconstructed from estimated weights, `θ̂ᵀ Y(x)`.
    pub fn estimated_drift(&self, x: &DVector<f64>, theta_hat: &DMatrix<f64>) -> DVector<f64> {
        theta_hat.tr_mul(&self.basis(x))
    }

    /// Access to the true drift. Only the simulator and diagnostics use this;
    /// the controller works from `θ̂` alone.
    pub fn ground_truth(&self) -> GroundTruth<'_> {
        GroundTruth { plant: self }
    }
}

pub struct GroundTruth<'a> {
    plant: &'a ControlAffinePlant,
}

impl GroundTruth<'_> {
    /// Ideal weights `θ`, `p1 × n`.
    pub fn theta(&self) -> DMatrix<f64> {
        match &self.plant.model {
            PlantModel::Benchmark2d => DMatrix::from_row_slice(3, 2, &[-1.0, -0.5, 1.0, 0.0, 0.0, -0.5]),
            PlantModel::Linear1d { a, .. } => DMatrix::from_element(1, 1, *a),
            PlantModel::CustomBasis { theta, .. } => DMatrix::from_fn(self.plant.p1, self.plant.n, |i, j| theta[i][j]),
        }
    }

    /// The drift `f(x)`.
    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.plant.model {
            PlantModel::Benchmark2d => {
                let c = (2.0 * x[0]).cos() + 2.0;
                DVector::from_vec(vec![-x[0] + x[1], -0.5 * x[0] - 0.5 * x[1] * (1.0 - c * c)])
            }
            PlantModel::Linear1d { a, .. } => DVector::from_vec(vec![a * x[0]]),
            PlantModel::CustomBasis { .. } => self.theta().tr_mul(&self.plant.basis(x)),
        }
    }
}

/// `g† = (gᵀ g)⁻¹ gᵀ` for a full column rank `g`.
pub fn pseudo_inverse(g: &DMatrix<f64>) -> Result<DMatrix<f64>, PlantError> {
    let gram = g.tr_mul(g);
    let eig = gram.clone().symmetric_eigen();
    let lo = eig.eigenvalues.min();
    let hi = eig.eigenvalues.max();
    if !(lo > 0.0) || !hi.is_finite() {
        return Err(PlantError::RankDeficient(f64::INFINITY));
    }
    let cond = (hi / lo).sqrt();
    if cond > CONDITION_LIMIT {
        return Err(PlantError::RankDeficient(cond));
    }
    let chol = gram.cholesky().ok_or(PlantError::RankDeficient(cond))?;
    Ok(chol.solve(&g.transpose()))
}

type SurfaceFn = dyn Fn(&DVector<f64>) -> f64 + Send + Sync;

/// Shape of a region `{x : h(x) >= 0}`.
#[derive(Clone)]
pub enum RegionShape {
    /// `h(x) = r - ‖x - c‖`.
    Disk { center: DVector<f64>, radius: f64 },
    /// User supplied `h`; gradients use central differences.
    Custom(Arc<SurfaceFn>),
}

impl fmt::Debug for RegionShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegionShape::Disk { center, radius } => {
                f.debug_struct("Disk").field("center", &center.as_slice()).field("radius", radius).finish()
            }
            RegionShape::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Step used for central differences on user supplied surfaces.
pub const FD_STEP: f64 = 1e-6;

impl RegionShape {
    pub fn h(&self, x: &DVector<f64>) -> f64 {
        match self {
            RegionShape::Disk { center, radius } => radius - (x - center).norm(),
            RegionShape::Custom(h) => h(x),
        }
    }

    pub fn grad_h(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            RegionShape::Disk { center, .. } => {
                let d = x - center;
                let r = d.norm();
                if r == 0.0 {
                    DVector::zeros(x.len())
                } else {
                    -d / r
                }
            }
            RegionShape::Custom(h) => {
                let mut g = DVector::zeros(x.len());
                let mut probe = x.clone();
                for i in 0..x.len() {
                    let xi = probe[i];
                    probe[i] = xi + FD_STEP;
                    let up = h(&probe);
                    probe[i] = xi - FD_STEP;
                    let down = h(&probe);
                    probe[i] = xi;
                    g[i] = (up - down) / (2.0 * FD_STEP);
                }
                g
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Roi {
    pub obs: ObservationId,
    pub name: String,
    pub shape: RegionShape,
    /// Interior point used as the regulation goal `x_d`.
    pub goal: DVector<f64>,
}

impl Roi {
    pub fn disk(obs: ObservationId, name: impl Into<String>, center: DVector<f64>, radius: f64) -> Self {
        Self { obs, name: name.into(), goal: center.clone(), shape: RegionShape::Disk { center, radius } }
    }

    pub fn h(&self, x: &DVector<f64>) -> f64 {
        self.shape.h(x)
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.h(x) >= 0.0
    }
}

/// Regions of interest, at most one per observation.
#[derive(Debug, Clone, Default)]
pub struct RoiSet {
    rois: Vec<Roi>,
}

impl RoiSet {
    /// Validates and builds the set. Disks must be pairwise disjoint and have
    /// their goal strictly inside.
    pub fn new(rois: Vec<Roi>) -> Result<Self, PlantError> {
        for (i, a) in rois.iter().enumerate() {
            if let RegionShape::Disk { radius, .. } = &a.shape {
                if !(*radius > 0.0) || !radius.is_finite() {
                    return Err(PlantError::InvalidRegion(a.name.clone(), "radius must be positive".into()));
                }
            }
            if !(a.h(&a.goal) > 0.0) {
                return Err(PlantError::InvalidRegion(a.name.clone(), "goal is not interior".into()));
            }
            for b in &rois[i + 1..] {
                if a.obs == b.obs {
                    return Err(PlantError::InvalidRegion(b.name.clone(), "observation labelled twice".into()));
                }
                if let (RegionShape::Disk { center: ca, radius: ra }, RegionShape::Disk { center: cb, radius: rb }) =
                    (&a.shape, &b.shape)
                {
                    if ca.len() != cb.len() {
                        return Err(PlantError::InvalidRegion(b.name.clone(), "dimension mismatch".into()));
                    }
                    if (ca - cb).norm() <= ra + rb {
                        return Err(PlantError::Overlap(a.name.clone(), b.name.clone()));
                    }
                }
            }
        }
        Ok(Self { rois })
    }

    pub fn iter(&self) -> impl Iterator<Item = &Roi> {
        self.rois.iter()
    }

    pub fn get(&self, o: ObservationId) -> Option<&Roi> {
        self.rois.iter().find(|r| r.obs == o)
    }

    /// Observations whose closed region contains `x`.
    pub fn membership(&self, x: &DVector<f64>) -> BTreeSet<ObservationId> {
        self.rois.iter().filter(|r| r.contains(x)).map(|r| r.obs).collect()
    }
}

/// Error coordinates `e = x - x_d` around the goal of the current target.
#[derive(Debug, Clone)]
pub struct AuxiliarySystem {
    plant: ControlAffinePlant,
    x_d: DVector<f64>,
    g_pinv_d: DMatrix<f64>,
    target: Option<ObservationId>,
}

impl AuxiliarySystem {
    /// Error system regulating to `x_d`.
    pub fn at_goal(plant: &ControlAffinePlant, x_d: DVector<f64>) -> Result<Self, PlantError> {
        let g_pinv_d = pseudo_inverse(&plant.input_matrix(&x_d))?;
        Ok(Self { plant: plant.clone(), x_d, g_pinv_d, target: None })
    }

    pub fn plant(&self) -> &ControlAffinePlant {
        &self.plant
    }

    pub fn goal(&self) -> &DVector<f64> {
        &self.x_d
    }

    pub fn target(&self) -> Option<ObservationId> {
        self.target
    }

    /// `z(e) = e + x_d`.
    pub fn to_state(&self, e: &DVector<f64>) -> DVector<f64> {
        e + &self.x_d
    }

    /// `z⁻¹(x) = x - x_d`.
    pub fn to_error(&self, x: &DVector<f64>) -> DVector<f64> {
        x - &self.x_d
    }

    /// Estimated steady-state input `û_d = -g†(x_d) θ̂ᵀ Y(x_d)`.
    pub fn steady_input(&self, theta_hat: &DMatrix<f64>) -> DVector<f64> {
        -(&self.g_pinv_d * self.plant.estimated_drift(&self.x_d, theta_hat))
    }

    /// `F̂(y, θ̂) = θ̂ᵀ Y(z(y)) - g(z(y)) g†(x_d) θ̂ᵀ Y(x_d)`.
    pub fn drift_hat(&self, y: &DVector<f64>, theta_hat: &DMatrix<f64>) -> DVector<f64> {
        let x = self.to_state(y);
        self.plant.estimated_drift(&x, theta_hat) + self.plant.input_matrix(&x) * self.steady_input(theta_hat)
    }

    /// `G(y) = g(z(y))`.
    pub fn input_matrix(&self, y: &DVector<f64>) -> DMatrix<f64> {
        self.plant.input_matrix(&self.to_state(y))
    }
}

/// Builds the auxiliary system for `o_target`, regulating to its region goal.
pub fn retarget(
    plant: &ControlAffinePlant,
    rois: &RoiSet,
    o_target: ObservationId,
) -> Result<AuxiliarySystem, PlantError> {
    let roi = rois.get(o_target).ok_or(PlantError::MissingRegion(o_target.0))?;
    let mut aux = AuxiliarySystem::at_goal(plant, roi.goal.clone())?;
    aux.target = Some(o_target);
    Ok(aux)
}
