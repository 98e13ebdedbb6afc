//! Loss terms and PDE residuals: data loss, Burgers residual, Caputo
//! time-fractional residual via the L1 scheme, initial/boundary loss, the
//! weighted composite, and the three-component objective vector.

mod caputo;
mod gamma;

pub use caputo::{caputo_l1, caputo_weights, caputo_weights_dalpha};
pub use gamma::{dgamma_inv, gamma_fn};

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffkit::{Chan, DiffError, Graph, Jet2, NodeId};
use crate::opnet::{ModelError, OperatorModel};
use crate::rngutil;

#[derive(Debug, Error)]
pub enum PhysicsError {
    #[error("gamma function argument {z} outside (0, 50]")]
    GammaDomain { z: f64 },
    #[error("fractional order {alpha} outside (0, 1)")]
    AlphaDomain { alpha: f64 },
    #[error("history needs at least two samples, got {len}")]
    HistoryTooShort { len: usize },
    #[error("non-positive history step {dt}")]
    InvalidStep { dt: f64 },
    #[error("point ({x}, {t}) outside the problem domain")]
    OutsideDomain { x: f64, t: f64 },
    #[error("empty {0} set")]
    EmptySet(&'static str),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Benchmark problem with its true PDE scalar (viscosity or fractional order).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "problem", rename_all = "lowercase")]
pub enum Problem {
    Burgers { nu: f64 },
    Tfmdwe { alpha: f64 },
}

impl Problem {
    pub fn name(&self) -> &'static str {
        match self {
            Problem::Burgers { .. } => "burgers",
            Problem::Tfmdwe { .. } => "tfmdwe",
        }
    }

    pub fn x_domain(&self) -> (f64, f64) {
        match self {
            Problem::Burgers { .. } => (-1.0, 1.0),
            Problem::Tfmdwe { .. } => (0.0, std::f64::consts::PI),
        }
    }

    pub fn t_end(&self) -> f64 {
        1.0
    }

    /// Dirichlet data: the initial profile at t = 0.
    pub fn initial_value(&self, x: f64) -> f64 {
        match self {
            Problem::Burgers { .. } => -(std::f64::consts::PI * x).sin(),
            Problem::Tfmdwe { .. } => 0.0,
        }
    }

    /// The PDE scalar a forward solver would use.
    pub fn pde_param(&self) -> f64 {
        match self {
            Problem::Burgers { nu } => *nu,
            Problem::Tfmdwe { alpha } => *alpha,
        }
    }
}

/// The three loss components treated as separate objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveVector {
    pub l_data: f64,
    pub l_pde: f64,
    pub l_bc: f64,
}

impl ObjectiveVector {
    pub fn as_array(&self) -> [f64; 3] {
        [self.l_data, self.l_pde, self.l_bc]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

/// Weights of the composite loss; must not all vanish.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_data: f64,
    pub w_pde: f64,
    pub w_bc: f64,
}

impl LossWeights {
    pub fn unit() -> Self {
        LossWeights { w_data: 1.0, w_pde: 1.0, w_bc: 1.0 }
    }

    pub fn data_only() -> Self {
        LossWeights { w_data: 1.0, w_pde: 0.0, w_bc: 0.0 }
    }

    pub fn validate(&self) -> Result<(), PhysicsError> {
        let ws = [self.w_data, self.w_pde, self.w_bc];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) || ws.iter().all(|w| *w == 0.0) {
            return Err(PhysicsError::NonFinite("loss weights"));
        }
        Ok(())
    }
}

/// Residual evaluation sites plus the per-point time-history resolution used
/// by the fractional residual (each interior point gets a uniform grid of
/// `history_divisions` steps from 0 to its own t).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollocationSet {
    pub interior: Vec<(f64, f64)>,
    pub boundary: Vec<(f64, f64)>,
    pub initial: Vec<f64>,
    pub history_divisions: usize,
}

impl CollocationSet {
    pub fn validate(&self, problem: &Problem) -> Result<(), PhysicsError> {
        let (lo, hi) = problem.x_domain();
        for &(x, t) in &self.interior {
            if !(x > lo && x < hi && t > 0.0 && t <= problem.t_end()) {
                return Err(PhysicsError::OutsideDomain { x, t });
            }
        }
        if self.history_divisions == 0 {
            return Err(PhysicsError::HistoryTooShort { len: 1 });
        }
        Ok(())
    }

    /// Uniform history grid `0 = t_0 < ... < t_n = t` for one interior point.
    pub fn history_grid(&self, t: f64) -> Vec<f64> {
        let n = self.history_divisions;
        (0..=n).map(|j| t * j as f64 / n as f64).collect()
    }
}

/// Scalar field with query-coordinate jets; implemented by bound operator
/// models and by analytic closures in tests.
pub trait Field2 {
    /// `(u, u_x, u_xx)` at `(x, t)`.
    fn jet_x(&self, x: f64, t: f64) -> Result<Jet2, PhysicsError>;
    /// `(u, u_t, u_tt)` at `(x, t)`; only the first derivative is used.
    fn jet_t(&self, x: f64, t: f64) -> Result<Jet2, PhysicsError>;
    fn value(&self, x: f64, t: f64) -> Result<f64, PhysicsError> {
        Ok(self.jet_x(x, t)?.value)
    }
}

/// Analytic field defined by one bivariate jet chain.
pub struct ClosureField<F: Fn(Jet2, Jet2) -> Jet2>(pub F);

impl<F: Fn(Jet2, Jet2) -> Jet2> Field2 for ClosureField<F> {
    fn jet_x(&self, x: f64, t: f64) -> Result<Jet2, PhysicsError> {
        Ok((self.0)(Jet2::seed(x), Jet2::constant(t)))
    }

    fn jet_t(&self, x: f64, t: f64) -> Result<Jet2, PhysicsError> {
        Ok((self.0)(Jet2::constant(x), Jet2::seed(t)))
    }
}

/// An operator model bound to one input function sample.
pub struct BoundModel<'a> {
    pub model: &'a OperatorModel,
    pub kappa: &'a [f64],
}

impl Field2 for BoundModel<'_> {
    fn jet_x(&self, x: f64, t: f64) -> Result<Jet2, PhysicsError> {
        let q = Array2::from_shape_vec((1, 2), vec![x, t]).expect("static shape");
        let (v, d1, d2, _) = self.model.predict_jets(self.kappa, q, 0, None)?;
        Ok(Jet2 { value: v[0], d1: d1[0], d2: d2[0] })
    }

    fn jet_t(&self, x: f64, t: f64) -> Result<Jet2, PhysicsError> {
        let q = Array2::from_shape_vec((1, 2), vec![x, t]).expect("static shape");
        let (v, d1, d2, _) = self.model.predict_jets(self.kappa, q, 1, None)?;
        Ok(Jet2 { value: v[0], d1: d1[0], d2: d2[0] })
    }
}

/// Forcing of the time-fractional benchmark:
/// `f(x,t) = Gamma(4)/Gamma(4-alpha) t^{3-alpha} sin x + t^3 sin x`.
pub fn forcing_tfmdwe(x: f64, t: f64, alpha: f64) -> Result<f64, PhysicsError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(PhysicsError::AlphaDomain { alpha });
    }
    let eps = 1e-12;
    if !((-eps..=std::f64::consts::PI + eps).contains(&x) && (-eps..=1.0 + eps).contains(&t)) {
        return Err(PhysicsError::OutsideDomain { x, t });
    }
    let t = t.max(0.0);
    let g = 6.0 / gamma_fn(4.0 - alpha)?;
    Ok(g * t.powf(3.0 - alpha) * x.sin() + t.powi(3) * x.sin())
}

/// d/dalpha of the forcing above; the Gamma dependence is finite-differenced.
fn dforcing_dalpha(x: f64, t: f64, alpha: f64) -> Result<f64, PhysicsError> {
    if t <= 0.0 {
        return Ok(0.0);
    }
    let dinvg = -dgamma_inv(4.0 - alpha)?;
    let invg = 1.0 / gamma_fn(4.0 - alpha)?;
    Ok(6.0 * x.sin() * t.powf(3.0 - alpha) * (dinvg - invg * t.ln()))
}

/// Burgers residual `u_t - nu u_xx + u u_x` at one point.
pub fn residual_burgers(
    field: &impl Field2,
    point: (f64, f64),
    nu: f64,
) -> Result<f64, PhysicsError> {
    let (x, t) = point;
    let jx = field.jet_x(x, t)?;
    let jt = field.jet_t(x, t)?;
    let r = jt.d1 - nu * jx.d2 + jx.value * jx.d1;
    if !r.is_finite() {
        return Err(PhysicsError::NonFinite("burgers residual"));
    }
    Ok(r)
}

/// Time-fractional residual `D_t^alpha u - u_xx - f` at one point, with the
/// Caputo term discretized on a uniform history grid of step ~`history_dt`.
pub fn residual_tfmdwe(
    field: &impl Field2,
    point: (f64, f64),
    alpha: f64,
    history_dt: f64,
) -> Result<f64, PhysicsError> {
    let (x, t) = point;
    if t <= 0.0 {
        return Err(PhysicsError::OutsideDomain { x, t });
    }
    if !(history_dt > 0.0) {
        return Err(PhysicsError::InvalidStep { dt: history_dt });
    }
    let n = ((t / history_dt).round() as usize).max(1);
    let dt = t / n as f64;
    let mut vals = Vec::with_capacity(n + 1);
    for j in 0..=n {
        vals.push(field.value(x, j as f64 * dt)?);
    }
    let cap = caputo_l1(&vals, alpha, dt)?;
    let uxx = field.jet_x(x, t)?.d2;
    let r = cap - uxx - forcing_tfmdwe(x, t, alpha)?;
    if !r.is_finite() {
        return Err(PhysicsError::NonFinite("tfmdwe residual"));
    }
    Ok(r)
}

/// Weighted sum `w_data L_data + w_pde L_pde + w_bc L_bc`.
pub fn composite_loss(obj: &ObjectiveVector, w: &LossWeights) -> f64 {
    w.w_data * obj.l_data + w.w_pde * obj.l_pde + w.w_bc * obj.l_bc
}

/// Mini-batch sizes (0 = full) and the seed of the subsampling stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchSpec {
    pub n_data: usize,
    pub n_interior: usize,
    pub n_boundary: usize,
    pub n_initial: usize,
    pub seed: u64,
}

fn subsample<T: Copy>(items: &[T], n: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    if n == 0 || n >= items.len() {
        return items.to_vec();
    }
    let mut idx: Vec<usize> = (0..items.len()).collect();
    for i in 0..n {
        let j = rng.gen_range(i..idx.len());
        idx.swap(i, j);
    }
    idx[..n].iter().map(|&i| items[i]).collect()
}

/// Observation view used by the data loss.
#[derive(Debug, Clone, Copy)]
pub struct DataBatch<'a> {
    pub points: &'a [(f64, f64)],
    pub labels: &'a [f64],
}

struct Resolved {
    data_points: Vec<(f64, f64)>,
    data_labels: Vec<f64>,
    interior: Vec<(f64, f64)>,
    boundary: Vec<(f64, f64)>,
    initial: Vec<f64>,
}

fn resolve_batches(
    data: DataBatch<'_>,
    colloc: &CollocationSet,
    batch: Option<&BatchSpec>,
) -> Resolved {
    match batch {
        None => Resolved {
            data_points: data.points.to_vec(),
            data_labels: data.labels.to_vec(),
            interior: colloc.interior.clone(),
            boundary: colloc.boundary.clone(),
            initial: colloc.initial.clone(),
        },
        Some(b) => {
            let paired: Vec<((f64, f64), f64)> = data
                .points
                .iter()
                .copied()
                .zip(data.labels.iter().copied())
                .collect();
            let mut rng = rngutil::rng_for(b.seed, &[0xda7a]);
            let pts = subsample(&paired, b.n_data, &mut rng);
            let mut rng = rngutil::rng_for(b.seed, &[0x1470]);
            let interior = subsample(&colloc.interior, b.n_interior, &mut rng);
            let mut rng = rngutil::rng_for(b.seed, &[0xb0]);
            let boundary = subsample(&colloc.boundary, b.n_boundary, &mut rng);
            let mut rng = rngutil::rng_for(b.seed, &[0x1c]);
            let initial = subsample(&colloc.initial, b.n_initial, &mut rng);
            Resolved {
                data_points: pts.iter().map(|p| p.0).collect(),
                data_labels: pts.iter().map(|p| p.1).collect(),
                interior,
                boundary,
                initial,
            }
        }
    }
}

fn points_matrix(points: &[(f64, f64)]) -> Array2<f64> {
    let flat: Vec<f64> = points.iter().flat_map(|&(x, t)| [x, t]).collect();
    Array2::from_shape_vec((points.len(), 2), flat).expect("pair rows")
}

/// Extra bookkeeping for the fractional-order gradient: the residual node,
/// the stacked history node, its segments, and the alpha-derivatives of the
/// Caputo weights and the forcing.
struct AlphaAux {
    residual: NodeId,
    history: NodeId,
    segs: Vec<(usize, usize)>,
    dweights: Vec<f64>,
    dforcing: Vec<f64>,
}

struct Parts {
    data: Option<NodeId>,
    pde: Option<NodeId>,
    bc: Option<NodeId>,
    alpha_aux: Option<AlphaAux>,
}

#[derive(Clone, Copy)]
struct Need {
    data: bool,
    pde: bool,
    bc: bool,
}

fn mean_sq_mismatch(
    g: &mut Graph,
    model: &OperatorModel,
    kappa: &[f64],
    points: &[(f64, f64)],
    labels: Option<&[f64]>,
) -> Result<NodeId, PhysicsError> {
    let out = model.forward_graph(g, kappa, points_matrix(points), None, None)?;
    let err = match labels {
        Some(l) => {
            let lab = g
                .constant(Array2::from_shape_vec((l.len(), 1), l.to_vec()).expect("label column"))?;
            g.sub(out, lab)?
        }
        None => out,
    };
    let sq = g.mul(err, err)?;
    Ok(g.mean_all(sq)?)
}

fn build_parts(
    model: &OperatorModel,
    g: &mut Graph,
    kappa: &[f64],
    r: &Resolved,
    colloc: &CollocationSet,
    problem: &Problem,
    need: Need,
) -> Result<Parts, PhysicsError> {
    let mut parts = Parts { data: None, pde: None, bc: None, alpha_aux: None };

    if need.data {
        if r.data_points.is_empty() {
            return Err(PhysicsError::EmptySet("observation"));
        }
        parts.data =
            Some(mean_sq_mismatch(g, model, kappa, &r.data_points, Some(&r.data_labels))?);
    }

    if need.bc {
        if r.boundary.is_empty() || r.initial.is_empty() {
            return Err(PhysicsError::EmptySet("boundary/initial"));
        }
        let m_bound = mean_sq_mismatch(g, model, kappa, &r.boundary, None)?;
        let init_pts: Vec<(f64, f64)> = r.initial.iter().map(|&x| (x, 0.0)).collect();
        let init_labels: Vec<f64> = r.initial.iter().map(|&x| problem.initial_value(x)).collect();
        let m_init = mean_sq_mismatch(g, model, kappa, &init_pts, Some(&init_labels))?;
        parts.bc = Some(g.add(m_init, m_bound)?);
    }

    if need.pde {
        if r.interior.is_empty() {
            return Err(PhysicsError::EmptySet("interior collocation"));
        }
        let b = r.interior.len();
        match problem {
            Problem::Burgers { nu } => {
                let out =
                    model.forward_graph(g, kappa, points_matrix(&r.interior), Some(0), Some(1))?;
                let uv = g.chan(out, Chan::V)?;
                let ux = g.chan(out, Chan::Dx1)?;
                let uxx = g.chan(out, Chan::Dx2)?;
                let ut = g.chan(out, Chan::Dt1)?;
                let nu_node = match model.params.layout().inverse_slot() {
                    Some(slot) => g.param_matrix(slot, 1, 1)?,
                    None => g.scalar(*nu)?,
                };
                let nub = g.bcast_rows(nu_node, b)?;
                let visc = g.mul(nub, uxx)?;
                let adv = g.mul(uv, ux)?;
                let lhs = g.sub(ut, visc)?;
                let res = g.add(lhs, adv)?;
                let sq = g.mul(res, res)?;
                parts.pde = Some(g.mean_all(sq)?);
            }
            Problem::Tfmdwe { alpha } => {
                let slot = model.params.layout().inverse_slot();
                let alpha_eff = match slot {
                    Some(s) => model.params.values()[s].clamp(0.02, 0.98),
                    None => *alpha,
                };
                let n = colloc.history_divisions;
                let mut hist_pts = Vec::with_capacity(b * (n + 1));
                let mut segs = Vec::with_capacity(b);
                let mut weights = Vec::with_capacity(b * (n + 1));
                let mut dweights = Vec::with_capacity(b * (n + 1));
                for &(x, t) in &r.interior {
                    let dt = t / n as f64;
                    segs.push((hist_pts.len(), n + 1));
                    for j in 0..=n {
                        hist_pts.push((x, j as f64 * dt));
                    }
                    weights.extend(caputo_weights(n, alpha_eff, dt)?);
                    if slot.is_some() {
                        dweights.extend(caputo_weights_dalpha(n, alpha_eff, dt)?);
                    }
                }
                let hist = model.forward_graph(g, kappa, points_matrix(&hist_pts), None, None)?;
                let cap = g.seg_sum(hist, segs.clone(), weights)?;
                let out =
                    model.forward_graph(g, kappa, points_matrix(&r.interior), Some(0), None)?;
                let uxx = g.chan(out, Chan::Dx2)?;
                let mut fvals = Vec::with_capacity(b);
                let mut dforc = Vec::with_capacity(b);
                for &(x, t) in &r.interior {
                    fvals.push(forcing_tfmdwe(x, t, alpha_eff)?);
                    if slot.is_some() {
                        dforc.push(dforcing_dalpha(x, t, alpha_eff)?);
                    }
                }
                let f_node =
                    g.constant(Array2::from_shape_vec((b, 1), fvals).expect("forcing column"))?;
                let lhs = g.sub(cap, uxx)?;
                let res = g.sub(lhs, f_node)?;
                let sq = g.mul(res, res)?;
                parts.pde = Some(g.mean_all(sq)?);
                if slot.is_some() {
                    parts.alpha_aux = Some(AlphaAux {
                        residual: res,
                        history: hist,
                        segs,
                        dweights,
                        dforcing: dforc,
                    });
                }
            }
        }
    }

    Ok(parts)
}

/// Mean squared data mismatch `(1/(N_data N)) sum |G(kappa)(x) - u_hat|^2`.
pub fn data_loss(
    model: &OperatorModel,
    kappa: &[f64],
    data: DataBatch<'_>,
) -> Result<f64, PhysicsError> {
    if data.points.is_empty() {
        return Err(PhysicsError::EmptySet("observation"));
    }
    let mut g = Graph::new(&model.params);
    let node = mean_sq_mismatch(&mut g, model, kappa, data.points, Some(data.labels))?;
    Ok(g.value(node)[(0, 0)])
}

/// Initial plus boundary mean squared mismatch (sum of the two means).
pub fn ibc_loss(
    model: &OperatorModel,
    kappa: &[f64],
    boundary: &[(f64, f64)],
    initial: &[f64],
    problem: &Problem,
) -> Result<f64, PhysicsError> {
    if boundary.is_empty() || initial.is_empty() {
        return Err(PhysicsError::EmptySet("boundary/initial"));
    }
    let mut g = Graph::new(&model.params);
    let m_bound = mean_sq_mismatch(&mut g, model, kappa, boundary, None)?;
    let init_pts: Vec<(f64, f64)> = initial.iter().map(|&x| (x, 0.0)).collect();
    let init_labels: Vec<f64> = initial.iter().map(|&x| problem.initial_value(x)).collect();
    let m_init = mean_sq_mismatch(&mut g, model, kappa, &init_pts, Some(&init_labels))?;
    let node = g.add(m_init, m_bound)?;
    Ok(g.value(node)[(0, 0)])
}

/// Full objective vector `(L_data, L_pde, L_bc)`; a `batch` draws seeded
/// subsets of all point sets.
pub fn objective_vector(
    model: &OperatorModel,
    kappa: &[f64],
    data: DataBatch<'_>,
    colloc: &CollocationSet,
    problem: &Problem,
    batch: Option<&BatchSpec>,
) -> Result<ObjectiveVector, PhysicsError> {
    let r = resolve_batches(data, colloc, batch);
    let mut g = Graph::new(&model.params);
    let parts = build_parts(
        model,
        &mut g,
        kappa,
        &r,
        colloc,
        problem,
        Need { data: true, pde: true, bc: true },
    )?;
    let read = |n: Option<NodeId>| n.map(|id| g.value(id)[(0, 0)]).unwrap_or(f64::NAN);
    let obj =
        ObjectiveVector { l_data: read(parts.data), l_pde: read(parts.pde), l_bc: read(parts.bc) };
    if !obj.is_finite() {
        return Err(PhysicsError::NonFinite("objective vector"));
    }
    Ok(obj)
}

/// Value and parameter gradient of the weighted composite loss. Components
/// with zero weight are never evaluated (a data-only configuration never
/// touches the residual machinery).
pub fn grad_composite(
    model: &OperatorModel,
    kappa: &[f64],
    data: DataBatch<'_>,
    colloc: &CollocationSet,
    problem: &Problem,
    weights: &LossWeights,
    batch: Option<&BatchSpec>,
) -> Result<(f64, Vec<f64>), PhysicsError> {
    weights.validate()?;
    let r = resolve_batches(data, colloc, batch);
    let mut g = Graph::new(&model.params);
    let need =
        Need { data: weights.w_data > 0.0, pde: weights.w_pde > 0.0, bc: weights.w_bc > 0.0 };
    let parts = build_parts(model, &mut g, kappa, &r, colloc, problem, need)?;

    let mut total: Option<NodeId> = None;
    for (node, w) in
        [(parts.data, weights.w_data), (parts.pde, weights.w_pde), (parts.bc, weights.w_bc)]
    {
        if let Some(id) = node {
            let scaled = g.scale(id, w)?;
            total = Some(match total {
                Some(t) => g.add(t, scaled)?,
                None => scaled,
            });
        }
    }
    let total = total.expect("weights validated non-zero");
    let value = g.value(total)[(0, 0)];
    let mut grad = g.backward(total)?;

    // Fractional-order gradient: the Caputo weights and forcing depend on
    // alpha outside the tape; assemble d l_pde / d alpha by hand.
    if let (Some(aux), Some(slot)) = (&parts.alpha_aux, model.params.layout().inverse_slot()) {
        let res = g.value(aux.residual);
        let hist = g.value(aux.history);
        let b = aux.segs.len() as f64;
        let mut acc = 0.0;
        for (i, &(o, l)) in aux.segs.iter().enumerate() {
            let mut dcap = 0.0;
            for j in o..o + l {
                dcap += aux.dweights[j] * hist[(j, 0)];
            }
            acc += 2.0 * res[(i, 0)] * (dcap - aux.dforcing[i]);
        }
        grad[slot] += weights.w_pde * acc / b;
    }
    Ok((value, grad))
}

#[cfg(test)]
mod tests;
