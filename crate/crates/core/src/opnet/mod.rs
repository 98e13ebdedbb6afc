//! Branch/trunk operator network with inner-product combination and an
//! optional spectral mixing layer over the latent index.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint};

use std::sync::Arc;

use ndarray::Array2;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffkit::{Chan, DiffError, Graph, Layout, NodeId, ParamVector, Segment};
use crate::rngutil;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid operator spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

/// Model family; DON trains on data only, the PI variants add residual
/// objectives, and the Fourier variants mix the latent spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Don,
    PiDon,
    PiFdon,
    Morephy,
}

impl Variant {
    pub fn uses_fourier(self) -> bool {
        matches!(self, Variant::PiFdon | Variant::Morephy)
    }

    pub fn uses_physics(self) -> bool {
        !matches!(self, Variant::Don)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Don => "don",
            Variant::PiDon => "pi-don",
            Variant::PiFdon => "pi-fdon",
            Variant::Morephy => "morephy",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "don" => Ok(Variant::Don),
            "pi-don" => Ok(Variant::PiDon),
            "pi-fdon" => Ok(Variant::PiFdon),
            "morephy" => Ok(Variant::Morephy),
            other => Err(format!("unknown variant `{other}`")),
        }
    }
}

/// Prior interval for the trainable scalar of inverse problems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseSpec {
    pub prior_lo: f64,
    pub prior_hi: f64,
}

/// Architecture description: layer widths, latent size and head options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    /// Widths from the sensor count m down to the latent size p.
    pub branch_layers: Vec<usize>,
    /// Widths from the coordinate dimension d down to p.
    pub trunk_layers: Vec<usize>,
    pub latent_p: usize,
    pub use_fourier: bool,
    pub fourier_modes: usize,
    pub variant: Variant,
    pub inverse: Option<InverseSpec>,
}

impl OperatorSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::InvalidSpec(m));
        if self.branch_layers.len() < 2 || self.trunk_layers.len() < 2 {
            return err("branch and trunk need at least input and output widths".into());
        }
        if self.branch_layers.iter().any(|&w| w == 0) || self.trunk_layers.iter().any(|&w| w == 0) {
            return err("layer widths must be positive".into());
        }
        if *self.branch_layers.last().unwrap() != self.latent_p {
            return err(format!(
                "branch terminal width {} != latent p {}",
                self.branch_layers.last().unwrap(),
                self.latent_p
            ));
        }
        if *self.trunk_layers.last().unwrap() != self.latent_p {
            return err(format!(
                "trunk terminal width {} != latent p {}",
                self.trunk_layers.last().unwrap(),
                self.latent_p
            ));
        }
        if self.use_fourier && (self.fourier_modes == 0 || self.fourier_modes > self.latent_p) {
            return err(format!(
                "fourier modes {} must lie in 1..=p ({})",
                self.fourier_modes, self.latent_p
            ));
        }
        if let Some(inv) = &self.inverse {
            if !(inv.prior_lo < inv.prior_hi) {
                return err("inverse prior interval must be non-empty".into());
            }
        }
        Ok(())
    }

    pub fn sensor_count(&self) -> usize {
        self.branch_layers[0]
    }

    pub fn coord_dim(&self) -> usize {
        self.trunk_layers[0]
    }

    /// Deterministic segment map for this architecture.
    pub fn layout(&self) -> Result<Arc<Layout>, ModelError> {
        self.validate()?;
        let mut segs = Vec::new();
        let mut off = 0usize;
        let push = |segs: &mut Vec<Segment>, name: String, len: usize, std: f64, off: &mut usize| {
            segs.push(Segment { name, offset: *off, len, init_std: std });
            *off += len;
        };
        for (prefix, layers) in [("branch", &self.branch_layers), ("trunk", &self.trunk_layers)] {
            for i in 0..layers.len() - 1 {
                let (cols, rows) = (layers[i], layers[i + 1]);
                let std = 1.0 / (cols as f64).sqrt();
                push(&mut segs, format!("{prefix}{i}.w"), rows * cols, std, &mut off);
                push(&mut segs, format!("{prefix}{i}.b"), rows, std, &mut off);
            }
        }
        push(&mut segs, "b0".into(), 1, 1.0, &mut off);
        if self.use_fourier {
            let k = self.fourier_modes;
            let std = 1.0 / (self.latent_p as f64).sqrt();
            push(&mut segs, "fourier.gamma".into(), k, std, &mut off);
            push(&mut segs, "fourier.delta".into(), k, std, &mut off);
            push(&mut segs, "fourier.skip".into(), 1, 1.0, &mut off);
        }
        let mut inverse_slot = None;
        if let Some(inv) = &self.inverse {
            inverse_slot = Some(off);
            push(&mut segs, "inverse".into(), 1, inv.prior_hi - inv.prior_lo, &mut off);
        }
        Layout::new(segs, inverse_slot).map_err(ModelError::from).map(Arc::new)
    }
}

/// Fixed sensor locations where the input function is sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorGrid {
    locations: Vec<f64>,
}

impl SensorGrid {
    pub fn new(locations: Vec<f64>, lo: f64, hi: f64) -> Result<Self, ModelError> {
        if locations.is_empty() {
            return Err(ModelError::InvalidSpec("empty sensor grid".into()));
        }
        if locations.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ModelError::InvalidSpec("sensors must be strictly increasing".into()));
        }
        if locations[0] < lo || *locations.last().unwrap() > hi {
            return Err(ModelError::InvalidSpec("sensors outside domain".into()));
        }
        Ok(SensorGrid { locations })
    }

    pub fn uniform(m: usize, lo: f64, hi: f64) -> Self {
        let locations = (0..m)
            .map(|i| lo + (hi - lo) * i as f64 / (m.max(2) - 1) as f64)
            .collect();
        SensorGrid { locations }
    }

    pub fn locations(&self) -> &[f64] {
        &self.locations
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }
}

/// Architecture plus its trained parameter vector.
#[derive(Debug, Clone)]
pub struct OperatorModel {
    pub spec: OperatorSpec,
    pub params: ParamVector,
    pub seed: u64,
}

/// He-style initialization: weights at scale 1/sqrt(fan_in), hidden biases at
/// a tenth of that so distinct seeds diverge everywhere, output bias zero,
/// spectral weights zero with unit skip (the head starts as the identity).
pub fn init_model(spec: &OperatorSpec, seed: u64) -> Result<OperatorModel, ModelError> {
    let layout = spec.layout()?;
    let mut values = vec![0.0; layout.total()];
    let mut rng = rngutil::rng_for(seed, &[0x696e69]);
    for seg in layout.segments() {
        let vals = &mut values[seg.offset..seg.offset + seg.len];
        match seg.name.as_str() {
            "b0" | "fourier.gamma" | "fourier.delta" => { /* zero */ }
            "fourier.skip" => vals[0] = 1.0,
            "inverse" => {
                let inv = spec.inverse.as_ref().expect("layout has slot only with spec");
                vals[0] = 0.5 * (inv.prior_lo + inv.prior_hi);
            }
            name if name.ends_with(".b") => {
                let n = Normal::new(0.0, seg.init_std * 0.1).expect("positive std");
                for v in vals.iter_mut() {
                    *v = n.sample(&mut rng);
                }
            }
            _ => {
                let n = Normal::new(0.0, seg.init_std).expect("positive std");
                for v in vals.iter_mut() {
                    *v = n.sample(&mut rng);
                }
            }
        }
    }
    let params = ParamVector::new(values, layout)?;
    Ok(OperatorModel { spec: spec.clone(), params, seed })
}

/// Inner-product combination: `sum_k b_k t_k + b0`.
pub fn combine(branch_out: &[f64], trunk_out: &[f64], b0: f64) -> Result<f64, ModelError> {
    if branch_out.len() != trunk_out.len() {
        return Err(ModelError::Dimension(format!(
            "branch {} vs trunk {}",
            branch_out.len(),
            trunk_out.len()
        )));
    }
    Ok(branch_out.iter().zip(trunk_out).map(|(b, t)| b * t).sum::<f64>() + b0)
}

/// Elementwise products `b_k * t_k(x)` prior to head reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector(pub Vec<f64>);

/// Trainable weights of the spectral head.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierMix {
    pub gamma: Vec<f64>,
    pub delta: Vec<f64>,
    pub skip: f64,
    pub b0: f64,
}

/// Projects the latent products onto the first K discrete-Fourier basis
/// vectors over the latent index, reweights each cosine/sine coefficient,
/// and adds a trainable skip of the plain inner-product sum:
///
/// `out = skip * sum_k l_k + sum_c (gamma_c A_c + delta_c B_c) + b0`
///
/// with `A_c = sum_k l_k cos(2 pi c k / p)`, `B_c = sum_k l_k sin(2 pi c k / p)`.
/// All spectral weights zero with unit skip reduces exactly to [`combine`].
pub fn fourier_mix(latent: &LatentVector, mix: &FourierMix) -> Result<f64, ModelError> {
    let p = latent.0.len();
    let k = mix.gamma.len();
    if mix.delta.len() != k {
        return Err(ModelError::Dimension("gamma/delta length mismatch".into()));
    }
    if k > p {
        return Err(ModelError::Dimension(format!("modes {k} > latent {p}")));
    }
    let s: f64 = latent.0.iter().sum();
    let mut out = mix.skip * s + mix.b0;
    for c in 0..k {
        let (mut a, mut b) = (0.0, 0.0);
        for (idx, &l) in latent.0.iter().enumerate() {
            let ang = 2.0 * std::f64::consts::PI * (c * idx) as f64 / p as f64;
            a += l * ang.cos();
            b += l * ang.sin();
        }
        out += mix.gamma[c] * a + mix.delta[c] * b;
    }
    Ok(out)
}

impl OperatorModel {
    /// Sequential affine/tanh stack over layout segments named by `prefix`.
    fn mlp(
        &self,
        g: &mut Graph,
        mut h: NodeId,
        prefix: &str,
        layers: &[usize],
        batch: usize,
    ) -> Result<NodeId, DiffError> {
        let layout = self.params.layout().clone();
        for i in 0..layers.len() - 1 {
            let (cols, rows) = (layers[i], layers[i + 1]);
            let w_seg = layout.segment(&format!("{prefix}{i}.w")).expect("layout segment");
            let b_seg = layout.segment(&format!("{prefix}{i}.b")).expect("layout segment");
            let w = g.param_matrix(w_seg.offset, rows, cols)?;
            let b = g.param_matrix(b_seg.offset, 1, rows)?;
            let z = g.matmul_t(h, w)?;
            let bb = g.bcast_rows(b, batch)?;
            let z = g.add(z, bb)?;
            h = if i + 2 == layers.len() { z } else { g.tanh(z)? };
        }
        Ok(h)
    }

    /// Full forward pass on a bound tape: branch, trunk over the query batch,
    /// latent products and head. Returns the `[B x 1]` prediction node,
    /// carrying jet channels when `seed_x`/`seed_t` name query columns.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        kappa: &[f64],
        queries: Array2<f64>,
        seed_x: Option<usize>,
        seed_t: Option<usize>,
    ) -> Result<NodeId, DiffError> {
        let m = self.spec.sensor_count();
        if kappa.len() != m {
            return Err(DiffError::Shape {
                op: "forward",
                detail: format!("kappa has {} entries, branch expects {m}", kappa.len()),
            });
        }
        if queries.ncols() != self.spec.coord_dim() {
            return Err(DiffError::Shape {
                op: "forward",
                detail: format!(
                    "query dim {} vs trunk input {}",
                    queries.ncols(),
                    self.spec.coord_dim()
                ),
            });
        }
        let batch = queries.nrows();
        let layout = self.params.layout().clone();

        let kap = g.constant(Array2::from_shape_vec((1, m), kappa.to_vec()).expect("kappa shape"))?;
        let branch = self.mlp(g, kap, "branch", &self.spec.branch_layers, 1)?;
        let q = g.input(queries, seed_x, seed_t)?;
        let trunk = self.mlp(g, q, "trunk", &self.spec.trunk_layers, batch)?;
        let bb = g.bcast_rows(branch, batch)?;
        let latent = g.mul(bb, trunk)?;

        let b0_seg = layout.segment("b0").expect("b0 segment");
        let b0 = g.param_matrix(b0_seg.offset, 1, 1)?;
        let b0b = g.bcast_rows(b0, batch)?;

        if self.spec.use_fourier {
            let p = self.spec.latent_p;
            let k = self.spec.fourier_modes;
            let mut cosb = Array2::zeros((k, p));
            let mut sinb = Array2::zeros((k, p));
            for c in 0..k {
                for idx in 0..p {
                    let ang = 2.0 * std::f64::consts::PI * (c * idx) as f64 / p as f64;
                    cosb[(c, idx)] = ang.cos();
                    sinb[(c, idx)] = ang.sin();
                }
            }
            let cosn = g.constant(cosb)?;
            let sinn = g.constant(sinb)?;
            let a = g.matmul_t(latent, cosn)?; // [B x K]
            let b = g.matmul_t(latent, sinn)?;
            let gseg = layout.segment("fourier.gamma").expect("segment");
            let dseg = layout.segment("fourier.delta").expect("segment");
            let sseg = layout.segment("fourier.skip").expect("segment");
            let gamma = g.param_matrix(gseg.offset, 1, k)?;
            let delta = g.param_matrix(dseg.offset, 1, k)?;
            let skip = g.param_matrix(sseg.offset, 1, 1)?;
            let gb = g.bcast_rows(gamma, batch)?;
            let db = g.bcast_rows(delta, batch)?;
            let ag = g.mul(a, gb)?;
            let bd = g.mul(b, db)?;
            let spec_sum = g.add(ag, bd)?;
            let spec_scalar = g.sum_cols(spec_sum)?; // [B x 1]
            let plain = g.sum_cols(latent)?;
            let skipb = g.bcast_rows(skip, batch)?;
            let skipped = g.mul(plain, skipb)?;
            let head = g.add(skipped, spec_scalar)?;
            g.add(head, b0b)
        } else {
            let plain = g.sum_cols(latent)?;
            g.add(plain, b0b)
        }
    }

    /// Pointwise prediction at one query coordinate.
    pub fn predict(&self, kappa: &[f64], query: &[f64]) -> Result<f64, ModelError> {
        let q = Array2::from_shape_vec((1, query.len()), query.to_vec())
            .map_err(|e| ModelError::Dimension(e.to_string()))?;
        let mut g = Graph::new(&self.params);
        let out = self.forward_graph(&mut g, kappa, q, None, None)?;
        Ok(g.value(out)[(0, 0)])
    }

    /// Elementwise, order-preserving batched prediction.
    pub fn predict_grid(&self, kappa: &[f64], grid: &[Vec<f64>]) -> Result<Vec<f64>, ModelError> {
        if grid.is_empty() {
            return Ok(Vec::new());
        }
        let d = self.spec.coord_dim();
        if grid.iter().any(|q| q.len() != d) {
            return Err(ModelError::Dimension("query dimension mismatch in grid".into()));
        }
        let flat: Vec<f64> = grid.iter().flatten().copied().collect();
        let q = Array2::from_shape_vec((grid.len(), d), flat)
            .map_err(|e| ModelError::Dimension(e.to_string()))?;
        let mut g = Graph::new(&self.params);
        let out = self.forward_graph(&mut g, kappa, q, None, None)?;
        Ok(g.value(out).column(0).to_vec())
    }

    /// Prediction with jet channels: `(u, u_x, u_xx, u_t)` columns for a
    /// query batch, where `x_col`/`t_col` name coordinates inside the query.
    pub fn predict_jets(
        &self,
        kappa: &[f64],
        queries: Array2<f64>,
        x_col: usize,
        t_col: Option<usize>,
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Option<Vec<f64>>), ModelError> {
        let mut g = Graph::new(&self.params);
        let out = self.forward_graph(&mut g, kappa, queries, Some(x_col), t_col)?;
        let v = g.value(out).column(0).to_vec();
        let dx1 = g
            .channel(out, Chan::Dx1)
            .ok_or(DiffError::MissingChannel { op: "predict_jets" })?
            .column(0)
            .to_vec();
        let dx2 = g
            .channel(out, Chan::Dx2)
            .ok_or(DiffError::MissingChannel { op: "predict_jets" })?
            .column(0)
            .to_vec();
        let dt1 = match t_col {
            Some(_) => Some(
                g.channel(out, Chan::Dt1)
                    .ok_or(DiffError::MissingChannel { op: "predict_jets" })?
                    .column(0)
                    .to_vec(),
            ),
            None => None,
        };
        Ok((v, dx1, dx2, dt1))
    }

    /// Current value of the trainable inverse-problem scalar, if any.
    pub fn inverse_value(&self) -> Option<f64> {
        self.params.inverse_value()
    }

    /// Same architecture, different parameter vector.
    pub fn with_params(&self, params: ParamVector) -> OperatorModel {
        OperatorModel { spec: self.spec.clone(), params, seed: self.seed }
    }
}

/// Elementwise branch/trunk products at a single query, before head reduction.
pub fn latent_products(
    model: &OperatorModel,
    kappa: &[f64],
    query: &[f64],
) -> Result<LatentVector, ModelError> {
    let m = model.spec.sensor_count();
    if kappa.len() != m {
        return Err(ModelError::Dimension(format!("kappa {} vs sensors {m}", kappa.len())));
    }
    let q = Array2::from_shape_vec((1, query.len()), query.to_vec())
        .map_err(|e| ModelError::Dimension(e.to_string()))?;
    let mut g = Graph::new(&model.params);
    let kap = g.constant(Array2::from_shape_vec((1, m), kappa.to_vec()).expect("kappa shape"))?;
    let branch = model.mlp(&mut g, kap, "branch", &model.spec.branch_layers, 1)?;
    let qn = g.input(q, None, None)?;
    let trunk = model.mlp(&mut g, qn, "trunk", &model.spec.trunk_layers, 1)?;
    let latent = g.mul(branch, trunk)?;
    Ok(LatentVector(g.value(latent).row(0).to_vec()))
}
