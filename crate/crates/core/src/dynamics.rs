//! Physics-driven acceleration modeling.
//!
//! Joint accelerations come from two routes: second-order finite differences
//! of the positions (pseudo-acceleration), and a learned rigid-body inverse
//! dynamics S'' = M_hat * tau_hat - C_hat * v - g_hat whose terms are
//! estimated by MLPs over global/local position and velocity features, with
//! the matrix-valued terms built symmetric from packed upper-triangular
//! outputs. A per-frame cross-attention head fuses the two routes.

use crate::error::{Error, Result};
use crate::nn::{concat, Lifter, Linear, LinearVars, Mlp, MlpVars, ParamVisit, Tape, Tensor, Var};
use crate::rng::Rng;
use crate::skeleton::{SkeletonSequence, NUM_JOINTS, STATE_DIM};

/// First-order finite-difference velocity with unit frame spacing: central
/// differences in the interior, one-sided at the endpoints. Exact for
/// trajectories linear in t.
pub fn velocity(seq: &SkeletonSequence) -> Result<Tensor> {
    let pos = fully_valid_flat(seq)?;
    Ok(velocity_flat(&pos).reshaped(&[seq.len(), NUM_JOINTS, 2]))
}

/// Second-order finite-difference acceleration with unit frame spacing:
/// central differences in the interior, endpoints copying the nearest
/// interior value. Exact for trajectories quadratic in t (interior frames).
pub fn pseudo_acceleration(seq: &SkeletonSequence) -> Result<Tensor> {
    let pos = fully_valid_flat(seq)?;
    Ok(pseudo_acceleration_flat(&pos).reshaped(&[seq.len(), NUM_JOINTS, 2]))
}

fn fully_valid_flat(seq: &SkeletonSequence) -> Result<Tensor> {
    if !seq.fully_valid_mask() {
        return Err(Error::InvalidInput(format!(
            "finite differences need a fully valid sequence, `{}` has holes",
            seq.id
        )));
    }
    Ok(seq.to_flat_tensor())
}

/// Velocity on a flat [T, n] state sequence.
pub fn velocity_flat(pos: &Tensor) -> Tensor {
    let (t, n) = (pos.shape()[0], pos.shape()[1]);
    assert!(t >= 3, "need at least 3 frames");
    let p = pos.data();
    let mut out = vec![0.0; t * n];
    for j in 0..n {
        out[j] = p[n + j] - p[j];
        out[(t - 1) * n + j] = p[(t - 1) * n + j] - p[(t - 2) * n + j];
    }
    for i in 1..t - 1 {
        for j in 0..n {
            out[i * n + j] = (p[(i + 1) * n + j] - p[(i - 1) * n + j]) / 2.0;
        }
    }
    Tensor::new(&[t, n], out)
}

/// Pseudo-acceleration on a flat [T, n] state sequence.
pub fn pseudo_acceleration_flat(pos: &Tensor) -> Tensor {
    let (t, n) = (pos.shape()[0], pos.shape()[1]);
    assert!(t >= 3, "need at least 3 frames");
    let p = pos.data();
    let mut out = vec![0.0; t * n];
    for i in 1..t - 1 {
        for j in 0..n {
            out[i * n + j] = p[(i + 1) * n + j] - 2.0 * p[i * n + j] + p[(i - 1) * n + j];
        }
    }
    for j in 0..n {
        out[j] = out[n + j];
        out[(t - 1) * n + j] = out[(t - 2) * n + j];
    }
    Tensor::new(&[t, n], out)
}

/// Expands a packed upper-triangular vector (row-major) into the full
/// symmetric n x n matrix. The mirrored entries are copies, so the output
/// satisfies M == M^T bitwise.
pub fn symmetrize(upper: &[f64]) -> Result<Tensor> {
    let len = upper.len();
    let n = triangular_root(len).ok_or_else(|| {
        Error::shape("a triangular number of entries", format!("{len} entries"))
    })?;
    let mut out = vec![0.0; n * n];
    let mut u = 0;
    for i in 0..n {
        for j in i..n {
            out[i * n + j] = upper[u];
            out[j * n + i] = upper[u];
            u += 1;
        }
    }
    Ok(Tensor::new(&[n, n], out))
}

/// Packs the upper triangle of a square matrix row-major.
pub fn extract_upper(m: &Tensor) -> Vec<f64> {
    let n = m.shape()[0];
    assert_eq!(m.shape(), &[n, n]);
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            out.push(m.data()[i * n + j]);
        }
    }
    out
}

fn triangular_root(len: usize) -> Option<usize> {
    let n = ((((8 * len + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    (n * (n + 1) / 2 == len).then_some(n)
}

#[derive(Clone, Copy, Debug)]
pub struct DynamicsConfig {
    /// Flattened state dimension (34 for the 17-joint skeleton).
    pub state_dim: usize,
    /// Width of the global/local features.
    pub feature_dim: usize,
    /// Hidden width of every estimator MLP.
    pub hidden_dim: usize,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            state_dim: STATE_DIM,
            feature_dim: 32,
            hidden_dim: 64,
        }
    }
}

/// The four feature extractors and four term estimators of the learned
/// inverse dynamics.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsModel {
    pub state_dim: usize,
    pub feature_dim: usize,
    /// Global and local position-feature extractors.
    pub f_s_global: Mlp,
    pub f_s_local: Mlp,
    /// Global and local velocity-feature extractors.
    pub f_v_global: Mlp,
    pub f_v_local: Mlp,
    /// Gravity-term estimator: [s_g, s_t] -> n.
    pub e_g: Mlp,
    /// Force estimator: [s_g, v_g] -> n, evaluated once per sequence.
    pub e_tau: Mlp,
    /// Coriolis estimator: [s_g, s_t, v_g, v_t] -> n(n+1)/2, symmetrized.
    pub e_c: Mlp,
    /// Inverse-inertia estimator: [s_g, s_t] -> n(n+1)/2, symmetrized.
    pub e_m: Mlp,
}

impl DynamicsModel {
    pub fn new(cfg: &DynamicsConfig, rng: &mut Rng) -> DynamicsModel {
        let (n, f, h) = (cfg.state_dim, cfg.feature_dim, cfg.hidden_dim);
        let tri = n * (n + 1) / 2;
        DynamicsModel {
            state_dim: n,
            feature_dim: f,
            f_s_global: Mlp::new(&[n, h, h, f], rng),
            f_s_local: Mlp::new(&[n, h, h, f], rng),
            f_v_global: Mlp::new(&[n, h, h, f], rng),
            f_v_local: Mlp::new(&[n, h, h, f], rng),
            e_g: Mlp::new(&[2 * f, h, h, n], rng),
            e_tau: Mlp::new(&[2 * f, h, h, n], rng),
            e_c: Mlp::new(&[4 * f, h, h, tri], rng),
            e_m: Mlp::new(&[2 * f, h, h, tri], rng),
        }
    }

    pub fn zeros(cfg: &DynamicsConfig) -> DynamicsModel {
        let (n, f, h) = (cfg.state_dim, cfg.feature_dim, cfg.hidden_dim);
        let tri = n * (n + 1) / 2;
        DynamicsModel {
            state_dim: n,
            feature_dim: f,
            f_s_global: Mlp::zeros(&[n, h, h, f]),
            f_s_local: Mlp::zeros(&[n, h, h, f]),
            f_v_global: Mlp::zeros(&[n, h, h, f]),
            f_v_local: Mlp::zeros(&[n, h, h, f]),
            e_g: Mlp::zeros(&[2 * f, h, h, n]),
            e_tau: Mlp::zeros(&[2 * f, h, h, n]),
            e_c: Mlp::zeros(&[4 * f, h, h, tri]),
            e_m: Mlp::zeros(&[2 * f, h, h, tri]),
        }
    }

    /// Zeroes the final layer of every estimator so training starts from
    /// S'' = 0: the fused acceleration then begins at the pseudo route and
    /// the physics terms grow from zero, which keeps the spec'd learning
    /// rates stable.
    pub fn zero_output_layers(&mut self) {
        for mlp in [&mut self.e_g, &mut self.e_tau, &mut self.e_c, &mut self.e_m] {
            let last = mlp.layers.last_mut().expect("estimator has layers");
            last.w = Tensor::zeros(last.w.shape());
            last.b = Tensor::zeros(last.b.shape());
        }
    }

    pub fn lift<'t>(&self, l: &mut Lifter<'t>) -> DynamicsVars<'t> {
        DynamicsVars {
            state_dim: self.state_dim,
            f_s_global: self.f_s_global.lift(l),
            f_s_local: self.f_s_local.lift(l),
            f_v_global: self.f_v_global.lift(l),
            f_v_local: self.f_v_local.lift(l),
            e_g: self.e_g.lift(l),
            e_tau: self.e_tau.lift(l),
            e_c: self.e_c.lift(l),
            e_m: self.e_m.lift(l),
        }
    }
}

impl ParamVisit for DynamicsModel {
    fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        self.f_s_global.visit(f);
        self.f_s_local.visit(f);
        self.f_v_global.visit(f);
        self.f_v_local.visit(f);
        self.e_g.visit(f);
        self.e_tau.visit(f);
        self.e_c.visit(f);
        self.e_m.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.f_s_global.visit_mut(f);
        self.f_s_local.visit_mut(f);
        self.f_v_global.visit_mut(f);
        self.f_v_local.visit_mut(f);
        self.e_g.visit_mut(f);
        self.e_tau.visit_mut(f);
        self.e_c.visit_mut(f);
        self.e_m.visit_mut(f);
    }
}

pub struct DynamicsVars<'t> {
    state_dim: usize,
    f_s_global: MlpVars<'t>,
    f_s_local: MlpVars<'t>,
    f_v_global: MlpVars<'t>,
    f_v_local: MlpVars<'t>,
    e_g: MlpVars<'t>,
    e_tau: MlpVars<'t>,
    e_c: MlpVars<'t>,
    e_m: MlpVars<'t>,
}

/// Global and local features of positions and velocities.
pub struct FeatureVars<'t> {
    /// [1, F] global position feature (from the temporal mean frame).
    pub s_global: Var<'t>,
    /// [T, F] per-frame position features.
    pub s_local: Var<'t>,
    /// [1, F] global velocity feature.
    pub v_global: Var<'t>,
    /// [T, F] per-frame velocity features.
    pub v_local: Var<'t>,
}

/// Feature extraction on the tape. `pos` and `vel` are [T, n] variables.
pub fn features_graph<'t>(
    vars: &DynamicsVars<'t>,
    pos: Var<'t>,
    vel: Var<'t>,
) -> FeatureVars<'t> {
    let t = pos.shape()[0];
    let n = pos.shape()[1];
    let pos_mean = pos.mean_axis(0).reshape(&[1, n]);
    let vel_mean = vel.mean_axis(0).reshape(&[1, n]);
    FeatureVars {
        s_global: vars.f_s_global.forward(pos_mean),
        s_local: vars.f_s_local.forward(pos),
        v_global: vars.f_v_global.forward(vel_mean),
        v_local: vars.f_v_local.forward(vel),
    }
    .validate(t)
}

impl<'t> FeatureVars<'t> {
    fn validate(self, t: usize) -> Self {
        debug_assert_eq!(self.s_local.shape()[0], t);
        self
    }
}

pub struct PhysicsOutputs<'t> {
    /// [T, n] estimated acceleration.
    pub accel: Var<'t>,
    /// [1, n] force estimate, evaluated once per sequence.
    pub tau: Var<'t>,
}

/// Learned-dynamics acceleration on the tape for flat [T, n] positions and
/// velocities: S''_t = M_hat_t tau_hat - C_hat_t v_t - g_hat_t, with
/// M_hat/C_hat symmetric and tau_hat time-independent.
pub fn physics_graph<'t>(
    tape: &'t Tape,
    vars: &DynamicsVars<'t>,
    pos: &Tensor,
    vel: &Tensor,
) -> PhysicsOutputs<'t> {
    let (t, n) = (pos.shape()[0], pos.shape()[1]);
    assert_eq!(n, vars.state_dim, "state dim mismatch");
    let pos_v = tape.constant(pos.clone());
    let vel_v = tape.constant(vel.clone());
    let feats = features_graph(vars, pos_v, vel_v);

    let s_g_rep = feats.s_global.repeat_rows(t);
    let v_g_rep = feats.v_global.repeat_rows(t);

    let g = vars.e_g.forward(concat(&[s_g_rep, feats.s_local], 1));
    let tau = vars.e_tau.forward(concat(&[feats.s_global, feats.v_global], 1));
    let c_packed = vars
        .e_c
        .forward(concat(&[s_g_rep, feats.s_local, v_g_rep, feats.v_local], 1));
    let m_packed = vars.e_m.forward(concat(&[s_g_rep, feats.s_local], 1));

    let c_mat = c_packed.sym_from_upper(n);
    let m_mat = m_packed.sym_from_upper(n);

    let tau_col = tau.repeat_rows(t).reshape(&[t, n, 1]);
    let m_tau = m_mat.bmm(tau_col).reshape(&[t, n]);
    let vel_col = vel_v.reshape(&[t, n, 1]);
    let c_v = c_mat.bmm(vel_col).reshape(&[t, n]);

    let accel = m_tau.sub(c_v).sub(g);
    PhysicsOutputs { accel, tau }
}

/// Learned-dynamics acceleration for a skeleton sequence: [T, K, 2].
pub fn physics_acceleration(model: &DynamicsModel, seq: &SkeletonSequence) -> Result<Tensor> {
    let pos = fully_valid_flat(seq)?;
    let vel = velocity_flat(&pos);
    let out = physics_acceleration_flat(model, &pos, &vel)?;
    Ok(out.reshaped(&[seq.len(), NUM_JOINTS, 2]))
}

/// Flat-state variant used by the wrapper and by small-n tests.
pub fn physics_acceleration_flat(
    model: &DynamicsModel,
    pos: &Tensor,
    vel: &Tensor,
) -> Result<Tensor> {
    let tape = Tape::new();
    let mut lifter = Lifter::new(&tape, false);
    let vars = model.lift(&mut lifter);
    let out = physics_graph(&tape, &vars, pos, vel);
    let accel = out.accel.value();
    if !accel.is_finite() {
        return Err(Error::Numeric("non-finite physics acceleration".into()));
    }
    Ok(accel)
}

/// Single-head scaled dot-product attention over the joints of each frame:
/// queries from the pseudo-acceleration, keys and values from the physics
/// estimate, output added residually to the pseudo route.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams {
    pub head_dim: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl FusionParams {
    pub fn new(head_dim: usize, rng: &mut Rng) -> FusionParams {
        FusionParams {
            head_dim,
            query: Linear::new(2, head_dim, rng),
            key: Linear::new(2, head_dim, rng),
            value: Linear::new(2, head_dim, rng),
            output: Linear::new(head_dim, 2, rng),
        }
    }

    pub fn zeros(head_dim: usize) -> FusionParams {
        FusionParams {
            head_dim,
            query: Linear::zeros(2, head_dim),
            key: Linear::zeros(2, head_dim),
            value: Linear::zeros(2, head_dim),
            output: Linear::zeros(head_dim, 2),
        }
    }

    /// Zeroes the output map so fusion starts as an exact passthrough of the
    /// pseudo-acceleration.
    pub fn zero_output_layer(&mut self) {
        self.output = Linear::zeros(self.head_dim, 2);
    }

    pub fn lift<'t>(&self, l: &mut Lifter<'t>) -> FusionVars<'t> {
        FusionVars {
            head_dim: self.head_dim,
            query: self.query.lift(l),
            key: self.key.lift(l),
            value: self.value.lift(l),
            output: self.output.lift(l),
        }
    }
}

impl ParamVisit for FusionParams {
    fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        self.query.visit(f);
        self.key.visit(f);
        self.value.visit(f);
        self.output.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.query.visit_mut(f);
        self.key.visit_mut(f);
        self.value.visit_mut(f);
        self.output.visit_mut(f);
    }
}

pub struct FusionVars<'t> {
    head_dim: usize,
    query: LinearVars<'t>,
    key: LinearVars<'t>,
    value: LinearVars<'t>,
    output: LinearVars<'t>,
}

/// Attention fusion on the tape. `pseudo` and `physics` are [T, K, C] and
/// [T, n] variables respectively (C = 2, n = K * C).
pub fn fusion_graph<'t>(
    fvars: &FusionVars<'t>,
    pseudo: Var<'t>,
    physics: Var<'t>,
) -> Var<'t> {
    let shape = pseudo.shape();
    let (t, k, c) = (shape[0], shape[1], shape[2]);
    let h = fvars.head_dim;
    let pseudo_flat = pseudo.reshape(&[t * k, c]);
    let physics_flat = physics.reshape(&[t * k, c]);

    let q = fvars.query.forward(pseudo_flat).reshape(&[t, k, h]);
    let key = fvars.key.forward(physics_flat).reshape(&[t, k, h]);
    let val = fvars.value.forward(physics_flat).reshape(&[t, k, h]);

    let scores = q.bmm(key.transpose_batch()).scale(1.0 / (h as f64).sqrt());
    let attn = scores.softmax(2);
    let mixed = attn.bmm(val).reshape(&[t * k, h]);
    let out = fvars.output.forward(mixed);
    pseudo_flat.add(out).reshape(&[t, k, c])
}

/// Fuses pseudo and physics accelerations ([T, K, 2] each) outside training.
pub fn fuse_acceleration(
    fusion: &FusionParams,
    pseudo: &Tensor,
    physics: &Tensor,
) -> Result<Tensor> {
    if pseudo.shape() != physics.shape() {
        return Err(Error::shape(
            format!("{:?}", pseudo.shape()),
            format!("{:?}", physics.shape()),
        ));
    }
    let shape = pseudo.shape().to_vec();
    let (t, k) = (shape[0], shape[1]);
    let tape = Tape::new();
    let mut lifter = Lifter::new(&tape, false);
    let fvars = fusion.lift(&mut lifter);
    let pseudo_v = tape.constant(pseudo.clone());
    let physics_v = tape.constant(physics.reshaped(&[t, k * 2]));
    Ok(fusion_graph(&fvars, pseudo_v, physics_v).value())
}

/// Mean over the three sequence variants of MSE(pseudo, fused).
pub fn acceleration_loss(fused: &[Tensor; 3], pseudo: &[Tensor; 3]) -> Result<f64> {
    let mut total = 0.0;
    for (a, b) in fused.iter().zip(pseudo) {
        if a.shape() != b.shape() {
            return Err(Error::shape(
                format!("{:?}", b.shape()),
                format!("{:?}", a.shape()),
            ));
        }
        let mse: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<f64>()
            / a.numel() as f64;
        total += mse;
    }
    Ok(total / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::Frame;

    fn seq_from_fn(t: usize, f: impl Fn(usize, usize) -> [f64; 2]) -> SkeletonSequence {
        let frames: Vec<Frame> = (0..t)
            .map(|i| {
                let mut fr: Frame = [[0.0; 2]; NUM_JOINTS];
                for (k, j) in fr.iter_mut().enumerate() {
                    *j = f(i, k);
                }
                fr
            })
            .collect();
        SkeletonSequence::fully_valid("fn", None, frames).unwrap()
    }

    #[test]
    fn velocity_of_constant_sequence_is_zero() {
        let seq = seq_from_fn(5, |_, k| [0.1 * k as f64, 0.5]);
        let v = velocity(&seq).unwrap();
        assert!(v.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn velocity_exact_on_linear_motion_including_endpoints() {
        let seq = seq_from_fn(6, |t, _| [3.0 * t as f64, 3.0 * t as f64]);
        let v = velocity(&seq).unwrap();
        assert!(v.data().iter().all(|&x| (x - 3.0).abs() < 1e-12));
    }

    #[test]
    fn velocity_exact_on_quadratic_interior() {
        let seq = seq_from_fn(8, |t, _| [(t * t) as f64, 0.0]);
        let v = velocity(&seq).unwrap();
        for t in 1..7 {
            let got = v.data()[(t * NUM_JOINTS) * 2];
            assert_eq!(got, 2.0 * t as f64, "frame {t}");
        }
    }

    #[test]
    fn pseudo_acceleration_zero_on_linear_motion() {
        let seq = seq_from_fn(7, |t, _| [1.5 * t as f64, -2.0 * t as f64]);
        let a = pseudo_acceleration(&seq).unwrap();
        assert!(a.data().iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn pseudo_acceleration_exact_on_quadratic() {
        let seq = seq_from_fn(9, |t, _| [(t * t) as f64, 0.0]);
        let a = pseudo_acceleration(&seq).unwrap();
        for t in 0..9 {
            // Interior frames give exactly 2; endpoints copy the interior.
            assert_eq!(a.data()[(t * NUM_JOINTS) * 2], 2.0, "frame {t}");
        }
    }

    #[test]
    fn pseudo_acceleration_matches_sine_identity() {
        // For S_t = sin(w t): S_{t+1} - 2 S_t + S_{t-1} = -2 (1 - cos w) sin(w t).
        let w = 0.1;
        let seq = seq_from_fn(20, |t, _| [(w * t as f64).sin(), 0.0]);
        let a = pseudo_acceleration(&seq).unwrap();
        for t in 1..19 {
            let expected = -2.0 * (1.0 - w.cos()) * (w * t as f64).sin();
            let got = a.data()[(t * NUM_JOINTS) * 2];
            assert!((got - expected).abs() < 1e-12, "frame {t}: {got} vs {expected}");
        }
    }

    #[test]
    fn symmetrize_two_by_two() {
        let m = symmetrize(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.shape(), &[2, 2]);
        assert_eq!(m.data(), &[1.0, 2.0, 2.0, 3.0]);
    }

    #[test]
    fn symmetrize_is_exactly_symmetric_at_n34() {
        let mut rng = Rng::new(7);
        let tri = 34 * 35 / 2;
        let u: Vec<f64> = (0..tri).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let m = symmetrize(&u).unwrap();
        for i in 0..34 {
            for j in 0..34 {
                assert_eq!(m.data()[i * 34 + j], m.data()[j * 34 + i]);
            }
        }
    }

    #[test]
    fn symmetrize_roundtrips_with_extract_upper() {
        let mut rng = Rng::new(8);
        let u: Vec<f64> = (0..10).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let m = symmetrize(&u).unwrap();
        assert_eq!(extract_upper(&m), u);
        let again = symmetrize(&extract_upper(&m)).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn symmetrize_rejects_non_triangular_lengths() {
        assert!(symmetrize(&[1.0, 2.0]).is_err());
        assert!(symmetrize(&vec![0.0; 11]).is_err());
    }

    fn toy_cfg(n: usize) -> DynamicsConfig {
        DynamicsConfig {
            state_dim: n,
            feature_dim: 4,
            hidden_dim: 8,
        }
    }

    #[test]
    fn zero_model_gives_zero_acceleration() {
        let cfg = DynamicsConfig::default();
        let model = DynamicsModel::zeros(&cfg);
        let seq = seq_from_fn(5, |t, k| [0.1 * t as f64 + 0.01 * k as f64, 0.3]);
        let a = physics_acceleration(&model, &seq).unwrap();
        assert!(a.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identity_inertia_with_constant_force_reproduces_tau() {
        // n = 4 toy: M = I, C = 0, g = 0, tau = (1, 0, 0, 0).
        let n = 4;
        let mut model = DynamicsModel::zeros(&toy_cfg(n));
        let eye_packed = extract_upper(&Tensor::eye(n));
        model.e_m.layers.last_mut().unwrap().b = Tensor::new(&[10], eye_packed);
        model.e_tau.layers.last_mut().unwrap().b =
            Tensor::new(&[4], vec![1.0, 0.0, 0.0, 0.0]);
        let mut rng = Rng::new(3);
        let pos = Tensor::uniform(&[6, n], -1.0, 1.0, &mut rng);
        let vel = velocity_flat(&pos);
        let out = physics_acceleration_flat(&model, &pos, &vel).unwrap();
        for t in 0..6 {
            assert_eq!(out.data()[t * n], 1.0, "frame {t}");
            assert_eq!(&out.data()[t * n + 1..(t + 1) * n], &[0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn tau_is_evaluated_once_per_sequence() {
        let mut rng = Rng::new(4);
        let model = DynamicsModel::new(&toy_cfg(4), &mut rng);
        let pos = Tensor::uniform(&[5, 4], -1.0, 1.0, &mut rng);
        let vel = velocity_flat(&pos);
        let tape = Tape::new();
        let mut lifter = Lifter::new(&tape, false);
        let vars = model.lift(&mut lifter);
        let out = physics_graph(&tape, &vars, &pos, &vel);
        assert_eq!(out.tau.shape(), vec![1, 4]);
    }

    #[test]
    fn scaling_estimator_outputs_scales_acceleration_linearly() {
        // Freeze features (zero feature nets with fixed biases), then double
        // the final layers of e_g, e_c, e_m: every term of the combination
        // doubles, so the acceleration must double exactly.
        let n = 4;
        let mut rng = Rng::new(5);
        let mut model = DynamicsModel::new(&toy_cfg(n), &mut rng);
        for mlp in [
            &mut model.f_s_global,
            &mut model.f_s_local,
            &mut model.f_v_global,
            &mut model.f_v_local,
        ] {
            for lin in mlp.layers.iter_mut() {
                lin.w = Tensor::zeros(lin.w.shape());
                lin.b = Tensor::uniform(lin.b.shape(), -0.5, 0.5, &mut rng);
            }
        }
        let pos = Tensor::uniform(&[5, n], -1.0, 1.0, &mut rng);
        let vel = velocity_flat(&pos);
        let base = physics_acceleration_flat(&model, &pos, &vel).unwrap();

        let mut scaled = model.clone();
        for mlp in [&mut scaled.e_g, &mut scaled.e_c, &mut scaled.e_m] {
            let last = mlp.layers.last_mut().unwrap();
            last.w = last.w.scale(2.0);
            last.b = last.b.scale(2.0);
        }
        let doubled = physics_acceleration_flat(&scaled, &pos, &vel).unwrap();
        for i in 0..base.numel() {
            assert!(
                (doubled.data()[i] - 2.0 * base.data()[i]).abs() < 1e-12,
                "element {i}"
            );
        }
    }

    #[test]
    fn local_features_of_identical_frames_are_equal() {
        let mut rng = Rng::new(6);
        let model = DynamicsModel::new(&toy_cfg(4), &mut rng);
        let row: Vec<f64> = (0..4).map(|i| 0.1 * i as f64).collect();
        let mut data = Vec::new();
        for _ in 0..5 {
            data.extend_from_slice(&row);
        }
        let pos = Tensor::new(&[5, 4], data);
        let vel = velocity_flat(&pos);
        let tape = Tape::new();
        let mut lifter = Lifter::new(&tape, false);
        let vars = model.lift(&mut lifter);
        let feats = features_graph(&vars, tape.constant(pos.clone()), tape.constant(vel));
        let s_local = feats.s_local.value();
        let f = model.feature_dim;
        assert_eq!(s_local.shape(), &[5, f]);
        for t in 1..5 {
            assert_eq!(&s_local.data()[t * f..(t + 1) * f], &s_local.data()[..f]);
        }
        // Constant sequence: the global feature equals the global net applied
        // to any single frame (the temporal mean is that frame).
        let single = vars_forward_single(&model, &row);
        let s_global = feats.s_global.value();
        for i in 0..f {
            assert!((s_global.data()[i] - single[i]).abs() < 1e-12);
        }
    }

    fn vars_forward_single(model: &DynamicsModel, row: &[f64]) -> Vec<f64> {
        let tape = Tape::new();
        let mut lifter = Lifter::new(&tape, false);
        let vars = model.f_s_global.lift(&mut lifter);
        let x = tape.constant(Tensor::new(&[1, row.len()], row.to_vec()));
        vars.forward(x).value().into_data()
    }

    #[test]
    fn feature_widths_match_config() {
        let mut rng = Rng::new(7);
        let cfg = toy_cfg(4);
        let model = DynamicsModel::new(&cfg, &mut rng);
        let pos = Tensor::uniform(&[5, 4], -1.0, 1.0, &mut rng);
        let vel = velocity_flat(&pos);
        let tape = Tape::new();
        let mut lifter = Lifter::new(&tape, false);
        let vars = model.lift(&mut lifter);
        let feats = features_graph(&vars, tape.constant(pos), tape.constant(vel));
        assert_eq!(feats.s_global.shape(), vec![1, cfg.feature_dim]);
        assert_eq!(feats.v_global.shape(), vec![1, cfg.feature_dim]);
        assert_eq!(feats.s_local.shape(), vec![5, cfg.feature_dim]);
        assert_eq!(feats.v_local.shape(), vec![5, cfg.feature_dim]);
    }

    #[test]
    fn zeroed_value_and_output_maps_pass_pseudo_through() {
        let mut rng = Rng::new(8);
        let mut fusion = FusionParams::new(16, &mut rng);
        fusion.value = Linear::zeros(2, 16);
        fusion.output = Linear::zeros(16, 2);
        let pseudo = Tensor::uniform(&[4, NUM_JOINTS, 2], -1.0, 1.0, &mut rng);
        let physics = Tensor::uniform(&[4, NUM_JOINTS, 2], -1.0, 1.0, &mut rng);
        let fused = fuse_acceleration(&fusion, &pseudo, &physics).unwrap();
        assert_eq!(fused, pseudo);
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut rng = Rng::new(9);
        let fusion = FusionParams::new(8, &mut rng);
        let pseudo = Tensor::uniform(&[3, NUM_JOINTS, 2], -1.0, 1.0, &mut rng);
        let physics = Tensor::uniform(&[3, NUM_JOINTS, 2], -1.0, 1.0, &mut rng);
        let tape = Tape::new();
        let mut lifter = Lifter::new(&tape, false);
        let fvars = fusion.lift(&mut lifter);
        let q = fvars
            .query
            .forward(tape.constant(pseudo.reshaped(&[3 * NUM_JOINTS, 2])))
            .reshape(&[3, NUM_JOINTS, 8]);
        let k = fvars
            .key
            .forward(tape.constant(physics.reshaped(&[3 * NUM_JOINTS, 2])))
            .reshape(&[3, NUM_JOINTS, 8]);
        let attn = q
            .bmm(k.transpose_batch())
            .scale(1.0 / 8.0_f64.sqrt())
            .softmax(2)
            .value();
        for s in 0..3 {
            for i in 0..NUM_JOINTS {
                let row: f64 = attn.data()
                    [(s * NUM_JOINTS + i) * NUM_JOINTS..(s * NUM_JOINTS + i + 1) * NUM_JOINTS]
                    .iter()
                    .sum();
                assert!((row - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn fusion_is_permutation_equivariant() {
        let mut rng = Rng::new(10);
        let fusion = FusionParams::new(16, &mut rng);
        let pseudo = Tensor::uniform(&[2, NUM_JOINTS, 2], -1.0, 1.0, &mut rng);
        let physics = Tensor::uniform(&[2, NUM_JOINTS, 2], -1.0, 1.0, &mut rng);
        let fused = fuse_acceleration(&fusion, &pseudo, &physics).unwrap();

        // Rotate the joint order.
        let perm: Vec<usize> = (0..NUM_JOINTS).map(|i| (i + 5) % NUM_JOINTS).collect();
        let permute = |t: &Tensor| {
            let (frames, k) = (t.shape()[0], NUM_JOINTS);
            let mut out = vec![0.0; t.numel()];
            for s in 0..frames {
                for (i, &p) in perm.iter().enumerate() {
                    out[(s * k + i) * 2] = t.data()[(s * k + p) * 2];
                    out[(s * k + i) * 2 + 1] = t.data()[(s * k + p) * 2 + 1];
                }
            }
            Tensor::new(t.shape(), out)
        };
        let fused_perm = fuse_acceleration(&fusion, &permute(&pseudo), &permute(&physics)).unwrap();
        let expected = permute(&fused);
        for i in 0..expected.numel() {
            assert!(
                (fused_perm.data()[i] - expected.data()[i]).abs() < 1e-12,
                "element {i}"
            );
        }
    }

    #[test]
    fn acceleration_loss_closed_forms() {
        let mut rng = Rng::new(11);
        let a = Tensor::uniform(&[3, NUM_JOINTS, 2], -1.0, 1.0, &mut rng);
        let b = Tensor::uniform(&[3, NUM_JOINTS, 2], -1.0, 1.0, &mut rng);
        let c = Tensor::uniform(&[3, NUM_JOINTS, 2], -1.0, 1.0, &mut rng);
        // Perfect match.
        let zero = acceleration_loss(
            &[a.clone(), b.clone(), c.clone()],
            &[a.clone(), b.clone(), c.clone()],
        )
        .unwrap();
        assert_eq!(zero, 0.0);
        // One variant off by a constant delta everywhere: delta^2 / 3.
        let delta = 0.3;
        let shifted = a.map(|v| v + delta);
        let loss = acceleration_loss(
            &[shifted, b.clone(), c.clone()],
            &[a.clone(), b.clone(), c.clone()],
        )
        .unwrap();
        assert!((loss - delta * delta / 3.0).abs() < 1e-12);
    }

    #[test]
    fn acceleration_loss_matches_brute_force() {
        let mut rng = Rng::new(12);
        let fused: [Tensor; 3] = std::array::from_fn(|_| {
            Tensor::uniform(&[2, NUM_JOINTS, 2], -1.0, 1.0, &mut rng)
        });
        let pseudo: [Tensor; 3] = std::array::from_fn(|_| {
            Tensor::uniform(&[2, NUM_JOINTS, 2], -1.0, 1.0, &mut rng)
        });
        let mut brute = 0.0;
        for v in 0..3 {
            let mut s = 0.0;
            for i in 0..fused[v].numel() {
                s += (fused[v].data()[i] - pseudo[v].data()[i]).powi(2);
            }
            brute += s / fused[v].numel() as f64;
        }
        brute /= 3.0;
        assert!((acceleration_loss(&fused, &pseudo).unwrap() - brute).abs() < 1e-12);
    }
}
