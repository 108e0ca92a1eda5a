//! Linear layers and small MLPs shared by the trainable modules, plus the
//! parameter-lifting machinery that puts model weights onto a tape.

use crate::rng::Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Visits every parameter tensor of a model in declaration order. The same
/// order is used for optimizer state, gradient collection, and serialization.
pub trait ParamVisit {
    fn visit(&self, f: &mut dyn FnMut(&Tensor));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |t| n += t.numel());
        n
    }

    fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit(&mut |t| out.extend_from_slice(t.data()));
        out
    }

    fn load_flat(&mut self, flat: &[f64]) -> crate::error::Result<()> {
        let need = self.param_count();
        if flat.len() != need {
            return Err(crate::error::Error::shape(
                format!("{need} parameters"),
                format!("{} parameters", flat.len()),
            ));
        }
        let mut off = 0;
        self.visit_mut(&mut |t| {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        });
        Ok(())
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |t| ok &= t.is_finite());
        ok
    }
}

/// Records parameters on a tape, remembering declaration order so gradients
/// can be read back aligned with `ParamVisit`.
pub struct Lifter<'t> {
    tape: &'t Tape,
    trainable: bool,
    vars: Vec<Var<'t>>,
}

impl<'t> Lifter<'t> {
    pub fn new(tape: &'t Tape, trainable: bool) -> Lifter<'t> {
        Lifter {
            tape,
            trainable,
            vars: Vec::new(),
        }
    }

    pub fn lift(&mut self, t: &Tensor) -> Var<'t> {
        let v = if self.trainable {
            self.tape.param(t.clone())
        } else {
            self.tape.constant(t.clone())
        };
        self.vars.push(v);
        v
    }

    /// Records a buffer that is never trained and does not participate in
    /// the parameter ordering.
    pub fn constant(&mut self, t: &Tensor) -> Var<'t> {
        self.tape.constant(t.clone())
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    pub fn into_vars(self) -> Vec<Var<'t>> {
        self.vars
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn new(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Linear {
        Linear {
            w: Tensor::glorot(fan_in, fan_out, rng),
            b: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            w: Tensor::zeros(&[fan_in, fan_out]),
            b: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn lift<'t>(&self, l: &mut Lifter<'t>) -> LinearVars<'t> {
        LinearVars {
            w: l.lift(&self.w),
            b: l.lift(&self.b),
        }
    }
}

impl ParamVisit for Linear {
    fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        f(&self.w);
        f(&self.b);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.w);
        f(&mut self.b);
    }
}

#[derive(Clone, Copy)]
pub struct LinearVars<'t> {
    pub w: Var<'t>,
    pub b: Var<'t>,
}

impl<'t> LinearVars<'t> {
    pub fn forward(&self, x: Var<'t>) -> Var<'t> {
        x.matmul(self.w).add_bias(self.b)
    }
}

/// MLP with tanh between hidden layers and a linear output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims` = [in, hidden..., out].
    pub fn new(dims: &[usize], rng: &mut Rng) -> Mlp {
        assert!(dims.len() >= 2);
        let layers = dims
            .windows(2)
            .map(|w| Linear::new(w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn zeros(dims: &[usize]) -> Mlp {
        let layers = dims.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect();
        Mlp { layers }
    }

    pub fn lift<'t>(&self, l: &mut Lifter<'t>) -> MlpVars<'t> {
        MlpVars {
            layers: self.layers.iter().map(|lin| lin.lift(l)).collect(),
        }
    }
}

impl ParamVisit for Mlp {
    fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        for l in &self.layers {
            l.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        for l in &mut self.layers {
            l.visit_mut(f);
        }
    }
}

pub struct MlpVars<'t> {
    pub layers: Vec<LinearVars<'t>>,
}

impl<'t> MlpVars<'t> {
    pub fn forward(&self, mut x: Var<'t>) -> Var<'t> {
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(x);
            if i < last {
                x = x.tanh();
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_roundtrip() {
        let mut rng = Rng::new(3);
        let mut mlp = Mlp::new(&[4, 8, 2], &mut rng);
        let flat = mlp.flat_params();
        assert_eq!(flat.len(), 4 * 8 + 8 + 8 * 2 + 2);
        let mut other = Mlp::zeros(&[4, 8, 2]);
        other.load_flat(&flat).unwrap();
        assert_eq!(other.flat_params(), flat);
        mlp.load_flat(&flat).unwrap();
        assert_eq!(mlp.flat_params(), flat);
    }

    #[test]
    fn mlp_forward_shapes() {
        let mut rng = Rng::new(9);
        let mlp = Mlp::new(&[6, 16, 3], &mut rng);
        let tape = Tape::new();
        let mut lifter = Lifter::new(&tape, true);
        let vars = mlp.lift(&mut lifter);
        let x = tape.constant(Tensor::uniform(&[5, 6], -1.0, 1.0, &mut rng));
        let y = vars.forward(x);
        assert_eq!(y.shape(), vec![5, 3]);
    }
}
