//! Bidirectional gated-recurrent sequence scorer.
//!
//! Each direction runs the standard cell
//!
//! ```text
//! z  = sigmoid(x W_z + h U_z + b_z)
//! r  = sigmoid(x W_r + h U_r + b_r)
//! h~ = tanh(x W_h + (r * h) U_h + b_h)
//! h' = (1 - z) * h + z * h~
//! ```
//!
//! from `h = 0`. The two hidden states of every element are concatenated and
//! a linear head maps them to one logit; a softmax across the sequence turns
//! the logits into a distribution. Masked elements get the logit
//! [`MASK_LOGIT`] and therefore probability zero.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Gradients, Tape, Tensor, Var, MASK_LOGIT};

pub const DEFAULT_HIDDEN: usize = 32;

/// Weights of one recurrent direction. Input matrices are `D_in x H`,
/// recurrent matrices `H x H`, biases `1 x H`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruCell {
    pub w_z: Tensor,
    pub u_z: Tensor,
    pub b_z: Tensor,
    pub w_r: Tensor,
    pub u_r: Tensor,
    pub b_r: Tensor,
    pub w_h: Tensor,
    pub u_h: Tensor,
    pub b_h: Tensor,
}

/// Number of tensors that receive gradients.
pub const TRAINABLE: usize = 19;

const CELL_NAMES: [&str; 9] = ["w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h"];

fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(vec![rows, cols], data).expect("shape")
}

impl GruCell {
    fn init<R: Rng + ?Sized>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let mut w = || glorot(input_dim, hidden, rng);
        let (w_z, w_r, w_h) = (w(), w(), w());
        let mut u = || glorot(hidden, hidden, rng);
        let (u_z, u_r, u_h) = (u(), u(), u());
        let b = || Tensor::zeros(&[1, hidden]);
        Self {
            w_z,
            u_z,
            b_z: b(),
            w_r,
            u_r,
            b_r: b(),
            w_h,
            u_h,
            b_h: b(),
        }
    }

    fn zeros(input_dim: usize, hidden: usize) -> Self {
        let w = || Tensor::zeros(&[input_dim, hidden]);
        let u = || Tensor::zeros(&[hidden, hidden]);
        let b = || Tensor::zeros(&[1, hidden]);
        Self {
            w_z: w(),
            u_z: u(),
            b_z: b(),
            w_r: w(),
            u_r: u(),
            b_r: b(),
            w_h: w(),
            u_h: u(),
            b_h: b(),
        }
    }

    fn tensors(&self) -> [&Tensor; 9] {
        [&self.w_z, &self.u_z, &self.b_z, &self.w_r, &self.u_r, &self.b_r, &self.w_h, &self.u_h, &self.b_h]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 9] {
        [
            &mut self.w_z,
            &mut self.u_z,
            &mut self.b_z,
            &mut self.w_r,
            &mut self.u_r,
            &mut self.b_r,
            &mut self.w_h,
            &mut self.u_h,
            &mut self.b_h,
        ]
    }
}

/// All trainable weights of the selection model.
#[derive(Clone, Debug, PartialEq)]
pub struct ScorerParams {
    input_dim: usize,
    hidden: usize,
    pub forward: GruCell,
    pub backward: GruCell,
    /// `2H x 1`.
    pub head_w: Tensor,
    /// `1 x 1`.
    pub head_b: Tensor,
}

impl ScorerParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        if input_dim == 0 || hidden == 0 {
            return Err(Error::InvalidArgument(format!(
                "scorer dimensions must be positive, got input {input_dim}, hidden {hidden}"
            )));
        }
        let forward = GruCell::init(input_dim, hidden, rng);
        let backward = GruCell::init(input_dim, hidden, rng);
        let head_w = glorot(2 * hidden, 1, rng);
        Ok(Self {
            input_dim,
            hidden,
            forward,
            backward,
            head_w,
            head_b: Tensor::zeros(&[1, 1]),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Canonical tensor names, matching the order of [`ScorerParams::tensors`].
    pub fn names() -> Vec<String> {
        let mut names = Vec::with_capacity(20);
        for dir in ["fwd", "bwd"] {
            names.extend(CELL_NAMES.iter().map(|n| format!("{dir}.{n}")));
        }
        names.push("head.w".into());
        names.push("head.b".into());
        names
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.forward.tensors().into_iter().collect();
        out.extend(self.backward.tensors());
        out.push(&self.head_w);
        out.push(&self.head_b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.forward.tensors_mut().into_iter().collect();
        out.extend(self.backward.tensors_mut());
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    /// Rebuilds parameters from tensors in canonical order, validating shapes.
    pub fn from_tensors(input_dim: usize, hidden: usize, tensors: Vec<Tensor>) -> Result<Self> {
        let mut p = Self {
            input_dim,
            hidden,
            forward: GruCell::zeros(input_dim, hidden),
            backward: GruCell::zeros(input_dim, hidden),
            head_w: Tensor::zeros(&[2 * hidden, 1]),
            head_b: Tensor::zeros(&[1, 1]),
        };
        let names = Self::names();
        if tensors.len() != names.len() {
            return Err(Error::ShapeMismatch {
                op: "scorer_params",
                shapes: format!("expected {} tensors, got {}", names.len(), tensors.len()),
            });
        }
        for ((slot, t), name) in p.tensors_mut().into_iter().zip(tensors).zip(&names) {
            if slot.shape() != t.shape() {
                return Err(Error::ShapeMismatch {
                    op: "scorer_params",
                    shapes: format!("{name}: expected {:?}, got {:?}", slot.shape(), t.shape()),
                });
            }
            if !t.all_finite() {
                return Err(Error::NonFinite(format!("scorer parameter {name}")));
            }
            *slot = t;
        }
        Ok(p)
    }

    /// Tensors that receive gradients: everything except the head bias.
    /// The softmax across elements is invariant to a common logit shift, so
    /// the head bias has an identically zero gradient and is held constant.
    pub fn trainable(&self) -> Vec<&Tensor> {
        let mut t = self.tensors();
        t.pop();
        t
    }

    /// Places the trainable tensors on `tape` as parameter leaves and the
    /// head bias as a constant.
    pub fn register(&self, tape: &mut Tape) -> ScorerVars {
        let leaves: Vec<Var> = self.trainable().into_iter().map(|t| tape.param(t.clone())).collect();
        ScorerVars::from_leaves(self, tape, &leaves)
    }
}

/// Parameter leaves of a [`ScorerParams`] on one tape.
#[derive(Clone, Debug)]
pub struct ScorerVars {
    input_dim: usize,
    hidden: usize,
    all: Vec<Var>,
}

struct CellVars {
    w_z: Var,
    u_z: Var,
    b_z: Var,
    w_r: Var,
    u_r: Var,
    b_r: Var,
    w_h: Var,
    u_h: Var,
    b_h: Var,
}

impl ScorerVars {
    /// Wraps externally created leaves for the trainable tensors of `params`
    /// (in canonical order), adding the head bias as a constant.
    pub fn from_leaves(params: &ScorerParams, tape: &mut Tape, leaves: &[Var]) -> ScorerVars {
        assert_eq!(leaves.len(), TRAINABLE, "one leaf per trainable tensor");
        let mut all = leaves.to_vec();
        all.push(tape.constant(params.head_b.clone()));
        ScorerVars {
            input_dim: params.input_dim,
            hidden: params.hidden,
            all,
        }
    }

    /// The trainable leaves, in canonical order.
    pub fn vars(&self) -> &[Var] {
        &self.all[..TRAINABLE]
    }

    fn cell(&self, direction: usize) -> CellVars {
        let v = &self.all[direction * 9..direction * 9 + 9];
        CellVars {
            w_z: v[0],
            u_z: v[1],
            b_z: v[2],
            w_r: v[3],
            u_r: v[4],
            b_r: v[5],
            w_h: v[6],
            u_h: v[7],
            b_h: v[8],
        }
    }

    /// Gradients for every tensor in canonical order; the head bias entry is zero.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = self.vars()
            .iter()
            .map(|v| grads.wrt(*v).expect("scorer parameter leaf").clone())
            .collect();
        out.push(Tensor::zeros(&[1, 1]));
        out
    }
}

/// Probability vector over a sequence together with its exclusion mask.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreDistribution {
    pub alpha: Vec<f64>,
    pub mask: Vec<bool>,
}

impl ScoreDistribution {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// Index of the largest probability, ties to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &a) in self.alpha.iter().enumerate().skip(1) {
            if a > self.alpha[best] {
                best = i;
            }
        }
        best
    }
}

/// A scored sequence on a tape: the raw logits (`L x 1`), the masked
/// distribution (`L x 1`) and its values.
#[derive(Clone, Debug)]
pub struct TracedScores {
    pub logits: Var,
    pub alpha: Var,
    pub distribution: ScoreDistribution,
}

/// Runs one recurrent direction, returning the hidden state of every element
/// in sequence order.
fn run_direction(tape: &mut Tape, cell: &CellVars, x: Var, len: usize, hidden: usize, reverse: bool) -> Result<Vec<Var>> {
    let xz = tape.matmul(x, cell.w_z)?;
    let xz = tape.add(xz, cell.b_z)?;
    let xr = tape.matmul(x, cell.w_r)?;
    let xr = tape.add(xr, cell.b_r)?;
    let xh = tape.matmul(x, cell.w_h)?;
    let xh = tape.add(xh, cell.b_h)?;

    let mut h = tape.constant(Tensor::zeros(&[1, hidden]));
    let mut states = vec![h; len];
    let order: Box<dyn Iterator<Item = usize>> = if reverse { Box::new((0..len).rev()) } else { Box::new(0..len) };
    for t in order {
        let xz_t = tape.row(xz, t)?;
        let hz = tape.matmul(h, cell.u_z)?;
        let z = tape.add(xz_t, hz)?;
        let z = tape.sigmoid(z);

        let xr_t = tape.row(xr, t)?;
        let hr = tape.matmul(h, cell.u_r)?;
        let r = tape.add(xr_t, hr)?;
        let r = tape.sigmoid(r);

        let xh_t = tape.row(xh, t)?;
        let rh = tape.mul(r, h)?;
        let rhu = tape.matmul(rh, cell.u_h)?;
        let cand = tape.add(xh_t, rhu)?;
        let cand = tape.tanh(cand);

        let delta = tape.sub(cand, h)?;
        let step = tape.mul(z, delta)?;
        h = tape.add(h, step)?;
        states[t] = h;
    }
    Ok(states)
}

/// Scores `inputs` (in the given order) and returns the masked softmax
/// across elements, traced on `tape`.
pub fn score_sequence(tape: &mut Tape, params: &ScorerVars, inputs: &[Vec<f64>], mask: &[bool]) -> Result<TracedScores> {
    let len = inputs.len();
    if len == 0 || mask.len() != len {
        return Err(Error::ShapeMismatch {
            op: "score_sequence",
            shapes: format!("{len} inputs vs mask of {}", mask.len()),
        });
    }
    if let Some(bad) = inputs.iter().find(|x| x.len() != params.input_dim) {
        return Err(Error::ShapeMismatch {
            op: "score_sequence",
            shapes: format!("input of dimension {} vs scorer input {}", bad.len(), params.input_dim),
        });
    }
    if mask.iter().all(|&m| m) {
        return Err(Error::InvalidArgument("every sequence element is masked".into()));
    }

    let x = tape.constant(Tensor::from_rows(inputs)?);
    let fwd = run_direction(tape, &params.cell(0), x, len, params.hidden, false)?;
    let bwd = run_direction(tape, &params.cell(1), x, len, params.hidden, true)?;
    let rows = fwd
        .iter()
        .zip(&bwd)
        .map(|(&f, &b)| tape.concat(&[f, b], 1))
        .collect::<Result<Vec<_>>>()?;
    let states = tape.concat(&rows, 0)?;
    let head_w = params.all[18];
    let head_b = params.all[19];
    let logits = tape.matmul(states, head_w)?;
    let logits = tape.add(logits, head_b)?;
    let masked = tape.mask_fill(logits, mask, MASK_LOGIT)?;
    let alpha = tape.softmax(masked, 0)?;
    let distribution = ScoreDistribution {
        alpha: tape.value(alpha).data().to_vec(),
        mask: mask.to_vec(),
    };
    Ok(TracedScores {
        logits,
        alpha,
        distribution,
    })
}

/// Convenience wrapper on a throwaway tape.
pub fn score(params: &ScorerParams, inputs: &[Vec<f64>], mask: &[bool]) -> Result<ScoreDistribution> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    Ok(score_sequence(&mut tape, &vars, inputs, mask)?.distribution)
}
