//! Recurrent navigation policy: three feature extractors fused by summation,
//! a GRU cell and a linear head producing thrust and yaw.

use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::Action;
use crate::linalg::V3;
use crate::math;
use crate::real::Real;

/// Bumped whenever the parameter layout changes meaning.
pub const LAYOUT_VERSION: u32 = 1;

pub const STATE_DIM: usize = 12;
pub const TARGET_DIM: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum YawMode {
    /// Two outputs `(s, c)` combined as `atan2(s, c)`.
    SinCos,
    /// One output used directly as the angle.
    Raw,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PolicyConfig {
    pub feature_dim: usize,
    /// Pooled depth image size fed to the network.
    pub depth_width: usize,
    pub depth_height: usize,
    pub depth_hidden: usize,
    pub state_hidden: usize,
    pub target_hidden: usize,
    /// Per-axis and total thrust bound, m/s².
    pub t_max: f64,
    /// Vertical thrust produced by a zero head output.
    pub hover_thrust: f64,
    pub yaw_mode: YawMode,
    pub ln_eps: f64,
    /// Multiplier on the initial head weights and bias.
    pub head_init_scale: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            feature_dim: 192,
            depth_width: 32,
            depth_height: 24,
            depth_hidden: 64,
            state_hidden: 64,
            target_hidden: 32,
            t_max: 2.0 * 9.81,
            hover_thrust: 9.81,
            yaw_mode: YawMode::SinCos,
            ln_eps: 1e-5,
            head_init_scale: 0.01,
        }
    }
}

impl PolicyConfig {
    pub fn depth_dim(&self) -> usize {
        self.depth_width * self.depth_height
    }

    pub fn head_dim(&self) -> usize {
        match self.yaw_mode {
            YawMode::SinCos => 5,
            YawMode::Raw => 4,
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let dims = [
            self.feature_dim,
            self.depth_width,
            self.depth_height,
            self.depth_hidden,
            self.state_hidden,
            self.target_hidden,
        ];
        if dims.contains(&0)
            || !(self.t_max > 0.0)
            || !(self.ln_eps > 0.0)
            || !(self.head_init_scale >= 0.0 && self.head_init_scale.is_finite())
        {
            return Err(PolicyError::InvalidConfig);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("invalid policy configuration")]
    InvalidConfig,
    #[error("parameter vector has {got} entries, layout needs {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("non-finite observation input")]
    NonFiniteInput,
}

/// One named tensor in the flat parameter array.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Layout {
    pub version: u32,
    pub tensors: Vec<TensorSpec>,
}

impl Layout {
    pub fn total(&self) -> usize {
        self.tensors.last().map_or(0, |t| t.offset + t.len())
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }

    fn range(&self, name: &str) -> Range<usize> {
        self.get(name).map(TensorSpec::range).unwrap_or(0..0)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct BranchIdx {
    w1: Range<usize>,
    b1: Range<usize>,
    w2: Range<usize>,
    b2: Range<usize>,
    gain: Range<usize>,
    bias: Range<usize>,
}

#[derive(Clone, Debug, PartialEq)]
struct Idx {
    branches: [BranchIdx; 3],
    z: Range<usize>,
    z_b: Range<usize>,
    r: Range<usize>,
    r_b: Range<usize>,
    h: Range<usize>,
    h_b: Range<usize>,
    head: Range<usize>,
    head_b: Range<usize>,
}

const BRANCHES: [&str; 3] = ["depth", "state", "target"];

/// Which extractor branches contribute to the fused feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BranchMask(pub [bool; 3]);

impl BranchMask {
    pub const ALL: BranchMask = BranchMask([true; 3]);
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation<S = f64> {
    /// Inverted pooled depth image, row-major.
    pub depth: Vec<f64>,
    /// Velocity followed by the row-major rotation, in the start frame.
    pub state: [S; STATE_DIM],
    /// Desired velocity toward the goal and the goal importance.
    pub target: [S; TARGET_DIM],
}

impl<S: Real> Observation<S> {
    pub fn is_finite(&self) -> bool {
        self.depth.iter().all(|x| x.is_finite())
            && self.state.iter().all(|x| x.val().is_finite())
            && self.target.iter().all(|x| x.val().is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    pub config: PolicyConfig,
    pub layout: Layout,
    idx: Idx,
}

impl Policy {
    pub fn new(config: PolicyConfig) -> Result<Self, PolicyError> {
        config.validate()?;
        let f = config.feature_dim;
        let mut tensors = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, rows: usize, cols: usize| {
            tensors.push(TensorSpec {
                name,
                rows,
                cols,
                offset,
            });
            offset += rows * cols;
        };
        let inputs = [
            (config.depth_dim(), config.depth_hidden),
            (STATE_DIM, config.state_hidden),
            (TARGET_DIM, config.target_hidden),
        ];
        for (name, (n_in, hidden)) in BRANCHES.iter().zip(inputs) {
            push(alloc::format!("{name}.w1"), hidden, n_in);
            push(alloc::format!("{name}.b1"), hidden, 1);
            push(alloc::format!("{name}.w2"), f, hidden);
            push(alloc::format!("{name}.b2"), f, 1);
            push(alloc::format!("{name}.ln_gain"), f, 1);
            push(alloc::format!("{name}.ln_bias"), f, 1);
        }
        for gate in ["z", "r", "h"] {
            push(alloc::format!("gru.{gate}"), f, 2 * f);
            push(alloc::format!("gru.{gate}_b"), f, 1);
        }
        push("head.w".into(), config.head_dim(), f);
        push("head.b".into(), config.head_dim(), 1);
        let layout = Layout {
            version: LAYOUT_VERSION,
            tensors,
        };
        let branch = |n: &str| BranchIdx {
            w1: layout.range(&alloc::format!("{n}.w1")),
            b1: layout.range(&alloc::format!("{n}.b1")),
            w2: layout.range(&alloc::format!("{n}.w2")),
            b2: layout.range(&alloc::format!("{n}.b2")),
            gain: layout.range(&alloc::format!("{n}.ln_gain")),
            bias: layout.range(&alloc::format!("{n}.ln_bias")),
        };
        let idx = Idx {
            branches: [branch("depth"), branch("state"), branch("target")],
            z: layout.range("gru.z"),
            z_b: layout.range("gru.z_b"),
            r: layout.range("gru.r"),
            r_b: layout.range("gru.r_b"),
            h: layout.range("gru.h"),
            h_b: layout.range("gru.h_b"),
            head: layout.range("head.w"),
            head_b: layout.range("head.b"),
        };
        Ok(Policy {
            config,
            layout,
            idx,
        })
    }

    pub fn num_params(&self) -> usize {
        self.layout.total()
    }

    pub fn check_len(&self, params: usize) -> Result<(), PolicyError> {
        if params == self.num_params() {
            Ok(())
        } else {
            Err(PolicyError::LengthMismatch {
                got: params,
                want: self.num_params(),
            })
        }
    }

    /// Weights and biases uniform in `+-1/sqrt(fan_in)`, layer-norm gains one
    /// and biases zero.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = alloc::vec![0.0; self.num_params()];
        let mut fan_in = 1;
        for t in &self.layout.tensors {
            let slice = &mut out[t.range()];
            if t.name.ends_with("ln_gain") {
                slice.fill(1.0);
            } else if t.name.ends_with("ln_bias") {
                slice.fill(0.0);
            } else {
                // Biases follow their weight matrix and share its fan-in.
                if t.cols > 1 {
                    fan_in = t.cols;
                }
                let mut bound = 1.0 / math::sqrt(fan_in as f64);
                if t.name.starts_with("head.") {
                    bound *= self.config.head_init_scale;
                }
                for x in slice.iter_mut() {
                    *x = rng.random_range(-bound..bound);
                }
            }
        }
        out
    }

    pub fn initial_hidden<S: Real>(&self) -> Vec<S> {
        alloc::vec![S::cst(0.0); self.config.feature_dim]
    }

    fn branch<S: Real>(&self, params: &[S], i: usize, x: &[S]) -> Vec<S> {
        let b = &self.idx.branches[i];
        let h: Vec<S> = S::affine(&params[b.w1.clone()], &params[b.b1.clone()], x)
            .into_iter()
            .map(S::tanh)
            .collect();
        let y = S::affine(&params[b.w2.clone()], &params[b.b2.clone()], &h);
        S::layer_norm(
            &y,
            &params[b.gain.clone()],
            &params[b.bias.clone()],
            self.config.ln_eps,
        )
    }

    /// Fused feature vector from the enabled branches.
    pub fn encode_masked<S: Real>(&self, params: &[S], obs: &Observation<S>, mask: BranchMask) -> Vec<S> {
        let depth: Vec<S> = obs.depth.iter().map(|&d| S::cst(d)).collect();
        let inputs: [&[S]; 3] = [&depth, &obs.state, &obs.target];
        let mut acc: Option<Vec<S>> = None;
        for (i, x) in inputs.iter().enumerate() {
            if !mask.0[i] {
                continue;
            }
            let y = self.branch(params, i, x);
            acc = Some(match acc {
                None => y,
                Some(a) => a.into_iter().zip(y).map(|(a, b)| a + b).collect(),
            });
        }
        acc.unwrap_or_else(|| self.initial_hidden())
    }

    pub fn encode<S: Real>(&self, params: &[S], obs: &Observation<S>) -> Vec<S> {
        self.encode_masked(params, obs, BranchMask::ALL)
    }

    pub fn gru_step<S: Real>(&self, params: &[S], h: &[S], x: &[S]) -> Vec<S> {
        let i = &self.idx;
        let mut xh = Vec::with_capacity(2 * h.len());
        xh.extend_from_slice(x);
        xh.extend_from_slice(h);
        let z: Vec<S> = S::affine(&params[i.z.clone()], &params[i.z_b.clone()], &xh)
            .into_iter()
            .map(S::sigmoid)
            .collect();
        let r: Vec<S> = S::affine(&params[i.r.clone()], &params[i.r_b.clone()], &xh)
            .into_iter()
            .map(S::sigmoid)
            .collect();
        for (k, (&rk, &hk)) in r.iter().zip(h).enumerate() {
            xh[x.len() + k] = rk * hk;
        }
        let cand = S::affine(&params[i.h.clone()], &params[i.h_b.clone()], &xh);
        h.iter()
            .zip(z.iter().zip(cand))
            .map(|(&hk, (&zk, ck))| hk + zk * (ck.tanh() - hk))
            .collect()
    }

    /// Raw head outputs for a hidden state.
    pub fn head<S: Real>(&self, params: &[S], h: &[S]) -> Vec<S> {
        S::affine(&params[self.idx.head.clone()], &params[self.idx.head_b.clone()], h)
    }

    /// Maps head outputs to a thrust and yaw in the observation frame.
    pub fn decode<S: Real>(&self, out: &[S]) -> Action<S> {
        let c = &self.config;
        let t = V3::new(
            out[0].tanh() * c.t_max,
            out[1].tanh() * c.t_max,
            out[2].tanh() * c.t_max + c.hover_thrust,
        );
        let n = t.norm();
        let thrust = if n.val() > c.t_max {
            t.scale(S::cst(c.t_max) / n)
        } else {
            t
        };
        let yaw = match c.yaw_mode {
            YawMode::SinCos => out[3].atan2(out[4]),
            YawMode::Raw => out[3],
        };
        Action { thrust, yaw }
    }

    pub fn act<S: Real>(
        &self,
        params: &[S],
        obs: &Observation<S>,
        h: &[S],
    ) -> Result<(Action<S>, Vec<S>), PolicyError> {
        self.check_len(params.len())?;
        if !obs.is_finite() {
            return Err(PolicyError::NonFiniteInput);
        }
        let x = self.encode(params, obs);
        let h1 = self.gru_step(params, h, &x);
        let out = self.head(params, &h1);
        Ok((self.decode(&out), h1))
    }
}
