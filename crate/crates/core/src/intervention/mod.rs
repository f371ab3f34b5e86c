//! Prototype-based de-confounding modules.
//!
//! * PDM works in logit space: prototypes retrieved by dot-product attention
//!   are projected to a per-query logit bias, which is subtracted after a
//!   learnable per-class scale.
//! * IDM works in feature space: multi-head cross-attention reconstructs the
//!   component of a query that the dictionary explains, a sigmoid gate
//!   decides how much of it to remove, and the gated part is subtracted.
//!
//! Dictionaries are always recorded as constants; passing a tensor that
//! tracks gradients as `z` is a contract error.

mod wiring;

pub use wiring::{stagewise_wire, InsertionPoint, Pipeline, ScisFlags, Site};

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

/// Bound of the uniform init for `B_proto`.
pub const B_PROTO_INIT: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct PdmParams {
    /// `K x C` prototype-to-logit projection.
    pub b_proto: Tensor,
    /// `[C]` per-class intervention scale.
    pub lambda: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct PdmVars<'t> {
    pub b_proto: Var<'t>,
    pub lambda: Var<'t>,
}

impl PdmParams {
    /// `lambda = 0`, so a fresh module is the identity on logits.
    pub fn init<R: Rng + ?Sized>(k: usize, classes: usize, rng: &mut R) -> Self {
        PdmParams {
            b_proto: Tensor::uniform(&[k, classes], B_PROTO_INIT, rng),
            lambda: Tensor::zeros(&[classes]),
        }
    }

    pub fn store(&self, prefix: &str, ps: &mut ParamStore) {
        ps.insert(format!("{prefix}.b_proto"), self.b_proto.clone());
        ps.insert(format!("{prefix}.lambda"), self.lambda.clone());
    }

    pub fn load(prefix: &str, ps: &ParamStore) -> Result<Self> {
        Ok(PdmParams {
            b_proto: ps.get(&format!("{prefix}.b_proto"))?.clone(),
            lambda: ps.get(&format!("{prefix}.lambda"))?.clone(),
        })
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> PdmVars<'t> {
        PdmVars {
            b_proto: tape.param(&self.b_proto),
            lambda: tape.param(&self.lambda),
        }
    }

    /// Tape-free evaluation.
    pub fn apply(&self, q: &Tensor, l_obs: &Tensor, z: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let vars = self.bind(&tape);
        pdm_forward(tape.constant(q), tape.constant(l_obs), tape.constant(z), &vars).map(|v| v.value())
    }
}

impl<'t> PdmVars<'t> {
    pub fn from_bound(b: &Bound<'t>, prefix: &str) -> Result<Self> {
        Ok(PdmVars {
            b_proto: b.get(&format!("{prefix}.b_proto"))?,
            lambda: b.get(&format!("{prefix}.lambda"))?,
        })
    }
}

fn ensure_frozen(z: Var<'_>) -> Result<()> {
    if z.requires_grad() {
        return Err(Error::Contract("dictionary must be recorded as a constant".into()));
    }
    if z.shape().len() != 2 {
        return Err(Error::shape("dictionary", &z.shape(), &[0, 0]));
    }
    Ok(())
}

/// `L_obs - lambda * softmax(Q Z^T / sqrt(D)) B_proto`.
///
/// `q` is `[..., D]`, `l_obs` is `[..., C]` with the same leading axes, `z` is
/// `[K, D]`.
pub fn pdm_forward<'t>(q: Var<'t>, l_obs: Var<'t>, z: Var<'t>, p: &PdmVars<'t>) -> Result<Var<'t>> {
    ensure_frozen(z)?;
    let (qs, ls, zs, bs) = (q.shape(), l_obs.shape(), z.shape(), p.b_proto.shape());
    if q.cols() != zs[1] {
        return Err(Error::shape("pdm query/dictionary", &qs, &zs));
    }
    if bs.len() != 2 || bs[0] != zs[0] {
        return Err(Error::shape("pdm dictionary/B_proto", &zs, &bs));
    }
    if ls[..ls.len() - 1] != qs[..qs.len() - 1] || l_obs.cols() != bs[1] {
        return Err(Error::shape("pdm logits", &ls, &qs));
    }
    if p.lambda.shape() != [bs[1]] {
        return Err(Error::shape("pdm lambda", &p.lambda.shape(), &[bs[1]]));
    }
    let scale = (q.cols() as f64).sqrt();
    let affinity = q.matmul_nt(z)?.softmax_rows(scale);
    let bias = affinity.matmul(p.b_proto)?;
    l_obs.sub(bias.mul_row(p.lambda)?)
}

/// How the IDM gate is produced.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum GateMode {
    #[default]
    Learned,
    /// Replaces the gate MLP output by a constant (test hook; `0.0` makes
    /// the module an exact identity).
    Clamped(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdmParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
    /// Gate MLP `2D -> D (ReLU) -> D`, sigmoid applied on top.
    pub gate_w1: Tensor,
    pub gate_b1: Tensor,
    pub gate_w2: Tensor,
    pub gate_b2: Tensor,
    pub heads: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct IdmVars<'t> {
    pub w_q: Var<'t>,
    pub w_k: Var<'t>,
    pub w_v: Var<'t>,
    pub w_o: Var<'t>,
    pub gate_w1: Var<'t>,
    pub gate_b1: Var<'t>,
    pub gate_w2: Var<'t>,
    pub gate_b2: Var<'t>,
    pub heads: usize,
    pub gate: GateMode,
}

/// Intermediate tensors of one IDM evaluation.
#[derive(Clone, Copy, Debug)]
pub struct IdmTrace<'t> {
    pub clean: Var<'t>,
    pub spur: Var<'t>,
    pub gate: Var<'t>,
}

const IDM_NAMES: [&str; 8] = ["w_q", "w_k", "w_v", "w_o", "gate_w1", "gate_b1", "gate_w2", "gate_b2"];

impl IdmParams {
    /// Random attention and gate weights with a zero output projection, so
    /// the reconstructed spurious component, and with it the module's
    /// effect, starts at exactly zero.
    pub fn init<R: Rng + ?Sized>(dim: usize, heads: usize, rng: &mut R) -> Result<Self> {
        check_heads(dim, heads)?;
        Ok(IdmParams {
            w_q: Tensor::glorot(dim, dim, rng),
            w_k: Tensor::glorot(dim, dim, rng),
            w_v: Tensor::glorot(dim, dim, rng),
            w_o: Tensor::zeros(&[dim, dim]),
            gate_w1: Tensor::glorot(2 * dim, dim, rng),
            gate_b1: Tensor::zeros(&[dim]),
            gate_w2: Tensor::glorot(dim, dim, rng),
            gate_b2: Tensor::zeros(&[dim]),
            heads,
        })
    }

    pub fn dim(&self) -> usize {
        self.w_q.cols()
    }

    fn tensors(&self) -> [&Tensor; 8] {
        [
            &self.w_q,
            &self.w_k,
            &self.w_v,
            &self.w_o,
            &self.gate_w1,
            &self.gate_b1,
            &self.gate_w2,
            &self.gate_b2,
        ]
    }

    pub fn store(&self, prefix: &str, ps: &mut ParamStore) {
        for (n, t) in IDM_NAMES.iter().zip(self.tensors()) {
            ps.insert(format!("{prefix}.{n}"), t.clone());
        }
    }

    pub fn load(prefix: &str, ps: &ParamStore, heads: usize) -> Result<Self> {
        let g = |n: &str| ps.get(&format!("{prefix}.{n}")).cloned();
        let p = IdmParams {
            w_q: g("w_q")?,
            w_k: g("w_k")?,
            w_v: g("w_v")?,
            w_o: g("w_o")?,
            gate_w1: g("gate_w1")?,
            gate_b1: g("gate_b1")?,
            gate_w2: g("gate_w2")?,
            gate_b2: g("gate_b2")?,
            heads,
        };
        check_heads(p.dim(), heads)?;
        Ok(p)
    }

    pub fn bind<'t>(&self, tape: &'t Tape, gate: GateMode) -> IdmVars<'t> {
        IdmVars {
            w_q: tape.param(&self.w_q),
            w_k: tape.param(&self.w_k),
            w_v: tape.param(&self.w_v),
            w_o: tape.param(&self.w_o),
            gate_w1: tape.param(&self.gate_w1),
            gate_b1: tape.param(&self.gate_b1),
            gate_w2: tape.param(&self.gate_w2),
            gate_b2: tape.param(&self.gate_b2),
            heads: self.heads,
            gate,
        }
    }

    /// Tape-free evaluation returning `S_clean`.
    pub fn apply(&self, s_in: &Tensor, z: &Tensor, gate: GateMode) -> Result<Tensor> {
        let tape = Tape::new();
        let vars = self.bind(&tape, gate);
        idm_forward(tape.constant(s_in), tape.constant(z), &vars).map(|t| t.clean.value())
    }
}

impl<'t> IdmVars<'t> {
    pub fn from_bound(b: &Bound<'t>, prefix: &str, heads: usize, gate: GateMode) -> Result<Self> {
        let g = |n: &str| b.get(&format!("{prefix}.{n}"));
        Ok(IdmVars {
            w_q: g("w_q")?,
            w_k: g("w_k")?,
            w_v: g("w_v")?,
            w_o: g("w_o")?,
            gate_w1: g("gate_w1")?,
            gate_b1: g("gate_b1")?,
            gate_w2: g("gate_w2")?,
            gate_b2: g("gate_b2")?,
            heads,
            gate,
        })
    }
}

fn check_heads(dim: usize, heads: usize) -> Result<()> {
    if heads == 0 || dim % heads != 0 {
        return Err(Error::Config(format!("feature dim {dim} not divisible by {heads} heads")));
    }
    Ok(())
}

/// Multi-head cross-attention: `q_in` attends over `kv`, each head scaled by
/// `sqrt(D / heads)`.
pub fn multi_head_attention<'t>(
    q_in: Var<'t>,
    kv: Var<'t>,
    w: [Var<'t>; 4],
    heads: usize,
) -> Result<Var<'t>> {
    let [w_q, w_k, w_v, w_o] = w;
    let dim = w_q.cols();
    check_heads(dim, heads)?;
    let dh = dim / heads;
    let q = q_in.matmul(w_q)?;
    let k = kv.matmul(w_k)?;
    let v = kv.matmul(w_v)?;
    let scale = (dh as f64).sqrt();
    let mut out: Option<Var<'t>> = None;
    for h in 0..heads {
        let (qh, kh, vh) = (q.slice_cols(h * dh, dh)?, k.slice_cols(h * dh, dh)?, v.slice_cols(h * dh, dh)?);
        let head = qh.matmul_nt(kh)?.softmax_rows(scale).matmul(vh)?;
        out = Some(match out {
            None => head,
            Some(acc) => acc.concat_last(head)?,
        });
    }
    out.expect("at least one head").matmul(w_o)
}

/// `S_in - G * C_spur` with `C_spur = MHCA(S_in, Z, Z)` and
/// `G = sigmoid(MLP([S_in, C_spur]))`.
pub fn idm_forward<'t>(s_in: Var<'t>, z: Var<'t>, p: &IdmVars<'t>) -> Result<IdmTrace<'t>> {
    ensure_frozen(z)?;
    let dim = s_in.cols();
    check_heads(dim, p.heads)?;
    if z.cols() != dim {
        return Err(Error::shape("idm input/dictionary", &s_in.shape(), &z.shape()));
    }
    if p.w_q.shape() != [dim, dim] {
        return Err(Error::shape("idm projections", &s_in.shape(), &p.w_q.shape()));
    }
    let spur = multi_head_attention(s_in, z, [p.w_q, p.w_k, p.w_v, p.w_o], p.heads)?;
    let tape = s_in.tape();
    let gate = match p.gate {
        GateMode::Learned => {
            let h = s_in.concat_last(spur)?.matmul(p.gate_w1)?.add_row(p.gate_b1)?.relu();
            h.matmul(p.gate_w2)?.add_row(p.gate_b2)?.sigmoid()
        }
        GateMode::Clamped(g) => tape.constant(&Tensor::filled(&s_in.shape(), g)),
    };
    let clean = s_in.sub(gate.mul(spur)?)?;
    Ok(IdmTrace { clean, spur, gate })
}
