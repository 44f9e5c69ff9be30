//! Query-aware node features: co-attention of a sequence against the query,
//! then attention pooling down to one `1 × 2h` row.

use rand::Rng;

use crate::numeric::{glorot_uniform, Bound, NumericError, ParamId, ParamStore, Tensor, Var};

/// A dense layer `x · W + b`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Affine {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct AffineVars<'t> {
    pub w: Var<'t>,
    pub b: Var<'t>,
}

impl Affine {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        output: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, NumericError> {
        Ok(Self {
            w: store.add(format!("{prefix}.w"), glorot_uniform(input, output, rng), true)?,
            b: store.add(format!("{prefix}.b"), Tensor::zeros(1, output), true)?,
        })
    }

    pub fn bind<'t>(&self, b: &Bound<'t>) -> AffineVars<'t> {
        AffineVars {
            w: b[self.w],
            b: b[self.b],
        }
    }
}

impl<'t> AffineVars<'t> {
    pub fn apply(&self, x: Var<'t>) -> Result<Var<'t>, NumericError> {
        x.matmul(self.w)?.add(self.b)
    }

    pub fn apply_tanh(&self, x: Var<'t>) -> Result<Var<'t>, NumericError> {
        self.apply(x)?.tanh()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoattentionParams {
    /// The map applied to `softmax(A) · C_q`, `2h → 2h` with tanh.
    pub f: Affine,
    /// Pooling scorer `4h → 2h → 1`.
    pub pool_hidden: Affine,
    pub pool_out: Affine,
    /// Pooled `4h` row down to the `2h` node width, with tanh.
    pub project: Affine,
    /// Extra `2h → 2h` tanh map for nodes pooled from a token span.
    pub span: Affine,
}

#[derive(Clone, Copy, Debug)]
pub struct CoattentionVars<'t> {
    pub f: AffineVars<'t>,
    pub pool_hidden: AffineVars<'t>,
    pub pool_out: AffineVars<'t>,
    pub project: AffineVars<'t>,
    pub span: AffineVars<'t>,
}

impl CoattentionParams {
    /// `width` is the encoder output width `2h`.
    pub fn register(store: &mut ParamStore, width: usize, rng: &mut impl Rng) -> Result<Self, NumericError> {
        Ok(Self {
            f: Affine::register(store, "coatt.f", width, width, rng)?,
            pool_hidden: Affine::register(store, "coatt.pool_hidden", 2 * width, width, rng)?,
            pool_out: Affine::register(store, "coatt.pool_out", width, 1, rng)?,
            project: Affine::register(store, "coatt.project", 2 * width, width, rng)?,
            span: Affine::register(store, "coatt.span", width, width, rng)?,
        })
    }

    pub fn bind<'t>(&self, b: &Bound<'t>) -> CoattentionVars<'t> {
        CoattentionVars {
            f: self.f.bind(b),
            pool_hidden: self.pool_hidden.bind(b),
            pool_out: self.pool_out.bind(b),
            project: self.project.bind(b),
            span: self.span.bind(b),
        }
    }
}

/// `S_ca = [C_s ‖ D_s]` for a sequence `hs` (`l_s × 2h`) against the query
/// `hq` (`l_q × 2h`); output is `l_s × 4h`.
pub fn coattention<'t>(hs: Var<'t>, hq: Var<'t>, p: &CoattentionVars<'t>) -> Result<Var<'t>, NumericError> {
    let width = p.f.w.shape()[0];
    if hs.shape()[1] != width || hq.shape()[1] != width {
        return Err(NumericError::Shape {
            op: "coattention",
            lhs: hs.shape(),
            rhs: hq.shape(),
        });
    }
    let a = hs.matmul(hq.t()?)?;
    let c_q = a.t()?.softmax_rows()?.matmul(hs)?;
    let attn = a.softmax_rows()?;
    let c_s = attn.matmul(hq)?;
    let d_s = p.f.apply_tanh(attn.matmul(c_q)?)?;
    hs.tape().concat_cols(&[c_s, d_s])
}

/// Attention weights over the rows of `s` (`l × 1`, summing to one).
pub fn pool_weights<'t>(s: Var<'t>, p: &CoattentionVars<'t>) -> Result<Var<'t>, NumericError> {
    let scores = p.pool_out.apply(p.pool_hidden.apply_tanh(s)?)?;
    scores.t()?.softmax_rows()?.t()
}

/// `aᵀ · S` before projection (`1 × 4h`).
pub fn pool_raw<'t>(s: Var<'t>, p: &CoattentionVars<'t>) -> Result<Var<'t>, NumericError> {
    pool_weights(s, p)?.t()?.matmul(s)
}

/// The node row: pooled and projected to `1 × 2h`.
pub fn self_pool<'t>(s: Var<'t>, p: &CoattentionVars<'t>) -> Result<Var<'t>, NumericError> {
    p.project.apply_tanh(pool_raw(s, p)?)
}

/// Pools rows `start..=end` of `s` and applies the span map.
pub fn span_pool<'t>(s: Var<'t>, span: (usize, usize), p: &CoattentionVars<'t>) -> Result<Var<'t>, NumericError> {
    p.span.apply_tanh(self_pool(s.slice_rows(span.0, span.1 + 1)?, p)?)
}
