//! Sequence encoders: linear projection, sinusoidal positions, Bi-GRU.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::{Graph, Matrix, ParamId, ParamStore, Var};

/// `PE[p, 2i] = sin(p / 10000^(2i/D))`, `PE[p, 2i+1] = cos(p / 10000^(2i/D))`.
pub fn positional_encoding(length: usize, dim: usize) -> Result<Matrix> {
    if dim % 2 != 0 {
        return Err(Error::Validation(format!("positional encoding needs an even width, got {dim}")));
    }
    Ok(Matrix::from_fn(length, dim, |p, j| {
        let i = (j / 2) as f64;
        let angle = p as f64 / 10000f64.powf(2.0 * i / dim as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    }))
}

/// One GRU direction. The update gate `z` keeps the old state:
/// `h' = (1 − z)⊙h̃ + z⊙h`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub input: usize,
    pub hidden: usize,
    pub w_z: ParamId,
    pub w_r: ParamId,
    pub w_h: ParamId,
    pub u_z: ParamId,
    pub u_r: ParamId,
    pub u_h: ParamId,
    pub b_z: ParamId,
    pub b_r: ParamId,
    pub b_h: ParamId,
}

impl GruParams {
    pub fn register(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(GruParams {
            input,
            hidden,
            w_z: store.add_glorot(format!("{prefix}.w_z"), input, hidden, rng)?,
            w_r: store.add_glorot(format!("{prefix}.w_r"), input, hidden, rng)?,
            w_h: store.add_glorot(format!("{prefix}.w_h"), input, hidden, rng)?,
            u_z: store.add_glorot(format!("{prefix}.u_z"), hidden, hidden, rng)?,
            u_r: store.add_glorot(format!("{prefix}.u_r"), hidden, hidden, rng)?,
            u_h: store.add_glorot(format!("{prefix}.u_h"), hidden, hidden, rng)?,
            b_z: store.add_zeros(format!("{prefix}.b_z"), 1, hidden)?,
            b_r: store.add_zeros(format!("{prefix}.b_r"), 1, hidden)?,
            b_h: store.add_zeros(format!("{prefix}.b_h"), 1, hidden)?,
        })
    }

    /// Input projections `x W + b` for the three gates.
    fn project(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<[Var; 3]> {
        let mut out = [x; 3];
        for (slot, (w, b)) in out
            .iter_mut()
            .zip([(self.w_z, self.b_z), (self.w_r, self.b_r), (self.w_h, self.b_h)])
        {
            let wv = g.param(store, w);
            let bv = g.param(store, b);
            let xw = g.matmul(x, wv)?;
            *slot = g.add_row(xw, bv)?;
        }
        Ok(out)
    }

    fn step(&self, g: &mut Graph, store: &ParamStore, [xz, xr, xh]: [Var; 3], h: Var) -> Result<Var> {
        let u_z = g.param(store, self.u_z);
        let u_r = g.param(store, self.u_r);
        let u_h = g.param(store, self.u_h);
        let hz = g.matmul(h, u_z)?;
        let z_in = g.add(xz, hz)?;
        let z = g.sigmoid(z_in);
        let hr = g.matmul(h, u_r)?;
        let r_in = g.add(xr, hr)?;
        let r = g.sigmoid(r_in);
        let rh = g.mul(r, h)?;
        let rhu = g.matmul(rh, u_h)?;
        let c_in = g.add(xh, rhu)?;
        let cand = g.tanh(c_in);
        // (1 − z)⊙h̃ + z⊙h = h̃ + z⊙(h − h̃)
        let diff = g.sub(h, cand)?;
        let gated = g.mul(z, diff)?;
        g.add(cand, gated)
    }

    /// One GRU update for a batch of rows: `x` is `B × input`, `h` is `B × hidden`.
    pub fn cell(&self, g: &mut Graph, store: &ParamStore, x: Var, h: Var) -> Result<Var> {
        let (xr, xc) = g.value(x).shape();
        let (hr, hc) = g.value(h).shape();
        if xc != self.input || hc != self.hidden || xr != hr {
            return Err(Error::shape("gru_cell", (xr, xc), (hr, hc)));
        }
        let proj = self.project(g, store, x)?;
        self.step(g, store, proj, h)
    }
}

/// Forward and backward GRUs whose hidden states are concatenated per step.
#[derive(Debug, Clone, PartialEq)]
pub struct BiGru {
    pub forward: GruParams,
    pub backward: GruParams,
}

impl BiGru {
    /// `output` must be even; each direction gets `output / 2` units.
    pub fn register(store: &mut ParamStore, prefix: &str, input: usize, output: usize, rng: &mut impl Rng) -> Result<Self> {
        if output % 2 != 0 || output == 0 {
            return Err(Error::Validation(format!("Bi-GRU output width must be even and positive, got {output}")));
        }
        Ok(BiGru {
            forward: GruParams::register(store, &format!("{prefix}.fwd"), input, output / 2, rng)?,
            backward: GruParams::register(store, &format!("{prefix}.bwd"), input, output / 2, rng)?,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.forward.hidden + self.backward.hidden
    }

    /// Runs every sequence (each `L × input`, equal `L`) as one batch and
    /// returns one `L × output` matrix per sequence.
    pub fn run(&self, g: &mut Graph, store: &ParamStore, seqs: &[Var]) -> Result<Vec<Var>> {
        let Some(&first) = seqs.first() else {
            return Ok(Vec::new());
        };
        let len = g.value(first).rows();
        if len == 0 {
            return Err(Error::Validation("Bi-GRU over an empty sequence".into()));
        }
        for &s in seqs {
            let shape = g.value(s).shape();
            if shape != (len, self.forward.input) {
                return Err(Error::shape("bigru", (len, self.forward.input), shape));
            }
        }
        let batch = seqs.len();
        let stacked = if batch == 1 { first } else { g.concat_rows(seqs)? };

        let fwd = self.direction(g, store, &self.forward, stacked, batch, len, false)?;
        let bwd = self.direction(g, store, &self.backward, stacked, batch, len, true)?;

        let mut out = Vec::with_capacity(batch);
        for b in 0..batch {
            let rows: Vec<usize> = (0..len).map(|t| t * batch + b).collect();
            let f = if batch == 1 { fwd } else { g.gather_rows(fwd, &rows)? };
            let r = if batch == 1 { bwd } else { g.gather_rows(bwd, &rows)? };
            out.push(g.concat_cols(&[f, r])?);
        }
        Ok(out)
    }

    /// Returns the hidden states as `(L·B) × H`, row `t·B + b` holding step `t`
    /// of sequence `b`, in original time order for both directions.
    #[allow(clippy::too_many_arguments)]
    fn direction(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        cell: &GruParams,
        stacked: Var,
        batch: usize,
        len: usize,
        reverse: bool,
    ) -> Result<Var> {
        let proj = cell.project(g, store, stacked)?;
        let mut h = g.constant(Matrix::zeros(batch, cell.hidden));
        let mut states = vec![h; len];
        let order: Vec<usize> = if reverse { (0..len).rev().collect() } else { (0..len).collect() };
        for t in order {
            let rows: Vec<usize> = (0..batch).map(|b| b * len + t).collect();
            let mut x_t = [proj[0]; 3];
            for (p, &full) in x_t.iter_mut().zip(&proj) {
                *p = g.gather_rows(full, &rows)?;
            }
            h = cell.step(g, store, x_t, h)?;
            states[t] = h;
        }
        g.concat_rows(&states)
    }
}

/// Projection to `dim`, positional encoding, then a stack of Bi-GRU layers.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub input: usize,
    pub dim: usize,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub layers: Vec<BiGru>,
}

impl EncoderParams {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        dim: usize,
        layers: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if dim % 2 != 0 {
            return Err(Error::Validation(format!("encoder width D must be even, got {dim}")));
        }
        let proj_w = store.add_glorot(format!("{prefix}.proj.w"), input, dim, rng)?;
        let proj_b = store.add_zeros(format!("{prefix}.proj.b"), 1, dim)?;
        let layers = (0..layers.max(1))
            .map(|l| BiGru::register(store, &format!("{prefix}.gru{l}"), dim, dim, rng))
            .collect::<Result<_>>()?;
        Ok(EncoderParams {
            input,
            dim,
            proj_w,
            proj_b,
            layers,
        })
    }

    /// Encodes equal-length raw sequences with shared parameters.
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, raws: &[Var]) -> Result<Vec<Var>> {
        let Some(&first) = raws.first() else {
            return Ok(Vec::new());
        };
        let len = g.value(first).rows();
        let pe = g.constant(positional_encoding(len, self.dim)?);
        let w = g.param(store, self.proj_w);
        let b = g.param(store, self.proj_b);
        let mut seqs = Vec::with_capacity(raws.len());
        for &raw in raws {
            let shape = g.value(raw).shape();
            if shape.1 != self.input || shape.0 != len {
                return Err(Error::shape("encode", (len, self.input), shape));
            }
            let xw = g.matmul(raw, w)?;
            let projected = g.add_row(xw, b)?;
            seqs.push(g.add(projected, pe)?);
        }
        for layer in &self.layers {
            seqs = layer.run(g, store, &seqs)?;
        }
        Ok(seqs)
    }
}
