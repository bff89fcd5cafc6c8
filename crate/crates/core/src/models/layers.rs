use rand::Rng;

use crate::autodiff::{ParamId, Params, Tape, Var};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
struct ResidualBlock {
    dilation: usize,
    conv_k: ParamId,
    conv_b: ParamId,
    res_w: ParamId,
    res_b: ParamId,
    skip_w: ParamId,
    skip_b: ParamId,
}

/// WaveNet-style stack: 1x1 input projection, then per dilation a causal
/// convolution to `2D` channels, gated activation, and 1x1 residual and skip
/// projections. Output is `relu(linear(relu(sum of skips)))`, shape `[T, D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TcnStack {
    in_w: ParamId,
    in_b: ParamId,
    blocks: Vec<ResidualBlock>,
    out_w: ParamId,
    out_b: ParamId,
}

impl TcnStack {
    pub fn new<R: Rng>(
        params: &mut Params,
        rng: &mut R,
        input_channels: usize,
        width: usize,
        kernel: usize,
        dilations: &[usize],
    ) -> TcnStack {
        let d = width;
        let in_w = params.add_uniform("tcn.in.w", &[input_channels, d], input_channels, rng);
        let in_b = params.add_zeros("tcn.in.b", &[d]);
        let blocks = dilations
            .iter()
            .enumerate()
            .map(|(i, &dilation)| ResidualBlock {
                dilation,
                conv_k: params.add_uniform(format!("tcn.{i}.conv.k"), &[kernel, d, 2 * d], kernel * d, rng),
                conv_b: params.add_zeros(format!("tcn.{i}.conv.b"), &[2 * d]),
                res_w: params.add_uniform(format!("tcn.{i}.res.w"), &[d, d], d, rng),
                res_b: params.add_zeros(format!("tcn.{i}.res.b"), &[d]),
                skip_w: params.add_uniform(format!("tcn.{i}.skip.w"), &[d, d], d, rng),
                skip_b: params.add_zeros(format!("tcn.{i}.skip.b"), &[d]),
            })
            .collect();
        let out_w = params.add_uniform("tcn.out.w", &[d, d], d, rng);
        let out_b = params.add_zeros("tcn.out.b", &[d]);
        TcnStack {
            in_w,
            in_b,
            blocks,
            out_w,
            out_b,
        }
    }

    pub fn forward<'a>(&self, tape: &mut Tape<'a>, p: &'a Params, x: Var) -> Result<Var> {
        let (w, b) = (tape.param(p, self.in_w), tape.param(p, self.in_b));
        let mut h = tape.linear(x, w, b)?;
        let mut skips: Option<Var> = None;
        for block in &self.blocks {
            let (k, kb) = (tape.param(p, block.conv_k), tape.param(p, block.conv_b));
            let z = tape.conv1d_causal(h, k, kb, block.dilation)?;
            let g = tape.gated_activation(z)?;
            let (rw, rb) = (tape.param(p, block.res_w), tape.param(p, block.res_b));
            let res = tape.linear(g, rw, rb)?;
            let (sw, sb) = (tape.param(p, block.skip_w), tape.param(p, block.skip_b));
            let skip = tape.linear(g, sw, sb)?;
            h = tape.add(h, res)?;
            skips = Some(match skips {
                None => skip,
                Some(acc) => tape.add(acc, skip)?,
            });
        }
        let s = match skips {
            Some(s) => tape.relu(s),
            None => tape.relu(h),
        };
        let (ow, ob) = (tape.param(p, self.out_w), tape.param(p, self.out_b));
        let out = tape.linear(s, ow, ob)?;
        Ok(tape.relu(out))
    }
}

/// Post-norm encoder layer: `x = LN(x + MHA(x))`, `x = LN(x + FFN(x))`
/// with a `D -> 2D -> D` ReLU feed-forward.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    heads: usize,
    q: (ParamId, ParamId),
    k: (ParamId, ParamId),
    v: (ParamId, ParamId),
    o: (ParamId, ParamId),
    ln1: (ParamId, ParamId),
    ff1: (ParamId, ParamId),
    ff2: (ParamId, ParamId),
    ln2: (ParamId, ParamId),
}

impl EncoderLayer {
    pub fn new<R: Rng>(params: &mut Params, rng: &mut R, prefix: &str, width: usize, heads: usize) -> EncoderLayer {
        let d = width;
        let mut lin = |name: &str, i: usize, o: usize, params: &mut Params| {
            (
                params.add_uniform(format!("{prefix}.{name}.w"), &[i, o], i, rng),
                params.add_zeros(format!("{prefix}.{name}.b"), &[o]),
            )
        };
        let q = lin("q", d, d, params);
        let k = lin("k", d, d, params);
        let v = lin("v", d, d, params);
        let o = lin("o", d, d, params);
        let ff1 = lin("ff1", d, 2 * d, params);
        let ff2 = lin("ff2", 2 * d, d, params);
        let mut norm = |name: &str| {
            (
                params.add_ones(format!("{prefix}.{name}.g"), &[d]),
                params.add_zeros(format!("{prefix}.{name}.b"), &[d]),
            )
        };
        let ln1 = norm("ln1");
        let ln2 = norm("ln2");
        EncoderLayer {
            heads,
            q,
            k,
            v,
            o,
            ln1,
            ff1,
            ff2,
            ln2,
        }
    }

    fn linear<'a>(tape: &mut Tape<'a>, p: &'a Params, x: Var, (w, b): (ParamId, ParamId)) -> Result<Var> {
        let (w, b) = (tape.param(p, w), tape.param(p, b));
        tape.linear(x, w, b)
    }

    pub fn forward<'a>(&self, tape: &mut Tape<'a>, p: &'a Params, x: Var, attention: &mut Vec<Var>) -> Result<Var> {
        let d = tape.value(x).cols();
        let dh = d / self.heads;
        let q = Self::linear(tape, p, x, self.q)?;
        let k = Self::linear(tape, p, x, self.k)?;
        let v = Self::linear(tape, p, x, self.v)?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale);
            let weights = tape.softmax(scores, 1)?;
            attention.push(weights);
            heads.push(tape.matmul(weights, vh)?);
        }
        let merged = if heads.len() == 1 { heads[0] } else { tape.concat(&heads, 1)? };
        let attended = Self::linear(tape, p, merged, self.o)?;
        let x = tape.add(x, attended)?;
        let (g, b) = (tape.param(p, self.ln1.0), tape.param(p, self.ln1.1));
        let x = tape.layer_norm(x, g, b)?;
        let f = Self::linear(tape, p, x, self.ff1)?;
        let f = tape.relu(f);
        let f = Self::linear(tape, p, f, self.ff2)?;
        let x2 = tape.add(x, f)?;
        let (g, b) = (tape.param(p, self.ln2.0), tape.param(p, self.ln2.1));
        tape.layer_norm(x2, g, b)
    }
}
