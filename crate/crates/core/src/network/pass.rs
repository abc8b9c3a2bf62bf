//! Forward evaluation, forward-mode tangent propagation and the reverse pass
//! through both chains.
//!
//! For layer `k` with weights `W_k` the primal and tangent recurrences are
//!
//! ```text
//! z_k = W_k h_{k-1} + b_k          h_k = s(z_k)
//! z'_k = W_k h'_{k-1}              h'_k = s'(z_k) * z'_k
//! ```
//!
//! with the final layer left linear. The reverse pass walks the same graph
//! backwards; the tangent chain contributes `s''(z_k) * z'_k` terms to the
//! adjoint of `z_k`.

use alloc::vec;
use alloc::vec::Vec;

use super::params::MlpParams;
use crate::error::{Error, Result};
use crate::grid::{gemm_nn, gemm_tn, transpose_buf, Grid2D};

/// Rows evaluated together by the trace-free paths. Rows are independent,
/// so the chunk size never changes results.
const CHUNK_ROWS: usize = 2048;

/// Network outputs together with one tangent grid per input direction.
#[derive(Debug, Clone, PartialEq)]
pub struct DualBatch {
    pub primal: Grid2D,
    pub tangents: Vec<Grid2D>,
}

impl DualBatch {
    pub fn batch(&self) -> usize {
        self.primal.rows()
    }

    pub fn directions(&self) -> usize {
        self.tangents.len()
    }
}

/// Intermediate values kept by [`forward_trace`] for the reverse pass.
#[derive(Debug, Clone)]
pub struct Trace {
    batch: usize,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<f64>>,
    /// Hidden activations.
    post: Vec<Vec<f64>>,
    /// `tan_pre[k][d]`: tangent of `z_k` along direction `d`.
    tan_pre: Vec<Vec<Vec<f64>>>,
    tan_post: Vec<Vec<Vec<f64>>>,
}

fn check_inputs(params: &MlpParams, inputs: &Grid2D, tangents: &[Grid2D]) -> Result<()> {
    let width = params.encoded_width();
    if inputs.channels() != 1 || inputs.cols() != width {
        return Err(Error::ShapeMismatch {
            op: "forward",
            left: inputs.shape(),
            right: (inputs.rows(), width, 1),
        });
    }
    for t in tangents {
        inputs.check_same("forward_dual tangents", t)?;
    }
    Ok(())
}

/// `out = x W^T + b` for a `rows x in` buffer.
fn affine(
    x: &[f64],
    wt: &[f64],
    bias: Option<&[f64]>,
    rows: usize,
    fan_in: usize,
    fan_out: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; rows * fan_out];
    if let Some(b) = bias {
        for row in out.chunks_exact_mut(fan_out) {
            row.copy_from_slice(b);
        }
    }
    gemm_nn(x, wt, &mut out, rows, fan_in, fan_out);
    out
}

fn transposed_weights(params: &MlpParams) -> Vec<Vec<f64>> {
    params
        .layers
        .iter()
        .map(|l| transpose_buf(l.weight.data(), l.fan_out(), l.fan_in()))
        .collect()
}

/// Plain evaluation of `f_theta` on already-encoded inputs (`batch x D_enc`).
pub fn forward(params: &MlpParams, inputs: &Grid2D) -> Result<Grid2D> {
    Ok(forward_dual(params, inputs, &[])?.primal)
}

/// Evaluates `f_theta` and pushes each input tangent through it. Tangent `d`
/// of the result holds the directional derivative of every output along
/// `input_tangents[d]`; with identity seeds these are the Jacobian columns.
pub fn forward_dual(
    params: &MlpParams,
    inputs: &Grid2D,
    input_tangents: &[Grid2D],
) -> Result<DualBatch> {
    check_inputs(params, inputs, input_tangents)?;
    let batch = inputs.rows();
    let out_dim = params.output_dim();
    let dirs = input_tangents.len();
    let wts = transposed_weights(params);
    let act = params.activation;
    let mut primal = Vec::with_capacity(batch * out_dim);
    let mut tangents: Vec<Vec<f64>> = (0..dirs)
        .map(|_| Vec::with_capacity(batch * out_dim))
        .collect();
    let width_in = params.encoded_width();

    let mut start = 0;
    while start < batch {
        let rows = CHUNK_ROWS.min(batch - start);
        let span = start * width_in..(start + rows) * width_in;
        let mut h = inputs.data()[span.clone()].to_vec();
        let mut ht: Vec<Vec<f64>> = input_tangents
            .iter()
            .map(|t| t.data()[span.clone()].to_vec())
            .collect();
        let last = params.layers.len() - 1;
        for (k, layer) in params.layers.iter().enumerate() {
            let (fo, fi) = (layer.fan_out(), layer.fan_in());
            let mut z = affine(&h, &wts[k], Some(&layer.bias), rows, fi, fo);
            let mut zt: Vec<Vec<f64>> = ht
                .iter()
                .map(|t| affine(t, &wts[k], None, rows, fi, fo))
                .collect();
            if k < last {
                for (j, zj) in z.iter_mut().enumerate() {
                    let (v, d1, _) = act.eval(*zj);
                    *zj = v;
                    for t in zt.iter_mut() {
                        t[j] *= d1;
                    }
                }
            }
            h = z;
            ht = zt;
        }
        primal.extend_from_slice(&h);
        for (dst, src) in tangents.iter_mut().zip(ht) {
            dst.extend_from_slice(&src);
        }
        start += rows;
    }
    Ok(DualBatch {
        primal: Grid2D::from_vec(batch, out_dim, 1, primal)?,
        tangents: tangents
            .into_iter()
            .map(|t| Grid2D::from_vec(batch, out_dim, 1, t))
            .collect::<Result<_>>()?,
    })
}

/// Like [`forward_dual`] but keeps every intermediate for [`backward_trace`].
/// Works on the whole batch at once.
pub fn forward_trace(
    params: &MlpParams,
    inputs: &Grid2D,
    input_tangents: &[Grid2D],
) -> Result<(DualBatch, Trace)> {
    check_inputs(params, inputs, input_tangents)?;
    let batch = inputs.rows();
    let wts = transposed_weights(params);
    let act = params.activation;
    let last = params.layers.len() - 1;
    let mut trace = Trace {
        batch,
        pre: Vec::with_capacity(last),
        post: Vec::with_capacity(last),
        tan_pre: Vec::with_capacity(last),
        tan_post: Vec::with_capacity(last),
    };
    let mut out = None;
    for (k, layer) in params.layers.iter().enumerate() {
        let (fo, fi) = (layer.fan_out(), layer.fan_in());
        let (h, ht): (&[f64], Vec<&[f64]>) = if k == 0 {
            (
                inputs.data(),
                input_tangents.iter().map(|t| t.data()).collect(),
            )
        } else {
            (
                &trace.post[k - 1],
                trace.tan_post[k - 1].iter().map(|t| t.as_slice()).collect(),
            )
        };
        let z = affine(h, &wts[k], Some(&layer.bias), batch, fi, fo);
        let zt: Vec<Vec<f64>> = ht
            .iter()
            .map(|t| affine(t, &wts[k], None, batch, fi, fo))
            .collect();
        if k < last {
            let mut a = vec![0.0; z.len()];
            let mut at: Vec<Vec<f64>> = zt.clone();
            for (j, (&zj, aj)) in z.iter().zip(a.iter_mut()).enumerate() {
                let (v, d1, _) = act.eval(zj);
                *aj = v;
                for t in at.iter_mut() {
                    t[j] *= d1;
                }
            }
            trace.pre.push(z);
            trace.post.push(a);
            trace.tan_pre.push(zt);
            trace.tan_post.push(at);
        } else {
            out = Some((z, zt, fo));
        }
    }
    let (z, zt, fo) = out.expect("output layer");
    let dual = DualBatch {
        primal: Grid2D::from_vec(batch, fo, 1, z)?,
        tangents: zt
            .into_iter()
            .map(|t| Grid2D::from_vec(batch, fo, 1, t))
            .collect::<Result<_>>()?,
    };
    Ok((dual, trace))
}

/// Parameter gradient of a loss whose adjoints with respect to the primal
/// outputs (`value_residual`) and tangent outputs (`tangent_residuals`) are
/// given. Recomputes the forward trace.
pub fn backward_sobolev(
    params: &MlpParams,
    inputs: &Grid2D,
    input_tangents: &[Grid2D],
    value_residual: &Grid2D,
    tangent_residuals: &[Grid2D],
) -> Result<MlpParams> {
    let (_, trace) = forward_trace(params, inputs, input_tangents)?;
    backward_trace(
        params,
        &trace,
        inputs,
        input_tangents,
        value_residual,
        tangent_residuals,
    )
}

/// Reverse pass over a stored trace. Batch contributions are summed in
/// ascending row order.
pub fn backward_trace(
    params: &MlpParams,
    trace: &Trace,
    inputs: &Grid2D,
    input_tangents: &[Grid2D],
    value_residual: &Grid2D,
    tangent_residuals: &[Grid2D],
) -> Result<MlpParams> {
    let batch = trace.batch;
    let out_dim = params.output_dim();
    if inputs.rows() != batch || value_residual.shape() != (batch, out_dim, 1) {
        return Err(Error::ShapeMismatch {
            op: "backward_sobolev",
            left: value_residual.shape(),
            right: (batch, out_dim, 1),
        });
    }
    if tangent_residuals.len() != input_tangents.len() {
        return Err(Error::invalid(alloc::format!(
            "backward_sobolev: {} tangent residuals for {} tangent directions",
            tangent_residuals.len(),
            input_tangents.len()
        )));
    }
    for t in tangent_residuals {
        value_residual.check_same("backward_sobolev tangent residual", t)?;
    }
    let act = params.activation;
    let mut grad = params.zeros_like();
    let mut gz = value_residual.data().to_vec();
    let mut gzt: Vec<Vec<f64>> = tangent_residuals
        .iter()
        .map(|t| t.data().to_vec())
        .collect();

    for k in (0..params.layers.len()).rev() {
        let layer = &params.layers[k];
        let (fo, fi) = (layer.fan_out(), layer.fan_in());
        let (h, ht): (&[f64], Vec<&[f64]>) = if k == 0 {
            (
                inputs.data(),
                input_tangents.iter().map(|t| t.data()).collect(),
            )
        } else {
            (
                &trace.post[k - 1],
                trace.tan_post[k - 1].iter().map(|t| t.as_slice()).collect(),
            )
        };
        let g = &mut grad.layers[k];
        gemm_tn(&gz, h, g.weight.data_mut(), batch, fo, fi);
        for (gt, t) in gzt.iter().zip(&ht) {
            gemm_tn(gt, t, g.weight.data_mut(), batch, fo, fi);
        }
        for row in gz.chunks_exact(fo) {
            for (b, &r) in g.bias.iter_mut().zip(row) {
                *b += r;
            }
        }
        if k == 0 {
            break;
        }
        // adjoints of h_{k-1} and its tangents
        let w = layer.weight.data();
        let mut ga = vec![0.0; batch * fi];
        gemm_nn(&gz, w, &mut ga, batch, fo, fi);
        let mut gat: Vec<Vec<f64>> = gzt
            .iter()
            .map(|gt| {
                let mut out = vec![0.0; batch * fi];
                gemm_nn(gt, w, &mut out, batch, fo, fi);
                out
            })
            .collect();
        // through h = s(z), h' = s'(z) z'
        let z = &trace.pre[k - 1];
        let zt = &trace.tan_pre[k - 1];
        for j in 0..z.len() {
            let (d1, d2) = act.derivatives(z[j]);
            let mut acc = ga[j] * d1;
            for (gt, t) in gat.iter_mut().zip(zt) {
                acc += gt[j] * d2 * t[j];
                gt[j] *= d1;
            }
            ga[j] = acc;
        }
        gz = ga;
        gzt = gat;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::identity_tangents;
    use crate::network::{init_params, Activation, ActivationKind, Layer, MlpArch};
    use crate::rng::Rng;

    fn small_net(kind: ActivationKind, layers: usize, width: usize, seed: u64) -> MlpParams {
        let arch = MlpArch {
            input_dim: 2,
            output_dim: 2,
            hidden_layers: layers,
            hidden_width: width,
            encoding: None,
        };
        let mut p = init_params(&arch, kind.with_omega(3.0), None, &mut Rng::new(seed)).unwrap();
        // non-zero biases so every code path is exercised
        let mut rng = Rng::new(seed + 100);
        for l in &mut p.layers {
            for b in &mut l.bias {
                *b = rng.uniform(-0.3, 0.3);
            }
        }
        p
    }

    fn points(n: usize, seed: u64) -> Grid2D {
        Grid2D::from_vec(n, 2, 1, Rng::new(seed).uniform_vec(-1.0, 1.0, 2 * n)).unwrap()
    }

    /// Independent scalar-loop forward pass.
    fn loop_forward(p: &MlpParams, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for (k, l) in p.layers.iter().enumerate() {
            let mut z = vec![0.0; l.fan_out()];
            for o in 0..l.fan_out() {
                let mut s = l.bias[o];
                for i in 0..l.fan_in() {
                    s += l.weight.get(o, i, 0) * h[i];
                }
                z[o] = if k + 1 < p.layers.len() {
                    p.activation.value(s)
                } else {
                    s
                };
            }
            h = z;
        }
        h
    }

    #[test]
    fn single_linear_layer() {
        let w = Grid2D::from_rows(&[[1.0, 2.0], [3.0, -1.0]]).unwrap();
        let p = MlpParams::from_layers(
            vec![Layer {
                weight: w,
                bias: vec![0.5, -0.5],
            }],
            Activation::Relu,
            None,
            2,
        )
        .unwrap();
        let x = Grid2D::from_rows(&[[1.0, 1.0], [-2.0, 0.5]]).unwrap();
        let y = forward(&p, &x).unwrap();
        assert_eq!(y.data(), &[3.5, 1.5, -0.5, -7.0]);
        let dual = forward_dual(&p, &x, &identity_tangents(2, 2)).unwrap();
        for row in 0..2 {
            assert_eq!(dual.tangents[0].row(row), &[1.0, 3.0]);
            assert_eq!(dual.tangents[1].row(row), &[2.0, -1.0]);
        }
    }

    #[test]
    fn zero_weights_give_bias_and_zero_tangents() {
        let mut p = small_net(ActivationKind::Tanh, 2, 8, 1);
        for l in &mut p.layers {
            l.weight = Grid2D::zeros(l.weight.rows(), l.weight.cols(), 1);
        }
        p.layers[2].bias = vec![0.25, -1.0];
        let x = points(5, 2);
        let dual = forward_dual(&p, &x, &identity_tangents(5, 2)).unwrap();
        for r in 0..5 {
            assert_eq!(dual.primal.row(r), &[0.25, -1.0]);
        }
        assert!(dual
            .tangents
            .iter()
            .all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn forward_matches_loop_oracle() {
        let p = small_net(ActivationKind::Sine, 2, 16, 3);
        let x = points(5, 4);
        let y = forward(&p, &x).unwrap();
        for r in 0..5 {
            let want = loop_forward(&p, x.row(r));
            for (a, b) in y.row(r).iter().zip(&want) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn dual_primal_is_bitwise_forward() {
        for kind in ActivationKind::ALL {
            let p = small_net(kind, 3, 12, 5);
            let x = points(9, 6);
            let plain = forward(&p, &x).unwrap();
            let dual = forward_dual(&p, &x, &identity_tangents(9, 2)).unwrap();
            assert_eq!(plain, dual.primal);
            let (traced, _) = forward_trace(&p, &x, &identity_tangents(9, 2)).unwrap();
            assert_eq!(traced, dual);
        }
    }

    #[test]
    fn tangents_match_finite_differences() {
        let p = small_net(ActivationKind::Sine, 3, 24, 7);
        let x = points(10, 8);
        let dual = forward_dual(&p, &x, &identity_tangents(10, 2)).unwrap();
        let h = 1e-5;
        for r in 0..10 {
            for d in 0..2 {
                let mut hi = x.row(r).to_vec();
                let mut lo = hi.clone();
                hi[d] += h;
                lo[d] -= h;
                let fh = loop_forward(&p, &hi);
                let fl = loop_forward(&p, &lo);
                for c in 0..2 {
                    let fd = (fh[c] - fl[c]) / (2.0 * h);
                    let an = dual.tangents[d].get(r, c, 0);
                    assert!(
                        (fd - an).abs() / an.abs().max(1.0) < 1e-6,
                        "fd {fd} an {an}"
                    );
                }
            }
        }
    }

    #[test]
    fn linear_homogeneity() {
        let mut rng = Rng::new(1);
        let w = Grid2D::from_vec(3, 2, 1, rng.uniform_vec(-1.0, 1.0, 6)).unwrap();
        let p = MlpParams::from_layers(
            vec![Layer {
                weight: w,
                bias: vec![0.0; 3],
            }],
            Activation::Relu,
            None,
            2,
        )
        .unwrap();
        let x = points(4, 2);
        let y = forward(&p, &x).unwrap();
        let y2 = forward(&p, &x.scale(2.5)).unwrap();
        for (a, b) in y.data().iter().zip(y2.data()) {
            assert!((2.5 * a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn chunked_forward_is_row_independent() {
        let p = small_net(ActivationKind::Softplus, 2, 8, 9);
        let x = points(CHUNK_ROWS + 37, 10);
        let all = forward(&p, &x).unwrap();
        let tail_idx: Vec<usize> = (CHUNK_ROWS..CHUNK_ROWS + 37).collect();
        let tail = forward(&p, &x.gather_rows(&tail_idx)).unwrap();
        assert_eq!(all.gather_rows(&tail_idx), tail);
    }

    #[test]
    fn zero_residuals_give_zero_gradient() {
        let p = small_net(ActivationKind::Sine, 2, 8, 11);
        let x = points(6, 12);
        let seeds = identity_tangents(6, 2);
        let zero = Grid2D::zeros(6, 2, 1);
        let g = backward_sobolev(&p, &x, &seeds, &zero, &[zero.clone(), zero.clone()]).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_tangent_residuals_reduce_to_plain_backprop() {
        let p = small_net(ActivationKind::Tanh, 2, 8, 13);
        let x = points(6, 14);
        let gy = Grid2D::from_vec(6, 2, 1, Rng::new(15).uniform_vec(-1.0, 1.0, 12)).unwrap();
        let zero = Grid2D::zeros(6, 2, 1);
        let with_t =
            backward_sobolev(&p, &x, &identity_tangents(6, 2), &gy, &[zero.clone(), zero]).unwrap();
        let plain = backward_sobolev(&p, &x, &[], &gy, &[]).unwrap();
        assert_eq!(with_t.to_flat(), plain.to_flat());
    }

    #[test]
    fn shape_errors() {
        let p = small_net(ActivationKind::Relu, 1, 4, 1);
        assert!(forward(&p, &Grid2D::zeros(3, 3, 1)).is_err());
        let x = points(3, 1);
        assert!(forward_dual(&p, &x, &[Grid2D::zeros(2, 2, 1)]).is_err());
        let gy = Grid2D::zeros(3, 2, 1);
        assert!(backward_sobolev(&p, &x, &identity_tangents(3, 2), &gy, &[]).is_err());
    }
}
