//! Valid 2-D cross-correlation (stride 1, no padding) and its two gradients.
//!
//! Everything is built on three per-plane primitives so the master, the
//! workers, and the single-process path all run the *same* inner loops in the
//! *same* accumulation order. That is what makes distributed results
//! bit-identical to local ones: output maps (forward, kernel gradients) and
//! input channels (data gradients) are computed independently per plane, so
//! partitioning work across devices never reorders a floating-point sum.

use crate::tensor::{KernelBank, Tensor4, TensorError};

/// Output spatial size of a valid convolution, or an error naming both shapes.
pub fn conv_output_hw(
    input: (usize, usize, usize, usize),
    kernel: (usize, usize, usize, usize),
) -> Result<(usize, usize), TensorError> {
    let (_, ic, ih, iw) = input;
    let (_, kc, kh, kw) = kernel;
    if ic != kc {
        return Err(TensorError::Dimension(format!(
            "input channels {ic} != kernel channels {kc} (input {input:?}, kernel {kernel:?})"
        )));
    }
    if kh > ih || kw > iw {
        return Err(TensorError::Dimension(format!(
            "kernel {kh}x{kw} larger than input {ih}x{iw} (input {input:?}, kernel {kernel:?})"
        )));
    }
    Ok((ih - kh + 1, iw - kw + 1))
}

/// Forward plane: output map `j` for sample `ni`, written into `out`
/// (`oh`·`ow` values). Accumulates over (channel, ky, kx) in fixed order.
pub fn forward_plane_into(input: &Tensor4, ni: usize, bank: &KernelBank, j: usize, out: &mut [f64]) {
    let (_, ic, ih, iw) = input.dims();
    let (_, _, kh, kw) = bank.dims();
    let oh = ih - kh + 1;
    let ow = iw - kw + 1;
    debug_assert_eq!(out.len(), oh * ow);
    out.fill(0.0);
    for ci in 0..ic {
        let plane = input.plane(ni, ci);
        for p in 0..kh {
            let krow = bank.row(j, ci, p);
            for (q, &k) in krow.iter().enumerate() {
                for oy in 0..oh {
                    let in_row = &plane[(oy + p) * iw + q..(oy + p) * iw + q + ow];
                    let out_row = &mut out[oy * ow..(oy + 1) * ow];
                    for (o, &v) in out_row.iter_mut().zip(in_row) {
                        *o += k * v;
                    }
                }
            }
        }
    }
}

/// Kernel-gradient plane: gradient of kernel `j` given its output-map
/// gradient at channel `jg` of `grad_out`. `out` holds `channels`·`kh`·`kw`
/// values. Accumulates over (sample, oy) in fixed order; the inner dot over
/// `ox` uses a fixed four-lane split so results do not depend on context.
pub fn backward_kernel_map_into(
    input: &Tensor4,
    grad_out: &Tensor4,
    jg: usize,
    kh: usize,
    kw: usize,
    out: &mut [f64],
) {
    let (n, ic, _, iw) = input.dims();
    let (_, _, oh, ow) = grad_out.dims();
    debug_assert_eq!(out.len(), ic * kh * kw);
    out.fill(0.0);
    for ni in 0..n {
        for oy in 0..oh {
            let g_row = {
                let gplane = grad_out.plane(ni, jg);
                &gplane[oy * ow..(oy + 1) * ow]
            };
            for ci in 0..ic {
                let plane = input.plane(ni, ci);
                for p in 0..kh {
                    let in_row = &plane[(oy + p) * iw..(oy + p) * iw + iw];
                    let base = (ci * kh + p) * kw;
                    for q in 0..kw {
                        out[base + q] += dot(g_row, &in_row[q..q + ow]);
                    }
                }
            }
        }
    }
}

/// Data-gradient plane: gradient of input channel `ci` for sample `ni`, i.e.
/// the full correlation of `grad_out` with channel `ci` of every kernel.
/// `bank` must carry all output maps; `ci` indexes its (possibly sliced)
/// channel axis. Accumulates over (map, oy, ky, kx) in fixed order.
pub fn backward_data_plane_into(
    bank: &KernelBank,
    grad_out: &Tensor4,
    ni: usize,
    ci: usize,
    out: &mut [f64],
) {
    let (maps, _, kh, kw) = bank.dims();
    let (_, _, oh, ow) = grad_out.dims();
    let iw = ow + kw - 1;
    debug_assert_eq!(out.len(), (oh + kh - 1) * iw);
    out.fill(0.0);
    for j in 0..maps {
        let gplane = grad_out.plane(ni, j);
        for oy in 0..oh {
            let g_row = &gplane[oy * ow..(oy + 1) * ow];
            for p in 0..kh {
                let krow = bank.row(j, ci, p);
                let out_row = &mut out[(oy + p) * iw..(oy + p) * iw + iw];
                for (q, &k) in krow.iter().enumerate() {
                    let dst = &mut out_row[q..q + ow];
                    for (o, &g) in dst.iter_mut().zip(g_row) {
                        *o += k * g;
                    }
                }
            }
        }
    }
}

/// Dot product with a fixed four-accumulator reduction order.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let (x, y) = (&a[i * 4..i * 4 + 4], &b[i * 4..i * 4 + 4]);
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Valid cross-correlation of every kernel with every sample:
/// (n, ic, ih, iw) ⊛ (maps, ic, kh, kw) → (n, maps, ih−kh+1, iw−kw+1).
pub fn conv2d_forward(input: &Tensor4, bank: &KernelBank) -> Result<Tensor4, TensorError> {
    let (oh, ow) = conv_output_hw(input.dims(), bank.dims())?;
    let n = input.batch();
    let maps = bank.maps();
    let mut out = Tensor4::zeros(n, maps, oh, ow)?;
    for ni in 0..n {
        for j in 0..maps {
            forward_plane_into(input, ni, bank, j, out.plane_mut(ni, j));
        }
    }
    Ok(out)
}

/// Gradient with respect to the kernels. `grad_out` channel `j` is the
/// gradient of output map `j`; the bank shape is (grad_out channels, input
/// channels, kh, kw).
pub fn conv2d_backward_kernels(
    input: &Tensor4,
    grad_out: &Tensor4,
    kh: usize,
    kw: usize,
) -> Result<KernelBank, TensorError> {
    check_backward_shapes(input.dims(), grad_out.dims(), kh, kw)?;
    let maps = grad_out.channels();
    let ic = input.channels();
    let mut bank = KernelBank::zeros(maps, ic, kh, kw)?;
    let klen = ic * kh * kw;
    for j in 0..maps {
        let grads = &mut bank.data_mut()[j * klen..(j + 1) * klen];
        backward_kernel_map_into(input, grad_out, j, kh, kw, grads);
    }
    Ok(bank)
}

/// Gradient with respect to the input: full correlation of `grad_out` with
/// the bank, shaped (n, bank channels, oh+kh−1, ow+kw−1).
pub fn conv2d_backward_data(bank: &KernelBank, grad_out: &Tensor4) -> Result<Tensor4, TensorError> {
    let (maps, bc, kh, kw) = bank.dims();
    let (n, gc, oh, ow) = grad_out.dims();
    if maps != gc {
        return Err(TensorError::Dimension(format!(
            "bank has {maps} maps but grad_out has {gc} channels"
        )));
    }
    let mut out = Tensor4::zeros(n, bc, oh + kh - 1, ow + kw - 1)?;
    for ni in 0..n {
        for ci in 0..bc {
            backward_data_plane_into(bank, grad_out, ni, ci, out.plane_mut(ni, ci));
        }
    }
    Ok(out)
}

/// Both convolution gradients at once.
pub fn conv2d_backward(
    input: &Tensor4,
    bank: &KernelBank,
    grad_out: &Tensor4,
) -> Result<(Tensor4, KernelBank), TensorError> {
    let grad_input = conv2d_backward_data(bank, grad_out)?;
    let (_, _, kh, kw) = bank.dims();
    let grad_kernels = conv2d_backward_kernels(input, grad_out, kh, kw)?;
    Ok((grad_input, grad_kernels))
}

fn check_backward_shapes(
    input: (usize, usize, usize, usize),
    grad: (usize, usize, usize, usize),
    kh: usize,
    kw: usize,
) -> Result<(), TensorError> {
    let (n, _, ih, iw) = input;
    let (gn, _, oh, ow) = grad;
    if n != gn {
        return Err(TensorError::Dimension(format!("batch mismatch: input {n}, grad_out {gn}")));
    }
    if ih + 1 != oh + kh || iw + 1 != ow + kw {
        return Err(TensorError::Dimension(format!(
            "grad_out {oh}x{ow} inconsistent with input {ih}x{iw} and kernel {kh}x{kw}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{central_diff, rel_err, rng};
    use rand::Rng;

    /// Independent oracle with a different loop nest than the production code.
    fn naive_forward(input: &Tensor4, bank: &KernelBank) -> Tensor4 {
        let (n, ic, ih, iw) = input.dims();
        let (maps, _, kh, kw) = bank.dims();
        let (oh, ow) = (ih - kh + 1, iw - kw + 1);
        let mut out = Tensor4::zeros(n, maps, oh, ow).unwrap();
        for ni in 0..n {
            for j in 0..maps {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..ic {
                            for p in 0..kh {
                                for q in 0..kw {
                                    acc += input.at(ni, ci, oy + p, ox + q)
                                        * bank.row(j, ci, p)[q];
                                }
                            }
                        }
                        out.set(ni, j, oy, ox, acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let input = Tensor4::zeros(2, 3, 8, 8).unwrap();
        let bank = KernelBank::randn(4, 3, 5, 5, 0.1, &mut rng(1)).unwrap();
        let out = conv2d_forward(&input, &bank).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_by_one_kernel_is_scalar_multiply() {
        let input =
            Tensor4::from_vec(1, 1, 3, 3, (1..=9).map(|v| v as f64).collect()).unwrap();
        let bank = KernelBank::from_vec(1, 1, 1, 1, vec![2.0]).unwrap();
        let out = conv2d_forward(&input, &bank).unwrap();
        assert_eq!(out.dims(), (1, 1, 3, 3));
        for (i, &v) in out.data().iter().enumerate() {
            assert_eq!(v, 2.0 * (i + 1) as f64);
        }
    }

    #[test]
    fn shape_rule_and_oracle_agreement() {
        let mut r = rng(2);
        let input = Tensor4::randn(2, 3, 32, 32, 0.0, 1.0, &mut r).unwrap();
        let bank = KernelBank::randn(4, 3, 5, 5, 0.1, &mut r).unwrap();
        let out = conv2d_forward(&input, &bank).unwrap();
        assert_eq!(out.dims(), (2, 4, 28, 28));
        let oracle = naive_forward(&input, &bank);
        for (a, b) in out.data().iter().zip(oracle.data()) {
            assert!(rel_err(*a, *b) < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn oversized_kernel_names_both_shapes() {
        let input = Tensor4::zeros(1, 1, 3, 3).unwrap();
        let bank = KernelBank::zeros(1, 1, 5, 5).unwrap();
        let err = conv2d_forward(&input, &bank).unwrap_err().to_string();
        assert!(err.contains("5x5") && err.contains("3x3"), "{err}");
    }

    #[test]
    fn channel_mismatch_rejected() {
        let input = Tensor4::zeros(1, 3, 8, 8).unwrap();
        let bank = KernelBank::zeros(2, 4, 3, 3).unwrap();
        assert!(conv2d_forward(&input, &bank).is_err());
    }

    #[test]
    fn output_maps_are_independent_of_bank_partition() {
        let mut r = rng(3);
        let input = Tensor4::randn(2, 3, 10, 10, 0.0, 1.0, &mut r).unwrap();
        let bank = KernelBank::randn(7, 3, 3, 3, 0.1, &mut r).unwrap();
        let full = conv2d_forward(&input, &bank).unwrap();
        // Any contiguous split of the bank reproduces the same planes bitwise.
        for (start, count) in [(0usize, 3usize), (3, 2), (5, 2)] {
            let part = conv2d_forward(&input, &bank.slice_maps(start, count).unwrap()).unwrap();
            for ni in 0..2 {
                for j in 0..count {
                    assert_eq!(part.plane(ni, j), full.plane(ni, start + j));
                }
            }
        }
    }

    #[test]
    fn data_gradient_channels_are_independent_of_channel_partition() {
        let mut r = rng(4);
        let bank = KernelBank::randn(5, 4, 3, 3, 0.1, &mut r).unwrap();
        let grad_out = Tensor4::randn(2, 5, 6, 6, 0.0, 1.0, &mut r).unwrap();
        let full = conv2d_backward_data(&bank, &grad_out).unwrap();
        for (start, count) in [(0usize, 2usize), (2, 1), (3, 1)] {
            let part =
                conv2d_backward_data(&bank.slice_channels(start, count).unwrap(), &grad_out)
                    .unwrap();
            for ni in 0..2 {
                for c in 0..count {
                    assert_eq!(part.plane(ni, c), full.plane(ni, start + c));
                }
            }
        }
    }

    #[test]
    fn kernel_gradients_are_independent_of_map_partition() {
        let mut r = rng(5);
        let input = Tensor4::randn(2, 3, 8, 8, 0.0, 1.0, &mut r).unwrap();
        let grad_out = Tensor4::randn(2, 6, 6, 6, 0.0, 1.0, &mut r).unwrap();
        let full = conv2d_backward_kernels(&input, &grad_out, 3, 3).unwrap();
        let part_grad = grad_out.slice_channels(2, 3).unwrap();
        let part = conv2d_backward_kernels(&input, &part_grad, 3, 3).unwrap();
        for j in 0..3 {
            assert_eq!(part.map(j), full.map(j + 2));
        }
    }

    #[test]
    fn scalar_backward_hand_case() {
        // input [3], kernel [2], upstream gradient [5]:
        // d/dkernel = 3·5 = 15, d/dinput = 2·5 = 10.
        let input = Tensor4::from_vec(1, 1, 1, 1, vec![3.0]).unwrap();
        let bank = KernelBank::from_vec(1, 1, 1, 1, vec![2.0]).unwrap();
        let grad_out = Tensor4::from_vec(1, 1, 1, 1, vec![5.0]).unwrap();
        let (gi, gk) = conv2d_backward(&input, &bank, &grad_out).unwrap();
        assert_eq!(gk.data(), &[15.0]);
        assert_eq!(gi.data(), &[10.0]);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut r = rng(6);
        let input = Tensor4::randn(1, 2, 6, 6, 0.0, 1.0, &mut r).unwrap();
        let bank = KernelBank::randn(3, 2, 3, 3, 0.1, &mut r).unwrap();
        let grad_out = Tensor4::zeros(1, 3, 4, 4).unwrap();
        let (gi, gk) = conv2d_backward(&input, &bank, &grad_out).unwrap();
        assert!(gi.data().iter().all(|&v| v == 0.0));
        assert!(gk.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut r = rng(7);
        let input = Tensor4::randn(2, 2, 6, 6, 0.0, 1.0, &mut r).unwrap();
        let bank = KernelBank::randn(3, 2, 3, 3, 0.1, &mut r).unwrap();
        // Scalar loss: random projection of the conv output.
        let proj: Vec<f64> = (0..2 * 3 * 4 * 4).map(|_| r.gen_range(-1.0..1.0)).collect();
        let loss = |inp: &Tensor4, bk: &KernelBank| -> f64 {
            conv2d_forward(inp, bk)
                .unwrap()
                .data()
                .iter()
                .zip(&proj)
                .map(|(a, b)| a * b)
                .sum()
        };
        let grad_out =
            Tensor4::from_vec(2, 3, 4, 4, proj.clone()).unwrap();
        let (gi, gk) = conv2d_backward(&input, &bank, &grad_out).unwrap();

        let num_gi = central_diff(input.data(), 1e-5, |v| {
            let t = Tensor4::from_vec(2, 2, 6, 6, v.to_vec()).unwrap();
            loss(&t, &bank)
        });
        for (a, b) in gi.data().iter().zip(&num_gi) {
            assert!(rel_err(*a, *b) < 1e-6, "{a} vs {b}");
        }
        let num_gk = central_diff(bank.data(), 1e-5, |v| {
            let b = KernelBank::from_vec(3, 2, 3, 3, v.to_vec()).unwrap();
            loss(&input, &b)
        });
        for (a, b) in gk.data().iter().zip(&num_gk) {
            assert!(rel_err(*a, *b) < 1e-6, "{a} vs {b}");
        }
    }
}
