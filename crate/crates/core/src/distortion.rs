//! Distortion-adaptive (DA) module.
//!
//! The image is cut into an `N x N` grid and every block is convolved with its
//! own 3-in/3-out kernel bank; the result is added back to the input:
//! `O_ij = I_ij + I_ij * K_ij`. Each block is zero padded on its own, so no
//! information crosses block borders.
//!
//! Two evaluation routes are provided. [`da_forward_naive`] walks the blocks
//! one by one with direct loops; [`da_forward_grouped`] stacks the blocks
//! along the channel axis and runs a single grouped convolution with `N^2`
//! groups. They compute the same function.

use rand::Rng;

use crate::equirect::{blocks::check_divisible, cut_blocks, stitch_blocks, BlockGrid};
use crate::error::{DdsError, Result};
use crate::nn::{Conv2d, ConvShape};
use crate::tensor::Tensor;

pub const DEFAULT_BLOCKS: usize = 4;
pub const DEFAULT_KERNEL: usize = 3;
const CHANNELS: usize = 3;

/// The `N x N` grid of per-block kernel banks, no bias.
///
/// Stored as one grouped convolution: group `i * N + j` holds the bank for
/// block `(i, j)`, laid out `[out 3][in 3][k][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionKernels {
    n: usize,
    conv: Conv2d,
}

impl DistortionKernels {
    pub fn zeros(n: usize, kernel: usize) -> Result<Self> {
        if n == 0 {
            return Err(DdsError::BlockGeometry("block count must be positive".into()));
        }
        if kernel % 2 == 0 {
            return Err(DdsError::Configuration(format!("kernel size {kernel} is not odd")));
        }
        let groups = n * n;
        let shape = ConvShape::same(CHANNELS * groups, CHANNELS * groups, kernel, 1)
            .with_groups(groups)
            .without_bias();
        Ok(Self {
            n,
            conv: Conv2d::zeros(shape),
        })
    }

    pub fn random_normal<R: Rng + ?Sized>(n: usize, kernel: usize, std: f64, rng: &mut R) -> Result<Self> {
        let mut k = Self::zeros(n, kernel)?;
        k.conv = Conv2d::normal(k.conv.shape, std, rng);
        Ok(k)
    }

    /// Per-channel identity taps in every block.
    pub fn dirac(n: usize, kernel: usize) -> Result<Self> {
        let mut k = Self::zeros(n, kernel)?;
        let centre = kernel / 2;
        for b in 0..n * n {
            for c in 0..CHANNELS {
                let idx = k.tap_index(b, c, c, centre, centre);
                k.conv.weight[idx] = 1.0;
            }
        }
        Ok(k)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            n: self.n,
            conv: self.conv.zeros_like(),
        }
    }

    pub fn blocks_per_side(&self) -> usize {
        self.n
    }

    pub fn kernel_size(&self) -> usize {
        self.conv.shape.kernel
    }

    pub fn weights(&self) -> &[f64] {
        &self.conv.weight
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.conv.weight
    }

    pub fn bank_len(&self) -> usize {
        CHANNELS * CHANNELS * self.kernel_size() * self.kernel_size()
    }

    /// Weights of the bank used for block `(i, j)`.
    pub fn bank(&self, i: usize, j: usize) -> &[f64] {
        let len = self.bank_len();
        let b = i * self.n + j;
        &self.conv.weight[b * len..(b + 1) * len]
    }

    pub fn bank_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let len = self.bank_len();
        let b = i * self.n + j;
        &mut self.conv.weight[b * len..(b + 1) * len]
    }

    /// Flat index of tap `(ky, kx)` from input channel `c_in` to output `c_out` of block `b`.
    pub fn tap_index(&self, b: usize, c_out: usize, c_in: usize, ky: usize, kx: usize) -> usize {
        let k = self.kernel_size();
        b * self.bank_len() + ((c_out * CHANNELS + c_in) * k + ky) * k + kx
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count()
    }

    pub(crate) fn shape(&self) -> ConvShape {
        self.conv.shape
    }

    fn check(&self, image: &Tensor) -> Result<()> {
        if image.channels() != CHANNELS {
            return Err(DdsError::MalformedImage(format!(
                "distortion-adaptive module expects 3 channels, got {}",
                image.channels()
            )));
        }
        check_divisible(image.height(), image.width(), self.n)
    }
}

/// Block-by-block evaluation with direct loops.
pub fn da_forward_naive(image: &Tensor, kernels: &DistortionKernels) -> Result<Tensor> {
    kernels.check(image)?;
    let n = kernels.n;
    let k = kernels.kernel_size();
    let half = (k / 2) as isize;
    let (bh, bw) = (image.height() / n, image.width() / n);
    let mut out = image.clone();
    for i in 0..n {
        for j in 0..n {
            let bank = kernels.bank(i, j);
            let (y0, x0) = (i * bh, j * bw);
            for o in 0..CHANNELS {
                for y in 0..bh {
                    for x in 0..bw {
                        let mut acc = 0.0;
                        for c in 0..CHANNELS {
                            for ky in 0..k {
                                let yy = y as isize + ky as isize - half;
                                if yy < 0 || yy >= bh as isize {
                                    continue;
                                }
                                for kx in 0..k {
                                    let xx = x as isize + kx as isize - half;
                                    if xx < 0 || xx >= bw as isize {
                                        continue;
                                    }
                                    acc += bank[((o * CHANNELS + c) * k + ky) * k + kx]
                                        * image.get(c, y0 + yy as usize, x0 + xx as usize);
                                }
                            }
                        }
                        let v = out.get(o, y0 + y, x0 + x) + acc;
                        out.set(o, y0 + y, x0 + x, v);
                    }
                }
            }
        }
    }
    Ok(out)
}

fn blocks_to_channels(x: &Tensor, n: usize) -> Result<Tensor> {
    let grid = cut_blocks(x, n)?;
    let refs: Vec<&Tensor> = grid.blocks().iter().collect();
    Tensor::concat_channels(&refs)
}

fn channels_to_blocks(stacked: &Tensor, n: usize) -> Result<Tensor> {
    let blocks = (0..n * n)
        .map(|b| stacked.slice_channels(b * CHANNELS, CHANNELS))
        .collect();
    stitch_blocks(&BlockGrid::new(n, blocks)?)
}

/// Cut, stack along channels, one grouped convolution, unstack, stitch, add input.
pub fn da_forward_grouped(image: &Tensor, kernels: &DistortionKernels) -> Result<Tensor> {
    kernels.check(image)?;
    let stacked = blocks_to_channels(image, kernels.n)?;
    let distortion = kernels.conv.forward(&stacked)?;
    let mut out = channels_to_blocks(&distortion, kernels.n)?;
    out.add_assign(image);
    Ok(out)
}

/// Exact gradients of the module output contracted with `upstream`:
/// returns `(d/d image, d/d kernels)`.
pub fn da_gradients(
    image: &Tensor,
    kernels: &DistortionKernels,
    upstream: &Tensor,
) -> Result<(Tensor, DistortionKernels)> {
    let mut grad = kernels.zeros_like();
    let dx = da_backward(image, kernels, upstream, &mut grad, true)?.expect("input gradient requested");
    Ok((dx, grad))
}

/// Accumulating form of [`da_gradients`] used inside the network.
pub(crate) fn da_backward(
    image: &Tensor,
    kernels: &DistortionKernels,
    upstream: &Tensor,
    grad: &mut DistortionKernels,
    want_input_grad: bool,
) -> Result<Option<Tensor>> {
    kernels.check(image)?;
    image.ensure_same_shape(upstream, "distortion-adaptive upstream gradient")?;
    let n = kernels.n;
    let stacked = blocks_to_channels(image, n)?;
    let up_stacked = blocks_to_channels(upstream, n)?;
    let d_stacked = kernels
        .conv
        .backward(&stacked, &up_stacked, &mut grad.conv, want_input_grad)?;
    match d_stacked {
        Some(d) => {
            let mut dx = channels_to_blocks(&d, n)?;
            dx.add_assign(upstream);
            Ok(Some(dx))
        }
        None => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Independent oracle: convolve each cut block as a standalone image.
    fn per_block_oracle(image: &Tensor, kernels: &DistortionKernels) -> Tensor {
        let n = kernels.blocks_per_side();
        let k = kernels.kernel_size() as isize;
        let grid = cut_blocks(image, n).unwrap();
        let mut outs = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let blk = grid.block(i, j);
                let bank = kernels.bank(i, j);
                let d = Tensor::from_fn(3, blk.height(), blk.width(), |o, y, x| {
                    let mut acc = 0.0;
                    for c in 0..3 {
                        for ky in 0..k {
                            for kx in 0..k {
                                let yy = y as isize + ky - k / 2;
                                let xx = x as isize + kx - k / 2;
                                if yy >= 0 && xx >= 0 && (yy as usize) < blk.height() && (xx as usize) < blk.width() {
                                    let w = bank[((o * 3 + c) * k as usize + ky as usize) * k as usize + kx as usize];
                                    acc += w * blk.get(c, yy as usize, xx as usize);
                                }
                            }
                        }
                    }
                    blk.get(o, y, x) + acc
                });
                outs.push(d);
            }
        }
        stitch_blocks(&BlockGrid::new(n, outs).unwrap()).unwrap()
    }

    #[test]
    fn zero_kernels_are_the_identity() {
        let x = Tensor::random_uniform(3, 32, 64, 0.0, 1.0, &mut rng(0));
        let k = DistortionKernels::zeros(4, 3).unwrap();
        assert_eq!(da_forward_naive(&x, &k).unwrap(), x);
        assert_eq!(da_forward_grouped(&x, &k).unwrap(), x);
    }

    #[test]
    fn dirac_kernels_double_the_input() {
        let x = Tensor::random_uniform(3, 16, 32, 0.0, 1.0, &mut rng(1));
        let k = DistortionKernels::dirac(4, 3).unwrap();
        let doubled = x.map(|v| 2.0 * v);
        assert!(da_forward_naive(&x, &k).unwrap().max_abs_diff(&doubled) == 0.0);
        assert!(da_forward_grouped(&x, &k).unwrap().max_abs_diff(&doubled) < 1e-15);
    }

    #[test]
    fn naive_matches_per_block_oracle() {
        let mut r = rng(2);
        let x = Tensor::random_uniform(3, 32, 64, 0.0, 1.0, &mut r);
        let k = DistortionKernels::random_normal(4, 3, 0.3, &mut r).unwrap();
        let y = da_forward_naive(&x, &k).unwrap();
        assert!(y.max_abs_diff(&per_block_oracle(&x, &k)) < 1e-6);
    }

    #[test]
    fn single_group_is_an_ordinary_convolution_plus_residual() {
        let mut r = rng(3);
        let x = Tensor::random_uniform(3, 8, 16, 0.0, 1.0, &mut r);
        let k = DistortionKernels::random_normal(1, 3, 0.3, &mut r).unwrap();
        let mut conv = Conv2d::zeros(ConvShape::same(3, 3, 3, 1).without_bias());
        conv.weight.copy_from_slice(k.weights());
        let mut expect = conv.forward(&x).unwrap();
        expect.add_assign(&x);
        assert!(da_forward_grouped(&x, &k).unwrap().max_abs_diff(&expect) < 1e-14);
    }

    #[test]
    fn grouped_matches_naive_for_several_grids() {
        let mut r = rng(4);
        for &n in &[1, 2, 4] {
            for _ in 0..5 {
                let x = Tensor::random_uniform(3, 32, 64, 0.0, 1.0, &mut r);
                let k = DistortionKernels::random_normal(n, 3, 0.3, &mut r).unwrap();
                let a = da_forward_naive(&x, &k).unwrap();
                let b = da_forward_grouped(&x, &k).unwrap();
                assert!(a.max_abs_diff(&b) < 1e-12);
            }
        }
    }

    #[test]
    fn perturbing_one_bank_only_touches_its_block() {
        let mut r = rng(5);
        let x = Tensor::random_uniform(3, 16, 32, 0.0, 1.0, &mut r);
        let k = DistortionKernels::random_normal(4, 3, 0.3, &mut r).unwrap();
        let base = da_forward_grouped(&x, &k).unwrap();
        let mut k2 = k.clone();
        k2.bank_mut(1, 2).iter_mut().for_each(|w| *w += 0.5);
        let moved = da_forward_grouped(&x, &k2).unwrap();
        for c in 0..3 {
            for y in 0..16 {
                for xx in 0..32 {
                    let inside = y / 4 == 1 && xx / 8 == 2;
                    let changed = base.get(c, y, xx) != moved.get(c, y, xx);
                    assert!(inside || !changed, "pixel ({y},{xx}) changed outside block");
                }
            }
        }
    }

    #[test]
    fn residual_path_passes_gradient_through_at_zero_kernels() {
        let mut r = rng(6);
        let x = Tensor::random_uniform(3, 8, 16, 0.0, 1.0, &mut r);
        let up = Tensor::random_uniform(3, 8, 16, -1.0, 1.0, &mut r);
        let k = DistortionKernels::zeros(2, 3).unwrap();
        let (dx, _) = da_gradients(&x, &k, &up).unwrap();
        assert_eq!(dx, up);
    }

    #[test]
    fn linear_in_kernels() {
        let mut r = rng(7);
        let x = Tensor::random_uniform(3, 8, 16, 0.0, 1.0, &mut r);
        let k = DistortionKernels::random_normal(2, 3, 0.3, &mut r).unwrap();
        let alpha = -1.7;
        let mut scaled = k.clone();
        scaled.weights_mut().iter_mut().for_each(|w| *w *= alpha);
        let mut lhs = da_forward_grouped(&x, &scaled).unwrap();
        let mut rhs = da_forward_grouped(&x, &k).unwrap();
        lhs.data_mut().iter_mut().zip(x.data()).for_each(|(v, x)| *v -= x);
        rhs.data_mut().iter_mut().zip(x.data()).for_each(|(v, x)| *v = (*v - x) * alpha);
        assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn geometry_errors() {
        let k = DistortionKernels::zeros(4, 3).unwrap();
        assert!(matches!(
            da_forward_naive(&Tensor::zeros(3, 10, 16), &k),
            Err(DdsError::BlockGeometry(_))
        ));
        assert!(matches!(
            da_forward_grouped(&Tensor::zeros(3, 16, 30), &k),
            Err(DdsError::BlockGeometry(_))
        ));
        assert!(DistortionKernels::zeros(2, 4).is_err());
        assert!(DistortionKernels::zeros(0, 3).is_err());
    }
}
