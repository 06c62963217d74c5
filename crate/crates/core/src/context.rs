//! Multi-scale context integration (MCI): four parallel 3x3 convolutions with
//! dilation rates 1, 2, 3 and 4, summed element-wise. The block is linear; any
//! rectification lives in the surrounding decoder.

use rand::Rng;

use crate::error::{DdsError, Result};
use crate::nn::{Conv2d, ConvShape};
use crate::tensor::{FeatureMap, Tensor};

pub const MCI_WIDTH: usize = 128;
pub const DILATIONS: [usize; 4] = [1, 2, 3, 4];

#[derive(Debug, Clone, PartialEq)]
pub struct ContextIntegration {
    branches: Vec<Conv2d>,
}

impl ContextIntegration {
    pub fn branch_shape(in_channels: usize, width: usize, dilation: usize) -> ConvShape {
        ConvShape::same(in_channels, width, 3, dilation)
    }

    pub fn zeros(in_channels: usize, width: usize) -> Self {
        Self {
            branches: DILATIONS
                .iter()
                .map(|&d| Conv2d::zeros(Self::branch_shape(in_channels, width, d)))
                .collect(),
        }
    }

    /// He-normal branch weights scaled by 1/2 so the four-way sum keeps the
    /// variance of a single branch; zero biases.
    pub fn he_normal<R: Rng + ?Sized>(in_channels: usize, width: usize, rng: &mut R) -> Self {
        let fan_in = (in_channels * 9) as f64;
        let std = (2.0 / fan_in).sqrt() / 2.0;
        Self {
            branches: DILATIONS
                .iter()
                .map(|&d| Conv2d::normal(Self::branch_shape(in_channels, width, d), std, rng))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            branches: self.branches.iter().map(Conv2d::zeros_like).collect(),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.branches[0].shape.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.branches[0].shape.out_channels
    }

    /// Branch with dilation `DILATIONS[index]`.
    pub fn branch(&self, index: usize) -> &Conv2d {
        &self.branches[index]
    }

    pub fn branch_mut(&mut self, index: usize) -> &mut Conv2d {
        &mut self.branches[index]
    }

    pub fn branches(&self) -> &[Conv2d] {
        &self.branches
    }

    pub fn branches_mut(&mut self) -> &mut [Conv2d] {
        &mut self.branches
    }

    pub fn param_count(&self) -> usize {
        self.branches.iter().map(Conv2d::param_count).sum()
    }

    pub fn macs(&self, height: usize, width: usize) -> u64 {
        self.branches.iter().map(|b| b.shape.macs(height, width)).sum()
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        let min = DILATIONS[DILATIONS.len() - 1];
        if x.height() < min || x.width() < min {
            return Err(DdsError::ReceptiveField(format!(
                "{}x{} feature map is smaller than the largest dilation ({min})",
                x.height(),
                x.width()
            )));
        }
        if x.channels() != self.in_channels() {
            return Err(DdsError::ShapeMismatch(format!(
                "context block expects {} channels, got {}",
                self.in_channels(),
                x.channels()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let mut out = self.branches[0].forward(x)?;
        for b in &self.branches[1..] {
            out.add_assign(&b.forward(x)?);
        }
        Ok(out)
    }

    pub(crate) fn backward(
        &self,
        x: &Tensor,
        upstream: &Tensor,
        grad: &mut ContextIntegration,
        want_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        self.check(x)?;
        let mut dx: Option<Tensor> = None;
        for (b, g) in self.branches.iter().zip(grad.branches.iter_mut()) {
            if let Some(d) = b.backward(x, upstream, g, want_input_grad)? {
                match dx.as_mut() {
                    Some(acc) => acc.add_assign(&d),
                    None => dx = Some(d),
                }
            }
        }
        Ok(dx)
    }
}

/// Apply the context block; the stride is carried over.
pub fn mci_forward(features: &FeatureMap, params: &ContextIntegration) -> Result<FeatureMap> {
    Ok(FeatureMap::new(params.forward(&features.values)?, features.stride))
}

/// Gradients of `<upstream, mci(features)>` with respect to the features and
/// every branch parameter.
pub fn mci_gradients(
    features: &FeatureMap,
    params: &ContextIntegration,
    upstream: &Tensor,
) -> Result<(Tensor, ContextIntegration)> {
    let mut grad = params.zeros_like();
    let dx = params
        .backward(&features.values, upstream, &mut grad, true)?
        .expect("input gradient requested");
    Ok((dx, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_zero_output_of_full_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mci = ContextIntegration::zeros(16, MCI_WIDTH);
        let x = FeatureMap::new(Tensor::random_uniform(16, 32, 64, -1.0, 1.0, &mut rng), 8);
        let y = mci_forward(&x, &mci).unwrap();
        assert_eq!(y.values.shape(), (MCI_WIDTH, 32, 64));
        assert_eq!(y.stride, 8);
        assert!(y.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dilated_unit_tap_shifts_an_impulse_by_the_dilation() {
        for (branch, &d) in DILATIONS.iter().enumerate() {
            let mut mci = ContextIntegration::zeros(1, 1);
            // tap (ky=2, kx=1) reads the input d rows below the output pixel
            mci.branch_mut(branch).weight[2 * 3 + 1] = 1.0;
            let mut x = Tensor::zeros(1, 16, 16);
            x.set(0, 8, 8, 1.0);
            let y = mci.forward(&x).unwrap();
            for yy in 0..16 {
                for xx in 0..16 {
                    let expect = if (yy, xx) == (8 - d, 8) { 1.0 } else { 0.0 };
                    assert_eq!(y.get(0, yy, xx), expect, "d={d} at ({yy},{xx})");
                }
            }
        }
    }

    #[test]
    fn only_the_first_branch_is_a_plain_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut mci = ContextIntegration::he_normal(4, 6, &mut rng);
        for b in 1..4 {
            let z = mci.branch(b).zeros_like();
            *mci.branch_mut(b) = z;
        }
        let x = Tensor::random_uniform(4, 10, 12, -1.0, 1.0, &mut rng);
        let plain = mci.branch(0).forward(&x).unwrap();
        assert_eq!(mci.forward(&x).unwrap(), plain);
    }

    #[test]
    fn superposition_in_the_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mci = ContextIntegration::he_normal(3, 5, &mut rng);
        let mut zero_bias = mci.clone();
        zero_bias.branches_mut().iter_mut().for_each(|b| b.bias.iter_mut().for_each(|v| *v = 0.0));
        let a = Tensor::random_uniform(3, 9, 18, -1.0, 1.0, &mut rng);
        let b = Tensor::random_uniform(3, 9, 18, -1.0, 1.0, &mut rng);
        let mut ab = a.clone();
        ab.add_assign(&b);
        let mut sum = zero_bias.forward(&a).unwrap();
        sum.add_assign(&zero_bias.forward(&b).unwrap());
        assert!(zero_bias.forward(&ab).unwrap().max_abs_diff(&sum) < 1e-12);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mci = ContextIntegration::he_normal(3, 4, &mut rng);
        let x = FeatureMap::new(Tensor::random_uniform(3, 9, 18, -1.0, 1.0, &mut rng), 1);
        let (dx, g) = mci_gradients(&x, &mci, &Tensor::zeros(4, 9, 18)).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!(g.branches().iter().all(|b| b.weight.iter().chain(&b.bias).all(|&v| v == 0.0)));
    }

    #[test]
    fn gradients_add_across_branches() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mci = ContextIntegration::he_normal(3, 4, &mut rng);
        let x = FeatureMap::new(Tensor::random_uniform(3, 9, 18, -1.0, 1.0, &mut rng), 1);
        let up = Tensor::random_uniform(4, 9, 18, -1.0, 1.0, &mut rng);
        let (dx, _) = mci_gradients(&x, &mci, &up).unwrap();
        let mut per_branch = Tensor::zeros(3, 9, 18);
        for b in mci.branches() {
            let mut g = b.zeros_like();
            per_branch.add_assign(&b.backward(&x.values, &up, &mut g, true).unwrap().unwrap());
        }
        assert!(dx.max_abs_diff(&per_branch) < 1e-12);
    }

    #[test]
    fn undersized_input_is_rejected() {
        let mci = ContextIntegration::zeros(2, 4);
        let err = mci.forward(&Tensor::zeros(2, 3, 20)).unwrap_err();
        assert!(matches!(err, DdsError::ReceptiveField(_)));
    }
}
