use crate::error::{DdsError, Result};
use crate::tensor::Tensor;

/// An `n x n` tiling of a raster, stored row-major: block `(i, j)` is at `i * n + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrid {
    n: usize,
    blocks: Vec<Tensor>,
}

impl BlockGrid {
    pub fn new(n: usize, blocks: Vec<Tensor>) -> Result<Self> {
        if n == 0 || blocks.len() != n * n {
            return Err(DdsError::BlockGeometry(format!(
                "{} blocks do not form a {n}x{n} grid",
                blocks.len()
            )));
        }
        Ok(Self { n, blocks })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn block(&self, i: usize, j: usize) -> &Tensor {
        &self.blocks[i * self.n + j]
    }

    pub fn blocks(&self) -> &[Tensor] {
        &self.blocks
    }

    pub fn into_blocks(self) -> Vec<Tensor> {
        self.blocks
    }

    /// Shape `(channels, height, width)` of the stitched raster.
    pub fn original_shape(&self) -> (usize, usize, usize) {
        let (c, h, w) = self.blocks[0].shape();
        (c, h * self.n, w * self.n)
    }
}

pub(crate) fn check_divisible(height: usize, width: usize, n: usize) -> Result<()> {
    if n == 0 || height % n != 0 || width % n != 0 {
        return Err(DdsError::BlockGeometry(format!(
            "{n} blocks per side do not divide a {height}x{width} raster"
        )));
    }
    Ok(())
}

/// Cut `x` into `n x n` equal blocks.
pub fn cut_blocks(x: &Tensor, n: usize) -> Result<BlockGrid> {
    check_divisible(x.height(), x.width(), n)?;
    let (bh, bw) = (x.height() / n, x.width() / n);
    let mut blocks = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let mut b = Tensor::zeros(x.channels(), bh, bw);
            for c in 0..x.channels() {
                let src = x.channel(c);
                let dst = b.channel_mut(c);
                for r in 0..bh {
                    let row = (i * bh + r) * x.width() + j * bw;
                    dst[r * bw..(r + 1) * bw].copy_from_slice(&src[row..row + bw]);
                }
            }
            blocks.push(b);
        }
    }
    Ok(BlockGrid { n, blocks })
}

/// Reassemble a grid into one raster; exact inverse of [`cut_blocks`].
pub fn stitch_blocks(grid: &BlockGrid) -> Result<Tensor> {
    let shape = grid.blocks[0].shape();
    if let Some(b) = grid.blocks.iter().find(|b| b.shape() != shape) {
        return Err(DdsError::BlockGeometry(format!(
            "block shapes {:?} and {:?} differ",
            shape,
            b.shape()
        )));
    }
    let (c, bh, bw) = shape;
    let n = grid.n;
    let width = bw * n;
    let mut out = Tensor::zeros(c, bh * n, width);
    for i in 0..n {
        for j in 0..n {
            let b = grid.block(i, j);
            for ch in 0..c {
                let src = b.channel(ch);
                let dst = out.channel_mut(ch);
                for r in 0..bh {
                    let row = (i * bh + r) * width + j * bw;
                    dst[row..row + bw].copy_from_slice(&src[r * bw..(r + 1) * bw]);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn canonical_image_cuts_into_sixteen_blocks() {
        let x = Tensor::zeros(3, 256, 512);
        let grid = cut_blocks(&x, 4).unwrap();
        assert_eq!(grid.blocks().len(), 16);
        assert!(grid.blocks().iter().all(|b| b.shape() == (3, 64, 128)));
    }

    #[test]
    fn single_block_is_the_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::random_uniform(3, 6, 10, 0.0, 1.0, &mut rng);
        let grid = cut_blocks(&x, 1).unwrap();
        assert_eq!(grid.block(0, 0), &x);
        assert_eq!(stitch_blocks(&grid).unwrap(), x);
    }

    #[test]
    fn blocks_match_manual_slicing() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = Tensor::random_uniform(2, 8, 16, 0.0, 1.0, &mut rng);
        let grid = cut_blocks(&x, 2).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let b = grid.block(i, j);
                for c in 0..2 {
                    for r in 0..4 {
                        for q in 0..8 {
                            assert_eq!(b.get(c, r, q), x.get(c, i * 4 + r, j * 8 + q));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn constant_blocks_stitch_into_a_checkerboard() {
        let blocks = (0..9).map(|k| Tensor::filled(1, 2, 3, k as f64)).collect();
        let grid = BlockGrid::new(3, blocks).unwrap();
        let out = stitch_blocks(&grid).unwrap();
        assert_eq!(out.shape(), (1, 6, 9));
        for y in 0..6 {
            for x in 0..9 {
                assert_eq!(out.get(0, y, x), ((y / 2) * 3 + x / 3) as f64);
            }
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::random_uniform(3, 32, 64, 0.0, 1.0, &mut rng);
        let grid = cut_blocks(&x, 4).unwrap();
        assert_eq!(stitch_blocks(&grid).unwrap(), x);
    }

    #[test]
    fn geometry_errors() {
        assert!(matches!(cut_blocks(&Tensor::zeros(1, 6, 8), 4), Err(DdsError::BlockGeometry(_))));
        assert!(matches!(cut_blocks(&Tensor::zeros(1, 6, 8), 0), Err(DdsError::BlockGeometry(_))));
        let ragged = vec![Tensor::zeros(1, 2, 2), Tensor::zeros(1, 2, 3), Tensor::zeros(1, 2, 2), Tensor::zeros(1, 2, 2)];
        let grid = BlockGrid::new(2, ragged).unwrap();
        assert!(matches!(stitch_blocks(&grid), Err(DdsError::BlockGeometry(_))));
        assert!(BlockGrid::new(2, vec![Tensor::zeros(1, 1, 1)]).is_err());
    }

    proptest! {
        #[test]
        fn cut_then_stitch_is_identity(seed in 0u64..500, n in 1usize..5, bh in 1usize..5, bw in 1usize..5, c in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::random_uniform(c, n * bh, n * bw, -1.0, 1.0, &mut rng);
            let grid = cut_blocks(&x, n).unwrap();
            prop_assert_eq!(stitch_blocks(&grid).unwrap(), x);
        }
    }
}
