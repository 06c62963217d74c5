use crate::equirect::{BinaryMask, Resolution, SaliencyMap};
use crate::error::{DdsError, Result};

/// Pixelwise sum of nearest-resized masks divided by its maximum.
pub fn average_annotation_map(masks: &[BinaryMask], resolution: Resolution) -> Result<SaliencyMap> {
    let (h, w) = (resolution.height, resolution.width);
    let mut sum = vec![0u32; h * w];
    for m in masks {
        let r = m.resize_nearest(h, w);
        for (s, &v) in sum.iter_mut().zip(r.data()) {
            *s += v as u32;
        }
    }
    let max = sum.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return Err(DdsError::DegenerateAam);
    }
    let values = sum.iter().map(|&s| s as f64 / max as f64).collect();
    SaliencyMap::new(h, w, values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectStats {
    pub count: usize,
    /// Pixel share of each component, in raster order of first pixel.
    pub area_fractions: Vec<f64>,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// 8-connected foreground components via two-pass labelling with union-find.
pub fn object_stats(mask: &BinaryMask) -> ObjectStats {
    let (h, w) = (mask.height(), mask.width());
    let mut labels = vec![usize::MAX; h * w];
    let mut parent: Vec<usize> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(y, x) {
                continue;
            }
            let mut neighbours = [usize::MAX; 4];
            if x > 0 {
                neighbours[0] = labels[y * w + x - 1];
            }
            if y > 0 {
                let row = (y - 1) * w;
                if x > 0 {
                    neighbours[1] = labels[row + x - 1];
                }
                neighbours[2] = labels[row + x];
                if x + 1 < w {
                    neighbours[3] = labels[row + x + 1];
                }
            }
            let mut label = usize::MAX;
            for &n in neighbours.iter().filter(|&&n| n != usize::MAX) {
                let root = find(&mut parent, n);
                if label == usize::MAX {
                    label = root;
                } else if root != label {
                    let (lo, hi) = (label.min(root), label.max(root));
                    parent[hi] = lo;
                    label = lo;
                }
            }
            if label == usize::MAX {
                label = parent.len();
                parent.push(label);
            }
            labels[y * w + x] = label;
        }
    }

    let mut slot = vec![usize::MAX; parent.len()];
    let mut areas: Vec<usize> = Vec::new();
    for &l in labels.iter().filter(|&&l| l != usize::MAX) {
        let root = find(&mut parent, l);
        if slot[root] == usize::MAX {
            slot[root] = areas.len();
            areas.push(0);
        }
        areas[slot[root]] += 1;
    }
    let total = (h * w) as f64;
    ObjectStats {
        count: areas.len(),
        area_fractions: areas.into_iter().map(|a| a as f64 / total).collect(),
    }
}

/// Counts per bin `[e_i, e_{i+1})`; the last bin also takes its right edge.
/// Values outside `[e_0, e_last]` are ignored.
pub fn histogram(values: &[f64], edges: &[f64]) -> Result<Vec<usize>> {
    if edges.len() < 2 {
        return Err(DdsError::Histogram("at least two edges are required".into()));
    }
    if edges.windows(2).any(|p| !(p[0] < p[1])) {
        return Err(DdsError::Histogram(format!("edges {edges:?} are not strictly increasing")));
    }
    let bins = edges.len() - 1;
    let mut counts = vec![0; bins];
    let last = edges[bins];
    for &v in values {
        if !(v >= edges[0] && v <= last) {
            continue;
        }
        let i = if v == last {
            bins - 1
        } else {
            edges.partition_point(|&e| e <= v) - 1
        };
        counts[i] += 1;
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::VecDeque;

    fn square(mask: &mut BinaryMask, y0: usize, x0: usize, h: usize, w: usize) {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                mask.set(y, x, true);
            }
        }
    }

    /// Breadth-first flood fill labelling, returning component sizes in raster order.
    fn flood_fill(mask: &BinaryMask) -> Vec<usize> {
        let (h, w) = (mask.height(), mask.width());
        let mut seen = vec![false; h * w];
        let mut sizes = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if !mask.get(y, x) || seen[y * w + x] {
                    continue;
                }
                let mut queue = VecDeque::from([(y, x)]);
                seen[y * w + x] = true;
                let mut size = 0;
                while let Some((cy, cx)) = queue.pop_front() {
                    size += 1;
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let (ny, nx) = (cy as i64 + dy, cx as i64 + dx);
                            if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                                continue;
                            }
                            let (ny, nx) = (ny as usize, nx as usize);
                            if mask.get(ny, nx) && !seen[ny * w + nx] {
                                seen[ny * w + nx] = true;
                                queue.push_back((ny, nx));
                            }
                        }
                    }
                }
                sizes.push(size);
            }
        }
        sizes
    }

    #[test]
    fn empty_mask_has_no_objects() {
        let s = object_stats(&BinaryMask::zeros(32, 64));
        assert_eq!(s.count, 0);
        assert!(s.area_fractions.is_empty());
    }

    #[test]
    fn two_disjoint_ten_pixel_blocks() {
        let mut m = BinaryMask::zeros(32, 64);
        square(&mut m, 2, 3, 2, 5);
        square(&mut m, 20, 40, 5, 2);
        let s = object_stats(&m);
        assert_eq!(s.count, 2);
        assert_eq!(s.area_fractions, vec![10.0 / 2048.0, 10.0 / 2048.0]);
    }

    #[test]
    fn diagonal_neighbours_join() {
        let m = BinaryMask::from_fn(5, 5, |y, x| y == x || y + x == 4);
        assert_eq!(object_stats(&m).count, 1);
    }

    #[test]
    fn u_shape_merges_labels() {
        let m = BinaryMask::from_fn(4, 5, |y, x| x == 0 || x == 4 || y == 3);
        let s = object_stats(&m);
        assert_eq!(s.count, 1);
        assert_eq!(s.area_fractions, vec![11.0 / 20.0]);
    }

    #[test]
    fn random_blobs_match_flood_fill() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let (h, w) = (rng.random_range(1..20), rng.random_range(1..30));
            let p = rng.random_range(0.1..0.7);
            let m = BinaryMask::from_fn(h, w, |_, _| rng.random_bool(p));
            let s = object_stats(&m);
            let oracle = flood_fill(&m);
            assert_eq!(s.count, oracle.len());
            let total = (h * w) as f64;
            let expect: Vec<f64> = oracle.iter().map(|&a| a as f64 / total).collect();
            assert_eq!(s.area_fractions, expect);
        }
    }

    #[test]
    fn histogram_hand_binning() {
        assert_eq!(histogram(&[1.0, 2.0, 2.0, 5.0], &[0.0, 2.0, 4.0, 6.0]).unwrap(), vec![1, 2, 1]);
        assert_eq!(histogram(&[], &[0.0, 1.0, 2.0]).unwrap(), vec![0, 0]);
        assert_eq!(histogram(&[2.0, -1.0, 2.5], &[0.0, 1.0, 2.0]).unwrap(), vec![0, 1]);
        assert!(matches!(histogram(&[1.0], &[0.0, 2.0, 1.0]), Err(DdsError::Histogram(_))));
        assert!(histogram(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn aam_of_disjoint_masks_is_one_on_both() {
        let res = Resolution::new(16, 8);
        let mut a = BinaryMask::zeros(8, 16);
        square(&mut a, 0, 0, 2, 2);
        let mut b = BinaryMask::zeros(8, 16);
        square(&mut b, 5, 10, 2, 3);
        let aam = average_annotation_map(&[a.clone(), b.clone()], res).unwrap();
        for y in 0..8 {
            for x in 0..16 {
                let expect = if a.get(y, x) || b.get(y, x) { 1.0 } else { 0.0 };
                assert_eq!(aam.values()[y * 16 + x], expect);
            }
        }
        assert_eq!(average_annotation_map(&[a.clone()], res).unwrap(), SaliencyMap::from_mask(&a));
        assert!(matches!(
            average_annotation_map(&[BinaryMask::zeros(8, 16)], res),
            Err(DdsError::DegenerateAam)
        ));
    }

    proptest! {
        #[test]
        fn areas_sum_to_foreground_fraction(seed in 0u64..1000, p in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = BinaryMask::from_fn(12, 24, |_, _| rng.random_bool(p));
            let s = object_stats(&m);
            let sum: f64 = s.area_fractions.iter().sum();
            prop_assert!((sum - m.foreground_fraction()).abs() < 1e-12);
        }

        #[test]
        fn histogram_conserves_in_range_values(values in proptest::collection::vec(-1.0f64..11.0, 0..50)) {
            let edges = [0.0, 2.5, 5.0, 7.5, 10.0];
            let counts = histogram(&values, &edges).unwrap();
            let in_range = values.iter().filter(|&&v| (0.0..=10.0).contains(&v)).count();
            prop_assert_eq!(counts.iter().sum::<usize>(), in_range);
        }

        #[test]
        fn aam_peaks_at_one(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let masks: Vec<BinaryMask> = (0..4)
                .map(|_| BinaryMask::from_fn(8, 16, |_, _| rng.random_bool(0.2)))
                .collect();
            prop_assume!(masks.iter().any(BinaryMask::has_foreground));
            let aam = average_annotation_map(&masks, Resolution::new(16, 8)).unwrap();
            prop_assert_eq!(aam.values().iter().cloned().fold(0.0, f64::max), 1.0);
        }
    }
}
