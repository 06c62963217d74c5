//! Weighted F-measure: absolute errors are reweighted by their dependency on
//! nearby foreground and by their distance from the object, then combined
//! into weighted precision and recall.

use super::basic::check_pair;
use crate::equirect::{BinaryMask, SaliencyMap};
use crate::error::{DdsError, Result};

const EPS: f64 = f64::EPSILON;
const GAUSS_SIZE: usize = 7;
const GAUSS_SIGMA: f64 = 5.0;
/// Background errors at this distance from the object get weight 1.5.
const HALF_DECAY_DISTANCE: f64 = 5.0;

/// Squared Euclidean distance transform of a 1D sampled function, returning
/// the squared distance and the index of the minimizing sample.
fn edt_1d(f: &[f64], d: &mut [f64], arg: &mut [usize], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    v.clear();
    z.clear();
    for (q, &fq) in f.iter().enumerate() {
        if fq.is_infinite() {
            continue;
        }
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let (qf, pf) = (q as f64, p as f64);
                    let s = ((fq + qf * qf) - (f[p] + pf * pf)) / (2.0 * (qf - pf));
                    if s <= *z.last().expect("paired with v") {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        d.iter_mut().for_each(|x| *x = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for q in 0..f.len() {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        d[q] = dq * dq + f[p];
        arg[q] = p;
    }
}

/// Exact Euclidean distance from every pixel to the nearest foreground pixel
/// and that pixel's linear index. `mask` must have foreground.
pub fn distance_transform(mask: &BinaryMask) -> (Vec<f64>, Vec<usize>) {
    let (h, w) = (mask.height(), mask.width());
    let mut col_d = vec![0.0; h * w];
    let mut col_arg = vec![0usize; h * w];
    let (mut v, mut z) = (Vec::new(), Vec::new());
    let mut f = vec![0.0; h.max(w)];
    let mut d = vec![0.0; h.max(w)];
    let mut arg = vec![0usize; h.max(w)];
    for x in 0..w {
        for y in 0..h {
            f[y] = if mask.get(y, x) { 0.0 } else { f64::INFINITY };
        }
        edt_1d(&f[..h], &mut d[..h], &mut arg[..h], &mut v, &mut z);
        for y in 0..h {
            col_d[y * w + x] = d[y];
            col_arg[y * w + x] = arg[y];
        }
    }
    let mut dist = vec![0.0; h * w];
    let mut index = vec![0usize; h * w];
    for y in 0..h {
        let row = y * w;
        edt_1d(&col_d[row..row + w], &mut d[..w], &mut arg[..w], &mut v, &mut z);
        for x in 0..w {
            let sx = arg[x];
            dist[row + x] = d[x].sqrt();
            index[row + x] = col_arg[row + sx] * w + sx;
        }
    }
    (dist, index)
}

fn gaussian_kernel() -> [[f64; GAUSS_SIZE]; GAUSS_SIZE] {
    let half = (GAUSS_SIZE / 2) as f64;
    let mut k = [[0.0; GAUSS_SIZE]; GAUSS_SIZE];
    let mut sum = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (y, x) = (i as f64 - half, j as f64 - half);
            *v = (-(x * x + y * y) / (2.0 * GAUSS_SIGMA * GAUSS_SIGMA)).exp();
            sum += *v;
        }
    }
    k.iter_mut().flatten().for_each(|v| *v /= sum);
    k
}

/// Same-size correlation with zero padding.
fn filter_same(src: &[f64], h: usize, w: usize) -> Vec<f64> {
    let k = gaussian_kernel();
    let half = (GAUSS_SIZE / 2) as isize;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, row) in k.iter().enumerate() {
                let yy = y as isize + i as isize - half;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                for (j, &kv) in row.iter().enumerate() {
                    let xx = x as isize + j as isize - half;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    acc += kv * src[yy as usize * w + xx as usize];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Weighted F-measure with equal weight on weighted precision and recall.
pub fn weighted_f(pred: &SaliencyMap, gt: &BinaryMask) -> Result<f64> {
    check_pair(pred, gt)?;
    if !gt.has_foreground() {
        return Err(DdsError::UndefinedMetric);
    }
    let (h, w) = (gt.height(), gt.width());
    let g = gt.data();
    let e: Vec<f64> = pred.values().iter().zip(g).map(|(&p, &g)| (p - g as f64).abs()).collect();
    let (dist, nearest) = distance_transform(gt);

    // background pixels inherit the error of their nearest foreground pixel
    let et: Vec<f64> = (0..h * w).map(|i| if g[i] == 1 { e[i] } else { e[nearest[i]] }).collect();
    let ea = filter_same(&et, h, w);

    let decay = 0.5f64.ln() / HALF_DECAY_DISTANCE;
    let (mut ew_fg, mut ew_bg, mut n_fg) = (0.0, 0.0, 0.0);
    for i in 0..h * w {
        if g[i] == 1 {
            ew_fg += if ea[i] < e[i] { ea[i] } else { e[i] };
            n_fg += 1.0;
        } else {
            ew_bg += e[i] * (2.0 - (decay * dist[i]).exp());
        }
    }
    let tpw = n_fg - ew_fg;
    let fpw = ew_bg;
    let recall = 1.0 - ew_fg / n_fg;
    let precision = tpw / (EPS + tpw + fpw);
    Ok(2.0 * recall * precision / (EPS + recall + precision))
}
