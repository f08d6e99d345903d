//! Colour Gaussian-mixture refinement of a rough nuclei mask.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::ops::luminance;
use super::{BinaryMask, RgbImage};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Ridge added to every covariance diagonal.
const REG_COVAR: f64 = 1e-6;
const KMEANS_ROUNDS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub k: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for GmmParams {
    fn default() -> Self {
        Self {
            k: 2,
            max_iter: 100,
            tol: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmOutcome {
    pub mask: BinaryMask,
    /// False when EM hit `max_iter` before the log-likelihood settled.
    pub converged: bool,
    pub iterations: usize,
}

type Vec3 = [f64; 3];
type Mat3 = [[f64; 3]; 3];

#[derive(Clone, Debug)]
struct Component {
    weight: f64,
    mean: Vec3,
    cov: Mat3,
}

/// Fits a `k`-component full-covariance mixture to the colours under `rough`
/// and keeps the pixels whose most responsible component has the lowest mean
/// luminance.
pub fn gmm_refine(img: &RgbImage, rough: &BinaryMask, params: &GmmParams, rng: &mut Rng) -> Result<GmmOutcome> {
    if img.dims() != rough.dims() {
        return Err(Error::Shape(format!(
            "image {:?} vs mask {:?}",
            img.dims(),
            rough.dims()
        )));
    }
    if params.k < 2 {
        return Err(Error::Param(format!("gmm needs k >= 2, got {}", params.k)));
    }
    let mut coords = Vec::new();
    let mut points: Vec<Vec3> = Vec::new();
    for y in 0..img.height() {
        for x in 0..img.width() {
            if rough.get(y, x) {
                let p = img.pixel(y, x);
                coords.push((y, x));
                points.push([f64::from(p[0]), f64::from(p[1]), f64::from(p[2])]);
            }
        }
    }
    if points.len() < params.k {
        return Err(Error::Degenerate(format!(
            "{} foreground pixels, need at least k = {}",
            points.len(),
            params.k
        )));
    }

    let centers = kmeans_pp(&points, params.k, rng);
    if centers.len() < 2 {
        // Every colour identical: one effective cluster, keep the whole mask.
        return Ok(GmmOutcome {
            mask: rough.clone(),
            converged: true,
            iterations: 0,
        });
    }
    let centers = lloyd(&points, centers);
    let labels: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
    let mut comps = init_components(&points, &labels, &centers);

    let n = points.len();
    let mut resp = vec![0.0f64; n * comps.len()];
    let mut prev_ll = f64::NEG_INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..params.max_iter {
        iterations = it + 1;
        let ll = e_step(&points, &comps, &mut resp);
        m_step(&points, &resp, &mut comps);
        if (ll - prev_ll).abs() < params.tol {
            converged = true;
            break;
        }
        prev_ll = ll;
    }
    e_step(&points, &comps, &mut resp);

    let k = comps.len();
    let nuclei = (0..k)
        .min_by(|a, b| luminance(comps[*a].mean).total_cmp(&luminance(comps[*b].mean)))
        .expect("at least two components");
    let mut mask = BinaryMask::zeros(img.height(), img.width());
    for (i, &(y, x)) in coords.iter().enumerate() {
        let row = &resp[i * k..(i + 1) * k];
        let best = (0..k)
            .max_by(|a, b| row[*a].total_cmp(&row[*b]).then(b.cmp(a)))
            .expect("k >= 2");
        if best == nuclei {
            mask.set(y, x, true);
        }
    }
    Ok(GmmOutcome {
        mask,
        converged,
        iterations,
    })
}

fn dist2(a: &Vec3, b: &Vec3) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

fn nearest(p: &Vec3, centers: &[Vec3]) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(i, c)| (i, dist2(p, c)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty centers")
}

/// k-means++ seeding. Stops early when every point coincides with a chosen
/// centre, so the result may hold fewer than `k` centres.
fn kmeans_pp(points: &[Vec3], k: usize, rng: &mut Rng) -> Vec<Vec3> {
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = points.len() - 1;
        for (i, d) in d2.iter().enumerate() {
            if target < *d {
                pick = i;
                break;
            }
            target -= d;
        }
        let c = points[pick];
        centers.push(c);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &c));
        }
    }
    centers
}

fn lloyd(points: &[Vec3], mut centers: Vec<Vec3>) -> Vec<Vec3> {
    for _ in 0..KMEANS_ROUNDS {
        let mut sums = vec![[0.0; 3]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for p in points {
            let (j, _) = nearest(p, &centers);
            counts[j] += 1;
            for d in 0..3 {
                sums[j][d] += p[d];
            }
        }
        let mut moved = false;
        for j in 0..centers.len() {
            if counts[j] > 0 {
                let c = sums[j].map(|s| s / counts[j] as f64);
                moved |= c != centers[j];
                centers[j] = c;
            }
        }
        if !moved {
            break;
        }
    }
    centers
}

fn covariance(points: &[Vec3], weights: &[f64], mean: &Vec3, total: f64) -> Mat3 {
    let mut cov = [[0.0; 3]; 3];
    for (p, w) in points.iter().zip(weights) {
        if *w == 0.0 {
            continue;
        }
        let d = [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]];
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += w * d[i] * d[j];
            }
        }
    }
    for (i, row) in cov.iter_mut().enumerate() {
        for v in row.iter_mut() {
            *v /= total.max(f64::MIN_POSITIVE);
        }
        row[i] += REG_COVAR;
    }
    cov
}

fn init_components(points: &[Vec3], labels: &[usize], centers: &[Vec3]) -> Vec<Component> {
    let n = points.len() as f64;
    (0..centers.len())
        .map(|j| {
            let w: Vec<f64> = labels.iter().map(|l| if *l == j { 1.0 } else { 0.0 }).collect();
            let count: f64 = w.iter().sum();
            Component {
                weight: (count / n).max(1e-3),
                mean: centers[j],
                cov: covariance(points, &w, &centers[j], count),
            }
        })
        .collect()
}

/// Lower Cholesky factor of a symmetric positive definite 3x3 matrix.
fn cholesky(a: &Mat3) -> Option<Mat3> {
    let mut l = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if d <= 0.0 || !d.is_finite() {
                    return None;
                }
                l[i][j] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

fn log_gaussian(p: &Vec3, mean: &Vec3, chol: &Mat3) -> f64 {
    // Solve L z = (p - mean); log N = -0.5 |z|^2 - sum log L_ii - 1.5 log 2pi
    let d = [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]];
    let mut z = [0.0; 3];
    for i in 0..3 {
        let s: f64 = (0..i).map(|k| chol[i][k] * z[k]).sum();
        z[i] = (d[i] - s) / chol[i][i];
    }
    let maha: f64 = z.iter().map(|v| v * v).sum();
    let logdet: f64 = (0..3).map(|i| chol[i][i].ln()).sum();
    -0.5 * maha - logdet - 1.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Fills responsibilities and returns the mean log-likelihood.
fn e_step(points: &[Vec3], comps: &[Component], resp: &mut [f64]) -> f64 {
    let k = comps.len();
    let chols: Vec<Mat3> = comps
        .iter()
        .map(|c| {
            cholesky(&c.cov).unwrap_or_else(|| {
                let mut d = [[0.0; 3]; 3];
                for (i, row) in d.iter_mut().enumerate() {
                    row[i] = (c.cov[i][i].max(REG_COVAR)).sqrt();
                }
                d
            })
        })
        .collect();
    let mut ll = 0.0;
    for (i, p) in points.iter().enumerate() {
        let row = &mut resp[i * k..(i + 1) * k];
        for j in 0..k {
            row[j] = comps[j].weight.ln() + log_gaussian(p, &comps[j].mean, &chols[j]);
        }
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
        let lse = m + s.ln();
        for v in row.iter_mut() {
            *v = (*v - lse).exp();
        }
        ll += lse;
    }
    ll / points.len() as f64
}

fn m_step(points: &[Vec3], resp: &[f64], comps: &mut [Component]) {
    let k = comps.len();
    let n = points.len() as f64;
    for (j, comp) in comps.iter_mut().enumerate() {
        let w: Vec<f64> = (0..points.len()).map(|i| resp[i * k + j]).collect();
        let nk: f64 = w.iter().sum::<f64>() + 10.0 * f64::EPSILON;
        let mut mean = [0.0; 3];
        for (p, wi) in points.iter().zip(&w) {
            for d in 0..3 {
                mean[d] += wi * p[d];
            }
        }
        let mean = mean.map(|m| m / nk);
        comp.weight = nk / n;
        comp.cov = covariance(points, &w, &mean, nk);
        comp.mean = mean;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive;

    const PURPLE: [f32; 3] = [0.35, 0.18, 0.45];
    const RED: [f32; 3] = [0.85, 0.30, 0.35];

    /// Minimum within-cluster sum of squares over every 2-partition.
    fn exhaustive_two_means(points: &[Vec3]) -> Vec<bool> {
        let n = points.len();
        let mut best = (f64::INFINITY, 0u64);
        for bits in 1..(1u64 << n) - 1 {
            let mut cost = 0.0;
            for side in [true, false] {
                let members: Vec<&Vec3> = (0..n)
                    .filter(|i| ((bits >> i) & 1 == 1) == side)
                    .map(|i| &points[i])
                    .collect();
                let m = members.len() as f64;
                let mut mean = [0.0; 3];
                for p in &members {
                    for d in 0..3 {
                        mean[d] += p[d] / m;
                    }
                }
                cost += members.iter().map(|p| dist2(p, &mean)).sum::<f64>();
            }
            if cost < best.0 {
                best = (cost, bits);
            }
        }
        (0..n).map(|i| (best.1 >> i) & 1 == 1).collect()
    }

    #[test]
    fn retains_dark_cluster_matching_exhaustive_two_means() {
        // 14 foreground pixels: jittered purple and red, on a 4x4 canvas.
        let mut jitter = derive(1, "test-jitter", 0);
        let mut is_purple = Vec::new();
        let img = RgbImage::from_fn(4, 4, |c, y, x| {
            let i = y * 4 + x;
            let base = if i % 3 == 0 { PURPLE } else { RED };
            base[c] + (jitter.random::<f32>() - 0.5) * 0.04
        });
        for i in 0..16 {
            is_purple.push(i % 3 == 0);
        }
        let rough = BinaryMask::from_fn(4, 4, |y, x| y * 4 + x < 14);
        let pts: Vec<Vec3> = (0..14)
            .map(|i| {
                let p = img.pixel(i / 4, i % 4);
                [f64::from(p[0]), f64::from(p[1]), f64::from(p[2])]
            })
            .collect();
        let part = exhaustive_two_means(&pts);
        // the side containing the darkest point is the nuclei side
        let darkest = (0..14)
            .min_by(|a, b| luminance(pts[*a]).total_cmp(&luminance(pts[*b])))
            .unwrap();
        let oracle: Vec<bool> = part.iter().map(|s| *s == part[darkest]).collect();

        let out = gmm_refine(&img, &rough, &GmmParams::default(), &mut derive(3, "gmm-init", 0)).unwrap();
        for i in 0..14 {
            assert_eq!(out.mask.get(i / 4, i % 4), oracle[i], "pixel {i}");
            assert_eq!(oracle[i], is_purple[i]);
        }
        assert!(!out.mask.get(3, 2) && !out.mask.get(3, 3));
        assert!(out.mask.is_subset_of(&rough));
    }

    #[test]
    fn degenerate_and_tie_cases() {
        let img = RgbImage::filled(6, 6, PURPLE);
        let empty = BinaryMask::zeros(6, 6);
        let mut rng = derive(0, "gmm-init", 0);
        assert!(matches!(
            gmm_refine(&img, &empty, &GmmParams::default(), &mut rng),
            Err(Error::Degenerate(_))
        ));
        let rough = BinaryMask::from_fn(6, 6, |y, x| (y + x) % 2 == 0);
        let out = gmm_refine(&img, &rough, &GmmParams::default(), &mut rng).unwrap();
        assert_eq!(out.mask, rough);
    }

    #[test]
    fn nonconvergence_is_flagged_not_fatal() {
        let mut jitter = derive(5, "test-jitter", 0);
        let img = RgbImage::from_fn(12, 12, |_, _, _| jitter.random::<f32>());
        let rough = BinaryMask::from_fn(12, 12, |_, _| true);
        let params = GmmParams {
            k: 2,
            max_iter: 1,
            tol: 0.0,
        };
        let out = gmm_refine(&img, &rough, &params, &mut derive(0, "gmm-init", 0)).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 1);
        assert!(out.mask.is_subset_of(&rough));
    }
}
