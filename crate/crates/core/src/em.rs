//! Spatial-temporal EM: responsibility estimation (E step), weighted-mean
//! basis update (M step), and the R-iteration loop that turns a video
//! feature map into a compact basis set.

use rand::distributions::WeightedIndex;
use rand::prelude::*;

use crate::error::{CoreError, Result};
use crate::tensor::{
    matmul, matmul_transpose_b, seeded_rng, softmax_dim, BasisSet, FeatureMap, Matrix,
    Responsibility, Seed, SoftmaxAxis,
};

/// How the initial bases are chosen from the feature rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitStrategy {
    /// K distinct feature rows drawn uniformly without replacement.
    SamplePixels,
    /// Sequential D^2-weighted selection under negative-dot-product distance.
    KMeansPlusPlus,
}

/// EM hyperparameters. Defaults follow the reference setting:
/// tau = 0.05, R = 3, K = 256.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub num_bases: usize,
    pub temperature: f32,
    pub iterations: usize,
    pub init: InitStrategy,
    pub normalize_bases: bool,
    /// Run one trailing E step so the returned responsibilities are
    /// consistent with the returned bases.
    pub refresh_responsibilities: bool,
    pub seed: Seed,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            num_bases: 256,
            temperature: 0.05,
            iterations: 3,
            init: InitStrategy::SamplePixels,
            normalize_bases: false,
            refresh_responsibilities: true,
            seed: Seed(0),
        }
    }
}

impl EmConfig {
    pub fn validate(&self, num_pixels: usize) -> Result<()> {
        if self.num_bases == 0 {
            return Err(CoreError::Parameter("num_bases must be >= 1".into()));
        }
        if self.num_bases > num_pixels {
            return Err(CoreError::Parameter(format!(
                "num_bases {} exceeds pixel count {}",
                self.num_bases, num_pixels
            )));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(CoreError::Parameter(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Result of a full EM run.
#[derive(Debug, Clone)]
pub struct EmOutcome {
    pub bases: BasisSet,
    pub responsibilities: Responsibility,
    /// Mean basis-row L2 shift per iteration, length = iterations.
    pub basis_shifts: Vec<f64>,
}

/// Picks the initial K x C bases from the feature rows.
pub fn init_bases(x: &FeatureMap, cfg: &EmConfig) -> Result<BasisSet> {
    cfg.validate(x.pixels())?;
    let flat = x.flattened();
    let m = flat.rows();
    let k = cfg.num_bases;
    let mut rng = seeded_rng(cfg.seed);
    let indices: Vec<usize> = match cfg.init {
        InitStrategy::SamplePixels => {
            rand::seq::index::sample(&mut rng, m, k).into_iter().collect()
        }
        InitStrategy::KMeansPlusPlus => kmeans_pp_indices(flat, k, &mut rng),
    };
    BasisSet::new(flat.gather_rows(&indices)?)
}

fn kmeans_pp_indices(flat: &Matrix, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let m = flat.rows();
    let mut chosen = Vec::with_capacity(k);
    let mut is_chosen = vec![false; m];
    let first = rng.gen_range(0..m);
    chosen.push(first);
    is_chosen[first] = true;
    // dist[m] = min over chosen centers of -dot(x_m, center)
    let mut dist = vec![f64::INFINITY; m];
    while chosen.len() < k {
        let last = flat.row(*chosen.last().unwrap());
        for i in 0..m {
            let d: f64 = -flat
                .row(i)
                .iter()
                .zip(last)
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum::<f64>();
            if d < dist[i] {
                dist[i] = d;
            }
        }
        let min_d = dist
            .iter()
            .enumerate()
            .filter(|(i, _)| !is_chosen[*i])
            .map(|(_, &d)| d)
            .fold(f64::INFINITY, f64::min);
        let weights: Vec<f64> = dist
            .iter()
            .enumerate()
            .map(|(i, &d)| if is_chosen[i] { 0.0 } else { (d - min_d) * (d - min_d) })
            .collect();
        let next = if weights.iter().sum::<f64>() > 0.0 {
            WeightedIndex::new(&weights).expect("positive weights").sample(rng)
        } else {
            // all remaining rows equidistant; pick uniformly among them
            let remaining: Vec<usize> =
                (0..m).filter(|&i| !is_chosen[i]).collect();
            remaining[rng.gen_range(0..remaining.len())]
        };
        chosen.push(next);
        is_chosen[next] = true;
    }
    chosen
}

/// ST-E step: Z = softmax over the basis dimension of (mu X^T / tau).
/// Every column of the returned K x M matrix is a distribution over bases.
pub fn e_step(x: &FeatureMap, mu: &BasisSet, tau: f32) -> Result<Responsibility> {
    if mu.channels() != x.channels() {
        return Err(CoreError::Shape(format!(
            "basis channels {} != feature channels {}",
            mu.channels(),
            x.channels()
        )));
    }
    let logits = matmul_transpose_b(&mu.data, x.flattened())?;
    let z = softmax_dim(&logits, SoftmaxAxis::EachCol, tau)?;
    Responsibility::new(z)
}

/// ST-M step: mu_k = sum_i Z_ki X_i / sum_m Z_km. Each basis is a convex
/// combination of feature rows. A dead basis (row mass below 1e-12) is
/// reinitialized to the feature row with the largest reconstruction
/// residual under the freshly updated live bases.
pub fn m_step(x: &FeatureMap, z: &Responsibility) -> Result<BasisSet> {
    let flat = x.flattened();
    if z.num_pixels() != flat.rows() {
        return Err(CoreError::Shape(format!(
            "responsibility pixels {} != feature pixels {}",
            z.num_pixels(),
            flat.rows()
        )));
    }
    let k = z.num_bases();
    let c = flat.cols();
    let num = matmul(&z.data, flat)?;
    let mut row_mass = vec![0f64; k];
    for i in 0..k {
        row_mass[i] = z.data.row(i).iter().map(|&v| v as f64).sum();
    }
    let mut mu = Matrix::zeros(k, c);
    let mut dead = Vec::new();
    for i in 0..k {
        if row_mass[i] < 1e-12 {
            dead.push(i);
            continue;
        }
        let inv = 1.0 / row_mass[i];
        for (o, &v) in mu.row_mut(i).iter_mut().zip(num.row(i)) {
            *o = (v as f64 * inv) as f32;
        }
    }
    if !dead.is_empty() {
        reseed_dead_bases(flat, z, &mut mu, &dead)?;
    }
    BasisSet::new(mu)
}

fn reseed_dead_bases(
    flat: &Matrix,
    z: &Responsibility,
    mu: &mut Matrix,
    dead: &[usize],
) -> Result<()> {
    // Reconstruction of each pixel from the live bases: x_hat = Z^T mu.
    let m = flat.rows();
    let mut residuals: Vec<(f64, usize)> = Vec::with_capacity(m);
    for p in 0..m {
        let xrow = flat.row(p);
        let mut r = 0f64;
        for c in 0..flat.cols() {
            let mut rec = 0f64;
            for b in 0..mu.rows() {
                rec += z.data.get(b, p) as f64 * mu.get(b, c) as f64;
            }
            let d = xrow[c] as f64 - rec;
            r += d * d;
        }
        residuals.push((r, p));
    }
    residuals.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    for (slot, &basis) in dead.iter().enumerate() {
        let (_, pixel) = residuals[slot.min(residuals.len() - 1)];
        let src = flat.row(pixel).to_vec();
        mu.row_mut(basis).copy_from_slice(&src);
    }
    Ok(())
}

/// Runs init, then `iterations` E/M alternations (E before M), returning
/// the final bases and responsibilities.
pub fn run_em(x: &FeatureMap, cfg: &EmConfig) -> Result<EmOutcome> {
    let mut mu = init_bases(x, cfg)?;
    let mut z: Option<Responsibility> = None;
    let mut shifts = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let zr = e_step(x, &mu, cfg.temperature)?;
        let mut next = m_step(x, &zr)?;
        if cfg.normalize_bases {
            normalize_rows(&mut next.data);
        }
        shifts.push(mean_row_shift(&mu.data, &next.data));
        mu = next;
        z = Some(zr);
    }
    let z = if cfg.refresh_responsibilities || z.is_none() {
        e_step(x, &mu, cfg.temperature)?
    } else {
        z.unwrap()
    };
    Ok(EmOutcome { bases: mu, responsibilities: z, basis_shifts: shifts })
}

fn normalize_rows(m: &mut Matrix) {
    for i in 0..m.rows() {
        let norm: f64 = m.row(i).iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in m.row_mut(i) {
                *v = (*v as f64 / norm) as f32;
            }
        }
    }
}

fn mean_row_shift(a: &Matrix, b: &Matrix) -> f64 {
    let mut total = 0f64;
    for i in 0..a.rows() {
        let d: f64 = a
            .row(i)
            .iter()
            .zip(b.row(i))
            .map(|(&x, &y)| {
                let d = x as f64 - y as f64;
                d * d
            })
            .sum();
        total += d.sqrt();
    }
    total / a.rows() as f64
}

/// Hard assignment: each pixel goes to the basis with the largest dot
/// product, ties broken toward the lowest index.
pub fn hard_assign(x: &FeatureMap, mu: &BasisSet) -> Result<Vec<usize>> {
    if mu.channels() != x.channels() {
        return Err(CoreError::Shape(format!(
            "basis channels {} != feature channels {}",
            mu.channels(),
            x.channels()
        )));
    }
    let flat = x.flattened();
    let mut out = Vec::with_capacity(flat.rows());
    for p in 0..flat.rows() {
        let xrow = flat.row(p);
        let mut best = 0usize;
        let mut best_dot = f64::NEG_INFINITY;
        for k in 0..mu.num_bases() {
            let dot: f64 = mu
                .data
                .row(k)
                .iter()
                .zip(xrow)
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum();
            if dot > best_dot {
                best_dot = dot;
                best = k;
            }
        }
        out.push(best);
    }
    Ok(out)
}
