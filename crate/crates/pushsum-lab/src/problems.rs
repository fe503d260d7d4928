//! Synthetic local-loss families with controllable heterogeneity and
//! gradient noise.
//!
//! Both families expose exact per-node gradients (the oracle for every
//! optimizer test), a stochastic gradient keyed by `(seed, round, node)`,
//! and analytic smoothness constants.
//!
//! * Quadratics `f_i(x) = (x - c_i)' A_i (x - c_i) / 2` with symmetric
//!   positive-definite `A_i` (eigenvalues in `[1, 4]`). The heterogeneity
//!   knob scales the spread of the centers `c_i` around the origin; noise
//!   is additive Gaussian with per-coordinate std `sigma / sqrt(d)` so the
//!   total variance is exactly `sigma^2`.
//! * Two-cluster logistic regression on Gaussian class data. Nodes in
//!   cluster 0 draw predominantly class `-1` samples, cluster 1 class
//!   `+1`; the mixing fraction is `1 - heterogeneity`, so heterogeneity 1
//!   gives disjoint label support. An l2 regularizer keeps the loss
//!   strongly convex. Stochastic gradients are uniform minibatches; their
//!   variance is measured, not enforced.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::numeric::{vec_l2_sq};
use crate::rng::{keyed_rng, stream};

/// Eigenvalue range of the quadratic curvature matrices.
const QUAD_EIG_MIN: f64 = 1.0;
const QUAD_EIG_MAX: f64 = 4.0;

/// Logistic data constants.
const SAMPLES_PER_NODE: usize = 100;
const DEFAULT_BATCH: usize = 10;
const LOGISTIC_REG: f64 = 1e-3;
const CLASS_MEAN_NORM: f64 = 2.0;

/// Monte-Carlo draws used when measuring sampling variance.
const VARIANCE_PROBE_DRAWS: u64 = 400;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Quadratic,
    Logistic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub dim_d: usize,
    pub n_nodes: usize,
    pub heterogeneity: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.dim_d == 0 {
            return Err("dim_d must be >= 1".into());
        }
        if self.n_nodes == 0 {
            return Err("n_nodes must be >= 1".into());
        }
        if self.noise_sigma < 0.0 {
            return Err(format!("noise_sigma = {} must be >= 0", self.noise_sigma));
        }
        if self.heterogeneity < 0.0 {
            return Err(format!("heterogeneity = {} must be >= 0", self.heterogeneity));
        }
        Ok(())
    }
}

/// Measured heterogeneity and noise levels plus the analytic smoothness
/// constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub kappa_sq: f64,
    pub sigma_sq: f64,
    pub smoothness_l: f64,
}

// ---------------------------------------------------------------------------
// Small dense helpers
// ---------------------------------------------------------------------------

fn mat_vec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(x).map(|(m, v)| m * v).sum()).collect()
}

/// Gaussian elimination with partial pivoting; `a` is square.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let d = b.len();
    for col in 0..d {
        let pivot = (col..d)
            .max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        assert!(a[col][col].abs() > 1e-12, "singular system");
        for row in col + 1..d {
            let factor = a[row][col] / a[col][col];
            for k in col..d {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; d];
    for row in (0..d).rev() {
        let mut acc = b[row];
        for k in row + 1..d {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    x
}

/// Random orthogonal matrix via Gram-Schmidt on a Gaussian draw.
fn random_orthogonal(d: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut cols: Vec<Vec<f64>> = (0..d)
        .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    for j in 0..d {
        // Two passes keep the basis orthogonal to machine precision.
        for _ in 0..2 {
            for k in 0..j {
                let dot: f64 = cols[j].iter().zip(&cols[k]).map(|(a, b)| a * b).sum();
                let prev = cols[k].clone();
                for (c, p) in cols[j].iter_mut().zip(&prev) {
                    *c -= dot * p;
                }
            }
        }
        let norm = vec_l2_sq(&cols[j]).sqrt();
        assert!(norm > 1e-8, "degenerate Gaussian draw");
        for c in &mut cols[j] {
            *c /= norm;
        }
    }
    cols // columns as rows of Q^T; orthogonality is all that matters
}

// ---------------------------------------------------------------------------
// Quadratic family
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct QuadraticProblem {
    mats: Vec<Vec<Vec<f64>>>, // per node, d x d symmetric PD
    centers: Vec<Vec<f64>>,
    smoothness: f64,
    noise_sigma: f64,
}

impl QuadraticProblem {
    /// Build from explicit curvature matrices and centers. `smoothness`
    /// is taken as the largest row-sum bound unless the caller knows the
    /// exact eigenvalues (the random constructor does).
    pub fn from_components(
        mats: Vec<Vec<Vec<f64>>>,
        centers: Vec<Vec<f64>>,
        smoothness: f64,
        noise_sigma: f64,
    ) -> Self {
        assert_eq!(mats.len(), centers.len());
        QuadraticProblem { mats, centers, smoothness, noise_sigma }
    }

    /// The benchmark pair: two one-dimensional parabolas with unit
    /// curvature and centers at -1 and +1; global minimizer 0, f(0) = 1.
    pub fn symmetric_pair(noise_sigma: f64) -> Self {
        QuadraticProblem::from_components(
            vec![vec![vec![1.0]], vec![vec![1.0]]],
            vec![vec![-1.0], vec![1.0]],
            1.0,
            noise_sigma,
        )
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    /// Exact minimizer of the average loss: solve `(sum A_i) x = sum A_i c_i`.
    pub fn global_minimizer(&self) -> Vec<f64> {
        let d = self.centers[0].len();
        let mut lhs = vec![vec![0.0; d]; d];
        let mut rhs = vec![0.0; d];
        for (a, c) in self.mats.iter().zip(&self.centers) {
            for r in 0..d {
                for k in 0..d {
                    lhs[r][k] += a[r][k];
                }
            }
            for (acc, v) in rhs.iter_mut().zip(mat_vec(a, c)) {
                *acc += v;
            }
        }
        solve_linear(lhs, rhs)
    }
}

/// Random quadratic instance: per-node curvature `Q D Q'` with eigenvalues
/// uniform in `[1, 4]`, centers spread by the heterogeneity knob.
pub fn make_quadratic(spec: &ProblemSpec) -> QuadraticProblem {
    let d = spec.dim_d;
    let mut mats = Vec::with_capacity(spec.n_nodes);
    let mut centers = Vec::with_capacity(spec.n_nodes);
    let mut smoothness = f64::MIN;
    for i in 0..spec.n_nodes {
        let mut rng = keyed_rng(&[spec.seed, stream::QUAD_MATRIX, i as u64]);
        let eigs: Vec<f64> =
            (0..d).map(|_| rng.gen_range(QUAD_EIG_MIN..QUAD_EIG_MAX)).collect();
        smoothness = smoothness.max(eigs.iter().copied().fold(f64::MIN, f64::max));
        let q = random_orthogonal(d, &mut rng);
        // A = sum_k eig_k * q_k q_k'
        let mut a = vec![vec![0.0; d]; d];
        for (k, qk) in q.iter().enumerate() {
            for r in 0..d {
                for c in 0..d {
                    a[r][c] += eigs[k] * qk[r] * qk[c];
                }
            }
        }
        // Exact symmetry, so the gradient field is conservative to the bit.
        for r in 0..d {
            for c in 0..r {
                let avg = 0.5 * (a[r][c] + a[c][r]);
                a[r][c] = avg;
                a[c][r] = avg;
            }
        }
        mats.push(a);

        let mut crng = keyed_rng(&[spec.seed, stream::QUAD_CENTER, i as u64]);
        centers.push(
            (0..d)
                .map(|_| spec.heterogeneity * (crng.gen::<f64>() * 2.0 - 1.0))
                .collect(),
        );
    }
    QuadraticProblem { mats, centers, smoothness, noise_sigma: spec.noise_sigma }
}

// ---------------------------------------------------------------------------
// Logistic family
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct LogisticProblem {
    features: Vec<Vec<Vec<f64>>>, // per node, per sample
    labels: Vec<Vec<f64>>,        // +-1
    reg: f64,
    batch: usize,
    smoothness: f64,
}

impl LogisticProblem {
    pub fn samples(&self, i: usize) -> (&[Vec<f64>], &[f64]) {
        (&self.features[i], &self.labels[i])
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    /// Full-batch variant, making the stochastic gradient exact.
    pub fn with_full_batch(mut self) -> Self {
        self.batch = SAMPLES_PER_NODE;
        self
    }

    fn grad_at(&self, i: usize, x: &[f64], sample_idx: &[usize]) -> Vec<f64> {
        let d = x.len();
        let mut g = vec![0.0; d];
        for &s in sample_idx {
            let feats = &self.features[i][s];
            let label = self.labels[i][s];
            let margin: f64 = label * feats.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            // d/dx ln(1 + exp(-m)) = -label * sigmoid(-m) * feats
            let coeff = -label / (1.0 + margin.exp());
            for (acc, f) in g.iter_mut().zip(feats) {
                *acc += coeff * f;
            }
        }
        let scale = 1.0 / sample_idx.len() as f64;
        for (acc, xv) in g.iter_mut().zip(x) {
            *acc = *acc * scale + self.reg * xv;
        }
        g
    }
}

/// Stable `ln(1 + exp(z))`.
fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Two-cluster synthetic classification instance. The first half of the
/// nodes form cluster 0 (class `-1` majority), the rest cluster 1.
///
/// The last feature coordinate is a constant intercept. Without it the
/// two classes would be antipodal mirrors of each other and pure-class
/// nodes would share the same expected gradient everywhere; the intercept
/// is what makes disjoint label support genuinely heterogeneous.
pub fn make_logistic(spec: &ProblemSpec) -> LogisticProblem {
    let d = spec.dim_d;
    let n = spec.n_nodes;
    let informative = d.saturating_sub(1);
    let mean_scale = CLASS_MEAN_NORM / (informative.max(1) as f64).sqrt();
    let mix = (1.0 - spec.heterogeneity).clamp(0.0, 1.0);
    let own_prob = 1.0 - mix / 2.0;
    let half = n.div_ceil(2);
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut sq_norm_sum_max = 0.0f64;
    for i in 0..n {
        let own_class = if i < half { -1.0 } else { 1.0 };
        let mut feats = Vec::with_capacity(SAMPLES_PER_NODE);
        let mut labs = Vec::with_capacity(SAMPLES_PER_NODE);
        let mut sq_norm_sum = 0.0;
        for s in 0..SAMPLES_PER_NODE {
            let mut rng = keyed_rng(&[spec.seed, stream::LOGISTIC_DATA, i as u64, s as u64]);
            let label = if rng.gen::<f64>() < own_prob { own_class } else { -own_class };
            let mut sample: Vec<f64> = (0..informative)
                .map(|_| label * mean_scale + rng.sample::<f64, _>(StandardNormal))
                .collect();
            sample.push(1.0); // intercept
            sq_norm_sum += vec_l2_sq(&sample);
            feats.push(sample);
            labs.push(label);
        }
        sq_norm_sum_max = sq_norm_sum_max.max(sq_norm_sum);
        features.push(feats);
        labels.push(labs);
    }
    // Certified Lipschitz bound: the logistic Hessian is at most
    // (1/4m) sum_j x_j x_j' + reg I, whose largest eigenvalue is below the
    // trace bound used here.
    let smoothness = sq_norm_sum_max / (4.0 * SAMPLES_PER_NODE as f64) + LOGISTIC_REG;
    LogisticProblem { features, labels, reg: LOGISTIC_REG, batch: DEFAULT_BATCH, smoothness }
}

// ---------------------------------------------------------------------------
// Unified problem interface
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub enum Problem {
    Quadratic(QuadraticProblem),
    Logistic(LogisticProblem),
}

impl Problem {
    pub fn from_spec(spec: &ProblemSpec) -> Problem {
        match spec.kind {
            ProblemKind::Quadratic => Problem::Quadratic(make_quadratic(spec)),
            ProblemKind::Logistic => Problem::Logistic(make_logistic(spec)),
        }
    }

    pub fn n_nodes(&self) -> usize {
        match self {
            Problem::Quadratic(q) => q.centers.len(),
            Problem::Logistic(l) => l.features.len(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Problem::Quadratic(q) => q.centers[0].len(),
            Problem::Logistic(l) => l.features[0][0].len(),
        }
    }

    /// Analytic Lipschitz constant of every local gradient.
    pub fn smoothness(&self) -> f64 {
        match self {
            Problem::Quadratic(q) => q.smoothness,
            Problem::Logistic(l) => l.smoothness,
        }
    }

    pub fn local_loss(&self, i: usize, x: &[f64]) -> f64 {
        match self {
            Problem::Quadratic(q) => {
                let diff: Vec<f64> =
                    x.iter().zip(&q.centers[i]).map(|(a, b)| a - b).collect();
                let av = mat_vec(&q.mats[i], &diff);
                0.5 * diff.iter().zip(&av).map(|(a, b)| a * b).sum::<f64>()
            }
            Problem::Logistic(l) => {
                let (feats, labels) = l.samples(i);
                let data: f64 = feats
                    .iter()
                    .zip(labels)
                    .map(|(f, &y)| {
                        let margin: f64 =
                            y * f.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                        log1p_exp(-margin)
                    })
                    .sum();
                data / feats.len() as f64 + 0.5 * l.reg * vec_l2_sq(x)
            }
        }
    }

    /// Exact local gradient.
    pub fn local_grad(&self, i: usize, x: &[f64]) -> Vec<f64> {
        match self {
            Problem::Quadratic(q) => {
                let diff: Vec<f64> =
                    x.iter().zip(&q.centers[i]).map(|(a, b)| a - b).collect();
                mat_vec(&q.mats[i], &diff)
            }
            Problem::Logistic(l) => {
                let idx: Vec<usize> = (0..l.features[i].len()).collect();
                l.grad_at(i, x, &idx)
            }
        }
    }

    pub fn global_loss(&self, x: &[f64]) -> f64 {
        let n = self.n_nodes();
        (0..n).map(|i| self.local_loss(i, x)).sum::<f64>() / n as f64
    }

    pub fn global_grad(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n_nodes();
        let mut g = vec![0.0; self.dim()];
        for i in 0..n {
            for (acc, v) in g.iter_mut().zip(self.local_grad(i, x)) {
                *acc += v;
            }
        }
        for acc in &mut g {
            *acc /= n as f64;
        }
        g
    }

    /// Stochastic gradient at node `i`, keyed by `(seed, t, i)` so every
    /// draw is a pure function of its coordinates.
    pub fn stochastic_grad(&self, i: usize, x: &[f64], seed: u64, t: u64) -> Vec<f64> {
        match self {
            Problem::Quadratic(q) => {
                let mut g = self.local_grad(i, x);
                if q.noise_sigma > 0.0 {
                    let scale = q.noise_sigma / (x.len() as f64).sqrt();
                    let mut rng = keyed_rng(&[seed, stream::GRAD_NOISE, t, i as u64]);
                    for acc in &mut g {
                        *acc += scale * rng.sample::<f64, _>(StandardNormal);
                    }
                }
                g
            }
            Problem::Logistic(l) => {
                let m = l.features[i].len();
                let b = l.batch.min(m);
                if b == m {
                    return self.local_grad(i, x);
                }
                let mut rng = keyed_rng(&[seed, stream::BATCH, t, i as u64]);
                let idx: Vec<usize> = (0..b).map(|_| rng.gen_range(0..m)).collect();
                l.grad_at(i, x, &idx)
            }
        }
    }

    /// Measured heterogeneity (max over the reference points), measured
    /// sampling variance, and the analytic smoothness constant.
    pub fn measure_diversity(&self, reference_points: &[Vec<f64>], seed: u64) -> DiversityReport {
        assert!(!reference_points.is_empty());
        let n = self.n_nodes();
        let mut kappa_sq = 0.0f64;
        for x in reference_points {
            let global = self.global_grad(x);
            let spread: f64 = (0..n)
                .map(|i| {
                    let g = self.local_grad(i, x);
                    g.iter().zip(&global).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                })
                .sum::<f64>()
                / n as f64;
            kappa_sq = kappa_sq.max(spread);
        }
        let probe = &reference_points[0];
        let mut sigma_sq = 0.0;
        for i in 0..n {
            let exact = self.local_grad(i, probe);
            for draw in 0..VARIANCE_PROBE_DRAWS {
                let g = self.stochastic_grad(
                    i,
                    probe,
                    seed ^ stream::DIVERSITY_PROBE.wrapping_mul(0x9E37_79B9),
                    draw,
                );
                sigma_sq +=
                    g.iter().zip(&exact).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            }
        }
        sigma_sq /= (n as u64 * VARIANCE_PROBE_DRAWS) as f64;
        DiversityReport { kappa_sq, sigma_sq, smoothness_l: self.smoothness() }
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::vec_l2;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn quad_spec(heterogeneity: f64, sigma: f64, seed: u64) -> ProblemSpec {
        ProblemSpec {
            kind: ProblemKind::Quadratic,
            dim_d: 4,
            n_nodes: 5,
            heterogeneity,
            noise_sigma: sigma,
            seed,
        }
    }

    fn logistic_spec(heterogeneity: f64, seed: u64) -> ProblemSpec {
        ProblemSpec {
            kind: ProblemKind::Logistic,
            dim_d: 5,
            n_nodes: 6,
            heterogeneity,
            noise_sigma: 0.0,
            seed,
        }
    }

    /// Central finite differences of the local loss.
    fn fd_grad(p: &Problem, i: usize, x: &[f64]) -> Vec<f64> {
        let h = 1e-5;
        (0..x.len())
            .map(|k| {
                let mut plus = x.to_vec();
                plus[k] += h;
                let mut minus = x.to_vec();
                minus[k] -= h;
                (p.local_loss(i, &plus) - p.local_loss(i, &minus)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn quadratic_zero_heterogeneity_has_common_center() {
        let q = make_quadratic(&quad_spec(0.0, 0.0, 3));
        for c in q.centers() {
            for v in c {
                assert_eq!(*v, 0.0);
            }
        }
        // With identical parts the spread vanishes up to the rounding of
        // the mean gradient.
        let shared = q.mats[0].clone();
        let ident = QuadraticProblem::from_components(
            vec![shared.clone(); 3],
            vec![vec![0.5; 4]; 3],
            4.0,
            0.0,
        );
        let p = Problem::Quadratic(ident);
        let rep = p.measure_diversity(&[vec![1.0, -2.0, 0.0, 3.0]], 0);
        assert!(rep.kappa_sq < 1e-30, "{}", rep.kappa_sq);
    }

    #[test]
    fn symmetric_pair_minimizer_and_value() {
        let q = QuadraticProblem::symmetric_pair(0.0);
        let min = q.global_minimizer();
        assert_abs_diff_eq!(min[0], 0.0, epsilon = 1e-14);
        let p = Problem::Quadratic(q);
        // Each local loss is (0 - c)^2 / 2 = 1/2 at the minimizer.
        assert_abs_diff_eq!(p.global_loss(&[0.0]), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p.global_grad(&[0.0])[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn quadratic_gradient_matches_finite_differences() {
        let p = Problem::Quadratic(make_quadratic(&quad_spec(1.0, 0.0, 11)));
        let mut rng = keyed_rng(&[500]);
        for _ in 0..10 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
            for i in 0..p.n_nodes() {
                let exact = p.local_grad(i, &x);
                let approx = fd_grad(&p, i, &x);
                for (a, b) in exact.iter().zip(&approx) {
                    assert_abs_diff_eq!(a, b, epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let p = Problem::Logistic(make_logistic(&logistic_spec(1.0, 7)));
        let mut rng = keyed_rng(&[501]);
        for _ in 0..5 {
            let x: Vec<f64> = (0..5).map(|_| rng.gen::<f64>() - 0.5).collect();
            for i in 0..p.n_nodes() {
                let exact = p.local_grad(i, &x);
                let approx = fd_grad(&p, i, &x);
                for (a, b) in exact.iter().zip(&approx) {
                    assert_abs_diff_eq!(a, b, epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn logistic_heterogeneity_one_splits_label_support() {
        let l = make_logistic(&logistic_spec(1.0, 21));
        for i in 0..3 {
            assert!(l.labels[i].iter().all(|&y| y == -1.0));
        }
        for i in 3..6 {
            assert!(l.labels[i].iter().all(|&y| y == 1.0));
        }
    }

    #[test]
    fn logistic_kappa_small_when_iid_and_grows_with_heterogeneity() {
        // Reference points away from the origin, where the label split is
        // visible in the gradients.
        let refs = vec![vec![0.3, -0.2, 0.5, 0.1, -0.4], vec![1.0, 1.0, 0.0, -1.0, 0.5]];
        for seed in [1u64, 2, 3, 4, 5] {
            let iid = Problem::Logistic(make_logistic(&logistic_spec(0.0, seed)));
            let split = Problem::Logistic(make_logistic(&logistic_spec(1.0, seed)));
            let k_iid = iid.measure_diversity(&refs, seed).kappa_sq;
            let k_split = split.measure_diversity(&refs, seed).kappa_sq;
            assert!(k_iid < 0.05, "seed {seed}: iid kappa^2 = {k_iid}");
            assert!(
                k_split > k_iid,
                "seed {seed}: kappa^2 did not grow ({k_iid} -> {k_split})"
            );
        }
    }

    #[test]
    fn quadratic_noise_is_exact_and_unbiased() {
        let spec = quad_spec(0.5, 0.0, 9);
        let p = Problem::Quadratic(make_quadratic(&spec));
        let x = vec![0.2, -0.1, 0.7, 0.0];
        // sigma = 0: bit-exact gradient.
        assert_eq!(p.stochastic_grad(0, &x, 42, 1), p.local_grad(0, &x));

        let sigma = 0.7;
        let p = Problem::Quadratic(make_quadratic(&quad_spec(0.5, sigma, 9)));
        let exact = p.local_grad(0, &x);
        let draws = 100_000u64;
        let mut mean = vec![0.0; 4];
        let mut second = 0.0;
        for t in 0..draws {
            let g = p.stochastic_grad(0, &x, 42, t);
            for (m, v) in mean.iter_mut().zip(&g) {
                *m += v;
            }
            second += g.iter().zip(&exact).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        for m in &mut mean {
            *m /= draws as f64;
        }
        second /= draws as f64;
        // Mean within 3 standard errors of the exact gradient, variance
        // within 5% of sigma^2.
        let se = sigma / (4.0f64).sqrt() / (draws as f64).sqrt();
        for (m, e) in mean.iter().zip(&exact) {
            assert!((m - e).abs() < 3.0 * se, "bias {} vs se {}", (m - e).abs(), se);
        }
        assert!(second > sigma * sigma * 0.95 && second < sigma * sigma * 1.05);
    }

    #[test]
    fn logistic_full_batch_equals_exact() {
        let l = make_logistic(&logistic_spec(0.5, 4)).with_full_batch();
        let p = Problem::Logistic(l);
        let x = vec![0.1, 0.2, -0.3, 0.0, 0.4];
        assert_eq!(p.stochastic_grad(2, &x, 99, 3), p.local_grad(2, &x));
    }

    #[test]
    fn logistic_minibatch_is_unbiased() {
        let p = Problem::Logistic(make_logistic(&logistic_spec(1.0, 8)));
        let x = vec![0.2, -0.4, 0.1, 0.3, -0.2];
        let exact = p.local_grad(1, &x);
        let draws = 100_000u64;
        let mut mean = vec![0.0; 5];
        let mut dev_sq = 0.0;
        for t in 0..draws {
            let g = p.stochastic_grad(1, &x, 17, t);
            for (m, v) in mean.iter_mut().zip(&g) {
                *m += v;
            }
            dev_sq += g.iter().zip(&exact).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        for m in &mut mean {
            *m /= draws as f64;
        }
        let per_draw_var = dev_sq / draws as f64;
        let se = (per_draw_var / draws as f64).sqrt();
        let bias = vec_l2(&mean.iter().zip(&exact).map(|(a, b)| a - b).collect::<Vec<_>>());
        assert!(bias < 3.0 * se + 1e-12, "bias {bias} vs se {se}");
    }

    #[test]
    fn diversity_hand_example_and_sigma_zero() {
        let q = QuadraticProblem::symmetric_pair(0.0);
        let p = Problem::Quadratic(q);
        let rep = p.measure_diversity(&[vec![0.0]], 0);
        // Gradients at 0 are +1 and -1 around a zero mean.
        assert_abs_diff_eq!(rep.kappa_sq, 1.0, epsilon = 1e-15);
        assert_eq!(rep.sigma_sq, 0.0);
        assert_eq!(rep.smoothness_l, 1.0);
    }

    #[test]
    fn global_gradient_is_mean_of_locals() {
        let p = Problem::Logistic(make_logistic(&logistic_spec(0.7, 13)));
        let x = vec![0.3, 0.1, -0.5, 0.2, 0.0];
        let mut mean = vec![0.0; 5];
        for i in 0..p.n_nodes() {
            for (m, v) in mean.iter_mut().zip(p.local_grad(i, &x)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= p.n_nodes() as f64;
        }
        for (a, b) in p.global_grad(&x).iter().zip(&mean) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn gradients_are_smooth_with_analytic_constant() {
        let mut rng = keyed_rng(&[502]);
        for p in [
            Problem::Quadratic(make_quadratic(&quad_spec(1.0, 0.0, 31))),
            Problem::Logistic(make_logistic(&logistic_spec(1.0, 31))),
        ] {
            let l = p.smoothness();
            let d = p.dim();
            for _ in 0..20 {
                let x1: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
                let x2: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
                for i in 0..p.n_nodes() {
                    let g1 = p.local_grad(i, &x1);
                    let g2 = p.local_grad(i, &x2);
                    let num = vec_l2(&g1.iter().zip(&g2).map(|(a, b)| a - b).collect::<Vec<_>>());
                    let den = vec_l2(&x1.iter().zip(&x2).map(|(a, b)| a - b).collect::<Vec<_>>());
                    assert!(num <= l * den * (1.0 + 1e-9), "ratio {} > L {}", num / den, l);
                }
            }
        }
    }

    #[test]
    fn quadratic_kappa_monotone_in_heterogeneity() {
        // Probe at the common center, where the spread is exactly
        // h^2 * var(A_i u_i) and thus monotone by construction.
        for seed in [5u64, 6, 7] {
            let probe = vec![vec![0.0; 4]];
            let ks: Vec<f64> = [0.0, 0.5, 1.0]
                .iter()
                .map(|&h| {
                    Problem::Quadratic(make_quadratic(&quad_spec(h, 0.0, seed)))
                        .measure_diversity(&probe, seed)
                        .kappa_sq
                })
                .collect();
            assert!(ks[0] <= ks[1] && ks[1] <= ks[2], "seed {seed}: {ks:?}");
        }
    }

    #[test]
    fn construction_is_deterministic() {
        let a = make_logistic(&logistic_spec(0.8, 99));
        let b = make_logistic(&logistic_spec(0.8, 99));
        assert_eq!(a.features, b.features);
        assert_eq!(a.labels, b.labels);
    }
}
