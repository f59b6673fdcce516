//! Non-negative matrix factorization `A ≈ W H` of a sparse matrix under the
//! Frobenius objective, using Lee–Seung multiplicative updates.

use ndarray::{Array2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sprs::CsMat;

use crate::error::{Error, Result};

/// Floor applied to every update denominator.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NmfInit {
    /// Seeded uniform (0, 1) entries scaled by `sqrt(mean(A) / N)`.
    #[default]
    RandomUniform,
    /// Nonnegative parts of a truncated SVD, zeros filled with `mean(A)`.
    Nndsvd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmfConfig {
    pub n_topics: usize,
    pub max_iter: usize,
    /// Stop once the relative objective change falls below this.
    pub tol: f64,
    pub seed: u64,
    pub init: NmfInit,
}

impl NmfConfig {
    pub fn new(n_topics: usize) -> Self {
        NmfConfig {
            n_topics,
            ..NmfConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_topics < 1 {
            return Err(Error::Config("n_topics must be at least 1".into()));
        }
        if self.max_iter < 1 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("tol must be positive".into()));
        }
        Ok(())
    }
}

impl Default for NmfConfig {
    fn default() -> Self {
        NmfConfig {
            n_topics: 10,
            max_iter: 300,
            tol: 1e-5,
            seed: 42,
            init: NmfInit::RandomUniform,
        }
    }
}

/// Document-topic `w` (n x N) and topic-term `h` (N x m).
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    pub w: Array2<f64>,
    pub h: Array2<f64>,
}

/// What happened during a factorization.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NmfTrace {
    /// `0.5 * |A - WH|_F^2` before the first update and after every
    /// iteration.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// The input was all zeros and zero factors were returned.
    pub degenerate: bool,
}

pub fn factorize(a: &CsMat<f64>, config: &NmfConfig) -> Result<FactorPair> {
    factorize_traced(a, config).map(|(f, _)| f)
}

pub fn factorize_traced(a: &CsMat<f64>, config: &NmfConfig) -> Result<(FactorPair, NmfTrace)> {
    config.validate()?;
    if let Some(v) = a.data().iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::Contract(format!(
            "NMF input must be finite and nonnegative, found {v}"
        )));
    }
    let (n, m) = a.shape();
    let k = config.n_topics;
    let csr = if a.is_csr() { a.clone() } else { a.to_csr() };
    let csc = csr.to_csc();

    let a_sq: f64 = csr.data().iter().map(|v| v * v).sum();
    if a_sq == 0.0 {
        log::warn!("NMF input ({n}x{m}) is all zeros; returning zero factors");
        let trace = NmfTrace {
            objective: vec![0.0],
            iterations: 0,
            converged: true,
            degenerate: true,
        };
        return Ok((
            FactorPair {
                w: Array2::zeros((n, k)),
                h: Array2::zeros((k, m)),
            },
            trace,
        ));
    }

    let (mut w, mut h) = match config.init {
        NmfInit::RandomUniform => random_init(&csr, k, config.seed),
        NmfInit::Nndsvd => nndsvd_init(&csr, &csc, k, config.seed),
    };

    let mut trace = NmfTrace::default();
    let aht = a_times_ht(&csr, &h);
    let mut prev = objective_from_parts(a_sq, &w, &h, &aht);
    trace.objective.push(prev);

    for it in 0..config.max_iter {
        // H <- H * (W^T A) / (W^T W H)
        let wta = wt_times_a(&csc, &w, k);
        let wtw = w.t().dot(&w);
        let denom = wtw.dot(&h);
        Zip::from(&mut h)
            .and(&wta)
            .and(&denom)
            .for_each(|x, &num, &den| *x *= num / den.max(DENOMINATOR_FLOOR));

        // W <- W * (A H^T) / (W H H^T)
        let aht = a_times_ht(&csr, &h);
        let hht = h.dot(&h.t());
        let denom = w.dot(&hht);
        Zip::from(&mut w)
            .and(&aht)
            .and(&denom)
            .for_each(|x, &num, &den| *x *= num / den.max(DENOMINATOR_FLOOR));

        let obj = objective_with_hht(a_sq, &w, &hht, &aht);
        trace.objective.push(obj);
        trace.iterations = it + 1;
        let rel = (prev - obj).abs() / prev.max(f64::MIN_POSITIVE);
        prev = obj;
        if obj == 0.0 || rel < config.tol {
            trace.converged = true;
            break;
        }
    }
    Ok((FactorPair { w, h }, trace))
}

/// `(W^T A)` as an N x m matrix, one column of `A` at a time.
fn wt_times_a(csc: &CsMat<f64>, w: &Array2<f64>, k: usize) -> Array2<f64> {
    let m = csc.cols();
    let cols: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|j| {
            let mut acc = vec![0.0; k];
            for (i, &v) in csc.outer_view(j).unwrap().iter() {
                let wi = w.row(i);
                for (a, &x) in acc.iter_mut().zip(wi.iter()) {
                    *a += x * v;
                }
            }
            acc
        })
        .collect();
    let mut out = Array2::zeros((k, m));
    for (j, col) in cols.iter().enumerate() {
        for (t, &v) in col.iter().enumerate() {
            out[[t, j]] = v;
        }
    }
    out
}

/// `(A H^T)` as an n x N matrix, one row of `A` at a time.
fn a_times_ht(csr: &CsMat<f64>, h: &Array2<f64>) -> Array2<f64> {
    let k = h.nrows();
    let ht = h.t().as_standard_layout().into_owned();
    let rows: Vec<Vec<f64>> = (0..csr.rows())
        .into_par_iter()
        .map(|i| {
            let mut acc = vec![0.0; k];
            for (j, &v) in csr.outer_view(i).unwrap().iter() {
                for (a, &x) in acc.iter_mut().zip(ht.row(j).iter()) {
                    *a += v * x;
                }
            }
            acc
        })
        .collect();
    let mut out = Array2::zeros((csr.rows(), k));
    for (i, row) in rows.iter().enumerate() {
        for (t, &v) in row.iter().enumerate() {
            out[[i, t]] = v;
        }
    }
    out
}

/// `0.5 |A - WH|^2 = 0.5 (|A|^2 - 2 <W, A H^T> + <W^T W, H H^T>)`.
fn objective_from_parts(a_sq: f64, w: &Array2<f64>, h: &Array2<f64>, aht: &Array2<f64>) -> f64 {
    objective_with_hht(a_sq, w, &h.dot(&h.t()), aht)
}

fn objective_with_hht(a_sq: f64, w: &Array2<f64>, hht: &Array2<f64>, aht: &Array2<f64>) -> f64 {
    let cross: f64 = Zip::from(w).and(aht).fold(0.0, |acc, &x, &y| acc + x * y);
    let wtw = w.t().dot(w);
    let quad: f64 = Zip::from(&wtw)
        .and(hht)
        .fold(0.0, |acc, &x, &y| acc + x * y);
    (0.5 * (a_sq - 2.0 * cross + quad)).max(0.0)
}

fn mean_entry(a: &CsMat<f64>) -> f64 {
    let (n, m) = a.shape();
    a.data().iter().sum::<f64>() / (n as f64 * m as f64)
}

fn random_init(a: &CsMat<f64>, k: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
    let (n, m) = a.shape();
    let scale = (mean_entry(a) / k as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // 1 - U[0,1) lies in (0, 1]; a zero would never move under the updates
    let mut draw = || (1.0 - rng.gen::<f64>()) * scale;
    let w = Array2::from_shape_simple_fn((n, k), &mut draw);
    let h = Array2::from_shape_simple_fn((k, m), &mut draw);
    (w, h)
}

fn orthonormalize(cols: &mut Array2<f64>) {
    // modified Gram-Schmidt over columns
    let k = cols.ncols();
    for j in 0..k {
        for p in 0..j {
            let proj = cols.column(p).dot(&cols.column(j));
            let pc = cols.column(p).to_owned();
            cols.column_mut(j).scaled_add(-proj, &pc);
        }
        let norm = cols.column(j).dot(&cols.column(j)).sqrt();
        if norm > 0.0 {
            cols.column_mut(j).mapv_inplace(|x| x / norm);
        }
    }
}

fn sparse_times_dense(a: &CsMat<f64>, x: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.rows(), x.ncols()));
    for (i, row) in a.outer_iterator().enumerate() {
        for (j, &v) in row.iter() {
            out.row_mut(i).scaled_add(v, &x.row(j));
        }
    }
    out
}

/// Leading `k` singular triplets by block power iteration, returned as
/// `(U: n x k, sigma, V: m x k)`.
fn truncated_svd(
    csr: &CsMat<f64>,
    csc: &CsMat<f64>,
    k: usize,
    seed: u64,
) -> (Array2<f64>, Vec<f64>, Array2<f64>) {
    const POWER_ITERS: usize = 30;
    let m = csr.cols();
    let at = csc.transpose_view().to_owned(); // CSR of A^T
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5EED);
    let mut v = Array2::from_shape_simple_fn((m, k), || rng.gen::<f64>() - 0.5);
    orthonormalize(&mut v);
    for _ in 0..POWER_ITERS {
        let mut u = sparse_times_dense(csr, &v);
        orthonormalize(&mut u);
        v = sparse_times_dense(&at, &u);
        orthonormalize(&mut v);
    }
    let mut u = sparse_times_dense(csr, &v);
    orthonormalize(&mut u);
    // B = U^T A (k x m); eigen-decompose B B^T
    let b = sparse_times_dense(&at, &u).reversed_axes();
    let bbt = b.dot(&b.t());
    let sym = nalgebra::DMatrix::from_fn(k, k, |i, j| bbt[[i, j]]);
    let eig = nalgebra::SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
    let mut left = Array2::zeros((csr.rows(), k));
    let mut right = Array2::zeros((m, k));
    let mut sigma = Vec::with_capacity(k);
    for (c, &o) in order.iter().enumerate() {
        let s = eig.eigenvalues[o].max(0.0).sqrt();
        sigma.push(s);
        let y: Vec<f64> = (0..k).map(|r| eig.eigenvectors[(r, o)]).collect();
        for i in 0..csr.rows() {
            left[[i, c]] = (0..k).map(|r| u[[i, r]] * y[r]).sum();
        }
        if s > 0.0 {
            for j in 0..m {
                right[[j, c]] = (0..k).map(|r| b[[r, j]] * y[r]).sum::<f64>() / s;
            }
        }
    }
    (left, sigma, right)
}

fn nndsvd_init(
    csr: &CsMat<f64>,
    csc: &CsMat<f64>,
    k: usize,
    seed: u64,
) -> (Array2<f64>, Array2<f64>) {
    let (n, m) = csr.shape();
    if k > n.min(m) {
        log::warn!("nndsvd needs n_topics <= min(n, m); falling back to random init");
        return random_init(csr, k, seed);
    }
    let (u, sigma, v) = truncated_svd(csr, csc, k, seed);
    let mut w = Array2::zeros((n, k));
    let mut h = Array2::zeros((k, m));
    let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
    for j in 0..k {
        let x: Vec<f64> = u.column(j).to_vec();
        let y: Vec<f64> = v.column(j).to_vec();
        let xp: Vec<f64> = x.iter().map(|a| a.max(0.0)).collect();
        let xn: Vec<f64> = x.iter().map(|a| (-a).max(0.0)).collect();
        let yp: Vec<f64> = y.iter().map(|a| a.max(0.0)).collect();
        let yn: Vec<f64> = y.iter().map(|a| (-a).max(0.0)).collect();
        let (nxp, nyp, nxn, nyn) = (norm(&xp), norm(&yp), norm(&xn), norm(&yn));
        let (mp, mn) = (nxp * nyp, nxn * nyn);
        let (ux, vy, scale, nx, ny) = if mp >= mn {
            (xp, yp, mp, nxp, nyp)
        } else {
            (xn, yn, mn, nxn, nyn)
        };
        let lambda = (sigma[j] * scale).sqrt();
        if nx > 0.0 && ny > 0.0 {
            for i in 0..n {
                w[[i, j]] = lambda * ux[i] / nx;
            }
            for c in 0..m {
                h[[j, c]] = lambda * vy[c] / ny;
            }
        }
    }
    let fill = mean_entry(csr);
    w.mapv_inplace(|x| if x > 0.0 { x } else { fill });
    h.mapv_inplace(|x| if x > 0.0 { x } else { fill });
    (w, h)
}

/// `|A - WH|_F`, evaluated entry by entry.
pub fn reconstruction_error(a: &CsMat<f64>, w: &Array2<f64>, h: &Array2<f64>) -> Result<f64> {
    let (n, m) = a.shape();
    if w.nrows() != n || h.ncols() != m || w.ncols() != h.nrows() {
        return Err(Error::Shape(format!(
            "A is {n}x{m}, W is {}x{}, H is {}x{}",
            w.nrows(),
            w.ncols(),
            h.nrows(),
            h.ncols()
        )));
    }
    let csr = if a.is_csr() { a.clone() } else { a.to_csr() };
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut approx = w.row(i).dot(h);
            for (j, &v) in csr.outer_view(i).unwrap().iter() {
                approx[j] -= v;
            }
            approx.iter().map(|x| x * x).sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    Ok(total.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use sprs::TriMat;

    fn sparse(dense: &Array2<f64>) -> CsMat<f64> {
        let mut tri = TriMat::new(dense.dim());
        for ((i, j), &v) in dense.indexed_iter() {
            if v != 0.0 {
                tri.add_triplet(i, j, v);
            }
        }
        tri.to_csr()
    }

    #[test]
    fn rank_one_is_recovered() {
        let a = arr2(&[[3.0, 0.0, 1.0], [6.0, 0.0, 2.0]]);
        let cfg = NmfConfig {
            tol: 1e-12,
            max_iter: 2000,
            ..NmfConfig::new(1)
        };
        let f = factorize(&sparse(&a), &cfg).unwrap();
        let err = reconstruction_error(&sparse(&a), &f.w, &f.h).unwrap();
        let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(err / norm < 1e-4, "relative error {}", err / norm);
        assert_eq!(f.h[[0, 1]], 0.0);
    }

    #[test]
    fn zero_input_gives_zero_factors() {
        let a = CsMat::<f64>::zero((4, 3));
        let (f, trace) = factorize_traced(&a, &NmfConfig::new(2)).unwrap();
        assert!(trace.degenerate);
        assert!(f.w.iter().all(|&x| x == 0.0));
        assert!(f.h.iter().all(|&x| x == 0.0));
        assert_eq!(f.w.dim(), (4, 2));
        assert_eq!(f.h.dim(), (2, 3));
    }

    #[test]
    fn negative_entry_is_rejected() {
        let a = sparse(&arr2(&[[1.0, -0.5]]));
        assert!(matches!(
            factorize(&a, &NmfConfig::new(1)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let a = sparse(&arr2(&[[1.0]]));
        for cfg in [
            NmfConfig::new(0),
            NmfConfig {
                max_iter: 0,
                ..NmfConfig::new(1)
            },
            NmfConfig {
                tol: 0.0,
                ..NmfConfig::new(1)
            },
        ] {
            assert!(matches!(factorize(&a, &cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn reconstruction_error_examples() {
        let a = sparse(&arr2(&[[1.0]]));
        let e = reconstruction_error(&a, &arr2(&[[1.0]]), &arr2(&[[0.5]])).unwrap();
        assert!((e - 0.5).abs() < 1e-15);

        let a = sparse(&arr2(&[[3.0, 4.0], [0.0, 0.0]]));
        let e = reconstruction_error(&a, &Array2::zeros((2, 1)), &Array2::zeros((1, 2))).unwrap();
        assert!((e - 5.0).abs() < 1e-15);

        let w = arr2(&[[1.0], [2.0]]);
        let h = arr2(&[[3.0, 0.0, 1.0]]);
        let a = sparse(&w.dot(&h));
        assert!(reconstruction_error(&a, &w, &h).unwrap() < 1e-9);

        assert!(matches!(
            reconstruction_error(&a, &arr2(&[[1.0]]), &h),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_rows_stay_zero_and_objective_matches_direct_evaluation() {
        let a = arr2(&[
            [1.0, 0.0, 2.0, 0.5],
            [0.0, 0.0, 0.0, 0.0],
            [0.3, 1.0, 0.0, 0.0],
            [2.0, 0.1, 1.0, 0.0],
        ]);
        let sa = sparse(&a);
        let (f, trace) = factorize_traced(&sa, &NmfConfig::new(2)).unwrap();
        assert!(f.w.row(1).iter().all(|&x| x == 0.0));
        let direct = reconstruction_error(&sa, &f.w, &f.h).unwrap();
        let last = *trace.objective.last().unwrap();
        assert!((0.5 * direct * direct - last).abs() < 1e-10);
    }

    #[test]
    fn deterministic_for_a_seed() {
        let a = sparse(&arr2(&[[1.0, 0.2, 0.0], [0.0, 1.0, 0.7], [0.4, 0.0, 1.0]]));
        let cfg = NmfConfig::new(2);
        let f1 = factorize(&a, &cfg).unwrap();
        let f2 = factorize(&a, &cfg).unwrap();
        let bits = |x: &Array2<f64>| x.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&f1.w), bits(&f2.w));
        assert_eq!(bits(&f1.h), bits(&f2.h));
        let other = factorize(&a, &NmfConfig { seed: 7, ..cfg }).unwrap();
        assert_ne!(bits(&f1.w), bits(&other.w));
    }

    #[test]
    fn nndsvd_init_converges_monotonically() {
        let a = arr2(&[
            [5.0, 4.0, 0.0, 0.0],
            [4.0, 5.0, 0.0, 0.1],
            [0.0, 0.0, 3.0, 3.5],
            [0.2, 0.0, 3.5, 3.0],
        ]);
        let cfg = NmfConfig {
            init: NmfInit::Nndsvd,
            ..NmfConfig::new(2)
        };
        let (f, trace) = factorize_traced(&sparse(&a), &cfg).unwrap();
        assert!(trace.objective.windows(2).all(|p| p[1] <= p[0] + 1e-10));
        let err = reconstruction_error(&sparse(&a), &f.w, &f.h).unwrap();
        assert!(err < 1.5, "error {err}");
    }
}
