//! Dense linear-algebra helpers shared by the alignment and grounding code.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Thin SVD of a square or rectangular matrix with a fixed sign convention:
/// the largest-magnitude entry of every left singular vector is positive
/// (the matching right singular vector is flipped with it).
pub struct Svd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

pub fn svd(m: &DMatrix<f64>) -> Svd {
    let decomposition = m.clone().svd(true, true);
    let mut u = decomposition.u.expect("U requested");
    let mut v_t = decomposition.v_t.expect("V^T requested");
    let singular_values = decomposition.singular_values;
    for j in 0..u.ncols() {
        let col = u.column(j);
        let mut best = 0.0f64;
        for &x in col.iter() {
            if x.abs() > best.abs() {
                best = x;
            }
        }
        if best < 0.0 {
            u.column_mut(j).neg_mut();
            v_t.row_mut(j).neg_mut();
        }
    }
    Svd {
        u,
        singular_values,
        v_t,
    }
}

/// Closest orthogonal matrix in Frobenius norm (polar factor `U Vᵀ`).
pub fn nearest_orthogonal(m: &DMatrix<f64>) -> DMatrix<f64> {
    let s = svd(m);
    &s.u * &s.v_t
}

/// Haar-distributed random orthogonal matrix from the QR factorization of a
/// Gaussian matrix, with the signs of `R`'s diagonal absorbed into `Q`.
pub fn random_orthogonal<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DMatrix<f64> {
    let g = gaussian_matrix(dim, dim, rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// `‖W Wᵀ − I‖_F`.
pub fn orthogonality_error(w: &DMatrix<f64>) -> f64 {
    let mut g = w * w.transpose();
    for i in 0..g.nrows() {
        g[(i, i)] -= 1.0;
    }
    g.norm()
}

/// Scales every row to unit L2 norm; zero rows stay zero.
pub fn normalize_rows(m: &mut DMatrix<f64>) {
    for mut row in m.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
    }
}

/// Indices of the `k` largest scores, descending, ties broken by the
/// smaller index.
pub fn top_k_desc(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    let k = k.min(idx.len());
    if k == 0 {
        return Vec::new();
    }
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_by(cmp);
    idx
}

/// Mean of the `k` largest values (k clamped to the slice length).
pub fn mean_top_k(values: &[f64], k: usize) -> f64 {
    let k = k.min(values.len());
    if k == 0 {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    v[..k].iter().sum::<f64>() / k as f64
}

/// SplitMix64 finalizer, used to derive independent sub-seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
