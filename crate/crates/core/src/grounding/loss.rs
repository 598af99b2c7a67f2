use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Symmetric in-batch NCE over a `B × B` score matrix whose diagonal holds
/// the positive pairs. Each element is contrasted against its text paired
/// with the other clips (row softmax) and its clip paired with the other
/// texts (column softmax); the two directions are averaged, so a batch with
/// all scores equal costs exactly `ln B`.
pub fn nce_loss_from_scores(scores: &DMatrix<f64>) -> Result<f64> {
    Ok(nce_with_grad(scores, false)?.0)
}

/// NCE loss between row-aligned text and clip embeddings.
pub fn nce_loss(text_embs: &DMatrix<f64>, clip_embs: &DMatrix<f64>) -> Result<f64> {
    if text_embs.shape() != clip_embs.shape() {
        return Err(Error::dims(
            "clip embedding batch",
            text_embs.nrows(),
            clip_embs.nrows(),
        ));
    }
    nce_loss_from_scores(&(text_embs * clip_embs.transpose()))
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Loss and, when requested, `∂loss/∂scores`.
pub(crate) fn nce_with_grad(scores: &DMatrix<f64>, want_grad: bool) -> Result<(f64, Option<DMatrix<f64>>)> {
    let b = scores.nrows();
    if b < 2 {
        return Err(Error::invalid("batch", "NCE needs at least 2 pairs"));
    }
    if !scores.is_square() {
        return Err(Error::dims("NCE score matrix columns", b, scores.ncols()));
    }
    let row_lse: Vec<f64> = (0..b).map(|i| log_sum_exp((0..b).map(|j| scores[(i, j)]))).collect();
    let col_lse: Vec<f64> = (0..b).map(|j| log_sum_exp((0..b).map(|i| scores[(i, j)]))).collect();
    let mut loss = 0.0;
    for i in 0..b {
        loss += row_lse[i] + col_lse[i] - 2.0 * scores[(i, i)];
    }
    let scale = 1.0 / (2.0 * b as f64);
    loss *= scale;

    let grad = want_grad.then(|| {
        DMatrix::from_fn(b, b, |i, j| {
            let s = scores[(i, j)];
            let mut g = (s - row_lse[i]).exp() + (s - col_lse[j]).exp();
            if i == j {
                g -= 2.0;
            }
            g * scale
        })
    });
    Ok((loss, grad))
}

fn gram_minus_identity(w: &DMatrix<f64>) -> DMatrix<f64> {
    let mut g = w * w.transpose();
    for i in 0..g.nrows() {
        g[(i, i)] -= 1.0;
    }
    g
}

/// `‖W Wᵀ − I‖²_F`.
pub fn ortho_penalty(w: &DMatrix<f64>) -> f64 {
    gram_minus_identity(w).norm_squared()
}

/// Gradient of [`ortho_penalty`]: `4 (W Wᵀ − I) W`.
pub fn ortho_penalty_grad(w: &DMatrix<f64>) -> DMatrix<f64> {
    gram_minus_identity(w) * w * 4.0
}
