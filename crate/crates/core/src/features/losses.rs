//! Contrastive, reconstruction and KL terms, both as plain functions on
//! vectors and as graph builders for training.

use crate::autodiff::{AutodiffError, Graph, Tensor, Var};

use super::FeatureError;

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_dims(a: &[f64], p: &[f64], n: &[f64]) -> Result<(), FeatureError> {
    if a.len() != p.len() || a.len() != n.len() {
        return Err(FeatureError::DimMismatch {
            anchor: a.len(),
            positive: p.len(),
            negative: n.len(),
        });
    }
    Ok(())
}

/// `max(‖a − p‖² − ‖a − n‖² + α, 0)`.
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], alpha: f64) -> Result<f64, FeatureError> {
    check_dims(anchor, positive, negative)?;
    Ok((squared_distance(anchor, positive) - squared_distance(anchor, negative) + alpha).max(0.0))
}

/// Triplet loss with anchor and positive exchanged and summed.
pub fn symmetric_triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], alpha: f64) -> Result<f64, FeatureError> {
    Ok(triplet_loss(anchor, positive, negative, alpha)? + triplet_loss(positive, anchor, negative, alpha)?)
}

/// Per-row symmetric triplet loss `[B, 1]` for feature matrices `[B, d]`.
pub fn symmetric_triplet_rows(g: &mut Graph, fa: Var, fp: Var, fn_: Var, alpha: f64) -> Result<Var, AutodiffError> {
    let row_sq_dist = |g: &mut Graph, x: Var, y: Var| -> Result<Var, AutodiffError> {
        let diff = g.sub(x, y)?;
        let sq = g.square(diff)?;
        g.sum_rows(sq)
    };
    let d_ap = row_sq_dist(g, fa, fp)?;
    let d_an = row_sq_dist(g, fa, fn_)?;
    let d_pn = row_sq_dist(g, fp, fn_)?;
    let hinge = |g: &mut Graph, neg: Var| -> Result<Var, AutodiffError> {
        let gap = g.sub(d_ap, neg)?;
        let shifted = g.add_scalar(gap, alpha)?;
        g.max_const(shifted, 0.0)
    };
    let l1 = hinge(g, d_an)?;
    let l2 = hinge(g, d_pn)?;
    g.add(l1, l2)
}

/// `(1/B) Σ wᵢ · L_sym(Φ(Aᵢ), Φ(Pᵢ), Φ(Nᵢ))` where `features` stacks the
/// anchors, positives and negatives as rows `[0, B)`, `[B, 2B)`, `[2B, 3B)`.
pub fn weighted_clea_loss(g: &mut Graph, features: Var, weights: &[f64], alpha: f64) -> Result<Var, AutodiffError> {
    let b = weights.len();
    let fa = g.slice_rows(features, 0, b)?;
    let fp = g.slice_rows(features, b, 2 * b)?;
    let fn_ = g.slice_rows(features, 2 * b, 3 * b)?;
    let rows = symmetric_triplet_rows(g, fa, fp, fn_, alpha)?;
    let w = g.constant(Tensor::new(vec![b, 1], weights.to_vec())?);
    let weighted = g.mul(rows, w)?;
    let total = g.sum(weighted)?;
    g.scale(total, 1.0 / b as f64)
}

/// Mean squared error over every payload entry.
pub fn reconstruction_loss(g: &mut Graph, reconstruction: Var, target: Var) -> Result<Var, AutodiffError> {
    let diff = g.sub(reconstruction, target)?;
    let sq = g.square(diff)?;
    g.mean(sq)
}

/// `0.5 · Σ_j (exp(logvar) + mean² − 1 − logvar)`, averaged over rows.
pub fn kl_loss(g: &mut Graph, mean: Var, logvar: Var) -> Result<Var, AutodiffError> {
    let rows = g.value(mean).matrix_dims().0;
    let var = g.exp(logvar)?;
    let m2 = g.square(mean)?;
    let a = g.add(var, m2)?;
    let b = g.sub(a, logvar)?;
    let c = g.add_scalar(b, -1.0)?;
    let total = g.sum(c)?;
    g.scale(total, 0.5 / rows as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplet_examples() {
        assert_eq!(triplet_loss(&[0.0, 0.0], &[0.0, 0.0], &[1.0, 0.0], 0.5).unwrap(), 0.0);
        assert_eq!(triplet_loss(&[0.0, 0.0], &[1.0, 0.0], &[1.0, 0.0], 0.5).unwrap(), 0.5);
        assert!(triplet_loss(&[0.0], &[1.0, 0.0], &[1.0, 0.0], 0.5).is_err());
    }

    #[test]
    fn symmetric_examples() {
        let (a, p, n) = ([0.3, -1.0], [1.2, 0.4], [0.1, 0.2]);
        assert_eq!(
            symmetric_triplet_loss(&a, &p, &n, 0.9).unwrap(),
            symmetric_triplet_loss(&p, &a, &n, 0.9).unwrap()
        );
        let d_an = squared_distance(&a, &n);
        assert_eq!(symmetric_triplet_loss(&a, &a, &n, 3.0).unwrap(), 2.0 * (3.0 - d_an).max(0.0));
    }

    #[test]
    fn kl_closed_forms() {
        let mut g = Graph::new();
        let m = g.constant(Tensor::from_rows(&[[0.0, 0.0]]).unwrap());
        let lv = g.constant(Tensor::from_rows(&[[0.0, 0.0]]).unwrap());
        let kl = kl_loss(&mut g, m, lv).unwrap();
        assert_eq!(g.value(kl).item(), 0.0);

        let m1 = g.constant(Tensor::from_rows(&[[1.0, 0.0]]).unwrap());
        let kl1 = kl_loss(&mut g, m1, lv).unwrap();
        assert!((g.value(kl1).item() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn perfect_reconstruction_is_zero() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[[0.2, -0.7], [1.0, 3.0]]).unwrap());
        let r = reconstruction_loss(&mut g, x, x).unwrap();
        assert_eq!(g.value(r).item(), 0.0);
    }
}
