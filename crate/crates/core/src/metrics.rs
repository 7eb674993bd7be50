//! Singular-value correction, analytical reconstruction and the complexity
//! metrics built on them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dense::Dense;
use crate::error::{Error, Result};
use crate::matrix::SparseMatrix;
use crate::perturb::{apply_perturbation, select_perturbation_sets, PerturbationParams, PerturbationPlan};
use crate::scalar::{CompensatedSum, Scalar};
use crate::split::EntrySet;
use crate::svd::{project_columns, truncated_svd, SvdFactors, SvdQuality};

/// First-order change of each retained singular value.
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaSigma<T> {
    pub values: Vec<T>,
    /// Entries whose squared corrected value came out negative and was
    /// clamped to zero.
    pub clamped_count: usize,
}

impl<T: Scalar> DeltaSigma<T> {
    pub fn zeros(k: usize) -> Self {
        Self { values: vec![T::zero(); k], clamped_count: 0 }
    }
}

/// `diag(V^T (A^T A - B^T B) V)` computed as the column-wise difference of
/// squared norms of `A V` and `B V`; neither Gramian is formed.
pub fn gramian_diagonal_shift<T: Scalar>(original: &SparseMatrix<T>, perturbed: &SparseMatrix<T>, v: &Dense<T>) -> Result<Vec<T>> {
    if original.n_rows() != perturbed.n_rows() || original.n_cols() != perturbed.n_cols() {
        return Err(Error::InvalidArgument(format!(
            "matrices differ in shape: {}x{} vs {}x{}",
            original.n_rows(),
            original.n_cols(),
            perturbed.n_rows(),
            perturbed.n_cols()
        )));
    }
    let av = project_columns(original, v)?;
    let bv = project_columns(perturbed, v)?;
    let mut sums = vec![CompensatedSum::new(); v.cols()];
    for i in 0..av.rows() {
        for ((sum, &a), &b) in sums.iter_mut().zip(av.row(i)).zip(bv.row(i)) {
            // (a - b)(a + b) is exactly zero when the rows agree.
            sum.add((a - b) * (a + b));
        }
    }
    Ok(sums.iter().map(CompensatedSum::value).collect())
}

/// Correction of the perturbed matrix's singular values toward the original
/// matrix. `factors` must come from `perturbed`.
pub fn delta_sigma<T: Scalar>(original: &SparseMatrix<T>, perturbed: &SparseMatrix<T>, factors: &SvdFactors<T>) -> Result<DeltaSigma<T>> {
    if factors.n_rows() != perturbed.n_rows() || factors.n_cols() != perturbed.n_cols() {
        return Err(Error::InvalidArgument("factors do not match the perturbed matrix".into()));
    }
    let shift = gramian_diagonal_shift(original, perturbed, &factors.v)?;
    let mut clamped_count = 0;
    let values = factors
        .sigma
        .iter()
        .zip(shift)
        .map(|(&s, d)| {
            if d == T::zero() {
                return T::zero();
            }
            let squared = s * s + d;
            if squared < T::zero() {
                clamped_count += 1;
                -s
            } else {
                squared.sqrt() - s
            }
        })
        .collect();
    Ok(DeltaSigma { values, clamped_count })
}

/// Evaluates `U (Sigma + correction) V^T` at the given cells only.
pub fn predict_entries<T: Scalar>(factors: &SvdFactors<T>, correction: &DeltaSigma<T>, positions: &EntrySet) -> Result<Vec<T>> {
    if correction.values.len() != factors.rank() {
        return Err(Error::InvalidArgument(format!(
            "correction has {} values for rank {}",
            correction.values.len(),
            factors.rank()
        )));
    }
    let (n, m) = (factors.n_rows(), factors.n_cols());
    if let Some(c) = positions.iter().find(|c| c.row >= n || c.col >= m) {
        return Err(Error::InvalidArgument(format!("position {c:?} outside {n}x{m}")));
    }
    let scaled: Vec<T> = factors.sigma.iter().zip(&correction.values).map(|(&s, &d)| s + d).collect();
    Ok(positions
        .positions
        .par_iter()
        .map(|c| {
            let u = factors.u.row(c.row);
            let v = factors.v.row(c.col);
            scaled.iter().zip(u).zip(v).fold(T::zero(), |acc, ((&s, &a), &b)| acc + a * s * b)
        })
        .collect())
}

/// Root mean squared error against the values of `original`, reading zero
/// at unobserved cells.
pub fn rmse_on<T: Scalar>(original: &SparseMatrix<T>, predictions: &[T], positions: &EntrySet) -> Result<T> {
    if positions.is_empty() {
        return Err(Error::InvalidArgument("RMSE over an empty position set".into()));
    }
    if predictions.len() != positions.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} positions",
            predictions.len(),
            positions.len()
        )));
    }
    let mut sum = CompensatedSum::new();
    for (c, &pred) in positions.iter().zip(predictions) {
        let r = original.get(c.row, c.col) - pred;
        sum.add(r * r);
    }
    Ok((sum.value() / T::lit(positions.len() as f64)).sqrt())
}

/// Mean absolute singular-value correction.
pub fn spectral_distance<T: Scalar>(correction: &DeltaSigma<T>, k: usize) -> Result<T> {
    if k == 0 || correction.values.len() != k {
        return Err(Error::InvalidArgument(format!("{} corrections for rank {k}", correction.values.len())));
    }
    let mut sum = CompensatedSum::new();
    for &d in &correction.values {
        sum.add(d.abs());
    }
    Ok(sum.value() / T::lit(k as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub rmse: f64,
    pub rmse_svd: f64,
    pub rmse_sc: f64,
    pub d_sc: f64,
    pub params: PerturbationParams,
    pub k: usize,
    pub n_pert: usize,
    pub clamped_count: usize,
}

/// Everything computed while scoring one perturbation plan.
#[derive(Clone, Debug)]
pub struct PlanEvaluation<T> {
    pub perturbed: SparseMatrix<T>,
    pub factors: SvdFactors<T>,
    pub correction: DeltaSigma<T>,
}

impl<T: Scalar> PlanEvaluation<T> {
    pub fn predict(&self, positions: &EntrySet) -> Result<Vec<T>> {
        predict_entries(&self.factors, &self.correction, positions)
    }
}

/// Perturbs, factorizes the perturbed matrix and derives its correction.
pub fn evaluate_plan<T: Scalar>(
    matrix: &SparseMatrix<T>,
    plan: &PerturbationPlan,
    k: usize,
    quality: &SvdQuality,
) -> Result<PlanEvaluation<T>> {
    let perturbed = apply_perturbation(matrix, plan)?;
    let factors = truncated_svd(&perturbed, k, quality)?;
    let correction = delta_sigma(matrix, &perturbed, &factors)?;
    Ok(PlanEvaluation { perturbed, factors, correction })
}

/// Plain rank-k reconstruction of `matrix` at `positions`, through the same
/// evaluation path as the corrected predictor.
pub fn baseline_predictions<T: Scalar>(
    matrix: &SparseMatrix<T>,
    positions: &EntrySet,
    k: usize,
    quality: &SvdQuality,
) -> Result<Vec<T>> {
    let factors = truncated_svd(matrix, k, quality)?;
    predict_entries(&factors, &DeltaSigma::zeros(k), positions)
}

pub fn complexity_report<T: Scalar>(
    matrix: &SparseMatrix<T>,
    params: &PerturbationParams,
    k: usize,
    quality: &SvdQuality,
) -> Result<ComplexityReport> {
    let plan = select_perturbation_sets(matrix, params)?;
    report_for_plan(matrix, &plan, k, quality)
}

pub fn report_for_plan<T: Scalar>(
    matrix: &SparseMatrix<T>,
    plan: &PerturbationPlan,
    k: usize,
    quality: &SvdQuality,
) -> Result<ComplexityReport> {
    let eval = evaluate_plan(matrix, plan, k, quality)?;
    let positions = plan.pert_set();
    let rmse = rmse_on(matrix, &eval.predict(&positions)?, &positions)?.as_f64();
    let rmse_svd = rmse_on(matrix, &baseline_predictions(matrix, &positions, k, quality)?, &positions)?.as_f64();
    if rmse_svd == 0.0 {
        return Err(Error::RatioUndefined { rmse });
    }
    Ok(ComplexityReport {
        rmse,
        rmse_svd,
        rmse_sc: rmse / rmse_svd,
        d_sc: spectral_distance(&eval.correction, k)?.as_f64(),
        params: plan.params,
        k,
        n_pert: plan.n_pert(),
        clamped_count: eval.correction.clamped_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Cell;
    use crate::split::EntryKind;

    fn set(cells: &[(usize, usize)]) -> EntrySet {
        EntrySet::new(EntryKind::Pert, cells.iter().map(|&c| Cell::from(c)).collect())
    }

    #[test]
    fn identical_matrices_give_zero_correction() {
        let m = SparseMatrix::<f64>::from_triplets(3, 3, vec![(0, 0, 1.0), (1, 2, 2.0), (2, 1, 5.0)]).unwrap();
        let f = truncated_svd(&m, 2, &SvdQuality::default()).unwrap();
        let d = delta_sigma(&m, &m, &f).unwrap();
        assert_eq!(d, DeltaSigma::zeros(2));
    }

    #[test]
    fn rank_one_closed_form() {
        let f = SvdFactors {
            u: Dense::from_vec(2, 1, vec![1.0, 0.0]),
            sigma: vec![3.0],
            v: Dense::from_vec(2, 1, vec![1.0, 0.0]),
            iterations: 0,
        };
        let d = DeltaSigma { values: vec![1.0], clamped_count: 0 };
        let got = predict_entries(&f, &d, &set(&[(0, 0), (0, 1), (1, 0), (1, 1)])).unwrap();
        assert_eq!(got, vec![4.0, 0.0, 0.0, 0.0]);
        assert!(predict_entries(&f, &d, &set(&[(2, 0)])).is_err());
    }

    #[test]
    fn rmse_hand_cases() {
        let m = SparseMatrix::<f64>::from_triplets(1, 2, vec![(0, 0, 2.0), (0, 1, 3.0)]).unwrap();
        let cells = set(&[(0, 0), (0, 1)]);
        assert_eq!(rmse_on(&m, &[1.0, 4.0], &cells).unwrap(), 1.0);
        assert_eq!(rmse_on(&m, &[2.0, 3.0], &cells).unwrap(), 0.0);
        assert!(rmse_on(&m, &[], &set(&[])).is_err());
    }

    #[test]
    fn spectral_distance_hand_cases() {
        let d = DeltaSigma { values: vec![1.0, -3.0], clamped_count: 0 };
        assert_eq!(spectral_distance(&d, 2).unwrap(), 2.0);
        assert_eq!(spectral_distance(&DeltaSigma::<f64>::zeros(4), 4).unwrap(), 0.0);
        assert!(spectral_distance(&d, 3).is_err());
    }

    #[test]
    fn negative_argument_is_clamped() {
        // Perturbed has more energy along v than the original: shift < -sigma^2.
        let original = SparseMatrix::<f64>::from_triplets(2, 2, vec![]).unwrap();
        let perturbed = SparseMatrix::<f64>::from_triplets(2, 2, vec![(0, 0, 2.0)]).unwrap();
        let f = truncated_svd(&perturbed, 1, &SvdQuality::default()).unwrap();
        // Zero original: sigma^2 + shift = 4 - 4 = 0, right at the boundary.
        let d = delta_sigma(&original, &perturbed, &f).unwrap();
        assert!(d.values[0].abs() <= 2.0 + 1e-12);
        let mut f2 = f.clone();
        f2.sigma[0] = 1.0;
        let d = delta_sigma(&original, &perturbed, &f2).unwrap();
        assert_eq!(d.clamped_count, 1);
        assert_eq!(d.values[0], -1.0);
    }

    #[test]
    fn report_ratio_identity() {
        let m = SparseMatrix::<f64>::from_triplets(
            12,
            10,
            (0..12).flat_map(|i| (0..10).filter(move |j| (i + j) % 3 != 0).map(move |j| (i, j, 1.0 + ((i * j) % 5) as f64))),
        )
        .unwrap();
        let r = complexity_report(&m, &PerturbationParams::new(0.2, 0.5, 4), 3, &SvdQuality::default()).unwrap();
        assert!((r.rmse_sc * r.rmse_svd - r.rmse).abs() < 1e-12);
        assert_eq!(r.n_pert, 8 + 8 + 8);
        assert!(r.d_sc >= 0.0);
    }
}
