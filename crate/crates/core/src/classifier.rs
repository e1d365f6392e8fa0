//! Bayesian prediction over a [`MemoryBank`].
//!
//! The score of class `c` for a feature vector `z` is the log-joint
//! `sum_k log p(z_k | c) + log p(c)`. The normalizer shared by all classes is
//! dropped for prediction and only reinstated by [`posterior`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::FeatureRecord;
use crate::math::log_sum_exp;
use crate::memory::MemoryBank;

/// Per-feature log-densities are clamped from below at this value so that a
/// single far-off feature cannot dominate the sum.
pub const LOG_DENSITY_FLOOR: f64 = -745.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorMode {
    /// `p(c) = N_c / sum_m N_m`
    #[default]
    Counts,
    /// Equal prior for every learned class (ablation).
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    /// Learned class ids, ascending.
    pub classes: Vec<u32>,
    /// Log-joint per class, aligned with `classes`.
    pub log_joint: Vec<f64>,
    pub predicted: u32,
    pub posterior: Option<Vec<f64>>,
    /// Number of per-feature log-densities that hit [`LOG_DENSITY_FLOOR`],
    /// summed over classes.
    pub clamped_features: usize,
}

impl ClassScores {
    pub fn predicted_log_joint(&self) -> f64 {
        let i = self
            .classes
            .iter()
            .position(|&c| c == self.predicted)
            .expect("predicted class is always scored");
        self.log_joint[i]
    }
}

fn check_input(bank: &MemoryBank, z: &[f64]) -> Result<()> {
    if z.len() != bank.dim() {
        return Err(Error::DimensionMismatch {
            expected: bank.dim(),
            found: z.len(),
        });
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("feature vector contains non-finite values"));
    }
    Ok(())
}

/// Sum of clamped per-feature log-densities and the number of clamped terms.
fn clamped_log_likelihood(bank: &MemoryBank, class_id: u32, z: &[f64]) -> Result<(f64, usize)> {
    let memory = bank.class(class_id).ok_or(Error::UnknownClass(class_id))?;
    let mut clamped = 0;
    let sum = memory
        .models()
        .iter()
        .zip(z)
        .map(|(model, &x)| {
            let v = model.log_pdf(x);
            if v < LOG_DENSITY_FLOOR {
                clamped += 1;
                LOG_DENSITY_FLOOR
            } else {
                v
            }
        })
        .sum();
    Ok((sum, clamped))
}

pub fn class_log_likelihood(bank: &MemoryBank, class_id: u32, z: &[f64]) -> Result<f64> {
    check_input(bank, z)?;
    clamped_log_likelihood(bank, class_id, z).map(|(v, _)| v)
}

pub fn log_prior(bank: &MemoryBank, class_id: u32) -> Result<f64> {
    let memory = bank.class(class_id).ok_or(Error::UnknownClass(class_id))?;
    Ok((memory.count() as f64 / bank.total_count() as f64).ln())
}

fn prior_for(bank: &MemoryBank, class_id: u32, prior: PriorMode) -> Result<f64> {
    match prior {
        PriorMode::Counts => log_prior(bank, class_id),
        PriorMode::Uniform => Ok(-(bank.len() as f64).ln()),
    }
}

/// Scores every learned class. Ties on the log-joint go to the smallest
/// class id.
pub fn score(
    bank: &MemoryBank,
    z: &[f64],
    prior: PriorMode,
    with_posterior: bool,
) -> Result<ClassScores> {
    if bank.is_empty() {
        return Err(Error::NoClasses);
    }
    check_input(bank, z)?;
    let classes = bank.class_ids();
    let mut log_joint = Vec::with_capacity(classes.len());
    let mut clamped_features = 0;
    for &c in &classes {
        let (ll, clamped) = clamped_log_likelihood(bank, c, z)?;
        clamped_features += clamped;
        log_joint.push(ll + prior_for(bank, c, prior)?);
    }
    // strict comparison keeps the first (smallest id) maximum
    let mut best = 0;
    for (i, &v) in log_joint.iter().enumerate().skip(1) {
        if v > log_joint[best] {
            best = i;
        }
    }
    let posterior = with_posterior.then(|| softmax(&log_joint));
    Ok(ClassScores {
        predicted: classes[best],
        classes,
        log_joint,
        posterior,
        clamped_features,
    })
}

pub fn predict(bank: &MemoryBank, z: &[f64]) -> Result<ClassScores> {
    score(bank, z, PriorMode::Counts, false)
}

/// Normalized posterior over learned classes (ascending class id).
pub fn posterior(bank: &MemoryBank, z: &[f64]) -> Result<Vec<f64>> {
    Ok(score(bank, z, PriorMode::Counts, true)?
        .posterior
        .expect("requested"))
}

fn softmax(log_joint: &[f64]) -> Vec<f64> {
    let norm = log_sum_exp(log_joint);
    log_joint.iter().map(|v| (v - norm).exp()).collect()
}

/// Scores a batch of records in parallel; output order follows input order.
pub fn predict_batch(
    bank: &MemoryBank,
    records: &[FeatureRecord],
    prior: PriorMode,
    with_posterior: bool,
) -> Result<Vec<ClassScores>> {
    records
        .par_iter()
        .map(|r| score(bank, &r.values, prior, with_posterior))
        .collect()
}

/// Nearest-class-mean baseline over the per-feature means of each class's
/// stored densities.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassMeans {
    classes: Vec<u32>,
    means: Vec<Vec<f64>>,
}

impl ClassMeans {
    pub fn new(classes: Vec<u32>, means: Vec<Vec<f64>>) -> Result<Self> {
        if classes.len() != means.len() {
            return Err(Error::DimensionMismatch {
                expected: classes.len(),
                found: means.len(),
            });
        }
        if classes.is_empty() {
            return Err(Error::NoClasses);
        }
        let dim = means[0].len();
        if let Some(bad) = means.iter().find(|m| m.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        let mut paired: Vec<(u32, Vec<f64>)> = classes.into_iter().zip(means).collect();
        paired.sort_by_key(|(c, _)| *c);
        let (classes, means) = paired.into_iter().unzip();
        Ok(Self { classes, means })
    }

    pub fn from_bank(bank: &MemoryBank) -> Result<Self> {
        Self::new(
            bank.class_ids(),
            bank.classes().map(|m| m.feature_means()).collect(),
        )
    }
}

/// Nearest class mean by Euclidean distance; ties go to the smallest id.
pub fn predict_ncm(means: &ClassMeans, z: &[f64]) -> Result<u32> {
    let dim = means.means[0].len();
    if z.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: z.len(),
        });
    }
    let mut best = (f64::INFINITY, means.classes[0]);
    for (c, m) in means.classes.iter().zip(&means.means) {
        let d: f64 = m.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.0 {
            best = (d, *c);
        }
    }
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{DensityModel, GaussianComponent, Gmm1D};
    use crate::memory::{form_memory, EstimatorConfig};

    const PEAK: f64 = -0.918_938_533_204_672_7;

    fn class_from(
        label: u32,
        rows: &[Vec<f64>],
        est: &EstimatorConfig,
    ) -> crate::memory::ClassMemory {
        let records: Vec<FeatureRecord> = rows
            .iter()
            .map(|r| FeatureRecord::new(label, r.clone()))
            .collect();
        form_memory(label, &records, est, 0).unwrap()
    }

    fn bank_of(est: EstimatorConfig, classes: &[(u32, Vec<Vec<f64>>)]) -> MemoryBank {
        let dim = classes[0].1[0].len();
        let mut bank = MemoryBank::new(dim, est).unwrap();
        for (c, rows) in classes {
            bank.add_class(class_from(*c, rows, &est)).unwrap();
        }
        bank
    }

    #[test]
    fn log_likelihood_is_sum_of_feature_log_pdfs() {
        let est = EstimatorConfig::gmm(1);
        // mean 0, population std 1 in feature 0; mean 1, std 0.5 in feature 1
        let bank = bank_of(est, &[(0, vec![vec![-1.0, 0.5], vec![1.0, 1.5]])]);
        let z = [0.3, 0.7];
        let expected = (PEAK - 0.5 * 0.09) + (PEAK - 0.5f64.ln() - 0.5 * (0.3f64 / 0.5).powi(2));
        let got = class_log_likelihood(&bank, 0, &z).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");

        // K=1: equals the single log_pdf
        let one = bank_of(est, &[(0, vec![vec![-1.0], vec![1.0]])]);
        let m = &one.class(0).unwrap().models()[0];
        assert_eq!(
            class_log_likelihood(&one, 0, &[0.2]).unwrap(),
            m.log_pdf(0.2)
        );

        // at the component means: sum of peak values
        let at_mean = class_log_likelihood(&bank, 0, &[0.0, 1.0]).unwrap();
        assert!((at_mean - (PEAK + PEAK - 0.5f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let bank = bank_of(EstimatorConfig::gmm(1), &[(0, vec![vec![0.0, 1.0]])]);
        assert!(matches!(
            class_log_likelihood(&bank, 3, &[0.0, 0.0]),
            Err(Error::UnknownClass(3))
        ));
        assert!(matches!(
            class_log_likelihood(&bank, 0, &[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(log_prior(&bank, 1), Err(Error::UnknownClass(1))));
        let empty = MemoryBank::new(2, EstimatorConfig::gmm(1)).unwrap();
        assert!(matches!(
            predict(&empty, &[0.0, 0.0]),
            Err(Error::NoClasses)
        ));
    }

    #[test]
    fn priors_follow_counts() {
        let est = EstimatorConfig::gmm(1);
        let rows3: Vec<Vec<f64>> = vec![vec![0.1]; 3];
        let rows1: Vec<Vec<f64>> = vec![vec![0.1]; 1];
        let mut bank = bank_of(est, &[(0, rows3.clone()), (1, rows1)]);
        assert!((log_prior(&bank, 0).unwrap() - 0.75f64.ln()).abs() < 1e-15);
        assert!((log_prior(&bank, 1).unwrap() - 0.25f64.ln()).abs() < 1e-15);
        // identical likelihood models: the larger class wins
        assert_eq!(predict(&bank, &[0.1]).unwrap().predicted, 0);
        assert_eq!(
            score(&bank, &[0.1], PriorMode::Uniform, false)
                .unwrap()
                .predicted,
            0
        );

        let recs: Vec<FeatureRecord> = (0..10).map(|_| FeatureRecord::new(1, vec![0.1])).collect();
        bank.update_class(1, &recs).unwrap();
        assert!((log_prior(&bank, 1).unwrap() - (11.0f64 / 14.0).ln()).abs() < 1e-15);
        assert_eq!(predict(&bank, &[0.1]).unwrap().predicted, 1);

        let even = bank_of(est, &[(0, rows3.clone()), (1, rows3)]);
        assert!((log_prior(&even, 0).unwrap() - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn ties_go_to_smallest_id() {
        let est = EstimatorConfig::gmm(1);
        let rows: Vec<Vec<f64>> = vec![vec![0.1], vec![0.3]];
        let bank = bank_of(est, &[(7, rows.clone()), (2, rows.clone()), (5, rows)]);
        let s = predict(&bank, &[0.2]).unwrap();
        assert_eq!(s.classes, vec![2, 5, 7]);
        assert_eq!(s.predicted, 2);
        let p = posterior(&bank, &[0.2]).unwrap();
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_class_always_wins() {
        let bank = bank_of(
            EstimatorConfig::gmm(2),
            &[(4, vec![vec![0.1], vec![0.9], vec![0.5], vec![0.3]])],
        );
        for x in [-5.0, 0.0, 0.5, 10.0] {
            assert_eq!(predict(&bank, &[x]).unwrap().predicted, 4);
        }
    }

    #[test]
    fn two_term_softmax() {
        let p = softmax(&[3f64.ln(), 0.0]);
        assert!((p[0] - 0.75).abs() < 1e-12);
        assert!((p[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn clamping_is_reported() {
        let bank = bank_of(EstimatorConfig::gmm(1), &[(0, vec![vec![0.5, 0.5]])]);
        // sigma is floored at 1e-4; 0.5 away is ~ -1.25e7 per feature
        let s = predict(&bank, &[0.0, 0.5]).unwrap();
        assert_eq!(s.clamped_features, 1);
        assert!((s.log_joint[0] - (LOG_DENSITY_FLOOR + PEAK - 1e-4f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn ncm_rules() {
        let means = ClassMeans::new(vec![3, 1], vec![vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        assert_eq!(predict_ncm(&means, &[1.0, 0.0]).unwrap(), 3);
        assert_eq!(predict_ncm(&means, &[-1.0, 0.0]).unwrap(), 1);
        // equidistant
        assert_eq!(predict_ncm(&means, &[0.0, 5.0]).unwrap(), 1);
        assert!(predict_ncm(&means, &[0.0]).is_err());
    }

    #[test]
    fn ncm_means_from_bank() {
        let g = Gmm1D::new(vec![
            GaussianComponent::new(0.25, -1.0, 0.1),
            GaussianComponent::new(0.75, 1.0, 0.1),
        ])
        .unwrap();
        assert!((DensityModel::Gmm(g).mean() - 0.5).abs() < 1e-15);
        let bank = bank_of(
            EstimatorConfig::gmm(1),
            &[(0, vec![vec![0.2, 0.4], vec![0.4, 0.6]])],
        );
        let means = ClassMeans::from_bank(&bank).unwrap();
        assert!((means.means[0][0] - 0.3).abs() < 1e-12);
    }
}
