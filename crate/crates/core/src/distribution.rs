//! Labeled probability vectors shared by the annotation statistics and the
//! alignment metrics.

/// A probability distribution over a fixed, ordered label set. A distribution
/// built from zero observations keeps an all-zero mass vector and is flagged
/// empty instead of being normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    labels: Vec<String>,
    mass: Vec<f64>,
    empty: bool,
}

impl Distribution {
    /// Builds a distribution by normalizing raw counts. `counts` must be
    /// parallel to `labels`.
    pub fn from_counts(labels: Vec<String>, counts: &[usize]) -> Distribution {
        assert_eq!(labels.len(), counts.len(), "labels/counts length mismatch");
        let total: usize = counts.iter().sum();
        if total == 0 {
            let mass = vec![0.0; labels.len()];
            return Distribution {
                labels,
                mass,
                empty: true,
            };
        }
        let mass = counts
            .iter()
            .map(|&c| c as f64 / total as f64)
            .collect();
        Distribution {
            labels,
            mass,
            empty: false,
        }
    }

    /// Builds a distribution from an explicit mass vector. The caller is
    /// responsible for the masses being non-negative and summing to 1.
    pub fn from_mass(labels: Vec<String>, mass: Vec<f64>) -> Distribution {
        assert_eq!(labels.len(), mass.len(), "labels/mass length mismatch");
        let empty = mass.iter().all(|&m| m == 0.0);
        Distribution {
            labels,
            mass,
            empty,
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// True when the distribution was built from zero observations.
    pub fn is_empty(&self) -> bool {
        self.empty
    }

    pub fn same_labels(&self, other: &Distribution) -> bool {
        self.labels == other.labels
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_normalize_to_one() {
        let d = Distribution::from_counts(vec!["a".into(), "b".into(), "c".into()], &[3, 1, 0]);
        assert_eq!(d.mass(), [0.75, 0.25, 0.0]);
        assert!(!d.is_empty());
        assert!((d.mass().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_counts_flagged_empty() {
        let d = Distribution::from_counts(vec!["a".into()], &[0]);
        assert!(d.is_empty());
        assert_eq!(d.mass(), [0.0]);
    }
}
