//! Fisher information of finite local data, score tables, the sufficiency
//! reduction to the law of the score, binary coarsening and the chain
//! decomposition built from it, and the variational lower bound.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measures::{
    FinitePmf, GaussianLocal, LinearKernelMap, LocalData, MarkovKernel, MeasureError, SUM_TOL,
};

/// Scores closer than this are treated as equal when grouping atoms.
pub const SCORE_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FisherError {
    #[error("Fisher information is infinite: the tangent charges an atom of zero probability")]
    InfiniteFisher,
    #[error("binary coarsening needs at least two letters, found {0}")]
    TooFewLetters(usize),
    #[error("the coarsened group has zero probability")]
    ZeroGroupMass,
    #[error("split letter {letter} out of range for {k} letters")]
    BadSplit { letter: usize, k: usize },
    #[error("statistic has zero second moment")]
    ZeroVariance,
    #[error("score expectation is {0}, not 0")]
    NonCenteredScore(f64),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// `Σ δ(x)²/p(x)` over the support; `+∞` when the tangent charges a null atom.
pub fn fisher_info(a: &LocalData) -> f64 {
    fisher_info_raw(a.probs(), a.weights())
}

/// [`fisher_info`] on bare slices.
pub fn fisher_info_raw(p: &[f64], d: &[f64]) -> f64 {
    let mut j = 0.0;
    for (&px, &dx) in p.iter().zip(d) {
        if px > 0.0 {
            j += dx * dx / px;
        } else if dx.abs() > SUM_TOL {
            return f64::INFINITY;
        }
    }
    j
}

/// Fisher information of a Gaussian shift: `shift_weight² / variance`.
pub fn gaussian_fisher(g: &GaussianLocal) -> f64 {
    g.shift_weight * g.shift_weight / g.variance
}

/// Score values per atom together with the law they are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub values: Vec<f64>,
    pub mass: FinitePmf,
}

impl ScoreTable {
    pub fn new(values: Vec<f64>, mass: FinitePmf) -> Result<Self, FisherError> {
        if values.len() != mass.k() {
            return Err(MeasureError::ShapeMismatch { expected: mass.k(), found: values.len() }.into());
        }
        let mean: f64 = values.iter().zip(mass.probs()).map(|(l, p)| l * p).sum();
        if mean.abs() > SCORE_TOL {
            return Err(FisherError::NonCenteredScore(mean));
        }
        Ok(ScoreTable { values, mass })
    }

    pub fn of(a: &LocalData) -> Result<Self, FisherError> {
        if fisher_info(a).is_infinite() {
            return Err(FisherError::InfiniteFisher);
        }
        ScoreTable::new(a.score(), a.pmf().clone())
    }
}

/// Result of grouping atoms by score value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReduction {
    /// Law of the score and its tangent, groups sorted by increasing score.
    pub reduced: LocalData,
    /// Score value of each group.
    pub levels: Vec<f64>,
    /// Group index of each original atom.
    pub group_of: Vec<usize>,
    /// Deterministic map from atoms to groups.
    pub grouping: MarkovKernel,
    /// Conditional law of the atom given its group; maps `reduced` back onto
    /// the original local data.
    pub reconstruction: MarkovKernel,
}

/// Collapses atoms with equal score (within [`SCORE_TOL`]) into one atom per
/// score level.
pub fn score_reduction(a: &LocalData) -> Result<ScoreReduction, FisherError> {
    if fisher_info(a).is_infinite() {
        return Err(FisherError::InfiniteFisher);
    }
    let (p, d) = (a.probs(), a.weights());
    let score = a.score();
    let mut order: Vec<usize> = (0..a.k()).filter(|&x| p[x] > 0.0).collect();
    order.sort_by(|&x, &y| score[x].total_cmp(&score[y]).then(x.cmp(&y)));

    let mut group_of = vec![usize::MAX; a.k()];
    let mut group_p: Vec<f64> = Vec::new();
    let mut group_d: Vec<f64> = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for &x in &order {
        if group_p.is_empty() || score[x] - last > SCORE_TOL {
            group_p.push(0.0);
            group_d.push(0.0);
        }
        last = score[x];
        let g = group_p.len() - 1;
        group_of[x] = g;
        group_p[g] += p[x];
        group_d[g] += d[x];
    }
    // Null atoms carry no mass or tangent; attach them to the group nearest score 0.
    let home = (0..group_p.len())
        .min_by(|&g, &h| (group_d[g] / group_p[g]).abs().total_cmp(&(group_d[h] / group_p[h]).abs()))
        .unwrap_or(0);
    for g in group_of.iter_mut().filter(|g| **g == usize::MAX) {
        *g = home;
    }
    let levels: Vec<f64> = group_p.iter().zip(&group_d).map(|(q, e)| e / q).collect();
    let groups = group_p.len();

    let grouping = MarkovKernel::deterministic(groups, &group_of)?;
    let mut rec = LinearKernelMap::zeros(a.k(), groups);
    for x in 0..a.k() {
        if p[x] > 0.0 {
            rec.set(x, group_of[x], p[x] / group_p[group_of[x]]);
        }
    }
    let reconstruction = MarkovKernel::new(rec)?;
    let reduced = LocalData::from_vecs(group_p, group_d)?;
    Ok(ScoreReduction { reduced, levels, group_of, grouping, reconstruction })
}

/// Splits local data into a binary part (`split` versus the rest) and the
/// conditional local data on the remaining letters.
///
/// With `a` the binary part and `A` the conditional part,
/// `J(p,δ) = J(p_a,δ_a) + p_a(1) J(p_A,δ_A)`.
pub fn binary_coarsen(a: &LocalData, split: Option<usize>) -> Result<(LocalData, LocalData), FisherError> {
    let k = a.k();
    if k < 2 {
        return Err(FisherError::TooFewLetters(k));
    }
    let s = split.unwrap_or(k - 1);
    if s >= k {
        return Err(FisherError::BadSplit { letter: s, k });
    }
    let (p, d) = (a.probs(), a.weights());
    let rest: Vec<usize> = (0..k).filter(|&x| x != s).collect();
    let pa1: f64 = rest.iter().map(|&x| p[x]).sum();
    let da1: f64 = rest.iter().map(|&x| d[x]).sum();
    if pa1 <= 0.0 {
        return Err(FisherError::ZeroGroupMass);
    }
    let binary = LocalData::from_vecs(vec![p[s], pa1], vec![d[s], da1])?;
    let pc: Vec<f64> = rest.iter().map(|&x| p[x] / pa1).collect();
    let dc: Vec<f64> = rest.iter().zip(&pc).map(|(&x, &q)| d[x] / pa1 - da1 * q / pa1).collect();
    let conditional = LocalData::from_vecs(pc, dc)?;
    Ok((binary, conditional))
}

/// One binary stage of the chain decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStage {
    /// Product of the `p_i(1)` of all earlier stages.
    pub weight: f64,
    pub binary: LocalData,
    pub fisher: f64,
    /// The conditional local data left after this split.
    pub remainder: LocalData,
}

/// Repeated [`binary_coarsen`] on the last letter until one letter is left.
///
/// `Σ weight_i · fisher_i` equals the Fisher information of the input. The
/// chain stops early if the remaining letters carry no probability (their
/// tangent is then zero since the input has finite information).
pub fn fisher_chain(a: &LocalData) -> Result<Vec<ChainStage>, FisherError> {
    if fisher_info(a).is_infinite() {
        return Err(FisherError::InfiniteFisher);
    }
    let mut stages = Vec::new();
    let mut current = a.clone();
    let mut weight = 1.0;
    while current.k() >= 2 {
        let (binary, remainder) = match binary_coarsen(&current, None) {
            Ok(pair) => pair,
            Err(FisherError::ZeroGroupMass) => break,
            Err(e) => return Err(e),
        };
        let fisher = fisher_info(&binary);
        let next_weight = weight * binary.probs()[1];
        stages.push(ChainStage { weight, binary, fisher, remainder: remainder.clone() });
        weight = next_weight;
        current = remainder;
    }
    Ok(stages)
}

/// Weighted sum of the stage informations.
pub fn chain_total(stages: &[ChainStage]) -> f64 {
    stages.iter().map(|s| s.weight * s.fisher).sum()
}

/// `|E[L T]|² / E[T²]` for a statistic `t` given per atom.
pub fn fisher_variational(a: &LocalData, t: &[f64]) -> Result<f64, FisherError> {
    if t.len() != a.k() {
        return Err(MeasureError::ShapeMismatch { expected: a.k(), found: t.len() }.into());
    }
    let elt: f64 = a.weights().iter().zip(t).map(|(d, t)| d * t).sum();
    let ett: f64 = a.probs().iter().zip(t).map(|(p, t)| p * t * t).sum();
    if ett <= 0.0 {
        return Err(FisherError::ZeroVariance);
    }
    Ok(elt * elt / ett)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::pushforward;

    fn ld(p: &[f64], d: &[f64]) -> LocalData {
        LocalData::from_vecs(p.to_vec(), d.to_vec()).unwrap()
    }

    #[test]
    fn fisher_examples() {
        assert_eq!(fisher_info(&ld(&[0.3, 0.7], &[0.0, 0.0])), 0.0);
        assert_eq!(fisher_info(&ld(&[0.5, 0.5], &[0.5, -0.5])), 1.0);
        assert!(fisher_info(&ld(&[1.0, 0.0], &[-1.0, 1.0])).is_infinite());
    }

    #[test]
    fn gaussian_examples() {
        let unit = GaussianLocal::new(0.0, 1.0, 1.0).unwrap();
        assert_eq!(gaussian_fisher(&unit), 1.0);
        for v in [0.25, 1.0, 4.0] {
            assert_eq!(gaussian_fisher(&GaussianLocal::new(0.0, v, 1.0).unwrap()), 1.0 / v);
        }
        let g = GaussianLocal::new(0.0, 1.0, 7f64.sqrt()).unwrap();
        assert!((gaussian_fisher(&g) - 7.0).abs() < 1e-14);
    }

    #[test]
    fn reduction_groups_equal_scores() {
        let c = 0.2;
        let a = ld(&[0.25; 4], &[c / 4.0, c / 4.0, -c / 4.0, -c / 4.0]);
        let r = score_reduction(&a).unwrap();
        assert_eq!(r.reduced.k(), 2);
        assert!((fisher_info(&r.reduced) - fisher_info(&a)).abs() < 1e-15);
        let back = pushforward(&r.reconstruction, &r.reduced).unwrap();
        assert_eq!(back.probs(), a.probs());
        for (x, y) in back.weights().iter().zip(a.weights()) {
            assert!((x - y).abs() < 1e-16);
        }
        let z = score_reduction(&ld(&[0.2, 0.8], &[0.0, 0.0])).unwrap();
        assert_eq!(z.reduced.k(), 1);
        assert_eq!(fisher_info(&z.reduced), 0.0);
    }

    #[test]
    fn reduction_distinct_scores_is_a_permutation() {
        let a = ld(&[0.1, 0.2, 0.3, 0.4], &[0.05, -0.1, 0.09, -0.04]);
        let r = score_reduction(&a).unwrap();
        assert_eq!(r.reduced.k(), 4);
        let mut sorted = a.probs().to_vec();
        let mut got = r.reduced.probs().to_vec();
        sorted.sort_by(f64::total_cmp);
        got.sort_by(f64::total_cmp);
        assert_eq!(sorted, got);
    }

    #[test]
    fn coarsen_identity_and_trivial_remainder() {
        let e = 0.1;
        let a = ld(&[1.0 / 3.0; 3], &[e, 0.0, -e]);
        let (b, c) = binary_coarsen(&a, None).unwrap();
        let lhs = fisher_info(&a);
        let rhs = fisher_info(&b) + b.probs()[1] * fisher_info(&c);
        assert!((lhs - rhs).abs() < 1e-15);
        let (_, c2) = binary_coarsen(&ld(&[0.4, 0.6], &[0.1, -0.1]), None).unwrap();
        assert_eq!(c2.k(), 1);
        assert_eq!(fisher_info(&c2), 0.0);
    }

    #[test]
    fn chain_examples() {
        let two = fisher_chain(&ld(&[0.4, 0.6], &[0.1, -0.1])).unwrap();
        assert_eq!(two.len(), 1);
        assert_eq!(two[0].weight, 1.0);
        let a = ld(&[0.25; 4], &[0.1, -0.3, 0.05, 0.15]);
        let chain = fisher_chain(&a).unwrap();
        assert_eq!(chain.len(), 3);
        assert!((chain_total(&chain) - fisher_info(&a)).abs() < 1e-14);
        let zero = fisher_chain(&ld(&[0.25; 4], &[0.0; 4])).unwrap();
        assert!(zero.iter().all(|s| s.fisher == 0.0));
    }

    #[test]
    fn variational_examples() {
        let a = ld(&[0.2, 0.3, 0.5], &[0.1, 0.05, -0.15]);
        let j = fisher_info(&a);
        assert!((fisher_variational(&a, &a.score()).unwrap() - j).abs() < 1e-14);
        assert!(fisher_variational(&a, &[2.0; 3]).unwrap().abs() < 1e-30);
        assert!(fisher_variational(&a, &[1.0, -1.0, 0.5]).unwrap() <= j);
        assert_eq!(fisher_variational(&a, &[0.0; 3]), Err(FisherError::ZeroVariance));
    }
}
