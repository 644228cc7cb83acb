use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::matrices::{CorrespondenceMatrix, DistanceMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Weight of the non-match hinge term.
    pub alpha: f64,
    /// Margin: non-matching descriptors should be at least this far apart.
    pub theta: f64,
    /// Correspondence radius in meters.
    pub tau: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            theta: 1.0,
            tau: 0.10,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha = {} must be finite and >= 0", self.alpha)));
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(Error::Config(format!("theta = {} must be finite and > 0", self.theta)));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau = {} must be finite and >= 0", self.tau)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum LossKind {
    #[default]
    NTuple,
    Contrastive,
    Triplet,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::NTuple, LossKind::Contrastive, LossKind::Triplet];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::NTuple => "ntuple",
            LossKind::Contrastive => "contrastive",
            LossKind::Triplet => "triplet",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown loss {s:?} (expected ntuple, contrastive or triplet)")))
    }
}

/// Loss value with its gradient with respect to every entry of `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad: Vec<f64>,
    /// No matching entry: the match term was dropped.
    pub no_matches: bool,
    /// No non-matching entry: the hinge term was dropped.
    pub no_nonmatches: bool,
}

fn check(m: &CorrespondenceMatrix, d: &DistanceMatrix, cfg: &LossConfig) -> Result<usize> {
    cfg.validate()?;
    if m.size() != d.size() {
        return Err(Error::shape(format!(
            "correspondence matrix is {0}x{0}, distance matrix {1}x{1}",
            m.size(),
            d.size()
        )));
    }
    if m.size() == 0 {
        return Err(Error::invalid("loss over an empty matrix"));
    }
    Ok(m.size())
}

/// N-tuple loss
/// `Σ(M∘D)/‖M‖² + α·Σ((1−M)∘max(θ−D, 0))/(N²−‖M‖²)`.
///
/// A term whose denominator is zero is dropped and flagged.
pub fn ntuple_loss(m: &CorrespondenceMatrix, d: &DistanceMatrix, cfg: &LossConfig) -> Result<LossOutput> {
    let n = check(m, d, cfg)?;
    let total = n * n;
    let matches = m.match_count();
    let non = total - matches;
    let (wm, wn) = (
        if matches > 0 { 1.0 / matches as f64 } else { 0.0 },
        if non > 0 { cfg.alpha / non as f64 } else { 0.0 },
    );
    let mut match_sum = 0.0;
    let mut hinge_sum = 0.0;
    let mut grad = vec![0.0; total];
    for (k, (&mk, &dk)) in m.as_slice().iter().zip(d.as_slice()).enumerate() {
        if mk {
            match_sum += dk;
            grad[k] = wm;
        } else if dk < cfg.theta {
            hinge_sum += cfg.theta - dk;
            grad[k] = -wn;
        }
    }
    Ok(LossOutput {
        value: match_sum * wm + hinge_sum * wn,
        grad,
        no_matches: matches == 0,
        no_nonmatches: non == 0,
    })
}

/// The unmasked form, with the hinge `max(θ − (1−M)∘D, 0)` summed over all
/// entries. Each matching entry adds a constant `θ`, so this differs from
/// [`ntuple_loss`] by `α·θ·‖M‖²/(N²−‖M‖²)` and has the same gradient.
pub fn ntuple_loss_literal(m: &CorrespondenceMatrix, d: &DistanceMatrix, cfg: &LossConfig) -> Result<f64> {
    let n = check(m, d, cfg)?;
    let matches = m.match_count();
    let non = n * n - matches;
    let mut match_sum = 0.0;
    let mut hinge_sum = 0.0;
    for (&mk, &dk) in m.as_slice().iter().zip(d.as_slice()) {
        let masked = if mk { 0.0 } else { dk };
        if mk {
            match_sum += dk;
        }
        hinge_sum += (cfg.theta - masked).max(0.0);
    }
    let mut value = 0.0;
    if matches > 0 {
        value += match_sum / matches as f64;
    }
    if non > 0 {
        value += cfg.alpha * hinge_sum / non as f64;
    }
    Ok(value)
}

/// Mean of `m·d² + (1−m)·max(θ−d, 0)²` over `(distance, is_match)` pairs,
/// with the gradient for each pair.
pub fn contrastive_loss(pairs: &[(f64, bool)], cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::invalid("contrastive loss over no pairs"));
    }
    let k = pairs.len() as f64;
    let mut value = 0.0;
    let grad = pairs
        .iter()
        .map(|&(d, is_match)| {
            if is_match {
                value += d * d;
                2.0 * d / k
            } else {
                let h = (cfg.theta - d).max(0.0);
                value += h * h;
                -2.0 * h / k
            }
        })
        .collect();
    Ok((value / k, grad))
}

/// Mean of `max(d_pos − d_neg + θ, 0)` with `(∂/∂d_pos, ∂/∂d_neg)` per triplet.
pub fn triplet_loss(triplets: &[(f64, f64)], cfg: &LossConfig) -> Result<(f64, Vec<(f64, f64)>)> {
    cfg.validate()?;
    if triplets.is_empty() {
        return Err(Error::invalid("triplet loss over no triplets"));
    }
    let k = triplets.len() as f64;
    let mut value = 0.0;
    let grad = triplets
        .iter()
        .map(|&(dp, dn)| {
            let margin = dp - dn + cfg.theta;
            if margin > 0.0 {
                value += margin;
                (1.0 / k, -1.0 / k)
            } else {
                (0.0, 0.0)
            }
        })
        .collect();
    Ok((value / k, grad))
}

/// Loss of the chosen kind over one fragment pair, as a function of `D`.
///
/// Contrastive uses every matching entry plus as many non-matching entries
/// drawn uniformly with replacement. Triplet pairs each matching entry
/// `(i, j)` with a random non-match `(i, j')` in the same row. Both samplers
/// are seeded.
pub fn pair_loss(
    kind: LossKind,
    m: &CorrespondenceMatrix,
    d: &DistanceMatrix,
    cfg: &LossConfig,
    seed: u64,
) -> Result<LossOutput> {
    if kind == LossKind::NTuple {
        return ntuple_loss(m, d, cfg);
    }
    let n = check(m, d, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positives: Vec<usize> = m
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v)
        .map(|(k, _)| k)
        .collect();
    let negatives: Vec<usize> = m
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, &v)| !v)
        .map(|(k, _)| k)
        .collect();
    let mut grad = vec![0.0; n * n];
    let flags = (positives.is_empty(), negatives.is_empty());
    let empty = |grad| LossOutput {
        value: 0.0,
        grad,
        no_matches: flags.0,
        no_nonmatches: flags.1,
    };
    let value = match kind {
        LossKind::Contrastive => {
            let mut entries: Vec<(usize, bool)> = positives.iter().map(|&k| (k, true)).collect();
            if !negatives.is_empty() {
                for _ in 0..positives.len().max(1) {
                    entries.push((negatives[rng.random_range(0..negatives.len())], false));
                }
            }
            if entries.is_empty() {
                return Ok(empty(grad));
            }
            let pairs: Vec<(f64, bool)> = entries.iter().map(|&(k, p)| (d.as_slice()[k], p)).collect();
            let (value, g) = contrastive_loss(&pairs, cfg)?;
            for ((k, _), gk) in entries.iter().zip(g) {
                grad[*k] += gk;
            }
            value
        }
        LossKind::Triplet => {
            let mut chosen = Vec::new();
            for &k in &positives {
                let i = k / n;
                let row_negs: Vec<usize> = (0..n).filter(|&j| !m.get(i, j)).collect();
                if row_negs.is_empty() {
                    continue;
                }
                let j = row_negs[rng.random_range(0..row_negs.len())];
                chosen.push((k, i * n + j));
            }
            if chosen.is_empty() {
                return Ok(empty(grad));
            }
            let triplets: Vec<(f64, f64)> = chosen
                .iter()
                .map(|&(p, q)| (d.as_slice()[p], d.as_slice()[q]))
                .collect();
            let (value, g) = triplet_loss(&triplets, cfg)?;
            for (&(p, q), (gp, gq)) in chosen.iter().zip(g) {
                grad[p] += gp;
                grad[q] += gq;
            }
            value
        }
        LossKind::NTuple => unreachable!("handled above"),
    };
    Ok(LossOutput {
        value,
        grad,
        no_matches: flags.0,
        no_nonmatches: flags.1,
    })
}
