use serde::{Deserialize, Serialize};

use super::MetricError;

/// One prompt's rollouts: a scalar reward per sample plus per-token
/// importance ratios and advantages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub rewards: Vec<f64>,
    pub ratios: Vec<Vec<f64>>,
    pub advantages: Vec<Vec<f64>>,
}

impl RolloutGroup {
    pub fn validate(&self) -> Result<(), MetricError> {
        let g = self.rewards.len();
        if g == 0 {
            return Err(MetricError::Empty("rollout group has no samples".into()));
        }
        if self.ratios.len() != g || self.advantages.len() != g {
            return Err(MetricError::Shape(format!(
                "{g} rewards, {} ratio rows, {} advantage rows",
                self.ratios.len(),
                self.advantages.len()
            )));
        }
        for (i, (r, a)) in self.ratios.iter().zip(&self.advantages).enumerate() {
            if r.is_empty() || r.len() != a.len() {
                return Err(MetricError::Shape(format!(
                    "sample {i}: {} ratios, {} advantages",
                    r.len(),
                    a.len()
                )));
            }
        }
        Ok(())
    }

    pub fn total_tokens(&self) -> usize {
        self.ratios.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub tau_v: f64,
    pub tau_k: f64,
    pub eps_low: f64,
    pub eps_high: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { tau_v: 0.0, tau_k: 0.1, eps_low: 0.20, eps_high: 0.24 }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), MetricError> {
        if !(self.tau_v >= 0.0 && self.tau_k >= 0.0 && self.eps_low > 0.0 && self.eps_high > 0.0) {
            return Err(MetricError::Domain(format!("invalid filter config {self:?}")));
        }
        Ok(())
    }
}

/// Mean of `r - 1 - ln r` over all tokens, computed as `x - ln(1 + x)` with
/// `x = r - 1` so ratios near 1 keep their precision.
pub fn kl_metric(ratios: &[f64]) -> Result<f64, MetricError> {
    if ratios.is_empty() {
        return Err(MetricError::Empty("no ratios".into()));
    }
    let mut sum = 0.0;
    for &r in ratios {
        if !(r > 0.0 && r.is_finite()) {
            return Err(MetricError::Domain(format!("ratio {r} is not positive")));
        }
        let x = r - 1.0;
        sum += x - x.ln_1p();
    }
    Ok(sum / ratios.len() as f64)
}

pub fn population_variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Admission {
    pub max_reward_positive: bool,
    pub kl_within: bool,
    pub variance_above: bool,
    pub kl: f64,
    pub variance: f64,
}

impl Admission {
    pub fn admitted(&self) -> bool {
        self.max_reward_positive && self.kl_within && self.variance_above
    }
}

pub fn admission(group: &RolloutGroup, cfg: &FilterConfig) -> Result<Admission, MetricError> {
    group.validate()?;
    let flat: Vec<f64> = group.ratios.iter().flatten().copied().collect();
    let kl = kl_metric(&flat)?;
    let variance = population_variance(&group.rewards);
    let max = group.rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(Admission {
        max_reward_positive: max > 0.0,
        kl_within: kl <= cfg.tau_k,
        variance_above: variance > cfg.tau_v,
        kl,
        variance,
    })
}

/// Keeps the admitted groups in their original order.
pub fn filter_rollout_groups(
    groups: &[RolloutGroup],
    cfg: &FilterConfig,
) -> Result<Vec<RolloutGroup>, MetricError> {
    cfg.validate()?;
    let mut kept = Vec::new();
    for g in groups {
        if admission(g, cfg)?.admitted() {
            kept.push(g.clone());
        }
    }
    Ok(kept)
}

/// Token-level clipped surrogate summed over the group and divided by the
/// total token count.
pub fn dapo_objective(group: &RolloutGroup, cfg: &FilterConfig) -> Result<f64, MetricError> {
    group.validate()?;
    let (lo, hi) = (1.0 - cfg.eps_low, 1.0 + cfg.eps_high);
    let mut sum = 0.0;
    for (rs, advs) in group.ratios.iter().zip(&group.advantages) {
        for (&r, &a) in rs.iter().zip(advs) {
            if r.is_nan() || r <= 0.0 {
                return Err(MetricError::Domain(format!("ratio {r} is not positive")));
            }
            sum += (r * a).min(r.clamp(lo, hi) * a);
        }
    }
    Ok(sum / group.total_tokens() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn group(rewards: &[f64], ratios: &[f64]) -> RolloutGroup {
        RolloutGroup {
            rewards: rewards.to_vec(),
            ratios: rewards.iter().map(|_| ratios.to_vec()).collect(),
            advantages: rewards.iter().map(|_| vec![1.0; ratios.len()]).collect(),
        }
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_metric(&[1.0, 1.0]).unwrap(), 0.0);
        assert!((kl_metric(&[2.0]).unwrap() - (1.0 - 2f64.ln())).abs() < 1e-15);
        assert!(kl_metric(&[0.0]).is_err());
        assert!(kl_metric(&[-1.0]).is_err());
    }

    #[test]
    fn filter_examples() {
        let cfg = FilterConfig { tau_v: 0.1, ..Default::default() };
        let flat = group(&[1.0, 1.0], &[1.0]);
        let good = group(&[0.0, 1.0], &[1.0]);
        let negative = group(&[-1.0, -0.5], &[1.0]);
        assert_eq!(admission(&good, &cfg).unwrap().variance, 0.25);
        let kept = filter_rollout_groups(&[flat, good.clone(), negative], &cfg).unwrap();
        assert_eq!(kept, vec![good]);
    }

    #[test]
    fn objective_examples() {
        let cfg = FilterConfig::default();
        assert!((dapo_objective(&group(&[1.0], &[1.1]), &cfg).unwrap() - 1.1).abs() < 1e-15);
        assert!((dapo_objective(&group(&[1.0], &[2.0]), &cfg).unwrap() - 1.24).abs() < 1e-15);
        let mut neg = group(&[1.0], &[0.5]);
        neg.advantages = vec![vec![-1.0]];
        assert!((dapo_objective(&neg, &cfg).unwrap() + 0.8).abs() < 1e-15);
        let mut zero = group(&[1.0, 0.0], &[1.5, 0.7]);
        zero.advantages = vec![vec![0.0; 2]; 2];
        assert_eq!(dapo_objective(&zero, &cfg).unwrap(), 0.0);
    }
}
