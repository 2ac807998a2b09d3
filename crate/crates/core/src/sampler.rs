//! Batch sampler that enforces per-batch quotas of low- and high-canopy
//! samples.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Low,
    Mid,
    High,
}

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::Low => "low",
            Category::Mid => "mid",
            Category::High => "high",
        }
    }
}

/// One row of the sample statistics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub sample_id: String,
    pub frac_below_1m: f64,
    pub p95_height: f64,
}

/// Per-sample membership thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryRule {
    /// Low when at least this fraction of valid pixels is below 1 m.
    pub low_min_fraction: f64,
    /// High when the sample p95 exceeds this height (m).
    pub tall_threshold: f64,
}

impl Default for CategoryRule {
    fn default() -> Self {
        Self::satlidar()
    }
}

impl CategoryRule {
    pub fn satlidar() -> Self {
        Self {
            low_min_fraction: 0.5,
            tall_threshold: 35.0,
        }
    }

    pub fn naip_3dep() -> Self {
        Self {
            tall_threshold: 25.0,
            ..Self::satlidar()
        }
    }

    /// High takes precedence over low.
    pub fn categorize(&self, s: &SampleStats) -> Result<Category> {
        if !s.frac_below_1m.is_finite() || !s.p95_height.is_finite() {
            return Err(Error::Parameter(format!(
                "sample `{}` has non-finite statistics",
                s.sample_id
            )));
        }
        Ok(if s.p95_height > self.tall_threshold {
            Category::High
        } else if s.frac_below_1m >= self.low_min_fraction {
            Category::Low
        } else {
            Category::Mid
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleCategory {
    pub sample_id: String,
    pub category: Category,
}

pub fn categorize_all(stats: &[SampleStats], rule: &CategoryRule) -> Result<Vec<SampleCategory>> {
    stats
        .iter()
        .map(|s| {
            Ok(SampleCategory {
                sample_id: s.sample_id.clone(),
                category: rule.categorize(s)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuotaPlan {
    pub batch_size: usize,
    pub low_ratio: f64,
    pub high_ratio: f64,
}

impl QuotaPlan {
    pub fn validate(&self) -> Result<()> {
        let ok_ratio = |r: f64| (0.0..=1.0).contains(&r);
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch size must be >= 1".into()));
        }
        if !ok_ratio(self.low_ratio)
            || !ok_ratio(self.high_ratio)
            || self.low_ratio + self.high_ratio > 1.0
        {
            return Err(Error::Parameter(format!(
                "ratios ({}, {}) must be non-negative with sum <= 1",
                self.low_ratio, self.high_ratio
            )));
        }
        Ok(())
    }

    /// `(q_low, q_high)` by round-half-up of ratio times batch size.
    pub fn quotas(&self) -> (usize, usize) {
        let q = |r: f64| ((r * self.batch_size as f64 + 0.5).floor() as usize).min(self.batch_size);
        let low = q(self.low_ratio);
        (low, q(self.high_ratio).min(self.batch_size - low))
    }
}

/// A category pool shuffled once per epoch and cycled.
struct Cycler {
    members: Vec<usize>,
    order: Vec<usize>,
    pos: usize,
}

impl Cycler {
    fn new(members: Vec<usize>) -> Self {
        Self {
            members,
            order: Vec::new(),
            pos: 0,
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.pos == self.order.len() {
            self.order = self.members.clone();
            self.order.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }

    /// `k` members not yet in `taken`. Members skipped because they were
    /// taken stay at the head of the stream so no epoch loses them.
    fn draw(&mut self, k: usize, taken: &mut HashSet<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        let mut deferred = Vec::new();
        while out.len() < k {
            let i = self.next(rng);
            if taken.insert(i) {
                out.push(i);
            } else {
                deferred.push(i);
            }
        }
        if !deferred.is_empty() {
            let rest = self.order.split_off(self.pos);
            self.order = deferred.into_iter().chain(rest).collect();
            self.pos = 0;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batches: Vec<Vec<String>>,
    /// Batches whose mid share had to be filled from other categories.
    pub fallback_batches: Vec<usize>,
}

/// Plans `n_batches` batches. Each holds `q_low` low and `q_high` high
/// samples plus mid samples for the rest; if mid runs short, the rest is
/// drawn from any category and the batch index is recorded in
/// `fallback_batches`.
pub fn plan_batches(
    categories: &[SampleCategory],
    plan: &QuotaPlan,
    n_batches: usize,
    seed: u64,
) -> Result<BatchPlan> {
    plan.validate()?;
    let (q_low, q_high) = plan.quotas();
    let q_mid = plan.batch_size - q_low - q_high;
    let members = |c: Category| -> Vec<usize> {
        (0..categories.len())
            .filter(|&i| categories[i].category == c)
            .collect()
    };
    let (low, mid, high) = (members(Category::Low), members(Category::Mid), members(Category::High));
    for (cat, pool, q) in [(Category::Low, &low, q_low), (Category::High, &high, q_high)] {
        if q > 0 && pool.is_empty() {
            return Err(Error::QuotaInfeasible {
                category: cat.name(),
                reason: format!("quota {q} but the pool is empty"),
            });
        }
        if pool.len() < q {
            return Err(Error::QuotaInfeasible {
                category: cat.name(),
                reason: format!("quota {q} exceeds pool of {}", pool.len()),
            });
        }
    }
    if categories.len() < plan.batch_size {
        return Err(Error::QuotaInfeasible {
            category: Category::Mid.name(),
            reason: format!(
                "{} samples cannot fill a batch of {}",
                categories.len(),
                plan.batch_size
            ),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mid_take = q_mid.min(mid.len());
    let mut cyclers = [Cycler::new(low), Cycler::new(high), Cycler::new(mid)];
    let mut any = Cycler::new((0..categories.len()).collect());
    let mut batches = Vec::with_capacity(n_batches);
    let mut fallback = Vec::new();
    for b in 0..n_batches {
        let mut taken = HashSet::with_capacity(plan.batch_size);
        let mut picks = cyclers[0].draw(q_low, &mut taken, &mut rng);
        picks.extend(cyclers[1].draw(q_high, &mut taken, &mut rng));
        picks.extend(cyclers[2].draw(mid_take, &mut taken, &mut rng));
        if mid_take < q_mid {
            picks.extend(any.draw(q_mid - mid_take, &mut taken, &mut rng));
            fallback.push(b);
        }
        picks.shuffle(&mut rng);
        batches.push(picks.into_iter().map(|i| categories[i].sample_id.clone()).collect());
    }
    Ok(BatchPlan {
        batches,
        fallback_batches: fallback,
    })
}
