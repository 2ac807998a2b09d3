use std::collections::{HashMap, HashSet};

use chmreg::sampler::{plan_batches, Category, QuotaPlan, SampleCategory};
use proptest::prelude::*;

fn pool(n: [usize; 3]) -> Vec<SampleCategory> {
    let cats = [Category::Low, Category::Mid, Category::High];
    cats.iter()
        .zip(n)
        .flat_map(|(&c, k)| {
            (0..k).map(move |i| SampleCategory { sample_id: format!("{}{i}", c.name()), category: c })
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn quotas_hold_and_plans_repeat(
        n_low in 4usize..20, n_mid in 20usize..60, n_high in 4usize..20,
        batch in 4usize..24, low in 0.0f64..0.3, high in 0.0f64..0.3, seed in any::<u64>(),
    ) {
        let cats = pool([n_low, n_mid, n_high]);
        let plan = QuotaPlan { batch_size: batch, low_ratio: low, high_ratio: high };
        let (ql, qh) = plan.quotas();
        prop_assume!(ql <= n_low && qh <= n_high);
        let kind: HashMap<&str, Category> = cats.iter().map(|c| (c.sample_id.as_str(), c.category)).collect();
        let a = plan_batches(&cats, &plan, 40, seed).unwrap();
        prop_assert!(a.fallback_batches.is_empty());
        for b in &a.batches {
            prop_assert_eq!(b.len(), batch);
            prop_assert_eq!(b.iter().collect::<HashSet<_>>().len(), batch);
            prop_assert_eq!(b.iter().filter(|id| kind[id.as_str()] == Category::Low).count(), ql);
            prop_assert_eq!(b.iter().filter(|id| kind[id.as_str()] == Category::High).count(), qh);
        }
        prop_assert_eq!(a, plan_batches(&cats, &plan, 40, seed).unwrap());
    }
}
