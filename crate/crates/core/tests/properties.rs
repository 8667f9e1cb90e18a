//! Invariants checked over generated inputs.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use latvar::fitindex::{fit_indices, srmr};
use latvar::ingest::to_numeric;
use latvar::reliability::{cronbach, CronbachOptions};
use latvar::search::{enumerate_structures, run_search, EnumerationRule, Measurement, RuleKind, SearchOptions};
use latvar::sem::SampleMoments;
use latvar::synth::{generate, reference_four_factor};
use latvar::NumericMatrix;

fn keys(names: &[String], rule: &EnumerationRule) -> BTreeSet<String> {
    enumerate_structures(names, rule).unwrap().into_iter().map(|s| s.key).collect()
}

fn item_data(seed: u64) -> NumericMatrix {
    let x = to_numeric(&generate(&reference_four_factor(300, seed)).unwrap());
    x.select(&["V30".into(), "V31".into(), "V32".into(), "V33".into()]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Renaming factors maps the enumerated set onto itself.
    #[test]
    fn enumeration_is_closed_under_relabeling(
        perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
        exo in any::<bool>(),
        max_edges in proptest::option::of(0usize..=6),
    ) {
        let names: Vec<String> = ["F1", "F2", "F3", "F4"].iter().map(|s| s.to_string()).collect();
        let permuted: Vec<String> = perm.iter().map(|&i| names[i].clone()).collect();
        let rule = EnumerationRule {
            kind: if exo { RuleKind::ExogenousCovariancesOnly } else { RuleKind::Mixed },
            max_edges,
            ..EnumerationRule::default()
        };
        prop_assert_eq!(keys(&names, &rule), keys(&permuted, &rule));
    }

    /// Raw α is unchanged by a common affine rescaling, standardized α by
    /// independent positive rescaling of each item.
    #[test]
    fn alpha_scale_invariance(
        seed in 0u64..1000,
        common in 0.1f64..10.0,
        shift in -5.0f64..5.0,
        each in proptest::collection::vec(0.1f64..10.0, 4),
    ) {
        let x = item_data(seed);
        let opts = CronbachOptions { n_boot: 0, seed: 1 };
        let base = cronbach(&x, &opts).unwrap();
        let mut a = x.clone();
        for col in &mut a.columns {
            for v in col.iter_mut() {
                *v = common * *v + shift;
            }
        }
        let mut b = x.clone();
        for (col, s) in b.columns.iter_mut().zip(&each) {
            for v in col.iter_mut() {
                *v *= s;
            }
        }
        prop_assert!((cronbach(&a, &opts).unwrap().raw_alpha - base.raw_alpha).abs() < 1e-9);
        prop_assert!((cronbach(&b, &opts).unwrap().std_alpha - base.std_alpha).abs() < 1e-9);
    }

    #[test]
    fn fit_indices_stay_in_range(
        df_m in 1.0f64..100.0,
        chi_ratio in 0.0f64..20.0,
        df_b in 100.0f64..200.0,
        base_ratio in 1.0f64..50.0,
        n in 50.0f64..50_000.0,
    ) {
        let f = fit_indices(df_m * chi_ratio, df_m, df_b * base_ratio, df_b, n);
        prop_assert!((0.0..=1.0).contains(&f.cfi));
        let rmsea = f.rmsea.unwrap();
        prop_assert!(rmsea >= 0.0);
        if let (Some(lo), Some(hi)) = (f.rmsea_lower, f.rmsea_upper) {
            prop_assert!(lo <= rmsea + 1e-12 && rmsea <= hi + 1e-12);
        }
    }

    #[test]
    fn srmr_vanishes_on_exact_fit(entries in proptest::collection::vec(-1.0f64..1.0, 16)) {
        let a = DMatrix::from_vec(4, 4, entries);
        let s = &a * a.transpose() + DMatrix::identity(4, 4);
        prop_assert!(srmr(&s, &s).unwrap().abs() < 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    /// Ranking depends on the fits, not on the order skeletons are supplied.
    #[test]
    fn ranking_ignores_input_order(seed in any::<u64>()) {
        let measurement = Measurement::parse(
            "MR1 =~ V30 + V31 + V32 + V33\nMR2 =~ V46 + V47 + V48\nMR3 =~ V28 + V29 + V51\n",
        )
        .unwrap();
        let mut spec = reference_four_factor(1500, 77);
        spec.thresholds = None;
        let x = to_numeric(&generate(&spec).unwrap());
        let m = SampleMoments::from_data(&x, &measurement.indicators()).unwrap();
        let all = enumerate_structures(&measurement.factors(), &EnumerationRule::default()).unwrap();
        let mut shuffled = all.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let opts = SearchOptions::default();
        let a = run_search(&all, &measurement, &m, &opts).unwrap();
        let b = run_search(&shuffled, &measurement, &m, &opts).unwrap();
        prop_assert_eq!(a.tiers, b.tiers);
        prop_assert_eq!(a.ranking, b.ranking);
    }
}
