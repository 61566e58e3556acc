use ilhte::data::{
    cronbach_alpha, describe, dichotomize, reverse_code, standardize_covariate, RawTable, Response, ResponseTable,
};
use proptest::prelude::*;

/// Random binary table: persons × items with some responses missing.
fn table_strategy() -> impl Strategy<Value = ResponseTable> {
    (2usize..8, 2usize..6).prop_flat_map(|(np, ni)| {
        (
            proptest::collection::vec(0u8..2, np * ni),
            proptest::collection::vec(0u8..10, np * ni),
            proptest::collection::vec(0u8..2, np),
            proptest::collection::vec(-2.0f64..2.0, np),
        )
            .prop_map(move |(scores, keep, treat, cov)| {
                let mut rows = Vec::new();
                for p in 0..np {
                    for i in 0..ni {
                        // Keep the first two items for everyone so ids never vanish.
                        if i < 2 || keep[p * ni + i] > 1 {
                            rows.push(Response {
                                person_id: format!("p{p}"),
                                item_id: format!("i{i}"),
                                score: scores[p * ni + i],
                                treatment: treat[p],
                                covariate: Some(cov[p] + p as f64 * 1e-3),
                                subscale: None,
                                extra: vec![],
                            });
                        }
                    }
                }
                ResponseTable::new(rows, vec![]).unwrap()
            })
    })
}

fn relabel(table: &ResponseTable, salt: u64) -> ResponseTable {
    let rows = table
        .rows()
        .iter()
        .map(|r| Response {
            person_id: format!("x{}_{}", salt.wrapping_mul(31) % 97, r.person_id.chars().rev().collect::<String>()),
            item_id: format!("q{}", r.item_id.len() as u64 * salt % 7) + &r.item_id,
            ..r.clone()
        })
        .collect();
    ResponseTable::new(rows, vec![]).unwrap()
}

fn shuffled(table: &ResponseTable, seed: u64) -> ResponseTable {
    let mut rows = table.rows().to_vec();
    let n = rows.len();
    let mut s = seed | 1;
    for k in (1..n).rev() {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        rows.swap(k, (s % (k as u64 + 1)) as usize);
    }
    ResponseTable::new(rows, vec![]).unwrap()
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

proptest! {
    #[test]
    fn relabeling_leaves_descriptives_unchanged(t in table_strategy(), salt in 1u64..1000) {
        let a = describe(&t);
        let b = describe(&relabel(&t, salt));
        prop_assert_eq!(a.n_persons, b.n_persons);
        prop_assert_eq!(a.n_items, b.n_items);
        prop_assert_eq!(a.n_responses, b.n_responses);
        prop_assert_eq!(a.n_treated, b.n_treated);
        prop_assert_eq!(a.mean_score, b.mean_score);
        prop_assert_eq!(a.alpha_persons_dropped, b.alpha_persons_dropped);
        match (a.alpha, b.alpha) {
            (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
            (x, y) => prop_assert_eq!(x, y),
        }
        prop_assert_eq!(sorted(a.missingness), sorted(b.missingness));
    }

    #[test]
    fn reverse_code_is_an_involution(t in table_strategy(), pick in 0usize..4) {
        let items: Vec<String> = t.item_ids().iter().take(pick).cloned().collect();
        let twice = reverse_code(&reverse_code(&t, &items).unwrap(), &items).unwrap();
        prop_assert_eq!(twice.rows(), t.rows());
    }

    #[test]
    fn dichotomize_binary_at_one_is_identity(t in table_strategy()) {
        let (d, _) = dichotomize(&RawTable::from(&t), 1).unwrap();
        prop_assert_eq!(d.rows(), t.rows());
    }

    #[test]
    fn alpha_ignores_row_order_and_ids(t in table_strategy(), seed in any::<u64>(), salt in 1u64..1000) {
        let a = cronbach_alpha(&t).map(|r| r.alpha);
        for other in [shuffled(&t, seed), relabel(&t, salt)] {
            let b = cronbach_alpha(&other).map(|r| r.alpha);
            match (&a, &b) {
                (Ok(x), Ok(y)) => prop_assert!((x - y).abs() < 1e-12),
                (x, y) => prop_assert_eq!(x.is_err(), y.is_err()),
            }
        }
    }

    #[test]
    fn alpha_at_most_one(t in table_strategy()) {
        if let Ok(a) = cronbach_alpha(&t) {
            prop_assert!(a.alpha <= 1.0 + 1e-12);
            prop_assert_eq!(a.n_used + a.n_dropped, t.n_persons());
        }
    }

    #[test]
    fn standardizing_covariate_keeps_alpha_and_is_idempotent(t in table_strategy()) {
        let s = standardize_covariate(&t).unwrap();
        let a0 = cronbach_alpha(&t).map(|r| r.alpha).ok();
        let a1 = cronbach_alpha(&s).map(|r| r.alpha).ok();
        prop_assert_eq!(a0, a1);
        let again = standardize_covariate(&s).unwrap();
        for (x, y) in s.rows().iter().zip(again.rows()) {
            prop_assert!((x.covariate.unwrap() - y.covariate.unwrap()).abs() < 1e-12);
        }
    }
}

#[test]
fn empty_reverse_set_is_identity() {
    let t = ilhte::sim::simulate_dataset(&ilhte::sim::SimConfig { n_persons: 10, n_items: 3, ..Default::default() })
        .unwrap()
        .0;
    let none: [&str; 0] = [];
    assert_eq!(reverse_code(&t, &none).unwrap(), t);
}
