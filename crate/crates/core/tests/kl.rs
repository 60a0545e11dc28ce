use proptest::prelude::*;
use wmdrive::kl::{gaussian_kl, standard_normal_kl};

proptest! {
    #[test]
    fn kl_is_non_negative(
        v in prop::collection::vec((-3.0f64..3.0, -4.0f64..4.0, -3.0f64..3.0, -4.0f64..4.0), 1..8)
    ) {
        let (mp, lp, mq, lq): (Vec<_>, Vec<_>, Vec<_>, Vec<_>) = v.iter().fold(
            (vec![], vec![], vec![], vec![]),
            |mut acc, &(a, b, c, d)| {
                acc.0.push(a);
                acc.1.push(b);
                acc.2.push(c);
                acc.3.push(d);
                acc
            },
        );
        prop_assert!(gaussian_kl(&mp, &lp, &mq, &lq) >= 0.0);
        prop_assert_eq!(gaussian_kl(&mp, &lp, &mp, &lp), 0.0);
    }

    #[test]
    fn standard_normal_is_the_special_case(mu in -3.0f64..3.0, lv in -4.0f64..4.0) {
        let a = standard_normal_kl(&[mu], &[lv]);
        let b = gaussian_kl(&[mu], &[lv], &[0.0], &[0.0]);
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    }
}

#[test]
fn unit_shift_costs_one_half() {
    assert_eq!(standard_normal_kl(&[1.0], &[0.0]), 0.5);
    assert_eq!(gaussian_kl(&[0.0], &[0.0], &[1.0], &[0.0]), 0.5);
}

#[test]
fn kl_is_asymmetric() {
    let a = gaussian_kl(&[0.0], &[0.0], &[0.0], &[2.0f64.ln()]);
    let b = gaussian_kl(&[0.0], &[2.0f64.ln()], &[0.0], &[0.0]);
    assert!((a - b).abs() > 1e-3);
}
