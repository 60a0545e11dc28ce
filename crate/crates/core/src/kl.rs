//! Closed-form KL divergence between diagonal Gaussians.

use ndgrad::{Graph, Var};

use crate::error::Result;

/// `KL(N(μp, e^{lvp}) ‖ N(μq, e^{lvq}))`, summed over dimensions.
///
/// Written as `½ Σ [expm1(d) − d + (μp − μq)² e^{−lvq}]` with
/// `d = lvp − lvq`, which is exactly zero for identical arguments and never
/// negative.
pub fn gaussian_kl(mu_p: &[f64], logvar_p: &[f64], mu_q: &[f64], logvar_q: &[f64]) -> f64 {
    debug_assert!(mu_p.len() == logvar_p.len() && mu_p.len() == mu_q.len() && mu_q.len() == logvar_q.len());
    let mut acc = 0.0;
    for i in 0..mu_p.len() {
        let d = logvar_p[i] - logvar_q[i];
        let dm = mu_p[i] - mu_q[i];
        acc += d.exp_m1() - d + dm * dm * (-logvar_q[i]).exp();
    }
    0.5 * acc
}

/// `KL(N(μ, e^{lv}) ‖ N(0, I))`.
pub fn standard_normal_kl(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter()
        .zip(logvar)
        .map(|(&m, &lv)| 0.5 * (m * m + lv.exp_m1() - lv))
        .sum()
}

/// Elementwise `KL` terms on the tape, shape of the inputs.
pub(crate) fn kl_terms(g: &mut Graph, mu_p: Var, lv_p: Var, mu_q: Var, lv_q: Var) -> Result<Var> {
    let d = g.sub(lv_p, lv_q)?;
    let ed = g.exp(d);
    let dm = g.sub(mu_p, mu_q)?;
    let dm2 = g.mul(dm, dm)?;
    let neg = g.scale(lv_q, -1.0);
    let inv_var = g.exp(neg);
    let quad = g.mul(dm2, inv_var)?;
    let t = g.sub(ed, d)?;
    let t = g.add(t, quad)?;
    let t = g.add_scalar(t, -1.0);
    Ok(g.scale(t, 0.5))
}

/// Elementwise `KL(N(μ, e^{lv}) ‖ N(0, 1))` terms on the tape.
pub(crate) fn standard_normal_kl_terms(g: &mut Graph, mu: Var, lv: Var) -> Result<Var> {
    let m2 = g.mul(mu, mu)?;
    let e = g.exp(lv);
    let t = g.add(m2, e)?;
    let t = g.sub(t, lv)?;
    let t = g.add_scalar(t, -1.0);
    Ok(g.scale(t, 0.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndgrad::Tensor;

    #[test]
    fn unit_shift_is_one_half() {
        assert_eq!(gaussian_kl(&[1.0], &[0.0], &[0.0], &[0.0]), 0.5);
        assert_eq!(standard_normal_kl(&[1.0], &[0.0]), 0.5);
    }

    #[test]
    fn identical_is_zero() {
        let mu = [0.3, -2.0, 7.5];
        let lv = [-3.0, 0.1, 4.0];
        assert_eq!(gaussian_kl(&mu, &lv, &mu, &lv), 0.0);
        assert_eq!(standard_normal_kl(&[0.0; 3], &[0.0; 3]), 0.0);
    }

    #[test]
    fn tape_terms_match_closed_form() {
        let vals = |v: &[f64]| Tensor::from_vec(vec![v.len()], v.to_vec()).unwrap();
        let (mp, lp, mq, lq) = ([0.2, -1.0], [0.5, -2.0], [1.0, 0.3], [-0.7, 1.1]);
        let mut g = Graph::new();
        let vs = [vals(&mp), vals(&lp), vals(&mq), vals(&lq)].map(|t| g.constant(t));
        let t = kl_terms(&mut g, vs[0], vs[1], vs[2], vs[3]).unwrap();
        let total = g.value(t).sum();
        assert!((total - gaussian_kl(&mp, &lp, &mq, &lq)).abs() < 1e-12);
        let s = standard_normal_kl_terms(&mut g, vs[0], vs[1]).unwrap();
        assert!((g.value(s).sum() - standard_normal_kl(&mp, &lp)).abs() < 1e-12);
    }
}
