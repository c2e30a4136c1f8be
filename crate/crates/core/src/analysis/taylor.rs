use std::collections::BTreeMap;

use crate::nonlinearity::{ClosedForm, Monomial, MonomialBasis};

/// `|t - alpha_hat|` per monomial with exponents up to `max_index`, where `t`
/// is the Taylor coefficient of the closed form and `alpha_hat` counts as zero
/// for monomials outside the basis. Basis monomials beyond `max_index` are
/// included as well.
pub fn taylor_error_table(
    truth: ClosedForm,
    alpha: &[f64],
    basis: &MonomialBasis,
    max_index: u32,
) -> BTreeMap<Monomial, f64> {
    let reach = basis
        .terms()
        .iter()
        .map(|m| m.p1.max(m.p2))
        .max()
        .unwrap_or(0)
        .max(max_index);
    let taylor = truth.taylor_coeffs(reach);
    let mut fitted: BTreeMap<Monomial, f64> = BTreeMap::new();
    for (m, a) in basis.terms().iter().zip(alpha) {
        fitted.insert(*m, *a);
    }
    taylor
        .into_iter()
        .filter(|(m, _)| (m.p1 <= max_index && m.p2 <= max_index) || fitted.contains_key(m))
        .map(|(m, t)| (m, (t - fitted.get(&m).copied().unwrap_or(0.0)).abs()))
        .collect()
}
