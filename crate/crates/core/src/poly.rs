//! Multivariate polynomials with exact partial derivatives.

use std::collections::BTreeMap;

/// `Σ c_α x^α` over `n` variables.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    n: usize,
    terms: BTreeMap<Vec<u32>, f64>,
}

impl Polynomial {
    pub fn zero(n: usize) -> Self {
        Polynomial { n, terms: BTreeMap::new() }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self::monomial(n, c, &vec![0; n])
    }

    /// The coordinate `x_i`.
    pub fn variable(n: usize, i: usize) -> Self {
        let mut e = vec![0; n];
        e[i] = 1;
        Self::monomial(n, 1.0, &e)
    }

    pub fn monomial(n: usize, c: f64, exponents: &[u32]) -> Self {
        assert_eq!(exponents.len(), n);
        let mut p = Self::zero(n);
        if c != 0.0 {
            p.terms.insert(exponents.to_vec(), c);
        }
        p
    }

    pub fn n_vars(&self) -> usize {
        self.n
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        let mut out = self.clone();
        for (e, c) in &other.terms {
            *out.terms.entry(e.clone()).or_insert(0.0) += c;
        }
        out.terms.retain(|_, c| *c != 0.0);
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        let mut out = Self::zero(self.n);
        for (a, x) in &self.terms {
            for (b, y) in &other.terms {
                let e: Vec<u32> = a.iter().zip(b).map(|(i, j)| i + j).collect();
                *out.terms.entry(e).or_insert(0.0) += x * y;
            }
        }
        out.terms.retain(|_, c| *c != 0.0);
        out
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.terms.values_mut().for_each(|c| *c *= s);
        out.terms.retain(|_, c| *c != 0.0);
        out
    }

    pub fn partial(&self, i: usize) -> Self {
        let mut out = Self::zero(self.n);
        for (e, c) in &self.terms {
            if e[i] > 0 {
                let mut d = e.clone();
                d[i] -= 1;
                *out.terms.entry(d).or_insert(0.0) += c * e[i] as f64;
            }
        }
        out
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.n);
        self.terms
            .iter()
            .map(|(e, c)| c * e.iter().zip(x).map(|(&k, &xi)| xi.powi(k as i32)).product::<f64>())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_of_a_product() {
        let x = Polynomial::variable(2, 0);
        let y = Polynomial::variable(2, 1);
        let p = x.mul(&y).add(&x.mul(&x).scale(3.0));
        assert_eq!(p.eval(&[2.0, 5.0]), 22.0);
        assert_eq!(p.partial(0).eval(&[2.0, 5.0]), 17.0);
        assert_eq!(p.partial(1).eval(&[2.0, 5.0]), 2.0);
        assert_eq!(p.partial(0).partial(0).eval(&[0.0, 0.0]), 6.0);
        assert_eq!(p.partial(1).partial(1), Polynomial::zero(2));
    }
}
