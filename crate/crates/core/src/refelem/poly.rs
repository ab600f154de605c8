//! Bivariate polynomials in monomial form.

/// `Σ c · x^a y^b`
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Poly {
    terms: Vec<(u32, u32, f64)>,
}

impl Poly {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn monomial(a: u32, b: u32) -> Self {
        Self {
            terms: vec![(a, b, 1.0)],
        }
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: vec![(0, 0, c)],
        }
    }

    pub fn terms(&self) -> &[(u32, u32, f64)] {
        &self.terms
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .filter(|t| t.2 != 0.0)
            .map(|t| t.0 + t.1)
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, p: [f64; 2]) -> f64 {
        self.terms
            .iter()
            .map(|&(a, b, c)| c * p[0].powi(a as i32) * p[1].powi(b as i32))
            .sum()
    }

    pub fn dx(&self) -> Poly {
        let mut out = Poly::zero();
        for &(a, b, c) in &self.terms {
            if a > 0 {
                out.add_term(a - 1, b, c * a as f64);
            }
        }
        out
    }

    pub fn dy(&self) -> Poly {
        let mut out = Poly::zero();
        for &(a, b, c) in &self.terms {
            if b > 0 {
                out.add_term(a, b - 1, c * b as f64);
            }
        }
        out
    }

    pub fn add_term(&mut self, a: u32, b: u32, c: f64) {
        if c == 0.0 {
            return;
        }
        match self.terms.iter_mut().find(|t| t.0 == a && t.1 == b) {
            Some(t) => t.2 += c,
            None => self.terms.push((a, b, c)),
        }
    }

    pub fn scaled(&self, s: f64) -> Poly {
        Poly {
            terms: self.terms.iter().map(|&(a, b, c)| (a, b, c * s)).collect(),
        }
    }

    pub fn axpy(&mut self, s: f64, other: &Poly) {
        for &(a, b, c) in &other.terms {
            self.add_term(a, b, s * c);
        }
    }

    /// Multiplies by `x^a y^b`.
    pub fn shifted(&self, a: u32, b: u32) -> Poly {
        Poly {
            terms: self
                .terms
                .iter()
                .map(|&(p, q, c)| (p + a, q + b, c))
                .collect(),
        }
    }
}

/// Monomials `x^a y^b` with `a + b <= k`, ordered by total degree.
pub fn monomials_up_to(k: u32) -> Vec<Poly> {
    (0..=k).flat_map(homogeneous_monomials).collect()
}

/// Monomials of total degree exactly `k`.
pub fn homogeneous_monomials(k: u32) -> Vec<Poly> {
    (0..=k).map(|b| Poly::monomial(k - b, b)).collect()
}

pub type VecPoly = [Poly; 2];

pub fn vec_eval(v: &VecPoly, p: [f64; 2]) -> [f64; 2] {
    [v[0].eval(p), v[1].eval(p)]
}

pub fn vec_div(v: &VecPoly) -> Poly {
    let mut d = v[0].dx();
    d.axpy(1.0, &v[1].dy());
    d
}

/// `∇×ψ = (∂ψ/∂y, −∂ψ/∂x)`
pub fn curl(psi: &Poly) -> VecPoly {
    [psi.dy(), psi.dx().scaled(-1.0)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_and_eval() {
        let mut p = Poly::monomial(2, 1);
        p.add_term(0, 3, -2.0);
        assert_eq!(p.eval([2.0, 3.0]), 12.0 - 54.0);
        assert_eq!(p.dx().eval([2.0, 3.0]), 12.0);
        assert_eq!(p.dy().eval([2.0, 3.0]), 4.0 - 54.0);
        assert_eq!(p.degree(), 3);
    }

    #[test]
    fn curl_is_divergence_free() {
        let psi = Poly::monomial(1, 3);
        let c = curl(&psi);
        assert!(vec_div(&c).terms().iter().all(|t| t.2 == 0.0));
    }

    #[test]
    fn monomial_counts() {
        assert_eq!(monomials_up_to(0).len(), 1);
        assert_eq!(monomials_up_to(3).len(), 10);
        assert_eq!(homogeneous_monomials(2).len(), 3);
    }
}
