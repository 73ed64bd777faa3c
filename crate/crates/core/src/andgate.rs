//! A single logistic-Bernoulli unit wired as a soft AND gate over two Bernoulli inputs.

use crate::activations::{logistic_bernoulli_mean, BernoulliMean};
use crate::error::{Error, Result};
use crate::kernels::logistic_sigmoid;
use crate::moments::ScalarMoments;
use crate::train::fmt6;

/// Input probabilities of the standard table rows.
pub const TABLE_INPUTS: [(f64, f64); 6] = [(0.0, 0.0), (0.0, 1.0), (1.0, 1.0), (0.25, 0.25), (0.5, 0.5), (0.75, 0.75)];

/// `Y = [a X1 + a X2 + b − Z ≥ 0]` with logistic noise `Z`, so `P(Y=1 | x) = S(a x1 + a x2 + b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AndGate {
    pub epsilon: f64,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AndGateRow {
    pub p1: f64,
    pub p2: f64,
    /// `E[X1 ∧ X2]` for independent inputs.
    pub exact_and: f64,
    /// `E[Y]` by enumerating the four input configurations.
    pub exact: f64,
    pub ap1: f64,
    pub ap2b: f64,
}

impl AndGate {
    /// Weights chosen so that `P(Y=1)` is `ε` for one active input and `1−ε` for two.
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return Err(Error::domain(format!("epsilon must lie in (0, 0.5), got {epsilon}")));
        }
        let l = ((1.0 - epsilon) / epsilon).ln();
        Ok(Self { epsilon, a: 2.0 * l, b: -3.0 * l })
    }

    fn check(p: f64) -> Result<()> {
        if (0.0..=1.0).contains(&p) {
            Ok(())
        } else {
            Err(Error::domain(format!("input probability {p} outside [0, 1]")))
        }
    }

    pub fn exact(&self, p1: f64, p2: f64) -> Result<f64> {
        Self::check(p1)?;
        Self::check(p2)?;
        let mut e = 0.0;
        for x1 in [0.0, 1.0] {
            for x2 in [0.0, 1.0] {
                let w = (if x1 > 0.0 { p1 } else { 1.0 - p1 }) * (if x2 > 0.0 { p2 } else { 1.0 - p2 });
                e += w * logistic_sigmoid(self.a * (x1 + x2) + self.b);
            }
        }
        Ok(e)
    }

    pub fn ap1(&self, p1: f64, p2: f64) -> Result<f64> {
        Self::check(p1)?;
        Self::check(p2)?;
        Ok(logistic_sigmoid(self.a * (p1 + p2) + self.b))
    }

    /// Pre-activation moments from the Bernoulli input moments, pushed through the
    /// logistic-assumption Bernoulli mean.
    pub fn ap2b(&self, p1: f64, p2: f64) -> Result<f64> {
        Self::check(p1)?;
        Self::check(p2)?;
        let mean = self.a * (p1 + p2) + self.b;
        let var = self.a * self.a * (p1 * (1.0 - p1) + p2 * (1.0 - p2));
        Ok(logistic_bernoulli_mean(ScalarMoments::new(mean, var)?, BernoulliMean::Ap2b).mean)
    }

    pub fn row(&self, p1: f64, p2: f64) -> Result<AndGateRow> {
        Ok(AndGateRow {
            p1,
            p2,
            exact_and: p1 * p2,
            exact: self.exact(p1, p2)?,
            ap1: self.ap1(p1, p2)?,
            ap2b: self.ap2b(p1, p2)?,
        })
    }

    pub fn table(&self) -> Result<Vec<AndGateRow>> {
        TABLE_INPUTS.iter().map(|&(p1, p2)| self.row(p1, p2)).collect()
    }
}

pub fn table_csv(rows: &[AndGateRow]) -> String {
    let mut s = String::from("p1,p2,exact_and,exact,ap1,ap2b\n");
    for r in rows {
        let cols = [r.p1, r.p2, r.exact_and, r.exact, r.ap1, r.ap2b].map(fmt6);
        s.push_str(&cols.join(","));
        s.push('\n');
    }
    s
}
