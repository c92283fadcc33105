use crate::scalar::Scalar;

/// Per-slice market exchange and pairwise trades of every microgrid.
///
/// `p2p(i, j)` is the power microgrid `i` imports from microgrid `j`
/// (negative: exports). The matrix is kept antisymmetric by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TradePlan<T> {
    market_kw: Vec<T>,
    p2p: Vec<T>,
}

impl<T: Scalar> TradePlan<T> {
    /// Every microgrid exchanges exactly its target with the market.
    pub fn at_targets(targets: &[T]) -> Self {
        let n = targets.len();
        Self {
            market_kw: targets.to_vec(),
            p2p: vec![T::zero(); n * n],
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.market_kw.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.market_kw.is_empty()
    }

    #[inline]
    pub fn market_kw(&self) -> &[T] {
        &self.market_kw
    }

    #[inline]
    pub fn p2p(&self, i: usize, j: usize) -> T {
        self.p2p[i * self.len() + j]
    }

    /// `i` imports `amount` kW from `j`.
    pub fn add_trade(&mut self, i: usize, j: usize, amount: T) {
        assert_ne!(i, j, "self-trade");
        let n = self.len();
        self.p2p[i * n + j] += amount;
        self.p2p[j * n + i] -= amount;
    }

    /// `i` buys `amount` kW more from the market.
    pub fn add_market(&mut self, i: usize, amount: T) {
        self.market_kw[i] += amount;
    }

    /// Net peer-to-peer import of microgrid `i`.
    pub fn net_p2p(&self, i: usize) -> T {
        let n = self.len();
        self.p2p[i * n..(i + 1) * n].iter().copied().sum()
    }

    /// Net device power `x^M_i + Σ_j x^P2P_ij`.
    pub fn device_kw(&self, i: usize) -> T {
        self.market_kw[i] + self.net_p2p(i)
    }

    pub fn device_all(&self) -> Vec<T> {
        (0..self.len()).map(|i| self.device_kw(i)).collect()
    }

    /// Largest `|x_ij + x_ji|`; zero when the trades are consistent.
    pub fn antisymmetry_defect(&self) -> T {
        let n = self.len();
        let mut worst = T::zero();
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.p2p(i, j) + self.p2p(j, i)).abs());
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trades_stay_antisymmetric_and_cancel() {
        let mut p = TradePlan::at_targets(&[1.0, 2.0, 3.0]);
        p.add_trade(0, 1, 2.5);
        p.add_trade(2, 0, 1.0);
        assert_eq!(p.p2p(0, 1), 2.5);
        assert_eq!(p.p2p(1, 0), -2.5);
        assert_eq!(p.antisymmetry_defect(), 0.0);
        let total_device: f64 = p.device_all().iter().sum();
        let total_market: f64 = p.market_kw().iter().sum();
        assert!((total_device - total_market).abs() < 1e-12);
        assert_eq!(p.device_kw(0), 1.0 + 2.5 - 1.0);
    }
}
