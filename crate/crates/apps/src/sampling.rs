//! Draws from an explicit lattice pmf.

use rand::Rng;
use stein_llt::dist::LatticePmf;
use stein_llt::numeric::NeumaierSum;

/// Inverse-cdf sampler over the support of a [`LatticePmf`].
#[derive(Debug, Clone)]
pub struct CdfSampler {
    offset: i64,
    step: i64,
    cdf: Vec<f64>,
}

impl CdfSampler {
    pub fn new(pmf: &LatticePmf) -> Self {
        let mut acc = NeumaierSum::new();
        let mut cdf: Vec<f64> = pmf
            .probs
            .iter()
            .map(|&p| {
                acc.add(p);
                acc.value()
            })
            .collect();
        let total = acc.value();
        for c in cdf.iter_mut() {
            *c /= total;
        }
        if let Some(last) = cdf.last_mut() {
            *last = 1.0;
        }
        Self {
            offset: pmf.offset,
            step: pmf.step as i64,
            cdf,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let u: f64 = rng.gen();
        let i = self
            .cdf
            .partition_point(|&c| c <= u)
            .min(self.cdf.len() - 1);
        self.offset + self.step * i as i64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use stein_llt::coupling::substream;

    #[test]
    fn frequencies_match() {
        let pmf = LatticePmf::new(-4, 2, vec![0.1, 0.2, 0.3, 0.4], 0.0).unwrap();
        let s = CdfSampler::new(&pmf);
        let mut rng = substream(1, 0);
        let mut counts = [0u32; 4];
        for _ in 0..100_000 {
            let v = s.sample(&mut rng);
            counts[((v + 4) / 2) as usize] += 1;
        }
        for (c, p) in counts.iter().zip(&pmf.probs) {
            assert!((*c as f64 / 1e5 - p).abs() < 0.006);
        }
    }

    #[test]
    fn point_mass() {
        let s = CdfSampler::new(&LatticePmf::point_mass(7));
        let mut rng = substream(2, 0);
        assert_eq!(s.sample(&mut rng), 7);
    }
}
