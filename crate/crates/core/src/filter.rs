//! Bootstrap particle filter targeting the prediction filter: weight by the
//! emission density, resample, propagate through the transition kernel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ParameterVector, StateSpaceModel};
use crate::rng::{Purpose, Streams};
use crate::sampling::{CumulativeWeights, WeightVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Resampling {
    #[default]
    Multinomial,
    Systematic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    positions: Vec<f64>,
    weights: WeightVector,
    t: usize,
}

impl ParticleCloud {
    /// A cloud with uniform weights.
    pub fn from_positions(positions: Vec<f64>, t: usize) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidInput("particle cloud needs at least one particle".into()));
        }
        if let Some(i) = positions.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { what: "particle position", t, i });
        }
        let n = positions.len();
        Ok(ParticleCloud { positions, weights: WeightVector::uniform(n), t })
    }

    pub fn with_weights(positions: Vec<f64>, weights: WeightVector, t: usize) -> Result<Self> {
        if positions.len() != weights.len() {
            return Err(Error::InvalidInput("positions and weights differ in length".into()));
        }
        let mut cloud = Self::from_positions(positions, t)?;
        cloud.weights = weights;
        Ok(cloud)
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Draws `n` particles from the initial law at `theta0`. Particle `i` uses
/// stream `(seed, 0, i, Init)`.
pub fn init_cloud<M: StateSpaceModel + ?Sized>(
    model: &M,
    theta0: &ParameterVector,
    n: usize,
    streams: &Streams,
) -> Result<ParticleCloud> {
    if n == 0 {
        return Err(Error::InvalidInput("number of particles must be >= 1".into()));
    }
    model.validate(theta0)?;
    let positions = (0..n).map(|i| model.sample_initial(theta0, &mut streams.stream(0, i, Purpose::Init))).collect();
    ParticleCloud::from_positions(positions, 0)
}

/// Replaces the weights by the emission densities `g(x_i, y)`.
pub fn weight_cloud<M: StateSpaceModel + ?Sized>(
    cloud: &ParticleCloud,
    y: f64,
    theta: &ParameterVector,
    model: &M,
) -> Result<ParticleCloud> {
    let w: Vec<f64> = cloud.positions.iter().map(|&x| model.emission_density(theta, x, y)).collect();
    if let Some(i) = w.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "emission weight", t: cloud.t, i });
    }
    let weights = WeightVector::new(w).map_err(|_| Error::WeightCollapse { t: cloud.t })?;
    Ok(ParticleCloud { positions: cloud.positions.clone(), weights, t: cloud.t })
}

/// Resamples ancestors from the cloud weights and moves each through the
/// transition kernel. Returns the new uniformly weighted cloud at `t + 1`
/// and the ancestor indices.
pub fn propagate<M: StateSpaceModel + ?Sized>(
    cloud: &ParticleCloud,
    theta: &ParameterVector,
    model: &M,
    streams: &Streams,
    scheme: Resampling,
) -> Result<(ParticleCloud, Vec<usize>)> {
    let n = cloud.len();
    let t = cloud.t;
    let cdf = CumulativeWeights::new(&cloud.weights);
    let ancestors: Vec<usize> = match scheme {
        Resampling::Multinomial => (0..n).map(|i| cdf.sample(&mut streams.stream(t, i, Purpose::Resample))).collect(),
        Resampling::Systematic => {
            use rand::Rng;
            let u0: f64 = streams.stream(t, 0, Purpose::Resample).random();
            (0..n).map(|i| cdf.index_for((i as f64 + u0) / n as f64)).collect()
        }
    };
    let mut positions = Vec::with_capacity(n);
    for (i, &a) in ancestors.iter().enumerate() {
        let x = model.sample_transition(theta, cloud.positions[a], &mut streams.stream(t, i, Purpose::Propagate));
        if !x.is_finite() {
            return Err(Error::NonFinite { what: "propagated position", t: t + 1, i });
        }
        positions.push(x);
    }
    Ok((ParticleCloud { positions, weights: WeightVector::uniform(n), t: t + 1 }, ancestors))
}

/// `(1/N) sum f(x_i)` over a uniformly weighted cloud.
pub fn predict_estimate(cloud: &ParticleCloud, f: impl Fn(f64) -> f64) -> f64 {
    cloud.positions.iter().map(|&x| f(x)).sum::<f64>() / cloud.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SvModel;

    fn theta(v: &[f64]) -> ParameterVector {
        ParameterVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn singleton_cloud() {
        let m = SvModel::default();
        let c = init_cloud(&m, &theta(&[0.8, 0.1, 1.0]), 1, &Streams::new(1)).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.weights().as_slice(), &[1.0]);
        assert_eq!(c.t(), 0);
        let (next, anc) =
            propagate(&c, &theta(&[0.8, 0.1, 1.0]), &m, &Streams::new(1), Resampling::Multinomial).unwrap();
        assert_eq!(anc, vec![0]);
        assert_eq!(next.t(), 1);
    }

    #[test]
    fn zero_particles_rejected() {
        assert!(init_cloud(&SvModel::default(), &theta(&[0.8, 0.1, 1.0]), 0, &Streams::new(1)).is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let m = SvModel::default();
        let th = theta(&[0.8, 0.1, 1.0]);
        let a = init_cloud(&m, &th, 50, &Streams::new(5)).unwrap();
        let b = init_cloud(&m, &th, 50, &Streams::new(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_matches_stationary_moments() {
        let m = SvModel::default();
        let n = 100_000;
        let c = init_cloud(&m, &theta(&[0.8, 0.1, 1.0]), n, &Streams::new(8)).unwrap();
        let var_target = 0.1 / 0.36;
        let mean = predict_estimate(&c, |x| x);
        assert!(mean.abs() < 3.0 * (var_target / n as f64).sqrt());
        let var = predict_estimate(&c, |x| (x - mean).powi(2));
        assert!((var - var_target).abs() / var_target < 0.05);
        let pos = predict_estimate(&c, |x| if x > 0.0 { 1.0 } else { 0.0 });
        assert!((pos - 0.5).abs() < 3.0 * 0.5 / (n as f64).sqrt());
    }

    #[test]
    fn weighting_examples() {
        let m = SvModel::default();
        let th = theta(&[0.8, 0.1, 1.0]);
        let c = ParticleCloud::from_positions(vec![0.0], 0).unwrap();
        let w = weight_cloud(&c, 0.0, &th, &m).unwrap();
        assert!((w.weights().as_slice()[0] - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert_eq!(w.positions(), c.positions());

        let c = ParticleCloud::from_positions(vec![-1.0, 0.0, 2.0], 4).unwrap();
        assert!(matches!(weight_cloud(&c, 1e200, &th, &m), Err(Error::WeightCollapse { t: 4 })));
    }

    #[test]
    fn near_degenerate_kernel_keeps_positions_tight() {
        let m = SvModel::default();
        let th = theta(&[0.0, 1e-4, 1.0]);
        let c = ParticleCloud::from_positions(vec![-3.0, 0.5, 2.0, 7.0], 0).unwrap();
        let c = weight_cloud(&c, 0.3, &th, &m).unwrap();
        let (next, _) = propagate(&c, &th, &m, &Streams::new(3), Resampling::Multinomial).unwrap();
        assert!(next.positions().iter().all(|x| x.abs() < 6.0 * 1e-2));
        assert!(next.weights().is_uniform());
        assert_eq!(next.weights().total(), 1.0);
    }

    #[test]
    fn predict_estimate_examples() {
        let c = ParticleCloud::from_positions(vec![-2.5, 2.5], 0).unwrap();
        assert_eq!(predict_estimate(&c, |_| 1.0), 1.0);
        assert_eq!(predict_estimate(&c, |x| x), 0.0);
    }

    #[test]
    fn systematic_resampling_preserves_counts() {
        let m = SvModel::default();
        let th = theta(&[0.8, 0.1, 1.0]);
        let w = WeightVector::new(vec![1.0, 0.0, 3.0, 0.0]).unwrap();
        let c = ParticleCloud::with_weights(vec![0.0, 1.0, 2.0, 3.0], w, 0).unwrap();
        let (_, anc) = propagate(&c, &th, &m, &Streams::new(9), Resampling::Systematic).unwrap();
        assert_eq!(anc.iter().filter(|&&a| a == 0).count(), 1);
        assert_eq!(anc.iter().filter(|&&a| a == 2).count(), 3);
    }
}
