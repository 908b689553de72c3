//! Conditional instance normalization and the per-style parameter bank.
//!
//! Every normalization site `l` owns an `N x C_l` matrix of scales (gamma)
//! and one of shifts (beta); row `s` is the embedding of style `s`. Styles
//! share every convolution kernel, so a style costs `2 * sum_l C_l` numbers.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{Element, Shape, Tensor};

/// Stabilizer inside `sqrt(var + eps)`.
pub const CIN_EPS: f64 = 1e-5;

/// Standard deviation of the jitter applied to a freshly added style row.
pub const STYLE_INIT_STD: f64 = 0.01;

/// Convex weights must sum to one within this tolerance; they are then
/// renormalized exactly.
pub const BLEND_SUM_TOLERANCE: f64 = 1e-6;

/// One normalization site's parameters for a single style (or blend).
#[derive(Clone, Debug, PartialEq)]
pub struct StyleLayer<T = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

/// A style's parameters across all normalization sites.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleVector<T = f32> {
    pub layers: Vec<StyleLayer<T>>,
}

impl<T: Element> StyleVector<T> {
    pub fn channels(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.gamma.len()).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.gamma.len() + l.beta.len()).sum()
    }

    pub fn cast<U: Element>(&self) -> StyleVector<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64_lossy(x.to_f64().unwrap())).collect();
        StyleVector {
            layers: self
                .layers
                .iter()
                .map(|l| StyleLayer { gamma: conv(&l.gamma), beta: conv(&l.beta) })
                .collect(),
        }
    }
}

/// Scales and shifts for one normalization site, one row per style.
#[derive(Clone, Debug, PartialEq)]
pub struct BankLayer<T = f32> {
    channels: usize,
    gamma: Vec<T>,
    beta: Vec<T>,
}

impl<T: Element> BankLayer<T> {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn rows(&self) -> usize {
        self.gamma.len() / self.channels
    }

    pub fn gamma(&self) -> &[T] {
        &self.gamma
    }

    pub fn beta(&self) -> &[T] {
        &self.beta
    }

    pub fn gamma_row(&self, row: usize) -> &[T] {
        &self.gamma[row * self.channels..(row + 1) * self.channels]
    }

    pub fn beta_row(&self, row: usize) -> &[T] {
        &self.beta[row * self.channels..(row + 1) * self.channels]
    }

    /// The whole gamma matrix as an `N x C x 1 x 1` tensor.
    pub fn gamma_tensor(&self) -> Result<Tensor<T>> {
        Tensor::new(Shape::new(self.rows(), self.channels, 1, 1), self.gamma.clone())
    }

    pub fn beta_tensor(&self) -> Result<Tensor<T>> {
        Tensor::new(Shape::new(self.rows(), self.channels, 1, 1), self.beta.clone())
    }

    pub(crate) fn set_matrices(&mut self, gamma: Vec<T>, beta: Vec<T>) {
        assert_eq!(gamma.len(), self.gamma.len());
        assert_eq!(beta.len(), self.beta.len());
        self.gamma = gamma;
        self.beta = beta;
    }
}

/// The learned style embedding: `N` rows at every normalization site.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleBank<T = f32> {
    names: Vec<String>,
    layers: Vec<BankLayer<T>>,
}

impl<T: Element> StyleBank<T> {
    /// An empty bank for normalization sites with the given channel counts.
    pub fn new(channels: &[usize]) -> Result<Self> {
        if channels.is_empty() || channels.contains(&0) {
            return Err(Error::Config(format!("invalid channel list {channels:?}")));
        }
        Ok(Self {
            names: Vec::new(),
            layers: channels
                .iter()
                .map(|&c| BankLayer { channels: c, gamma: Vec::new(), beta: Vec::new() })
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn layers(&self) -> &[BankLayer<T>] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [BankLayer<T>] {
        &mut self.layers
    }

    pub fn channels(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.channels).collect()
    }

    /// Parameters one style occupies: `2 * sum_l C_l`.
    pub fn per_style_parameters(&self) -> usize {
        2 * self.layers.iter().map(|l| l.channels).sum::<usize>()
    }

    /// Total parameters held: `2 * N * sum_l C_l`.
    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.gamma.len() + l.beta.len()).sum()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownStyle(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }

    /// Exact copy of the row belonging to `name`.
    pub fn select(&self, name: &str) -> Result<StyleVector<T>> {
        let row = self.index_of(name)?;
        Ok(self.row(row))
    }

    pub(crate) fn row(&self, row: usize) -> StyleVector<T> {
        StyleVector {
            layers: self
                .layers
                .iter()
                .map(|l| StyleLayer {
                    gamma: l.gamma_row(row).to_vec(),
                    beta: l.beta_row(row).to_vec(),
                })
                .collect(),
        }
    }

    /// Convex combination of rows: `gamma = sum_s w_s gamma_s`, likewise for beta.
    pub fn blend(&self, weights: &BlendWeights) -> Result<StyleVector<T>> {
        let rows = weights
            .iter()
            .map(|(name, w)| Ok((self.index_of(name)?, w)))
            .collect::<Result<Vec<_>>>()?;
        let mix = |matrix: &[T], c: usize| -> Vec<T> {
            (0..c)
                .map(|j| {
                    let v = rows
                        .iter()
                        .fold(0.0f64, |acc, &(r, w)| acc + w * matrix[r * c + j].to_f64().unwrap());
                    T::from_f64_lossy(v)
                })
                .collect()
        };
        Ok(StyleVector {
            layers: self
                .layers
                .iter()
                .map(|l| StyleLayer {
                    gamma: mix(&l.gamma, l.channels),
                    beta: mix(&l.beta, l.channels),
                })
                .collect(),
        })
    }

    /// Appends a row for a new style with gamma near one and beta near zero.
    /// Existing rows are untouched.
    pub fn add_style(&mut self, name: &str, seed: u64) -> Result<()> {
        if self.contains(name) {
            return Err(Error::DuplicateStyle(name.to_string()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let jitter = Normal::new(0.0, STYLE_INIT_STD).expect("valid std");
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let gamma = (0..l.channels)
                .map(|_| T::from_f64_lossy(1.0 + jitter.sample(&mut rng)))
                .collect();
            let beta = (0..l.channels)
                .map(|_| T::from_f64_lossy(jitter.sample(&mut rng)))
                .collect();
            layers.push(StyleLayer { gamma, beta });
        }
        self.push_row(name, StyleVector { layers })
    }

    /// Appends `vector` as a new style named `name`.
    pub fn push_row(&mut self, name: &str, vector: StyleVector<T>) -> Result<()> {
        if self.contains(name) {
            return Err(Error::DuplicateStyle(name.to_string()));
        }
        self.check_compatible(&vector)?;
        for (l, v) in self.layers.iter_mut().zip(vector.layers) {
            l.gamma.extend(v.gamma);
            l.beta.extend(v.beta);
        }
        self.names.push(name.to_string());
        Ok(())
    }

    /// Overwrites the row of an existing style.
    pub fn set_row(&mut self, name: &str, vector: &StyleVector<T>) -> Result<()> {
        let row = self.index_of(name)?;
        self.check_compatible(vector)?;
        for (l, v) in self.layers.iter_mut().zip(&vector.layers) {
            let c = l.channels;
            l.gamma[row * c..(row + 1) * c].copy_from_slice(&v.gamma);
            l.beta[row * c..(row + 1) * c].copy_from_slice(&v.beta);
        }
        Ok(())
    }

    pub fn check_compatible(&self, vector: &StyleVector<T>) -> Result<()> {
        let ours = self.channels();
        let theirs = vector.channels();
        let betas_match = vector.layers.iter().all(|l| l.beta.len() == l.gamma.len());
        if ours != theirs || !betas_match {
            return Err(Error::Incompatible(format!(
                "style has channel list {theirs:?}, model expects {ours:?}"
            )));
        }
        Ok(())
    }

    pub fn cast<U: Element>(&self) -> StyleBank<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64_lossy(x.to_f64().unwrap())).collect();
        StyleBank {
            names: self.names.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| BankLayer { channels: l.channels, gamma: conv(&l.gamma), beta: conv(&l.beta) })
                .collect(),
        }
    }
}

/// Conditional instance normalization for one site: every (sample, channel)
/// plane is normalized by its own spatial statistics, then mapped by the
/// style's `gamma_c * z + beta_c`.
pub fn cin_forward<T: Element>(x: &Tensor<T>, style: &StyleLayer<T>, eps: T) -> Result<Tensor<T>> {
    let s = x.shape();
    if style.gamma.len() != s.c || style.beta.len() != s.c {
        return Err(Error::shape(format!(
            "style layer has {} channels, input has {}",
            style.gamma.len(),
            s.c
        )));
    }
    let (normalized, _) = ops::instance_normalize(x, eps);
    let affine = Shape::new(s.n, s.c, 1, 1);
    let gamma = Tensor::new(affine, style.gamma.repeat(s.n))?;
    let beta = Tensor::new(affine, style.beta.repeat(s.n))?;
    ops::scale_shift(&normalized, &gamma, &beta)
}

/// Non-negative weights over named styles that sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct BlendWeights {
    entries: Vec<(String, f64)>,
}

impl BlendWeights {
    /// Validates convexity. Sums within [`BLEND_SUM_TOLERANCE`] of one are
    /// renormalized; anything farther off is rejected.
    pub fn new<S: Into<String>>(entries: impl IntoIterator<Item = (S, f64)>) -> Result<Self> {
        let entries: Vec<(String, f64)> = entries.into_iter().map(|(n, w)| (n.into(), w)).collect();
        if entries.is_empty() {
            return Err(Error::InvalidBlend("no styles given".into()));
        }
        let mut seen = HashSet::new();
        for (name, w) in &entries {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidBlend(format!("style `{name}` listed twice")));
            }
            if !w.is_finite() || *w < 0.0 {
                return Err(Error::InvalidBlend(format!("weight for `{name}` is {w}")));
            }
        }
        let sum: f64 = entries.iter().map(|(_, w)| w).sum();
        if (sum - 1.0).abs() > BLEND_SUM_TOLERANCE {
            return Err(Error::InvalidBlend(format!("weights sum to {sum}, expected 1")));
        }
        let entries = if sum == 1.0 {
            entries
        } else {
            entries.into_iter().map(|(n, w)| (n, w / sum)).collect()
        };
        Ok(Self { entries })
    }

    pub fn single(name: impl Into<String>) -> Self {
        Self { entries: vec![(name.into(), 1.0)] }
    }

    /// `{a: alpha, b: 1 - alpha}`.
    pub fn pair(a: &str, b: &str, alpha: f64) -> Result<Self> {
        if a == b {
            return Err(Error::InvalidBlend("a pair needs two distinct styles".into()));
        }
        Self::new([(a, alpha), (b, 1.0 - alpha)])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(n, w)| (n.as_str(), *w))
    }

    pub fn weight(&self, name: &str) -> f64 {
        self.iter().find(|(n, _)| *n == name).map_or(0.0, |(_, w)| w)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl FromStr for BlendWeights {
    type Err = Error;

    /// Parses `name=w,name=w,...`.
    fn from_str(s: &str) -> Result<Self> {
        let entries = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|part| {
                let (name, w) = part
                    .split_once('=')
                    .ok_or_else(|| Error::InvalidBlend(format!("expected name=weight, got `{part}`")))?;
                let w: f64 = w
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidBlend(format!("bad weight `{w}`")))?;
                Ok((name.trim().to_string(), w))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries)
    }
}

impl fmt::Display for BlendWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (n, w)) in self.entries.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{n}={w}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bank_ab() -> StyleBank<f64> {
        let mut bank = StyleBank::new(&[1]).unwrap();
        bank.push_row("A", StyleVector { layers: vec![StyleLayer { gamma: vec![2.0], beta: vec![0.0] }] })
            .unwrap();
        bank.push_row("B", StyleVector { layers: vec![StyleLayer { gamma: vec![4.0], beta: vec![1.0] }] })
            .unwrap();
        bank
    }

    #[test]
    fn constant_channel_outputs_beta() {
        let x = Tensor::<f64>::full(Shape::new(1, 1, 3, 3), 42.0).unwrap();
        let layer = StyleLayer { gamma: vec![5.0], beta: vec![7.0] };
        let z = cin_forward(&x, &layer, CIN_EPS).unwrap();
        assert!(z.data().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn two_value_channel_hand_example() {
        let x = Tensor::<f64>::from_f64(Shape::new(1, 1, 1, 2), &[1.0, 3.0]).unwrap();
        let layer = StyleLayer { gamma: vec![2.0], beta: vec![1.0] };
        let exact = cin_forward(&x, &layer, 0.0).unwrap();
        assert_eq!(exact.data(), &[-1.0, 3.0]);
        let z = cin_forward(&x, &layer, CIN_EPS).unwrap();
        assert!((z.data()[0] + 1.0).abs() < 1e-4 && (z.data()[1] - 3.0).abs() < 1e-4);
    }

    #[test]
    fn batch_order_permutes_outputs() {
        let a = Tensor::<f64>::from_fn(Shape::new(1, 2, 2, 2), |i| (i * i) as f64).unwrap();
        let b = Tensor::<f64>::from_fn(Shape::new(1, 2, 2, 2), |i| 3.0 - i as f64).unwrap();
        let layer = StyleLayer { gamma: vec![1.5, 0.5], beta: vec![0.1, -0.2] };
        let ab = cin_forward(&Tensor::stack(&[a.clone(), b.clone()]).unwrap(), &layer, CIN_EPS).unwrap();
        let ba = cin_forward(&Tensor::stack(&[b, a]).unwrap(), &layer, CIN_EPS).unwrap();
        assert_eq!(ab.sample(0).unwrap(), ba.sample(1).unwrap());
        assert_eq!(ab.sample(1).unwrap(), ba.sample(0).unwrap());
    }

    #[test]
    fn channel_mismatch_rejected() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 2, 2, 2)).unwrap();
        let layer = StyleLayer { gamma: vec![1.0], beta: vec![0.0] };
        assert!(matches!(cin_forward(&x, &layer, CIN_EPS), Err(Error::Shape(_))));
    }

    #[test]
    fn select_is_deterministic_and_rejects_unknown() {
        let bank = bank_ab();
        assert_eq!(bank.select("A").unwrap(), bank.select("A").unwrap());
        assert_eq!(bank.blend(&BlendWeights::single("A")).unwrap(), bank.select("A").unwrap());
        assert!(matches!(bank.select("Z"), Err(Error::UnknownStyle(_))));
    }

    #[test]
    fn midpoint_blend() {
        let bank = bank_ab();
        let w = BlendWeights::new([("A", 0.5), ("B", 0.5)]).unwrap();
        let v = bank.blend(&w).unwrap();
        assert_eq!(v.layers[0].gamma, vec![3.0]);
        assert_eq!(v.layers[0].beta, vec![0.5]);
    }

    #[test]
    fn four_style_uniform_blend_is_mean() {
        let mut bank = StyleBank::<f64>::new(&[3, 2]).unwrap();
        for (i, name) in ["a", "b", "c", "d"].iter().enumerate() {
            bank.add_style(name, i as u64).unwrap();
        }
        let w = BlendWeights::new(["a", "b", "c", "d"].map(|n| (n, 0.25))).unwrap();
        let v = bank.blend(&w).unwrap();
        for (l, layer) in bank.layers().iter().enumerate() {
            for c in 0..layer.channels() {
                let mean = (0..4).map(|r| layer.gamma_row(r)[c]).sum::<f64>() / 4.0;
                assert!((v.layers[l].gamma[c] - mean).abs() < 1e-15);
                let mean = (0..4).map(|r| layer.beta_row(r)[c]).sum::<f64>() / 4.0;
                assert!((v.layers[l].beta[c] - mean).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn blend_weight_validation() {
        assert!(BlendWeights::new([("A", 0.7), ("B", 0.4)]).is_err());
        assert!(BlendWeights::new([("A", 1.2), ("B", -0.2)]).is_err());
        assert!(BlendWeights::new([("A", 0.5), ("A", 0.5)]).is_err());
        assert!(BlendWeights::new(Vec::<(String, f64)>::new()).is_err());
        let w = BlendWeights::new([("A", 0.5), ("B", 0.5000004)]).unwrap();
        let sum: f64 = w.iter().map(|(_, v)| v).sum();
        assert!((sum - 1.0).abs() < 1e-15);
        assert!("A=0.7,B=0.4".parse::<BlendWeights>().is_err());
        let parsed: BlendWeights = "A=0.25, B=0.75".parse().unwrap();
        assert_eq!(parsed.weight("B"), 0.75);
        assert!(matches!(
            bank_ab().blend(&BlendWeights::single("Z")),
            Err(Error::UnknownStyle(_))
        ));
    }

    #[test]
    fn add_style_rows() {
        let mut bank = StyleBank::<f32>::new(&[4, 8, 3]).unwrap();
        bank.add_style("first", 1).unwrap();
        assert_eq!(bank.len(), 1);
        assert_eq!(bank.select("first").unwrap().channels(), vec![4, 8, 3]);
        for i in 0..31 {
            bank.add_style(&format!("s{i}"), i).unwrap();
        }
        let before = bank.clone();
        bank.add_style("monet_plum", 99).unwrap();
        assert_eq!(bank.len(), 33);
        for (name, i) in before.names().iter().zip(0..) {
            assert_eq!(bank.select(name).unwrap(), before.select(name).unwrap(), "row {i}");
        }
        assert!(matches!(bank.add_style("s3", 0), Err(Error::DuplicateStyle(_))));

        let mut a = before.clone();
        let mut b = before;
        a.add_style("new", 7).unwrap();
        b.add_style("new", 7).unwrap();
        assert_eq!(a.select("new").unwrap(), b.select("new").unwrap());
        let row = a.select("new").unwrap();
        assert!(row.layers.iter().flat_map(|l| &l.gamma).all(|&g| (g - 1.0).abs() < 0.1));
        assert!(row.layers.iter().flat_map(|l| &l.beta).all(|&b| b.abs() < 0.1));
    }

    #[test]
    fn parameter_count_is_two_n_sum_c() {
        let mut bank = StyleBank::<f32>::new(&[32, 64, 3]).unwrap();
        assert_eq!(bank.parameter_count(), 0);
        for i in 0..5 {
            bank.add_style(&i.to_string(), i).unwrap();
        }
        assert_eq!(bank.parameter_count(), 2 * 5 * 99);
        assert_eq!(bank.per_style_parameters(), 2 * 99);
    }

    fn weights(raw: &[f64]) -> Vec<f64> {
        let s: f64 = raw.iter().sum();
        raw.iter().map(|v| v / s).collect()
    }

    proptest! {
        #[test]
        fn normalized_planes_have_zero_mean_unit_std(
            values in proptest::collection::vec(-5.0f64..5.0, 16),
        ) {
            let spread = values.iter().cloned().fold(f64::MIN, f64::max)
                - values.iter().cloned().fold(f64::MAX, f64::min);
            prop_assume!(spread > 0.5);
            let x = Tensor::<f64>::from_f64(Shape::new(1, 1, 4, 4), &values).unwrap();
            let (z, _) = ops::instance_normalize(&x, CIN_EPS);
            let mean = z.sum() / 16.0;
            let std = (z.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0).sqrt();
            prop_assert!(mean.abs() <= 1e-5);
            prop_assert!((std - 1.0).abs() <= 1e-3);
        }

        #[test]
        fn cin_is_equivariant_to_spatial_shuffles(
            values in proptest::collection::vec(-3.0f64..3.0, 9),
            seed in 0u64..1000,
        ) {
            use rand::seq::SliceRandom;
            let mut perm: Vec<usize> = (0..9).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let shuffled: Vec<f64> = perm.iter().map(|&i| values[i]).collect();
            let layer = StyleLayer { gamma: vec![1.3], beta: vec![-0.4] };
            let z = cin_forward(&Tensor::from_f64(Shape::new(1, 1, 3, 3), &values).unwrap(), &layer, CIN_EPS).unwrap();
            let zs = cin_forward(&Tensor::from_f64(Shape::new(1, 1, 3, 3), &shuffled).unwrap(), &layer, CIN_EPS).unwrap();
            for (k, &i) in perm.iter().enumerate() {
                prop_assert!((zs.data()[k] - z.data()[i]).abs() < 1e-12);
            }
        }

        #[test]
        fn blend_is_linear_in_weights(
            w1 in proptest::collection::vec(0.01f64..1.0, 3),
            w2 in proptest::collection::vec(0.01f64..1.0, 3),
            t in 0.0f64..1.0,
        ) {
            let mut bank = StyleBank::<f64>::new(&[2, 3]).unwrap();
            for (i, n) in ["a", "b", "c"].iter().enumerate() {
                bank.add_style(n, 10 + i as u64).unwrap();
            }
            let (w1, w2) = (weights(&w1), weights(&w2));
            let mixed: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| t * a + (1.0 - t) * b).collect();
            let mk = |w: &[f64]| BlendWeights::new(["a", "b", "c"].iter().zip(w).map(|(n, v)| (*n, *v))).unwrap();
            let v1 = bank.blend(&mk(&w1)).unwrap();
            let v2 = bank.blend(&mk(&w2)).unwrap();
            let vm = bank.blend(&mk(&mixed)).unwrap();
            for l in 0..2 {
                for c in 0..v1.layers[l].gamma.len() {
                    let lin = t * v1.layers[l].gamma[c] + (1.0 - t) * v2.layers[l].gamma[c];
                    prop_assert!((lin - vm.layers[l].gamma[c]).abs() < 1e-9);
                    let lin = t * v1.layers[l].beta[c] + (1.0 - t) * v2.layers[l].beta[c];
                    prop_assert!((lin - vm.layers[l].beta[c]).abs() < 1e-9);
                }
            }
        }
    }
}
