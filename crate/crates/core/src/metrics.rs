//! Accuracy, generalization error and parameter-dispersion metrics.
//! Accuracies are fractions in `[0, 1]` everywhere in this crate.

use alloc::string::String;

use crate::data::Dataset;
use crate::error::{input_err, Result};
use crate::math;
use crate::nn::{floored_ln, Network};

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

const EVAL_CHUNK: usize = 1000;

/// Accuracy and mean cross-entropy over a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

pub fn evaluate(net: &Network, d: &Dataset) -> Result<Evaluation> {
    if d.is_empty() {
        return Err(input_err!("cannot evaluate on an empty dataset"));
    }
    let mut correct = 0usize;
    let mut loss = 0.0;
    let mut start = 0;
    while start < d.len() {
        let end = (start + EVAL_CHUNK).min(d.len());
        let probs = net.predict(&d.inputs().slice_rows(start, end))?;
        for (i, &y) in d.labels()[start..end].iter().enumerate() {
            let row = probs.row(i);
            if argmax(row) == y {
                correct += 1;
            }
            loss -= floored_ln(row[y]);
        }
        start = end;
    }
    let n = d.len() as f64;
    Ok(Evaluation { accuracy: correct as f64 / n, loss: loss / n })
}

/// Fraction of examples whose argmax prediction equals the label.
pub fn accuracy(net: &Network, d: &Dataset) -> Result<f64> {
    Ok(evaluate(net, d)?.accuracy)
}

/// Training accuracy minus test accuracy.
pub fn generalization_error(net: &Network, train: &Dataset, test: &Dataset) -> Result<f64> {
    Ok(accuracy(net, train)? - accuracy(net, test)?)
}

fn mean_param(net: &Network) -> f64 {
    let n = net.num_params() as f64;
    net.layers()
        .iter()
        .map(|l| l.weights().as_slice().iter().sum::<f64>() + l.biases().iter().sum::<f64>())
        .sum::<f64>()
        / n
}

fn for_each_param(net: &Network, mut f: impl FnMut(f64)) {
    for l in net.layers() {
        l.weights().as_slice().iter().copied().for_each(&mut f);
        l.biases().iter().copied().for_each(&mut f);
    }
}

/// Population standard deviation of all weights and biases.
pub fn param_stddev(net: &Network) -> f64 {
    let mean = mean_param(net);
    let mut ss = 0.0;
    for_each_param(net, |v| ss += (v - mean) * (v - mean));
    math::sqrt(ss / net.num_params() as f64)
}

/// `sqrt(Σ|θ − θ̄| / N)`, the square root of the mean absolute deviation.
/// Kept for comparison with [`param_stddev`].
pub fn param_dispersion_literal(net: &Network) -> f64 {
    let mean = mean_param(net);
    let mut s = 0.0;
    for_each_param(net, |v| s += (v - mean).abs());
    math::sqrt(s / net.num_params() as f64)
}

/// Which dispersion statistic a report carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Dispersion {
    #[default]
    StdDev,
    Literal,
}

pub fn param_dispersion(net: &Network, mode: Dispersion) -> f64 {
    match mode {
        Dispersion::StdDev => param_stddev(net),
        Dispersion::Literal => param_dispersion_literal(net),
    }
}

/// DP fields of a [`MetricsReport`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyFields {
    pub eps_dp: f64,
    pub delta_dp: f64,
    pub bound: f64,
    pub bound_holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub tag: String,
    pub train_acc: f64,
    pub test_acc: f64,
    pub gen_err: f64,
    pub param_std: f64,
    pub privacy: Option<PrivacyFields>,
}

impl MetricsReport {
    pub fn measure(tag: &str, net: &Network, train: &Dataset, test: &Dataset, mode: Dispersion) -> Result<Self> {
        let train_acc = accuracy(net, train)?;
        let test_acc = accuracy(net, test)?;
        Ok(Self {
            tag: tag.into(),
            train_acc,
            test_acc,
            gen_err: train_acc - test_acc,
            param_std: param_dispersion(net, mode),
            privacy: None,
        })
    }

    /// The generalization error agrees with the two accuracy fields.
    pub fn is_consistent(&self) -> bool {
        self.gen_err == self.train_acc - self.test_acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::nn::DenseLayer;
    use crate::rng::StreamRng;
    use alloc::vec;

    fn identity_net() -> Network {
        Network::new(vec![DenseLayer::new(Matrix::identity(2), vec![0.0, 0.0]).unwrap()]).unwrap()
    }

    #[test]
    fn perfect_and_fixture_accuracy() {
        let net = identity_net();
        let x = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.9, 0.1], [0.2, 0.8]]).unwrap();
        let d = Dataset::new(x.clone(), vec![0, 1, 0, 1], 2, "fx").unwrap();
        assert_eq!(accuracy(&net, &d).unwrap(), 1.0);
        let d = Dataset::new(x, vec![0, 0, 1, 1], 2, "fx").unwrap();
        assert_eq!(accuracy(&net, &d).unwrap(), 0.5);
    }

    #[test]
    fn constant_output_on_balanced_data_is_chance() {
        let net = Network::zeros(&[3, 10]).unwrap();
        let x = Matrix::zeros(50, 3);
        let d = Dataset::new(x, (0..50).map(|i| i % 10).collect(), 10, "b").unwrap();
        assert_eq!(accuracy(&net, &d).unwrap(), 0.1);
    }

    #[test]
    fn empty_dataset_is_error() {
        let d = Dataset::new(Matrix::zeros(0, 2), vec![], 2, "e").unwrap();
        assert!(accuracy(&identity_net(), &d).is_err());
    }

    #[test]
    fn gen_err_zero_on_same_data() {
        let mut rng = StreamRng::new(0, "init");
        let net = Network::init(&[2, 5, 2], &mut rng).unwrap();
        let d = crate::data::two_circles(40, 0.1, 0.5, &mut rng).unwrap();
        assert_eq!(generalization_error(&net, &d, &d).unwrap(), 0.0);
    }

    #[test]
    fn stddev_closed_forms() {
        let net = Network::zeros(&[3, 2]).unwrap();
        assert_eq!(param_stddev(&net), 0.0);
        let w = Matrix::new(1, 1, vec![-1.0]).unwrap();
        let net = Network::new(vec![DenseLayer::new(w, vec![1.0]).unwrap()]).unwrap();
        assert_eq!(param_stddev(&net), 1.0);
        assert_eq!(param_dispersion_literal(&net), 1.0);
    }

    #[test]
    fn argmax_ties_prefer_lowest() {
        assert_eq!(argmax(&[0.25, 0.25, 0.5, 0.5]), 2);
        assert_eq!(argmax(&[0.1, 0.1]), 0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn stddev_scales_linearly(seed in any::<u64>(), c in 0.0f64..10.0) {
                let net = Network::init(&[4, 6, 3], &mut StreamRng::new(seed, "init")).unwrap();
                let base = param_stddev(&net);
                let scaled = param_stddev(&net.scaled(c).unwrap());
                prop_assert!((scaled - c * base).abs() <= 1e-12 * (1.0 + c * base));
            }

            #[test]
            fn reports_are_consistent(seed in any::<u64>()) {
                let mut rng = StreamRng::new(seed, "init");
                let net = Network::init(&[2, 4, 2], &mut rng).unwrap();
                let a = crate::data::two_circles(20, 0.1, 0.5, &mut rng).unwrap();
                let b = crate::data::two_circles(20, 0.1, 0.5, &mut rng).unwrap();
                let r = MetricsReport::measure("t", &net, &a, &b, Dispersion::StdDev).unwrap();
                prop_assert!(r.is_consistent());
            }
        }
    }
}
