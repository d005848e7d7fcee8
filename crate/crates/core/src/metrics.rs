//! Soft (continuous) Dice, its loss and gradient, hard Dice after
//! thresholding, and pixel accuracy.
//!
//! Dice is reduced jointly over the whole batch: all sums run over every
//! element, batch axis included, rather than averaging per-sample scores.

use crate::error::{Error, Result};
use crate::model::UNetConfig;
use crate::tensor::{check_same_shape, Scalar, Tensor};

/// Smoothing applied to numerator and denominator.
pub const DEFAULT_DICE_EPSILON: f64 = 1.0;
pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// Probability clamp used by the cross-entropy term.
const BCE_CLAMP: f64 = 1e-7;

/// Header of the flat metric record.
pub const METRIC_HEADER: &str = "name,IS,N,MF,soft_dice,hard_dice,pixel_acc";

fn validate<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
    check_same_shape("dice", pred, target)?;
    if let Some(v) = pred
        .data()
        .iter()
        .find(|v| !(**v >= T::zero() && **v <= T::one()))
    {
        return Err(Error::invalid("dice", format!("prediction {v} outside [0, 1]")));
    }
    if let Some(v) = target
        .data()
        .iter()
        .find(|v| **v != T::zero() && **v != T::one())
    {
        return Err(Error::invalid("dice", format!("target {v} is not 0 or 1")));
    }
    Ok(())
}

/// Running sums behind a Dice score, so several batches can be reduced jointly.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DiceSums {
    pub intersection: f64,
    pub pred: f64,
    pub target: f64,
}

impl DiceSums {
    pub fn add<T: Scalar>(&mut self, pred: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
        validate(pred, target)?;
        for (&p, &t) in pred.data().iter().zip(target.data()) {
            let (p, t) = (p.as_f64(), t.as_f64());
            self.intersection += p * t;
            self.pred += p;
            self.target += t;
        }
        Ok(())
    }

    /// `(2 * I + eps) / (P + T + eps)`.
    pub fn dice(&self, epsilon: f64) -> Result<f64> {
        if epsilon < 0.0 {
            return Err(Error::invalid("dice", "epsilon must be >= 0"));
        }
        let den = self.pred + self.target + epsilon;
        if den <= 0.0 {
            return Err(Error::invalid(
                "dice",
                "empty prediction and target with zero epsilon",
            ));
        }
        Ok((2.0 * self.intersection + epsilon) / den)
    }
}

/// Soft Dice `D = (2 * sum(p * t) + eps) / (sum(p) + sum(t) + eps)`.
pub fn soft_dice<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, epsilon: f64) -> Result<f64> {
    let mut sums = DiceSums::default();
    sums.add(pred, target)?;
    sums.dice(epsilon)
}

/// `1 - soft_dice`.
pub fn dice_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, epsilon: f64) -> Result<f64> {
    Ok(1.0 - soft_dice(pred, target, epsilon)?)
}

/// Gradient of [`dice_loss`] with respect to every prediction:
/// `-(2 t_k (S + eps) - (2 I + eps)) / (S + eps)^2`, `S = sum(p) + sum(t)`.
pub fn dice_loss_grad<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    epsilon: f64,
) -> Result<Tensor<T>> {
    let mut sums = DiceSums::default();
    sums.add(pred, target)?;
    sums.dice(epsilon)?;
    let den = sums.pred + sums.target + epsilon;
    let num = 2.0 * sums.intersection + epsilon;
    let data = target
        .data()
        .iter()
        .map(|&t| T::of_f64(-(2.0 * t.as_f64() * den - num) / (den * den)))
        .collect();
    Tensor::from_shape(pred.shape().clone(), data)
}

/// Mean binary cross-entropy on probabilities, clamped away from 0 and 1.
pub fn bce_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    validate(pred, target)?;
    let n = pred.numel() as f64;
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let p = p.as_f64().clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            let t = t.as_f64();
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / n)
}

pub fn bce_loss_grad<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    validate(pred, target)?;
    let n = pred.numel() as f64;
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let p = p.as_f64().clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            let t = t.as_f64();
            T::of_f64((p - t) / (p * (1.0 - p)) / n)
        })
        .collect();
    Tensor::from_shape(pred.shape().clone(), data)
}

/// Value and gradient of a training loss.
#[derive(Debug, Clone)]
pub struct LossValue<T: Scalar> {
    pub total: f64,
    pub dice_loss: f64,
    pub grad: Tensor<T>,
}

/// `bce_weight * BCE + (1 - bce_weight) * dice_loss`.
pub fn segmentation_loss<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    epsilon: f64,
    bce_weight: f64,
) -> Result<LossValue<T>> {
    if !(0.0..=1.0).contains(&bce_weight) {
        return Err(Error::invalid("segmentation_loss", "loss mix must be in [0, 1]"));
    }
    let dl = dice_loss(pred, target, epsilon)?;
    let mut grad = dice_loss_grad(pred, target, epsilon)?;
    let mut total = dl;
    if bce_weight > 0.0 {
        let bce = bce_loss(pred, target)?;
        let bg = bce_loss_grad(pred, target)?;
        total = bce_weight * bce + (1.0 - bce_weight) * dl;
        let (wb, wd) = (T::of_f64(bce_weight), T::of_f64(1.0 - bce_weight));
        for (g, b) in grad.data_mut().iter_mut().zip(bg.data()) {
            *g = wd * *g + wb * *b;
        }
    }
    Ok(LossValue {
        total,
        dice_loss: dl,
        grad,
    })
}

/// 1 where `pred >= threshold`, else 0.
pub fn binarize<T: Scalar>(pred: &Tensor<T>, threshold: f64) -> Result<Tensor<T>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid("binarize", format!("threshold {threshold} outside (0, 1)")));
    }
    let th = T::of_f64(threshold);
    Ok(pred.map(|p| if p >= th { T::one() } else { T::zero() }))
}

/// Running agreement counts for pixel accuracy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AgreementCounts {
    pub matching: u64,
    pub total: u64,
}

impl AgreementCounts {
    pub fn add<T: Scalar>(&mut self, pred_binary: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
        check_same_shape("pixel_accuracy", pred_binary, target)?;
        self.matching += pred_binary
            .data()
            .iter()
            .zip(target.data())
            .filter(|(p, t)| p == t)
            .count() as u64;
        self.total += target.numel() as u64;
        Ok(())
    }

    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.matching as f64 / self.total as f64
        }
    }
}

/// Fraction of pixels where the binary prediction equals the target.
pub fn pixel_accuracy<T: Scalar>(pred_binary: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    let mut c = AgreementCounts::default();
    c.add(pred_binary, target)?;
    Ok(c.accuracy())
}

/// Scores of one evaluation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub soft_dice: f64,
    pub hard_dice: f64,
    pub pixel_accuracy: f64,
    pub threshold: f64,
    pub epsilon: f64,
}

impl MetricReport {
    /// One comma-separated record in [`METRIC_HEADER`] order.
    pub fn to_record(&self, config: &UNetConfig) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6},{:.6}",
            config.name(),
            config.input_size,
            config.depth,
            config.max_filters,
            self.soft_dice,
            self.hard_dice,
            self.pixel_accuracy
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(dims: Vec<usize>, on: &[usize]) -> Tensor<f64> {
        let mut t = Tensor::zeros(dims).unwrap();
        for &i in on {
            t.data_mut()[i] = 1.0;
        }
        t
    }

    #[test]
    fn identical_masks_score_one() {
        let t = mask(vec![1, 1, 4, 4], &[0, 5, 6, 9]);
        assert!((soft_dice(&t, &t, 1e-9).unwrap() - 1.0).abs() < 1e-9);
        assert!(dice_loss(&t, &t, 1.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn disjoint_masks_with_unit_epsilon() {
        let p = mask(vec![1, 1, 4, 4], &[0, 1, 2, 3]);
        let t = mask(vec![1, 1, 4, 4], &[12, 13, 14, 15]);
        assert!((soft_dice(&p, &t, 1.0).unwrap() - 1.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn partial_overlap_set_arithmetic() {
        let p = mask(vec![1, 1, 4, 4], &[0, 1]);
        let t = mask(vec![1, 1, 4, 4], &[0, 1, 2, 3]);
        assert!((soft_dice(&p, &t, 0.0).unwrap() - 4.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_inputs_rejected() {
        let p = Tensor::<f64>::full(vec![2, 2], 1.5).unwrap();
        let t = Tensor::<f64>::zeros(vec![2, 2]).unwrap();
        assert!(soft_dice(&p, &t, 1.0).is_err());
        let t3 = Tensor::<f64>::zeros(vec![4]).unwrap();
        assert!(soft_dice(&t, &t3, 1.0).is_err());
        assert!(soft_dice(&t, &t, 0.0).is_err());
        let half = Tensor::<f64>::full(vec![2, 2], 0.5).unwrap();
        assert!(soft_dice(&t, &half, 1.0).is_err());
    }

    #[test]
    fn loss_gradient_matches_central_difference() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pred = Tensor::<f64>::from_fn(vec![2, 1, 3, 3], |_| rng.gen_range(0.05..0.95)).unwrap();
        let target = Tensor::<f64>::from_fn(vec![2, 1, 3, 3], |i| (i % 3 == 0) as u8 as f64).unwrap();
        for eps in [1.0, 1e-3] {
            let g = dice_loss_grad(&pred, &target, eps).unwrap();
            for k in 0..pred.numel() {
                let h = 1e-5;
                let mut up = pred.clone();
                up.data_mut()[k] += h;
                let mut down = pred.clone();
                down.data_mut()[k] -= h;
                let fd = (dice_loss(&up, &target, eps).unwrap() - dice_loss(&down, &target, eps).unwrap())
                    / (2.0 * h);
                assert!((g.data()[k] - fd).abs() < 1e-5, "k={k}: {} vs {fd}", g.data()[k]);
            }
        }
    }

    #[test]
    fn bce_gradient_matches_central_difference() {
        let pred = Tensor::<f64>::from_fn(vec![6], |i| 0.1 + 0.13 * i as f64).unwrap();
        let target = Tensor::<f64>::from_fn(vec![6], |i| (i % 2) as f64).unwrap();
        let mixed = segmentation_loss(&pred, &target, 1.0, 0.3).unwrap();
        for k in 0..6 {
            let h = 1e-6;
            let mut up = pred.clone();
            up.data_mut()[k] += h;
            let mut down = pred.clone();
            down.data_mut()[k] -= h;
            let f = |p: &Tensor<f64>| segmentation_loss(p, &target, 1.0, 0.3).unwrap().total;
            let fd = (f(&up) - f(&down)) / (2.0 * h);
            assert!((mixed.grad.data()[k] - fd).abs() < 1e-6);
        }
        assert!(segmentation_loss(&pred, &target, 1.0, 1.5).is_err());
    }

    #[test]
    fn binarize_boundary_and_idempotence() {
        let p = Tensor::<f32>::new(vec![4], vec![0.5, 0.49, 0.0, 0.9]).unwrap();
        let b = binarize(&p, 0.5).unwrap();
        assert_eq!(b.data(), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(binarize(&b, 0.5).unwrap(), b);
        let z = Tensor::<f32>::zeros(vec![3, 3]).unwrap();
        assert_eq!(binarize(&z, 0.5).unwrap(), z);
        assert!(binarize(&p, 1.0).is_err());
    }

    #[test]
    fn accuracy_extremes() {
        let a = mask(vec![2, 2], &[0, 3]);
        let c = mask(vec![2, 2], &[1, 2]);
        assert_eq!(pixel_accuracy(&a, &a).unwrap(), 1.0);
        assert_eq!(pixel_accuracy(&a, &c).unwrap(), 0.0);
    }

    #[test]
    fn record_layout() {
        let r = MetricReport {
            soft_dice: 0.81,
            hard_dice: 0.8,
            pixel_accuracy: 0.89,
            threshold: 0.5,
            epsilon: 1.0,
        };
        let cfg = UNetConfig::parse("Unet96X2048X4").unwrap();
        assert_eq!(r.to_record(&cfg), "Unet96X2048X4,96,4,2048,0.810000,0.800000,0.890000");
    }

    fn binary_mask(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(prop::bool::ANY, n).prop_map(|v| v.into_iter().map(|b| b as u8 as f64).collect())
    }

    proptest! {
        #[test]
        fn hard_dice_is_symmetric(a in binary_mask(64), b in binary_mask(64)) {
            let ta = Tensor::new(vec![8, 8], a).unwrap();
            let tb = Tensor::new(vec![8, 8], b).unwrap();
            let d1 = soft_dice(&ta, &tb, 1.0).unwrap();
            let d2 = soft_dice(&tb, &ta, 1.0).unwrap();
            prop_assert!((d1 - d2).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&d1));
        }

        #[test]
        fn permutation_invariant(a in binary_mask(36), p in prop::collection::vec(0.0f64..=1.0, 36), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut idx: Vec<usize> = (0..36).collect();
            idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let t = Tensor::new(vec![36], a.clone()).unwrap();
            let pr = Tensor::new(vec![36], p.clone()).unwrap();
            let tp = Tensor::new(vec![36], idx.iter().map(|&i| a[i]).collect()).unwrap();
            let pp = Tensor::new(vec![36], idx.iter().map(|&i| p[i]).collect()).unwrap();
            let l1 = dice_loss(&pr, &t, 1.0).unwrap();
            let l2 = dice_loss(&pp, &tp, 1.0).unwrap();
            prop_assert!((l1 - l2).abs() < 1e-12);
        }

        #[test]
        fn monotone_in_each_prediction(
            a in binary_mask(25),
            p in prop::collection::vec(0.0f64..0.99, 25),
            k in 0usize..25,
        ) {
            let t = Tensor::new(vec![25], a.clone()).unwrap();
            let base = Tensor::new(vec![25], p.clone()).unwrap();
            let mut bumped = base.clone();
            bumped.data_mut()[k] += 0.01;
            let d0 = soft_dice(&base, &t, 1.0).unwrap();
            let d1 = soft_dice(&bumped, &t, 1.0).unwrap();
            if a[k] == 1.0 {
                prop_assert!(d1 >= d0 - 1e-15);
            } else {
                prop_assert!(d1 <= d0 + 1e-15);
            }
        }

        #[test]
        fn bounded_for_positive_epsilon(a in binary_mask(16), p in prop::collection::vec(0.0f64..=1.0, 16), eps in 1e-6f64..10.0) {
            let d = soft_dice(&Tensor::new(vec![16], p).unwrap(), &Tensor::new(vec![16], a).unwrap(), eps).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
        }
    }
}
