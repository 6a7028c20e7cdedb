use super::FramePrediction;

/// Centred moving average over `window` samples (odd), replicating the first
/// and last value beyond the ends. Timestamps are kept.
pub fn smooth_predictions(preds: &[FramePrediction], window: usize) -> Vec<FramePrediction> {
    assert!(window % 2 == 1, "smoothing window must be odd");
    if preds.is_empty() || window == 1 {
        return preds.to_vec();
    }
    let half = (window / 2) as isize;
    let last = preds.len() as isize - 1;
    preds
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let i = i as isize;
            let sum: f64 = (i - half..=i + half).map(|j| preds[j.clamp(0, last) as usize].p_oob).sum();
            FramePrediction { time_s: p.time_s, p_oob: sum / window as f64 }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(ps: &[f64]) -> Vec<FramePrediction> {
        ps.iter().enumerate().map(|(i, &p)| FramePrediction { time_s: i as f64, p_oob: p }).collect()
    }

    fn probs(v: &[FramePrediction]) -> Vec<f64> {
        v.iter().map(|p| p.p_oob).collect()
    }

    #[test]
    fn window_one_is_identity() {
        let s = seq(&[0.3, 0.9, 0.1]);
        assert_eq!(smooth_predictions(&s, 1), s);
    }

    #[test]
    fn impulse_with_window_three() {
        let out = probs(&smooth_predictions(&seq(&[0.0, 1.0, 0.0]), 3));
        for p in out {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_in_empty_out() {
        assert!(smooth_predictions(&[], 5).is_empty());
    }

    #[test]
    #[should_panic]
    fn even_window_panics() {
        smooth_predictions(&seq(&[0.1]), 4);
    }

    proptest! {
        #[test]
        fn constants_are_fixed_points(c in 0.0f64..=1.0, n in 1usize..60, w in 0usize..6) {
            let window = 2 * w + 1;
            let out = smooth_predictions(&seq(&vec![c; n]), window);
            for p in out {
                prop_assert!((p.p_oob - c).abs() < 1e-12);
            }
        }

        #[test]
        fn output_stays_within_input_range(ps in proptest::collection::vec(0.0f64..=1.0, 1..80), w in 0usize..4) {
            let out = smooth_predictions(&seq(&ps), 2 * w + 1);
            prop_assert_eq!(out.len(), ps.len());
            let lo = ps.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = ps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for (i, p) in out.iter().enumerate() {
                prop_assert_eq!(p.time_s, i as f64);
                prop_assert!(p.p_oob >= lo - 1e-12 && p.p_oob <= hi + 1e-12);
            }
        }
    }
}
