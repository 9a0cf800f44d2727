use crate::ecas::MIN_THROUGHPUT_KBPS;
use crate::model::RadioTrace;

/// Harmonic mean; zero as soon as one sample is zero, `None` when empty.
pub fn harmonic_mean(samples: &[f64]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    if samples.iter().any(|&s| s <= 0.0) {
        return Some(0.0);
    }
    Some(samples.len() as f64 / samples.iter().map(|s| 1.0 / s).sum::<f64>())
}

/// Edge estimate of the throughput a client would get for its next segment.
///
/// Harmonic mean of the radio samples of the last `window_s` elapsed seconds
/// (the current one included, none before the session start), capped at an
/// equal share of the backhaul among `active_downloaders`, floored at
/// [`MIN_THROUGHPUT_KBPS`].
pub fn estimate_throughput(
    trace: &RadioTrace,
    elapsed_s: f64,
    window_s: usize,
    backhaul_kbps: f64,
    active_downloaders: usize,
) -> f64 {
    let current = elapsed_s.max(0.0).floor() as u64;
    let first = current.saturating_sub(window_s.max(1) as u64 - 1);
    let samples: Vec<f64> = (first..=current).map(|s| trace.sample_wrapped(s)).collect();
    let radio = harmonic_mean(&samples).unwrap_or(0.0);
    let share = backhaul_kbps / active_downloaders.max(1) as f64;
    radio.min(share).max(MIN_THROUGHPUT_KBPS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TraceCategory;
    use approx::assert_abs_diff_eq;

    fn trace(samples: &[f64]) -> RadioTrace {
        RadioTrace::new("t", TraceCategory::Static, samples.to_vec()).unwrap()
    }

    #[test]
    fn constant_trace() {
        let t = trace(&[4000.0; 10]);
        assert_eq!(estimate_throughput(&t, 6.3, 5, 1e9, 1), 4000.0);
    }

    #[test]
    fn harmonic_mean_of_two_samples() {
        let t = trace(&[2000.0, 4000.0, 9000.0]);
        assert_abs_diff_eq!(
            estimate_throughput(&t, 1.5, 2, 1e9, 1),
            2.0 / (1.0 / 2000.0 + 1.0 / 4000.0),
            epsilon = 1e-9
        );
    }

    #[test]
    fn backhaul_share_caps_radio() {
        let t = trace(&[10_000.0; 5]);
        assert_eq!(estimate_throughput(&t, 0.0, 3, 6000.0, 2), 3000.0);
    }

    #[test]
    fn zero_radio_is_floored() {
        let t = trace(&[0.0; 5]);
        assert_eq!(estimate_throughput(&t, 3.0, 3, 6000.0, 1), MIN_THROUGHPUT_KBPS);
        assert_eq!(harmonic_mean(&[100.0, 0.0]), Some(0.0));
        assert_eq!(harmonic_mean(&[]), None);
    }

    #[test]
    fn window_wraps_with_the_trace() {
        let t = trace(&[1000.0, 1000.0, 8000.0]);
        // elapsed second 4 reads sample 1
        assert_eq!(estimate_throughput(&t, 4.2, 1, 1e9, 1), 1000.0);
        assert_eq!(estimate_throughput(&t, 5.0, 1, 1e9, 1), 8000.0);
    }
}
