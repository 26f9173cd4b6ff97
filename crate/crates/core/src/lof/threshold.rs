use super::LofError;

pub const MIN_CALIBRATION_SCORES: usize = 20;

/// Empirical quantile by linear interpolation between order statistics:
/// position `h = (n-1)·q`, value `s[⌊h⌋] + (h-⌊h⌋)·(s[⌊h⌋+1] - s[⌊h⌋])`.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let h = (s.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(s.len() - 1);
    Some(s[lo] + (h - lo as f64) * (s[hi] - s[lo]))
}

/// `max(1, factor · quantile_q(scores))`.
pub fn calibrate_threshold(scores: &[f64], q: f64, factor: f64) -> Result<f64, LofError> {
    if scores.len() < MIN_CALIBRATION_SCORES {
        return Err(LofError::Calibration(format!(
            "need at least {MIN_CALIBRATION_SCORES} scores, got {}",
            scores.len()
        )));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(LofError::Calibration(format!("quantile must be in (0,1), got {q}")));
    }
    if !(factor.is_finite() && factor >= 1.0) {
        return Err(LofError::Calibration(format!("factor must be >= 1, got {factor}")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(LofError::Calibration("scores must be finite".into()));
    }
    let qv = quantile(scores, q).expect("non-empty, q in range");
    Ok((factor * qv).max(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_scores() {
        assert_eq!(calibrate_threshold(&[1.0; 100], 0.99, 1.5).unwrap(), 1.5);
    }

    #[test]
    fn floor_at_one() {
        let s: Vec<f64> = (1..=100).map(|i| i as f64 / 100.0).collect();
        assert!((quantile(&s, 0.5).unwrap() - 0.505).abs() < 1e-12);
        assert_eq!(calibrate_threshold(&s, 0.5, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(calibrate_threshold(&[1.0; 19], 0.5, 1.0).is_err());
        assert!(calibrate_threshold(&[1.0; 20], 1.0, 1.0).is_err());
        assert!(calibrate_threshold(&[1.0; 20], 0.5, 0.9).is_err());
        let mut s = vec![1.0; 20];
        s[3] = f64::NAN;
        assert!(calibrate_threshold(&s, 0.5, 1.0).is_err());
    }

    #[test]
    fn quantile_endpoints() {
        let s = [3.0, 1.0, 2.0];
        assert_eq!(quantile(&s, 0.0), Some(1.0));
        assert_eq!(quantile(&s, 1.0), Some(3.0));
        assert_eq!(quantile(&s, 0.25), Some(1.5));
        assert_eq!(quantile(&[], 0.5), None);
    }
}
