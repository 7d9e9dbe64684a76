use super::trace::SensorTrace;
use crate::error::{Error, Result};

/// Removes the least-squares line (over sample index) from each channel and
/// scales it to zero mean and unit population variance.
pub fn detrend_normalize(trace: &SensorTrace) -> Result<SensorTrace> {
    let channels = trace
        .channels
        .iter()
        .enumerate()
        .map(|(c, ch)| detrend_normalize_channel(ch).ok_or(Error::DegenerateChannel { channel: c }))
        .collect::<Result<Vec<_>>>()?;
    Ok(trace.with_channels(trace.sample_rate_hz, channels))
}

/// `None` when the detrended residual has (numerically) zero variance.
pub fn detrend_normalize_channel(x: &[f64]) -> Option<Vec<f64>> {
    let n = x.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let t_mean = (nf - 1.0) / 2.0;
    let x_mean = x.iter().sum::<f64>() / nf;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &v) in x.iter().enumerate() {
        let dt = i as f64 - t_mean;
        sxy += dt * (v - x_mean);
        sxx += dt * dt;
    }
    let slope = sxy / sxx;
    let mut r: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| v - x_mean - slope * (i as f64 - t_mean))
        .collect();
    let mean = r.iter().sum::<f64>() / nf;
    r.iter_mut().for_each(|v| *v -= mean);
    let var = r.iter().map(|v| v * v).sum::<f64>() / nf;
    let sd = var.sqrt();
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    if !(sd > 1e-9 * scale) {
        return None;
    }
    r.iter_mut().for_each(|v| *v /= sd);
    Some(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(x: &[f64]) -> (f64, f64) {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n)
    }

    #[test]
    fn trend_plus_noise_normalized() {
        let x: Vec<f64> = (0..400)
            .map(|i| 2.0 + 0.5 * i as f64 + ((i * 2654435761usize) % 1000) as f64 / 289.0)
            .collect();
        let y = detrend_normalize_channel(&x).unwrap();
        let (m, v) = stats(&y);
        assert!(m.abs() < 1e-9);
        assert!((v - 1.0).abs() < 1e-6);
    }

    #[test]
    fn standardized_flat_channel_unchanged() {
        // symmetric ±1 pattern: zero mean, unit variance, zero slope
        let x: Vec<f64> = [1.0, -1.0, -1.0, 1.0].repeat(25);
        let y = detrend_normalize_channel(&x).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn pure_line_is_degenerate() {
        assert!(detrend_normalize_channel(&[1.0, 2.0, 3.0, 4.0]).is_none());
        let tr = SensorTrace::new(
            "s",
            "t",
            0,
            50.0,
            vec![vec![0.0, 1.0, 0.0, 1.0], vec![1.0, 2.0, 3.0, 4.0], vec![1.0, 0.0, 0.0, 1.0]],
        )
        .unwrap();
        assert!(matches!(
            detrend_normalize(&tr),
            Err(Error::DegenerateChannel { channel: 1 })
        ));
    }
}
