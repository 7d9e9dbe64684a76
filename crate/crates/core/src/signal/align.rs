use super::trace::SensorTrace;
use crate::error::{Error, Result};

pub type Mat3 = [[f64; 3]; 3];

/// Minimal-angle rotation taking the unit vector `u` onto +y (Rodrigues).
pub fn rotation_onto_y(u: [f64; 3]) -> Mat3 {
    let [x, y, z] = u;
    // axis k = u × ŷ = (−z, 0, x), sin θ = |k|, cos θ = y
    let c = y;
    if c >= 1.0 - 1e-15 {
        return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    }
    if c <= -1.0 + 1e-15 {
        // antiparallel: half turn about x
        return [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]];
    }
    let s = (x * x + z * z).sqrt();
    let (kx, kz) = (-z / s, x / s);
    let t = 1.0 - c;
    [
        [c + kx * kx * t, -kz * s, kx * kz * t],
        [kz * s, c, -kx * s],
        [kx * kz * t, kx * s, c + kz * kz * t],
    ]
}

/// Rotates the trace so its mean acceleration points along +y.
pub fn align_axes(trace: &SensorTrace) -> Result<SensorTrace> {
    if trace.channels.len() != 3 {
        return Err(Error::Shape(format!(
            "axis alignment expects 3 channels, got {}",
            trace.channels.len()
        )));
    }
    let n = trace.len() as f64;
    let mean: Vec<f64> = trace
        .channels
        .iter()
        .map(|c| c.iter().sum::<f64>() / n)
        .collect();
    let norm = (mean[0] * mean[0] + mean[1] * mean[1] + mean[2] * mean[2]).sqrt();
    if !(norm > 1e-6) {
        return Err(Error::DegenerateOrientation(norm));
    }
    let r = rotation_onto_y([mean[0] / norm, mean[1] / norm, mean[2] / norm]);
    let (cx, cy, cz) = (&trace.channels[0], &trace.channels[1], &trace.channels[2]);
    let mut out = vec![Vec::with_capacity(trace.len()); 3];
    for i in 0..trace.len() {
        let v = [cx[i], cy[i], cz[i]];
        for (row, ch) in r.iter().zip(out.iter_mut()) {
            ch.push(row[0] * v[0] + row[1] * v[1] + row[2] * v[2]);
        }
    }
    Ok(trace.with_channels(trace.sample_rate_hz, out))
}
