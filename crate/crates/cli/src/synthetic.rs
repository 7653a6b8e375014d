//! Deterministic synthetic test content: a textured scene translating over
//! time, with enough structure that coding, matching, and training have
//! signal to work with.

use crossres_video::{Frame, Plane, Sequence};

/// `count` frames of `width x height` video. The pattern mixes two
/// sinusoidal gratings and a ramp, translating by one pel per frame.
pub fn synthetic_sequence(width: usize, height: usize, count: usize, seed: u64) -> Sequence {
    let phase = (seed % 64) as f64;
    let frames = (0..count)
        .map(|t| {
            let shift = t as f64;
            let y = Plane {
                width,
                height,
                data: (0..width * height)
                    .map(|i| {
                        let x = (i % width) as f64 + shift + phase;
                        let yy = (i / width) as f64 + 0.5 * shift;
                        let v = 120.0
                            + 46.0 * (2.0 * std::f64::consts::PI * x / 13.0).sin()
                            + 34.0 * (2.0 * std::f64::consts::PI * yy / 9.0).cos()
                            + 20.0 * ((x + 2.0 * yy) / (width + height) as f64);
                        v.round().clamp(0.0, 255.0) as u8
                    })
                    .collect(),
            };
            let (cw, ch) = (width / 2, height / 2);
            let chroma = |offset: f64| Plane {
                width: cw,
                height: ch,
                data: (0..cw * ch)
                    .map(|i| {
                        let x = (i % cw) as f64 + shift / 2.0;
                        let v = 128.0 + offset * (2.0 * std::f64::consts::PI * x / 11.0).sin();
                        v.round().clamp(0.0, 255.0) as u8
                    })
                    .collect(),
            };
            Frame::new(y, chroma(14.0), chroma(-10.0)).unwrap()
        })
        .collect();
    Sequence { frames, fps: 30.0, orig_width: width, orig_height: height }
}
