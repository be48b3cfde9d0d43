//! Synthetic series generators used as stand-ins for measured data.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::series::SeriesFrame;

const BURN_IN: usize = 200;

/// Preset generators. All have a positive level near 10 so that
/// mean-normalized error metrics are well defined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    /// `x_t = 2 + 0.8·x_{t−1} + ε`, `ε ~ N(0, 1)`.
    Ar1,
    /// `x_t = 2 + 0.5·x_{t−1} + 0.3·x_{t−2} + ε`.
    Ar2,
    /// Daily cycle on hourly samples: `10 + 3·sin(2πt/24) + 0.5·ε`.
    Seasonal,
    /// `10 + 0.0005·t + 0.5·ε`.
    Trend,
    /// `10 + ε`.
    WhiteNoise,
}

impl SynthKind {
    pub const ALL: [SynthKind; 5] = [
        SynthKind::Ar1,
        SynthKind::Ar2,
        SynthKind::Seasonal,
        SynthKind::Trend,
        SynthKind::WhiteNoise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SynthKind::Ar1 => "ar1",
            SynthKind::Ar2 => "ar2",
            SynthKind::Seasonal => "seasonal",
            SynthKind::Trend => "trend",
            SynthKind::WhiteNoise => "white",
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SynthKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown generator {s:?} (expected ar1, ar2, seasonal, trend or white)"
                ))
            })
    }
}

pub fn generate(kind: SynthKind, len: usize, seed: u64) -> Result<SeriesFrame> {
    if len == 0 {
        return Err(Error::invalid("series length must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = move || -> f64 { StandardNormal.sample(&mut rng) };
    let values: Vec<f64> = match kind {
        SynthKind::Ar1 => {
            let mut x = 10.0;
            let mut out = Vec::with_capacity(len);
            for t in 0..BURN_IN + len {
                x = 2.0 + 0.8 * x + noise();
                if t >= BURN_IN {
                    out.push(x);
                }
            }
            out
        }
        SynthKind::Ar2 => {
            let (mut x1, mut x2) = (10.0, 10.0);
            let mut out = Vec::with_capacity(len);
            for t in 0..BURN_IN + len {
                let x = 2.0 + 0.5 * x1 + 0.3 * x2 + noise();
                x2 = x1;
                x1 = x;
                if t >= BURN_IN {
                    out.push(x);
                }
            }
            out
        }
        SynthKind::Seasonal => (0..len)
            .map(|t| {
                10.0 + 3.0 * (2.0 * std::f64::consts::PI * t as f64 / 24.0).sin() + 0.5 * noise()
            })
            .collect(),
        SynthKind::Trend => (0..len)
            .map(|t| 10.0 + 0.0005 * t as f64 + 0.5 * noise())
            .collect(),
        SynthKind::WhiteNoise => (0..len).map(|_| 10.0 + noise()).collect(),
    };
    SeriesFrame::new(kind.name(), values)
}

/// Text in the series file format, with the generator name as header.
pub fn to_series_text(series: &SeriesFrame) -> String {
    let mut s = String::with_capacity(series.len() * 24);
    s.push_str(series.name());
    s.push('\n');
    for v in series.values() {
        s.push_str(&format!("{v:.17e}\n"));
    }
    s
}
