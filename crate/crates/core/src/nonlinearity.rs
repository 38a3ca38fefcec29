use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// Odd element-wise activation applied to projected signals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Nonlinearity {
    Identity,
    #[default]
    Tanh,
}

impl Nonlinearity {
    pub const ALL: [Nonlinearity; 2] = [Nonlinearity::Identity, Nonlinearity::Tanh];

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Identity => x,
            Nonlinearity::Tanh => x.tanh(),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        self.derivative_from_output(self.apply(x))
    }

    /// Derivative expressed through the cached forward value `y = g(x)`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Nonlinearity::Identity => 1.0,
            Nonlinearity::Tanh => 1.0 - y * y,
        }
    }

    /// Stable integer tag used by the checkpoint format.
    pub fn tag(self) -> u32 {
        match self {
            Nonlinearity::Identity => 0,
            Nonlinearity::Tanh => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(Nonlinearity::Identity),
            1 => Some(Nonlinearity::Tanh),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Nonlinearity::Identity => "identity",
            Nonlinearity::Tanh => "tanh",
        }
    }
}

impl fmt::Display for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Nonlinearity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "identity" | "linear" => Ok(Nonlinearity::Identity),
            "tanh" => Ok(Nonlinearity::Tanh),
            other => Err(Error::invalid(format!("unknown nonlinearity `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_nonlinearity_is_odd() {
        for g in Nonlinearity::ALL {
            for i in 0..1000 {
                let x = -8.0 + 16.0 * (i as f64) / 999.0;
                assert_eq!(g.apply(-x), -g.apply(x), "{g} not odd at {x}");
            }
        }
    }

    #[test]
    fn derivative_matches_central_differences() {
        let step = 1e-5;
        for g in Nonlinearity::ALL {
            for i in 0..1000 {
                let x = -3.0 + 6.0 * (i as f64) / 999.0;
                let fd = (g.apply(x + step) - g.apply(x - step)) / (2.0 * step);
                let exact = g.derivative(x);
                let rel = (fd - exact).abs() / exact.abs().max(1e-300);
                assert!(rel < 1e-7, "{g} at {x}: fd {fd} vs {exact} (rel {rel})");
            }
        }
    }

    #[test]
    fn tags_round_trip_and_parse() {
        for g in Nonlinearity::ALL {
            assert_eq!(Nonlinearity::from_tag(g.tag()), Some(g));
            assert_eq!(g.name().parse::<Nonlinearity>().unwrap(), g);
        }
        assert!(Nonlinearity::from_tag(7).is_none());
        assert!("relu".parse::<Nonlinearity>().is_err());
    }
}
