//! Text-encoder surrogates mapping a class vector and shared context slots to a unit embedding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, scale};

const MIN_NORM: f64 = 1e-12;

/// How context slots combine with the class vector.
///
/// `Mean` is the L2-normalized mean of the class vector and all context slots.
///
/// `Emphasis { gain }` computes `h = c + gain * sum_s (x_s . c) x_s` and returns `h / |h|`:
/// each context vector pulls the class embedding along itself in proportion to how much the
/// class already expresses it. With an empty context both modes return `c / |c|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TextEncoder {
    #[default]
    Mean,
    Emphasis {
        gain: f64,
    },
}

/// Forward result kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub y: Vec<f64>,
    h_norm: f64,
}

impl TextEncoder {
    pub fn validate(&self) -> Result<()> {
        match self {
            TextEncoder::Mean => Ok(()),
            TextEncoder::Emphasis { gain } if gain.is_finite() && *gain >= 0.0 => Ok(()),
            TextEncoder::Emphasis { gain } => {
                Err(Error::Config(format!("emphasis gain must be finite and non-negative, got {gain}")))
            }
        }
    }

    pub fn encode(&self, class_vec: &[f64], context: &[&[f64]]) -> Result<Encoded> {
        let mut h = class_vec.to_vec();
        match *self {
            TextEncoder::Mean => {
                for x in context {
                    axpy(1.0, x, &mut h);
                }
                scale(&mut h, 1.0 / (context.len() + 1) as f64);
            }
            TextEncoder::Emphasis { gain } => {
                for x in context {
                    axpy(gain * dot(x, class_vec), x, &mut h);
                }
            }
        }
        let h_norm = norm(&h);
        if h_norm.is_nan() || h_norm < MIN_NORM {
            return Err(Error::Numeric(format!("prompt aggregate has norm {h_norm}")));
        }
        scale(&mut h, 1.0 / h_norm);
        Ok(Encoded { y: h, h_norm })
    }

    /// Given `g_y = dL/dy`, calls `sink(s, dL/dx_s)` for every context slot `s`.
    pub fn backward(
        &self,
        class_vec: &[f64],
        context: &[&[f64]],
        enc: &Encoded,
        g_y: &[f64],
        mut sink: impl FnMut(usize, &[f64]),
    ) {
        // d(h/|h|)/dh is (I - y y^T) / |h|.
        let mut g_h = g_y.to_vec();
        axpy(-dot(g_y, &enc.y), &enc.y, &mut g_h);
        scale(&mut g_h, 1.0 / enc.h_norm);
        match *self {
            TextEncoder::Mean => {
                let mut g = g_h;
                scale(&mut g, 1.0 / (context.len() + 1) as f64);
                for s in 0..context.len() {
                    sink(s, &g);
                }
            }
            TextEncoder::Emphasis { gain } => {
                let mut g = vec![0.0; g_h.len()];
                for (s, x) in context.iter().enumerate() {
                    g.iter_mut().for_each(|v| *v = 0.0);
                    axpy(gain * dot(x, class_vec), &g_h, &mut g);
                    axpy(gain * dot(x, &g_h), class_vec, &mut g);
                    sink(s, &g);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_context_returns_unit_class_vector() {
        for e in [TextEncoder::Mean, TextEncoder::Emphasis { gain: 3.0 }] {
            let y = e.encode(&[3.0, 4.0], &[]).unwrap().y;
            assert!((y[0] - 0.6).abs() < 1e-15 && (y[1] - 0.8).abs() < 1e-15);
        }
    }

    #[test]
    fn emphasis_ignores_orthogonal_context() {
        let e = TextEncoder::Emphasis { gain: 5.0 };
        let y = e.encode(&[1.0, 0.0], &[&[0.0, 1.0]]).unwrap().y;
        assert_eq!(y, vec![1.0, 0.0]);
    }

    #[test]
    fn cancelling_slots_are_a_numeric_error() {
        let r = TextEncoder::Mean.encode(&[1.0, 0.0], &[&[-1.0, 0.0]]);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn serde_shape() {
        let e: TextEncoder = serde_json::from_str(r#"{"kind":"emphasis","gain":2.5}"#).unwrap();
        assert_eq!(e, TextEncoder::Emphasis { gain: 2.5 });
        let m: TextEncoder = serde_json::from_str(r#"{"kind":"mean"}"#).unwrap();
        assert_eq!(m, TextEncoder::Mean);
    }
}
