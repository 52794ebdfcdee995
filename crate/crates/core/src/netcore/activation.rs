use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// The five supported 1-Lipschitz activations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActivationKind {
    Relu,
    /// Negative-side slope in `(0, 1)`.
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
    /// `alpha` in `(0, 1]`; larger values break the Lipschitz bound left of zero.
    Elu(f64),
}

/// An activation function `η` together with its value at zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ActivationRepr", into = "ActivationRepr")]
pub struct Activation {
    kind: ActivationKind,
}

impl Activation {
    pub fn new(kind: ActivationKind) -> Result<Self> {
        match kind {
            ActivationKind::LeakyRelu(slope) if !(slope > 0.0 && slope < 1.0) => {
                Err(invalid(format!("leaky_relu slope {slope} not in (0, 1)")))
            }
            ActivationKind::Elu(alpha) if !(alpha > 0.0 && alpha <= 1.0) => {
                Err(invalid(format!("elu alpha {alpha} not in (0, 1]")))
            }
            _ => Ok(Self { kind }),
        }
    }

    pub fn relu() -> Self {
        Self { kind: ActivationKind::Relu }
    }

    pub fn tanh() -> Self {
        Self { kind: ActivationKind::Tanh }
    }

    pub fn sigmoid() -> Self {
        Self { kind: ActivationKind::Sigmoid }
    }

    pub fn leaky_relu(slope: f64) -> Result<Self> {
        Self::new(ActivationKind::LeakyRelu(slope))
    }

    pub fn elu(alpha: f64) -> Result<Self> {
        Self::new(ActivationKind::Elu(alpha))
    }

    pub fn kind(&self) -> ActivationKind {
        self.kind
    }

    /// `η(0)`.
    pub fn c_eta(&self) -> f64 {
        match self.kind {
            ActivationKind::Sigmoid => 0.5,
            _ => 0.0,
        }
    }

    /// ReLU and leaky ReLU are positively homogeneous; the others are not.
    pub fn is_scale_invariant(&self) -> bool {
        matches!(self.kind, ActivationKind::Relu | ActivationKind::LeakyRelu(_))
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match self.kind {
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            ActivationKind::Sigmoid => {
                // split by sign so exp never overflows
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Elu(alpha) => {
                if x > 0.0 {
                    x
                } else {
                    alpha * x.exp_m1()
                }
            }
        }
    }

    /// Derivative, with the subgradient at a kink taken as 0 for relu/elu.
    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match self.kind {
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::LeakyRelu(slope) => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            ActivationKind::Sigmoid => {
                let s = self.apply(x);
                s * (1.0 - s)
            }
            ActivationKind::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            ActivationKind::Elu(alpha) => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    alpha * x.exp()
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative at `x` given `y = η(x)`; avoids a second transcendental
    /// call on the hot path.
    #[inline]
    pub fn derivative_from_output(&self, x: f64, y: f64) -> f64 {
        match self.kind {
            ActivationKind::Sigmoid => y * (1.0 - y),
            ActivationKind::Tanh => 1.0 - y * y,
            ActivationKind::Elu(alpha) if x < 0.0 => y + alpha,
            _ => self.derivative(x),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ActivationKind::Relu => "relu",
            ActivationKind::LeakyRelu(_) => "leaky_relu",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Elu(_) => "elu",
        }
    }

    fn param(&self) -> Option<f64> {
        match self.kind {
            ActivationKind::LeakyRelu(p) | ActivationKind::Elu(p) => Some(p),
            _ => None,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    /// Parses `relu`, `tanh`, `sigmoid`, `leaky_relu:0.1`, `elu:1.0`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, param) = match s.split_once(':') {
            Some((k, p)) => {
                let p: f64 = p
                    .trim()
                    .parse()
                    .map_err(|_| invalid(format!("bad activation parameter in {s:?}")))?;
                (k.trim(), Some(p))
            }
            None => (s.trim(), None),
        };
        ActivationRepr { kind: kind.to_string(), param }.try_into()
    }
}

#[derive(Serialize, Deserialize)]
struct ActivationRepr {
    kind: String,
    #[serde(default)]
    param: Option<f64>,
}

impl TryFrom<ActivationRepr> for Activation {
    type Error = Error;

    fn try_from(r: ActivationRepr) -> Result<Self> {
        let need = |p: Option<f64>, default: f64| p.unwrap_or(default);
        let kind = match r.kind.as_str() {
            "relu" => ActivationKind::Relu,
            "leaky_relu" => ActivationKind::LeakyRelu(need(r.param, 0.01)),
            "sigmoid" => ActivationKind::Sigmoid,
            "tanh" => ActivationKind::Tanh,
            "elu" => ActivationKind::Elu(need(r.param, 1.0)),
            other => return Err(invalid(format!("unknown activation {other:?}"))),
        };
        Activation::new(kind)
    }
}

impl From<Activation> for ActivationRepr {
    fn from(a: Activation) -> Self {
        ActivationRepr { kind: a.name().to_string(), param: a.param() }
    }
}
