//! The model zoo: four MNIST networks (A-D) and the CIFAR-10 AlexNet
//! variant, defined layer by layer.

use super::layers::{LayerSpec, Padding};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    A,
    B,
    C,
    D,
    AlexNet,
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(ModelKind::A),
            "b" => Ok(ModelKind::B),
            "c" => Ok(ModelKind::C),
            "d" => Ok(ModelKind::D),
            "alexnet" => Ok(ModelKind::AlexNet),
            other => Err(format!("unknown model `{other}`")),
        }
    }
}

impl ModelKind {
    /// Expected input shape (channels, rows, cols) excluding batch.
    pub fn input_shape(self) -> [usize; 3] {
        match self {
            ModelKind::AlexNet => [3, 32, 32],
            _ => [1, 28, 28],
        }
    }

    pub fn classes(self) -> usize {
        10
    }

    /// Layer stack. `dropout` toggles the optional dropout layer of model C;
    /// it is ignored elsewhere.
    pub fn layers(self, dropout: bool) -> Vec<LayerSpec> {
        use LayerSpec::*;
        match self {
            ModelKind::A => vec![
                Flatten,
                Dense { units: 128 },
                Relu,
                Dense { units: 128 },
                Relu,
                Dense { units: 10 },
            ],
            ModelKind::B => vec![
                Conv2d { filters: 16, kernel: 5, stride: 1, padding: Padding::Same },
                Relu,
                MaxPool { window: 2, stride: 2 },
                Conv2d { filters: 16, kernel: 5, stride: 1, padding: Padding::Same },
                Relu,
                MaxPool { window: 2, stride: 2 },
                Flatten,
                Dense { units: 100 },
                Relu,
                Dense { units: 10 },
            ],
            ModelKind::C => {
                let mut layers = vec![
                    Conv2d { filters: 20, kernel: 5, stride: 1, padding: Padding::Explicit(0) },
                    Relu,
                    MaxPool { window: 2, stride: 2 },
                    Conv2d { filters: 50, kernel: 5, stride: 1, padding: Padding::Explicit(0) },
                    Relu,
                    MaxPool { window: 2, stride: 2 },
                    Flatten,
                ];
                if dropout {
                    layers.push(Dropout { rate: 0.5 });
                }
                layers.extend([Dense { units: 100 }, Relu, Dense { units: 10 }]);
                layers
            }
            ModelKind::D => vec![
                Conv2d { filters: 5, kernel: 5, stride: 2, padding: Padding::Same },
                Relu,
                Flatten,
                Dense { units: 100 },
                Relu,
                Dense { units: 10 },
            ],
            ModelKind::AlexNet => vec![
                Conv2d { filters: 96, kernel: 11, stride: 4, padding: Padding::Explicit(9) },
                Relu,
                MaxPool { window: 3, stride: 2 },
                BatchNorm,
                Conv2d { filters: 256, kernel: 5, stride: 1, padding: Padding::Explicit(1) },
                Relu,
                BatchNorm,
                MaxPool { window: 2, stride: 1 },
                Conv2d { filters: 384, kernel: 3, stride: 1, padding: Padding::Explicit(1) },
                Relu,
                Conv2d { filters: 384, kernel: 3, stride: 1, padding: Padding::Explicit(1) },
                Relu,
                Conv2d { filters: 256, kernel: 3, stride: 1, padding: Padding::Explicit(1) },
                Relu,
                Flatten,
                Dense { units: 256 },
                Relu,
                Dense { units: 256 },
                Relu,
                Dense { units: 10 },
            ],
        }
    }

    /// Walk the stack and return every layer's output shape (batch
    /// dimension excluded), verifying consistency.
    pub fn shape_walk(self, dropout: bool) -> Result<Vec<Vec<usize>>> {
        let mut shape: Vec<usize> = self.input_shape().to_vec();
        let mut out = Vec::new();
        for spec in self.layers(dropout) {
            shape = spec.out_shape(&shape)?;
            out.push(shape.clone());
        }
        let last = out
            .last()
            .ok_or_else(|| Error::Shape("empty model".into()))?;
        if last != &vec![self.classes()] {
            return Err(Error::Shape(format!(
                "model must end with {} logits, got {last:?}",
                self.classes()
            )));
        }
        Ok(out)
    }
}
