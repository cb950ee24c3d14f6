use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Linear {
        #[serde(rename = "in")]
        input: usize,
        out: usize,
    },
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
    },
    Relu,
    MaxPool {
        window: usize,
    },
    Flatten,
    Dropout {
        p: f64,
    },
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Linear { .. } | LayerSpec::Conv2d { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TensorRole {
    Weight,
    Bias,
}

/// Location of one learnable tensor inside the flat weight vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorInfo {
    pub layer: usize,
    pub role: TensorRole,
    pub offset: usize,
    pub len: usize,
    /// Fan-in of the owning layer.
    pub n_in: usize,
}

impl TensorInfo {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// `[dims]` for vectors or `[channels, height, width]` for images.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
}

impl NetworkSpec {
    /// Fully connected ReLU network; `dropout` inserts a dropout layer after
    /// every hidden activation.
    pub fn mlp(input: usize, hidden: &[usize], classes: usize, dropout: Option<f64>) -> Self {
        let mut layers = Vec::new();
        let mut prev = input;
        for &h in hidden {
            layers.push(LayerSpec::Linear {
                input: prev,
                out: h,
            });
            layers.push(LayerSpec::Relu);
            if let Some(p) = dropout {
                layers.push(LayerSpec::Dropout { p });
            }
            prev = h;
        }
        layers.push(LayerSpec::Linear {
            input: prev,
            out: classes,
        });
        Self {
            input_shape: vec![input],
            layers,
            num_classes: classes,
        }
    }

    /// 784-600-600-10 network over 1x28x28 images.
    pub fn mnist_fcn(dropout: Option<f64>) -> Self {
        let mut spec = Self::mlp(784, &[600, 600], 10, dropout);
        spec.input_shape = vec![1, 28, 28];
        spec.layers.insert(0, LayerSpec::Flatten);
        spec
    }

    /// Two convolutions followed by two fully connected layers.
    pub fn mnist_cnn(dropout: Option<f64>) -> Self {
        let mut layers = vec![
            LayerSpec::Conv2d {
                in_ch: 1,
                out_ch: 32,
                kernel: 3,
                stride: 1,
            },
            LayerSpec::Relu,
            LayerSpec::Conv2d {
                in_ch: 32,
                out_ch: 64,
                kernel: 3,
                stride: 1,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool { window: 2 },
        ];
        if let Some(p) = dropout {
            layers.push(LayerSpec::Dropout { p });
        }
        layers.extend([
            LayerSpec::Flatten,
            LayerSpec::Linear {
                input: 12 * 12 * 64,
                out: 128,
            },
            LayerSpec::Relu,
        ]);
        if let Some(p) = dropout {
            layers.push(LayerSpec::Dropout { p });
        }
        layers.push(LayerSpec::Linear {
            input: 128,
            out: 10,
        });
        Self {
            input_shape: vec![1, 28, 28],
            layers,
            num_classes: 10,
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Shape after each layer, starting with the input shape.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::Shape(
                "input shape must be nonempty and positive".into(),
            ));
        }
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let cur = shapes.last().unwrap();
            let bad = |msg: String| Error::Shape(format!("layer {i} ({layer:?}): {msg}"));
            let next = match *layer {
                LayerSpec::Linear { input, out } => {
                    if cur.len() != 1 || cur[0] != input {
                        return Err(bad(format!("expects [{input}], got {cur:?}")));
                    }
                    if out == 0 {
                        return Err(bad("zero outputs".into()));
                    }
                    vec![out]
                }
                LayerSpec::Conv2d {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                } => {
                    if kernel == 0 || stride == 0 || out_ch == 0 {
                        return Err(bad("kernel, stride and out_ch must be positive".into()));
                    }
                    if cur.len() != 3 || cur[0] != in_ch {
                        return Err(bad(format!("expects [{in_ch}, h, w], got {cur:?}")));
                    }
                    if cur[1] < kernel || cur[2] < kernel {
                        return Err(bad(format!("kernel {kernel} larger than input {cur:?}")));
                    }
                    vec![
                        out_ch,
                        (cur[1] - kernel) / stride + 1,
                        (cur[2] - kernel) / stride + 1,
                    ]
                }
                LayerSpec::MaxPool { window } => {
                    if window == 0 {
                        return Err(bad("window must be positive".into()));
                    }
                    if cur.len() != 3 || cur[1] < window || cur[2] < window {
                        return Err(bad(format!(
                            "needs an image at least {window} wide, got {cur:?}"
                        )));
                    }
                    vec![cur[0], cur[1] / window, cur[2] / window]
                }
                LayerSpec::Flatten => vec![cur.iter().product()],
                LayerSpec::Relu => cur.clone(),
                LayerSpec::Dropout { p } => {
                    if !(0.0..1.0).contains(&p) {
                        return Err(bad(format!("dropout rate {p} outside [0,1)")));
                    }
                    cur.clone()
                }
            };
            shapes.push(next);
        }
        let out = shapes.last().unwrap();
        if out.len() != 1 || out[0] != self.num_classes {
            return Err(Error::Shape(format!(
                "network output {out:?} does not match {} classes",
                self.num_classes
            )));
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Shape("need at least two classes".into()));
        }
        self.shapes().map(|_| ())
    }

    /// Learnable tensors in layer order, weight before bias.
    pub fn tensors(&self) -> Vec<TensorInfo> {
        let mut out = Vec::new();
        let mut offset = 0;
        for (layer, spec) in self.layers.iter().enumerate() {
            let (w, b, n_in) = match *spec {
                LayerSpec::Linear { input, out } => (input * out, out, input),
                LayerSpec::Conv2d {
                    in_ch,
                    out_ch,
                    kernel,
                    ..
                } => {
                    let fan = in_ch * kernel * kernel;
                    (fan * out_ch, out_ch, fan)
                }
                _ => continue,
            };
            out.push(TensorInfo {
                layer,
                role: TensorRole::Weight,
                offset,
                len: w,
                n_in,
            });
            offset += w;
            out.push(TensorInfo {
                layer,
                role: TensorRole::Bias,
                offset,
                len: b,
                n_in,
            });
            offset += b;
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len).sum()
    }

    pub fn has_dropout(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, LayerSpec::Dropout { .. }))
    }

    /// Copy with every dropout layer set to rate `p`.
    pub fn with_dropout_rate(&self, p: f64) -> Self {
        let mut spec = self.clone();
        for l in &mut spec.layers {
            if let LayerSpec::Dropout { p: rate } = l {
                *rate = p;
            }
        }
        spec
    }
}
