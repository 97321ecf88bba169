//! Declarative description of the mouth-state network and analytic
//! parameter accounting.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    None,
    Relu,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        #[serde(default = "yes")]
        bias: bool,
        #[serde(default)]
        activation: Activation,
    },
    #[serde(rename = "maxpool2d")]
    MaxPool2d {
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    #[serde(rename = "adaptive_avgpool2d")]
    AdaptiveAvgPool2d {
        output_h: usize,
        output_w: usize,
    },
    Flatten,
    Linear {
        out_features: usize,
        #[serde(default = "yes")]
        bias: bool,
        #[serde(default)]
        activation: Activation,
    },
    Dropout {
        p: f64,
    },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "Conv2D",
            LayerSpec::MaxPool2d { .. } => "MaxPool2D",
            LayerSpec::AdaptiveAvgPool2d { .. } => "AdaptiveAvgPool2D",
            LayerSpec::Flatten => "Flatten",
            LayerSpec::Linear { .. } => "Linear",
            LayerSpec::Dropout { .. } => "Dropout",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_channels: usize,
    pub num_classes: usize,
    pub layers: Vec<LayerSpec>,
}

/// Optional knobs on top of the default architecture. Signed integers so
/// that a negative value is reported as a validation error rather than a
/// parse failure.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkOverrides {
    #[serde(default)]
    pub conv_channels: Option<Vec<i64>>,
    #[serde(default)]
    pub hidden_units: Option<i64>,
    #[serde(default)]
    pub dropout_p: Option<f64>,
    #[serde(default)]
    pub pool_output: Option<[i64; 2]>,
}

pub const DEFAULT_CONV_CHANNELS: [usize; 4] = [32, 64, 128, 256];
pub const DEFAULT_HIDDEN_UNITS: usize = 128;
pub const DEFAULT_DROPOUT: f64 = 0.5;

fn positive(name: &str, value: i64) -> Result<usize> {
    if value <= 0 {
        Err(Error::InvalidNetwork(format!("{name} must be positive, got {value}")))
    } else {
        Ok(value as usize)
    }
}

/// Four 3x3 conv blocks (each followed by 2x2 max pooling), adaptive average
/// pooling, and a two-layer classifier head with dropout between.
pub fn build_network(overrides: Option<&NetworkOverrides>) -> Result<NetworkSpec> {
    let default = NetworkOverrides::default();
    let o = overrides.unwrap_or(&default);

    let channels = match &o.conv_channels {
        Some(list) if list.is_empty() => return Err(Error::InvalidNetwork("conv_channels must not be empty".into())),
        Some(list) => list.iter().map(|&c| positive("conv channel count", c)).collect::<Result<Vec<_>>>()?,
        None => DEFAULT_CONV_CHANNELS.to_vec(),
    };
    let hidden = match o.hidden_units {
        Some(h) => positive("hidden_units", h)?,
        None => DEFAULT_HIDDEN_UNITS,
    };
    let (pool_h, pool_w) = match o.pool_output {
        Some([h, w]) => (positive("pool_output height", h)?, positive("pool_output width", w)?),
        None => (1, 1),
    };
    let dropout = o.dropout_p.unwrap_or(DEFAULT_DROPOUT);

    let mut layers = Vec::new();
    for &out_channels in &channels {
        layers.push(LayerSpec::Conv2d {
            out_channels,
            kernel: 3,
            stride: 1,
            padding: 1,
            bias: true,
            activation: Activation::Relu,
        });
        layers.push(LayerSpec::MaxPool2d { kernel: 2, stride: 2, padding: 0 });
    }
    layers.push(LayerSpec::AdaptiveAvgPool2d { output_h: pool_h, output_w: pool_w });
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::Linear { out_features: hidden, bias: true, activation: Activation::Relu });
    layers.push(LayerSpec::Dropout { p: dropout });
    layers.push(LayerSpec::Linear { out_features: 2, bias: true, activation: Activation::None });

    let spec = NetworkSpec { input_channels: 3, num_classes: 2, layers };
    spec.validate()?;
    Ok(spec)
}

/// Shape of the activation flowing between layers during validation.
#[derive(Debug, Clone, Copy)]
enum Flow {
    /// Feature map with `channels` and spatial size that is unknown until
    /// adaptive pooling pins it.
    Map {
        channels: usize,
        spatial: Option<(usize, usize)>,
    },
    Vector(usize),
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        self.walk(|_, _, _| {}).map(|_| ())
    }

    /// Visit every layer with its inferred input width (channels or features)
    /// and its analytic parameter count.
    fn walk(&self, mut visit: impl FnMut(usize, &LayerSpec, Option<usize>)) -> Result<()> {
        let bad = |i: usize, msg: String| Err(Error::InvalidNetwork(format!("layer {i}: {msg}")));
        if self.input_channels == 0 {
            return Err(Error::InvalidNetwork("input_channels must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidNetwork("num_classes must be at least 2".into()));
        }
        let mut flow = Flow::Map { channels: self.input_channels, spatial: None };
        for (i, layer) in self.layers.iter().enumerate() {
            let params = match (layer, flow) {
                (LayerSpec::Conv2d { out_channels, kernel, stride, bias, .. }, Flow::Map { channels, .. }) => {
                    if *out_channels == 0 || *kernel == 0 || *stride == 0 {
                        return bad(i, "conv channels, kernel and stride must be positive".into());
                    }
                    flow = Flow::Map { channels: *out_channels, spatial: None };
                    Some(out_channels * channels * kernel * kernel + if *bias { *out_channels } else { 0 })
                }
                (LayerSpec::MaxPool2d { kernel, stride, padding }, Flow::Map { channels, .. }) => {
                    if *kernel == 0 || *stride == 0 {
                        return bad(i, "pool kernel and stride must be positive".into());
                    }
                    if *padding * 2 > *kernel {
                        return bad(i, "pool padding must be at most half the kernel".into());
                    }
                    flow = Flow::Map { channels, spatial: None };
                    None
                }
                (LayerSpec::AdaptiveAvgPool2d { output_h, output_w }, Flow::Map { channels, .. }) => {
                    if *output_h == 0 || *output_w == 0 {
                        return bad(i, "adaptive pool output must be positive".into());
                    }
                    flow = Flow::Map { channels, spatial: Some((*output_h, *output_w)) };
                    None
                }
                (LayerSpec::Flatten, Flow::Map { channels, spatial }) => {
                    let Some((h, w)) = spatial else {
                        return bad(i, "flatten needs a fixed spatial size; add adaptive pooling first".into());
                    };
                    flow = Flow::Vector(channels * h * w);
                    None
                }
                (LayerSpec::Linear { out_features, bias, .. }, Flow::Vector(n)) => {
                    if *out_features == 0 {
                        return bad(i, "linear out_features must be positive".into());
                    }
                    flow = Flow::Vector(*out_features);
                    Some(out_features * n + if *bias { *out_features } else { 0 })
                }
                (LayerSpec::Dropout { p }, _) => {
                    if !(0.0..1.0).contains(p) {
                        return bad(i, format!("dropout p must be in [0, 1), got {p}"));
                    }
                    None
                }
                (layer, Flow::Vector(_)) => {
                    return bad(i, format!("{} cannot follow a flattened vector", layer.kind()))
                }
                (LayerSpec::Linear { .. }, Flow::Map { .. }) => {
                    return bad(i, "linear layer needs a flattened input".into())
                }
            };
            visit(i, layer, params);
        }
        match flow {
            Flow::Vector(n) if n == self.num_classes => Ok(()),
            Flow::Vector(n) => {
                Err(Error::InvalidNetwork(format!("network emits {n} outputs but num_classes is {}", self.num_classes)))
            }
            Flow::Map { .. } => Err(Error::InvalidNetwork("network must end in a linear layer".into())),
        }
    }

    /// Spatial size after every layer for a concrete input, or an error when
    /// some layer would produce an empty map.
    pub fn trace_shapes(&self, input_hw: (usize, usize)) -> Result<Vec<(usize, usize, usize)>> {
        self.validate()?;
        if input_hw.0 == 0 || input_hw.1 == 0 {
            return Err(Error::InvalidInput("input must have positive size".into()));
        }
        let (mut c, mut h, mut w) = (self.input_channels, input_hw.0, input_hw.1);
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Conv2d { out_channels, kernel, stride, padding, .. } => {
                    h = conv_out(h, kernel, stride, padding);
                    w = conv_out(w, kernel, stride, padding);
                    c = out_channels;
                }
                LayerSpec::MaxPool2d { kernel, stride, padding } => {
                    h = conv_out(h, kernel, stride, padding);
                    w = conv_out(w, kernel, stride, padding);
                }
                LayerSpec::AdaptiveAvgPool2d { output_h, output_w } => {
                    h = output_h;
                    w = output_w;
                }
                LayerSpec::Flatten => {
                    c *= h * w;
                    h = 1;
                    w = 1;
                }
                LayerSpec::Linear { out_features, .. } => c = out_features,
                LayerSpec::Dropout { .. } => {}
            }
            if h == 0 || w == 0 {
                return Err(Error::InvalidInput(format!(
                    "input {}x{} collapses to an empty map at layer {i} ({})",
                    input_hw.0,
                    input_hw.1,
                    layer.kind()
                )));
            }
            out.push((c, h, w));
        }
        Ok(out)
    }
}

pub(crate) fn conv_out(size: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    let padded = size + 2 * padding;
    if padded < kernel {
        0
    } else {
        (padded - kernel) / stride + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub index: usize,
    pub kind: String,
    pub kernel: Option<usize>,
    pub stride: Option<usize>,
    pub padding: Option<usize>,
    /// `None` for layers without trainable parameters.
    pub params: Option<usize>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterReport {
    pub layers: Vec<LayerParams>,
    pub total: usize,
}

impl ParameterReport {
    /// Counts of the layers that carry parameters, in order.
    pub fn trainable_counts(&self) -> Vec<usize> {
        self.layers.iter().filter_map(|l| l.params).collect()
    }

    pub fn render_table(&self) -> String {
        let dash = "N/A";
        let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_else(|| dash.into());
        let mut out = String::new();
        let _ = writeln!(out, "{:<22} {:>7} {:>7} {:>8} {:>10}", "Layer Type", "Kernel", "Stride", "Padding", "Params");
        let _ = writeln!(out, "{}", "-".repeat(58));
        for l in &self.layers {
            let name = match &l.note {
                Some(note) => format!("{} ({note})", l.kind),
                None => l.kind.clone(),
            };
            let kernel = l.kernel.map(|k| format!("{k}x{k}")).unwrap_or_else(|| dash.into());
            let _ = writeln!(
                out,
                "{:<22} {:>7} {:>7} {:>8} {:>10}",
                name,
                kernel,
                opt(l.stride),
                opt(l.padding),
                opt(l.params)
            );
        }
        let _ = writeln!(out, "{}", "-".repeat(58));
        let _ = writeln!(out, "{:<22} {:>7} {:>7} {:>8} {:>10}", "", "", "", "Total", self.total);
        out
    }
}

/// Trainable parameter count per layer, derived from hyperparameters alone.
pub fn count_parameters(spec: &NetworkSpec) -> Result<ParameterReport> {
    let mut layers = Vec::with_capacity(spec.layers.len());
    spec.walk(|index, layer, params| {
        let (kernel, stride, padding, note) = match layer {
            LayerSpec::Conv2d { kernel, stride, padding, .. } | LayerSpec::MaxPool2d { kernel, stride, padding } => {
                (Some(*kernel), Some(*stride), Some(*padding), None)
            }
            LayerSpec::Dropout { p } => (None, None, None, Some(format!("p={p}"))),
            LayerSpec::AdaptiveAvgPool2d { output_h, output_w } => {
                (None, None, None, Some(format!("{output_h}x{output_w}")))
            }
            _ => (None, None, None, None),
        };
        layers.push(LayerParams { index, kind: layer.kind().to_string(), kernel, stride, padding, params, note });
    })?;
    let total = layers.iter().filter_map(|l| l.params).sum();
    Ok(ParameterReport { layers, total })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_matches_reference_table() {
        let spec = build_network(None).unwrap();
        let report = count_parameters(&spec).unwrap();
        assert_eq!(report.trainable_counts(), vec![896, 18496, 73856, 295168, 32896, 258]);
        assert_eq!(report.total, 421_570);
        assert_eq!(spec.layers.len(), 13);
    }

    #[test]
    fn first_conv_filter_count_follows_from_params() {
        // 896 = f * (3*3*3 + 1)
        assert_eq!(896 % 28, 0);
        let spec = build_network(None).unwrap();
        assert!(matches!(spec.layers[0], LayerSpec::Conv2d { out_channels: 32, .. }));
    }

    #[test]
    fn head_input_implies_unit_pool() {
        // 32896 = 128 * (in + 1) -> in = 256 = last conv channels * 1 * 1
        assert_eq!(32896 / 128 - 1, 256);
        let spec = build_network(None).unwrap();
        assert!(spec.layers.contains(&LayerSpec::AdaptiveAvgPool2d { output_h: 1, output_w: 1 }));
    }

    #[test]
    fn single_linear_counts_weight_and_bias() {
        let spec = NetworkSpec {
            input_channels: 1,
            num_classes: 2,
            layers: vec![
                LayerSpec::AdaptiveAvgPool2d { output_h: 1, output_w: 1 },
                LayerSpec::Flatten,
                LayerSpec::Linear { out_features: 1, bias: true, activation: Activation::None },
                LayerSpec::Linear { out_features: 2, bias: true, activation: Activation::None },
            ],
        };
        let report = count_parameters(&spec).unwrap();
        assert_eq!(report.trainable_counts(), vec![2, 4]);
    }

    #[test]
    fn non_positive_overrides_rejected() {
        for overrides in [
            NetworkOverrides { conv_channels: Some(vec![32, 0]), ..Default::default() },
            NetworkOverrides { conv_channels: Some(vec![-4]), ..Default::default() },
            NetworkOverrides { hidden_units: Some(0), ..Default::default() },
            NetworkOverrides { pool_output: Some([1, -1]), ..Default::default() },
            NetworkOverrides { dropout_p: Some(1.0), ..Default::default() },
        ] {
            assert!(matches!(build_network(Some(&overrides)), Err(Error::InvalidNetwork(_))), "{overrides:?}");
        }
    }

    #[test]
    fn flatten_without_adaptive_pool_rejected() {
        let spec = NetworkSpec {
            input_channels: 3,
            num_classes: 2,
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Linear { out_features: 2, bias: true, activation: Activation::None },
            ],
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn shapes_for_default_input() {
        let spec = build_network(None).unwrap();
        let shapes = spec.trace_shapes((64, 64)).unwrap();
        assert_eq!(shapes[7], (256, 4, 4));
        assert_eq!(shapes[8], (256, 1, 1));
        assert_eq!(*shapes.last().unwrap(), (2, 1, 1));
        assert!(spec.trace_shapes((8, 8)).is_err());
    }

    #[test]
    fn spec_json_round_trip_uses_layer_kinds() {
        let spec = build_network(None).unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"kind\":\"maxpool2d\""));
        assert!(json.contains("\"kind\":\"adaptive_avgpool2d\""));
        let back: NetworkSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }
}
