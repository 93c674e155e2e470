//! The IPT detector (FCN or CNN), the onset detector, their losses and the
//! training loop.

mod train;

use serde::{Deserialize, Serialize};

use crate::dsp::Spectrogram;
use crate::nn::{Checkpoint, LayerSpec, LossFn, Network, Node, Tensor};
use crate::{Error, Result, N_IPT};

pub use train::{mean_loss, train, EpochLog, TrainConfig, TrainExample, TrainReport};

/// Mel bins every detector expects.
pub const N_MELS: usize = 128;

/// Layer plan of the onset detector, also used by the CNN IPT variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnTopology {
    /// `[freq, time]` kernel shapes of the parallel first layer.
    pub first_layer_shapes: Vec<[usize; 2]>,
    /// When off, every first-layer branch uses 3x3 kernels.
    pub multi_shape: bool,
    /// Output channels of each first-layer branch.
    pub first_layer_channels: usize,
    /// Widths of the two following 3x3 convolutions.
    pub conv_channels: [usize; 2],
    pub hidden_fc: usize,
    pub dropout: f64,
}

impl Default for CnnTopology {
    fn default() -> Self {
        Self {
            first_layer_shapes: vec![[3, 3], [3, 21], [21, 3]],
            multi_shape: true,
            first_layer_channels: 8,
            conv_channels: [16, 32],
            hidden_fc: 64,
            dropout: 0.0,
        }
    }
}

impl CnnTopology {
    fn validate(&self) -> Result<()> {
        if self.first_layer_shapes.is_empty() {
            return Err(Error::InvalidArgument("first layer needs at least one kernel shape".into()));
        }
        if let Some(s) = self.first_layer_shapes.iter().find(|s| s[0] % 2 == 0 || s[1] % 2 == 0) {
            return Err(Error::InvalidArgument(format!("kernel shape {s:?} must be odd")));
        }
        if self.first_layer_channels == 0 || self.conv_channels.contains(&0) || self.hidden_fc == 0 {
            return Err(Error::InvalidArgument("channel widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    fn kernels(&self) -> Vec<[usize; 2]> {
        if self.multi_shape {
            self.first_layer_shapes.clone()
        } else {
            vec![[3, 3]; self.first_layer_shapes.len()]
        }
    }

    /// Two modules ({parallel layer, conv} + pool, {conv} + pool), then a
    /// per-frame two-layer head with `outputs` units.
    fn nodes(&self, outputs: usize, head: LayerSpec) -> Vec<Node> {
        let mut g = Graph::default();
        let branches: Vec<usize> = self
            .kernels()
            .into_iter()
            .map(|kernel| {
                g.push(
                    LayerSpec::Conv2d {
                        in_channels: 1,
                        out_channels: self.first_layer_channels,
                        kernel,
                    },
                    &[0],
                )
            })
            .collect();
        let mut x = if branches.len() > 1 {
            g.push(LayerSpec::Concat, &branches)
        } else {
            branches[0]
        };
        x = g.push(LayerSpec::Relu, &[x]);
        let mut c = self.first_layer_channels * branches.len();
        for &width in &self.conv_channels {
            x = g.conv_relu(c, width, [3, 3], x);
            c = width;
            x = g.push(LayerSpec::MaxpoolFreq, &[x]);
            if self.dropout > 0.0 {
                x = g.push(LayerSpec::Dropout { p: self.dropout }, &[x]);
            }
        }
        x = g.push(
            LayerSpec::Linear {
                in_features: c * N_MELS / 4,
                out_features: self.hidden_fc,
            },
            &[x],
        );
        x = g.push(LayerSpec::Relu, &[x]);
        x = g.push(
            LayerSpec::Linear {
                in_features: self.hidden_fc,
                out_features: outputs,
            },
            &[x],
        );
        g.push(head, &[x]);
        g.nodes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IptArchitecture {
    /// Five-module convolutional encoder and deconvolution decoder.
    Fcn,
    /// The onset detector's layer plan with a softmax head.
    Cnn(CnnTopology),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IptDetectorConfig {
    pub encoder_channels: [usize; 5],
    pub n_ipt: usize,
    pub dropout: f64,
    pub skip_connection: bool,
    pub architecture: IptArchitecture,
}

impl Default for IptDetectorConfig {
    fn default() -> Self {
        Self {
            encoder_channels: [8, 16, 32, 64, 128],
            n_ipt: N_IPT,
            dropout: 0.25,
            skip_connection: true,
            architecture: IptArchitecture::Fcn,
        }
    }
}

impl IptDetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_ipt != N_IPT {
            return Err(Error::InvalidArgument(format!(
                "n_ipt must be {N_IPT}, got {}",
                self.n_ipt
            )));
        }
        if self.encoder_channels.contains(&0) {
            return Err(Error::InvalidArgument("encoder widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if let IptArchitecture::Cnn(t) = &self.architecture {
            t.validate()?;
        }
        Ok(())
    }

    pub fn nodes(&self) -> Vec<Node> {
        match &self.architecture {
            IptArchitecture::Cnn(t) => t.nodes(self.n_ipt, LayerSpec::Softmax),
            IptArchitecture::Fcn => self.fcn_nodes(),
        }
    }

    fn fcn_nodes(&self) -> Vec<Node> {
        let ch = self.encoder_channels;
        let mut g = Graph::default();
        let mut x = 0;
        let mut c = 1;
        let mut skip = 0;
        for (m, &width) in ch.iter().enumerate() {
            x = g.conv_relu(c, width, [3, 3], x);
            x = g.conv_relu(width, width, [3, 3], x);
            c = width;
            x = g.push(LayerSpec::MaxpoolFreq, &[x]);
            if self.dropout > 0.0 {
                x = g.push(LayerSpec::Dropout { p: self.dropout }, &[x]);
            }
            if m == 3 {
                skip = x;
            }
        }
        x = g.push(
            LayerSpec::Deconv2d {
                in_channels: ch[4],
                out_channels: ch[3],
            },
            &[x],
        );
        x = g.push(LayerSpec::Relu, &[x]);
        if self.skip_connection {
            x = g.push(LayerSpec::Add, &[x, skip]);
        }
        x = g.push(
            LayerSpec::Deconv2d {
                in_channels: ch[3],
                out_channels: ch[2],
            },
            &[x],
        );
        x = g.push(LayerSpec::Relu, &[x]);
        x = g.push(
            LayerSpec::Conv2d {
                in_channels: ch[2],
                out_channels: self.n_ipt,
                kernel: [1, 1],
            },
            &[x],
        );
        x = g.push(LayerSpec::FreqMean, &[x]);
        g.push(LayerSpec::Softmax, &[x]);
        g.nodes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OnsetDetectorConfig {
    #[serde(flatten)]
    pub topology: CnnTopology,
    /// Positive-class weight of the weighted BCE.
    pub beta: f64,
}

impl Default for OnsetDetectorConfig {
    fn default() -> Self {
        Self {
            topology: CnnTopology::default(),
            beta: 1.94,
        }
    }
}

impl OnsetDetectorConfig {
    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        LossFn::wbce(self.beta).map(|_| ())
    }

    pub fn nodes(&self) -> Vec<Node> {
        self.topology.nodes(1, LayerSpec::Sigmoid)
    }
}

#[derive(Default)]
struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    /// Appends a node and returns the id of the value it produces.
    fn push(&mut self, layer: LayerSpec, inputs: &[usize]) -> usize {
        self.nodes.push(Node {
            layer,
            inputs: inputs.to_vec(),
        });
        self.nodes.len()
    }

    fn conv_relu(&mut self, c_in: usize, c_out: usize, kernel: [usize; 2], x: usize) -> usize {
        let x = self.push(
            LayerSpec::Conv2d {
                in_channels: c_in,
                out_channels: c_out,
                kernel,
            },
            &[x],
        );
        self.push(LayerSpec::Relu, &[x])
    }
}

/// Which detector a network implements, with its settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "detector", rename_all = "snake_case")]
pub enum ModelConfig {
    Ipt(IptDetectorConfig),
    Onset(OnsetDetectorConfig),
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Ipt(c) => c.validate(),
            ModelConfig::Onset(c) => c.validate(),
        }
    }

    pub fn nodes(&self) -> Vec<Node> {
        match self {
            ModelConfig::Ipt(c) => c.nodes(),
            ModelConfig::Onset(c) => c.nodes(),
        }
    }

    pub fn loss(&self) -> LossFn {
        match self {
            ModelConfig::Ipt(_) => LossFn::CrossEntropy,
            ModelConfig::Onset(c) => LossFn::Wbce { beta: c.beta },
        }
    }

    pub fn outputs(&self) -> usize {
        match self {
            ModelConfig::Ipt(c) => c.n_ipt,
            ModelConfig::Onset(_) => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelConfig::Ipt(_) => "ipt",
            ModelConfig::Onset(_) => "onset",
        }
    }
}

/// Affine map applied to log-mel values before the network: `(x - mean) / std`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub mean: f64,
    pub std: f64,
}

impl Default for InputNorm {
    fn default() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }
}

impl InputNorm {
    /// Global mean and standard deviation over every value of `specs`.
    pub fn fit<'a>(specs: impl IntoIterator<Item = &'a Spectrogram>) -> Result<Self> {
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        for s in specs {
            for &v in &s.values {
                n += 1;
                sum += v;
                sq += v * v;
            }
        }
        if n == 0 {
            return Err(Error::EmptyCorpus);
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        Ok(Self {
            mean,
            std: if var > 1e-12 { var.sqrt() } else { 1.0 },
        })
    }
}

/// A detector network with its configuration and input normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub config: ModelConfig,
    pub norm: InputNorm,
    pub network: Network<f32>,
}

#[derive(Serialize, Deserialize)]
struct DetectorMeta {
    model: ModelConfig,
    norm: InputNorm,
    #[serde(default)]
    extra: serde_json::Value,
}

impl Detector {
    pub fn new(config: ModelConfig, norm: InputNorm, seed: u64) -> Result<Self> {
        config.validate()?;
        let network = Network::new(config.nodes(), seed)?;
        Ok(Self {
            config,
            norm,
            network,
        })
    }

    /// `[1, 128, T]` network input for `spec`.
    pub fn input(&self, spec: &Spectrogram) -> Result<Tensor<f32>> {
        if spec.n_mels != N_MELS {
            return Err(Error::Shape(format!(
                "detectors expect {N_MELS} mel bins, got {}",
                spec.n_mels
            )));
        }
        if spec.n_frames == 0 {
            return Err(Error::Shape("spectrogram has no frames".into()));
        }
        let inv = 1.0 / self.norm.std;
        let data = spec
            .values
            .iter()
            .map(|&v| ((v - self.norm.mean) * inv) as f32)
            .collect();
        Tensor::new(vec![1, N_MELS, spec.n_frames], data)
    }

    /// Raw outputs, `[outputs * T]` channel-major.
    pub fn predict(&self, spec: &Spectrogram) -> Result<Vec<f32>> {
        Ok(self.network.predict(&self.input(spec)?)?.data)
    }

    /// Per-frame probabilities as `[outputs][T]` rows.
    pub fn predict_rows(&self, spec: &Spectrogram) -> Result<Vec<Vec<f64>>> {
        let out = self.predict(spec)?;
        Ok(out
            .chunks(spec.n_frames)
            .map(|r| r.iter().map(|&v| v as f64).collect())
            .collect())
    }

    /// Training pair for `spec` and its frame labels: class ids for the IPT
    /// detector, 0/1 onset flags for the onset detector.
    pub fn example(&self, spec: &Spectrogram, labels: &[u8]) -> Result<TrainExample> {
        if labels.len() != spec.n_frames {
            return Err(Error::Shape(format!(
                "{} labels for {} frames",
                labels.len(),
                spec.n_frames
            )));
        }
        if let ModelConfig::Ipt(c) = &self.config {
            if let Some(&bad) = labels.iter().find(|&&l| l as usize >= c.n_ipt) {
                return Err(Error::InvalidClass(bad as usize));
            }
        }
        Ok(TrainExample {
            input: self.input(spec)?,
            targets: labels.iter().map(|&l| l as f32).collect(),
        })
    }

    pub fn to_checkpoint(&self, seed: u64, step: u64, extra: serde_json::Value) -> Checkpoint {
        let meta = DetectorMeta {
            model: self.config.clone(),
            norm: self.norm,
            extra,
        };
        Checkpoint::new(
            self.network.clone(),
            seed,
            step,
            serde_json::to_value(meta).expect("meta serializes"),
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta: DetectorMeta = serde_json::from_value(ckpt.header.meta.clone())
            .map_err(|e| Error::Checkpoint(format!("detector metadata: {e}")))?;
        meta.model.validate()?;
        if meta.model.nodes() != ckpt.network.nodes {
            return Err(Error::Checkpoint(
                "layer specs do not match the stored detector config".into(),
            ));
        }
        Ok(Self {
            config: meta.model,
            norm: meta.norm,
            network: ckpt.network.clone(),
        })
    }
}

/// Outputs of both detectors for one piece.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorOutput {
    /// `[n_ipt][T]`; every column sums to 1.
    pub ipt_probs: Vec<Vec<f64>>,
    /// `[T]` in (0, 1).
    pub onset_probs: Vec<f64>,
}

impl DetectorOutput {
    pub fn new(ipt_probs: Vec<Vec<f64>>, onset_probs: Vec<f64>) -> Result<Self> {
        let t = onset_probs.len();
        if ipt_probs.is_empty() || ipt_probs.iter().any(|r| r.len() != t) {
            return Err(Error::Shape(format!(
                "IPT rows must all have {t} frames to match the onset output"
            )));
        }
        Ok(Self {
            ipt_probs,
            onset_probs,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.onset_probs.len()
    }

    pub fn run(ipt: &Detector, onset: &Detector, spec: &Spectrogram) -> Result<Self> {
        let ipt_probs = ipt.predict_rows(spec)?;
        let mut onset_rows = onset.predict_rows(spec)?;
        Self::new(ipt_probs, onset_rows.swap_remove(0))
    }
}

/// Mean weighted binary cross-entropy of onset probabilities `x` against
/// binary labels `y`; probabilities are clamped to `[1e-7, 1 - 1e-7]`.
pub fn wbce_loss(x: &[f64], y: &[f64], beta: f64) -> Result<f64> {
    Ok(LossFn::wbce(beta)?.eval(x, 1, y)?.0)
}

/// Mean per-frame categorical cross-entropy of `[n][T]` probabilities.
pub fn ipt_loss(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let flat: Vec<f64> = probs.iter().flatten().copied().collect();
    if probs.iter().any(|r| r.len() != labels.len()) {
        return Err(Error::Shape("probability rows and labels differ in length".into()));
    }
    let targets: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    Ok(LossFn::CrossEntropy.eval(&flat, probs.len(), &targets)?.0)
}
