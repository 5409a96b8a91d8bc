//! The five trainable components and the gradient reversal layer.
//!
//! Tensors inside the model are batch-first: mels and content codes are
//! `[B, T, F]`, style codes `[B, ds]`.

pub mod conditioning;
pub mod grl;
pub mod layers;
pub mod params;
pub mod placement;
pub mod recurrence;

use candle_core::{DType, Tensor, D};
use ndarray::Array2;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::audio::MelSpectrogram;
use crate::error::{Error, Result};
use conditioning::{conditionings, Conditioner, ConditioningDims};
use layers::{leaky_relu, rms_normalize, softmax_last, Conv1d, Linear, Lstm};

pub use grl::{grl_apply, grl_lambda_schedule, GrlConfig};
pub use params::ModelParams;
pub use placement::{grl_placements, GrlPlacement};

/// Layer widths. The mel bin count and speaker count come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub content_channels: usize,
    pub content_hidden: usize,
    pub content_dim: usize,
    pub style_channels: usize,
    pub style_dim: usize,
    pub disc_channels: usize,
    pub head_hidden: usize,
    pub kernel_size: usize,
    pub conv_layers: usize,
    pub conditioning: String,
    pub leaky_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            content_channels: 512,
            content_hidden: 512,
            content_dim: 128,
            style_channels: 512,
            style_dim: 128,
            disc_channels: 256,
            head_hidden: 256,
            kernel_size: 5,
            conv_layers: 3,
            conditioning: "concat".into(),
            leaky_slope: 0.2,
        }
    }
}

/// Time-varying content code `[T' x dc]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentEmbedding {
    pub values: Array2<f32>,
    pub source_speaker: String,
}

/// Time-invariant style code `[ds]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleEmbedding {
    pub values: Vec<f32>,
}

/// The three maps the double exchange is built from.
pub trait Disentangler {
    /// `[B, T, M] -> [B, T', dc]`
    fn content(&self, mels: &Tensor) -> Result<Tensor>;
    /// `[B, T, M] -> [B, ds]`
    fn style(&self, mels: &Tensor) -> Result<Tensor>;
    /// `[B, T', dc] x [B, ds] -> [B, T, M]`
    fn generate(&self, content: &Tensor, style: &Tensor) -> Result<Tensor>;
}

#[derive(Debug)]
struct ConvStack {
    convs: Vec<Conv1d>,
    slope: f64,
}

impl ConvStack {
    fn new(
        params: &mut ModelParams,
        prefix: &str,
        inputs: usize,
        channels: usize,
        cfg: &ModelConfig,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let convs = (0..cfg.conv_layers)
            .map(|i| {
                let c_in = if i == 0 { inputs } else { channels };
                Conv1d::new(params, &format!("{prefix}.conv{i}"), c_in, channels, cfg.kernel_size, rng)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            convs,
            slope: cfg.leaky_slope,
        })
    }

    /// `[B, C, T]` in and out; `between` runs after each activation.
    fn detached(&self) -> Self {
        Self {
            convs: self.convs.iter().map(Conv1d::detached).collect(),
            slope: self.slope,
        }
    }

    fn forward<F>(&self, x: &Tensor, mut between: F) -> Result<Tensor>
    where
        F: FnMut(usize, &Tensor) -> Result<Tensor>,
    {
        let mut h = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            h = leaky_relu(&conv.forward(&h)?, self.slope)?;
            h = between(i, &h)?;
        }
        Ok(h)
    }
}

fn to_channels_first(x: &Tensor) -> Result<Tensor> {
    Ok(x.transpose(1, 2)?.contiguous()?)
}

/// Recurrent head, three convolutions, recurrent tail, projection.
#[derive(Debug)]
pub struct ContentEncoder {
    head: Lstm,
    convs: ConvStack,
    tail: Lstm,
    proj: Linear,
}

impl ContentEncoder {
    fn new(params: &mut ModelParams, n_mels: usize, cfg: &ModelConfig, rng: &mut dyn RngCore) -> Result<Self> {
        let p = "content_encoder";
        Ok(Self {
            head: Lstm::new(params, &format!("{p}.lstm_head"), n_mels, cfg.content_hidden, rng)?,
            convs: ConvStack::new(params, p, cfg.content_hidden, cfg.content_channels, cfg, rng)?,
            tail: Lstm::new(params, &format!("{p}.lstm_tail"), cfg.content_channels, cfg.content_hidden, rng)?,
            proj: Linear::new(params, &format!("{p}.proj"), cfg.content_hidden, cfg.content_dim, rng)?,
        })
    }

    /// A copy whose weights receive no gradient.
    pub fn detached(&self) -> Self {
        Self {
            head: self.head.detached(),
            convs: self.convs.detached(),
            tail: self.tail.detached(),
            proj: self.proj.detached(),
        }
    }

    pub fn forward(&self, mels: &Tensor) -> Result<Tensor> {
        let h = to_channels_first(&self.head.forward(mels)?)?;
        let h = self.convs.forward(&h, |_, h| Ok(h.clone()))?;
        let h = self.tail.forward(&to_channels_first(&h)?)?;
        rms_normalize(&self.proj.forward(&h)?)
    }
}

/// Convolutions, average over time, projection to `ds`.
#[derive(Debug)]
pub struct StyleEncoder {
    convs: ConvStack,
    proj: Linear,
}

impl StyleEncoder {
    fn new(params: &mut ModelParams, n_mels: usize, cfg: &ModelConfig, rng: &mut dyn RngCore) -> Result<Self> {
        let p = "style_encoder";
        Ok(Self {
            convs: ConvStack::new(params, p, n_mels, cfg.style_channels, cfg, rng)?,
            proj: Linear::new(params, &format!("{p}.proj"), cfg.style_channels, cfg.style_dim, rng)?,
        })
    }

    pub fn detached(&self) -> Self {
        Self {
            convs: self.convs.detached(),
            proj: self.proj.detached(),
        }
    }

    pub fn forward(&self, mels: &Tensor) -> Result<Tensor> {
        let h = self.convs.forward(&to_channels_first(mels)?, |_, h| Ok(h.clone()))?;
        rms_normalize(&self.proj.forward(&h.mean(D::Minus1)?)?)
    }
}

/// Same topology as the content encoder, conditioned on style.
#[derive(Debug)]
pub struct Generator {
    conditioner: Box<dyn Conditioner>,
    head: Lstm,
    convs: ConvStack,
    tail: Lstm,
    proj: Linear,
}

impl Generator {
    fn new(params: &mut ModelParams, n_mels: usize, cfg: &ModelConfig, rng: &mut dyn RngCore) -> Result<Self> {
        let p = "generator";
        let conditioner = conditionings().create(&cfg.conditioning)?.build(
            params,
            p,
            ConditioningDims {
                content_dim: cfg.content_dim,
                style_dim: cfg.style_dim,
                channels: cfg.content_channels,
                n_layers: cfg.conv_layers,
            },
            rng,
        )?;
        let head_in = conditioner.head_input_dim();
        Ok(Self {
            head: Lstm::new(params, &format!("{p}.lstm_head"), head_in, cfg.content_hidden, rng)?,
            convs: ConvStack::new(params, p, cfg.content_hidden, cfg.content_channels, cfg, rng)?,
            tail: Lstm::new(params, &format!("{p}.lstm_tail"), cfg.content_channels, cfg.content_hidden, rng)?,
            proj: Linear::new(params, &format!("{p}.proj"), cfg.content_hidden, n_mels, rng)?,
            conditioner,
        })
    }

    pub fn forward(&self, content: &Tensor, style: &Tensor) -> Result<Tensor> {
        let x = self.conditioner.head_input(content, style)?;
        let h = to_channels_first(&self.head.forward(&x)?)?;
        let h = self
            .convs
            .forward(&h, |i, h| self.conditioner.modulate(i, h, style))?;
        let h = self.tail.forward(&to_channels_first(&h)?)?;
        self.proj.forward(&h)
    }
}

/// Two-hidden-layer perceptron.
#[derive(Debug)]
pub struct Mlp {
    layers: [Linear; 3],
    slope: f64,
}

impl Mlp {
    fn new(
        params: &mut ModelParams,
        prefix: &str,
        inputs: usize,
        hidden: usize,
        outputs: usize,
        slope: f64,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        Ok(Self {
            layers: [
                Linear::new(params, &format!("{prefix}.fc0"), inputs, hidden, rng)?,
                Linear::new(params, &format!("{prefix}.fc1"), hidden, hidden, rng)?,
                Linear::new(params, &format!("{prefix}.fc2"), hidden, outputs, rng)?,
            ],
            slope,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = leaky_relu(&self.layers[0].forward(x)?, self.slope)?;
        let h = leaky_relu(&self.layers[1].forward(&h)?, self.slope)?;
        self.layers[2].forward(&h)
    }
}

/// Real/synthetic logit from a conv stem averaged over time.
#[derive(Debug)]
pub struct VoiceDiscriminator {
    stem: Conv1d,
    head: Mlp,
    slope: f64,
}

impl VoiceDiscriminator {
    fn new(params: &mut ModelParams, n_mels: usize, cfg: &ModelConfig, rng: &mut dyn RngCore) -> Result<Self> {
        let p = "voice_discriminator";
        Ok(Self {
            stem: Conv1d::new(params, &format!("{p}.stem"), n_mels, cfg.disc_channels, cfg.kernel_size, rng)?,
            head: Mlp::new(params, p, cfg.disc_channels, cfg.head_hidden, 1, cfg.leaky_slope, rng)?,
            slope: cfg.leaky_slope,
        })
    }

    /// `[B, T, M] -> [B]`
    pub fn forward(&self, mels: &Tensor) -> Result<Tensor> {
        let h = leaky_relu(&self.stem.forward(&to_channels_first(mels)?)?, self.slope)?;
        Ok(self.head.forward(&h.mean(D::Minus1)?)?.squeeze(1)?)
    }
}

/// Speaker logits from a style code.
#[derive(Debug)]
pub struct DomainClassifier {
    head: Mlp,
}

impl DomainClassifier {
    fn new(params: &mut ModelParams, n_speakers: usize, cfg: &ModelConfig, rng: &mut dyn RngCore) -> Result<Self> {
        Ok(Self {
            head: Mlp::new(params, "domain_classifier", cfg.style_dim, cfg.head_hidden, n_speakers, cfg.leaky_slope, rng)?,
        })
    }

    /// `[B, ds] -> [B, K]` probabilities.
    pub fn forward(&self, styles: &Tensor) -> Result<Tensor> {
        softmax_last(&self.head.forward(styles)?)
    }
}

/// Content encoder, style encoder, generator, voice discriminator and domain
/// classifier with their shared parameter store.
#[derive(Debug)]
pub struct Drvc {
    pub params: ModelParams,
    pub content_encoder: ContentEncoder,
    pub style_encoder: StyleEncoder,
    pub generator: Generator,
    pub voice_discriminator: VoiceDiscriminator,
    pub domain_classifier: DomainClassifier,
    config: ModelConfig,
    n_mels: usize,
    n_speakers: usize,
}

impl Drvc {
    /// Fan-in uniform weights and zero biases drawn from `rng`.
    pub fn new(
        config: &ModelConfig,
        n_mels: usize,
        n_speakers: usize,
        dtype: DType,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        if n_speakers < 2 {
            return Err(Error::Config(format!("domain classifier needs >= 2 speakers, got {n_speakers}")));
        }
        if config.kernel_size % 2 == 0 {
            return Err(Error::Config("kernel_size must be odd for same padding".into()));
        }
        let mut params = ModelParams::new(dtype);
        let content_encoder = ContentEncoder::new(&mut params, n_mels, config, rng)?;
        let style_encoder = StyleEncoder::new(&mut params, n_mels, config, rng)?;
        let generator = Generator::new(&mut params, n_mels, config, rng)?;
        let voice_discriminator = VoiceDiscriminator::new(&mut params, n_mels, config, rng)?;
        let domain_classifier = DomainClassifier::new(&mut params, n_speakers, config, rng)?;
        Ok(Self {
            params,
            content_encoder,
            style_encoder,
            generator,
            voice_discriminator,
            domain_classifier,
            config: config.clone(),
            n_mels,
            n_speakers,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_speakers(&self) -> usize {
        self.n_speakers
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    /// `[T x M]` mel as a `[1, T, M]` tensor in the model dtype.
    pub fn mel_tensor(&self, mel: &MelSpectrogram) -> Result<Tensor> {
        if mel.n_mels() != self.n_mels {
            return Err(Error::Contract(format!(
                "mel has {} bins, model expects {}",
                mel.n_mels(),
                self.n_mels
            )));
        }
        mels_to_tensor(std::slice::from_ref(mel), self.dtype())
    }

    pub fn voice_logits(&self, mels: &Tensor) -> Result<Tensor> {
        self.voice_discriminator.forward(mels)
    }

    pub fn domain_probs(&self, styles: &Tensor) -> Result<Tensor> {
        self.domain_classifier.forward(styles)
    }

    pub fn encode_content(&self, mel: &MelSpectrogram) -> Result<ContentEmbedding> {
        let c = self.content(&self.mel_tensor(mel)?)?.squeeze(0)?;
        Ok(ContentEmbedding {
            values: tensor_to_array2(&c)?,
            source_speaker: mel.speaker_id.clone(),
        })
    }

    pub fn encode_style(&self, mel: &MelSpectrogram) -> Result<StyleEmbedding> {
        let s = self.style(&self.mel_tensor(mel)?)?.squeeze(0)?;
        Ok(StyleEmbedding {
            values: s.to_dtype(DType::F32)?.to_vec1()?,
        })
    }

    /// Output inherits sample rate and hop from `like` (the mel that produced
    /// the content code).
    pub fn generate_mel(
        &self,
        content: &ContentEmbedding,
        style: &StyleEmbedding,
        like: &MelSpectrogram,
        speaker_id: &str,
    ) -> Result<MelSpectrogram> {
        if content.values.ncols() != self.config.content_dim {
            return Err(Error::Contract(format!(
                "content dim {} != {}",
                content.values.ncols(),
                self.config.content_dim
            )));
        }
        if style.values.len() != self.config.style_dim {
            return Err(Error::Contract(format!(
                "style dim {} != {}",
                style.values.len(),
                self.config.style_dim
            )));
        }
        let dev = self.params.device();
        let (t, dc) = content.values.dim();
        let c = Tensor::from_iter(content.values.iter().copied(), dev)?
            .reshape((1, t, dc))?
            .to_dtype(self.dtype())?;
        let s = Tensor::from_slice(&style.values, (1, style.values.len()), dev)?.to_dtype(self.dtype())?;
        let out = self.generate(&c, &s)?.squeeze(0)?;
        MelSpectrogram::new(tensor_to_array2(&out)?, like.sample_rate, like.hop_length, speaker_id)
    }

    pub fn discriminate_voice(&self, mel: &MelSpectrogram) -> Result<f32> {
        let logit = self.voice_logits(&self.mel_tensor(mel)?)?;
        Ok(logit.to_dtype(DType::F32)?.to_vec1::<f32>()?[0])
    }

    pub fn classify_domain(&self, style: &StyleEmbedding) -> Result<Vec<f32>> {
        if style.values.len() != self.config.style_dim {
            return Err(Error::Contract(format!(
                "style dim {} != {}",
                style.values.len(),
                self.config.style_dim
            )));
        }
        let s = Tensor::from_slice(&style.values, (1, style.values.len()), self.params.device())?
            .to_dtype(self.dtype())?;
        Ok(self.domain_probs(&s)?.squeeze(0)?.to_dtype(DType::F32)?.to_vec1()?)
    }
}

impl Disentangler for Drvc {
    fn content(&self, mels: &Tensor) -> Result<Tensor> {
        self.content_encoder.forward(mels)
    }

    fn style(&self, mels: &Tensor) -> Result<Tensor> {
        self.style_encoder.forward(mels)
    }

    fn generate(&self, content: &Tensor, style: &Tensor) -> Result<Tensor> {
        self.generator.forward(content, style)
    }
}

/// Stacks equally long mels into `[B, T, M]`.
pub fn mels_to_tensor(mels: &[MelSpectrogram], dtype: DType) -> Result<Tensor> {
    let first = mels
        .first()
        .ok_or_else(|| Error::EmptyInput("no mels to batch".into()))?;
    let (t, m) = first.frames.dim();
    let mut data = Vec::with_capacity(mels.len() * t * m);
    for mel in mels {
        if mel.frames.dim() != (t, m) {
            return Err(Error::Contract(format!(
                "batch shape mismatch: {:?} vs {:?}",
                mel.frames.dim(),
                (t, m)
            )));
        }
        data.extend(mel.frames.iter().copied());
    }
    Ok(Tensor::from_vec(data, (mels.len(), t, m), &candle_core::Device::Cpu)?.to_dtype(dtype)?)
}

pub fn tensor_to_array2(t: &Tensor) -> Result<Array2<f32>> {
    let (r, c) = t.dims2()?;
    let v: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    Array2::from_shape_vec((r, c), v).map_err(|e| Error::Contract(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn tiny() -> ModelConfig {
        ModelConfig {
            content_channels: 6,
            content_hidden: 5,
            content_dim: 3,
            style_channels: 4,
            style_dim: 2,
            disc_channels: 4,
            head_hidden: 5,
            ..Default::default()
        }
    }

    fn model(cfg: &ModelConfig) -> Drvc {
        Drvc::new(cfg, 8, 2, DType::F32, &mut seeded(1, 0)).unwrap()
    }

    fn mel(t: usize, seed: u64) -> MelSpectrogram {
        use rand::Rng;
        let mut rng = seeded(seed, 9);
        let frames = Array2::from_shape_fn((t, 8), |_| rng.random_range(-1.0..1.0));
        MelSpectrogram::new(frames, 22050, 256, "s").unwrap()
    }

    #[test]
    fn shapes_follow_contracts() {
        let m = model(&tiny());
        let x = mel(128, 0);
        let c = m.encode_content(&x).unwrap();
        assert_eq!(c.values.dim(), (128, 3));
        for t in [64, 256] {
            assert_eq!(m.encode_style(&mel(t, 1)).unwrap().values.len(), 2);
        }
        let s = m.encode_style(&x).unwrap();
        let y = m.generate_mel(&c, &s, &x, "s").unwrap();
        assert_eq!(y.n_frames(), 128);
        assert_eq!(y.n_mels(), 8);
        assert!(m.discriminate_voice(&x).unwrap().is_finite());
        let p = m.classify_domain(&s).unwrap();
        assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn deterministic_components() {
        let m = model(&tiny());
        let x = mel(20, 3);
        assert_eq!(m.encode_content(&x).unwrap(), m.encode_content(&x).unwrap());
        assert_eq!(m.encode_style(&x).unwrap(), m.encode_style(&x).unwrap());
        assert_eq!(m.discriminate_voice(&x).unwrap(), m.discriminate_voice(&x).unwrap());
        let again = model(&tiny());
        assert_eq!(m.encode_content(&x).unwrap(), again.encode_content(&x).unwrap());
    }

    #[test]
    fn zero_inputs_give_finite_output() {
        let m = model(&tiny());
        let c = ContentEmbedding {
            values: Array2::zeros((16, 3)),
            source_speaker: "s".into(),
        };
        let s = StyleEmbedding { values: vec![0.0; 2] };
        let y = m.generate_mel(&c, &s, &mel(16, 0), "s").unwrap();
        assert!(y.frames.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn shape_mismatches_are_contract_errors() {
        let m = model(&tiny());
        let wrong = MelSpectrogram::new(Array2::zeros((10, 5)), 22050, 256, "s").unwrap();
        assert!(matches!(m.encode_content(&wrong), Err(Error::Contract(_))));
        assert!(matches!(
            m.classify_domain(&StyleEmbedding { values: vec![0.0; 7] }),
            Err(Error::Contract(_))
        ));
        let c = ContentEmbedding {
            values: Array2::zeros((4, 9)),
            source_speaker: "s".into(),
        };
        let s = StyleEmbedding { values: vec![0.0; 2] };
        assert!(matches!(m.generate_mel(&c, &s, &mel(4, 0), "s"), Err(Error::Contract(_))));
    }

    #[test]
    fn uniform_logits_two_speakers() {
        let m = model(&tiny());
        // Zero the final layer so the logits are identical.
        for name in ["domain_classifier.fc2.weight", "domain_classifier.fc2.bias"] {
            let v = m.params.get(name).unwrap();
            v.set(&v.zeros_like().unwrap()).unwrap();
        }
        let p = m.classify_domain(&StyleEmbedding { values: vec![0.3, -1.0] }).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn adain_conditioning_builds_and_runs() {
        let cfg = ModelConfig {
            conditioning: "adain".into(),
            ..tiny()
        };
        let m = model(&cfg);
        assert!(m.params.get("generator.adain0.weight").is_some());
        let x = mel(12, 2);
        let y = m
            .generate_mel(&m.encode_content(&x).unwrap(), &m.encode_style(&x).unwrap(), &x, "s")
            .unwrap();
        assert_eq!(y.n_frames(), 12);
        let bad = ModelConfig {
            conditioning: "film".into(),
            ..tiny()
        };
        assert!(Drvc::new(&bad, 8, 2, DType::F32, &mut seeded(0, 0)).is_err());
    }

    #[test]
    fn every_parameter_belongs_to_a_group() {
        let m = model(&tiny());
        for (name, _) in m.params.iter() {
            assert!(params::GROUPS.contains(&ModelParams::group_of(name)), "{name}");
        }
    }
}
