//! Checkpoints are single safetensors archives.
//!
//! Tensors: `param.<name>`, `adam.m.<name>`, `adam.v.<name>`, `norm.mean`,
//! `norm.std`. String metadata: `format`, `version`, `epoch`, `global_step`,
//! `adam_t`, `rng` (JSON), `config` (JSON of the full app config),
//! `speakers` (JSON list).

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::{Dtype as StDtype, TensorView};

use super::optim::Adam;
use crate::audio::MelStats;
use crate::config::AppConfig;
use crate::error::{Error, Result};
use crate::model::Drvc;
use crate::rng::RngState;

pub const FORMAT: &str = "drvc-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct CheckpointState {
    pub params: BTreeMap<String, Tensor>,
    pub adam: Adam,
    pub epoch: usize,
    pub global_step: usize,
    /// Position of the pair sampler's random stream.
    pub rng: RngState,
    pub config: AppConfig,
    pub speakers: Vec<String>,
    pub stats: MelStats,
}

impl CheckpointState {
    pub fn capture(
        model: &Drvc,
        adam: &Adam,
        epoch: usize,
        global_step: usize,
        rng: RngState,
        config: &AppConfig,
        speakers: &[String],
        stats: &MelStats,
    ) -> Result<Self> {
        Ok(Self {
            params: model.params.snapshot()?,
            adam: adam.clone(),
            epoch,
            global_step,
            rng,
            config: config.clone(),
            speakers: speakers.to_vec(),
            stats: stats.clone(),
        })
    }

    /// Rebuilds the model described by the stored config and loads the
    /// stored parameters into it.
    pub fn build_model(&self) -> Result<Drvc> {
        let mut rng = crate::rng::seeded(0, 0);
        let dtype = self
            .params
            .values()
            .next()
            .map(|t| t.dtype())
            .unwrap_or(DType::F32);
        let model = Drvc::new(
            &self.config.model,
            self.config.mel.n_mels,
            self.speakers.len(),
            dtype,
            &mut rng,
        )?;
        let map: HashMap<String, Tensor> = self.params.clone().into_iter().collect();
        model.params.load(&map)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors: Vec<(String, Tensor)> = Vec::new();
        for (k, t) in &self.params {
            tensors.push((format!("param.{k}"), t.clone()));
        }
        for (k, t) in &self.adam.m {
            tensors.push((format!("adam.m.{k}"), t.clone()));
        }
        for (k, t) in &self.adam.v {
            tensors.push((format!("adam.v.{k}"), t.clone()));
        }
        let dev = Device::Cpu;
        tensors.push(("norm.mean".into(), Tensor::new(self.stats.mean.as_slice(), &dev)?));
        tensors.push(("norm.std".into(), Tensor::new(self.stats.std.as_slice(), &dev)?));

        let mut raw: Vec<(String, StDtype, Vec<usize>, Vec<u8>)> = Vec::with_capacity(tensors.len());
        for (name, t) in tensors {
            let (dtype, bytes) = match t.dtype() {
                DType::F32 => (
                    StDtype::F32,
                    t.flatten_all()?.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
                ),
                DType::F64 => (
                    StDtype::F64,
                    t.flatten_all()?.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
                ),
                other => return Err(Error::Archive(format!("unsupported dtype {other:?} for {name}"))),
            };
            raw.push((name, dtype, t.dims().to_vec(), bytes));
        }
        let views = raw
            .iter()
            .map(|(name, dtype, shape, bytes)| {
                TensorView::new(*dtype, shape.clone(), bytes)
                    .map(|v| (name.clone(), v))
                    .map_err(|e| Error::Archive(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut meta = HashMap::new();
        meta.insert("format".to_string(), FORMAT.to_string());
        meta.insert("version".to_string(), VERSION.to_string());
        meta.insert("epoch".to_string(), self.epoch.to_string());
        meta.insert("global_step".to_string(), self.global_step.to_string());
        meta.insert("adam_t".to_string(), self.adam.t.to_string());
        meta.insert("adam_hyper".to_string(), serde_json::to_string(&[self.adam.beta1, self.adam.beta2, self.adam.eps])?);
        meta.insert("rng".to_string(), serde_json::to_string(&self.rng)?);
        meta.insert("config".to_string(), serde_json::to_string(&self.config)?);
        meta.insert("speakers".to_string(), serde_json::to_string(&self.speakers)?);
        let bytes = safetensors::serialize(views, Some(meta)).map_err(|e| Error::Archive(e.to_string()))?;
        write_atomic(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (_, header) =
            safetensors::SafeTensors::read_metadata(&bytes).map_err(|e| Error::Archive(format!("{}: {e}", path.display())))?;
        let meta = header
            .metadata()
            .clone()
            .ok_or_else(|| Error::Archive("checkpoint has no metadata".into()))?;
        let get = |k: &str| {
            meta.get(k)
                .cloned()
                .ok_or_else(|| Error::Archive(format!("checkpoint metadata lacks `{k}`")))
        };
        if get("format")? != FORMAT {
            return Err(Error::Archive(format!("{} is not a checkpoint", path.display())));
        }
        let version: u32 = parse(&get("version")?)?;
        if version > VERSION {
            return Err(Error::Archive(format!("checkpoint version {version} is newer than {VERSION}")));
        }
        let st = safetensors::SafeTensors::deserialize(&bytes).map_err(|e| Error::Archive(e.to_string()))?;
        let mut params = BTreeMap::new();
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        let mut mean = None;
        let mut std = None;
        for (name, view) in st.tensors() {
            let t = view_to_tensor(&view)?;
            if let Some(k) = name.strip_prefix("param.") {
                params.insert(k.to_string(), t);
            } else if let Some(k) = name.strip_prefix("adam.m.") {
                m.insert(k.to_string(), t);
            } else if let Some(k) = name.strip_prefix("adam.v.") {
                v.insert(k.to_string(), t);
            } else if name == "norm.mean" {
                mean = Some(t.to_dtype(DType::F32)?.to_vec1::<f32>()?);
            } else if name == "norm.std" {
                std = Some(t.to_dtype(DType::F32)?.to_vec1::<f32>()?);
            }
        }
        let [beta1, beta2, eps]: [f64; 3] = serde_json::from_str(&get("adam_hyper")?)?;
        let stats = MelStats {
            mean: mean.ok_or_else(|| Error::Archive("missing norm.mean".into()))?,
            std: std.ok_or_else(|| Error::Archive("missing norm.std".into()))?,
        };
        Ok(Self {
            params,
            adam: Adam {
                beta1,
                beta2,
                eps,
                t: parse(&get("adam_t")?)?,
                m,
                v,
            },
            epoch: parse(&get("epoch")?)?,
            global_step: parse(&get("global_step")?)?,
            rng: serde_json::from_str(&get("rng")?)?,
            config: serde_json::from_str(&get("config")?)?,
            speakers: serde_json::from_str(&get("speakers")?)?,
            stats,
        })
    }
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Archive(format!("bad metadata value `{s}`")))
}

fn view_to_tensor(view: &TensorView) -> Result<Tensor> {
    let data = view.data();
    let shape = view.shape().to_vec();
    let dev = Device::Cpu;
    Ok(match view.dtype() {
        StDtype::F32 => {
            let vals: Vec<f32> = data.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            Tensor::from_vec(vals, shape, &dev)?
        }
        StDtype::F64 => {
            let vals: Vec<f64> = data
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            Tensor::from_vec(vals, shape, &dev)?
        }
        other => return Err(Error::Archive(format!("unsupported stored dtype {other:?}"))),
    })
}

/// Writes to a sibling temp file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
