//! Converts every eval-split pairing with a trained model and scores it.
//!
//! For source speaker `s`, target speaker `t` and source utterance `u`:
//! content comes from `(s, u)`, style from another eval utterance of `t`,
//! and the reference is the natural recording of `t` saying `u` (parallel
//! corpora share utterance ids across speakers). `s == t` gives the identity
//! conversions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::cepstrum::CepstrumExtractor;
use super::mcd::{evaluate_pairs, MCDResult, PairInput, Summary};
use crate::audio::{denormalize_mel, load_audio, normalize_mel, AudioClip, MelStats, SpeakerManifest, Split, UtteranceRecord};
use crate::config::AppConfig;
use crate::engine::data::load_cached;
use crate::engine::convert;
use crate::error::{Error, Result};
use crate::model::Drvc;
use crate::vocoder::GriffinLim;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub overall: MCDResult,
    pub identity: Option<Summary>,
    pub cross: Option<Summary>,
}

impl EvalReport {
    pub fn from_result(overall: MCDResult) -> Self {
        let speaker = |id: &str| id.split('/').next().unwrap_or(id).to_string();
        let identity = overall.summary_where(|p| speaker(&p.source) == speaker(&p.target));
        let cross = overall.summary_where(|p| speaker(&p.source) != speaker(&p.target));
        Self {
            overall,
            identity,
            cross,
        }
    }
}

fn pair_id(r: &UtteranceRecord) -> String {
    format!("{}/{}", r.speaker_id, r.utterance_id())
}

pub fn evaluate_model(model: &Drvc, stats: &MelStats, cfg: &AppConfig, manifest: &SpeakerManifest) -> Result<EvalReport> {
    let mut by_speaker: BTreeMap<&str, Vec<&UtteranceRecord>> = BTreeMap::new();
    for r in manifest.split(Split::Eval) {
        by_speaker.entry(r.speaker_id.as_str()).or_default().push(r);
    }
    if by_speaker.is_empty() {
        return Err(Error::Contract("eval split is empty".into()));
    }
    let ev = &cfg.eval;
    let cep = CepstrumExtractor::new(&cfg.mel, ev.cepstrum_order, ev.mcep_alpha)?;
    let vocoder = GriffinLim::new(&cfg.mel)?;
    let rate = cfg.mel.sample_rate;

    let mut features = BTreeMap::new();
    let mut references = BTreeMap::new();
    for r in by_speaker.values().flatten() {
        features.insert(pair_id(r), normalize_mel(&load_cached(cfg, r)?, stats)?);
        let clip = load_audio(&r.audio_path, rate)?;
        references.insert(pair_id(r), cep.extract(&clip)?);
    }

    let mut inputs = Vec::new();
    for src_utts in by_speaker.values() {
        let limit = if ev.eval_utterances == 0 { src_utts.len() } else { ev.eval_utterances };
        for (tgt_spk, tgt_utts) in &by_speaker {
            for (i, src) in src_utts.iter().take(limit).enumerate() {
                let Some(reference) = tgt_utts.iter().find(|r| r.utterance_id() == src.utterance_id()) else {
                    log::warn!("no reference for {} in {tgt_spk}; pair skipped", src.utterance_id());
                    continue;
                };
                let style_ref = tgt_utts
                    .iter()
                    .cycle()
                    .skip(i + 1)
                    .find(|r| r.utterance_id() != src.utterance_id())
                    .unwrap_or(reference);
                let converted = convert(model, &features[&pair_id(src)], &features[&pair_id(style_ref)])?;
                let mel = denormalize_mel(&converted, stats)?;
                let mut samples = vocoder.vocode(&mel, ev.griffin_lim_iters)?;
                crate::audio::clip::peak_normalize(&mut samples);
                let clip = AudioClip::new(samples, rate, *tgt_spk, src.utterance_id())?;
                inputs.push(PairInput {
                    source: pair_id(src),
                    target: pair_id(reference),
                    converted: cep.extract(&clip)?,
                    reference: references[&pair_id(reference)].clone(),
                });
            }
        }
    }
    Ok(EvalReport::from_result(evaluate_pairs(&inputs, ev.include_c0)?))
}
