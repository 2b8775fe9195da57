//! On-disk formats: stain profile, checkpoint, training history, evaluation
//! report and patch-grid JSON.

use std::fmt::Write as _;
use std::path::Path;

use histoseg_core::evaluation::EvalReport;
use histoseg_core::{Model, ModelConfig, PatchGrid, StainBasis, StainProfile, Tensor, TrainingHistory};
use serde::{Deserialize, Serialize};

use crate::error::{CoreContext, Error, Result};
use crate::png_io::write_file;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Stain profile

/// Renders a profile as JSON with 17 significant digits per value, which is
/// enough to read every `f64` back bit for bit.
pub fn profile_to_json(profile: &StainProfile) -> String {
    let list = |values: &[f64]| {
        values
            .iter()
            .map(|v| format!("{v:.16e}"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let mut out = String::new();
    writeln!(out, "{{").unwrap();
    writeln!(out, "  \"basis\": [{}],", list(&profile.basis.to_row_major())).unwrap();
    writeln!(out, "  \"max_concentration\": [{}]", list(&profile.max_concentration)).unwrap();
    writeln!(out, "}}").unwrap();
    out
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileJson {
    basis: [f64; 6],
    max_concentration: [f64; 2],
}

pub fn profile_from_json(text: &str, path: &Path) -> Result<StainProfile> {
    let raw: ProfileJson = serde_json::from_str(text).map_err(|e| Error::format(path, e))?;
    let basis = StainBasis::from_row_major(raw.basis).context(|| path.display().to_string())?;
    if raw.max_concentration.iter().any(|&m| !(m.is_finite() && m > 0.0)) {
        return Err(Error::format(
            path,
            format!("max_concentration {:?} must be positive", raw.max_concentration),
        ));
    }
    Ok(StainProfile {
        basis,
        max_concentration: raw.max_concentration,
    })
}

pub fn save_profile(profile: &StainProfile, path: &Path) -> Result<()> {
    write_file(path, profile_to_json(profile).as_bytes())
}

pub fn load_profile(path: &Path) -> Result<StainProfile> {
    let bytes = read_file(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::format(path, e))?;
    profile_from_json(text, path)
}

// ---------------------------------------------------------------------------
// Checkpoint

const CHECKPOINT_FORMAT: &str = "histoseg-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct LayerJson {
    name: String,
    weight: Vec<usize>,
    bias: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    format: String,
    version: u32,
    config: ModelConfig,
    layers: Vec<LayerJson>,
    parameter_count: usize,
}

fn layer_list(config: &ModelConfig) -> Vec<LayerJson> {
    config
        .conv_specs()
        .into_iter()
        .map(|s| LayerJson {
            weight: s.weight_shape().to_vec(),
            bias: vec![s.out_channels],
            name: s.name,
        })
        .collect()
}

/// One line of compact JSON describing the model, a newline, then every
/// parameter as little-endian `f64` in declaration order.
pub fn encode_checkpoint(model: &Model) -> Vec<u8> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: model.config().clone(),
        layers: layer_list(model.config()),
        parameter_count: model.parameter_count(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.reserve(8 * model.parameter_count());
    for t in model.parameters() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Model> {
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(path, "checkpoint header is not terminated"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[..split]).map_err(|e| Error::format(path, e))?;
    if header.format != CHECKPOINT_FORMAT || header.version != CHECKPOINT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported checkpoint {} v{}", header.format, header.version),
        ));
    }
    header.config.validate().context(|| path.display().to_string())?;
    if header.layers != layer_list(&header.config)
        || header.parameter_count != header.config.parameter_count()
    {
        return Err(Error::format(path, "layer list does not match the model config"));
    }
    let body = &bytes[split + 1..];
    if body.len() != 8 * header.parameter_count {
        return Err(Error::format(
            path,
            format!(
                "expected {} parameter bytes, found {}",
                8 * header.parameter_count,
                body.len()
            ),
        ));
    }
    let mut values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut params = Vec::with_capacity(2 * header.layers.len());
    for layer in &header.layers {
        for shape in [&layer.weight, &layer.bias] {
            let n = shape.iter().product();
            let data: Vec<f64> = values.by_ref().take(n).collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::format(path, format!("non-finite parameter in {}", layer.name)));
            }
            params.push(Tensor::new(shape.clone(), data).context(|| path.display().to_string())?);
        }
    }
    Model::from_parameters(&header.config, params).context(|| path.display().to_string())
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    write_file(path, &encode_checkpoint(model))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    decode_checkpoint(&read_file(path)?, path)
}

// ---------------------------------------------------------------------------
// Training history

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct HistoryRow {
    epoch: usize,
    mean_loss: f64,
    mean_dice: f64,
}

/// `epoch,mean_loss,mean_dice`, epochs counted from 1.
pub fn history_to_csv(history: &TrainingHistory) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (i, (&mean_loss, &mean_dice)) in history.mean_loss.iter().zip(&history.mean_dice).enumerate() {
        w.serialize(HistoryRow {
            epoch: i + 1,
            mean_loss,
            mean_dice,
        })
        .expect("in-memory CSV");
    }
    if history.epochs() == 0 {
        w.write_record(["epoch", "mean_loss", "mean_dice"]).expect("in-memory CSV");
    }
    w.into_inner().expect("in-memory CSV")
}

pub fn history_from_csv(bytes: &[u8], path: &Path) -> Result<TrainingHistory> {
    let mut r = csv::Reader::from_reader(bytes);
    let mut history = TrainingHistory::default();
    for (i, row) in r.deserialize::<HistoryRow>().enumerate() {
        let row = row.map_err(|e| Error::format(path, e))?;
        if row.epoch != i + 1 {
            return Err(Error::format(path, format!("expected epoch {}, found {}", i + 1, row.epoch)));
        }
        history.mean_loss.push(row.mean_loss);
        history.mean_dice.push(row.mean_dice);
    }
    Ok(history)
}

pub fn save_history(history: &TrainingHistory, path: &Path) -> Result<()> {
    write_file(path, &history_to_csv(history))
}

pub fn load_history(path: &Path) -> Result<TrainingHistory> {
    history_from_csv(&read_file(path)?, path)
}

// ---------------------------------------------------------------------------
// Evaluation report and patch grid

pub fn save_report(report: &EvalReport, path: &Path) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(report).expect("report serializes");
    text.push(b'\n');
    write_file(path, &text)
}

pub fn load_report(path: &Path) -> Result<EvalReport> {
    serde_json::from_slice(&read_file(path)?).map_err(|e| Error::format(path, e))
}

pub fn save_grid(grid: &PatchGrid, path: &Path) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(grid).expect("grid serializes");
    text.push(b'\n');
    write_file(path, &text)
}

pub fn load_grid(path: &Path) -> Result<PatchGrid> {
    let grid: PatchGrid =
        serde_json::from_slice(&read_file(path)?).map_err(|e| Error::format(path, e))?;
    grid.validate().context(|| path.display().to_string())?;
    Ok(grid)
}
