//! Model JSON. Every real is written as a decimal string with 17 significant
//! digits, which round-trips `f64` exactly and keeps files byte-stable.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::gmm::GmmParams;
use super::hierarchical::HierarchicalModel;
use super::model::PropertyModel;
use crate::error::{Error, Result};
use crate::io;

#[derive(Serialize, Deserialize)]
struct GmmJson {
    weights: Vec<String>,
    means: Vec<Vec<String>>,
    variances: Vec<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct SubmodelJson {
    num_states: usize,
    topology_mask: Vec<Vec<bool>>,
    transition: Vec<Vec<String>>,
    start: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    final_probs: Option<Vec<String>>,
    emissions: Vec<GmmJson>,
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    classes: Vec<String>,
    prior: Vec<String>,
    submodels: Vec<SubmodelJson>,
}

pub(crate) fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::invalid(format!("model file holds {s:?}, which is not a number")))
}

fn reals(v: &[f64]) -> Vec<String> {
    v.iter().copied().map(real).collect()
}

fn parse_all(v: &[String]) -> Result<Vec<f64>> {
    v.iter().map(|s| parse(s)).collect()
}

fn matrix(m: &[Vec<f64>]) -> Vec<Vec<String>> {
    m.iter().map(|r| reals(r)).collect()
}

fn parse_matrix(m: &[Vec<String>]) -> Result<Vec<Vec<f64>>> {
    m.iter().map(|r| parse_all(r)).collect()
}

impl From<&PropertyModel> for SubmodelJson {
    fn from(m: &PropertyModel) -> Self {
        SubmodelJson {
            num_states: m.num_states(),
            topology_mask: m.topology_mask.clone(),
            transition: matrix(&m.transition),
            start: reals(&m.start),
            final_probs: m.final_probs.as_deref().map(reals),
            emissions: m
                .emissions
                .iter()
                .map(|g| GmmJson {
                    weights: reals(&g.weights),
                    means: matrix(&g.means),
                    variances: matrix(&g.variances),
                })
                .collect(),
        }
    }
}

impl SubmodelJson {
    fn into_model(self) -> Result<PropertyModel> {
        let emissions = self
            .emissions
            .iter()
            .map(|g| {
                GmmParams::new(parse_all(&g.weights)?, parse_matrix(&g.means)?, parse_matrix(&g.variances)?)
            })
            .collect::<Result<Vec<_>>>()?;
        let m = PropertyModel::new(
            parse_matrix(&self.transition)?,
            parse_all(&self.start)?,
            emissions,
            self.topology_mask,
        )?
        .with_final_probs(self.final_probs.as_deref().map(parse_all).transpose()?)?;
        if m.num_states() != self.num_states {
            return Err(Error::DimensionError {
                expected: self.num_states,
                found: m.num_states(),
            });
        }
        Ok(m)
    }
}

pub fn model_to_json(model: &HierarchicalModel) -> Result<String> {
    let doc = ModelJson {
        classes: model.classes.clone(),
        prior: reals(&model.prior),
        submodels: model.submodels.iter().map(SubmodelJson::from).collect(),
    };
    let mut text = serde_json::to_string_pretty(&doc).map_err(|e| Error::json("serializing model", e))?;
    text.push('\n');
    Ok(text)
}

pub fn model_from_json(text: &str) -> Result<HierarchicalModel> {
    let doc: ModelJson = serde_json::from_str(text).map_err(|e| Error::json("parsing model", e))?;
    let submodels = doc
        .submodels
        .into_iter()
        .map(SubmodelJson::into_model)
        .collect::<Result<Vec<_>>>()?;
    HierarchicalModel::new(doc.classes, parse_all(&doc.prior)?, submodels)
}

pub fn write_model(path: &Path, model: &HierarchicalModel) -> Result<()> {
    io::write_bytes(path, model_to_json(model)?.as_bytes())
}

pub fn read_model(path: &Path) -> Result<HierarchicalModel> {
    model_from_json(&io::read_text(path)?)
}
