//! Combinatorial degraded-dataset planning and generation.
//!
//! Every combination of factor levels yields one degraded copy of the
//! source dataset. Combinations are enumerated lexicographically in the
//! declared factor order, which is also the order transforms are applied.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::{self, LabeledDataset};
use crate::perturb::{apply_stack, EpsilonGrid, PerturbationKind};

/// Factor name to epsilon, in application order.
pub type Assignment = Vec<(String, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationPlan {
    pub grids: Vec<EpsilonGrid>,
    pub combinations: Vec<Vec<f64>>,
    /// Levels per factor when every grid has the same length.
    pub rho: Option<usize>,
    pub source_count: usize,
    pub predicted_total: usize,
}

impl DegradationPlan {
    pub fn factor_names(&self) -> Vec<&str> {
        self.grids.iter().map(|g| g.factor_name.as_str()).collect()
    }

    pub fn assignment(&self, index: usize) -> Assignment {
        self.grids
            .iter()
            .zip(&self.combinations[index])
            .map(|(g, &e)| (g.factor_name.clone(), e))
            .collect()
    }

    pub fn assignments(&self) -> impl Iterator<Item = Assignment> + '_ {
        (0..self.combinations.len()).map(|i| self.assignment(i))
    }

    pub fn dataset_ids(&self) -> Vec<String> {
        self.assignments().map(|a| dataset_id(&a)).collect()
    }
}

/// Enumerates the full Cartesian product of the grids.
pub fn plan(grids: &[EpsilonGrid], source_count: usize) -> Result<DegradationPlan> {
    if grids.is_empty() {
        return Err(Error::Config("degradation plan needs at least one factor".into()));
    }
    for g in grids {
        g.validate()?;
    }
    let mut names: Vec<&str> = grids.iter().map(|g| g.factor_name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("factor names in a plan must be unique".into()));
    }

    let mut combinations: Vec<Vec<f64>> = vec![Vec::new()];
    for g in grids {
        combinations = combinations
            .into_iter()
            .flat_map(|prefix| {
                g.levels.iter().map(move |&e| {
                    let mut c = prefix.clone();
                    c.push(e);
                    c
                })
            })
            .collect();
    }

    let first = grids[0].levels.len();
    let rho = grids.iter().all(|g| g.levels.len() == first).then_some(first);
    let predicted_total = source_count * combinations.len();
    Ok(DegradationPlan { grids: grids.to_vec(), combinations, rho, source_count, predicted_total })
}

/// `d_<factor>=<eps>_...` with four decimals per epsilon.
pub fn dataset_id(assignment: &[(String, f64)]) -> String {
    let parts: Vec<String> = assignment.iter().map(|(f, e)| format!("{f}={e:.4}")).collect();
    format!("d_{}", parts.join("_"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub dataset_id: String,
    pub source_checksum: String,
    pub assignment: BTreeMap<String, f64>,
    pub order: Vec<String>,
    pub params: BTreeMap<String, PerturbationKind>,
    pub count: usize,
    pub crc32: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegradedDataset {
    pub assignment: Assignment,
    pub dataset: LabeledDataset,
    pub metadata: DatasetMetadata,
}

impl DegradedDataset {
    pub fn id(&self) -> &str {
        &self.metadata.dataset_id
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        imageio::save_packed(&dir.join(format!("{}.mfd", self.id())), &self.dataset)?;
        let meta_path = dir.join(format!("{}.json", self.id()));
        let json = serde_json::to_string_pretty(&self.metadata)?;
        fs::write(&meta_path, json + "\n").map_err(|e| Error::file(&meta_path, e))
    }

    pub fn load(dir: &Path, dataset_id: &str, classes: usize) -> Result<Self> {
        let meta_path = dir.join(format!("{dataset_id}.json"));
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::file(&meta_path, e))?;
        let metadata: DatasetMetadata = serde_json::from_str(&text)?;
        let data_path = dir.join(format!("{dataset_id}.mfd"));
        let bytes = fs::read(&data_path).map_err(|e| Error::file(&data_path, e))?;
        let crc = format!("{:08x}", imageio::packed_checksum(&bytes)?);
        if crc != metadata.crc32 {
            return Err(Error::Config(format!(
                "{dataset_id}: metadata crc32 {} does not match data file {crc}",
                metadata.crc32
            )));
        }
        let dataset = imageio::read_packed(&bytes, Some(classes))?;
        let assignment = metadata.order.iter().map(|f| (f.clone(), metadata.assignment[f])).collect();
        Ok(Self { assignment, dataset, metadata })
    }
}

/// Hex CRC32 of the packed representation of a dataset.
pub fn dataset_checksum(dataset: &LabeledDataset) -> Result<String> {
    Ok(format!("{:08x}", imageio::packed_checksum(&imageio::write_packed(dataset)?)?))
}

/// Produces one quantized degraded dataset per plan combination.
pub fn generate(
    source: &LabeledDataset,
    plan: &DegradationPlan,
    factors: &[PerturbationKind],
) -> Result<Vec<DegradedDataset>> {
    source.shape()?;
    if source.len() != plan.source_count {
        return Err(Error::Config(format!(
            "plan was made for {} images, source has {}",
            plan.source_count,
            source.len()
        )));
    }
    let kinds = plan
        .grids
        .iter()
        .map(|g| {
            factors
                .iter()
                .find(|k| k.name() == g.factor_name)
                .cloned()
                .ok_or_else(|| Error::Config(format!("no factor definition for {:?}", g.factor_name)))
        })
        .collect::<Result<Vec<_>>>()?;
    if factors.len() != kinds.len() {
        return Err(Error::Config(format!(
            "factor set {:?} does not match plan factors {:?}",
            factors.iter().map(PerturbationKind::name).collect::<Vec<_>>(),
            plan.factor_names()
        )));
    }
    for k in &kinds {
        k.validate()?;
    }
    let source_checksum = dataset_checksum(source)?;

    (0..plan.combinations.len())
        .into_par_iter()
        .map(|index| {
            let assignment = plan.assignment(index);
            let stack: Vec<(PerturbationKind, f64)> =
                kinds.iter().cloned().zip(assignment.iter().map(|(_, e)| *e)).collect();
            let images = source
                .images()
                .par_iter()
                .map(|img| apply_stack(img, &stack).map(|out| out.quantized()))
                .collect::<Result<Vec<_>>>()?;
            let mut dataset = LabeledDataset::new(images, source.labels().to_vec(), source.classes())?;
            if let Some(names) = source.class_names() {
                dataset = dataset.with_class_names(names.to_vec())?;
            }
            let metadata = DatasetMetadata {
                dataset_id: dataset_id(&assignment),
                source_checksum: source_checksum.clone(),
                assignment: assignment.iter().cloned().collect(),
                order: assignment.iter().map(|(f, _)| f.clone()).collect(),
                params: kinds.iter().map(|k| (k.name().to_string(), k.clone())).collect(),
                count: dataset.len(),
                crc32: dataset_checksum(&dataset)?,
            };
            Ok(DegradedDataset { assignment, dataset, metadata })
        })
        .collect()
}
