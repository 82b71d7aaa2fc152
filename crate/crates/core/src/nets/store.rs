//! On-disk network parameters: a directory holding `manifest.json` and one
//! `UILAB1` binary file per layer matrix.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LayerParams, LayerWeights, NetworkParams, Variant};
use crate::error::{Error, Result};
use crate::io::{read_matrix, write_matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub variant: Variant,
    #[serde(rename = "K")]
    pub k: usize,
    pub m: usize,
    pub n: usize,
    pub thetas: Vec<f64>,
    pub ss_counts: Vec<usize>,
    pub seed: u64,
    pub provenance: String,
    /// Matrix files per layer, relative to the directory.
    pub files: Vec<Vec<String>>,
}

pub const MANIFEST: &str = "manifest.json";

pub fn save_params(dir: impl AsRef<Path>, params: &NetworkParams) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let (m, n) = params.dims();
    let mut files = Vec::with_capacity(params.depth());
    for (k, layer) in params.layers.iter().enumerate() {
        match &layer.weights {
            LayerWeights::Full { w1, w2 } => {
                let names = vec![format!("layer{k:02}_w1.bin"), format!("layer{k:02}_w2.bin")];
                write_matrix(dir.join(&names[0]), w1)?;
                write_matrix(dir.join(&names[1]), w2)?;
                files.push(names);
            }
            LayerWeights::Coupled { w } => {
                let name = format!("layer{k:02}_w.bin");
                write_matrix(dir.join(&name), w)?;
                files.push(vec![name]);
            }
        }
    }
    let manifest = Manifest {
        variant: params.variant(),
        k: params.depth(),
        m,
        n,
        thetas: params.thetas(),
        ss_counts: params.ss_counts(),
        seed: params.seed,
        provenance: params.provenance.clone(),
        files,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_params(dir: impl AsRef<Path>) -> Result<NetworkParams> {
    let dir = dir.as_ref();
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?;
    if manifest.thetas.len() != manifest.k
        || manifest.ss_counts.len() != manifest.k
        || manifest.files.len() != manifest.k
    {
        return Err(Error::Format("manifest lists disagree with K".into()));
    }
    let mut layers = Vec::with_capacity(manifest.k);
    for k in 0..manifest.k {
        let files = &manifest.files[k];
        let weights = match (manifest.variant, files.len()) {
            (Variant::Full, 2) => LayerWeights::Full {
                w1: read_matrix(dir.join(&files[0]))?,
                w2: read_matrix(dir.join(&files[1]))?,
            },
            (Variant::Coupled, 1) => LayerWeights::Coupled {
                w: read_matrix(dir.join(&files[0]))?,
            },
            _ => return Err(Error::Format(format!("layer {k} lists the wrong number of files"))),
        };
        let layer = LayerParams {
            weights,
            theta: manifest.thetas[k],
            ss_count: manifest.ss_counts[k],
        };
        layer.check(manifest.m, manifest.n)?;
        layers.push(layer);
    }
    NetworkParams::new(layers, manifest.seed, manifest.provenance)
}
