//! `scene.json`: the spec, layer geometry and run-length encoded masks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use stereofuse::metrics::RegionMask;
use stereofuse::synth::{Layer, Scene, SceneSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedMask {
    pub width: usize,
    pub height: usize,
    /// Alternating run lengths in raster order, starting with unset pixels.
    pub runs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub spec: SceneSpec,
    pub layers: Vec<Layer>,
    pub masks: BTreeMap<String, EncodedMask>,
}

pub fn encode(mask: &RegionMask) -> EncodedMask {
    let (width, height) = mask.dims();
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0;
    for &b in mask.mask() {
        if b == current {
            len += 1;
        } else {
            runs.push(len);
            current = b;
            len = 1;
        }
    }
    runs.push(len);
    EncodedMask {
        width,
        height,
        runs,
    }
}

pub fn decode(name: &str, enc: &EncodedMask) -> stereofuse::Result<RegionMask> {
    let mut bits = Vec::with_capacity(enc.width * enc.height);
    for (i, &n) in enc.runs.iter().enumerate() {
        bits.extend(std::iter::repeat_n(i % 2 == 1, n));
    }
    RegionMask::new(name, enc.width, enc.height, bits)
}

impl SceneFile {
    pub fn from_scene(scene: &Scene) -> Self {
        SceneFile {
            spec: scene.spec.clone(),
            layers: scene.layers.clone(),
            masks: scene
                .region_masks
                .iter()
                .map(|m| (m.name.clone(), encode(m)))
                .collect(),
        }
    }

    pub fn region_masks(&self) -> stereofuse::Result<Vec<RegionMask>> {
        self.masks
            .iter()
            .map(|(name, enc)| decode(name, enc))
            .collect()
    }
}
