//! On-disk scene layout: `frames/NNNNN.ppm`, `truth.jsonl`,
//! `flow/RRRRR_SSSSS.flo` for every adjacent pair, and `manifest.json`.

use crate::error::{Error, Result};
use crate::flow::{flo_pair_name, write_flo};
use crate::image_io::{read_ppm, write_ppm};
use crate::synth::{render_scene, scene_truth, truth_flow_full, SceneSpec, SceneTruth, TruthBox};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

pub const MANIFEST: &str = "manifest.json";
pub const TRUTH: &str = "truth.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub seed: u64,
    pub suite: Option<String>,
    pub spec: SceneSpec,
}

/// A scene loaded from disk.
#[derive(Clone, Debug)]
pub struct Scene {
    pub dir: PathBuf,
    pub frames: Vec<Tensor>,
    pub truth_boxes: Vec<TruthBox>,
    /// Present for generated scenes; enables exact flow.
    pub manifest: Option<Manifest>,
}

impl Scene {
    pub fn truth(&self) -> Result<Option<SceneTruth>> {
        self.manifest.as_ref().map(|m| scene_truth(&m.spec)).transpose()
    }
}

fn io_err<'a>(path: &'a Path, what: &str) -> impl FnOnce(std::io::Error) -> Error + 'a {
    let what = what.to_string();
    move |e| Error::io(format!("{what} {}", path.display()), e)
}

pub fn frame_path(dir: &Path, t: usize) -> PathBuf {
    dir.join("frames").join(format!("{t:05}.ppm"))
}

pub fn flow_dir(dir: &Path) -> PathBuf {
    dir.join("flow")
}

pub fn truth_jsonl(boxes: &[TruthBox]) -> Result<String> {
    let mut s = String::new();
    for b in boxes {
        s.push_str(&serde_json::to_string(b)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn parse_truth_jsonl(text: &str) -> Result<Vec<TruthBox>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Into::into))
        .collect()
}

/// Renders `spec` and writes the full scene directory.
pub fn write_scene(dir: &Path, spec: &SceneSpec, suite: Option<&str>, with_flow: bool) -> Result<SceneTruth> {
    let (frames, truth) = render_scene(spec)?;
    fs::create_dir_all(dir.join("frames")).map_err(io_err(dir, "creating"))?;
    for (t, f) in frames.iter().enumerate() {
        write_ppm(&frame_path(dir, t), f)?;
    }
    let tp = dir.join(TRUTH);
    fs::write(&tp, truth_jsonl(&truth.boxes)?).map_err(io_err(&tp, "writing"))?;
    if with_flow {
        let fd = flow_dir(dir);
        fs::create_dir_all(&fd).map_err(io_err(&fd, "creating"))?;
        for t in 0..spec.frame_count.saturating_sub(1) {
            let flow = truth_flow_full(&truth, t, 1)?;
            write_flo(&fd.join(format!("{}.flo", flo_pair_name(t, t + 1))), &flow)?;
        }
    }
    let manifest = Manifest {
        format: 1,
        seed: spec.seed,
        suite: suite.map(str::to_string),
        spec: spec.clone(),
    };
    let mp = dir.join(MANIFEST);
    fs::write(&mp, serde_json::to_string_pretty(&manifest)?).map_err(io_err(&mp, "writing"))?;
    Ok(truth)
}

pub fn load_truth(dir: &Path) -> Result<Vec<TruthBox>> {
    let tp = dir.join(TRUTH);
    parse_truth_jsonl(&fs::read_to_string(&tp).map_err(io_err(&tp, "reading"))?)
}

pub fn load_scene(dir: &Path) -> Result<Scene> {
    let mut frames = Vec::new();
    loop {
        let p = frame_path(dir, frames.len());
        if !p.exists() {
            break;
        }
        frames.push(read_ppm(&p)?);
    }
    if frames.is_empty() {
        return Err(Error::Validation(format!("no frames under {}", dir.join("frames").display())));
    }
    if frames.iter().any(|f| f.shape() != frames[0].shape()) {
        return Err(Error::Validation(format!("frames in {} differ in size", dir.display())));
    }
    let truth_boxes = if dir.join(TRUTH).exists() { load_truth(dir)? } else { Vec::new() };
    let mp = dir.join(MANIFEST);
    let manifest = if mp.exists() {
        Some(serde_json::from_str(&fs::read_to_string(&mp).map_err(io_err(&mp, "reading"))?)?)
    } else {
        None
    };
    Ok(Scene {
        dir: dir.to_path_buf(),
        frames,
        truth_boxes,
        manifest,
    })
}
