//! Per-scene inference results and the aggregated accuracy report.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::energynet::EnergyNet;
use crate::geometry::Pose;
use crate::harness::dataset::SceneRecord;
use crate::harness::metrics::{bin_by_occlusion, evaluate_pose, OcclusionBin};
use crate::infer::{estimate, InferConfig};
use crate::posterior::{GibbsPosterior, PoseEnergy};
use crate::seed::substream;

pub const RESULTS_HEADER: &str = "scene_id,occlusion,energy,correct,avg_vertex_distance_mm,\
r00,r01,r02,r10,r11,r12,r20,r21,r22,tx,ty,tz";

/// One line of `results.csv`. A failed inference has no pose.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scene_id: String,
    pub occlusion: f64,
    pub energy: f64,
    pub correct: bool,
    pub avg_vertex_distance: f64,
    pub pose: Option<Pose>,
}

/// MAP inference on every scene with `energy(scene, pose)` as the energy.
/// Scene `i` uses sub-stream `i` of the `infer` stream.
pub fn run_inference_with<F>(scenes: &[SceneRecord], cfg: &InferConfig, seed: u64, energy: F) -> Vec<ResultRow>
where
    F: Fn(&SceneRecord, &Pose) -> f64 + Sync,
{
    scenes
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = substream(seed, "infer", i as u64);
            let scene_energy = |p: &Pose| energy(s, p);
            match estimate(&s.observation, &s.mesh, &scene_energy, cfg, &mut rng) {
                Ok(h) => {
                    let e = evaluate_pose(&h.pose, &s.gt_pose, &s.mesh);
                    ResultRow {
                        scene_id: s.id.clone(),
                        occlusion: s.occlusion,
                        energy: h.energy,
                        correct: e.correct,
                        avg_vertex_distance: e.avg_vertex_distance,
                        pose: Some(h.pose),
                    }
                }
                Err(_) => ResultRow {
                    scene_id: s.id.clone(),
                    occlusion: s.occlusion,
                    energy: f64::INFINITY,
                    correct: false,
                    avg_vertex_distance: f64::NAN,
                    pose: None,
                },
            }
        })
        .collect()
}

pub fn run_inference(scenes: &[SceneRecord], net: &EnergyNet, cfg: &InferConfig, seed: u64) -> Vec<ResultRow> {
    run_inference_with(scenes, cfg, seed, |s, p| {
        GibbsPosterior::new(&s.observation, &s.mesh, net).energy(p)
    })
}

pub fn write_results_csv<W: Write>(rows: &[ResultRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{RESULTS_HEADER}")?;
    for r in rows {
        write!(
            out,
            "{},{},{},{},{}",
            r.scene_id, r.occlusion, r.energy, r.correct as u8, r.avg_vertex_distance
        )?;
        match &r.pose {
            Some(p) => {
                for v in p.to_array() {
                    write!(out, ",{v}")?;
                }
            }
            None => write!(out, "{}", ",NaN".repeat(12))?,
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn read_results_csv<R: BufRead>(input: R) -> Result<Vec<ResultRow>, String> {
    let mut rows = Vec::new();
    let mut lines = input.lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == RESULTS_HEADER => {}
        _ => return Err("missing or unexpected header".into()),
    }
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = n + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 17 {
            return Err(format!("line {lineno}: expected 17 fields, found {}", f.len()));
        }
        let num = |s: &str| -> Result<f64, String> {
            s.parse().map_err(|_| format!("line {lineno}: bad number {s:?}"))
        };
        let correct = match f[3] {
            "1" => true,
            "0" => false,
            other => return Err(format!("line {lineno}: bad correct flag {other:?}")),
        };
        let mut pose = [0.0; 12];
        for (p, s) in pose.iter_mut().zip(&f[5..]) {
            *p = num(s)?;
        }
        rows.push(ResultRow {
            scene_id: f[0].to_string(),
            occlusion: num(f[1])?,
            energy: num(f[2])?,
            correct,
            avg_vertex_distance: num(f[4])?,
            pose: pose.iter().all(|v| v.is_finite()).then(|| Pose::from_array(&pose)),
        });
    }
    Ok(rows)
}

/// Sequence name of a scene id: everything before the last `_`.
pub fn sequence_of(scene_id: &str) -> &str {
    scene_id.rsplit_once('_').map_or(scene_id, |(s, _)| s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub total: usize,
    pub correct: usize,
    /// `(sequence, total, correct)` in name order.
    pub sequences: Vec<(String, usize, usize)>,
    pub bins: Vec<OcclusionBin>,
}

impl Report {
    pub fn from_results(rows: &[ResultRow]) -> Self {
        let mut sequences: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for r in rows {
            let e = sequences.entry(sequence_of(&r.scene_id)).or_default();
            e.0 += 1;
            e.1 += r.correct as usize;
        }
        let pairs: Vec<(f64, bool)> = rows.iter().map(|r| (r.occlusion.clamp(0.0, 1.0), r.correct)).collect();
        Self {
            total: rows.len(),
            correct: rows.iter().filter(|r| r.correct).count(),
            sequences: sequences
                .into_iter()
                .map(|(k, (t, c))| (k.to_string(), t, c))
                .collect(),
            bins: bin_by_occlusion(&pairs),
        }
    }

    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "kind,name,lo,hi,total,correct,accuracy")?;
        writeln!(out, "overall,all,,,{},{},{}", self.total, self.correct, self.accuracy())?;
        for (name, t, c) in &self.sequences {
            writeln!(out, "sequence,{name},,,{t},{c},{}", *c as f64 / *t as f64)?;
        }
        for b in &self.bins {
            writeln!(
                out,
                "occlusion,,{},{},{},{},{}",
                b.lo,
                b.hi,
                b.total,
                b.correct,
                b.accuracy()
            )?;
        }
        Ok(())
    }
}
