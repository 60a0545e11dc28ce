//! Collected episodes and their on-disk layout.
//!
//! A dataset directory holds `manifest.txt` plus, per episode, a frame dump
//! `episode_NNNN.frames` (observations `0..=T`) and a named-array file
//! `episode_NNNN.arrays` with `action [T, 2]`, `metrics [T+1, 4]`,
//! `reward [T]` and `scenario [4]`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write as _};
use std::path::Path;

use drivesim::{read_frame_dump, write_frame_dump, Action, Difficulty, Frame, StepMetrics, Termination};
use ndgrad::{NamedArrays, Tensor};

use super::artifacts::{load_stamped, save_stamped, write_atomic};
use super::rollout::Scenario;
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.txt";
const MANIFEST_HEADER: &str = "index,track_seed,difficulty,palette_seed,start_offset,steps,termination,return";

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub scenario: Scenario,
    /// Observations `0..=T`; frame `t` is what action `t` was chosen from.
    pub frames: Vec<Frame>,
    pub actions: Vec<Action>,
    /// Metrics `0..=T`, entry 0 at reset.
    pub metrics: Vec<StepMetrics>,
    pub rewards: Vec<f64>,
    pub termination: Termination,
}

impl EpisodeRecord {
    pub fn steps(&self) -> usize {
        self.actions.len()
    }

    pub fn total_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.actions.len();
        if t == 0 || self.frames.len() != t + 1 || self.metrics.len() != t + 1 || self.rewards.len() != t {
            return Err(Error::Input(format!(
                "episode with {} frames, {} actions, {} metrics, {} rewards",
                self.frames.len(),
                t,
                self.metrics.len(),
                self.rewards.len()
            )));
        }
        if self.termination == Termination::Running {
            return Err(Error::Input("episode has no termination cause".into()));
        }
        Ok(())
    }
}

fn difficulty_code(d: Difficulty) -> f64 {
    match d {
        Difficulty::Train => 0.0,
        Difficulty::Test => 1.0,
    }
}

fn termination_code(t: Termination) -> f64 {
    match t {
        Termination::Running => 0.0,
        Termination::Success => 1.0,
        Termination::Collision => 2.0,
        Termination::Timeout => 3.0,
    }
}

fn termination_of(code: f64) -> Result<Termination> {
    Ok(match code as i64 {
        0 => Termination::Running,
        1 => Termination::Success,
        2 => Termination::Collision,
        3 => Termination::Timeout,
        _ => return Err(Error::Shape(format!("termination code {code}"))),
    })
}

fn episode_stem(i: usize) -> String {
    format!("episode_{i:04}")
}

fn to_arrays(ep: &EpisodeRecord) -> NamedArrays {
    let t = ep.steps();
    let tensor = |shape: Vec<usize>, data: Vec<f64>| Tensor::from_vec(shape, data).expect("episode is non-empty");
    let mut a = NamedArrays::new();
    let s = &ep.scenario;
    a.insert(
        "scenario",
        tensor(
            vec![4],
            vec![s.track_seed as f64, difficulty_code(s.difficulty), s.palette_seed as f64, s.start_offset],
        ),
    );
    a.insert("action", tensor(vec![t, 2], ep.actions.iter().flat_map(|a| [a.steer, a.throttle_brake]).collect()));
    a.insert("metrics", tensor(vec![t + 1, 4], ep.metrics.iter().flat_map(|m| [m.d, m.v, m.s, m.o]).collect()));
    a.insert("reward", tensor(vec![t], ep.rewards.clone()));
    a.insert("termination", tensor(vec![1], vec![termination_code(ep.termination)]));
    a
}

fn from_arrays(a: &NamedArrays, frames: Vec<Frame>) -> Result<EpisodeRecord> {
    let sc = a.require("scenario")?.data();
    let act = a.require("action")?;
    let met = a.require("metrics")?;
    if sc.len() != 4 || act.rank() != 2 || act.shape()[1] != 2 || met.rank() != 2 || met.shape()[1] != 4 {
        return Err(Error::Shape("malformed episode arrays".into()));
    }
    let ep = EpisodeRecord {
        scenario: Scenario {
            track_seed: sc[0] as u64,
            difficulty: if sc[1] == 0.0 { Difficulty::Train } else { Difficulty::Test },
            palette_seed: sc[2] as u64,
            start_offset: sc[3],
        },
        frames,
        actions: act.data().chunks(2).map(|c| Action::new(c[0], c[1])).collect(),
        metrics: met
            .data()
            .chunks(4)
            .map(|c| StepMetrics {
                d: c[0],
                v: c[1],
                s: c[2],
                o: c[3],
            })
            .collect(),
        rewards: a.require("reward")?.data().to_vec(),
        termination: termination_of(a.require("termination")?.data()[0])?,
    };
    ep.validate()?;
    Ok(ep)
}

/// Write every episode and then the manifest, which names the config hash.
pub fn save_dataset(dir: &Path, episodes: &[EpisodeRecord], hash: &[u8; 32]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = format!("# config_hash={}\n{MANIFEST_HEADER}\n", hex::encode(hash));
    for (i, ep) in episodes.iter().enumerate() {
        ep.validate()?;
        let stem = episode_stem(i);
        write_frames(&dir.join(format!("{stem}.frames")), &ep.frames)?;
        save_stamped(&dir.join(format!("{stem}.arrays")), to_arrays(ep), hash)?;
        let s = &ep.scenario;
        manifest.push_str(&format!(
            "{i},{},{},{},{},{},{},{}\n",
            s.track_seed,
            match s.difficulty {
                Difficulty::Train => "train",
                Difficulty::Test => "test",
            },
            s.palette_seed,
            s.start_offset,
            ep.steps(),
            ep.termination.as_str(),
            ep.total_return()
        ));
    }
    write_atomic(&dir.join(MANIFEST), manifest.as_bytes())
}

/// Number of episodes listed in the manifest, after checking its hash.
pub fn dataset_len(dir: &Path, hash: &[u8; 32]) -> Result<usize> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|_| {
        Error::Dependency(format!("collect artifact {} not found; run the collect stage first", path.display()))
    })?;
    let mut lines = text.lines();
    if lines.next() != Some(format!("# config_hash={}", hex::encode(hash)).as_str()) {
        return Err(Error::Dependency(format!(
            "collect artifact {} was built from a different config",
            path.display()
        )));
    }
    Ok(lines.skip(1).filter(|l| !l.trim().is_empty()).count())
}

pub fn load_episode(dir: &Path, i: usize, hash: &[u8; 32]) -> Result<EpisodeRecord> {
    let stem = episode_stem(i);
    let arrays = load_stamped(&dir.join(format!("{stem}.arrays")), hash, "collect")?;
    from_arrays(&arrays, read_frames(&dir.join(format!("{stem}.frames")))?)
}

pub fn load_dataset(dir: &Path, hash: &[u8; 32]) -> Result<Vec<EpisodeRecord>> {
    (0..dataset_len(dir, hash)?).map(|i| load_episode(dir, i, hash)).collect()
}

/// Write frames as one concatenated frame dump.
pub fn write_frames(path: &Path, frames: &[Frame]) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut w = BufWriter::new(&mut buf);
        for f in frames {
            write_frame_dump(&mut w, f)?;
        }
        w.flush()?;
    }
    write_atomic(path, &buf)
}

pub fn read_frames(path: &Path) -> Result<Vec<Frame>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut frames = Vec::new();
    while let Some(f) = read_frame_dump(&mut r)? {
        frames.push(f);
    }
    Ok(frames)
}
