use std::io::Write;
use std::path::Path;

use super::dqn::Teacher;
use crate::adversary::csv_err;
use crate::envs::{rollout, EnvKind, ObsNormalizer};
use crate::error::{Error, Result};
use crate::numerics::{read_f64, read_string, read_u32, read_u64, write_string};
use crate::rng::derive_seed;
use crate::scorer::Scorer;

pub const DATASET_MAGIC: &[u8; 4] = b"SRTD";
pub const DATASET_VERSION: u32 = 1;

/// `(normalized clean state, expert action)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertDataset {
    pub env: EnvKind,
    pub num_actions: usize,
    pub obs_dim: usize,
    pub normalizer: ObsNormalizer,
    /// Row-major `[len, obs_dim]`.
    pub states: Vec<f64>,
    pub actions: Vec<usize>,
}

/// Seed of dataset episode `i`.
pub fn dataset_episode_seed(seed: u64, i: usize) -> u64 {
    derive_seed(seed, "dataset-episode", i as u64)
}

impl ExpertDataset {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.len() != self.actions.len() * self.obs_dim {
            return Err(Error::Format("dataset state block does not match its count".into()));
        }
        if let Some(a) = self.actions.iter().find(|&&a| a >= self.num_actions) {
            return Err(Error::Format(format!("action {a} out of range for {} actions", self.num_actions)));
        }
        if self.normalizer.dim() != self.obs_dim {
            return Err(Error::Format("normalizer dimension does not match observations".into()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.states.len() * 8 + self.actions.len() * 4);
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        write_string(&mut out, self.env.name()).expect("writing to a vector");
        out.extend_from_slice(&(self.num_actions as u32).to_le_bytes());
        out.extend_from_slice(&(self.obs_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for v in self.normalizer.mean().iter().chain(self.normalizer.var()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for i in 0..self.len() {
            for v in self.state(i) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&(self.actions[i] as u32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(mut r: &[u8]) -> Result<Self> {
        if r.len() < 4 || &r[..4] != DATASET_MAGIC {
            return Err(Error::Format("not a dataset file (bad magic)".into()));
        }
        r = &r[4..];
        let version = read_u32(&mut r)?;
        if version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let env: EnvKind = read_string(&mut r)?.parse()?;
        let num_actions = read_u32(&mut r)? as usize;
        let obs_dim = read_u32(&mut r)? as usize;
        let count = read_u64(&mut r)? as usize;
        let record = obs_dim * 8 + 4;
        if r.len() != 2 * obs_dim * 8 + count.saturating_mul(record) {
            return Err(Error::Format("dataset length does not match its header".into()));
        }
        let read_vec = |n: usize, r: &mut &[u8]| (0..n).map(|_| read_f64(r)).collect::<Result<Vec<_>>>();
        let mean = read_vec(obs_dim, &mut r)?;
        let var = read_vec(obs_dim, &mut r)?;
        let mut states = Vec::with_capacity(count * obs_dim);
        let mut actions = Vec::with_capacity(count);
        for _ in 0..count {
            states.extend(read_vec(obs_dim, &mut r)?);
            actions.push(read_u32(&mut r)? as usize);
        }
        let ds = Self {
            env,
            num_actions,
            obs_dim,
            normalizer: ObsNormalizer::from_stats(mean, var)?,
            states,
            actions,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        match std::fs::read(path) {
            Ok(bytes) => Self::from_bytes(&bytes),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingArtifact(path.to_path_buf())),
            Err(e) => Err(e.into()),
        }
    }

    /// Same content as the binary file: a `meta` row (action count, env
    /// name), `mean` and `var` rows, then one `state` row per pair.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["kind".to_string(), "action".to_string()];
        header.extend((0..self.obs_dim).map(|i| format!("s{i}")));
        w.write_record(&header).map_err(csv_err)?;
        let mut meta = vec!["meta".to_string(), self.num_actions.to_string(), self.env.name().to_string()];
        meta.resize(header.len(), String::new());
        w.write_record(&meta).map_err(csv_err)?;
        for (kind, values) in [("mean", self.normalizer.mean()), ("var", self.normalizer.var())] {
            let row = [kind.to_string(), String::new()]
                .into_iter()
                .chain(values.iter().map(|v| v.to_string()));
            w.write_record(row).map_err(csv_err)?;
        }
        for i in 0..self.len() {
            let row = ["state".to_string(), self.actions[i].to_string()]
                .into_iter()
                .chain(self.state(i).iter().map(|v| v.to_string()));
            w.write_record(row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Rolls out the greedy teacher in the clean environment and records every
/// visited normalized state with its action, episode after episode, until
/// `n_states` pairs exist. Episode `i` uses [`dataset_episode_seed`].
pub fn build_dataset(teacher: &Teacher, n_states: usize, seed: u64) -> Result<ExpertDataset> {
    if !teacher.is_trained() {
        return Err(Error::usage("the teacher is untrained; train it before building a dataset"));
    }
    if !teacher.normalizer.is_frozen() {
        return Err(Error::usage("the teacher's observation normalizer must be frozen"));
    }
    let mut env = teacher.env.make();
    let obs_dim = env.obs_dim();
    let mut states = Vec::with_capacity(n_states * obs_dim);
    let mut actions = Vec::with_capacity(n_states);
    let mut episode = 0;
    while actions.len() < n_states {
        let traj = rollout(teacher, env.as_mut(), &teacher.normalizer, None, dataset_episode_seed(seed, episode))?;
        for t in traj.steps {
            if actions.len() == n_states {
                break;
            }
            states.extend(t.state);
            actions.push(t.action);
        }
        episode += 1;
    }
    Ok(ExpertDataset {
        env: teacher.env,
        num_actions: teacher.num_actions(),
        obs_dim,
        normalizer: teacher.normalizer.clone(),
        states,
        actions,
    })
}
