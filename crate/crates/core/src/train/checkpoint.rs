//! Binary checkpoint format: little-endian header, named arrays, and a
//! length + CRC32 trailer.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::learner::Learner;
use super::replay::{Episode, EpisodeStep};
use super::trainer::Trainer;
use super::TrainConfig;
use crate::baselines::Variant;
use crate::env::SimConfig;
use crate::error::{Error, Result};
use crate::model::Policy;
use crate::numerics::{Adam, Parameterized};

const MAGIC: &[u8; 8] = b"MARDPGCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const TRAILER: usize = 12;

/// SHA-256 over the canonical text of every setting that shapes a run.
pub fn config_hash(variant: Variant, sim: &SimConfig, cfg: &TrainConfig) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(format!("variant={}\n", variant.as_str()));
    for (k, v) in sim.to_pairs().into_iter().chain(cfg.to_pairs()) {
        h.update(format!("{k}={v}\n"));
    }
    h.finalize().into()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub variant: Variant,
    pub epoch: u64,
    pub episodes_seen: u64,
    pub config_hash: [u8; 32],
}

enum Array {
    F64(Vec<f64>),
    U64(Vec<u64>),
}

struct Writer {
    buf: Vec<u8>,
    entries: Vec<(String, Array)>,
}

impl Writer {
    fn f64s(&mut self, name: String, data: &[f64]) {
        self.entries.push((name, Array::F64(data.to_vec())));
    }

    fn u64s(&mut self, name: String, data: Vec<u64>) {
        self.entries.push((name, Array::U64(data)));
    }

    fn model<P: Parameterized>(&mut self, prefix: &str, model: &P) {
        for t in model.tensors() {
            self.f64s(format!("{prefix}.{}", t.name), t.data);
        }
    }

    fn adam(&mut self, prefix: &str, opt: &Adam) {
        self.f64s(format!("{prefix}.m"), opt.first_moment());
        self.f64s(format!("{prefix}.v"), opt.second_moment());
        self.u64s(format!("{prefix}.step"), vec![opt.step_count()]);
    }

    fn finish(mut self) -> Vec<u8> {
        self.buf
            .extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, arr) in &self.entries {
            self.buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
            self.buf.extend_from_slice(name.as_bytes());
            match arr {
                Array::F64(v) => {
                    self.buf.push(0);
                    self.buf.extend_from_slice(&(v.len() as u64).to_le_bytes());
                    for x in v {
                        self.buf.extend_from_slice(&x.to_le_bytes());
                    }
                }
                Array::U64(v) => {
                    self.buf.push(1);
                    self.buf.extend_from_slice(&(v.len() as u64).to_le_bytes());
                    for x in v {
                        self.buf.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
        }
        let len = self.buf.len() as u64;
        self.buf.extend_from_slice(&len.to_le_bytes());
        let crc = crc32fast::hash(&self.buf);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        self.buf
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::Integrity("checkpoint is truncated".into()));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().expect("16 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
}

/// Check the trailer and return the body it protects.
fn verified_body(bytes: &[u8]) -> Result<&[u8]> {
    if bytes.len() < MAGIC.len() + TRAILER {
        return Err(Error::Integrity("checkpoint is truncated".into()));
    }
    let (rest, crc) = bytes.split_at(bytes.len() - 4);
    let stored_crc = u32::from_le_bytes(crc.try_into().expect("4 bytes"));
    if crc32fast::hash(rest) != stored_crc {
        return Err(Error::Integrity("checkpoint checksum mismatch".into()));
    }
    let (body, len) = rest.split_at(rest.len() - 8);
    let stored_len = u64::from_le_bytes(len.try_into().expect("8 bytes"));
    if stored_len != body.len() as u64 {
        return Err(Error::Integrity("checkpoint length mismatch".into()));
    }
    if &body[..MAGIC.len()] != MAGIC {
        return Err(Error::Integrity("not a checkpoint file".into()));
    }
    Ok(body)
}

fn read_header(r: &mut Reader<'_>) -> Result<CheckpointHeader> {
    r.take(MAGIC.len())?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let variant = Variant::from_code(r.u8()?)?;
    let epoch = r.u64()?;
    let episodes_seen = r.u64()?;
    let config_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    Ok(CheckpointHeader {
        version,
        variant,
        epoch,
        episodes_seen,
        config_hash,
    })
}

impl CheckpointHeader {
    /// Validate integrity and read only the header.
    pub fn read(bytes: &[u8]) -> Result<Self> {
        let body = verified_body(bytes)?;
        read_header(&mut Reader { data: body, pos: 0 })
    }
}

fn write_rng(buf: &mut Vec<u8>, rng: &ChaCha8Rng) {
    buf.extend_from_slice(&rng.get_seed());
    buf.extend_from_slice(&rng.get_stream().to_le_bytes());
    buf.extend_from_slice(&rng.get_word_pos().to_le_bytes());
}

fn read_rng(r: &mut Reader<'_>) -> Result<ChaCha8Rng> {
    use rand::SeedableRng;
    let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let stream = r.u64()?;
    let word_pos = r.u128()?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    Ok(rng)
}

fn write_learner(w: &mut Writer, i: usize, l: &Learner) {
    let p = format!("learner{i}");
    w.model(&format!("{p}.critic"), &l.critic);
    w.adam(&format!("{p}.opt.critic"), &l.critic_opt);
    w.model(&format!("{p}.target.critic"), &l.targets.critic);
    for (a, policy) in l.policies.iter().enumerate() {
        if let Some(Policy::Learned(actor)) = policy {
            w.model(&format!("{p}.actor{a}"), actor);
        }
        if let Some(opt) = &l.actor_opts[a] {
            w.adam(&format!("{p}.opt.actor{a}"), opt);
        }
        if let Some(Policy::Learned(actor)) = &l.targets.policies[a] {
            w.model(&format!("{p}.target.actor{a}"), actor);
        }
    }
    if let (Some(comm), Some(opt)) = (&l.comm, &l.comm_opt) {
        w.model(&format!("{p}.comm"), comm);
        w.adam(&format!("{p}.opt.comm"), opt);
    }
    let mut meta = vec![l.buffer.len() as u64];
    let (mut h, mut obs, mut act, mut rew) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for ep in l.buffer.iter() {
        meta.push(ep.len() as u64);
        for s in ep.steps() {
            meta.extend([s.t as u64, s.agent as u64, s.terminal as u64]);
            h.extend_from_slice(&s.h_prev);
            obs.extend_from_slice(&s.obs);
            act.extend_from_slice(&s.action);
            rew.push(s.reward);
        }
    }
    w.u64s(format!("{p}.buffer.meta"), meta);
    w.f64s(format!("{p}.buffer.h_prev"), &h);
    w.f64s(format!("{p}.buffer.obs"), &obs);
    w.f64s(format!("{p}.buffer.action"), &act);
    w.f64s(format!("{p}.buffer.reward"), &rew);
}

struct Entries {
    map: BTreeMap<String, Array>,
}

impl Entries {
    fn take(&mut self, name: &str) -> Result<Array> {
        self.map
            .remove(name)
            .ok_or_else(|| Error::Integrity(format!("checkpoint is missing {name}")))
    }

    fn f64s(&mut self, name: &str) -> Result<Vec<f64>> {
        match self.take(name)? {
            Array::F64(v) => Ok(v),
            Array::U64(_) => Err(Error::Integrity(format!("{name} has the wrong element type"))),
        }
    }

    fn u64s(&mut self, name: &str) -> Result<Vec<u64>> {
        match self.take(name)? {
            Array::U64(v) => Ok(v),
            Array::F64(_) => Err(Error::Integrity(format!("{name} has the wrong element type"))),
        }
    }

    fn model<P: Parameterized>(&mut self, prefix: &str, model: &mut P) -> Result<()> {
        let names: Vec<String> = model.tensors().into_iter().map(|t| t.name).collect();
        for (name, dst) in names.iter().zip(model.tensors_mut()) {
            let full = format!("{prefix}.{name}");
            let src = self.f64s(&full)?;
            if src.len() != dst.len() {
                return Err(Error::Integrity(format!(
                    "{full} holds {} values, expected {}",
                    src.len(),
                    dst.len()
                )));
            }
            dst.copy_from_slice(&src);
        }
        Ok(())
    }

    fn adam(&mut self, prefix: &str, opt: &mut Adam) -> Result<()> {
        let m = self.f64s(&format!("{prefix}.m"))?;
        let v = self.f64s(&format!("{prefix}.v"))?;
        let step = self.u64s(&format!("{prefix}.step"))?;
        if m.len() != opt.first_moment().len() || step.len() != 1 {
            return Err(Error::Integrity(format!(
                "{prefix} optimizer state has the wrong size"
            )));
        }
        *opt = Adam::from_state(opt.config, m, v, step[0])?;
        Ok(())
    }
}

fn read_learner(e: &mut Entries, i: usize, l: &mut Learner) -> Result<()> {
    let p = format!("learner{i}");
    e.model(&format!("{p}.critic"), &mut l.critic)?;
    e.adam(&format!("{p}.opt.critic"), &mut l.critic_opt)?;
    e.model(&format!("{p}.target.critic"), &mut l.targets.critic)?;
    for a in 0..l.policies.len() {
        if let Some(Policy::Learned(actor)) = l.policies[a].as_mut() {
            e.model(&format!("{p}.actor{a}"), actor)?;
        }
        if let Some(opt) = l.actor_opts[a].as_mut() {
            e.adam(&format!("{p}.opt.actor{a}"), opt)?;
        }
        if let Some(Policy::Learned(actor)) = l.targets.policies[a].as_mut() {
            e.model(&format!("{p}.target.actor{a}"), actor)?;
        }
    }
    if let (Some(comm), Some(opt)) = (l.comm.as_mut(), l.comm_opt.as_mut()) {
        e.model(&format!("{p}.comm"), comm)?;
        e.adam(&format!("{p}.opt.comm"), opt)?;
    }

    let bad = |what: &str| Error::Integrity(format!("{p} replay buffer: {what}"));
    let meta = e.u64s(&format!("{p}.buffer.meta"))?;
    let h = e.f64s(&format!("{p}.buffer.h_prev"))?;
    let obs = e.f64s(&format!("{p}.buffer.obs"))?;
    let act = e.f64s(&format!("{p}.buffer.action"))?;
    let rew = e.f64s(&format!("{p}.buffer.reward"))?;
    let dims = l.dims().clone();
    let (mut mi, mut hi, mut oi, mut ai, mut ri) = (1usize, 0usize, 0usize, 0usize, 0usize);
    let n_eps = *meta.first().ok_or_else(|| bad("no metadata"))? as usize;
    let next = |v: &[f64], at: &mut usize, n: usize| -> Result<Vec<f64>> {
        let s = v
            .get(*at..*at + n)
            .ok_or_else(|| bad("arrays too short"))?
            .to_vec();
        *at += n;
        Ok(s)
    };
    for _ in 0..n_eps {
        let len = *meta.get(mi).ok_or_else(|| bad("metadata too short"))? as usize;
        mi += 1;
        let mut steps = Vec::with_capacity(len);
        for _ in 0..len {
            let rec = meta.get(mi..mi + 3).ok_or_else(|| bad("metadata too short"))?;
            mi += 3;
            let agent = rec[1] as usize;
            let adim = *dims
                .action_dims
                .get(agent)
                .ok_or_else(|| bad("agent out of range"))?;
            steps.push(EpisodeStep {
                t: rec[0] as usize,
                agent,
                terminal: rec[2] != 0,
                h_prev: next(&h, &mut hi, dims.message_dim)?,
                obs: next(&obs, &mut oi, dims.obs_dim)?,
                action: next(&act, &mut ai, adim)?,
                reward: next(&rew, &mut ri, 1)?[0],
            });
        }
        l.buffer
            .push(Episode::new(steps).map_err(|e| bad(&e.to_string()))?);
    }
    if mi != meta.len() || hi != h.len() || oi != obs.len() || ai != act.len() || ri != rew.len() {
        return Err(bad("trailing data"));
    }
    Ok(())
}

impl Trainer {
    pub fn config_hash(&self) -> [u8; 32] {
        config_hash(self.variant, &self.sim, &self.cfg)
    }

    /// Serialize the complete training state.
    pub fn to_checkpoint(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.push(self.variant.code());
        buf.extend_from_slice(&(self.epoch as u64).to_le_bytes());
        buf.extend_from_slice(&(self.episodes_seen as u64).to_le_bytes());
        buf.extend_from_slice(&self.config_hash());
        match self.loss_ema {
            Some(v) => {
                buf.push(1);
                buf.extend_from_slice(&v.to_le_bytes());
            }
            None => {
                buf.push(0);
                buf.extend_from_slice(&0f64.to_le_bytes());
            }
        }
        for rng in [&self.env_rng, &self.noise_rng, &self.sample_rng] {
            write_rng(&mut buf, rng);
        }
        let mut w = Writer {
            buf,
            entries: Vec::new(),
        };
        for (i, l) in self.learners.iter().enumerate() {
            write_learner(&mut w, i, l);
        }
        w.finish()
    }

    /// Restore a trainer saved by [`Trainer::to_checkpoint`] under the same
    /// variant and configuration.
    pub fn from_checkpoint(bytes: &[u8], variant: Variant, sim: SimConfig, cfg: TrainConfig) -> Result<Self> {
        let body = verified_body(bytes)?;
        let mut r = Reader { data: body, pos: 0 };
        let header = read_header(&mut r)?;
        if header.variant != variant {
            return Err(Error::Config(format!(
                "checkpoint holds a {} run, not {}",
                header.variant.as_str(),
                variant.as_str()
            )));
        }
        let mut trainer = Trainer::new(variant, sim, cfg)?;
        if header.config_hash != trainer.config_hash() {
            return Err(Error::Config(
                "checkpoint was written under a different configuration".into(),
            ));
        }
        trainer.epoch = header.epoch as usize;
        trainer.episodes_seen = header.episodes_seen as usize;
        let has_ema = r.u8()?;
        let ema = r.f64()?;
        trainer.loss_ema = match has_ema {
            0 => None,
            1 => Some(ema),
            _ => return Err(Error::Integrity("bad loss flag".into())),
        };
        trainer.env_rng = read_rng(&mut r)?;
        trainer.noise_rng = read_rng(&mut r)?;
        trainer.sample_rng = read_rng(&mut r)?;

        let count = r.u32()? as usize;
        let mut map = BTreeMap::new();
        for _ in 0..count {
            let n = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|_| Error::Integrity("entry name is not UTF-8".into()))?
                .to_string();
            let kind = r.u8()?;
            let len = r.u64()? as usize;
            if len > (body.len() - r.pos) / 8 {
                return Err(Error::Integrity(format!("entry {name} overruns the file")));
            }
            let arr = match kind {
                0 => Array::F64((0..len).map(|_| r.f64()).collect::<Result<_>>()?),
                1 => Array::U64((0..len).map(|_| r.u64()).collect::<Result<_>>()?),
                k => return Err(Error::Integrity(format!("unknown entry kind {k}"))),
            };
            if map.insert(name.clone(), arr).is_some() {
                return Err(Error::Integrity(format!("duplicate entry {name}")));
            }
        }
        if r.pos != body.len() {
            return Err(Error::Integrity("trailing bytes after the last entry".into()));
        }
        let mut entries = Entries { map };
        for (i, l) in trainer.learners.iter_mut().enumerate() {
            read_learner(&mut entries, i, l)?;
        }
        if let Some(name) = entries.map.keys().next() {
            return Err(Error::Integrity(format!("unexpected entry {name}")));
        }
        Ok(trainer)
    }
}
