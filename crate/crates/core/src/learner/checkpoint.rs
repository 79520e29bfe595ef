//! Learner checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! b"DSBMCKPT"        magic
//! u32                format version (1)
//! u32                number of agents N
//! u32                networks per agent (6)
//! N × 6 networks     actor, critic, feature, then their targets,
//!                    each in the network serialization of `nn`
//! ```
//!
//! Optimizer moments are not stored; a loaded learner restarts them.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::agent::AgentBundle;
use crate::error::{Error, Result};
use crate::nn::{read_u32, Mlp};

const MAGIC: &[u8; 8] = b"DSBMCKPT";
const VERSION: u32 = 1;
const NETS_PER_AGENT: u32 = 6;

pub fn write_checkpoint<W: Write>(bundles: &[AgentBundle], w: &mut W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(bundles.len() as u32).to_le_bytes())?;
    w.write_all(&NETS_PER_AGENT.to_le_bytes())?;
    for b in bundles {
        for net in b.nets() {
            net.write_to(w)?;
        }
    }
    Ok(())
}

/// Reads bundles back; optimizer states start fresh with `learning_rate`.
pub fn read_checkpoint<R: Read>(r: &mut R, learning_rate: f64) -> Result<Vec<AgentBundle>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short for a checkpoint header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a learner checkpoint".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let n = read_u32(r)? as usize;
    let per = read_u32(r)?;
    if per != NETS_PER_AGENT || n == 0 || n > 4096 {
        return Err(Error::Checkpoint("implausible checkpoint header".into()));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut nets = (0..NETS_PER_AGENT)
            .map(|_| Mlp::read_from(r))
            .collect::<Result<Vec<_>>>()?;
        let target_feature = nets.pop().expect("six nets");
        let target_critic = nets.pop().expect("six nets");
        let target_actor = nets.pop().expect("six nets");
        let feature = nets.pop().expect("six nets");
        let critic = nets.pop().expect("six nets");
        let actor = nets.pop().expect("six nets");
        let shapes_match = actor.same_shape(&target_actor)
            && critic.same_shape(&target_critic)
            && feature.same_shape(&target_feature);
        if !shapes_match {
            return Err(Error::Checkpoint("target and online networks differ in shape".into()));
        }
        let mut b = AgentBundle::from_nets(actor, critic, feature, learning_rate);
        b.target_actor = target_actor;
        b.target_critic = target_critic;
        b.target_feature = target_feature;
        out.push(b);
    }
    Ok(out)
}

pub fn save(bundles: &[AgentBundle], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(bundles, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path, learning_rate: f64) -> Result<Vec<AgentBundle>> {
    let f = File::open(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    read_checkpoint(&mut BufReader::new(f), learning_rate)
}
