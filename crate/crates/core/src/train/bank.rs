//! Per-domain normalization statistics: every domain owns a private copy
//! of the running statistics for each normalization layer while the
//! learned weights stay shared.

use std::fs;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ops::norm::NormStatistics;

#[derive(Debug, Clone, PartialEq)]
pub struct DomainNormBank {
    layer_channels: Vec<usize>,
    domains: Vec<Vec<NormStatistics>>,
}

impl DomainNormBank {
    /// `layer_channels[slot]` is the channel count of normalization slot
    /// `slot` in the network.
    pub fn new(layer_channels: Vec<usize>) -> Self {
        DomainNormBank {
            layer_channels,
            domains: Vec::new(),
        }
    }

    /// Registers a new domain with freshly initialized statistics and
    /// returns its id.
    pub fn register_domain(&mut self) -> usize {
        self.domains.push(
            self.layer_channels
                .iter()
                .map(|c| NormStatistics::new(*c))
                .collect(),
        );
        self.domains.len() - 1
    }

    pub fn domain_count(&self) -> usize {
        self.domains.len()
    }

    pub fn slot_count(&self) -> usize {
        self.layer_channels.len()
    }

    pub fn stats(&self, domain: usize, slot: usize) -> Result<&NormStatistics> {
        self.domains
            .get(domain)
            .ok_or(Error::UnknownDomain(domain))?
            .get(slot)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown norm slot {slot}")))
    }

    pub fn stats_mut(&mut self, domain: usize, slot: usize) -> Result<&mut NormStatistics> {
        self.domains
            .get_mut(domain)
            .ok_or(Error::UnknownDomain(domain))?
            .get_mut(slot)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown norm slot {slot}")))
    }

    pub fn domain_stats(&self, domain: usize) -> Result<&[NormStatistics]> {
        self.domains
            .get(domain)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownDomain(domain))
    }

    /// One statistics file per domain: u32 slot count, then per slot a
    /// u32 channel count followed by the means and variances as
    /// little-endian f64.
    pub fn save_domain(&self, domain: usize, path: &Path) -> Result<()> {
        let stats = self.domain_stats(domain)?;
        let mut buf = Vec::new();
        buf.extend_from_slice(&(stats.len() as u32).to_le_bytes());
        for s in stats {
            buf.extend_from_slice(&(s.channels() as u32).to_le_bytes());
            for m in &s.mean {
                buf.extend_from_slice(&m.to_le_bytes());
            }
            for v in &s.var {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load_domain(&mut self, domain: usize, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut pos = 0usize;
        let read_u32 = |pos: &mut usize| -> Result<u32> {
            if *pos + 4 > bytes.len() {
                return Err(Error::Format("statistics file truncated".into()));
            }
            let v = u32::from_le_bytes(bytes[*pos..*pos + 4].try_into().unwrap());
            *pos += 4;
            Ok(v)
        };
        let slots = read_u32(&mut pos)? as usize;
        if slots != self.layer_channels.len() {
            return Err(Error::Format(format!(
                "statistics file has {slots} slots, bank expects {}",
                self.layer_channels.len()
            )));
        }
        let mut loaded = Vec::with_capacity(slots);
        for slot in 0..slots {
            let channels = read_u32(&mut pos)? as usize;
            if channels != self.layer_channels[slot] {
                return Err(Error::Format(format!(
                    "slot {slot} has {channels} channels, bank expects {}",
                    self.layer_channels[slot]
                )));
            }
            let need = channels * 16;
            if pos + need > bytes.len() {
                return Err(Error::Format("statistics file truncated".into()));
            }
            let mut s = NormStatistics::new(channels);
            for m in s.mean.iter_mut() {
                *m = f64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
                pos += 8;
            }
            for v in s.var.iter_mut() {
                *v = f64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
                pos += 8;
            }
            loaded.push(s);
        }
        let d = self
            .domains
            .get_mut(domain)
            .ok_or(Error::UnknownDomain(domain))?;
        *d = loaded;
        Ok(())
    }
}
