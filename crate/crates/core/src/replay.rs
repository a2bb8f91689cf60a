//! Replay buffer of sampled architectures for the supervised penalty.
//!
//! Schedule, with epochs counted from 0: nothing is stored before
//! `warmup_epochs`; afterwards each epoch appends `store_per_epoch` fresh
//! architectures until `capacity` is reached, and from then on overwrites
//! `replace_per_epoch` uniformly chosen slots per epoch.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cellspace::{Architecture, SearchSpace};
use crate::error::{Error, Result};
use crate::numkit::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplaySchedule {
    pub capacity: usize,
    pub warmup_epochs: usize,
    pub store_per_epoch: usize,
    pub replace_per_epoch: usize,
    pub supervise_start_epoch: usize,
    pub sample_size: usize,
}

impl Default for ReplaySchedule {
    fn default() -> Self {
        ReplaySchedule {
            capacity: 10_000,
            warmup_epochs: 5,
            store_per_epoch: 1000,
            replace_per_epoch: 100,
            supervise_start_epoch: 10,
            sample_size: 100,
        }
    }
}

impl ReplaySchedule {
    /// Divides every count by `divisor`; epoch markers are kept.
    pub fn scaled(&self, divisor: usize) -> Result<Self> {
        if divisor == 0 {
            return Err(Error::Config("replay divisor must be positive".into()));
        }
        let s = ReplaySchedule {
            capacity: self.capacity / divisor,
            store_per_epoch: self.store_per_epoch / divisor,
            replace_per_epoch: self.replace_per_epoch / divisor,
            sample_size: self.sample_size / divisor,
            ..*self
        };
        s.check()?;
        Ok(s)
    }

    pub fn check(&self) -> Result<()> {
        if self.capacity == 0 || self.store_per_epoch == 0 || self.sample_size == 0 {
            return Err(Error::Config(
                "replay capacity, store_per_epoch and sample_size must be positive".into(),
            ));
        }
        if self.replace_per_epoch > self.capacity {
            return Err(Error::Config("replace_per_epoch exceeds capacity".into()));
        }
        Ok(())
    }

    /// Buffer size after the tick of `epoch`, given enough fresh entries.
    pub fn size_after(&self, epoch: usize) -> usize {
        if epoch < self.warmup_epochs {
            return 0;
        }
        ((epoch - self.warmup_epochs + 1) * self.store_per_epoch).min(self.capacity)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayEntry {
    pub arch: Architecture,
    pub epoch_added: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    pub schedule: ReplaySchedule,
    entries: Vec<ReplayEntry>,
}

/// What one tick did.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TickAction {
    Idle,
    Stored(usize),
    Replaced(usize),
}

impl ReplayBuffer {
    pub fn new(schedule: ReplaySchedule) -> Result<Self> {
        schedule.check()?;
        Ok(ReplayBuffer {
            schedule,
            entries: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ReplayEntry] {
        &self.entries
    }

    /// Fresh architectures the tick of `epoch` will consume.
    pub fn fresh_needed(&self, epoch: usize) -> usize {
        let s = &self.schedule;
        if epoch < s.warmup_epochs {
            0
        } else if self.entries.len() < s.capacity {
            s.store_per_epoch.min(s.capacity - self.entries.len())
        } else {
            s.replace_per_epoch
        }
    }

    /// Whether the supervised penalty applies at `epoch`.
    pub fn supervising(&self, epoch: usize) -> bool {
        epoch >= self.schedule.supervise_start_epoch && self.entries.len() >= self.schedule.sample_size
    }

    /// Applies the epoch's schedule step. Uses the first
    /// [`fresh_needed`](Self::fresh_needed) items of `fresh`.
    pub fn tick(&mut self, epoch: usize, fresh: &[Architecture], rng: &mut Rng) -> Result<TickAction> {
        let need = self.fresh_needed(epoch);
        if fresh.len() < need {
            return Err(Error::Insufficient {
                needed: need,
                available: fresh.len(),
            });
        }
        for a in &fresh[..need] {
            a.validate()?;
        }
        let entry = |a: &Architecture| ReplayEntry {
            arch: a.clone(),
            epoch_added: epoch,
        };
        if need == 0 {
            Ok(TickAction::Idle)
        } else if self.entries.len() < self.schedule.capacity {
            self.entries.extend(fresh[..need].iter().map(entry));
            Ok(TickAction::Stored(need))
        } else {
            let slots = rng.choose_distinct(self.entries.len(), need)?;
            for (slot, a) in slots.into_iter().zip(fresh) {
                self.entries[slot] = entry(a);
            }
            Ok(TickAction::Replaced(need))
        }
    }

    /// `k` entries uniformly without replacement.
    pub fn sample(&self, rng: &mut Rng, k: usize) -> Result<Vec<Architecture>> {
        Ok(rng
            .choose_distinct(self.entries.len(), k)?
            .into_iter()
            .map(|i| self.entries[i].arch.clone())
            .collect())
    }

    /// CSV with columns `arch,epoch_added`, one row per slot in slot order.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["arch", "epoch_added"])?;
        for e in &self.entries {
            w.write_record([e.arch.canonical(), e.epoch_added.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path, space: &SearchSpace, schedule: ReplaySchedule) -> Result<Self> {
        let mut buf = ReplayBuffer::new(schedule)?;
        let mut r = csv::Reader::from_path(path)?;
        if r.headers()? != vec!["arch", "epoch_added"] {
            return Err(Error::Parse(format!("{}: unexpected replay header", path.display())));
        }
        for rec in r.records() {
            let rec = rec?;
            let epoch_added = rec[1]
                .parse()
                .map_err(|_| Error::Parse(format!("bad epoch tag {:?}", &rec[1])))?;
            buf.entries.push(ReplayEntry {
                arch: Architecture::parse(&rec[0], space)?,
                epoch_added,
            });
        }
        if buf.entries.len() > schedule.capacity {
            return Err(Error::Parse("replay dump exceeds capacity".into()));
        }
        Ok(buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cellspace::random_architecture;

    fn fresh(rng: &mut Rng, k: usize) -> Vec<Architecture> {
        let space = SearchSpace::new(4).unwrap();
        (0..k).map(|_| random_architecture(rng, &space)).collect()
    }

    #[test]
    fn default_schedule_sizes() {
        let mut rng = Rng::new(3);
        let mut buf = ReplayBuffer::new(ReplaySchedule::default()).unwrap();
        let mut sizes = Vec::new();
        for epoch in 0..17 {
            let before = buf.entries().to_vec();
            let f = fresh(&mut rng, buf.fresh_needed(epoch));
            buf.tick(epoch, &f, &mut rng).unwrap();
            sizes.push(buf.len());
            if epoch >= 15 {
                let changed = before.iter().zip(buf.entries()).filter(|(a, b)| a != b).count();
                assert_eq!(changed, 100);
            }
        }
        let mut expect = vec![0; 5];
        expect.extend((1..=10).map(|k| k * 1000));
        expect.extend([10_000, 10_000]);
        assert_eq!(sizes, expect);
    }

    #[test]
    fn divisor_scales_counts_only() {
        let s = ReplaySchedule::default().scaled(10).unwrap();
        assert_eq!(
            (s.capacity, s.store_per_epoch, s.replace_per_epoch, s.sample_size),
            (1000, 100, 10, 10)
        );
        assert_eq!((s.warmup_epochs, s.supervise_start_epoch), (5, 10));
        assert!(ReplaySchedule::default().scaled(0).is_err());
    }

    #[test]
    fn insufficient_fresh_names_count() {
        let mut buf = ReplayBuffer::new(ReplaySchedule::default()).unwrap();
        let err = buf.tick(5, &[], &mut Rng::new(0)).unwrap_err();
        assert!(err.to_string().contains("need 1000"), "{err}");
        assert!(buf.is_empty());
    }

    #[test]
    fn sample_full_draw_is_permutation() {
        let mut rng = Rng::new(8);
        let s = ReplaySchedule {
            capacity: 10,
            warmup_epochs: 0,
            store_per_epoch: 10,
            replace_per_epoch: 1,
            supervise_start_epoch: 0,
            sample_size: 10,
        };
        let mut buf = ReplayBuffer::new(s).unwrap();
        let f = fresh(&mut rng, 10);
        buf.tick(0, &f, &mut rng).unwrap();
        let mut got: Vec<String> = buf.sample(&mut rng, 10).unwrap().iter().map(|a| a.canonical()).collect();
        let mut want: Vec<String> = f.iter().map(|a| a.canonical()).collect();
        got.sort();
        want.sort();
        assert_eq!(got, want);
        assert!(buf.sample(&mut rng, 11).is_err());
        assert_eq!(buf.sample(&mut Rng::new(1), 4).unwrap(), buf.sample(&mut Rng::new(1), 4).unwrap());
    }

    #[test]
    fn csv_round_trip() {
        let mut rng = Rng::new(2);
        let s = ReplaySchedule::default().scaled(100).unwrap();
        let mut buf = ReplayBuffer::new(s).unwrap();
        for epoch in 0..8 {
            let f = fresh(&mut rng, buf.fresh_needed(epoch));
            buf.tick(epoch, &f, &mut rng).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("replay.csv");
        buf.write_csv(&path).unwrap();
        let back = ReplayBuffer::read_csv(&path, &SearchSpace::new(4).unwrap(), s).unwrap();
        assert_eq!(back, buf);
    }
}
