use std::collections::VecDeque;
use std::sync::Arc;

use parking_lot::Mutex;
use rand::Rng;

use super::sum_tree::SumTree;
use super::transition::Transition;
use super::ReplayConfig;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BufferKind {
    /// Bounded; evicts the oldest transition when full.
    Fifo { capacity: usize },
    /// Unbounded; filled once, then sealed.
    Expert,
}

/// One draw from a buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Sampled {
    pub id: u64,
    pub transition: Transition,
    /// `p_i^a / sum_j p_j^a` at sampling time.
    pub probability: f64,
}

/// Proportionally prioritized transition store.
///
/// Every inserted transition gets a monotonically increasing id. In the FIFO
/// buffer an id lives in slot `id % capacity` until a newer id overwrites it;
/// updates addressed to overwritten ids are counted and skipped.
#[derive(Clone, Debug)]
pub struct PrioritizedBuffer {
    kind: BufferKind,
    config: ReplayConfig,
    slots: Vec<Option<(u64, Transition)>>,
    tree: SumTree,
    order: VecDeque<u64>,
    next_id: u64,
    sealed: bool,
    stale_updates: u64,
}

impl PrioritizedBuffer {
    pub fn actor(config: ReplayConfig) -> Result<Self> {
        if config.actor_capacity == 0 {
            return Err(Error::invalid("actor buffer capacity must be positive"));
        }
        Self::new(BufferKind::Fifo { capacity: config.actor_capacity }, config)
    }

    pub fn expert(config: ReplayConfig) -> Result<Self> {
        Self::new(BufferKind::Expert, config)
    }

    fn new(kind: BufferKind, config: ReplayConfig) -> Result<Self> {
        if !(config.priority_floor > 0.0) || !(config.priority_exponent >= 0.0) || !(config.importance_exponent >= 0.0) {
            return Err(Error::invalid("replay needs a positive priority floor and nonnegative exponents"));
        }
        let initial = match kind {
            BufferKind::Fifo { capacity } => capacity,
            BufferKind::Expert => 64,
        };
        Ok(Self {
            kind,
            config,
            slots: Vec::new(),
            tree: SumTree::new(initial),
            order: VecDeque::new(),
            next_id: 0,
            sealed: false,
            stale_updates: 0,
        })
    }

    pub fn kind(&self) -> BufferKind {
        self.kind
    }

    pub fn config(&self) -> &ReplayConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    /// Freezes an expert buffer; later inserts are protocol errors.
    pub fn seal(&mut self) {
        self.sealed = true;
    }

    pub fn stale_updates(&self) -> u64 {
        self.stale_updates
    }

    /// Live ids, oldest first.
    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.order.iter().copied()
    }

    pub fn get(&self, id: u64) -> Option<&Transition> {
        let slot = self.slot_of(id)?;
        match &self.slots[slot] {
            Some((live, t)) if *live == id => Some(t),
            _ => None,
        }
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> + '_ {
        self.order.iter().filter_map(|id| self.get(*id))
    }

    /// Sum of `p_i^a` over live transitions.
    pub fn total_mass(&self) -> f64 {
        self.tree.total()
    }

    pub fn tree(&self) -> &SumTree {
        &self.tree
    }

    fn slot_of(&self, id: u64) -> Option<usize> {
        let slot = match self.kind {
            BufferKind::Fifo { capacity } => (id % capacity as u64) as usize,
            BufferKind::Expert => usize::try_from(id).ok()?,
        };
        (slot < self.slots.len()).then_some(slot)
    }

    fn mass(&self, priority: f64) -> f64 {
        priority.powf(self.config.priority_exponent)
    }

    /// Stores a transition at its own priority and returns its id.
    pub fn insert(&mut self, transition: Transition) -> Result<u64> {
        if self.sealed {
            return Err(Error::Protocol("insert into a sealed expert buffer".into()));
        }
        if !(transition.priority >= self.config.priority_floor) || !transition.priority.is_finite() {
            return Err(Error::invalid(format!(
                "priority {} is below the floor {}",
                transition.priority, self.config.priority_floor
            )));
        }
        if transition.is_best_episode && !transition.is_expert {
            return Err(Error::invalid("best-episode transitions must be expert transitions"));
        }
        let id = self.next_id;
        self.next_id += 1;
        let mass = self.mass(transition.priority);
        let slot = match self.kind {
            BufferKind::Fifo { capacity } => {
                let slot = (id % capacity as u64) as usize;
                if self.slots.len() < capacity {
                    self.slots.push(None);
                } else {
                    self.order.pop_front();
                }
                slot
            }
            BufferKind::Expert => {
                self.slots.push(None);
                self.tree.grow(self.slots.len());
                self.slots.len() - 1
            }
        };
        self.slots[slot] = Some((id, transition));
        self.tree.set(slot, mass);
        self.order.push_back(id);
        Ok(id)
    }

    /// Sets priorities to `max(floor, |p|)`. Ids that are no longer live are skipped.
    pub fn update_priorities(&mut self, ids: &[u64], priorities: &[f64]) -> Result<()> {
        if ids.len() != priorities.len() {
            return Err(Error::invalid("ids and priorities differ in length"));
        }
        for (&id, &p) in ids.iter().zip(priorities) {
            if !p.is_finite() {
                return Err(Error::NonFinite { name: format!("priority of transition {id}") });
            }
            let live = self
                .slot_of(id)
                .filter(|&slot| matches!(&self.slots[slot], Some((live, _)) if *live == id));
            let Some(slot) = live else {
                self.stale_updates += 1;
                continue;
            };
            let priority = p.abs().max(self.config.priority_floor);
            let mass = self.mass(priority);
            if let Some((_, t)) = self.slots[slot].as_mut() {
                t.priority = priority;
            }
            self.tree.set(slot, mass);
        }
        Ok(())
    }

    /// Draws `k` items with replacement, proportionally to `p^a`, one per
    /// equal-mass stratum of the cumulative distribution.
    pub fn sample_proportional(&self, k: usize, rng: &mut impl Rng) -> Result<Vec<Sampled>> {
        if self.is_empty() {
            return Err(Error::InvalidState("sampling from an empty buffer".into()));
        }
        let total = self.tree.total();
        let stratum = total / k.max(1) as f64;
        (0..k)
            .map(|i| {
                let u = stratum * (i as f64 + rng.gen::<f64>());
                let slot = self.tree.find_prefix(u)?;
                let (id, transition) = self.slots[slot]
                    .clone()
                    .ok_or_else(|| Error::InvalidState(format!("sum tree pointed at empty slot {slot}")))?;
                Ok(Sampled {
                    id,
                    probability: self.tree.get(slot) / total,
                    transition,
                })
            })
            .collect()
    }
}

/// A buffer shared between actor threads and the learner; each call holds the
/// lock for exactly one operation.
#[derive(Clone, Debug)]
pub struct SharedBuffer(Arc<Mutex<PrioritizedBuffer>>);

impl SharedBuffer {
    pub fn new(buffer: PrioritizedBuffer) -> Self {
        Self(Arc::new(Mutex::new(buffer)))
    }

    pub fn lock(&self) -> parking_lot::MutexGuard<'_, PrioritizedBuffer> {
        self.0.lock()
    }

    pub fn len(&self) -> usize {
        self.0.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.lock().is_empty()
    }

    /// Inserts a batch atomically with respect to other operations.
    pub fn insert_all(&self, transitions: Vec<Transition>) -> Result<Vec<u64>> {
        let mut guard = self.0.lock();
        transitions.into_iter().map(|t| guard.insert(t)).collect()
    }

    pub fn update_priorities(&self, ids: &[u64], priorities: &[f64]) -> Result<()> {
        self.0.lock().update_priorities(ids, priorities)
    }
}
