//! Tensor-ordered LRU model of the shared last-level cache.
//!
//! Recency is tracked per tensor, capacity per byte: a tensor larger than
//! the free space keeps as much of itself resident as fits, and eviction
//! takes bytes from the least recently used tensor first.

use std::collections::HashMap;

/// What touching a tensor cost in DRAM traffic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Access {
    pub dram_read: u64,
    pub dram_write: u64,
}

impl std::ops::AddAssign for Access {
    fn add_assign(&mut self, o: Access) {
        self.dram_read += o.dram_read;
        self.dram_write += o.dram_write;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Line {
    resident: u64,
    dirty: bool,
    last_use: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlcState {
    capacity: u64,
    used: u64,
    clock: u64,
    lines: HashMap<usize, Line>,
}

impl LlcState {
    pub fn new(capacity: u64) -> Self {
        Self {
            capacity,
            used: 0,
            clock: 0,
            lines: HashMap::new(),
        }
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    /// Resident bytes of a tensor.
    pub fn resident(&self, tensor: usize) -> u64 {
        self.lines.get(&tensor).map_or(0, |l| l.resident)
    }

    pub fn contains(&self, tensor: usize) -> bool {
        self.resident(tensor) > 0
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    /// Frees up to `want` bytes from tensors outside `pinned`, oldest first.
    /// Dirty bytes of tensors that are still `live` are written back.
    /// Returns the bytes now free for the caller.
    fn make_room(&mut self, want: u64, pinned: &[usize], live: &dyn Fn(usize) -> bool, cost: &mut Access) -> u64 {
        while self.capacity - self.used < want {
            let Some((&victim, _)) = self
                .lines
                .iter()
                .filter(|(t, _)| !pinned.contains(t))
                .min_by_key(|(t, l)| (l.last_use, **t))
            else {
                break;
            };
            let shortfall = want - (self.capacity - self.used);
            let line = self.lines.get_mut(&victim).unwrap();
            let take = shortfall.min(line.resident);
            line.resident -= take;
            self.used -= take;
            if line.dirty && live(victim) {
                cost.dram_write += take;
            }
            if line.resident == 0 {
                self.lines.remove(&victim);
            }
        }
        (self.capacity - self.used).min(want)
    }

    fn grow(&mut self, tensor: usize, bytes: u64, dirty: bool, now: u64) {
        self.used += bytes;
        let line = self.lines.entry(tensor).or_insert(Line {
            resident: 0,
            dirty,
            last_use: now,
        });
        line.resident += bytes;
        line.dirty |= dirty;
        line.last_use = now;
        if line.resident == 0 {
            self.lines.remove(&tensor);
        }
    }

    /// Reads a `bytes`-sized input. Resident bytes hit; the rest is read
    /// from DRAM, inflated by `scale`, and kept where it fits.
    pub fn read(&mut self, tensor: usize, bytes: u64, scale: f64, pinned: &[usize], live: &dyn Fn(usize) -> bool) -> Access {
        let now = self.tick();
        let missing = bytes.saturating_sub(self.resident(tensor));
        let mut cost = Access {
            dram_read: (missing as f64 * scale).round() as u64,
            dram_write: 0,
        };
        let room = self.make_room(missing, pinned, live, &mut cost);
        self.grow(tensor, room, false, now);
        cost
    }

    /// Writes a `bytes`-sized output; what cannot be held streams to DRAM.
    pub fn write(&mut self, tensor: usize, bytes: u64, pinned: &[usize], live: &dyn Fn(usize) -> bool) -> Access {
        let now = self.tick();
        self.free(tensor);
        let mut cost = Access::default();
        let room = self.make_room(bytes, pinned, live, &mut cost);
        cost.dram_write += bytes - room;
        self.grow(tensor, room, true, now);
        cost
    }

    /// Drops a tensor nobody will read again.
    pub fn free(&mut self, tensor: usize) {
        if let Some(l) = self.lines.remove(&tensor) {
            self.used -= l.resident;
        }
    }

    /// Writes the resident part of a tensor back and marks it clean.
    pub fn flush(&mut self, tensor: usize) -> Access {
        match self.lines.get_mut(&tensor) {
            Some(l) if l.dirty => {
                l.dirty = false;
                Access {
                    dram_read: 0,
                    dram_write: l.resident,
                }
            }
            _ => Access::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn live(_: usize) -> bool {
        true
    }

    #[test]
    fn hit_after_miss() {
        let mut c = LlcState::new(100);
        assert_eq!(c.read(0, 40, 1.0, &[0], &live).dram_read, 40);
        assert_eq!(c.read(0, 40, 1.0, &[0], &live), Access::default());
    }

    #[test]
    fn lru_victim_is_written_back_when_live() {
        let mut c = LlcState::new(100);
        c.write(1, 60, &[1], &live);
        c.write(2, 30, &[2], &live);
        c.read(1, 60, 1.0, &[1], &live);
        // 2 is least recent and goes first, then part of 1
        let a = c.write(3, 50, &[3], &live);
        assert_eq!(a.dram_write, 40);
        assert!(!c.contains(2));
        assert_eq!(c.resident(1), 50);
        assert_eq!(c.used(), 100);
    }

    #[test]
    fn dead_victims_are_dropped_silently() {
        let mut c = LlcState::new(100);
        c.write(1, 80, &[1], &live);
        let a = c.write(2, 80, &[2], &|_| false);
        assert_eq!(a.dram_write, 0);
        assert_eq!(c.resident(2), 80);
        assert_eq!(c.resident(1), 20);
    }

    #[test]
    fn oversized_output_keeps_what_fits() {
        let mut c = LlcState::new(100);
        let a = c.write(7, 500, &[7], &live);
        assert_eq!(a.dram_write, 400);
        assert_eq!(c.resident(7), 100);
        let r = c.read(7, 500, 1.0, &[7], &live);
        assert_eq!(r.dram_read, 400);
    }

    #[test]
    fn pinned_tensors_survive() {
        let mut c = LlcState::new(100);
        c.read(1, 60, 1.0, &[1], &live);
        let a = c.read(2, 60, 1.0, &[1, 2], &live);
        assert_eq!(a.dram_read, 60);
        assert_eq!(c.resident(1), 60);
        assert_eq!(c.resident(2), 40);
    }

    #[test]
    fn scaled_miss_reads_more() {
        let mut c = LlcState::new(1000);
        assert_eq!(c.read(3, 10, 4.0, &[3], &live).dram_read, 40);
    }
}
