//! Set-associative cache with true LRU replacement, tracking which resident
//! lines were brought in by a prefetch and not yet demanded.

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Way {
    /// Line address + 1; zero marks an empty way.
    tag: u64,
    stamp: u64,
    /// Id of the prefetch that filled this line, zero once demanded or for
    /// demand fills.
    pf: u64,
}

/// A line pushed out by a fill.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Victim {
    pub line: u64,
    /// Nonzero when the victim was an unused prefetched line.
    pub pf: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cache {
    sets: usize,
    ways: usize,
    data: Vec<Way>,
    clock: u64,
}

impl Cache {
    pub fn new(sets: usize, ways: usize) -> Self {
        assert!(sets > 0 && ways > 0);
        Cache {
            sets,
            ways,
            data: vec![Way::default(); sets * ways],
            clock: 0,
        }
    }

    pub fn sets(&self) -> usize {
        self.sets
    }

    pub fn ways(&self) -> usize {
        self.ways
    }

    #[inline]
    fn set_of(&self, line: u64) -> std::ops::Range<usize> {
        let set = (line % self.sets as u64) as usize;
        set * self.ways..(set + 1) * self.ways
    }

    #[inline]
    fn find(&self, line: u64) -> Option<usize> {
        let tag = line.wrapping_add(1);
        let range = self.set_of(line);
        let start = range.start;
        self.data[range].iter().position(|w| w.tag == tag).map(|i| start + i)
    }

    pub fn contains(&self, line: u64) -> bool {
        line != u64::MAX && self.find(line).is_some()
    }

    /// Demand lookup. `None` on a miss; on a hit returns the id of the
    /// prefetch that brought the line in (zero if none) and clears it.
    pub fn demand_access(&mut self, line: u64) -> Option<u64> {
        let idx = self.find(line)?;
        self.clock += 1;
        let way = &mut self.data[idx];
        way.stamp = self.clock;
        Some(std::mem::take(&mut way.pf))
    }

    /// Inserts a line that is not resident, evicting the LRU way if the set
    /// is full. `pf` is the prefetch id, or zero for a demand fill.
    pub fn fill(&mut self, line: u64, pf: u64) -> Option<Victim> {
        debug_assert!(!self.contains(line));
        self.clock += 1;
        let range = self.set_of(line);
        let set = &mut self.data[range];
        let slot = match set.iter().position(|w| w.tag == 0) {
            Some(i) => i,
            None => {
                let mut lru = 0;
                for (i, w) in set.iter().enumerate() {
                    if w.stamp < set[lru].stamp {
                        lru = i;
                    }
                }
                lru
            }
        };
        let old = set[slot];
        set[slot] = Way {
            tag: line.wrapping_add(1),
            stamp: self.clock,
            pf,
        };
        (old.tag != 0).then(|| Victim {
            line: old.tag - 1,
            pf: old.pf,
        })
    }

    pub fn resident_lines(&self) -> usize {
        self.data.iter().filter(|w| w.tag != 0).count()
    }
}
