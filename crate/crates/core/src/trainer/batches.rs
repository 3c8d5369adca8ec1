use crate::data::Record;
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Endless shuffled walk over a corpus. Each pass uses its own shuffle,
/// seeded from the stream seed and the pass number.
#[derive(Clone, Debug)]
pub struct BatchStream<'a> {
    records: &'a [Record],
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
    seed: u64,
}

impl<'a> BatchStream<'a> {
    pub fn new(records: &'a [Record], seed: u64) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::contract("cannot draw batches from an empty corpus"));
        }
        let mut s = BatchStream {
            records,
            order: (0..records.len()).collect(),
            pos: 0,
            epoch: 0,
            seed,
        };
        s.shuffle();
        Ok(s)
    }

    fn shuffle(&mut self) {
        self.order.sort_unstable();
        Rng::derive(self.seed, self.epoch).shuffle(&mut self.order);
    }

    /// Passes started so far, counting the first as 0.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// The next `n` records; wraps into a reshuffled pass when the corpus runs
    /// out. Returns the batch and whether a new pass began.
    pub fn next_batch(&mut self, n: usize) -> (Vec<&'a Record>, bool) {
        let mut out = Vec::with_capacity(n);
        let mut wrapped = false;
        while out.len() < n {
            if self.pos == self.order.len() {
                self.epoch += 1;
                self.pos = 0;
                self.shuffle();
                wrapped = true;
            }
            out.push(&self.records[self.order[self.pos]]);
            self.pos += 1;
        }
        (out, wrapped)
    }
}
