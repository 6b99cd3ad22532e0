//! Indexed binary min-heap of tentative event times.

/// Min-heap over a fixed set of channels keyed by their next firing time.
///
/// Every channel is always present; a channel that cannot fire carries
/// `f64::INFINITY`. Updating a key is `O(log n)`.
#[derive(Debug, Clone)]
pub struct EventQueue {
    times: Vec<f64>,
    /// heap[slot] = channel
    heap: Vec<usize>,
    /// position[channel] = slot
    position: Vec<usize>,
}

impl EventQueue {
    pub fn new(times: Vec<f64>) -> Self {
        let n = times.len();
        let mut q = EventQueue {
            times,
            heap: (0..n).collect(),
            position: (0..n).collect(),
        };
        for slot in (0..n / 2).rev() {
            q.sift_down(slot);
        }
        q
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Channel with the smallest time, and that time.
    pub fn peek(&self) -> Option<(usize, f64)> {
        self.heap.first().map(|&c| (c, self.times[c]))
    }

    pub fn time(&self, channel: usize) -> f64 {
        self.times[channel]
    }

    pub fn update(&mut self, channel: usize, time: f64) {
        let old = self.times[channel];
        self.times[channel] = time;
        let slot = self.position[channel];
        if time < old {
            self.sift_up(slot);
        } else {
            self.sift_down(slot);
        }
    }

    fn less(&self, a: usize, b: usize) -> bool {
        let (ca, cb) = (self.heap[a], self.heap[b]);
        // ties broken by channel index so the order is fully deterministic
        (self.times[ca], ca) < (self.times[cb], cb)
    }

    fn swap(&mut self, a: usize, b: usize) {
        self.heap.swap(a, b);
        self.position[self.heap[a]] = a;
        self.position[self.heap[b]] = b;
    }

    fn sift_up(&mut self, mut slot: usize) {
        while slot > 0 {
            let parent = (slot - 1) / 2;
            if !self.less(slot, parent) {
                break;
            }
            self.swap(slot, parent);
            slot = parent;
        }
    }

    fn sift_down(&mut self, mut slot: usize) {
        let n = self.heap.len();
        loop {
            let (l, r) = (2 * slot + 1, 2 * slot + 2);
            let mut best = slot;
            if l < n && self.less(l, best) {
                best = l;
            }
            if r < n && self.less(r, best) {
                best = r;
            }
            if best == slot {
                break;
            }
            self.swap(slot, best);
            slot = best;
        }
    }
}
