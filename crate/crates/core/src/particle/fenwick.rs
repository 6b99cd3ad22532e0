/// Binary indexed tree over nonnegative integer counts, used to pick a
/// particle uniformly at random by voxel.
#[derive(Debug, Clone)]
pub struct Fenwick {
    tree: Vec<u64>,
    total: u64,
}

impl Fenwick {
    pub fn new(counts: &[u32]) -> Self {
        let n = counts.len();
        let mut tree = vec![0u64; n + 1];
        for (i, &c) in counts.iter().enumerate() {
            tree[i + 1] += c as u64;
            let parent = (i + 1) + ((i + 1) & (i + 1).wrapping_neg());
            if parent <= n {
                tree[parent] += tree[i + 1];
            }
        }
        let total = counts.iter().map(|&c| c as u64).sum();
        Fenwick { tree, total }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn add(&mut self, index: usize, delta: i64) {
        self.total = (self.total as i64 + delta) as u64;
        let mut i = index + 1;
        while i < self.tree.len() {
            self.tree[i] = (self.tree[i] as i64 + delta) as u64;
            i += i & i.wrapping_neg();
        }
    }

    /// Smallest index whose inclusive prefix sum exceeds `target`
    /// (`target < total`).
    pub fn find(&self, mut target: u64) -> usize {
        let n = self.tree.len() - 1;
        let mut pos = 0;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= target {
                target -= self.tree[next];
                pos = next;
            }
            step >>= 1;
        }
        pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn find_matches_linear_scan(counts in prop::collection::vec(0u32..5, 1..50), pick in 0u64..1000) {
            let f = Fenwick::new(&counts);
            let total: u64 = counts.iter().map(|&c| c as u64).sum();
            prop_assume!(total > 0);
            let target = pick % total;
            let mut acc = 0u64;
            let expected = counts.iter().position(|&c| { acc += c as u64; acc > target }).unwrap();
            prop_assert_eq!(f.find(target), expected);
        }
    }

    #[test]
    fn add_moves_mass() {
        let mut f = Fenwick::new(&[0, 2, 0, 1]);
        f.add(1, -2);
        f.add(2, 1);
        assert_eq!(f.total(), 2);
        assert_eq!(f.find(0), 2);
        assert_eq!(f.find(1), 3);
    }
}
