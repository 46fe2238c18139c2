//! Rolling selection masks for partial sharing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `len` consecutive coordinates of a `dim`-vector starting at `start`,
/// wrapping around the end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SelectionMask {
    dim: usize,
    start: usize,
    len: usize,
}

impl SelectionMask {
    pub fn new(dim: usize, start: usize, len: usize) -> Result<Self> {
        if dim == 0 || len == 0 || len > dim {
            return Err(Error::invalid(format!(
                "mask of size {len} does not fit a {dim}-dimensional model"
            )));
        }
        Ok(Self { dim, start: start % dim, len })
    }

    pub fn full(dim: usize) -> Self {
        Self { dim, start: 0, len: dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_full(&self) -> bool {
        self.len == self.dim
    }

    /// Coordinates in window order.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).map(move |i| (self.start + i) % self.dim)
    }

    /// Coordinates in increasing order.
    pub fn indices(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.iter().collect();
        v.sort_unstable();
        v
    }

    pub fn contains(&self, j: usize) -> bool {
        j < self.dim && (j + self.dim - self.start) % self.dim < self.len
    }

    /// Circular shift of the diagonal by `by` positions.
    pub fn circshift(&self, by: usize) -> Self {
        Self { start: (self.start + by) % self.dim, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Coordination {
    /// Every client holds the same mask at a given iteration.
    Coordinated,
    /// Client `k`'s mask is offset by `m k`.
    #[default]
    Uncoordinated,
}

/// Which portion a client sends back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UplinkRule {
    /// The portion just received, refined once.
    Echo,
    /// The portion the server will send next, `S_{k,n} = M_{k,n+1}`.
    Shifted,
}

/// Downlink masks `M_{k,n}` rolling by `m` coordinates per iteration from
/// `M_{0,0} = {0, .., m-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskScheduler {
    dim: usize,
    m: usize,
    coordination: Coordination,
}

impl MaskScheduler {
    pub fn new(dim: usize, m: usize, coordination: Coordination) -> Result<Self> {
        SelectionMask::new(dim, 0, m)?;
        Ok(Self { dim, m, coordination })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn coordination(&self) -> Coordination {
        self.coordination
    }

    /// Number of iterations after which the schedule repeats.
    pub fn period(&self) -> usize {
        self.dim / gcd(self.dim, self.m)
    }

    pub fn downlink(&self, client: usize, iteration: usize) -> SelectionMask {
        let offset = match self.coordination {
            Coordination::Coordinated => iteration,
            Coordination::Uncoordinated => iteration + client,
        };
        SelectionMask {
            dim: self.dim,
            start: (offset % self.period()) * self.m % self.dim,
            len: self.m,
        }
    }

    pub fn uplink(&self, rule: UplinkRule, client: usize, iteration: usize) -> SelectionMask {
        match rule {
            UplinkRule::Echo => self.downlink(client, iteration),
            UplinkRule::Shifted => self.downlink(client, iteration + 1),
        }
    }
}

/// Downlink masks of every client at `iteration`.
pub fn advance_masks(sched: &MaskScheduler, iteration: usize, clients: usize) -> Vec<SelectionMask> {
    (0..clients).map(|k| sched.downlink(k, iteration)).collect()
}

pub fn uplink_mask(sched: &MaskScheduler, rule: UplinkRule, client: usize, iteration: usize) -> SelectionMask {
    sched.uplink(rule, client, iteration)
}

pub(crate) fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn idx(m: SelectionMask) -> Vec<usize> {
        m.indices()
    }

    #[test]
    fn coordinated_schedule() {
        let s = MaskScheduler::new(6, 2, Coordination::Coordinated).unwrap();
        let got: Vec<_> = (0..3).map(|n| idx(s.downlink(4, n))).collect();
        assert_eq!(got, vec![vec![0, 1], vec![2, 3], vec![4, 5]]);
    }

    #[test]
    fn uncoordinated_offsets() {
        let s = MaskScheduler::new(6, 2, Coordination::Uncoordinated).unwrap();
        let got: Vec<_> = advance_masks(&s, 0, 3).into_iter().map(idx).collect();
        assert_eq!(got, vec![vec![0, 1], vec![2, 3], vec![4, 5]]);
    }

    #[test]
    fn uplink_rules() {
        let c = MaskScheduler::new(6, 2, Coordination::Coordinated).unwrap();
        assert_eq!(idx(uplink_mask(&c, UplinkRule::Shifted, 0, 0)), vec![2, 3]);
        assert_eq!(idx(uplink_mask(&c, UplinkRule::Echo, 0, 0)), vec![0, 1]);
        let u = MaskScheduler::new(6, 2, Coordination::Uncoordinated).unwrap();
        assert_eq!(idx(uplink_mask(&u, UplinkRule::Shifted, 1, 0)), vec![4, 5]);
    }

    #[test]
    fn wrapping_window() {
        let m = SelectionMask::new(6, 4, 4).unwrap();
        assert_eq!(m.iter().collect::<Vec<_>>(), vec![4, 5, 0, 1]);
        assert_eq!(m.indices(), vec![0, 1, 4, 5]);
        assert!(m.contains(0) && m.contains(5) && !m.contains(2));
        assert!(SelectionMask::new(4, 0, 5).is_err());
        assert!(SelectionMask::new(4, 0, 0).is_err());
    }

    proptest! {
        #[test]
        fn circshift_period_returns_home(dim in 1usize..40, m in 1usize..40, start in 0usize..40) {
            prop_assume!(m <= dim);
            let mask = SelectionMask::new(dim, start, m).unwrap();
            let p = dim / gcd(dim, m);
            let mut shifted = mask;
            for _ in 0..p {
                shifted = shifted.circshift(m);
            }
            prop_assert_eq!(shifted, mask);
        }

        #[test]
        fn masks_cover_model_once(dm in 1usize..10, m in 1usize..8, k in 0usize..20, n0 in 0usize..100,
                                  coordinated: bool, shifted: bool) {
            let dim = dm * m;
            let coord = if coordinated { Coordination::Coordinated } else { Coordination::Uncoordinated };
            let rule = if shifted { UplinkRule::Shifted } else { UplinkRule::Echo };
            let s = MaskScheduler::new(dim, m, coord).unwrap();
            let mut hits = vec![0; dim];
            for n in n0..n0 + dim / m {
                for j in s.uplink(rule, k, n).iter() {
                    hits[j] += 1;
                }
                prop_assert_eq!(s.downlink(k, n).len(), m);
            }
            prop_assert!(hits.iter().all(|&h| h == 1));
        }

        #[test]
        fn contains_agrees_with_iter(dim in 1usize..30, start in 0usize..30, len in 1usize..30) {
            prop_assume!(len <= dim);
            let mask = SelectionMask::new(dim, start, len).unwrap();
            let set: Vec<usize> = mask.indices();
            for j in 0..dim {
                prop_assert_eq!(mask.contains(j), set.binary_search(&j).is_ok());
            }
        }
    }
}
