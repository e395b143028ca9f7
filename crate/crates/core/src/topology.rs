//! Ring topologies over devices `1..=K`: validation, the nearest-neighbour
//! greedy ring, and exhaustive search for small instances.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radio::{Link, Placement, ScenarioConfig};
use crate::timing::t_scatter_reduce;

/// Largest instance accepted by [`brute_force_ring`].
pub const BRUTE_FORCE_MAX_DEVICES: usize = 10;

/// Successor map `r(k)`: serialized as a JSON array `a` with `a[k-1] = r(k)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct RingTopology {
    next: Vec<usize>,
}

impl RingTopology {
    /// Wraps a successor list without checking it; see [`validate_ring`].
    pub fn from_next(next: Vec<usize>) -> Self {
        RingTopology { next }
    }

    /// Ring visiting devices in `order` and closing back to `order[0]`.
    pub fn from_order(order: &[usize]) -> Result<Self> {
        let k = order.len();
        let mut next = vec![0; k];
        for (pos, &dev) in order.iter().enumerate() {
            if dev == 0 || dev > k {
                return Err(Error::invalid(format!("device {dev} outside 1..={k}")));
            }
            next[dev - 1] = order[(pos + 1) % k];
        }
        let ring = RingTopology { next };
        if validate_ring(&ring, k) {
            Ok(ring)
        } else {
            Err(Error::invalid(format!("order {order:?} is not a permutation of 1..={k}")))
        }
    }

    pub fn device_count(&self) -> usize {
        self.next.len()
    }

    /// `r(k)` for device `k` in `1..=K`.
    pub fn next(&self, k: usize) -> usize {
        self.next[k - 1]
    }

    pub fn next_slice(&self) -> &[usize] {
        &self.next
    }

    /// Directed links `(k, r(k))` in device order.
    pub fn edges(&self) -> impl Iterator<Item = Link> + '_ {
        self.next.iter().enumerate().map(|(i, &r)| (i + 1, r))
    }

    /// Devices in transmission order starting from device 1.
    pub fn order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.next.len());
        let mut k = 1;
        for _ in 0..self.next.len() {
            order.push(k);
            k = self.next(k);
        }
        order
    }

    /// Same ring traversed in the opposite direction.
    pub fn reversed(&self) -> Self {
        let mut next = vec![0; self.next.len()];
        for (k, r) in self.edges() {
            next[r - 1] = k;
        }
        RingTopology { next }
    }
}

impl TryFrom<Vec<usize>> for RingTopology {
    type Error = Error;

    fn try_from(next: Vec<usize>) -> Result<Self> {
        let k = next.len();
        let ring = RingTopology { next };
        if validate_ring(&ring, k) {
            Ok(ring)
        } else {
            Err(Error::invalid(format!("{:?} is not a single {k}-device cycle", ring.next)))
        }
    }
}

impl From<RingTopology> for Vec<usize> {
    fn from(ring: RingTopology) -> Self {
        ring.next
    }
}

/// True iff `ring` is a bijection on `1..=k` forming exactly one directed cycle.
pub fn validate_ring(ring: &RingTopology, k: usize) -> bool {
    if k == 0 || ring.next.len() != k {
        return false;
    }
    if ring.next.iter().any(|&r| r == 0 || r > k) {
        return false;
    }
    let mut seen = vec![false; k];
    let mut cur = 1;
    for _ in 0..k {
        if seen[cur - 1] {
            return false;
        }
        seen[cur - 1] = true;
        cur = ring.next[cur - 1];
    }
    // k distinct visits and back at the start: single cycle, hence a bijection
    cur == 1
}

/// Nearest-neighbour chain from device 1, closed into a ring.
/// Distance ties go to the lower device index.
pub fn greedy_ring(placement: &Placement, _config: &ScenarioConfig) -> Result<RingTopology> {
    let k = placement.device_count();
    if k < 2 {
        return Err(Error::invalid(format!("a ring needs at least 2 devices, got {k}")));
    }
    let mut visited = vec![false; k + 1];
    let mut order = Vec::with_capacity(k);
    let mut last = 1;
    visited[last] = true;
    order.push(last);
    while order.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for cand in 1..=k {
            if visited[cand] {
                continue;
            }
            let d = placement.distance_unchecked(last, cand);
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((cand, d));
            }
        }
        let (cand, _) = best.expect("unvisited device remains");
        visited[cand] = true;
        order.push(cand);
        last = cand;
    }
    RingTopology::from_order(&order)
}

fn next_permutation(xs: &mut [usize]) -> bool {
    let Some(i) = xs.windows(2).rposition(|w| w[0] < w[1]) else {
        return false;
    };
    let j = xs.iter().rposition(|&x| x > xs[i]).expect("pivot has a successor");
    xs.swap(i, j);
    xs[i + 1..].reverse();
    true
}

/// Exhaustive search over all `(K-1)!` directed rings with device 1 first.
/// Returns the ring with minimal scatter-reduce time and that time; exact
/// ties go to the lexicographically smallest successor list.
pub fn brute_force_ring(placement: &Placement, config: &ScenarioConfig) -> Result<(RingTopology, f64)> {
    let k = placement.device_count();
    if !(2..=BRUTE_FORCE_MAX_DEVICES).contains(&k) {
        return Err(Error::invalid(format!(
            "brute force supports 2..={BRUTE_FORCE_MAX_DEVICES} devices, got {k}"
        )));
    }
    // Each branch fixes the device that follows device 1.
    let branches: Vec<Result<Option<(RingTopology, f64)>>> = (2..=k)
        .into_par_iter()
        .map(|second| {
            let mut rest: Vec<usize> = (2..=k).filter(|&d| d != second).collect();
            let mut best: Option<(RingTopology, f64)> = None;
            loop {
                let mut order = Vec::with_capacity(k);
                order.push(1);
                order.push(second);
                order.extend_from_slice(&rest);
                let ring = RingTopology::from_order(&order)?;
                let (t, _) = t_scatter_reduce(placement, config, &ring)?;
                if best.as_ref().map_or(true, |b| better(&ring, t, b)) {
                    best = Some((ring, t));
                }
                if !next_permutation(&mut rest) {
                    break;
                }
            }
            Ok(best)
        })
        .collect();
    let mut best: Option<(RingTopology, f64)> = None;
    for cand in branches {
        if let Some((ring, t)) = cand? {
            if best.as_ref().map_or(true, |b| better(&ring, t, b)) {
                best = Some((ring, t));
            }
        }
    }
    Ok(best.expect("at least one ring"))
}

fn better(ring: &RingTopology, t: f64, incumbent: &(RingTopology, f64)) -> bool {
    t < incumbent.1 || (t == incumbent.1 && ring.next < incumbent.0.next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radio::Point;

    fn placement(points: &[(f64, f64)]) -> Placement {
        let devices = points.iter().map(|&(x, y)| Point::new(x, y)).collect();
        Placement::new(Point::new(500.0, 500.0), devices, 1.0).unwrap()
    }

    #[test]
    fn validate_examples() {
        assert!(validate_ring(&RingTopology::from_next(vec![2, 3, 1]), 3));
        assert!(!validate_ring(&RingTopology::from_next(vec![2, 1, 4, 3]), 4));
        assert!(validate_ring(&RingTopology::from_next(vec![2, 1]), 2));
    }

    #[test]
    fn validate_rejects_malformed() {
        assert!(!validate_ring(&RingTopology::from_next(vec![2, 3, 1]), 4));
        assert!(!validate_ring(&RingTopology::from_next(vec![1, 2]), 2));
        assert!(!validate_ring(&RingTopology::from_next(vec![2, 2, 1]), 3));
        assert!(!validate_ring(&RingTopology::from_next(vec![0, 1]), 2));
        assert!(!validate_ring(&RingTopology::from_next(vec![]), 0));
        assert!(validate_ring(&RingTopology::from_next(vec![1]), 1));
    }

    #[test]
    fn greedy_on_a_line() {
        let p = placement(&[(0.0, 0.0), (1.0, 0.0), (10.0, 0.0)]);
        let ring = greedy_ring(&p, &ScenarioConfig::default()).unwrap();
        assert_eq!(ring.next_slice(), &[2, 3, 1]);
    }

    #[test]
    fn greedy_two_devices() {
        let p = placement(&[(0.0, 0.0), (5.0, 5.0)]);
        let ring = greedy_ring(&p, &ScenarioConfig::default()).unwrap();
        assert_eq!(ring.next_slice(), &[2, 1]);
    }

    #[test]
    fn greedy_square_takes_adjacent_corner_with_lowest_index() {
        // 1 and 3 are diagonal; 2 and 4 are both adjacent to 1
        let p = placement(&[(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)]);
        let ring = greedy_ring(&p, &ScenarioConfig::default()).unwrap();
        assert_eq!(ring.order(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn greedy_needs_two_devices() {
        let p = placement(&[(0.0, 0.0)]);
        assert!(greedy_ring(&p, &ScenarioConfig::default()).is_err());
    }

    #[test]
    fn order_reverse_and_json() {
        let ring = RingTopology::from_order(&[1, 3, 4, 2]).unwrap();
        assert_eq!(ring.next_slice(), &[3, 1, 4, 2]);
        assert_eq!(ring.order(), vec![1, 3, 4, 2]);
        assert_eq!(ring.reversed().order(), vec![1, 2, 4, 3]);
        assert_eq!(serde_json::to_string(&ring).unwrap(), "[3,1,4,2]");
        let back: RingTopology = serde_json::from_str("[3,1,4,2]").unwrap();
        assert_eq!(back, ring);
        assert!(serde_json::from_str::<RingTopology>("[2,1,4,3]").is_err());
    }

    #[test]
    fn permutation_stepper_enumerates_all() {
        let mut xs = vec![1, 2, 3, 4];
        let mut n = 1;
        while next_permutation(&mut xs) {
            n += 1;
        }
        assert_eq!(n, 24);
        assert_eq!(xs, vec![4, 3, 2, 1]);
    }

    #[test]
    fn brute_force_triangle_is_orientation_free() {
        let c = ScenarioConfig::default();
        let p = placement(&[(0.0, 0.0), (30.0, 0.0), (10.0, 40.0)]);
        let (_, t) = brute_force_ring(&p, &c).unwrap();
        let (t_ref, _) = t_scatter_reduce(&p, &c, &RingTopology::from_next(vec![2, 3, 1])).unwrap();
        assert!((t - t_ref).abs() / t_ref < 1e-12);
    }

    #[test]
    fn brute_force_two_devices() {
        let c = ScenarioConfig::default();
        let p = placement(&[(0.0, 0.0), (30.0, 40.0)]);
        let (ring, t) = brute_force_ring(&p, &c).unwrap();
        assert_eq!(ring.next_slice(), &[2, 1]);
        let rate = c.total_bandwidth / 2.0 * crate::radio::spectral_efficiency(c.snr_at(50.0));
        assert!((t - 0.5 * c.model_size / rate).abs() / t < 1e-12);
    }

    #[test]
    fn brute_force_range_guard() {
        let c = ScenarioConfig::default();
        assert!(brute_force_ring(&placement(&[(0.0, 0.0)]), &c).is_err());
        let many: Vec<(f64, f64)> = (0..11).map(|i| (i as f64 * 3.0, 0.0)).collect();
        assert!(brute_force_ring(&placement(&many), &c).is_err());
    }
}
