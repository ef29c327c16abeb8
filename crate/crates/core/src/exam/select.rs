use crate::netsim::{fnv1a64, mix64, SplitMix64};

/// In-place Fisher–Yates: for i from n-1 down to 1, swap i with a uniform
/// j in [0, i].
pub fn shuffle<T>(items: &mut [T], rng: &mut SplitMix64) {
    for i in (1..items.len()).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        items.swap(i, j);
    }
}

/// The first `count` entries of a seeded Fisher–Yates shuffle of `pool`.
/// Returns `None` when the pool is too small.
pub fn select_random<T: Clone>(pool: &[T], count: usize, seed: u64) -> Option<Vec<T>> {
    if count > pool.len() {
        return None;
    }
    let mut items = pool.to_vec();
    shuffle(&mut items, &mut SplitMix64::new(seed));
    items.truncate(count);
    Some(items)
}

/// Seed for one student's draw from an exam.
pub fn student_seed(exam_seed: u64, student: &str) -> u64 {
    mix64(exam_seed ^ fnv1a64(student.as_bytes()))
}
