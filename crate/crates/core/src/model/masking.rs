use rand::Rng;

use super::params::{TokenId, MASK};

/// Replaces `round(rate·n)` uniformly chosen positions (at least one for a
/// positive rate) with MASK. Returns the masked ids and the sorted masked
/// positions.
pub fn apply_source_mask<R: Rng + ?Sized>(
    source: &[TokenId],
    mask_rate: f64,
    rng: &mut R,
) -> (Vec<TokenId>, Vec<usize>) {
    let n = source.len();
    let rate = mask_rate.clamp(0.0, 1.0);
    let count = if rate == 0.0 || n == 0 { 0 } else { ((rate * n as f64).round() as usize).clamp(1, n) };
    let mut positions = rand::seq::index::sample(rng, n, count).into_vec();
    positions.sort_unstable();
    let mut masked = source.to_vec();
    for &p in &positions {
        masked[p] = MASK;
    }
    (masked, positions)
}
