//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use hybridseg::events::{Event, EventStream};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Sorted random events on a `width x height` sensor with timestamps in
/// `[0, t_max]`.
pub fn random_stream(rng: &mut ChaCha8Rng, count: usize, width: u32, height: u32, t_max: u64) -> EventStream {
    let mut ts: Vec<u64> = (0..count).map(|_| rng.gen_range(0..=t_max)).collect();
    ts.sort_unstable();
    let events = ts
        .into_iter()
        .map(|t| {
            Event::new(
                rng.gen_range(0..width) as u16,
                rng.gen_range(0..height) as u16,
                t,
                if rng.gen_bool(0.5) { 1 } else { -1 },
            )
        })
        .collect();
    EventStream::new(width, height, events).unwrap()
}

/// Direct evaluation of the triangular kernel for every (event, bin) pair.
pub fn brute_force_voxel(stream: &EventStream, bins: usize, t_start: u64, t_end: u64) -> Vec<f64> {
    let (h, w) = (stream.height() as usize, stream.width() as usize);
    let mut out = vec![0.0; bins * h * w];
    for e in stream.events() {
        let tn = (e.t - t_start) as f64 / (t_end - t_start) as f64 * (bins - 1) as f64;
        for b in 0..bins {
            let k = (1.0 - (b as f64 - tn).abs()).max(0.0);
            out[(b * h + e.y as usize) * w + e.x as usize] += e.p as f64 * k;
        }
    }
    out
}

/// Label maps and metrics with a known answer: `pred=[[0,1],[1,1]]`,
/// `gt=[[0,1],[0,1]]`.
pub const HAND_PRED: [usize; 4] = [0, 1, 1, 1];
pub const HAND_GT: [usize; 4] = [0, 1, 0, 1];
