//! OSA-side processing: OSNR from spectral holes.

use crate::spectral::{db_to_lin, lin_to_db, FrequencyGrid};

/// Display floor of an empty slot at the transmitter OSA, dBm.
pub const OSA_FLOOR_DBM: f64 = -70.0;

/// Per-slot OSNR (dB, reference bandwidth) from an OSA trace with blocked
/// slots. Each blocked slot gives the noise floor; floors are interpolated in
/// dB between holes and held flat beyond the outermost holes. Blocked slots
/// take the mean OSNR of their unblocked neighbours.
pub fn hole_osnr(osa_dbm: &[f64], blocked: &[usize], grid: &FrequencyGrid) -> Vec<f64> {
    let n = osa_dbm.len();
    let k = grid.slot_to_ref();
    let mut holes: Vec<usize> = blocked.iter().copied().filter(|&h| h < n).collect();
    holes.sort_unstable();
    holes.dedup();
    if holes.is_empty() {
        return vec![f64::NAN; n];
    }
    let floor_db = |h: usize| osa_dbm[h] - lin_to_db(k);
    let floor_at = |i: usize| -> f64 {
        let right = holes.partition_point(|&h| h < i);
        if right == 0 {
            floor_db(holes[0])
        } else if right == holes.len() {
            floor_db(holes[holes.len() - 1])
        } else {
            let (a, b) = (holes[right - 1], holes[right]);
            let t = (i - a) as f64 / (b - a) as f64;
            floor_db(a) * (1.0 - t) + floor_db(b) * t
        }
    };
    let mut osnr: Vec<f64> = (0..n)
        .map(|i| {
            if holes.binary_search(&i).is_ok() {
                return f64::NAN;
            }
            let floor = db_to_lin(floor_at(i));
            let sig = (db_to_lin(osa_dbm[i]) - floor * k).max(floor * 1e-6);
            lin_to_db(sig / floor)
        })
        .collect();
    for &h in &holes {
        let neigh: Vec<f64> = [h.checked_sub(1), Some(h + 1)]
            .into_iter()
            .flatten()
            .filter(|&j| j < n && osnr[j].is_finite())
            .map(|j| osnr[j])
            .collect();
        if !neigh.is_empty() {
            osnr[h] = neigh.iter().sum::<f64>() / neigh.len() as f64;
        }
    }
    osnr
}

/// Slots carrying signal (complement of the blocked set).
pub fn signal_slots(n: usize, blocked: &[usize]) -> Vec<usize> {
    (0..n).filter(|i| !blocked.contains(i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_floor_recovers_osnr() {
        let g = FrequencyGrid::default();
        let k = g.slot_to_ref();
        // signal 0 dBm, ASE -30 dBm / 0.1 nm in every slot
        let ase = db_to_lin(-30.0);
        let blocked = [2usize, 20, 37];
        let osa: Vec<f64> =
            (0..40).map(|i| if blocked.contains(&i) { lin_to_db(ase * k) } else { lin_to_db(1.0 + ase * k) }).collect();
        let o = hole_osnr(&osa, &blocked, &g);
        for (i, v) in o.iter().enumerate() {
            assert!((v - 30.0).abs() < 1e-9, "slot {i}: {v}");
        }
    }

    #[test]
    fn no_holes_no_osnr() {
        let g = FrequencyGrid::default();
        assert!(hole_osnr(&[0.0; 40], &[], &g).iter().all(|v| v.is_nan()));
    }
}
