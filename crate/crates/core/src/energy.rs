//! FLOP-count energy estimate for floating-point baselines and the
//! comparison table built from it.

use serde::{Deserialize, Serialize};

/// Per-operation FP32 energies in nanojoules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    pub energy_per_mul_nj: f64,
    pub energy_per_add_nj: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self {
            energy_per_mul_nj: 0.928,
            energy_per_add_nj: 0.594,
        }
    }
}

impl EnergyModel {
    /// Mean of multiply and add, 0.761 nJ for the defaults.
    pub fn energy_per_flop_nj(&self) -> f64 {
        (self.energy_per_mul_nj + self.energy_per_add_nj) / 2.0
    }

    /// Energy in millijoules.
    pub fn estimate_mj(&self, flops: u64) -> f64 {
        flops as f64 * self.energy_per_flop_nj() * 1e-6
    }
}

pub fn estimate_energy(flops: u64) -> f64 {
    EnergyModel::default().estimate_mj(flops)
}

/// One row of the comparison manifest. `None` marks unpublished values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub flops: u64,
    pub size_kib: Option<f64>,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
}

/// Published baseline figures used when no manifest is supplied.
pub fn default_manifest() -> Vec<ManifestEntry> {
    let e = |name: &str, flops: u64, size: Option<f64>, acc: Option<f64>, f1: Option<f64>| ManifestEntry {
        name: name.into(),
        flops,
        size_kib: size,
        accuracy: acc,
        macro_f1: f1,
    };
    vec![
        e("TSLANet", 69_000_000, None, Some(96.06), None),
        e("Channel-Equalization-HAR", 44_000_000, Some(1600.0), Some(97.35), Some(97.12)),
        e("CNN", 35_000_000, Some(5100.0), Some(96.27), Some(96.27)),
        e("HARMamba", 11_000_000, Some(1300.0), Some(97.65), Some(97.01)),
    ]
}

pub const FLOP_CAVEAT: &str = "Note: it is not known whether the published FLOP counts cover only \
the model computation or also include preprocessing, so these energies are approximate.";

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.digits$}"))
}

/// Text table of baselines with estimated energy, followed by the caveat.
pub fn comparison_table(entries: &[ManifestEntry], model: &EnergyModel) -> String {
    let mut out = format!(
        "{:<24} {:>12} {:>10} {:>10} {:>9} {:>9}\n",
        "model", "flops", "energy_mJ", "size_KiB", "acc_%", "f1_%"
    );
    for e in entries {
        out.push_str(&format!(
            "{:<24} {:>12} {:>10.1} {:>10} {:>9} {:>9}\n",
            e.name,
            e.flops,
            model.estimate_mj(e.flops),
            opt(e.size_kib, 1),
            opt(e.accuracy, 2),
            opt(e.macro_f1, 2)
        ));
    }
    out.push('\n');
    out.push_str(FLOP_CAVEAT);
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flop_energy_is_mean() {
        let m = EnergyModel::default();
        assert!((m.energy_per_flop_nj() - 0.761).abs() < 1e-12);
    }

    #[test]
    fn published_rows() {
        for (flops, mj) in [(35_000_000, 26.6), (11_000_000, 8.4), (44_000_000, 33.5), (69_000_000, 52.5)] {
            assert!((estimate_energy(flops) - mj).abs() < 0.06, "{flops}");
        }
        assert_eq!(estimate_energy(0), 0.0);
    }

    #[test]
    fn table_lists_every_row_and_caveat() {
        let t = comparison_table(&default_manifest(), &EnergyModel::default());
        assert_eq!(t.lines().count(), 1 + 4 + 2);
        assert!(t.contains("HARMamba") && t.ends_with(&format!("{FLOP_CAVEAT}\n")));
        assert!(t.contains("33.5"));
    }
}
