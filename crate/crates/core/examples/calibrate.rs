//! Re-derive the frozen peripheral constants from full-size polynomial
//! multiplication counts.

use hepim::bench::{
    calibrate_peripheral, polymult_cost, svm_benchmark_counts, POLYMULT_TARGETS, SVM_BENCHMARKS,
};
use hepim::pim::{EnergyModel, MtjParams, PeripheralModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut points = vec![];
    for (n, bits, target) in POLYMULT_TARGETS {
        let c = polymult_cost(n, bits)?;
        println!(
            "N={n} bits={bits} q={} cycles={} slots={} peak_cols={}",
            c.q, c.cycles, c.counts.slots, c.peak_columns
        );
        points.push((c.counts, target));
    }
    let ratio = PeripheralModel::CALIBRATED.read_current_ratio;
    let fit = calibrate_peripheral(&[points[0], points[1]], &MtjParams::projected(), ratio)?;
    println!("fraction = {:e}", fit.fraction);
    println!("fixed_per_instruction = {:e}", fit.fixed_per_instruction);
    for b in SVM_BENCHMARKS {
        let c = svm_benchmark_counts(&b)?;
        for mtj in [MtjParams::modern(), MtjParams::projected()] {
            let em = EnergyModel::new(mtj, fit, 1.0);
            println!(
                "{} {}: cycles={} energy={:.4e} J",
                b.name,
                em.mtj.name,
                c.cycles,
                em.energy(&c)
            );
        }
    }
    Ok(())
}
