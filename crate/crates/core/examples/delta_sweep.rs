// Sharing ratio per layer as the threshold rises, on one fixed set of networks.

use mtal::data::{InputDims, TaskShape};
use mtal::experiments::ratios_by_delta;
use mtal::network::{MtalConfig, MtalSystem};

fn main() -> mtal::Result<()> {
    let shapes = [
        TaskShape { id: 0, dims: InputDims::new(1, 16, 16), classes: 4 },
        TaskShape { id: 1, dims: InputDims::new(1, 28, 28), classes: 10 },
        TaskShape { id: 2, dims: InputDims::new(1, 20, 20), classes: 6 },
    ];
    let sys: MtalSystem<f32> = MtalSystem::build(&shapes, MtalConfig::default())?;
    let deltas: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
    println!("delta,{}", (0..sys.layers()).map(|l| format!("conv{l}")).collect::<Vec<_>>().join(",") + ",total");
    for (delta, report) in ratios_by_delta(&sys, &deltas)? {
        let cols: Vec<String> = report.layers.iter().map(|l| format!("{:.1}", 100.0 * l.ratio())).collect();
        println!("{delta},{},{:.1}", cols.join(","), 100.0 * report.total_ratio());
    }
    Ok(())
}
