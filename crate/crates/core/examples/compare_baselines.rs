// Runs every method on the same pair of tasks and seed.

use mtal::baselines::{metrics_csv, run_baseline, Method, RunSettings};
use mtal::data::{generate_tasks, InputDims, SplitMode, SyntheticTaskFamily, TaskData, TaskRequest};
use mtal::network::{ArchSpec, MtalConfig};

fn main() -> mtal::Result<()> {
    let family = SyntheticTaskFamily { examples: 90, ..SyntheticTaskFamily::default() };
    let specs = generate_tasks(
        &family,
        &[TaskRequest::new(InputDims::new(1, 12, 12), 3), TaskRequest::new(InputDims::new(1, 12, 12), 5)],
    )?;
    let tasks = specs
        .iter()
        .map(|s| TaskData::prepare(s, 1, SplitMode::Stratified))
        .collect::<mtal::Result<Vec<_>>>()?;
    let cfg = MtalConfig { arch: ArchSpec::uniform(2, 6, 3, vec![1]), seed: 1, ..MtalConfig::default() };

    let mut runs = Vec::new();
    for method in Method::ALL {
        let run = run_baseline(method, &tasks, &cfg, &RunSettings::epochs(2))?;
        println!("{method:>12}: mean accuracy {:.3}", run.mean_accuracy());
        runs.push(run);
    }
    print!("{}", metrics_csv(&runs));
    Ok(())
}
