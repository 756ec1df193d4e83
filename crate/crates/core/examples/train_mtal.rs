// Trains adaptive kernel sharing on two related tasks with different heads and prints the
// per-task accuracy, loss curve and sharing report.

use mtal::baselines::{run_mtal, RunSettings};
use mtal::data::{generate_tasks, InputDims, SplitMode, SyntheticTaskFamily, TaskData, TaskRequest};
use mtal::network::MtalConfig;

fn main() -> mtal::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(3);
    let family = SyntheticTaskFamily { relatedness: 0.9, examples: 150, ..SyntheticTaskFamily::default() };
    let specs = generate_tasks(
        &family,
        &[TaskRequest::new(InputDims::new(1, 16, 16), 4), TaskRequest::new(InputDims::new(1, 16, 16), 6)],
    )?;
    let tasks = specs
        .iter()
        .map(|s| TaskData::prepare(s, 0, SplitMode::Stratified))
        .collect::<mtal::Result<Vec<_>>>()?;

    let run = run_mtal(&tasks, &MtalConfig::default(), &RunSettings::epochs(epochs))?;
    for (task, acc) in &run.accuracy {
        println!("task {task}: test accuracy {acc:.3}");
    }
    let totals = &run.history.total;
    println!("total loss {:.3} at step 0, {:.3} at step {}", totals[0].1, totals[totals.len() - 1].1, totals.len() - 1);
    if let Some(report) = &run.report {
        print!("{}", report.to_csv());
    }
    Ok(())
}
