// Writes first-layer activation maps of both tasks as CSV grids after a short training run.

use mtal::data::{generate_tasks, InputDims, SplitMode, SyntheticTaskFamily, TaskData, TaskRequest, TaskShape};
use mtal::experiments::write_activation_maps;
use mtal::network::{ArchSpec, MtalConfig, MtalSystem};
use mtal::trainer::{fit, TrainOptions};

fn main() -> mtal::Result<()> {
    let family = SyntheticTaskFamily { examples: 60, ..SyntheticTaskFamily::default() };
    let specs = generate_tasks(
        &family,
        &[TaskRequest::new(InputDims::new(1, 12, 12), 3), TaskRequest::new(InputDims::new(1, 16, 16), 4)],
    )?;
    let tasks = specs
        .iter()
        .map(|s| TaskData::prepare(s, 0, SplitMode::Stratified))
        .collect::<mtal::Result<Vec<TaskData>>>()?;
    let shapes: Vec<TaskShape> = tasks.iter().map(TaskShape::from).collect();
    let cfg = MtalConfig { arch: ArchSpec::uniform(2, 4, 3, vec![1]), ..MtalConfig::default() };
    let mut sys: MtalSystem<f32> = MtalSystem::build(&shapes, cfg.clone())?;
    fit(&mut sys, &tasks, &TrainOptions::from_config(&cfg, 2))?;

    let inputs: Vec<_> = tasks.iter().map(|t| Some(t.test.batch::<f32>(&[0]).0)).collect();
    let maps = sys.activations(0, &inputs)?;
    let out = std::env::temp_dir().join("mtal-activation-maps");
    let files = write_activation_maps(&[0, 1], &maps, &out)?;
    println!("{files} maps written under {}", out.display());
    for plan in sys.plans() {
        for e in &plan.entries {
            let r = e.record;
            println!("shared: task {} kernel {} <-> task {} kernel {} ({:.3})", r.task_i, r.kernel_p, r.task_j, r.kernel_q, r.similarity);
        }
    }
    Ok(())
}
