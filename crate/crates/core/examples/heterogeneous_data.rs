// Synthetic tasks with different input sizes and class counts, the 70/30 split and the on-disk format.

use mtal::data::{
    generate_tasks, load_dataset, split_70_30, write_dataset, InputDims, SyntheticTaskFamily, TaskRequest,
    TaskTransform,
};

fn main() -> mtal::Result<()> {
    let family = SyntheticTaskFamily { relatedness: 0.9, examples: 120, ..SyntheticTaskFamily::default() };
    let tasks = generate_tasks(
        &family,
        &[
            TaskRequest::new(InputDims::new(1, 16, 16), 4),
            TaskRequest::new(InputDims::new(3, 28, 28), 10).with_transform(TaskTransform::rotation(1)),
        ],
    )?;
    let dir = std::env::temp_dir().join("mtal-heterogeneous-data");
    for t in &tasks {
        let split = split_70_30(&t.dataset, 0)?;
        println!(
            "task {}: {} input, {} classes, {} train / {} test, class counts {:?}",
            t.id,
            t.dims,
            t.classes,
            split.train.len(),
            split.test.len(),
            t.dataset.class_counts()
        );
        let path = dir.join(format!("task{}", t.id));
        write_dataset(&path, &t.dataset)?;
        assert_eq!(load_dataset(&path)?, t.dataset);
        println!("  round-tripped through {}", path.display());
    }
    Ok(())
}
