// A config-driven comparison run, the same path the `mtal train` command takes.

use mtal::baselines::Method;
use mtal::experiments::{run_experiment, ExperimentConfig};

const CONFIG: &str = "\
[experiment]
methods = mtal, single
seeds = 0, 1
epochs = 2

[mtal]
preset = related

[architecture]
kernels = 4
layers = 2
pool_after = 1

[synthetic]
relatedness = 0.9
examples = 60

[task.0]
dims = 1x8x8
classes = 3

[task.1]
dims = 1x12x12
classes = 4
";

fn main() -> mtal::Result<()> {
    let out = std::env::temp_dir().join("mtal-config-experiment");
    let cfg = ExperimentConfig::from_str(CONFIG, &out)?;
    let summary = run_experiment(&cfg, &out, Some(1))?;
    for m in [Method::Mtal, Method::Single] {
        println!("{m}: {:.3}", summary.mean_accuracy(m).unwrap_or(f64::NAN));
    }
    print!("{}", std::fs::read_to_string(out.join("results.csv"))?);
    Ok(())
}
