//! Run the five-test comparison on the default phantom and print the table.
//!
//! ```text
//! cargo run --release -p eofm --example ablation
//! ```

use std::time::Instant;

use eofm::ablation::{run_ablation, table_markdown, AblationSettings};
use eofm::{generate_phantom, MaterialParams, PhantomSpec};

fn main() -> eofm::Result<()> {
    let start = Instant::now();
    let spec = PhantomSpec::default();
    let material = MaterialParams::default();
    let bc = spec.boundary();
    let phantom = generate_phantom(&spec, &material, &bc)?;
    eprintln!("phantom ready after {:.1?}", start.elapsed());
    let rows = run_ablation(&phantom, &material, &bc, &AblationSettings::default())?;
    print!("{}", table_markdown(&rows));
    eprintln!("total {:.1?}", start.elapsed());
    Ok(())
}
