//! Builds the pendulum and shuttle buffers, lists their vertices and checks
//! the Fibonacci vertex count of tight buffers of growing relative degree.
//!
//! `cargo run --example buffer_vertices`

use policed_rl::buffer::{fibonacci_vertex_count, vertices_csv, AuxPolytope, BufferSpec};
use policed_rl::config::ExperimentConfig;

fn main() -> anyhow::Result<()> {
    for name in ["pendulum", "shuttle"] {
        let (_, spec) = ExperimentConfig::preset(name)
            .expect("shipped preset")
            .build()?;
        let vertices = spec.enumerate_vertices()?;
        println!(
            "{name}: beta = {}, {} vertices",
            spec.beta()?,
            vertices.len()
        );
        print!("{}", vertices_csv(&vertices, spec.n));
        let report = spec.validate_lower_bounds();
        for c in report.violations() {
            println!(
                "  lower bound of s{} = {} is above {}: trajectories may leave through the floor",
                c.index, c.value, c.required_max
            );
        }
        println!();
    }

    println!("r  vertices  F(r+2)  naive bound tree");
    let point = AuxPolytope::Vertices(vec![vec![]]);
    for r in 2..=8 {
        let spec = BufferSpec::tight(r, 0.0, 1.0, 1.0, point.clone())?;
        let count = spec.enumerate_vertices()?.len();
        let tree = spec.bound_tree()?.len();
        println!(
            "{r}  {count:>8}  {:>6}  {tree:>16}",
            fibonacci_vertex_count(r)
        );
    }
    Ok(())
}
