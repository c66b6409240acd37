//! Coarse semi-MDP gain on the Table 1 model for two truncation levels.
//!
//! ```text
//! cargo run --release -p mcam --example b_sensitivity
//! ```

use mcam::solver::{rvi_solve, RviConfig, RviVariant};
use mcam::{Grid, ModelParams};

fn main() {
    let config = RviConfig {
        variant: RviVariant::SemiMdp,
        ..Default::default()
    };
    for boundary in [10.0, 12.0] {
        let params = ModelParams {
            boundary,
            ..ModelParams::table1()
        };
        let grid = Grid::for_model(&params, 0.5).unwrap();
        match rvi_solve(&params, &grid, &config) {
            Ok(out) => println!(
                "B = {boundary:>4}: gain {:.6} after {} sweeps",
                out.gain.gamma, out.sweeps
            ),
            Err(e) => println!("B = {boundary:>4}: {e}"),
        }
    }
}
